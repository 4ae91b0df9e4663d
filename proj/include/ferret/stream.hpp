#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "ferret/rng.hpp"
#include "ferret/types.hpp"

namespace ferret {

struct StreamItem {
    std::int64_t index = 0;
    std::vector<double> features;
    std::size_t label = 0;
};

/// A fully materialized labeled stream; arrival time of item i is i * t_d.
struct DataStream {
    std::vector<StreamItem> items;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
};

enum class DriftKind : int { none = 0, rotate = 1, split_tasks = 2 };

inline DriftKind drift_from_string(const std::string& s) {
    if (s == "none") return DriftKind::none;
    if (s == "rotate") return DriftKind::rotate;
    if (s == "split_tasks") return DriftKind::split_tasks;
    throw ConfigError("unknown drift kind '" + s + "'");
}

/// Gaussian class clusters with optional drift. `rotate` spins the class
/// means through feature-coordinate pairs over the stream; `split_tasks`
/// partitions the classes into 5 contiguous task phases.
inline DataStream synth_drift_stream(std::size_t n, std::size_t n_features,
                                     std::size_t n_classes, DriftKind drift, std::uint64_t seed,
                                     double rotate_rate = 1.5e-4, double noise = 0.55) {
    if (n == 0) throw std::invalid_argument("synth_drift_stream: n must be >= 1");
    if (n_features < 2 || n_classes < 2)
        throw std::invalid_argument("synth_drift_stream: need >= 2 features and classes");
    Rng rng(seed * 0x5851f42d4c957f2dULL + 0x14057b7ef767814fULL);
    std::vector<std::vector<double>> means(n_classes, std::vector<double>(n_features));
    for (auto& m : means)
        for (auto& v : m) v = rng.uniform(-2.0, 2.0);
    const std::size_t n_tasks = 5;
    DataStream out;
    out.n_features = n_features;
    out.n_classes = n_classes;
    out.items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cls;
        if (drift == DriftKind::split_tasks) {
            const std::size_t task = std::min(i * n_tasks / n, n_tasks - 1);
            const std::size_t lo = task * n_classes / n_tasks;
            const std::size_t hi = std::max(lo + 1, (task + 1) * n_classes / n_tasks);
            cls = lo + rng.below(hi - lo);
        } else {
            cls = rng.below(n_classes);
        }
        StreamItem item;
        item.index = static_cast<std::int64_t>(i);
        item.label = cls;
        item.features.resize(n_features);
        const double angle =
            drift == DriftKind::rotate ? rotate_rate * static_cast<double>(i) : 0.0;
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (std::size_t f = 0; f < n_features; ++f) item.features[f] = means[cls][f];
        if (drift == DriftKind::rotate) {
            for (std::size_t f = 0; f + 1 < n_features; f += 2) {
                const double x = item.features[f], y = item.features[f + 1];
                item.features[f] = ca * x - sa * y;
                item.features[f + 1] = sa * x + ca * y;
            }
        }
        for (std::size_t f = 0; f < n_features; ++f) item.features[f] += noise * rng.normal();
        out.items.push_back(std::move(item));
    }
    return out;
}

namespace detail {

inline std::vector<std::string> read_text_lines(const std::string& path) {
    std::vector<std::string> lines;
    const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
    if (gz) {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw SchemaError(path + ": cannot open gzip stream");
        std::string cur;
        char buf[1 << 15];
        int got;
        while ((got = gzread(f, buf, sizeof(buf))) > 0) {
            for (int i = 0; i < got; ++i) {
                if (buf[i] == '\n') {
                    lines.push_back(cur);
                    cur.clear();
                } else if (buf[i] != '\r') {
                    cur.push_back(buf[i]);
                }
            }
        }
        gzclose(f);
        if (!cur.empty()) lines.push_back(cur);
    } else {
        std::ifstream in(path);
        if (!in) throw SchemaError(path + ": cannot open file");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
    }
    return lines;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

/// CSV with a header row; the named label column becomes the class id, all
/// other columns are numeric features. Row order is arrival order. A ".gz"
/// suffix switches to gzip-compressed input.
inline DataStream load_csv_stream(const std::string& path, const std::string& label_column) {
    const auto lines = detail::read_text_lines(path);
    if (lines.empty()) throw SchemaError(path + ": empty stream file");
    const auto header = detail::split_csv(lines[0]);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw SchemaError(path + ": label column '" + label_column + "' not found");
    DataStream out;
    out.n_features = header.size() - 1;
    std::int64_t next = 0;
    std::size_t max_label = 0;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        if (lines[r].empty()) continue;
        const auto fields = detail::split_csv(lines[r]);
        if (fields.size() != header.size())
            throw SchemaError(path + ": row " + std::to_string(r) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        StreamItem item;
        item.index = next++;
        item.features.reserve(out.n_features);
        for (std::size_t i = 0; i < fields.size(); ++i) {
            char* end = nullptr;
            const double v = std::strtod(fields[i].c_str(), &end);
            if (!end || *end != '\0' || end == fields[i].c_str())
                throw SchemaError(path + ": row " + std::to_string(r) +
                                  ": non-numeric value '" + fields[i] + "'");
            if (i == label_idx) {
                if (v < 0.0) throw SchemaError(path + ": row " + std::to_string(r) + ": negative label");
                item.label = static_cast<std::size_t>(v);
            } else {
                item.features.push_back(v);
            }
        }
        max_label = std::max(max_label, item.label);
        out.items.push_back(std::move(item));
    }
    if (out.items.empty()) throw SchemaError(path + ": no data rows");
    out.n_classes = max_label + 1;
    return out;
}

enum class SkipKind : int { oracle = 0, one_skip = 1, random_n = 2, last_n = 3 };

inline SkipKind skip_from_string(const std::string& s) {
    if (s == "oracle") return SkipKind::oracle;
    if (s == "one_skip" || s == "1-skip") return SkipKind::one_skip;
    if (s == "random_n") return SkipKind::random_n;
    if (s == "last_n") return SkipKind::last_n;
    throw ConfigError("unknown skip policy '" + s + "'");
}

struct SkipPolicy {
    SkipKind kind = SkipKind::oracle;
    std::size_t window = 1; // B: buffered candidates per processing window
    std::size_t keep = 1;   // N: items kept per window
    std::uint64_t seed = 0;

    void validate() const {
        if ((kind == SkipKind::random_n || kind == SkipKind::last_n) && keep > window)
            throw ConfigError("skip policy: keep must be <= window");
    }
};

/// One kept item together with its virtual processing start time.
struct KeptItem {
    std::int64_t index = 0;
    double start = 0.0;
};

struct FilteredStream {
    std::vector<KeptItem> kept;
    std::vector<std::int64_t> dropped;
};

/// Applies an arrival/skip policy against a busy-model: `processing_time`
/// seconds of learner occupancy per trained item. Oracle keeps everything at
/// zero latency; one_skip drops arrivals while busy; random_n / last_n buffer
/// up to B arrivals while busy and keep N per window.
inline FilteredStream apply_skip_policy(std::size_t n_items, double t_d, const SkipPolicy& policy,
                                        double processing_time) {
    policy.validate();
    if (!(t_d > 0.0)) throw std::invalid_argument("apply_skip_policy: t_d must be > 0");
    FilteredStream out;
    if (policy.kind == SkipKind::oracle) {
        for (std::size_t i = 0; i < n_items; ++i)
            out.kept.push_back({static_cast<std::int64_t>(i), static_cast<double>(i) * t_d});
        return out;
    }
    if (policy.kind == SkipKind::one_skip) {
        double busy_until = 0.0;
        for (std::size_t i = 0; i < n_items; ++i) {
            const double a = static_cast<double>(i) * t_d;
            if (a >= busy_until) {
                out.kept.push_back({static_cast<std::int64_t>(i), a});
                busy_until = a + processing_time;
            } else {
                out.dropped.push_back(static_cast<std::int64_t>(i));
            }
        }
        return out;
    }
    // Windowed B-skip: buffer the latest B unprocessed arrivals, pick N when idle.
    Rng rng(policy.seed ^ 0x94d049bb133111ebULL);
    std::vector<std::int64_t> buffer;
    double busy_until = 0.0;
    std::size_t i = 0;
    auto flush_window = [&](double now) {
        if (buffer.empty()) return;
        const std::size_t take = std::min(policy.keep, buffer.size());
        std::vector<std::int64_t> chosen;
        if (policy.kind == SkipKind::last_n) {
            chosen.assign(buffer.end() - static_cast<std::ptrdiff_t>(take), buffer.end());
        } else {
            std::vector<std::int64_t> pool = buffer;
            for (std::size_t pick = 0; pick < take; ++pick) {
                const std::size_t at = static_cast<std::size_t>(rng.below(pool.size()));
                chosen.push_back(pool[at]);
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
            }
            std::sort(chosen.begin(), chosen.end());
        }
        for (std::int64_t idx : buffer)
            if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end())
                out.dropped.push_back(idx);
        double start = now;
        for (std::int64_t idx : chosen) {
            out.kept.push_back({idx, start});
            start += processing_time;
        }
        busy_until = start;
        buffer.clear();
    };
    while (i < n_items || !buffer.empty()) {
        if (i < n_items) {
            const double a = static_cast<double>(i) * t_d;
            if (a < busy_until) {
                buffer.push_back(static_cast<std::int64_t>(i));
                if (buffer.size() > policy.window) {
                    out.dropped.push_back(buffer.front());
                    buffer.erase(buffer.begin());
                }
                ++i;
                continue;
            }
            if (buffer.empty()) {
                buffer.push_back(static_cast<std::int64_t>(i));
                ++i;
                flush_window(a);
                continue;
            }
            flush_window(busy_until);
            continue;
        }
        flush_window(busy_until);
    }
    std::sort(out.dropped.begin(), out.dropped.end());
    return out;
}

/// Streaming per-feature standardizer (running mean / variance).
class RunningNormalizer {
  public:
    explicit RunningNormalizer(std::size_t n_features)
        : n_(0), mean_(n_features, 0.0), m2_(n_features, 0.0) {}

    void observe(const std::vector<double>& x) {
        ++n_;
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            const double d = x[i] - mean_[i];
            mean_[i] += d / static_cast<double>(n_);
            m2_[i] += d * (x[i] - mean_[i]);
        }
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double var = n_ > 1 ? m2_[i] / static_cast<double>(n_ - 1) : 1.0;
            out[i] = (x[i] - mean_[i]) / std::sqrt(std::max(var, 1e-8));
        }
        return out;
    }

  private:
    std::size_t n_;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

} // namespace ferret
