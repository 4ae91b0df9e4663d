#pragma once

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ferret/rng.hpp"
#include "ferret/types.hpp"

namespace ferret {

namespace detail {

/// Shortest round-trip text form of a double.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline bool parse_double(const std::string& s, double& out) {
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end && *end == '\0' && end != s.c_str();
}

inline bool parse_u64(const std::string& s, count_t& out) {
    if (s.empty() || s[0] == '-') return false;
    char* end = nullptr;
    out = std::strtoull(s.c_str(), &end, 10);
    return end && *end == '\0';
}

} // namespace detail

inline constexpr const char* kProfileFormat = "ferret-profile v1";

enum class CostModel { uniform, pyramid };

inline std::string to_string(CostModel m) {
    return m == CostModel::uniform ? "uniform" : "pyramid";
}

/// Parse a profile from its text form: a version header followed by one
/// `t_f=... t_b=... w=... a=...` record per layer.
inline ModelProfile parse_profile(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line) || line != kProfileFormat)
        throw SchemaError(origin + ": expected header '" + std::string(kProfileFormat) + "'");
    ModelProfile profile;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        LayerProfile layer;
        bool got_tf = false, got_tb = false, got_w = false, got_a = false;
        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos)
                throw SchemaError(origin + ": layer " + std::to_string(index) +
                                  ": malformed field '" + field + "'");
            const std::string key = field.substr(0, eq);
            const std::string val = field.substr(eq + 1);
            bool ok = false;
            if (key == "t_f") ok = detail::parse_double(val, layer.t_f), got_tf = ok;
            else if (key == "t_b") ok = detail::parse_double(val, layer.t_b), got_tb = ok;
            else if (key == "w") ok = detail::parse_u64(val, layer.w), got_w = ok;
            else if (key == "a") ok = detail::parse_u64(val, layer.a), got_a = ok;
            else
                throw SchemaError(origin + ": layer " + std::to_string(index) +
                                  ": unknown field '" + key + "'");
            if (!ok)
                throw SchemaError(origin + ": layer " + std::to_string(index) +
                                  ": bad value for '" + key + "'");
        }
        if (!(got_tf && got_tb && got_w && got_a))
            throw SchemaError(origin + ": layer " + std::to_string(index) +
                              ": record needs t_f, t_b, w, a");
        if (!(layer.t_f > 0.0))
            throw SchemaError(origin + ": layer " + std::to_string(index) + ": t_f must be > 0");
        if (!(layer.t_b > 0.0))
            throw SchemaError(origin + ": layer " + std::to_string(index) + ": t_b must be > 0");
        profile.layers.push_back(layer);
        ++index;
    }
    profile.validate();
    return profile;
}

inline ModelProfile load_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open profile file");
    return parse_profile(in, path);
}

inline void write_profile(std::ostream& out, const ModelProfile& profile) {
    out << kProfileFormat << "\n";
    for (const auto& l : profile.layers)
        out << "t_f=" << detail::fmt_double(l.t_f) << " t_b=" << detail::fmt_double(l.t_b)
            << " w=" << l.w << " a=" << l.a << "\n";
}

inline void save_profile(const std::string& path, const ModelProfile& profile) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot write profile file");
    write_profile(out, profile);
}

/// Deterministic synthetic profile. `uniform` draws all layers from one cost
/// range; `pyramid` makes middle layers the most expensive.
inline ModelProfile synth_profile(std::size_t n_layers, std::uint64_t seed, CostModel model) {
    if (n_layers == 0) throw std::invalid_argument("synth_profile: n_layers must be >= 1");
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    ModelProfile profile;
    profile.layers.reserve(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        double scale = 1.0;
        if (model == CostModel::pyramid) {
            const double mid = (static_cast<double>(n_layers) - 1.0) / 2.0;
            const double d = mid > 0.0 ? std::abs(static_cast<double>(i) - mid) / mid : 0.0;
            scale = 2.0 - d; // peak at the middle layer
        }
        LayerProfile layer;
        layer.t_f = scale * rng.uniform(0.2, 1.0);
        layer.t_b = scale * rng.uniform(0.3, 1.5);
        layer.w = 1000 + rng.below(9000);
        layer.a = 100 + rng.below(900);
        profile.layers.push_back(layer);
    }
    return profile;
}

inline double max_layer_time(const ModelProfile& profile) {
    double m = 0.0;
    for (const auto& l : profile.layers) m = std::max(m, l.t_f + l.t_b);
    return m;
}

/// Greedy left-to-right grouping: each stage accumulates consecutive layers
/// until adding the next would exceed t_c. Minimal stage count among
/// consecutive groupings bounded by t_c.
inline PartitionScheme partition_by_bound(const ModelProfile& profile, double t_c) {
    profile.validate();
    const double worst = max_layer_time(profile);
    if (t_c < worst)
        throw BoundError("stage bound " + detail::fmt_double(t_c) +
                         " infeasible: max single-layer time is " + detail::fmt_double(worst));
    PartitionScheme scheme;
    scheme.bounds.push_back(0);
    double running = 0.0;
    for (std::size_t i = 0; i < profile.layers.size(); ++i) {
        running += profile.layers[i].t_f + profile.layers[i].t_b;
        if (running > t_c) {
            scheme.bounds.push_back(i);
            running = profile.layers[i].t_f + profile.layers[i].t_b;
        }
    }
    scheme.bounds.push_back(profile.layers.size());
    return scheme;
}

inline StageStats stage_stats(const ModelProfile& profile, const PartitionScheme& scheme) {
    profile.validate();
    scheme.validate(profile.layers.size());
    StageStats stats;
    const std::size_t P = scheme.stages();
    stats.w.resize(P, 0);
    stats.a.resize(P, 0);
    stats.inner_a.resize(P, 0);
    for (std::size_t j = 0; j < P; ++j) {
        double tf = 0.0, tb = 0.0;
        for (std::size_t l = scheme.bounds[j]; l < scheme.bounds[j + 1]; ++l) {
            stats.w[j] += profile.layers[l].w;
            stats.a[j] += profile.layers[l].a;
            if (l > scheme.bounds[j]) stats.inner_a[j] += profile.layers[l].a;
            tf += profile.layers[l].t_f;
            tb += profile.layers[l].t_b;
        }
        stats.t_f = std::max(stats.t_f, tf);
        stats.t_b = std::max(stats.t_b, tb);
    }
    return stats;
}

/// Candidate stage-time bounds: sums of (t_f + t_b) over contiguous layer
/// spans, kept when feasible (>= max single-layer time), value-deduplicated,
/// then reduced to one representative (the smallest) per distinct partition.
inline std::vector<double> candidate_bounds(const ModelProfile& profile) {
    profile.validate();
    const std::size_t n = profile.layers.size();
    std::vector<double> sums;
    sums.reserve(n * (n + 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        double running = 0.0;
        for (std::size_t j = i; j < n; ++j) {
            running += profile.layers[j].t_f + profile.layers[j].t_b;
            sums.push_back(running);
        }
    }
    const double worst = max_layer_time(profile);
    std::sort(sums.begin(), sums.end());
    sums.erase(std::unique(sums.begin(), sums.end()), sums.end());
    std::vector<double> out;
    PartitionScheme last;
    for (double t_c : sums) {
        if (t_c < worst) continue;
        PartitionScheme scheme = partition_by_bound(profile, t_c);
        if (!out.empty() && scheme == last) continue;
        out.push_back(t_c);
        last = std::move(scheme);
    }
    return out;
}

} // namespace ferret
