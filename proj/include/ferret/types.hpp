#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ferret {

/// Error raised by file loaders when a record violates the on-disk schema.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Error raised when a stage-time bound admits no valid partition.
struct BoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Error raised when a pipeline configuration violates its invariants.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using count_t = std::uint64_t;

inline constexpr count_t kNoBudget = std::numeric_limits<count_t>::max();

inline count_t ceil_div(count_t a, count_t b) { return b == 0 ? 0 : (a + b - 1) / b; }

/// Per-layer cost record: forward/backward seconds, parameter and
/// output-activation counts.
struct LayerProfile {
    double t_f = 0.0;
    double t_b = 0.0;
    count_t w = 0;
    count_t a = 0;
};

struct ModelProfile {
    std::vector<LayerProfile> layers;

    std::size_t size() const { return layers.size(); }

    void validate() const {
        if (layers.empty()) throw SchemaError("profile must contain at least one layer");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (!(layers[i].t_f > 0.0))
                throw SchemaError("layer " + std::to_string(i) + ": t_f must be > 0");
            if (!(layers[i].t_b > 0.0))
                throw SchemaError("layer " + std::to_string(i) + ": t_b must be > 0");
        }
    }

    double total_time() const {
        double s = 0.0;
        for (const auto& l : layers) s += l.t_f + l.t_b;
        return s;
    }
};

/// Monotone layer-boundary list [L0, ..., LP] with L0 = 0 and LP = layer count.
struct PartitionScheme {
    std::vector<std::size_t> bounds;

    std::size_t stages() const { return bounds.empty() ? 0 : bounds.size() - 1; }

    void validate(std::size_t n_layers) const {
        if (bounds.size() < 2 || bounds.front() != 0 || bounds.back() != n_layers)
            throw ConfigError("partition bounds must run from 0 to the layer count");
        for (std::size_t i = 1; i < bounds.size(); ++i)
            if (bounds[i] <= bounds[i - 1])
                throw ConfigError("partition bounds must be strictly increasing");
    }

    bool operator==(const PartitionScheme& o) const = default;
};

/// Per-stage aggregates plus the stage-time bounds t^f, t^b (maxima over stages).
struct StageStats {
    std::vector<count_t> w;
    std::vector<count_t> a;
    std::vector<count_t> inner_a;
    double t_f = 0.0;
    double t_b = 0.0;

    std::size_t stages() const { return w.size(); }

    count_t total_w() const { return std::accumulate(w.begin(), w.end(), count_t{0}); }
};

/// One pipeline instance: processing delay (residue class; -1 = removed),
/// recompute flag, and per-stage accumulation / omission counts.
struct WorkerConfig {
    int delay = 0;
    int recompute = 0;
    std::vector<int> accum;
    std::vector<int> omit;

    bool active() const { return delay >= 0; }
};

struct PipelineConfig {
    std::vector<WorkerConfig> workers;
    int modulus = 1;

    std::size_t active_count() const {
        std::size_t n = 0;
        for (const auto& w : workers) n += w.active() ? 1 : 0;
        return n;
    }

    void validate(std::size_t stages) const {
        if (workers.empty()) throw ConfigError("config needs at least one worker slot");
        if (modulus < 1) throw ConfigError("modulus must be >= 1");
        std::vector<bool> seen(static_cast<std::size_t>(modulus), false);
        for (const auto& w : workers) {
            if (w.accum.size() != stages || w.omit.size() != stages)
                throw ConfigError("per-stage config length must equal stage count");
            for (std::size_t j = 0; j < stages; ++j) {
                if (w.accum[j] < 1) throw ConfigError("accumulation count must be >= 1");
                if (w.omit[j] < 0 || static_cast<std::size_t>(w.omit[j]) > stages - 1 - j)
                    throw ConfigError("omission count out of range for stage " + std::to_string(j));
                if (w.omit[j] > 0 && w.accum[j] != 1)
                    throw ConfigError("omission requires accumulation count 1");
            }
            if (!w.active()) continue;
            if (w.delay >= modulus) throw ConfigError("worker delay must lie in [0, modulus)");
            if (seen[static_cast<std::size_t>(w.delay)])
                throw ConfigError("active workers must have distinct delays");
            seen[static_cast<std::size_t>(w.delay)] = true;
        }
    }
};

/// Stream model: arrival interval, value decay rate, initial value, horizon.
struct StreamSpec {
    double t_d = 1.0;
    double decay_c = 0.0;
    double value = 1.0;
    double horizon = 1.0;

    void validate() const {
        if (!(t_d > 0.0)) throw ConfigError("t_d must be > 0");
        if (decay_c < 0.0) throw ConfigError("decay rate must be >= 0");
        if (!(value > 0.0)) throw ConfigError("data value must be > 0");
        if (!(horizon > 0.0)) throw ConfigError("horizon must be > 0");
    }
};

struct RateMemory {
    double rate = 0.0;
    count_t memory = 0;
};

} // namespace ferret
