#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ferret/profile.hpp"
#include "ferret/types.hpp"

namespace ferret {

enum class StepOutcome : int { correct = 0, wrong = 1, dropped = 2 };

/// One per-item record of the online protocol (prediction made pre-update).
struct StepRecord {
    std::int64_t item = 0;
    StepOutcome outcome = StepOutcome::dropped;
    std::size_t predicted = 0;
    std::size_t label = 0;
};

/// Running online accuracy in percentage points; dropped items count as
/// incorrect (they received no timely prediction).
inline double online_accuracy(const std::vector<StepRecord>& log) {
    if (log.empty()) throw std::invalid_argument("online_accuracy: empty log");
    std::size_t correct = 0;
    for (const auto& r : log) correct += r.outcome == StepOutcome::correct ? 1 : 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(log.size());
}

/// Online accuracy gain per unit of memory against a baseline:
/// (oacc_A - oacc_B) - ln(M_A / M_B), accuracies in percentage points.
inline double agm(double oacc_a, double mem_a, double oacc_b, double mem_b) {
    if (!(mem_a > 0.0) || !(mem_b > 0.0))
        throw std::invalid_argument("agm: memory must be positive");
    return (oacc_a - oacc_b) - std::log(mem_a / mem_b);
}

/// Test-accuracy twin of agm.
inline double tagm(double tacc_a, double mem_a, double tacc_b, double mem_b) {
    if (!(mem_a > 0.0) || !(mem_b > 0.0))
        throw std::invalid_argument("tagm: memory must be positive");
    return (tacc_a - tacc_b) - std::log(mem_a / mem_b);
}

/// Aggregate result of one training run.
struct RunRecord {
    std::string setting;
    std::string method;
    double oacc = 0.0;
    double tacc = 0.0;
    double memory = 0.0; // training-time footprint, count units
    std::uint64_t seed = 0;

    bool operator==(const RunRecord& o) const = default;
};

inline constexpr const char* kRecordHeader = "setting,method,oacc,tacc,memory,agm,tagm,seed";

inline void write_records(std::ostream& out, const std::vector<RunRecord>& records) {
    out << kRecordHeader << "\n";
    for (const auto& r : records)
        out << r.setting << ',' << r.method << ',' << detail::fmt_double(r.oacc) << ','
            << detail::fmt_double(r.tacc) << ',' << detail::fmt_double(r.memory)
            << ",0,0," << r.seed << "\n";
}

inline void save_records(const std::string& path, const std::vector<RunRecord>& records) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot write records");
    write_records(out, records);
}

inline std::vector<RunRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open records");
    std::string line;
    if (!std::getline(in, line) || line != kRecordHeader)
        throw SchemaError(path + ": expected header '" + std::string(kRecordHeader) + "'");
    std::vector<RunRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        RunRecord r;
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(ls, field, ','))
                throw SchemaError(path + ": row " + std::to_string(row) + ": missing " + what);
            return field;
        };
        r.setting = next("setting");
        r.method = next("method");
        r.oacc = std::stod(next("oacc"));
        r.tacc = std::stod(next("tacc"));
        r.memory = std::stod(next("memory"));
        next("agm");
        next("tagm");
        r.seed = std::stoull(next("seed"));
        out.push_back(std::move(r));
        ++row;
    }
    return out;
}

} // namespace ferret
