#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dpap/tensor.hpp"

namespace dpap {

/// Training-loop stations, recorded in execution order so the realized
/// schedule (per batch: forward with traces, backward, weight update,
/// per-batch plasticity; per epoch: importance snapshot, survival update,
/// pruning, evaluation) can be audited.
enum class Phase {
    ForwardTrace,
    Backward,
    Update,
    BatchBcm,
    EpochImportance,
    SurvivalUpdate,
    Prune,
    Evaluate,
};

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::ForwardTrace: return "forward_trace";
        case Phase::Backward: return "backward";
        case Phase::Update: return "update";
        case Phase::BatchBcm: return "batch_bcm";
        case Phase::EpochImportance: return "epoch_importance";
        case Phase::SurvivalUpdate: return "survival_update";
        case Phase::Prune: return "prune";
        case Phase::Evaluate: return "evaluate";
    }
    return "?";
}

struct PhaseEvent {
    int epoch = 0;
    int batch = -1;  // -1 for epoch-level phases
    Phase phase = Phase::ForwardTrace;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0;
    double test_acc = 0;
    std::int64_t retained_params = 0;
    double pruning_rate = 0;
    std::int64_t pruned_synapses = 0;
    std::int64_t pruned_neurons = 0;
    double theta_mean = 0;
    double wall_ms = 0;
};

struct DeathRecord {
    int epoch = 0;
    int layer = 0;
    int unit = 0;
    std::int64_t surviving_synapses = 0;
};

struct RunMetrics {
    std::string engine, topology, precision, encoding;
    std::uint64_t seed = 0;
    std::uint64_t split_fingerprint = 0;
    std::vector<EpochRow> rows;
    /// Retained weight count per weighted layer, one entry per row.
    std::vector<std::vector<std::int64_t>> per_layer_retained;
    std::vector<DeathRecord> deaths;
    std::vector<PhaseEvent> phases;

    const EpochRow& best_row() const {
        DPAP_CHECK(!rows.empty(), "metrics contain no rows");
        size_t best = 0;
        for (size_t i = 1; i < rows.size(); ++i)
            if (rows[i].test_acc > rows[best].test_acc) best = i;
        return rows[best];
    }

    /// First epoch whose test accuracy reaches the target; -1 if never.
    int convergence_epoch(double target_acc) const {
        for (const auto& r : rows)
            if (r.test_acc >= target_acc) return r.epoch;
        return -1;
    }
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,test_acc,retained_params,pruning_rate,pruned_synapses,pruned_neurons,"
    "theta_mean,wall_ms";

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string metrics_csv_text(const RunMetrics& m) {
    std::ostringstream o;
    o << "# dpap-metrics v1\n";
    o << "# engine=" << m.engine << "\n";
    o << "# topology=" << m.topology << "\n";
    o << "# precision=" << m.precision << "\n";
    o << "# encoding=" << m.encoding << "\n";
    o << "# seed=" << m.seed << "\n";
    char fp[20];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(m.split_fingerprint));
    o << "# split=" << fp << "\n";
    o << kMetricsHeader << "\n";
    for (const auto& r : m.rows) {
        o << r.epoch << "," << detail::format_double(r.train_loss) << ","
          << detail::format_double(r.test_acc) << "," << r.retained_params << ","
          << detail::format_double(r.pruning_rate) << "," << r.pruned_synapses << ","
          << r.pruned_neurons << "," << detail::format_double(r.theta_mean) << ","
          << detail::format_double(r.wall_ms) << "\n";
    }
    return o.str();
}

inline void write_metrics_csv(const std::string& path, const RunMetrics& m) {
    std::ofstream f(path, std::ios::trunc);
    DPAP_CHECK(f.good(), "cannot write metrics to '" << path << "'");
    f << metrics_csv_text(m);
    DPAP_CHECK(f.good(), "short write to '" << path << "'");
}

/// Reads rows plus the metadata comments back. Phase and death logs are
/// in-memory only and come back empty.
inline RunMetrics read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    DPAP_CHECK(f.good(), "cannot open metrics '" << path << "'");
    RunMetrics m;
    std::string line;
    bool saw_header = false;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(2, eq - 2);
            const std::string val = line.substr(eq + 1);
            if (key == "engine") m.engine = val;
            else if (key == "topology") m.topology = val;
            else if (key == "precision") m.precision = val;
            else if (key == "encoding") m.encoding = val;
            else if (key == "seed") m.seed = std::stoull(val);
            else if (key == "split") m.split_fingerprint = std::stoull(val, nullptr, 16);
            continue;
        }
        if (!saw_header) {
            DPAP_CHECK(line == kMetricsHeader, "metrics '" << path << "' line " << lineno
                                                           << ": unexpected header '" << line
                                                           << "'");
            saw_header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        DPAP_CHECK(cells.size() == 9, "metrics '" << path << "' line " << lineno << ": expected 9 "
                                                  << "columns, got " << cells.size());
        EpochRow r;
        r.epoch = std::stoi(cells[0]);
        r.train_loss = std::strtod(cells[1].c_str(), nullptr);
        r.test_acc = std::strtod(cells[2].c_str(), nullptr);
        r.retained_params = std::stoll(cells[3]);
        r.pruning_rate = std::strtod(cells[4].c_str(), nullptr);
        r.pruned_synapses = std::stoll(cells[5]);
        r.pruned_neurons = std::stoll(cells[6]);
        r.theta_mean = std::strtod(cells[7].c_str(), nullptr);
        r.wall_ms = std::strtod(cells[8].c_str(), nullptr);
        m.rows.push_back(r);
    }
    DPAP_CHECK(saw_header, "metrics '" << path << "' has no header row");
    return m;
}

/// Paired-run summary: accuracy at the best epoch, epochs needed to reach a
/// baseline accuracy (speedup is their ratio), and the retained-parameter
/// ratio standing in for relative energy cost.
struct ComparisonReport {
    double baseline_acc = 0;
    double best_acc_a = 0, best_acc_b = 0;
    int best_epoch_a = 0, best_epoch_b = 0;
    double accuracy_delta = 0;  // best of B minus best of A
    int conv_epoch_a = -1, conv_epoch_b = -1;
    double speedup = std::numeric_limits<double>::quiet_NaN();  // A epochs / B epochs
    std::int64_t final_retained_a = 0, final_retained_b = 0;
    double energy_ratio = std::numeric_limits<double>::quiet_NaN();  // B / A

    std::string to_text() const {
        std::ostringstream o;
        o << "baseline accuracy:   " << baseline_acc << "\n";
        o << "best accuracy:       A " << best_acc_a << " (epoch " << best_epoch_a << "), B "
          << best_acc_b << " (epoch " << best_epoch_b << ")\n";
        o << "accuracy delta:      " << (accuracy_delta >= 0 ? "+" : "") << accuracy_delta
          << "\n";
        o << "convergence epoch:   A "
          << (conv_epoch_a < 0 ? std::string("never") : std::to_string(conv_epoch_a)) << ", B "
          << (conv_epoch_b < 0 ? std::string("never") : std::to_string(conv_epoch_b)) << "\n";
        o << "speedup:             ";
        if (std::isnan(speedup)) o << "n/a";
        else o << speedup << "x";
        o << "\n";
        o << "retained params:     A " << final_retained_a << ", B " << final_retained_b << "\n";
        o << "energy ratio (B/A):  " << energy_ratio << "\n";
        return o.str();
    }
};

inline ComparisonReport compare_runs(const RunMetrics& a, const RunMetrics& b,
                                     double baseline_acc) {
    DPAP_CHECK(a.split_fingerprint == b.split_fingerprint,
               "runs used different dataset splits and are not comparable");
    DPAP_CHECK(!a.rows.empty() && !b.rows.empty(), "cannot compare empty metrics");
    ComparisonReport r;
    r.baseline_acc = baseline_acc;
    const EpochRow& ba = a.best_row();
    const EpochRow& bb = b.best_row();
    r.best_acc_a = ba.test_acc;
    r.best_epoch_a = ba.epoch;
    r.best_acc_b = bb.test_acc;
    r.best_epoch_b = bb.epoch;
    r.accuracy_delta = bb.test_acc - ba.test_acc;
    r.conv_epoch_a = a.convergence_epoch(baseline_acc);
    r.conv_epoch_b = b.convergence_epoch(baseline_acc);
    if (r.conv_epoch_a > 0 && r.conv_epoch_b > 0)
        r.speedup = static_cast<double>(r.conv_epoch_a) / r.conv_epoch_b;
    else if (r.conv_epoch_a == 0 && r.conv_epoch_b == 0)
        r.speedup = 1.0;
    r.final_retained_a = a.rows.back().retained_params;
    r.final_retained_b = b.rows.back().retained_params;
    if (r.final_retained_a > 0)
        r.energy_ratio = static_cast<double>(r.final_retained_b) / r.final_retained_a;
    return r;
}

}  // namespace dpap
