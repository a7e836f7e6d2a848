#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "saconv/climate.hpp"
#include "saconv/common.hpp"

namespace saconv {

struct ConfusionMatrix {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::int64_t total() const { return tp + tn + fp + fn; }
};

// Ratios with an empty denominator are reported as unset, never as silent
// NaN or a coerced zero.
struct DerivedMetrics {
    std::optional<double> accuracy, precision, recall, f1;
};

struct MetricsReport {
    double loss = 0.0;
    std::optional<double> accuracy, precision, recall, f1, auc;
    ConfusionMatrix confusion;
    double threshold_percentile = -1.0;
};

struct EnsembleStat {
    std::optional<double> mean, sem;
};

struct EnsembleReport {
    int n_runs = 0;
    bool single_run = false;
    double threshold_percentile = -1.0;
    EnsembleStat loss, accuracy, precision, recall, f1, auc;
};

// Class 1 (extreme) is the positive class.
ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels);

DerivedMetrics derive_metrics(const ConfusionMatrix& cm);

// Probability that a random positive outranks a random negative, ties at
// half credit. Average-rank computation; exactly equal to pairwise counting.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Per-metric mean and standard error (sample sd / sqrt(n)) over repeated
// runs at one threshold.
EnsembleReport aggregate(const std::vector<MetricsReport>& runs);

// ---------------------------------------------------------------------------
// Threshold sweep protocol: relabel at each percentile, train `runs` models,
// aggregate. Builder and trainer are injected so the protocol is testable
// without real training.
// ---------------------------------------------------------------------------

struct SweepConfig {
    std::vector<double> thresholds;  // e.g. {0.91, ..., 0.95}
    int runs = 5;
    std::uint64_t master_seed = 42;
};

using DatasetBuilder = std::function<Dataset(double threshold)>;
// (dataset, seed) -> evaluation report for one trained model
using RunTrainer = std::function<MetricsReport(const Dataset&, std::uint64_t seed)>;

struct SweepResult {
    std::vector<double> thresholds;
    std::vector<int> positive_counts;                 // labels per threshold (train+test)
    std::vector<std::vector<MetricsReport>> run_reports;
    std::vector<EnsembleReport> ensembles;
};

SweepResult percentile_sweep(const DatasetBuilder& build, const RunTrainer& run_one,
                             const SweepConfig& cfg);

}  // namespace saconv
