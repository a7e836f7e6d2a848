#include "saconv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saconv {

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) {
        throw InputError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw InputError("confusion: empty inputs");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
            throw InputError("confusion: non-binary value at index " + std::to_string(i));
        }
        if (y == 1) {
            (p == 1 ? cm.tp : cm.fn) += 1;
        } else {
            (p == 1 ? cm.fp : cm.tn) += 1;
        }
    }
    return cm;
}

DerivedMetrics derive_metrics(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw InputError("derive_metrics: empty confusion matrix");
    DerivedMetrics d;
    d.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fp > 0) {
        d.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    }
    if (cm.tp + cm.fn > 0) {
        d.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    }
    if (d.precision && d.recall && (*d.precision + *d.recall) > 0.0) {
        d.f1 = 2.0 * *d.precision * *d.recall / (*d.precision + *d.recall);
    }
    return d;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw InputError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::int64_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InputError("roc_auc: labels must be 0/1");
        (y == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        throw InputError("roc_auc: needs both classes, got " + std::to_string(pos) +
                         " positives / " + std::to_string(neg) + " negatives");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // average ranks over tie groups; rank sums stay exact in doubles
    double rank_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) rank_pos += avg_rank;
        }
        i = j + 1;
    }
    double u = rank_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

namespace {

EnsembleStat stat_over(const std::vector<MetricsReport>& runs,
                       const std::function<std::optional<double>(const MetricsReport&)>& get) {
    EnsembleStat st;
    std::vector<double> vals;
    vals.reserve(runs.size());
    for (const MetricsReport& r : runs) {
        std::optional<double> v = get(r);
        if (!v) return st;  // any undefined run leaves the ensemble stat unset
        vals.push_back(*v);
    }
    double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                  static_cast<double>(vals.size());
    st.mean = mean;
    if (vals.size() < 2) {
        st.sem = 0.0;
        return st;
    }
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    st.sem = sd / std::sqrt(static_cast<double>(vals.size()));
    return st;
}

}  // namespace

EnsembleReport aggregate(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) throw InputError("aggregate: no runs");
    for (const MetricsReport& r : runs) {
        if (r.threshold_percentile != runs.front().threshold_percentile) {
            throw InputError("aggregate: mixed threshold percentiles " +
                             std::to_string(r.threshold_percentile) + " vs " +
                             std::to_string(runs.front().threshold_percentile));
        }
    }
    EnsembleReport er;
    er.n_runs = static_cast<int>(runs.size());
    er.single_run = runs.size() == 1;
    er.threshold_percentile = runs.front().threshold_percentile;
    er.loss = stat_over(runs, [](const MetricsReport& r) { return std::optional<double>(r.loss); });
    er.accuracy = stat_over(runs, [](const MetricsReport& r) { return r.accuracy; });
    er.precision = stat_over(runs, [](const MetricsReport& r) { return r.precision; });
    er.recall = stat_over(runs, [](const MetricsReport& r) { return r.recall; });
    er.f1 = stat_over(runs, [](const MetricsReport& r) { return r.f1; });
    er.auc = stat_over(runs, [](const MetricsReport& r) { return r.auc; });
    return er;
}

SweepResult percentile_sweep(const DatasetBuilder& build, const RunTrainer& run_one,
                             const SweepConfig& cfg) {
    if (cfg.thresholds.empty()) throw InputError("sweep: no thresholds");
    if (cfg.runs < 1) throw InputError("sweep: runs must be >= 1");
    SweepResult res;
    res.thresholds = cfg.thresholds;
    for (double m : cfg.thresholds) {
        Dataset ds = build(m);
        res.positive_counts.push_back(Dataset::count_positives(ds.train) +
                                      Dataset::count_positives(ds.test));
        std::vector<MetricsReport> reports;
        for (int r = 0; r < cfg.runs; ++r) {
            std::uint64_t seed = cfg.master_seed + static_cast<std::uint64_t>(r);
            MetricsReport rep = run_one(ds, seed);
            rep.threshold_percentile = m;
            reports.push_back(rep);
        }
        res.ensembles.push_back(aggregate(reports));
        res.run_reports.push_back(std::move(reports));
    }
    return res;
}

}  // namespace saconv
