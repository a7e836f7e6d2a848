#include <cmath>

#include "doctest.h"
#include "saconv/metrics.hpp"
#include "test_util.hpp"

using namespace saconv;

namespace {

// exhaustive pairwise oracle, ties at half credit
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / static_cast<double>(pairs);
}

MetricsReport report_with_accuracy(double acc, double thresh = 0.95) {
    MetricsReport r;
    r.accuracy = acc;
    r.loss = acc;
    r.threshold_percentile = thresh;
    return r;
}

}  // namespace

TEST_CASE("confusion counts the four cases") {
    SUBCASE("perfect prediction") {
        std::vector<int> labels = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
        ConfusionMatrix cm = confusion(labels, labels);
        CHECK(cm.tp == 4);
        CHECK(cm.tn == 6);
        CHECK(cm.fp == 0);
        CHECK(cm.fn == 0);
        CHECK(cm.total() == 10);
    }
    SUBCASE("inverted prediction") {
        std::vector<int> labels = {1, 0, 1, 0};
        std::vector<int> preds = {0, 1, 0, 1};
        ConfusionMatrix cm = confusion(preds, labels);
        CHECK(cm.tp == 0);
        CHECK(cm.tn == 0);
        CHECK(cm.fp == 2);
        CHECK(cm.fn == 2);
    }
    SUBCASE("mixed enumeration") {
        ConfusionMatrix cm = confusion({1, 1, 0, 0}, {1, 0, 1, 0});
        CHECK(cm.tp == 1);
        CHECK(cm.fp == 1);
        CHECK(cm.fn == 1);
        CHECK(cm.tn == 1);
    }
    SUBCASE("length mismatch is rejected") {
        CHECK_THROWS_AS(confusion({1, 0}, {1}), InputError);
        CHECK_THROWS_AS(confusion({}, {}), InputError);
    }
}

TEST_CASE("derived metrics worked example") {
    ConfusionMatrix cm{9, 87, 3, 1};
    DerivedMetrics d = derive_metrics(cm);
    CHECK(std::abs(*d.accuracy - 0.96) <= 1e-12);
    CHECK(std::abs(*d.precision - 0.75) <= 1e-12);
    CHECK(std::abs(*d.recall - 0.90) <= 1e-12);
    CHECK(std::abs(*d.f1 - 9.0 / 11.0) <= 1e-12);
    CHECK(*d.f1 == doctest::Approx(0.8182).epsilon(1e-4));
    // accuracy * total = tp + tn exactly
    CHECK(*d.accuracy * static_cast<double>(cm.total()) ==
          static_cast<double>(cm.tp + cm.tn));
}

TEST_CASE("derived metrics on a perfect matrix are all 1") {
    DerivedMetrics d = derive_metrics({10, 20, 0, 0});
    CHECK(*d.accuracy == 1.0);
    CHECK(*d.precision == 1.0);
    CHECK(*d.recall == 1.0);
    CHECK(*d.f1 == 1.0);
}

TEST_CASE("0/0 ratios are flagged undefined, not silently coerced") {
    // nothing predicted positive, positives exist
    DerivedMetrics d = derive_metrics({0, 5, 0, 3});
    CHECK_FALSE(d.precision.has_value());
    REQUIRE(d.recall.has_value());
    CHECK(*d.recall == 0.0);
    CHECK_FALSE(d.f1.has_value());
    // no positives at all: recall undefined too
    DerivedMetrics d2 = derive_metrics({0, 5, 2, 0});
    CHECK_FALSE(d2.recall.has_value());
    REQUIRE(d2.precision.has_value());
    CHECK(*d2.precision == 0.0);
}

TEST_CASE("roc_auc trivial cases") {
    SUBCASE("perfect ranking") {
        CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    }
    SUBCASE("all scores equal") {
        CHECK(roc_auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) == 0.5);
    }
    SUBCASE("worked pairwise case") {
        CHECK(roc_auc({0.9, 0.8, 0.1, 0.95}, {1, 1, 0, 0}) == 0.5);
    }
    SUBCASE("single-class labels are rejected") {
        CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), InputError);
        CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {0, 0}), InputError);
    }
}

TEST_CASE("roc_auc equals the exhaustive pairwise oracle, exactly") {
    Rng rng(201);
    for (int rep = 0; rep < 100; ++rep) {
        auto n = static_cast<std::size_t>(2 + rng.next_below(99));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid of scores so ties actually occur
            scores[i] = static_cast<double>(rng.next_below(12)) / 11.0;
            labels[i] = rng.uniform() < 0.4 ? 1 : 0;
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) {
            labels[0] = 0;
            labels[1] = 1;
        }
        CHECK(roc_auc(scores, labels) == auc_oracle(scores, labels));
    }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
    Rng rng(202);
    std::vector<double> scores(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform(-3.0, 3.0);
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    double base = roc_auc(scores, labels);
    std::vector<double> affine(scores), expo(scores);
    for (double& v : affine) v = 2.0 * v + 3.0;
    for (double& v : expo) v = std::exp(v);
    CHECK(roc_auc(affine, labels) == base);
    CHECK(roc_auc(expo, labels) == base);
}

TEST_CASE("aggregate mean and SEM") {
    SUBCASE("identical runs have zero SEM") {
        std::vector<MetricsReport> runs(4, report_with_accuracy(0.9));
        EnsembleReport er = aggregate(runs);
        CHECK(*er.accuracy.mean == doctest::Approx(0.9).epsilon(1e-14));
        CHECK(*er.accuracy.sem == 0.0);
        CHECK(er.n_runs == 4);
        CHECK_FALSE(er.single_run);
    }
    SUBCASE("accuracy values 1,2,3 give mean 2 and SEM 1/sqrt(3)") {
        std::vector<MetricsReport> runs = {report_with_accuracy(1.0), report_with_accuracy(2.0),
                                           report_with_accuracy(3.0)};
        EnsembleReport er = aggregate(runs);
        CHECK(std::abs(*er.accuracy.mean - 2.0) <= 1e-12);
        CHECK(std::abs(*er.accuracy.sem - 1.0 / std::sqrt(3.0)) <= 1e-12);
        CHECK(*er.accuracy.sem == doctest::Approx(0.5774).epsilon(1e-4));
    }
    SUBCASE("a single run keeps its value with zero SEM and a flag") {
        EnsembleReport er = aggregate({report_with_accuracy(0.7)});
        CHECK(*er.accuracy.mean == 0.7);
        CHECK(*er.accuracy.sem == 0.0);
        CHECK(er.single_run);
    }
    SUBCASE("mixed thresholds are rejected") {
        CHECK_THROWS_AS(
            aggregate({report_with_accuracy(1.0, 0.95), report_with_accuracy(1.0, 0.91)}),
            InputError);
    }
    SUBCASE("an undefined metric in any run leaves the ensemble stat unset") {
        MetricsReport a = report_with_accuracy(0.9);
        a.precision = 0.5;
        MetricsReport b = report_with_accuracy(0.8);
        // b.precision left undefined
        EnsembleReport er = aggregate({a, b});
        CHECK(er.accuracy.mean.has_value());
        CHECK_FALSE(er.precision.mean.has_value());
        CHECK_FALSE(er.precision.sem.has_value());
    }
    SUBCASE("empty input is rejected") { CHECK_THROWS_AS(aggregate({}), InputError); }
}

TEST_CASE("percentile sweep drives the full protocol with derived seeds") {
    // synthetic precipitation series: labels depend on the threshold
    Rng rng(203);
    PrecipSeries precip;
    for (int i = 0; i < 300; ++i) {
        precip.dates.push_back(Date::from_ordinal(Date{2000, 1, 1}.ordinal() + i));
        precip.values.push_back(rng.uniform(0.0, 10.0));
    }
    DailyGridSeries var_a, var_b;
    var_a.variable = "a";
    var_b.variable = "b";
    var_a.lat = {30.0};
    var_a.lon = {-100.0};
    var_b.lat = var_a.lat;
    var_b.lon = var_a.lon;
    for (int i = 0; i < 300; ++i) {
        var_a.dates.push_back(precip.dates[static_cast<std::size_t>(i)]);
        var_b.dates.push_back(precip.dates[static_cast<std::size_t>(i)]);
        var_a.grids.push_back(Tensor({1, 1}, rng.uniform()));
        var_b.grids.push_back(Tensor({1, 1}, rng.uniform()));
    }

    int builds = 0, trainings = 0;
    std::vector<std::uint64_t> seeds_seen;
    SweepConfig cfg;
    cfg.thresholds = {0.91, 0.92, 0.93, 0.94, 0.95};
    cfg.runs = 5;
    cfg.master_seed = 1000;
    SweepResult res = percentile_sweep(
        [&](double m) {
            ++builds;
            return build_dataset(var_a, var_b, label_extremes(precip, m));
        },
        [&](const Dataset& ds, std::uint64_t seed) {
            ++trainings;
            seeds_seen.push_back(seed);
            MetricsReport r;
            r.loss = 0.1;
            r.accuracy = 0.9;
            r.threshold_percentile = ds.threshold_percentile;
            return r;
        },
        cfg);

    CHECK(builds == 5);
    CHECK(trainings == 25);
    REQUIRE(res.positive_counts.size() == 5);
    for (std::size_t i = 1; i < res.positive_counts.size(); ++i) {
        CHECK(res.positive_counts[i] <= res.positive_counts[i - 1]);
    }
    REQUIRE(res.ensembles.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(res.ensembles[i].n_runs == 5);
        CHECK(res.ensembles[i].threshold_percentile ==
              doctest::Approx(cfg.thresholds[i]).epsilon(1e-15));
    }
    // seeds derive as master + run index, repeated per threshold
    REQUIRE(seeds_seen.size() == 25);
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t r = 0; r < 5; ++r) {
            CHECK(seeds_seen[t * 5 + r] == 1000 + r);
        }
    }
}
