#include <cmath>

#include "doctest.h"
#include "saconv/train.hpp"
#include "test_util.hpp"

using namespace saconv;
using testutil::contains;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_h = 6;
    cfg.input_w = 8;
    cfg.input_d = 2;
    cfg.blocks = 2;
    cfg.total_filters_per_block = 6;
    cfg.attn_channels = 2;
    cfg.num_heads = 2;
    cfg.d_k = 2;
    cfg.use_highway = true;
    return cfg;
}

// small separable dataset: class decided by the sign of a corner patch
Dataset tiny_dataset(int n, std::uint64_t seed, const ModelConfig& cfg) {
    Rng rng(seed);
    std::vector<GridSample> all;
    for (int i = 0; i < n; ++i) {
        GridSample s;
        s.date = Date::from_ordinal(Date{2000, 1, 1}.ordinal() + i);
        s.label = i % 2;
        s.anomalies = random_tensor({cfg.input_h, cfg.input_w, cfg.input_d}, rng, -0.3, 0.3);
        double bump = s.label == 1 ? 2.0 : -2.0;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                for (int d = 0; d < cfg.input_d; ++d) s.anomalies(r, c, d) += bump;
        all.push_back(std::move(s));
    }
    Dataset ds;
    auto n_train = static_cast<std::size_t>(0.8 * n);
    ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    ds.threshold_percentile = 0.5;
    return ds;
}

}  // namespace

TEST_CASE("lr schedule endpoints and midpoint") {
    TrainConfig cfg;
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-2).epsilon(1e-15));
    CHECK(lr_schedule(cfg.epochs, cfg) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(lr_schedule(cfg.epochs / 2, cfg) == doctest::Approx(5.05e-3).epsilon(1e-12));
    CHECK_THROWS_AS(lr_schedule(-1, cfg), ContractError);
    CHECK_THROWS_AS(lr_schedule(cfg.epochs + 1, cfg), ContractError);
}

TEST_CASE("lr schedule is non-increasing and bounded") {
    TrainConfig cfg;
    double prev = lr_schedule(0, cfg);
    for (int e = 1; e <= cfg.epochs; ++e) {
        double cur = lr_schedule(e, cfg);
        CHECK(cur <= prev);
        CHECK(cur >= cfg.lr_min);
        CHECK(cur <= cfg.lr_max);
        prev = cur;
    }
}

TEST_CASE("cross entropy worked values") {
    SUBCASE("one-hot prediction on the true class has zero loss") {
        Tensor pred = Tensor::from({1, 2}, {0.0, 1.0});
        CHECK(cross_entropy_value(pred, {1}, {1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("uniform prediction costs ln 2") {
        Tensor pred = Tensor::from({1, 2}, {0.5, 0.5});
        CHECK(cross_entropy_value(pred, {0}, {1.0, 1.0}) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
    SUBCASE("two-sample direct evaluation") {
        Tensor pred = Tensor::from({2, 2}, {0.9, 0.1, 0.2, 0.8});
        double want = -(std::log(0.9) + std::log(0.8)) / 2.0;
        CHECK(cross_entropy_value(pred, {0, 1}, {1.0, 1.0}) ==
              doctest::Approx(want).epsilon(1e-14));
        CHECK(want == doctest::Approx(0.1643).epsilon(1e-3));
    }
    SUBCASE("bad target index is rejected") {
        Tensor pred = Tensor::from({1, 2}, {0.5, 0.5});
        CHECK_THROWS_AS(cross_entropy_value(pred, {2}, {1.0, 1.0}), InputError);
        CHECK_THROWS_AS(cross_entropy_value(pred, {-1}, {1.0, 1.0}), InputError);
    }
    SUBCASE("rows must sum to one") {
        Tensor pred = Tensor::from({1, 2}, {0.7, 0.7});
        CHECK_THROWS_AS(cross_entropy_value(pred, {0}, {1.0, 1.0}), InputError);
    }
    SUBCASE("class weights scale the per-sample terms") {
        Tensor pred = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
        double got = cross_entropy_value(pred, {0, 1}, {3.0, 1.0});
        CHECK(got == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
    }
}

TEST_CASE("inverse-frequency weights give the 19x minority boost at 95/5") {
    std::vector<GridSample> set(100);
    for (int i = 0; i < 100; ++i) set[static_cast<std::size_t>(i)].label = i < 5 ? 1 : 0;
    std::vector<double> w = class_weights_for(set, ClassWeighting::InverseFrequency, 2);
    CHECK(w[1] == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(w[0] == doctest::Approx(100.0 / 190.0).epsilon(1e-14));
    CHECK(w[1] / w[0] == doctest::Approx(19.0).epsilon(1e-12));
    std::vector<double> ones = class_weights_for(set, ClassWeighting::None, 2);
    CHECK(ones == std::vector<double>{1.0, 1.0});
}

TEST_CASE("adam step with zero gradients leaves parameters unchanged") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 7);
    ModelParams before = params;
    AdamState st = AdamState::like(params);
    std::vector<Tensor> grads;
    params.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape); });
    TrainConfig tc;
    adam_step(params, grads, st, 0.01, tc);
    bool same = true;
    std::vector<const Tensor*> pa, pb;
    params.for_each([&](const std::string&, const Tensor& t) { pa.push_back(&t); });
    before.for_each([&](const std::string&, const Tensor& t) { pb.push_back(&t); });
    for (std::size_t i = 0; i < pa.size(); ++i) same = same && (pa[i]->data == pb[i]->data);
    CHECK(same);
}

TEST_CASE("first adam step moves by about lr regardless of gradient scale") {
    TrainConfig tc;
    for (double g : {1e-3, 1.0, 1e3}) {
        ModelConfig cfg = tiny_config();
        cfg.use_highway = false;
        ModelParams params = ModelParams::init(cfg, 9);
        double w0 = params.dense.w(0, 0);
        AdamState st = AdamState::like(params);
        std::vector<Tensor> grads;
        params.for_each([&](const std::string&, const Tensor& t) {
            grads.emplace_back(t.shape, g);
        });
        adam_step(params, grads, st, 0.01, tc);
        double step = std::abs(params.dense.w(0, 0) - w0);
        CHECK(step == doctest::Approx(0.01).epsilon(1e-4));
    }
}

TEST_CASE("two optimizers stepped identically stay bit-identical") {
    ModelConfig cfg = tiny_config();
    ModelParams a = ModelParams::init(cfg, 10);
    ModelParams b = ModelParams::init(cfg, 10);
    AdamState sa = AdamState::like(a), sb = AdamState::like(b);
    TrainConfig tc;
    Rng rng(11);
    for (int step = 0; step < 5; ++step) {
        std::vector<Tensor> grads;
        a.for_each([&](const std::string&, const Tensor& t) {
            grads.push_back(random_tensor(t.shape, rng));
        });
        adam_step(a, grads, sa, 0.003, tc);
        adam_step(b, grads, sb, 0.003, tc);
    }
    std::vector<const Tensor*> pa, pb;
    a.for_each([&](const std::string&, const Tensor& t) { pa.push_back(&t); });
    b.for_each([&](const std::string&, const Tensor& t) { pb.push_back(&t); });
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
}

TEST_CASE("adam aborts on a non-finite gradient, naming the parameter") {
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 12);
    AdamState st = AdamState::like(params);
    std::vector<Tensor> grads;
    params.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape); });
    grads[0].data[0] = std::nan("");
    TrainConfig tc;
    try {
        adam_step(params, grads, st, 0.01, tc);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        CHECK(contains(e.what(), "block0.conv.kernel"));
    }
}

TEST_CASE("training refuses a single-class split") {
    ModelConfig cfg = tiny_config();
    Dataset ds = tiny_dataset(20, 13, cfg);
    for (GridSample& s : ds.train) s.label = 0;
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train(cfg, ds, tc), ContractError);
}

TEST_CASE("initial loss with the zero-init dense layer is ln 2") {
    ModelConfig cfg = tiny_config();
    Dataset ds = tiny_dataset(16, 14, cfg);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 8;
    tc.lr_max = 1e-12;  // freeze the model so epoch 1 stays at the start point
    tc.lr_min = 1e-13;
    TrainResult res = train(cfg, ds, tc);
    REQUIRE(res.log.size() == 2);
    CHECK(res.log[0].epoch == 0);
    CHECK(res.log[0].loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    // dropout is active during epoch 1 but logits stay 0 under a zero dense layer
    CHECK(res.log[1].loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("training is deterministic and fits a tiny separable set") {
    ModelConfig cfg = tiny_config();
    cfg.dropout_rate = 0.1;
    Dataset ds = tiny_dataset(16, 15, cfg);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 8;
    tc.seed = 99;
    TrainResult r1 = train(cfg, ds, tc);
    TrainResult r2 = train(cfg, ds, tc);

    // bit-identical parameters and loss curves
    std::vector<const Tensor*> pa, pb;
    r1.params.for_each([&](const std::string&, const Tensor& t) { pa.push_back(&t); });
    r2.params.for_each([&](const std::string&, const Tensor& t) { pb.push_back(&t); });
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss);
        CHECK(r1.log[i].train_accuracy == r2.log[i].train_accuracy);
    }

    // overfits the separable set
    CHECK(r1.final_train_accuracy == 1.0);
    CHECK(r1.final_train_loss < 0.2);

    // a different seed changes the trajectory
    tc.seed = 100;
    TrainResult r3 = train(cfg, ds, tc);
    CHECK(r3.log.back().loss != r1.log.back().loss);
}

TEST_CASE("evaluation reports per-sample probabilities and loss") {
    ModelConfig cfg = tiny_config();
    Dataset ds = tiny_dataset(10, 16, cfg);
    ModelParams params = ModelParams::init(cfg, 17);
    EvalResult ev = evaluate_model(params, ds.train, {1.0, 1.0});
    CHECK(ev.prob1.size() == ds.train.size());
    for (std::size_t i = 0; i < ev.prob1.size(); ++i) {
        CHECK(ev.prob1[i] >= 0.0);
        CHECK(ev.prob1[i] <= 1.0);
        CHECK(ev.pred[i] == (ev.prob1[i] > 0.5 ? 1 : 0));
    }
    CHECK(ev.loss > 0.0);
}
