#include <cmath>

#include "doctest.h"
#include "saconv/tensor.hpp"
#include "test_util.hpp"

using namespace saconv;
using testutil::check_op_gradients;
using testutil::contains;
using testutil::random_tensor;

namespace {

// naive triple-loop oracle, independent of the library kernel
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor c({a.shape[0], b.shape[1]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < b.shape[1]; ++j)
            for (int k = 0; k < a.shape[1]; ++k) c(i, j) += a(i, k) * b(k, j);
    return c;
}

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
    CHECK_NOTHROW(Tensor({2, 3}, std::vector<double>(6, 0.0)));
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
    Tensor t({2, 2}, {1, 2, 3, 4});
    CHECK(t(1, 0) == 3.0);
    CHECK(t.numel() == 4);
}

TEST_CASE("matmul identity") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(Tensor::identity(2), a);
    CHECK(r.data == a.data);
}

TEST_CASE("matmul zero annihilation") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(a, Tensor::zeros({2, 2}));
    for (double v : r.data) CHECK(v == 0.0);
}

TEST_CASE("matmul worked example and oracle agreement") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor r = matmul(a, b);
    CHECK(r(0, 0) == 19.0);
    CHECK(r(0, 1) == 22.0);
    CHECK(r(1, 0) == 43.0);
    CHECK(r(1, 1) == 50.0);

    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = random_tensor({3, 5}, rng);
        Tensor y = random_tensor({5, 4}, rng);
        Tensor got = matmul(x, y);
        Tensor want = matmul_oracle(x, y);
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(contains(e.what(), "[2,3]"));
        CHECK(contains(e.what(), "[4,2]"));
    }
}

TEST_CASE("matmul associativity at tolerance") {
    Rng rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor a = random_tensor({8, 8}, rng);
        Tensor b = random_tensor({8, 8}, rng);
        Tensor c = random_tensor({8, 8}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        double worst = 0.0;
        for (std::size_t i = 0; i < left.data.size(); ++i) {
            worst = std::max(worst, std::abs(left.data[i] - right.data[i]));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("softmax of a constant row is uniform") {
    Tensor r = softmax(Tensor::from({3}, {0, 0, 0}));
    for (double v : r.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax is shift-invariant and saturates without overflow") {
    for (double c : {-2000.0, -500.0, 0.0, 300.0, 5000.0}) {
        Tensor r = softmax(Tensor::from({2}, {c, c + 1000.0}));
        CHECK(r.all_finite());
        CHECK(r(0) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(r(1) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax matches direct exp/sum evaluation") {
    Tensor r = softmax(Tensor::from({3}, {1, 2, 3}));
    // frozen values from the direct computation
    CHECK(r(0) == doctest::Approx(0.09003057).epsilon(1e-4));
    CHECK(r(1) == doctest::Approx(0.24472847).epsilon(1e-4));
    CHECK(r(2) == doctest::Approx(0.66524096).epsilon(1e-4));
    double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    double s = e1 + e2 + e3;
    CHECK(std::abs(r(0) - e1 / s) < 1e-5);
    CHECK(std::abs(r(1) - e2 / s) < 1e-5);
    CHECK(std::abs(r(2) - e3 / s) < 1e-5);
}

TEST_CASE("softmax rejects an empty axis") {
    CHECK_THROWS_AS(softmax(Tensor({2, 0})), DimensionError);
}

TEST_CASE("softmax rows are probability vectors and keep the argmax") {
    Rng rng(23);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor x = random_tensor({7}, rng, -30.0, 30.0);
        Tensor y = softmax(x);
        double sum = 0.0;
        int ax = 0, ay = 0;
        for (int i = 0; i < 7; ++i) {
            CHECK(y(i) >= 0.0);
            sum += y(i);
            if (x(i) > x(ax)) ax = i;
            if (y(i) > y(ay)) ay = i;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        CHECK(ax == ay);
    }
}

TEST_CASE("concat shape arithmetic and slicing round trip") {
    Rng rng(3);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 5}, rng);
    Tensor c = concat(a, b, 1);
    CHECK(c.shape == std::vector<int>{2, 8});
    Tensor sa = slice(c, 1, 0, 3);
    Tensor sb = slice(c, 1, 3, 8);
    CHECK(sa.data == a.data);
    CHECK(sb.data == b.data);
}

TEST_CASE("concat with an empty-on-axis tensor is the identity") {
    Rng rng(4);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor empty({2, 0});
    Tensor c = concat(a, empty, 1);
    CHECK(c.shape == a.shape);
    CHECK(c.data == a.data);
}

TEST_CASE("concat rejects mismatched non-concat axes") {
    CHECK_THROWS_AS(concat(Tensor({2, 3}), Tensor({3, 3}), 1), DimensionError);
}

TEST_CASE("backward of sum is all ones") {
    Tape t;
    Tape::Var w = t.leaf(Tensor::from({3}, {5, -2, 7}));
    t.backward(t.sum_all(w));
    for (double v : t.grad(w).data) CHECK(v == 1.0);
}

TEST_CASE("backward of sum of squares is 2w") {
    Tape t;
    Tape::Var w = t.leaf(Tensor::from({3}, {1, 2, 3}));
    t.backward(t.sum_all(t.mul(w, w)));
    const Tensor& g = t.grad(w);
    CHECK(g(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(g(1) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(g(2) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape t;
    Tape::Var w = t.leaf(Tensor({2, 2}));
    CHECK_THROWS_AS(t.backward(w), ContractError);
}

TEST_CASE("backward twice without reset is rejected") {
    Tape t;
    Tape::Var w = t.leaf(Tensor::from({2}, {1, 2}));
    Tape::Var loss = t.sum_all(w);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), ContractError);
    t.reset();
    Tape::Var w2 = t.leaf(Tensor::from({2}, {1, 2}));
    CHECK_NOTHROW(t.backward(t.sum_all(w2)));
}

TEST_CASE("gradients of every primitive match finite differences") {
    Rng rng(31);

    SUBCASE("matmul") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) { return t.matmul(v[0], v[1]); },
            {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("transpose") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) { return t.transpose(v[0]); },
            {random_tensor({3, 5}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("add and add_rowvec") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.add_rowvec(t.add(v[0], v[1]), v[2]);
            },
            {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("mul and scale_shift") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.mul(t.scale_shift(v[0], -1.0, 1.0), v[1]);
            },
            {random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("activations") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.relu(t.tanh_act(t.sigmoid(v[0])));
            },
            {random_tensor({3, 3}, rng, 0.1, 2.0)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("softmax") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) { return t.softmax(v[0]); },
            {random_tensor({4, 6}, rng, -2.0, 2.0)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("concat and reshape") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.reshape(t.concat(v[0], v[1], 1), {12});
            },
            {random_tensor({2, 2}, rng), random_tensor({2, 4}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("conv2d") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.conv2d(v[0], v[1], v[2]);
            },
            {random_tensor({5, 6, 2}, rng), random_tensor({3, 3, 2, 4}, rng),
             random_tensor({4}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("maxpool") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) { return t.maxpool(v[0], 2); },
            {random_tensor({5, 6, 3}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("dropout mask") {
        Rng mrng(77);
        std::vector<double> mask(6 * 4);
        for (double& m : mask) m = mrng.uniform() < 0.25 ? 0.0 : 1.0 / 0.75;
        auto probe = check_op_gradients(
            [mask](Tape& t, const std::vector<Tape::Var>& v) {
                return t.dropout_mask(v[0], mask);
            },
            {random_tensor({6, 4}, rng)});
        CHECK(probe.worst_rel < 1e-4);
    }
    SUBCASE("cross entropy of a softmax") {
        auto probe = check_op_gradients(
            [](Tape& t, const std::vector<Tape::Var>& v) {
                return t.cross_entropy(t.softmax(v[0]), {1, 0, 1}, {0.6, 1.4});
            },
            {random_tensor({3, 2}, rng, -2.0, 2.0)});
        CHECK(probe.worst_rel < 1e-4);
    }
}

TEST_CASE("leaf_ref reads the external tensor without copying") {
    Tensor w = Tensor::from({2}, {3, 4});
    Tape t;
    Tape::Var v = t.leaf_ref(w);
    Tape::Var loss = t.sum_all(t.mul(v, v));
    t.backward(loss);
    CHECK(t.value(loss)(0) == 25.0);
    CHECK(t.grad(v)(0) == doctest::Approx(6.0));
    CHECK(t.grad(v)(1) == doctest::Approx(8.0));
}
