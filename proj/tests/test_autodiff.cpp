#include <gtest/gtest.h>

#include "reimts/autodiff.hpp"
#include "reimts/params.hpp"
#include "test_util.hpp"

using namespace reimts;

TEST(Tensor, ShapeAndIndexing) {
    Tensor t({2, 3});
    EXPECT_EQ(t.numel(), 6);
    t.at2(1, 2) = 5.0;
    EXPECT_DOUBLE_EQ(t[5], 5.0);
    EXPECT_THROW(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    EXPECT_EQ(t.reshaped({3, 2}).rows(), 3);
    EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Autodiff, ForwardValues) {
    ad::Tape tape;
    ad::Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    ad::Var b = tape.leaf(Tensor({2, 2}, {5, 6, 7, 8}), true);
    EXPECT_DOUBLE_EQ(ad::add(a, b).val()[0], 6.0);
    EXPECT_DOUBLE_EQ(ad::sub(a, b).val()[3], -4.0);
    EXPECT_DOUBLE_EQ(ad::mul(a, b).val()[2], 21.0);
    ad::Var m = ad::matmul(a, b); // [[19,22],[43,50]]
    EXPECT_DOUBLE_EQ(m.val()[0], 19.0);
    EXPECT_DOUBLE_EQ(m.val()[3], 50.0);
    EXPECT_DOUBLE_EQ(ad::transpose(a).val()[1], 3.0);
    EXPECT_DOUBLE_EQ(ad::sum_all(a).val()[0], 10.0);
}

TEST(Autodiff, SoftmaxRowsSumsToOne) {
    ad::Tape tape;
    ad::Var a = tape.leaf(Tensor({2, 3}, {1, 2, 3, -1, 0, 100}), true);
    Tensor y = ad::softmax_rows(a).val();
    EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-12);
    EXPECT_NEAR(y[5], 1.0, 1e-12);
}

TEST(Autodiff, GatherRowsZeroFillsNegative) {
    ad::Tape tape;
    ad::Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Tensor g = ad::gather_rows(a, {1, -1, 0}).val();
    EXPECT_DOUBLE_EQ(g[0], 3.0);
    EXPECT_DOUBLE_EQ(g[2], 0.0);
    EXPECT_DOUBLE_EQ(g[4], 1.0);
}

// One composite expression exercising every op; analytic vs central FD.
TEST(Autodiff, GradientCheckAllOps) {
    ParamStore store;
    Rng rng(7);
    store.add("w1", uniform_tensor({3, 4}, -0.5, 0.5, rng));
    store.add("b1", uniform_tensor({1, 4}, -0.5, 0.5, rng));
    store.add("w2", uniform_tensor({4, 4}, -0.5, 0.5, rng));
    store.add("q", uniform_tensor({4, 1}, -0.5, 0.5, rng));
    Tensor x = uniform_tensor({5, 3}, -1.0, 1.0, rng);
    Tensor mask({5, 4});
    for (long i = 0; i < mask.numel(); ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;

    auto build = [&](ad::Tape& tape, BoundParams& params) {
        ad::Var xv = tape.constant(x);
        ad::Var h = ad::tanh_op(ad::linear(xv, params("w1"), params("b1")));
        ad::Var g = ad::sigmoid(ad::matmul(h, params("w2")));
        ad::Var r = ad::relu(ad::sub(g, ad::scale(h, 0.3)));
        ad::Var att = ad::softmax_rows(ad::transpose(ad::matmul(r, params("q"))));
        ad::Var pooled = ad::matmul(att, r);
        ad::Var cat = ad::concat_cols({h, r});
        ad::Var gathered = ad::gather_rows(cat, {0, 2, -1, 4, 1});
        ad::Var stacked = ad::concat_rows({gathered, cat});
        ad::Var masked = ad::mul(ad::gather_rows(stacked, {0, 1, 2, 3, 4}),
                                 tape.constant(Tensor({5, 8}, std::vector<double>(40, 0.5))));
        ad::Var part = ad::reshape(masked, {10, 4});
        ad::Var gated = ad::mul(ad::gather_rows(part, {0, 1, 2, 3, 4}), tape.constant(mask));
        ad::Var total = ad::add(ad::sum_all(gated), ad::sum_all(pooled));
        return ad::scale(total, 0.7);
    };

    auto res = testutil::check_gradients(store, build, 1e-6);
    EXPECT_LT(res.max_rel_err, 1e-7)
        << "worst param " << res.worst_param << "[" << res.worst_index << "]";
}

TEST(Autodiff, RepeatedParamUseAccumulates) {
    ParamStore store;
    store.add("w", Tensor({1, 1}, {2.0}));
    ad::Tape tape;
    BoundParams params(tape, store);
    ad::Var w = params("w");
    ad::Var loss = ad::sum_all(ad::mul(w, w)); // w^2, d/dw = 2w = 4
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(params.gradients()["w"][0], 4.0);
}

TEST(Autodiff, BackwardRequiresScalar) {
    ad::Tape tape;
    ad::Var a = tape.leaf(Tensor({2, 2}), true);
    EXPECT_THROW(tape.backward(a), std::logic_error);
}

TEST(ParamStore, OrderAndLookup) {
    ParamStore store;
    store.add("b", Tensor({1}));
    store.add("a", Tensor({2}));
    EXPECT_EQ(store.names(), (std::vector<std::string>{"b", "a"}));
    EXPECT_THROW(store.add("a", Tensor({1})), std::logic_error);
    EXPECT_THROW(store.at("missing"), std::out_of_range);
    EXPECT_EQ(store.total_scalars(), 3);
}
