#include <gtest/gtest.h>

#include <functional>

#include "cotext/autodiff.hpp"
#include "cotext/rng.hpp"

using namespace cotext;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data) x = rng.normal();
    return m;
}

// Compares tape gradients of a scalar graph against central differences.
double max_fd_error(std::vector<Matrix>& inputs, const std::function<Var(Tape&, std::vector<Var>&)>& graph) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& m : inputs) vars.push_back(tape.input(m));
    const Var out = graph(tape, vars);
    tape.backward(out);
    std::vector<Matrix> grads;
    for (auto v : vars) grads.push_back(tape.grad(v));

    auto eval = [&] {
        Tape t(false);
        std::vector<Var> vs;
        for (auto& m : inputs) vs.push_back(t.input(m));
        return t.value(graph(t, vs)).data[0];
    };
    double worst = 0.0;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            const double orig = inputs[i].data[k];
            inputs[i].data[k] = orig + eps;
            const double up = eval();
            inputs[i].data[k] = orig - eps;
            const double down = eval();
            inputs[i].data[k] = orig;
            const double numeric = (up - down) / (2 * eps);
            const double analytic = grads[i].empty() ? 0.0 : grads[i].data[k];
            worst = std::max(worst, std::abs(numeric - analytic) / std::max({1e-6, std::abs(numeric), std::abs(analytic)}));
        }
    }
    return worst;
}

} // namespace

TEST(Autodiff, SumOfSquaresGradientIsTwoX) {
    Rng rng(1);
    Matrix x = random_matrix(rng, 3, 4);
    Tape t;
    const Var v = t.input(x);
    t.backward(t.sum(t.mul(v, v)));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(t.grad(v).data[i], 2.0 * x.data[i]);
}

TEST(Autodiff, MatmulFamily) {
    Rng rng(2);
    std::vector<Matrix> in = {random_matrix(rng, 3, 4), random_matrix(rng, 4, 5), random_matrix(rng, 2, 4)};
    EXPECT_LT(max_fd_error(in, [](Tape& t, std::vector<Var>& v) {
                  const Var a = t.matmul(v[0], v[1]);
                  const Var b = t.matmul_bt(v[2], v[0]);
                  return t.add(t.sum(t.mul(a, a)), t.sum(t.gelu(b)));
              }),
              1e-6);
}

TEST(Autodiff, NormSoftmaxAndGather) {
    Rng rng(3);
    std::vector<Matrix> in = {random_matrix(rng, 4, 6), random_matrix(rng, 1, 6), random_matrix(rng, 8, 2)};
    const std::vector<std::uint8_t> allowed = {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 1, 0};
    const std::vector<int> buckets = {0, 1, 2, 3, 4, 5, 6, 7, 7, 6, 5, 4, 3, 2, 1, 0, 1, 1, 2, 2, 3, 3, 4, 4};
    const std::vector<int> ids = {5, 3, 3, 0};
    const std::vector<int> targets = {1, 2, 0, 5};
    const std::vector<std::uint8_t> weights = {1, 0, 1, 1};
    EXPECT_LT(max_fd_error(in, [&](Tape& t, std::vector<Var>& v) {
                  Var x = t.rms_norm(v[0], v[1]);
                  x = t.add(x, t.gather_bias(v[2], buckets, 1, 4, 6));
                  const Var p = t.softmax_rows(x, allowed);
                  const Var g = t.gather_rows(v[2], ids);
                  const Var cat = t.concat_cols(std::vector<Var>{t.slice_cols(p, 1, 3), g, t.scale(x, 0.5)});
                  const Var ce = t.cross_entropy_sum(cat, targets, weights);
                  return t.add(ce, t.sum(t.mul(p, x)));
              }),
              1e-5);
}

TEST(Autodiff, SoftmaxMaskedEntriesExactlyZero) {
    Rng rng(4);
    Matrix x = random_matrix(rng, 3, 4);
    const std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1};
    Tape t(false);
    const Matrix& p = t.value(t.softmax_rows(t.input(x), allowed));
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            if (!allowed[r * 4 + c]) {
                EXPECT_EQ(p(r, c), 0.0);
            }
            s += p(r, c);
        }
        if (r != 1) {
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Autodiff, ShapeMismatch) {
    Matrix a(2, 3), b(2, 3);
    Tape t;
    try {
        t.matmul(t.input(a), t.input(b));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    }
}

TEST(Autodiff, NoGradientWithoutPath) {
    Rng rng(5);
    Matrix a = random_matrix(rng, 2, 2), b = random_matrix(rng, 2, 2);
    Tape t;
    const Var va = t.input(a);
    const Var vb = t.input(b);
    t.backward(t.sum(va));
    EXPECT_TRUE(t.grad(vb).empty());
}

TEST(Autodiff, InferenceTapeStoresNoGradients) {
    Rng rng(6);
    Matrix a = random_matrix(rng, 2, 2);
    Tape t(false);
    const Var v = t.input(a);
    const Var s = t.sum(t.mul(v, v));
    t.backward(s);
    EXPECT_TRUE(t.grad(v).empty());
}
