#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ppgkit/tensor.hpp"

using namespace ppg;

namespace {

constexpr double kTol = 1e-4;  // required bound; observed errors sit near 1e-8

Tensor randleaf(std::vector<int> shape, std::mt19937_64& rng, bool rg = true) {
    long n = 1;
    for (int d : shape) n *= d;
    std::uniform_real_distribution<double> dist(0.15, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng) * (sign(rng) ? 1.0 : -1.0);  // keeps |x| off kinks
    return Tensor::from(std::move(shape), std::move(v), rg);
}

// Fixed elementwise weights turn any output into a scalar with rich gradients.
Tensor wsum(const Tensor& t, std::mt19937_64& rng) {
    Tensor w = randleaf(t.shape(), rng, false);
    return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("elementwise and scaling ops backprop correctly") {
    std::mt19937_64 rng(100);
    Tensor x = randleaf({2, 3}, rng);
    Tensor y = randleaf({2, 3}, rng);

    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(add(x, y), r); }, {x, y}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(sub(x, y), r); }, {x, y}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(mul(x, y), r); }, {x, y}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(4); return wsum(scale(x, -1.7), r); }, {x}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(5); return wsum(relu(x), r); }, {x}) < kTol);
}

TEST_CASE("matrix products backprop correctly") {
    std::mt19937_64 rng(101);
    Tensor a = randleaf({2, 3}, rng);
    Tensor b = randleaf({3, 4}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(matmul(a, b), r); }, {a, b}) < kTol);

    Tensor ba = randleaf({2, 2, 3}, rng);
    Tensor bb = randleaf({2, 3, 4}, rng);
    Tensor bc = randleaf({2, 4, 3}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(bmm_nn(ba, bb), r); }, {ba, bb}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(bmm_nt(ba, bc), r); }, {ba, bc}) <
          kTol);
}

TEST_CASE("linear layers backprop through inputs, weights, and bias") {
    std::mt19937_64 rng(102);
    Tensor x = randleaf({2, 4}, rng);
    Tensor w = randleaf({3, 4}, rng);
    Tensor b = randleaf({3}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(linear(x, w, b), r); }, {x, w, b}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(linear_nb(x, w), r); }, {x, w}) <
          kTol);

    Tensor x3 = randleaf({2, 2, 4}, rng);  // leading dims fold flat
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(linear(x3, w, b), r); },
                    {x3, w, b}) < kTol);
}

TEST_CASE("softmax, norms, and reductions backprop correctly") {
    std::mt19937_64 rng(103);
    Tensor x = randleaf({2, 4}, rng);
    Tensor g = randleaf({4}, rng);
    Tensor be = randleaf({4}, rng);

    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(softmax_lastdim(x), r); }, {x}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(layernorm_lastdim(x, g, be), r); },
                    {x, g, be}) < kTol);
    CHECK(gradcheck([&] { return mean_all(x); }, {x}) < kTol);
    CHECK(gradcheck([&] { return sum_all(mul(x, x)); }, {x}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(mean_lastdim(x), r); }, {x}) < kTol);
}

TEST_CASE("shape ops are gradient-transparent") {
    std::mt19937_64 rng(104);
    Tensor x = randleaf({2, 6}, rng);
    Tensor a = randleaf({2, 3}, rng);
    Tensor b = randleaf({2, 2}, rng);
    Tensor t = randleaf({2, 3, 4}, rng);

    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(reshape(x, {3, 4}), r); }, {x}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(transpose_last2(t), r); }, {t}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(concat_lastdim(a, b), r); },
                    {a, b}) < kTol);

    Tensor h = randleaf({2, 4, 6}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(4); return wsum(split_heads(h, 2), r); }, {h}) <
          kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(5); return wsum(merge_heads(split_heads(h, 2), 2), r); },
                    {h}) < kTol);

    Tensor rt = merge_heads(split_heads(h, 2), 2);
    for (long i = 0; i < h.size(); ++i) CHECK(rt.data()[i] == h.data()[i]);
}

TEST_CASE("convolutions backprop through x, w, and b in every padding regime") {
    std::mt19937_64 rng(105);
    Tensor x = randleaf({2, 3, 8}, rng);
    Tensor w = randleaf({4, 3, 3}, rng);
    Tensor b = randleaf({4}, rng);

    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(conv1d(x, w, b, 1, 1, 1), r); },
                    {x, w, b}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(2); return wsum(conv1d(x, w, b, 2, 2, 0), r); },
                    {x, w, b}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(conv1d_same(x, w, b), r); },
                    {x, w, b}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(4); return wsum(conv1d_causal(x, w, b, true), r); },
                    {x, w, b}) < kTol);
    CHECK(gradcheck([&] { std::mt19937_64 r(5); return wsum(conv1d_causal(x, w, b, false), r); },
                    {x, w, b}) < kTol);

    CHECK(conv1d_same(x, w, b).shape() == std::vector<int>{2, 4, 8});
    CHECK(conv1d_causal(x, w, b, true).shape() == std::vector<int>{2, 4, 8});
}

TEST_CASE("dropout is identity in eval and a scaled seeded mask in train") {
    std::mt19937_64 rng(106);
    Tensor x = randleaf({3, 5}, rng);

    FwdCtx ev;
    Tensor ye = dropout(x, 0.5, ev);
    for (long i = 0; i < x.size(); ++i) CHECK(ye.data()[i] == x.data()[i]);

    auto masked = [&](std::uint64_t seed) {
        std::mt19937_64 r(seed);
        FwdCtx ctx{Mode::train, &r};
        return dropout(x, 0.5, ctx);
    };
    Tensor y1 = masked(9);
    Tensor y2 = masked(9);
    int zeros = 0;
    for (long i = 0; i < x.size(); ++i) {
        CHECK(y1.data()[i] == y2.data()[i]);
        const bool dropped = y1.data()[i] == 0.0;
        if (dropped) ++zeros;
        if (!dropped) CHECK(y1.data()[i] == doctest::Approx(x.data()[i] / 0.5));
    }
    CHECK(zeros > 0);
    CHECK(zeros < x.size());

    // A mask rebuilt from the same seed inside fn is deterministic, so the
    // finite-difference probe sees a fixed subnetwork.
    CHECK(gradcheck(
              [&] {
                  std::mt19937_64 r(7);
                  FwdCtx ctx{Mode::train, &r};
                  std::mt19937_64 wr(8);
                  return wsum(dropout(x, 0.4, ctx), wr);
              },
              {x}) < kTol);
}

TEST_CASE("batchnorm normalizes with batch stats in train and running stats in eval") {
    std::mt19937_64 rng(107);
    Tensor x = randleaf({2, 3, 5}, rng);
    Tensor g = randleaf({3}, rng);
    Tensor be = randleaf({3}, rng);

    CHECK(gradcheck(
              [&] {
                  BnState st = make_bn_state(3);
                  std::mt19937_64 r(1);
                  FwdCtx ctx{Mode::train, &r};
                  std::mt19937_64 wr(2);
                  return wsum(batchnorm(x, g, be, st, ctx), wr);
              },
              {x, g, be}) < kTol);

    BnState st = make_bn_state(3);
    for (double v : st.running_mean.data()) CHECK(v == 0.0);
    for (double v : st.running_var.data()) CHECK(v == 1.0);

    FwdCtx tr{Mode::train, nullptr};
    batchnorm(x, g, be, st, tr);
    // Channel 0 batch mean over batch and length.
    double m0 = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int l = 0; l < 5; ++l) m0 += x.data()[b * 15 + l];
    m0 /= 10.0;
    CHECK(st.running_mean.data()[0] == doctest::Approx(0.1 * m0).epsilon(1e-12));

    // Eval reads the running stats and leaves them untouched.
    const auto saved = st.running_mean.data();
    FwdCtx ev;
    Tensor ye = batchnorm(x, g, be, st, ev);
    CHECK(st.running_mean.data() == saved);
    const double want0 = (x.data()[0] - st.running_mean.data()[0]) /
                             std::sqrt(st.running_var.data()[0] + 1e-5) * g.data()[0] +
                         be.data()[0];
    CHECK(ye.data()[0] == doctest::Approx(want0).epsilon(1e-6));

    Tensor x2 = randleaf({4, 3}, rng);  // (B,F) layout normalizes over the batch
    BnState st2 = make_bn_state(3);
    CHECK(gradcheck(
              [&] {
                  BnState s = make_bn_state(3);
                  FwdCtx ctx{Mode::train, nullptr};
                  std::mt19937_64 wr(3);
                  return wsum(batchnorm(x2, g, be, s, ctx), wr);
              },
              {x2, g, be}) < kTol);
}

TEST_CASE("broadcast adds and outer products backprop correctly") {
    std::mt19937_64 rng(108);
    Tensor x = randleaf({2, 3, 4}, rng);
    Tensor v = randleaf({3, 4}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(add_broadcast_rows(x, v), r); },
                    {x, v}) < kTol);

    Tensor f = randleaf({2, 3, 5}, rng);
    Tensor w = randleaf({2, 5}, rng);
    CHECK(gradcheck(
              [&] { std::mt19937_64 r(2); return wsum(add_broadcast_over_rows(f, w), r); },
              {f, w}) < kTol);

    Tensor a = randleaf({2, 3}, rng);
    Tensor u = randleaf({4}, rng);
    CHECK(gradcheck([&] { std::mt19937_64 r(3); return wsum(outer_rows(a, u), r); }, {a, u}) <
          kTol);
    CHECK(outer_rows(a, u).shape() == std::vector<int>{2, 3, 4});
}

TEST_CASE("losses match hand computation and backprop correctly") {
    std::mt19937_64 rng(109);
    Tensor a = randleaf({2, 3}, rng);
    Tensor b = randleaf({2, 3}, rng);
    double want = 0.0;
    for (long i = 0; i < a.size(); ++i) want += std::abs(a.data()[i] - b.data()[i]);
    want /= static_cast<double>(a.size());
    CHECK(l1_loss(a, b).item() == doctest::Approx(want).epsilon(1e-12));
    CHECK(gradcheck([&] { return l1_loss(a, b); }, {a, b}) < kTol);

    Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 0.5, -0.5, 0.25, 1.5}, true);
    const std::vector<int> labels{1, 2};
    double ce = 0.0;
    for (int r = 0; r < 2; ++r) {
        double z = 0.0;
        for (int c = 0; c < 3; ++c) z += std::exp(logits.data()[r * 3 + c]);
        ce += -std::log(std::exp(logits.data()[r * 3 + labels[r]]) / z);
    }
    ce /= 2.0;
    CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx(ce).epsilon(1e-12));
    CHECK(gradcheck([&] { return softmax_cross_entropy(logits, labels); }, {logits}) < kTol);
}

TEST_CASE("token assembly scatters visible tokens and fills masked slots") {
    std::mt19937_64 rng(110);
    Tensor vis = randleaf({2, 2, 3}, rng);
    Tensor mask = randleaf({3}, rng);
    const std::vector<int> pos{0, 3};

    Tensor out = assemble_tokens(vis, mask, pos, 5);
    REQUIRE(out.shape() == std::vector<int>{2, 5, 3});
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 5; ++p)
            for (int e = 0; e < 3; ++e) {
                const double got = out.data()[(b * 5 + p) * 3 + e];
                if (p == 0)
                    CHECK(got == vis.data()[(b * 2 + 0) * 3 + e]);
                else if (p == 3)
                    CHECK(got == vis.data()[(b * 2 + 1) * 3 + e]);
                else
                    CHECK(got == mask.data()[e]);
            }
    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(assemble_tokens(vis, mask, pos, 5), r); },
                    {vis, mask}) < kTol);
}

TEST_CASE("patch pixels tile back into the padded grid") {
    std::mt19937_64 rng(111);
    Tensor px = randleaf({1, 6, 4}, rng);  // 2x3 patch grid of 2x2 patches

    Tensor grid = patches_to_grid(px, 2, 3, 2, 2);
    REQUIRE(grid.shape() == std::vector<int>{1, 4, 6});
    for (int p = 0; p < 6; ++p) {
        const int pr = p / 3, pc = p % 3;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                CHECK(grid.data()[(pr * 2 + i) * 6 + pc * 2 + j] ==
                      px.data()[p * 4 + i * 2 + j]);
    }
    CHECK(gradcheck([&] { std::mt19937_64 r(1); return wsum(patches_to_grid(px, 2, 3, 2, 2), r); },
                    {px}) < kTol);
}

TEST_CASE("backward rejects non-scalar and graph-free outputs") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("detached copies share values but not the graph") {
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    Tensor d = x.detached_copy();
    CHECK(d.data() == x.data());
    CHECK_FALSE(d.requires_grad());
    d.data()[0] = 9.0;
    CHECK(x.data()[0] == 1.0);
}
