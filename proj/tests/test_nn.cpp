#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sav/nn.hpp"
#include "testutil.hpp"

using namespace sav;
using savtest::random_tensor;

namespace {

// Naive convolution written the obvious way: loop every tap, bounds-check,
// no data reuse tricks. Used only as an oracle.
Tensor5<double> conv_oracle(const Tensor5<double>& x, const Tensor5<double>& w, const Tensor5<double>& b,
                            Shape3 dil) {
    int64_t KH = w.shape()[0], KW = w.shape()[1], KD = w.shape()[2], Ci = w.shape()[3], Co = w.shape()[4];
    int64_t ph = ((KH - 1) * dil[0] + 1) / 2, pw = ((KW - 1) * dil[1] + 1) / 2, pd = ((KD - 1) * dil[2] + 1) / 2;
    Tensor5<double> y(x.n(), x.h(), x.w(), x.d(), Co);
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t oh = 0; oh < x.h(); ++oh)
            for (int64_t ow = 0; ow < x.w(); ++ow)
                for (int64_t od = 0; od < x.d(); ++od)
                    for (int64_t co = 0; co < Co; ++co) {
                        double acc = b(0, 0, 0, 0, co);
                        for (int64_t kh = 0; kh < KH; ++kh)
                            for (int64_t kw = 0; kw < KW; ++kw)
                                for (int64_t kd = 0; kd < KD; ++kd) {
                                    int64_t ih = oh + kh * dil[0] - ph;
                                    int64_t iw = ow + kw * dil[1] - pw;
                                    int64_t id = od + kd * dil[2] - pd;
                                    if (ih < 0 || ih >= x.h() || iw < 0 || iw >= x.w() || id < 0 || id >= x.d())
                                        continue;
                                    for (int64_t ci = 0; ci < Ci; ++ci)
                                        acc += x(n, ih, iw, id, ci) * w(kh, kw, kd, ci, co);
                                }
                        y(n, oh, ow, od, co) = acc;
                    }
    return y;
}

using Fwd = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Central finite differences of L = sum(R .* f(inputs)) against tape grads.
void check_gradients(const Fwd& fwd, std::vector<Tensor5<double>> inputs, double tol = 1e-6, double h = 1e-6) {
    Rng rng(999);
    auto eval = [&](const std::vector<Tensor5<double>>& ins, Tensor5<double>* seed_out) {
        Graph<double> g(false);
        std::vector<Var<double>> vars;
        for (const auto& t : ins) vars.push_back(g.constant(t));
        Var<double> y = fwd(g, vars);
        if (seed_out && seed_out->size() == 0) {
            Rng srng(555);
            *seed_out = random_tensor<double>(y.value.shape()[0], y.value.shape()[1], y.value.shape()[2],
                                              y.value.shape()[3], y.value.shape()[4], srng);
        }
        double L = 0;
        const double* yp = y.value.data();
        const double* sp = seed_out->data();
        for (int64_t i = 0; i < y.value.size(); ++i) L += yp[i] * sp[i];
        return L;
    };

    Tensor5<double> seed;
    eval(inputs, &seed);

    // analytic grads
    Graph<double> g(true);
    std::vector<Var<double>> vars;
    for (size_t i = 0; i < inputs.size(); ++i) vars.push_back(g.param("in" + std::to_string(i), inputs[i].clone()));
    Var<double> y = fwd(g, vars);
    g.backward(y, seed);

    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        Tensor5<double> an = g.grad("in" + std::to_string(vi));
        ASSERT_EQ(an.size(), inputs[vi].size());
        double max_rel = 0;
        for (int64_t e = 0; e < inputs[vi].size(); ++e) {
            std::vector<Tensor5<double>> plus, minus;
            for (size_t k = 0; k < inputs.size(); ++k) {
                plus.push_back(inputs[k].clone());
                minus.push_back(inputs[k].clone());
            }
            plus[vi].data()[e] += h;
            minus[vi].data()[e] -= h;
            double fd = (eval(plus, &seed) - eval(minus, &seed)) / (2 * h);
            double a = an.data()[e];
            double rel = std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
            max_rel = std::max(max_rel, rel);
        }
        EXPECT_LT(max_rel, tol) << "input " << vi;
    }
}

}  // namespace

TEST(Graph, NonRecordingKeepsTapeEmpty) {
    Rng rng(1);
    Graph<float> g(false);
    auto x = g.constant(random_tensor<float>(1, 4, 4, 2, 3, rng));
    auto y = relu(g, x);
    EXPECT_EQ(g.node_count(), 0u);
    EXPECT_FALSE(y.tracked());
}

TEST(Graph, DuplicateParamNameThrows) {
    Graph<float> g;
    Tensor5<float> t(1, 1, 1, 1, 1);
    g.param("w", t);
    EXPECT_THROW(g.param("w", t), std::invalid_argument);
}

TEST(Graph, GradAccumulatesAcrossReuse) {
    // y = x + x via concat trick is awkward; use mul_broadcast(x, ones) twice
    // summed through concat then mean — simpler: two relus of the same param
    // feeding concat, every element positive so relu is identity.
    Graph<double> g;
    Rng rng(2);
    Tensor5<double> xv = random_tensor<double>(1, 2, 2, 2, 2, rng, 0.5, 1.5);
    auto x = g.param("x", xv);
    auto c = concat_c(g, relu(g, x), relu(g, x));
    Tensor5<double> seed(c.value.shape());
    seed.fill(1.0);
    g.backward(c, seed);
    Tensor5<double> gx = g.grad("x");
    for (int64_t i = 0; i < gx.size(); ++i) EXPECT_DOUBLE_EQ(gx.data()[i], 2.0);
}

TEST(Conv3d, MatchesNaiveOracle) {
    Rng rng(10);
    for (int trial = 0; trial < 6; ++trial) {
        int Ci = rng.uniform_int(1, 3), Co = rng.uniform_int(1, 4);
        Shape3 dil{1, 1, 1};
        int KH = 3, KW = 3, KD = trial % 2 ? 1 : 3;
        if (trial >= 4) dil = {2, 2, 1};  // dilated variant
        auto x = random_tensor<double>(2, 6, 5, 4, Ci, rng);
        auto w = random_tensor<double>(KH, KW, KD, Ci, Co, rng);
        auto b = random_tensor<double>(1, 1, 1, 1, Co, rng);
        Graph<double> g(false);
        auto y = conv3d(g, g.constant(x), g.constant(w), g.constant(b), dil);
        auto ref = conv_oracle(x, w, b, dil);
        ASSERT_TRUE(y.value.same_shape(ref));
        EXPECT_LT(savtest::max_abs_diff(y.value, ref), 1e-12) << "trial " << trial;
    }
}

TEST(Conv3d, EvenKernelPadsLeadingHeavy) {
    // kernel 14 with same padding: lead 7, trail 6. An impulse at the far
    // corner must still see the kernel's first tap.
    Rng rng(11);
    auto x = random_tensor<double>(1, 16, 1, 1, 1, rng);
    auto w = random_tensor<double>(14, 1, 1, 1, 1, rng);
    Tensor5<double> b(1, 1, 1, 1, 1);
    Graph<double> g(false);
    auto y = conv3d(g, g.constant(x), g.constant(w), g.constant(b));
    ASSERT_EQ(y.value.shape()[1], 16);
    // manual value at output 0: taps kh with ih = 0 + kh - 7 in range
    double acc = 0;
    for (int kh = 0; kh < 14; ++kh) {
        int ih = 0 + kh - 7;
        if (ih >= 0 && ih < 16) acc += x(0, ih, 0, 0, 0) * w(kh, 0, 0, 0, 0);
    }
    EXPECT_NEAR(y.value(0, 0, 0, 0, 0), acc, 1e-12);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
    Rng rng(12);
    std::vector<Tensor5<double>> ins{random_tensor<double>(1, 4, 4, 3, 2, rng), random_tensor<double>(3, 3, 1, 2, 3, rng),
                                     random_tensor<double>(1, 1, 1, 1, 3, rng)};
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return conv3d(g, v[0], v[1], v[2]); },
                    ins);
}

TEST(Conv3d, DilatedGradients) {
    Rng rng(13);
    std::vector<Tensor5<double>> ins{random_tensor<double>(1, 5, 5, 2, 1, rng), random_tensor<double>(3, 3, 3, 1, 2, rng),
                                     random_tensor<double>(1, 1, 1, 1, 2, rng)};
    check_gradients(
        [](Graph<double>& g, const std::vector<Var<double>>& v) { return conv3d(g, v[0], v[1], v[2], {2, 2, 1}); },
        ins);
}

TEST(Tconv3d, UpsamplesByKernelAndChecksGrads) {
    Rng rng(14);
    auto x = random_tensor<double>(1, 3, 3, 2, 2, rng);
    auto w = random_tensor<double>(2, 2, 1, 2, 3, rng);
    auto b = random_tensor<double>(1, 1, 1, 1, 3, rng);
    Graph<double> g(false);
    auto y = tconv3d(g, g.constant(x), g.constant(w), g.constant(b));
    EXPECT_EQ(y.value.shape()[1], 6);
    EXPECT_EQ(y.value.shape()[2], 6);
    EXPECT_EQ(y.value.shape()[3], 2);
    EXPECT_EQ(y.value.shape()[4], 3);
    // kernel==stride: each output voxel gets exactly one tap
    double expect = b(0, 0, 0, 0, 1);
    for (int ci = 0; ci < 2; ++ci) expect += x(0, 1, 2, 1, ci) * w(1, 0, 0, ci, 1);
    EXPECT_NEAR(y.value(0, 3, 4, 1, 1), expect, 1e-12);

    std::vector<Tensor5<double>> ins{x, w, b};
    check_gradients([](Graph<double>& g2, const std::vector<Var<double>>& v) { return tconv3d(g2, v[0], v[1], v[2]); },
                    ins);
}

TEST(Maxpool3d, ForwardTiesAndGrads) {
    Tensor5<double> x(1, 2, 2, 2, 1);
    x.fill(3.0);  // all ties: first in scan order wins
    Graph<double> g;
    auto xv = g.param("x", x);
    auto y = maxpool3d(g, xv, {2, 2, 2});
    EXPECT_EQ(y.value.size(), 1);
    EXPECT_DOUBLE_EQ(y.value(0, 0, 0, 0, 0), 3.0);
    Tensor5<double> seed(1, 1, 1, 1, 1);
    seed.fill(1.0);
    g.backward(y, seed);
    Tensor5<double> gx = g.grad("x");
    EXPECT_DOUBLE_EQ(gx(0, 0, 0, 0, 0), 1.0);  // scan-order winner
    double total = 0;
    for (int64_t i = 0; i < gx.size(); ++i) total += gx.data()[i];
    EXPECT_DOUBLE_EQ(total, 1.0);

    Rng rng(15);
    std::vector<Tensor5<double>> ins{random_tensor<double>(1, 4, 4, 2, 3, rng)};
    check_gradients([](Graph<double>& g2, const std::vector<Var<double>>& v) { return maxpool3d(g2, v[0], {2, 2, 1}); },
                    ins);
}

TEST(Maxpool3d, IndivisibleExtentThrows) {
    Graph<double> g(false);
    Tensor5<double> x(1, 5, 4, 2, 1);
    EXPECT_THROW(maxpool3d(g, g.constant(x), {2, 2, 1}), std::invalid_argument);
}

TEST(GroupNorm, NormalizesPerGroupAndChecksGrads) {
    Rng rng(16);
    auto x = random_tensor<double>(2, 3, 3, 2, 4, rng, -2, 5);
    Tensor5<double> gamma(1, 1, 1, 1, 4), beta(1, 1, 1, 1, 4);
    gamma.fill(1.0);
    Graph<double> g(false);
    auto y = group_norm(g, g.constant(x), g.constant(gamma), g.constant(beta), 2);
    // each (sample, group) slice of the output has mean ~0, var ~1
    for (int64_t n = 0; n < 2; ++n)
        for (int grp = 0; grp < 2; ++grp) {
            double s = 0, s2 = 0;
            int64_t m = 0;
            for (int64_t h = 0; h < 3; ++h)
                for (int64_t w = 0; w < 3; ++w)
                    for (int64_t d = 0; d < 2; ++d)
                        for (int64_t c = grp * 2; c < grp * 2 + 2; ++c) {
                            double v = y.value(n, h, w, d, c);
                            s += v;
                            s2 += v * v;
                            ++m;
                        }
            EXPECT_NEAR(s / m, 0.0, 1e-10);
            EXPECT_NEAR(s2 / m - (s / m) * (s / m), 1.0, 1e-4);  // eps-limited
        }

    Rng r2(17);
    std::vector<Tensor5<double>> ins{random_tensor<double>(1, 3, 2, 2, 4, r2), random_tensor<double>(1, 1, 1, 1, 4, r2),
                                     random_tensor<double>(1, 1, 1, 1, 4, r2)};
    check_gradients(
        [](Graph<double>& g2, const std::vector<Var<double>>& v) { return group_norm(g2, v[0], v[1], v[2], 2); }, ins,
        1e-5);
}

TEST(GroupNorm, GroupsMustDivideChannels) {
    Graph<double> g(false);
    Tensor5<double> x(1, 2, 2, 2, 6), gamma(1, 1, 1, 1, 6), beta(1, 1, 1, 1, 6);
    EXPECT_THROW(group_norm(g, g.constant(x), g.constant(gamma), g.constant(beta), 4), std::invalid_argument);
}

TEST(BatchNorm, TrainingUpdatesRunningStatsEvalUsesThem) {
    Rng rng(18);
    auto x = random_tensor<double>(2, 3, 3, 2, 2, rng, 1, 3);
    Tensor5<double> gamma(1, 1, 1, 1, 2), beta(1, 1, 1, 1, 2);
    gamma.fill(1.0);
    Tensor5<double> rm(1, 1, 1, 1, 2), rv(1, 1, 1, 1, 2);
    rv.fill(1.0);
    Graph<double> g(false);
    auto y = batch_norm(g, g.constant(x), g.constant(gamma), g.constant(beta), rm, rv, true);
    // batch output standardized per channel
    for (int64_t c = 0; c < 2; ++c) {
        double s = 0;
        int64_t m = 0;
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t h = 0; h < 3; ++h)
                for (int64_t w = 0; w < 3; ++w)
                    for (int64_t d = 0; d < 2; ++d) {
                        s += y.value(n, h, w, d, c);
                        ++m;
                    }
        EXPECT_NEAR(s / m, 0.0, 1e-10);
    }
    // running mean moved toward batch mean with momentum 0.1
    double batch_mean = 0;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t h = 0; h < 3; ++h)
            for (int64_t w = 0; w < 3; ++w)
                for (int64_t d = 0; d < 2; ++d) batch_mean += x(n, h, w, d, 0);
    batch_mean /= 36.0;
    EXPECT_NEAR(rm(0, 0, 0, 0, 0), 0.1 * batch_mean, 1e-12);

    // eval mode: gradient is linear in x, FD must agree
    std::vector<Tensor5<double>> ins{x, gamma.clone(), beta.clone()};
    Tensor5<double> frm = rm.clone(), frv = rv.clone();
    check_gradients(
        [&frm, &frv](Graph<double>& g2, const std::vector<Var<double>>& v) {
            Tensor5<double> m = frm.clone(), va = frv.clone();
            return batch_norm(g2, v[0], v[1], v[2], m, va, false);
        },
        ins);
}

TEST(BatchNorm, TrainingGradientsMatchFiniteDifferences) {
    Rng rng(19);
    std::vector<Tensor5<double>> ins{random_tensor<double>(2, 2, 2, 2, 2, rng, -1, 4),
                                     random_tensor<double>(1, 1, 1, 1, 2, rng),
                                     random_tensor<double>(1, 1, 1, 1, 2, rng)};
    check_gradients(
        [](Graph<double>& g2, const std::vector<Var<double>>& v) {
            Tensor5<double> rm(1, 1, 1, 1, 2), rv(1, 1, 1, 1, 2);
            rv.fill(1.0);
            return batch_norm(g2, v[0], v[1], v[2], rm, rv, true);
        },
        ins, 1e-5);
}

TEST(Pointwise, ReluSigmoidGrads) {
    Rng rng(20);
    // keep |x| > 0.1 so FD never straddles the relu kink
    Tensor5<double> x = random_tensor<double>(1, 3, 3, 2, 2, rng, 0.1, 2.0);
    for (int64_t i = 0; i < x.size(); ++i)
        if (i % 2) x.data()[i] = -x.data()[i];
    std::vector<Tensor5<double>> ins{x};
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return relu(g, v[0]); }, ins);
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return sigmoid(g, v[0]); }, ins);

    Graph<double> g(false);
    auto y = sigmoid(g, g.constant(x));
    for (int64_t i = 0; i < y.value.size(); ++i) {
        EXPECT_GT(y.value.data()[i], 0.0);
        EXPECT_LT(y.value.data()[i], 1.0);
    }
}

TEST(ChannelOps, MeanMaxConcatBroadcastGrads) {
    Rng rng(21);
    // distinct values so channel_max has no ties anywhere
    Tensor5<double> x(1, 3, 2, 2, 3);
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = 0.37 * double(i) - 5.0;
    std::vector<Tensor5<double>> one{x};
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return channel_mean(g, v[0]); }, one);
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return channel_max(g, v[0]); }, one);

    Graph<double> gg(false);
    auto mean = channel_mean(gg, gg.constant(x));
    auto mx = channel_max(gg, gg.constant(x));
    EXPECT_EQ(mean.value.shape()[4], 1);
    double m0 = (x(0, 0, 0, 0, 0) + x(0, 0, 0, 0, 1) + x(0, 0, 0, 0, 2)) / 3.0;
    EXPECT_NEAR(mean.value(0, 0, 0, 0, 0), m0, 1e-12);
    EXPECT_NEAR(mx.value(0, 1, 1, 1, 0),
                std::max({x(0, 1, 1, 1, 0), x(0, 1, 1, 1, 1), x(0, 1, 1, 1, 2)}), 1e-12);

    std::vector<Tensor5<double>> two{random_tensor<double>(1, 2, 2, 2, 2, rng), random_tensor<double>(1, 2, 2, 2, 3, rng)};
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return concat_c(g, v[0], v[1]); }, two);

    std::vector<Tensor5<double>> fm{random_tensor<double>(1, 2, 2, 2, 4, rng), random_tensor<double>(1, 2, 2, 2, 1, rng)};
    check_gradients([](Graph<double>& g, const std::vector<Var<double>>& v) { return mul_broadcast(g, v[0], v[1]); },
                    fm);
}

TEST(ChannelOps, ConcatRequiresMatchingSpatialShape) {
    Graph<double> g(false);
    Tensor5<double> a(1, 2, 2, 2, 1), b(1, 2, 3, 2, 1);
    EXPECT_THROW(concat_c(g, g.constant(a), g.constant(b)), std::invalid_argument);
}
