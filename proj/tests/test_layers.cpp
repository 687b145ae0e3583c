#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sigsiam/layers.hpp"
#include "sigsiam/params.hpp"
#include "support/oracles.hpp"

using namespace sigsiam;
using sigsiam::testing::conv_oracle;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Central differences of a scalar function over every coordinate of `x`.
std::vector<double> numeric_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                 double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(Activation, ReluAndSigmoidValues) {
  EXPECT_EQ(relu(-3.0), 0.0);
  EXPECT_EQ(relu(2.0), 2.0);
  EXPECT_EQ(relu_derivative(0.0), 0.0);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(sigmoid_derivative(0.0), 0.25);
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
  EXPECT_TRUE(std::isfinite(sigmoid(800.0)));
}

TEST(Activation, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (double x : random_vector(200, rng, -6.0, 6.0)) {
    const double h = 1e-5;
    const double num = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h);
    EXPECT_LT(rel_err(sigmoid_derivative(x), num), 1e-6);
    EXPECT_LT(rel_err(activation_derivative_from_output(Activation::sigmoid, sigmoid(x)), num), 1e-6);
    if (std::abs(x) > 1e-3) {
      const double rnum = (relu(x + h) - relu(x - h)) / (2 * h);
      EXPECT_LT(rel_err(relu_derivative(x), rnum), 1e-6);
    }
  }
}

TEST(Conv1d, SameLengthOutputForBranchShape) {
  std::mt19937_64 rng(1);
  const auto x = random_vector(100, rng);
  const auto k = random_vector(16 * 3, rng);
  const std::vector<double> b(16, 0.0);
  const auto y = conv1d_forward(Tensor2::row(x), k, b, 16);
  EXPECT_EQ(y.channels, 16u);
  EXPECT_EQ(y.length, 100u);
}

TEST(Conv1d, ZeroInputGivesBias) {
  const Tensor2 x(2, 6, 0.0);
  std::vector<double> k(3 * 2 * 3, 0.7);
  const std::vector<double> b{0.5, -1.0, 2.0};
  const auto y = conv1d_forward(x, k, b, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < 6; ++p) EXPECT_EQ(y.at(c, p), b[c]);
  }
}

TEST(Conv1d, HandComputedSlidingProduct) {
  const auto x = Tensor2::row(std::vector<double>{1, 2, 3, 4, 5});
  const std::vector<double> k{1, 0, -1};
  const std::vector<double> b{0};
  const auto y = conv1d_forward(x, k, b, 1);
  const std::vector<double> expected{-2, -2, -2, -2, 4};
  EXPECT_EQ(y.data, expected);
  EXPECT_EQ(conv_oracle(x, k, b, 1, 3).data, expected);
}

TEST(Conv1d, MatchesLoopOracleOnRandomShapes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> ch(1, 5), len(1, 30), wid(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t in_ch = ch(rng), out_ch = ch(rng), l = len(rng), w = 2 * wid(rng) + 1;
    Tensor2 x(in_ch, l, random_vector(in_ch * l, rng));
    const auto k = random_vector(out_ch * in_ch * w, rng);
    const auto b = random_vector(out_ch, rng);
    const auto y = conv1d_forward(x, k, b, out_ch, w);
    const auto o = conv_oracle(x, k, b, out_ch, w);
    for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_LE(rel_err(y.data[i], o.data[i]), 1e-12);
  }
}

TEST(Conv1d, ShapeMismatchThrows) {
  const Tensor2 x(2, 5);
  const std::vector<double> k(3, 0.0);  // one input channel only
  const std::vector<double> b(1, 0.0);
  EXPECT_THROW(conv1d_forward(x, k, b, 1), ConfigError);
  const std::vector<double> k2(2 * 3, 0.0);
  EXPECT_THROW(conv1d_backward(x, k2, 1, 3, Tensor2(1, 4)), ConfigError);
}

TEST(Conv1d, BackwardZeroUpstreamAndBiasIdentity) {
  std::mt19937_64 rng(5);
  Tensor2 x(2, 7, random_vector(14, rng));
  const auto k = random_vector(3 * 2 * 3, rng);
  const auto zero = conv1d_backward(x, k, 3, 3, Tensor2(3, 7));
  for (double v : zero.d_kernels) EXPECT_EQ(v, 0.0);
  for (double v : zero.d_bias) EXPECT_EQ(v, 0.0);
  for (double v : zero.d_input.data) EXPECT_EQ(v, 0.0);

  Tensor2 up(3, 7, random_vector(21, rng));
  const auto g = conv1d_backward(x, k, 3, 3, up);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < 7; ++p) s += up.at(c, p);
    EXPECT_NEAR(g.d_bias[c], s, 1e-12);
  }
}

TEST(Conv1d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor2 x(1, 7, random_vector(7, rng));
  const auto k = random_vector(2 * 3, rng);
  const auto b = random_vector(2, rng);
  const Tensor2 up(2, 7, random_vector(14, rng));
  auto loss = [&](const Tensor2& in, const std::vector<double>& kk, const std::vector<double>& bb) {
    const auto y = conv1d_forward(in, kk, bb, 2);
    return std::inner_product(y.data.begin(), y.data.end(), up.data.begin(), 0.0);
  };
  const auto g = conv1d_backward(x, k, 2, 3, up);
  const auto nk = numeric_grad(k, [&](const auto& kk) { return loss(x, kk, b); });
  const auto nb = numeric_grad(b, [&](const auto& bb) { return loss(x, k, bb); });
  const auto nx = numeric_grad(x.data, [&](const auto& xx) { return loss(Tensor2(1, 7, xx), k, b); });
  for (std::size_t i = 0; i < nk.size(); ++i) EXPECT_LT(rel_err(g.d_kernels[i], nk[i]), 1e-5);
  for (std::size_t i = 0; i < nb.size(); ++i) EXPECT_LT(rel_err(g.d_bias[i], nb[i]), 1e-5);
  for (std::size_t i = 0; i < nx.size(); ++i) EXPECT_LT(rel_err(g.d_input.data[i], nx[i]), 1e-5);
}

TEST(MaxPool, BranchShapes) {
  EXPECT_EQ(maxpool1d_forward(Tensor2(16, 100)).output.length, 50u);
  EXPECT_EQ(maxpool1d_forward(Tensor2(16, 50)).output.length, 25u);
  EXPECT_EQ(pooled_length(47), 24u);
  EXPECT_EQ(pooled_length(24), 12u);
}

TEST(MaxPool, CeilModeOddLength) {
  const auto r = maxpool1d_forward(Tensor2::row(std::vector<double>{3, 1, 4, 1, 5}));
  EXPECT_EQ(r.output.data, (std::vector<double>{3, 4, 5}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  const Tensor2 x(2, 5, std::vector<double>{3, 1, 4, 1, 5, -1, -2, 0, 7, 6});
  const auto r = maxpool1d_forward(x);
  const Tensor2 up(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto d = maxpool1d_backward(up, r.argmax, 2, 5);
  EXPECT_EQ(d.data, (std::vector<double>{1, 0, 2, 0, 3, 4, 0, 0, 5, 6}));
}

TEST(Dense, ShapesIdentityAndSigmoidAtZero) {
  std::mt19937_64 rng(2);
  const auto x = random_vector(400, rng);
  EXPECT_EQ(dense_forward(x, std::vector<double>(36 * 400, 0.01), std::vector<double>(36, 0.0),
                          Activation::sigmoid)
                .size(),
            36u);

  std::vector<double> eye(9, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const std::vector<double> v{0.3, -2.0, 5.0};
  EXPECT_EQ(dense_forward(v, eye, std::vector<double>(3, 0.0), Activation::identity), v);
  for (double y : dense_forward(v, std::vector<double>(9, 0.0), std::vector<double>(3, 0.0),
                                Activation::sigmoid)) {
    EXPECT_EQ(y, 0.5);
  }
  EXPECT_THROW(dense_forward(v, std::vector<double>(8, 0.0), std::vector<double>(3, 0.0),
                             Activation::identity),
               ConfigError);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (auto act : {Activation::sigmoid, Activation::identity, Activation::relu}) {
    const auto x = random_vector(5, rng);
    const auto w = random_vector(4 * 5, rng);
    const auto b = random_vector(4, rng);
    const auto up = random_vector(4, rng);
    auto loss = [&](const std::vector<double>& xx, const std::vector<double>& ww,
                    const std::vector<double>& bb) {
      const auto y = dense_forward(xx, ww, bb, act);
      return std::inner_product(y.begin(), y.end(), up.begin(), 0.0);
    };
    const auto y = dense_forward(x, w, b, act);
    const auto g = dense_backward(x, w, y, up, act);
    const auto nw = numeric_grad(w, [&](const auto& ww) { return loss(x, ww, b); });
    const auto nx = numeric_grad(x, [&](const auto& xx) { return loss(xx, w, b); });
    const auto nb = numeric_grad(b, [&](const auto& bb) { return loss(x, w, bb); });
    for (std::size_t i = 0; i < nw.size(); ++i) EXPECT_LT(rel_err(g.d_weights[i], nw[i]), 1e-5);
    for (std::size_t i = 0; i < nx.size(); ++i) EXPECT_LT(rel_err(g.d_input[i], nx[i]), 1e-5);
    for (std::size_t i = 0; i < nb.size(); ++i) EXPECT_LT(rel_err(g.d_bias[i], nb[i]), 1e-5);
  }
}

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_vector(50, rng);
  EXPECT_EQ(dropout_forward(x, 0.5, Mode::eval, rng).output, x);
  EXPECT_EQ(dropout_forward(x, 0.0, Mode::train, rng).output, x);
  EXPECT_EQ(dropout_forward(x, 0.0, Mode::eval, rng).output, x);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  std::mt19937_64 rng(20240601);
  const std::vector<double> ones(100000, 1.0);
  const auto r = dropout_forward(ones, 0.5, Mode::train, rng);
  const double mean = std::accumulate(r.output.begin(), r.output.end(), 0.0) / 1e5;
  EXPECT_GE(mean, 0.98);
  EXPECT_LE(mean, 1.02);
  for (double v : r.output) EXPECT_TRUE(v == 0.0 || v == 2.0);
  EXPECT_EQ(dropout_backward(ones, r.mask), r.mask);
}

TEST(Dropout, RateOutsideRangeThrows) {
  std::mt19937_64 rng(1);
  const std::vector<double> x(3, 1.0);
  EXPECT_THROW(dropout_forward(x, 1.0, Mode::train, rng), ConfigError);
  EXPECT_THROW(dropout_forward(x, -0.1, Mode::train, rng), ConfigError);
}

namespace {

Batch random_batch(std::size_t n, std::size_t f, std::mt19937_64& rng) {
  Batch b(n);
  for (auto& row : b) row = random_vector(f, rng, -3.0, 3.0);
  return b;
}

}  // namespace

TEST(BatchNorm, TrainModeStandardizes) {
  std::mt19937_64 rng(4);
  const auto batch = random_batch(10, 36, rng);
  const std::vector<double> gamma(36, 1.0), beta(36, 0.0), rm(36, 0.0), rv(36, 1.0);
  const auto r = batchnorm_forward(batch, gamma, beta, rm, rv, Mode::train);
  for (std::size_t j = 0; j < 36; ++j) {
    double m = 0.0, v = 0.0;
    for (const auto& row : r.output) m += row[j];
    m /= 10.0;
    for (const auto& row : r.output) v += (row[j] - m) * (row[j] - m);
    v /= 10.0;
    EXPECT_NEAR(m, 0.0, 1e-6);
    // epsilon shrinks the variance slightly below one
    EXPECT_NEAR(v, 1.0, 1e-5 / (r.cache.batch_var[j]) + 1e-6);
  }
}

TEST(BatchNorm, ConstantBatchGivesBeta) {
  const Batch batch(4, std::vector<double>{2.0, -1.0, 7.0});
  const std::vector<double> gamma{1.5, 2.0, -1.0}, beta{0.1, 0.2, 0.3}, rm(3, 0.0), rv(3, 1.0);
  const auto r = batchnorm_forward(batch, gamma, beta, rm, rv, Mode::train);
  for (const auto& row : r.output) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(row[j], beta[j]);
  }
}

TEST(BatchNorm, SingleSampleTrainBatchThrows) {
  const Batch batch(1, std::vector<double>{1.0, 2.0});
  const std::vector<double> g(2, 1.0), b(2, 0.0), rm(2, 0.0), rv(2, 1.0);
  EXPECT_THROW(batchnorm_forward(batch, g, b, rm, rv, Mode::train), TrainingError);
  EXPECT_NO_THROW(batchnorm_forward(batch, g, b, rm, rv, Mode::eval));
}

TEST(BatchNorm, EvalModeUsesRunningStats) {
  const Batch batch{{3.0, 0.0}};
  const std::vector<double> g{2.0, 1.0}, b{0.5, 0.0}, rm{1.0, 0.0}, rv{4.0, 1.0};
  const auto r = batchnorm_forward(batch, g, b, rm, rv, Mode::eval, {0.9, 0.0 + 1e-5});
  EXPECT_NEAR(r.output[0][0], 2.0 * (3.0 - 1.0) / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (auto mode : {Mode::train, Mode::eval}) {
    const std::size_t n = 5, f = 4;
    const auto batch = random_batch(n, f, rng);
    const auto gamma = random_vector(f, rng, 0.5, 1.5);
    const auto beta = random_vector(f, rng);
    const auto rm = random_vector(f, rng);
    const auto rv = random_vector(f, rng, 0.5, 2.0);
    const auto up = random_batch(n, f, rng);
    auto loss = [&](const Batch& x, const std::vector<double>& g, const std::vector<double>& b) {
      const auto r = batchnorm_forward(x, g, b, rm, rv, mode);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) s += r.output[i][j] * up[i][j];
      }
      return s;
    };
    const auto r = batchnorm_forward(batch, gamma, beta, rm, rv, mode);
    const auto g = batchnorm_backward(up, gamma, r.cache);
    std::vector<double> flat;
    for (const auto& row : batch) flat.insert(flat.end(), row.begin(), row.end());
    const auto nx = numeric_grad(flat, [&](const std::vector<double>& v) {
      Batch x(n);
      for (std::size_t i = 0; i < n; ++i) x[i].assign(v.begin() + i * f, v.begin() + (i + 1) * f);
      return loss(x, gamma, beta);
    });
    const auto ng = numeric_grad(gamma, [&](const auto& gg) { return loss(batch, gg, beta); });
    const auto nb = numeric_grad(beta, [&](const auto& bb) { return loss(batch, gamma, bb); });
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) EXPECT_LT(rel_err(g.d_input[i][j], nx[i * f + j]), 1e-4);
    }
    for (std::size_t j = 0; j < f; ++j) {
      EXPECT_LT(rel_err(g.d_gamma[j], ng[j]), 1e-4);
      EXPECT_LT(rel_err(g.d_beta[j], nb[j]), 1e-4);
    }
  }
}

TEST(BatchNorm, RunningStatsMomentumUpdate) {
  const Batch batch{{1.0}, {3.0}};
  const std::vector<double> g{1.0}, b{0.0};
  std::vector<double> rm{0.0}, rv{1.0};
  const auto r = batchnorm_forward(batch, g, b, rm, rv, Mode::train);
  update_running_stats(rm, rv, r.cache, 2);
  EXPECT_NEAR(rm[0], 0.1 * 2.0, 1e-15);
  // unbiased variance of {1, 3} is 2
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 2.0, 1e-15);
}

TEST(Lrn, ZeroAlphaDividesByKPowerBeta) {
  const std::vector<double> x{1.0, -2.0, 3.0, 0.5};
  LrnConfig cfg;
  cfg.alpha = 0.0;
  const auto y = lrn_forward(x, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] / std::pow(2.0, 0.75), 1e-15);
}

TEST(Lrn, ZeroInputStaysZero) {
  for (double v : lrn_forward(std::vector<double>(7, 0.0))) EXPECT_EQ(v, 0.0);
  for (double v : lrn_forward(Tensor2(4, 3)).data) EXPECT_EQ(v, 0.0);
}

TEST(Lrn, SingleElementFormula) {
  LrnConfig cfg;
  cfg.n = 1;
  cfg.alpha = 0.3;
  for (double v : {-4.0, -0.5, 0.0, 1.25, 9.0}) {
    const double expected = v / std::pow(cfg.k + cfg.alpha * v * v, cfg.beta);
    EXPECT_NEAR(lrn_forward(std::vector<double>{v}, cfg)[0], expected, 1e-15);
  }
}

TEST(Lrn, EvenWindowThrows) {
  LrnConfig cfg;
  cfg.n = 4;
  EXPECT_THROW(lrn_forward(std::vector<double>{1.0}, cfg), ConfigError);
}

TEST(Lrn, ChannelWindowOnTensor) {
  // window across channels at each position
  LrnConfig cfg;
  cfg.n = 3;
  cfg.alpha = 0.5;
  Tensor2 x(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto y = lrn_forward(x, cfg);
  const double s0 = cfg.k + cfg.alpha * (1 * 1 + 3 * 3);
  EXPECT_NEAR(y.at(0, 0), 1.0 / std::pow(s0, cfg.beta), 1e-15);
  const double s1 = cfg.k + cfg.alpha * (2 * 2 + 4 * 4 + 6 * 6);
  EXPECT_NEAR(y.at(1, 1), 4.0 / std::pow(s1, cfg.beta), 1e-15);
}

TEST(Lrn, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  LrnConfig cfg;
  cfg.alpha = 0.2;  // large enough for the cross terms to matter
  const auto x = random_vector(9, rng, -2.0, 2.0);
  const auto up = random_vector(9, rng);
  const auto d = lrn_backward(x, up, cfg);
  const auto n = numeric_grad(x, [&](const std::vector<double>& v) {
    const auto y = lrn_forward(v, cfg);
    return std::inner_product(y.begin(), y.end(), up.begin(), 0.0);
  });
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_LT(rel_err(d[i], n[i]), 1e-6);

  const Tensor2 xt(5, 3, random_vector(15, rng, -2.0, 2.0));
  const Tensor2 upt(5, 3, random_vector(15, rng));
  const auto dt = lrn_backward(xt, upt, cfg);
  const auto nt = numeric_grad(xt.data, [&](const std::vector<double>& v) {
    const auto y = lrn_forward(Tensor2(5, 3, v), cfg);
    return std::inner_product(y.data.begin(), y.data.end(), upt.data.begin(), 0.0);
  });
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_LT(rel_err(dt.data[i], nt[i]), 1e-6);
}

TEST(Init, DeterministicAndInRange) {
  ArchSpec arch;
  InitSpec init;
  init.seed = 99;
  const auto a = init_params(arch, init);
  const auto b = init_params(arch, init);
  EXPECT_EQ(a, b);

  InitSpec narrow{0.25, 0.25 + 1e-9, 3};
  const auto c = init_params(arch, narrow);
  for (const auto& t : c.weights) {
    if (t.name == param_names::bn_gamma || t.name == param_names::bn_beta) continue;
    for (double v : t.values) {
      EXPECT_GE(v, narrow.low);
      EXPECT_LT(v, narrow.high);
    }
  }
  EXPECT_THROW(init_params(arch, InitSpec{0.1, 0.1, 0}), ConfigError);
}

TEST(Init, UniformSampleMeanNearZero) {
  ArchSpec arch;  // 100 inputs: about 16k kernel and bias values
  for (double half : {0.05, 0.5}) {
    const auto p = init_params(arch, InitSpec{-half, half, 2024});
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : p.weights) {
      if (t.name == param_names::bn_gamma || t.name == param_names::bn_beta) continue;
      for (double v : t.values) {
        if (n == 10000) break;
        sum += v;
        ++n;
      }
    }
    ASSERT_EQ(n, 10000u);
    EXPECT_LT(std::abs(sum / 1e4), 0.04 * half);
  }
}

TEST(Init, BranchParameterShapes) {
  ArchSpec arch;
  const auto p = make_param_layout(arch);
  EXPECT_EQ(arch.flatten_size(), 400u);
  EXPECT_EQ(p.at(param_names::dense1_kernel).shape, (std::vector<std::size_t>{36, 400}));
  arch.input_length = 47;
  EXPECT_EQ(arch.flatten_size(), 192u);
  EXPECT_EQ(p.find(param_names::head_kernel), nullptr);
  arch.head = HeadKind::bce;
  EXPECT_NE(make_param_layout(arch).find(param_names::head_kernel), nullptr);
}

TEST(MaxNorm, LeavesSmallGroupsAlone) {
  ParamSet p;
  auto& t = p.add("k", {2, 3}, true, Constraint::per_row);
  t.values = {1, 2, 2, 0, 0, 4};
  const auto before = p;
  apply_max_norm(p, 4.0);
  EXPECT_EQ(p, before);
}

TEST(MaxNorm, RescalesLargeRowToLimit) {
  ParamSet p;
  auto& t = p.add("k", {2, 2}, true, Constraint::per_row);
  t.values = {0, 8, 1, 1};
  apply_max_norm(p, 4.0);
  const auto& v = p.at("k").values;
  EXPECT_NEAR(std::hypot(v[0], v[1]), 4.0, 1e-9);
  EXPECT_EQ(v[1], 4.0);
  EXPECT_EQ(v[2], 1.0);
}

TEST(MaxNorm, RandomParamsWithinBoundAfterProjection) {
  ArchSpec arch;
  arch.head = HeadKind::bce;
  auto p = init_params(arch, InitSpec{-3.0, 3.0, 8}).weights;
  EXPECT_GT(max_group_norm(p), 4.0);
  apply_max_norm(p, 4.0);
  // exhaustive scan, independent of max_group_norm
  for (const auto& t : p) {
    if (t.constraint == Constraint::none) continue;
    const std::size_t g = t.constraint == Constraint::whole ? t.values.size() : t.values.size() / t.shape[0];
    for (std::size_t s = 0; s < t.values.size(); s += g) {
      double sq = 0.0;
      for (std::size_t i = s; i < s + g; ++i) sq += t.values[i] * t.values[i];
      EXPECT_LE(std::sqrt(sq), 4.0 + 1e-9) << t.name;
    }
  }
}
