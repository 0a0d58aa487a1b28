#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "retina/autodiff/gradcheck.hpp"
#include "retina/autodiff/ops.hpp"
#include "retina/common/error.hpp"

using namespace retina;

namespace {

// Fixed random projection so a tensor-valued op becomes a scalar loss whose
// gradient exercises every output element.
Var project(Tape& tape, const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = tape.constant(Tensor::randn(y.shape(), rng));
  return ad::sum(ad::mul(y, w));
}

}  // namespace

TEST(Conv2d, UnitKernelScalesInput) {
  Tape tape;
  Var x = tape.constant(Tensor::ones({1, 1, 4, 4}));
  Var k = tape.constant(Tensor({1, 1, 1, 1}, 2.0));
  Var y = ad::conv2d(x, k, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (double v : y.value().data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, StrideTwoHalvesExtent) {
  Tape tape;
  Var x = tape.constant(Tensor::ones({1, 1, 4, 4}));
  Var k = tape.constant(Tensor::ones({1, 1, 2, 2}));
  Var y = ad::conv2d(x, k, 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.value().data()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, OutputShapeFormula) {
  EXPECT_EQ(ad::conv2d_output_shape({2, 3, 56, 56}, {8, 3, 3, 3}, {4, 4, 1, 1}), (Shape{2, 8, 14, 14}));
  EXPECT_EQ(ad::conv2d_output_shape({1, 1, 7, 9}, {1, 1, 1, 3}, {1, 1, 0, 1}), (Shape{1, 1, 7, 9}));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  Tape tape;
  Var x = tape.constant(Tensor::ones({1, 2, 4, 4}));
  Var k = tape.constant(Tensor::ones({1, 3, 3, 3}));
  EXPECT_THROW(ad::conv2d(x, k, 1, 1), DimensionError);
}

TEST(Conv2d, ZeroStrideIsRejected) {
  Tape tape;
  Var x = tape.constant(Tensor::ones({1, 1, 4, 4}));
  Var k = tape.constant(Tensor::ones({1, 1, 3, 3}));
  EXPECT_THROW(ad::conv2d(x, k, 0, 1), ConfigError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  const Tensor input = Tensor::randn({1, 2, 5, 5}, rng);
  const Tensor kernel = Tensor::randn({3, 2, 3, 3}, rng);
  for (std::size_t stride : {1, 2}) {
    auto wrt_input = finite_diff_check(
        [&](Tape& t, const Var& x) {
          return project(t, ad::conv2d(x, t.constant(kernel), stride, 1), 11);
        },
        input);
    EXPECT_LE(wrt_input.max_relative_error, 1e-6) << "stride " << stride;
    auto wrt_kernel = finite_diff_check(
        [&](Tape& t, const Var& k) {
          return project(t, ad::conv2d(t.constant(input), k, stride, 1), 11);
        },
        kernel);
    EXPECT_LE(wrt_kernel.max_relative_error, 1e-6) << "stride " << stride;
  }
}

TEST(Conv2d, RectangularKernelGradient) {
  Rng rng(8);
  const Tensor input = Tensor::randn({2, 2, 5, 6}, rng);
  const Tensor kernel = Tensor::randn({2, 2, 1, 3}, rng);
  ad::Conv2dOptions opt{1, 2, 0, 1};
  auto r = finite_diff_check(
      [&](Tape& t, const Var& x) { return project(t, ad::conv2d(x, t.constant(kernel), opt), 3); }, input);
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Tape tape;
  Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensor b({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(same_values(ad::matmul(tape.constant(eye), tape.constant(b)).value(), b));

  Var y = ad::matmul(tape.constant(Tensor({2, 2}, {1, 2, 3, 4})), tape.constant(Tensor({2, 1}, {1, 1})));
  EXPECT_EQ(y.value().values(), (std::vector<double>{3, 7}));
}

TEST(Matmul, InnerMismatch) {
  Tape tape;
  EXPECT_THROW(ad::matmul(tape.constant(Tensor::ones({2, 3})), tape.constant(Tensor::ones({2, 3}))),
               DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Tensor a = Tensor::randn({4, 3}, rng);
  const Tensor b = Tensor::randn({3, 5}, rng);
  auto ra = finite_diff_check([&](Tape& t, const Var& x) { return project(t, ad::matmul(x, t.constant(b)), 5); }, a);
  auto rb = finite_diff_check([&](Tape& t, const Var& x) { return project(t, ad::matmul(t.constant(a), x), 5); }, b);
  EXPECT_LE(ra.max_relative_error, 1e-6);
  EXPECT_LE(rb.max_relative_error, 1e-6);
}

TEST(Elementwise, ReluDefinition) {
  Tape tape;
  Var x = tape.variable(Tensor({3}, {-1, 0, 2}));
  Var y = ad::relu(x);
  EXPECT_EQ(y.value().values(), (std::vector<double>{0, 0, 2}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(x.grad().values(), (std::vector<double>{0, 0, 1}));
}

TEST(Elementwise, ConcatChannelsShapeAndLayout) {
  Tape tape;
  Var a = tape.constant(Tensor({1, 2, 4, 4}, 1.0));
  Var b = tape.constant(Tensor({1, 3, 4, 4}, 2.0));
  const Var parts[] = {a, b};
  Var y = ad::concat_channels(parts);
  EXPECT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(y.value().at(0, 1, 3, 3), 1.0);
  EXPECT_EQ(y.value().at(0, 2, 0, 0), 2.0);
}

TEST(Elementwise, ConcatRejectsSpatialMismatch) {
  Tape tape;
  const Var parts[] = {tape.constant(Tensor::ones({1, 2, 4, 4})), tape.constant(Tensor::ones({1, 2, 3, 4}))};
  EXPECT_THROW(ad::concat_channels(parts), DimensionError);
}

TEST(Elementwise, AddShapeMismatch) {
  Tape tape;
  EXPECT_THROW(ad::add(tape.constant(Tensor::ones({2})), tape.constant(Tensor::ones({3}))), DimensionError);
}

TEST(Elementwise, MeanGradientIsOneOverN) {
  Rng rng(1);
  const Tensor x = Tensor::randn({2, 3, 2}, rng);
  Tape tape;
  Var v = tape.variable(x);
  tape.backward(ad::mean(v));
  const Tensor grad = v.grad();
  for (double g : grad.data()) EXPECT_DOUBLE_EQ(g, 1.0 / 12.0);
  auto r = finite_diff_check([](Tape&, const Var& in) { return ad::mean(in); }, x);
  EXPECT_LE(r.max_relative_error, 1e-9);
}

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  Tape tape;
  ad::BatchNormStats stats(2);
  Var x = tape.constant(Tensor({1, 2, 2, 2}, 3.0));
  Var y = ad::batch_norm(x, tape.constant(Tensor::ones({2})), tape.constant(Tensor::zeros({2})), stats,
                         Mode::train);
  for (double v : y.value().data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0.0);
  }
}

TEST(BatchNorm, BetaShiftsMean) {
  Rng rng(5);
  Tape tape;
  ad::BatchNormStats stats(3);
  Var x = tape.constant(Tensor::randn({4, 3, 3, 3}, rng));
  Var y = ad::batch_norm(x, tape.constant(Tensor::ones({3})), tape.constant(Tensor({3}, 5.0)), stats,
                         Mode::train);
  double total = 0.0;
  for (double v : y.value().data()) total += v;
  EXPECT_NEAR(total / static_cast<double>(y.value().size()), 5.0, 1e-12);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  Tape tape;
  ad::BatchNormStats stats(1);
  stats.running_mean[0] = 2.0;
  stats.running_var[0] = 4.0 - 1e-5;
  Var y = ad::batch_norm(tape.constant(Tensor({1, 1, 1, 2}, {2.0, 6.0})), tape.constant(Tensor::ones({1})),
                         tape.constant(Tensor::zeros({1})), stats, Mode::eval);
  EXPECT_NEAR(y.value()[0], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 2.0, 1e-12);
  EXPECT_EQ(stats.running_mean[0], 2.0);
}

TEST(BatchNorm, TrainUpdatesRunningStatistics) {
  Tape tape;
  ad::BatchNormStats stats(1);
  ad::batch_norm(tape.constant(Tensor({2, 1}, {1.0, 3.0})), tape.constant(Tensor::ones({1})),
                 tape.constant(Tensor::zeros({1})), stats, Mode::train, 0.5);
  EXPECT_DOUBLE_EQ(stats.running_mean[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.running_var[0], 0.5 * 1.0 + 0.5 * 2.0);
}

TEST(BatchNorm, TrainGradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor x = Tensor::randn({2, 3, 2, 2}, rng);
  const Tensor gamma = Tensor::uniform({3}, rng, 0.5, 1.5);
  const Tensor beta = Tensor::randn({3}, rng);
  auto run = [&](Tape& t, const Var& in, const Var& g, const Var& b) {
    ad::BatchNormStats stats(3);
    return project(t, ad::batch_norm(in, g, b, stats, Mode::train), 17);
  };
  auto rx = finite_diff_check([&](Tape& t, const Var& v) { return run(t, v, t.constant(gamma), t.constant(beta)); }, x);
  auto rg = finite_diff_check([&](Tape& t, const Var& v) { return run(t, t.constant(x), v, t.constant(beta)); }, gamma);
  auto rb = finite_diff_check([&](Tape& t, const Var& v) { return run(t, t.constant(x), t.constant(gamma), v); }, beta);
  EXPECT_LE(rx.max_relative_error, 1e-5);
  EXPECT_LE(rg.max_relative_error, 1e-5);
  EXPECT_LE(rb.max_relative_error, 1e-5);
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
  Rng rng(2);
  const Tensor x = Tensor::randn({4, 5}, rng);
  Tape tape;
  Var v = tape.constant(x);
  EXPECT_TRUE(bit_identical(ad::dropout(v, 0.0, 1, Mode::train).value(), x));
  EXPECT_TRUE(bit_identical(ad::dropout(v, 0.7, 1, Mode::eval).value(), x));
}

TEST(Dropout, ZeroedFractionNearRate) {
  Tape tape;
  Var v = tape.constant(Tensor::ones({1, 10000}));
  Var y = ad::dropout(v, 0.5, 1234, Mode::train);
  std::size_t zeros = 0;
  for (double d : y.value().data()) {
    if (d == 0.0) {
      ++zeros;
    } else {
      EXPECT_EQ(d, 2.0);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.5, 0.02);
}

TEST(Dropout, RateOneIsConfigError) {
  Tape tape;
  Var v = tape.constant(Tensor::ones({2, 2}));
  EXPECT_THROW(ad::dropout(v, 1.0, 1, Mode::train), ConfigError);
  EXPECT_THROW(ad::dropout(v, -0.1, 1, Mode::train), ConfigError);
}

TEST(Dropout, MaskFollowsSampleKeyNotPosition) {
  Tape tape;
  Var batch = tape.constant(Tensor::ones({2, 64}));
  const std::uint64_t keys[] = {10, 20};
  Var y = ad::dropout(batch, 0.5, 99, Mode::train, keys);
  Var single = tape.constant(Tensor::ones({1, 64}));
  const std::uint64_t key[] = {20};
  Var z = ad::dropout(single, 0.5, 99, Mode::train, key);
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(y.value()[64 + j], z.value()[j]);
}

TEST(FiniteDiff, SumOfSquaresClosedForm) {
  const Tensor x({3}, {1, 2, 3});
  Tape tape;
  Var v = tape.variable(x);
  tape.backward(ad::sum(ad::mul(v, v)));
  EXPECT_EQ(v.grad().values(), (std::vector<double>{2, 4, 6}));
  auto r = finite_diff_check([](Tape&, const Var& in) { return ad::sum(ad::mul(in, in)); }, x);
  EXPECT_LE(r.max_relative_error, 1e-7);
}

TEST(FiniteDiff, MseAgainstZeroHasGradientTwoXOverN) {
  const Tensor x({4}, {0.5, -1.0, 2.0, 3.0});
  Tape tape;
  Var v = tape.variable(x);
  Var zero = tape.constant(Tensor::zeros({4}));
  Var d = ad::sub(v, zero);
  tape.backward(ad::mean(ad::mul(d, d)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(v.grad()[i], 2.0 * x[i] / 4.0);
}

TEST(FiniteDiff, NonFiniteValueIsOracleFailure) {
  const Tensor x({2}, {1000.0, 1.0});
  EXPECT_THROW(finite_diff_check([](Tape&, const Var& in) { return ad::sum(ad::exp(in)); }, x), OracleFailure);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  // At the clamp boundary the analytic gradient is 0 but the central slope is 0.5.
  auto r = finite_diff_check([](Tape&, const Var& in) { return ad::sum(ad::clamp(in, 6.0, 7.0)); }, Tensor({1}, {6.0}));
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(Properties, EveryOpPassesGradientCheck) {
  Rng rng(21);
  const Tensor img = Tensor::randn({2, 3, 4, 4}, rng);
  const Tensor mat = Tensor::randn({3, 4}, rng);
  const Tensor chan = Tensor::randn({3}, rng);
  std::vector<std::pair<const char*, std::function<GradCheckResult()>>> cases = {
      {"relu", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::relu(x), 1); }, img); }},
      {"exp", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::exp(x), 1); }, img); }},
      {"scale", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::scale(x, -2.5), 1); }, img); }},
      {"avg_pool", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::avg_pool2d(x, 3, 1, 1), 1); }, img); }},
      {"gap", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::global_avg_pool(x), 1); }, img); }},
      {"softmax", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::softmax_rows(x), 1); }, mat); }},
      {"select_column", [&] { return finite_diff_check([](Tape& t, const Var& x) { return project(t, ad::select_column(x, 2), 1); }, mat); }},
      {"scale_channels", [&] {
         return finite_diff_check([&](Tape& t, const Var& w) { return project(t, ad::scale_channels(t.constant(img), w), 1); }, chan);
       }},
      {"channel_bias", [&] {
         return finite_diff_check([&](Tape& t, const Var& b) { return project(t, ad::add_channel_bias(t.constant(img), b), 1); }, chan);
       }},
      {"cross_entropy", [&] {
         Tensor target({3, 4}, 0.0);
         for (std::size_t r = 0; r < 3; ++r) target[r * 4 + r] = 1.0;
         return finite_diff_check([=](Tape&, const Var& z) { return ad::sum(ad::softmax_cross_entropy(z, target)); }, mat);
       }},
      {"weighted_mean", [&] {
         const std::vector<double> w{2.0, 0.5, 1.0};
         return finite_diff_check([=](Tape&, const Var& v) { return ad::weighted_mean(v, w); }, chan);
       }},
  };
  for (auto& [name, check] : cases) {
    EXPECT_LE(check().max_relative_error, 1e-4) << name;
  }
}

TEST(Properties, ForwardIsDeterministic) {
  auto run = [] {
    Rng rng(77);
    Tape tape;
    Var x = tape.constant(Tensor::randn({2, 2, 5, 5}, rng));
    Var k = tape.constant(Tensor::randn({3, 2, 3, 3}, rng));
    Var y = ad::relu(ad::conv2d(x, k, 1, 1));
    return ad::dropout(y, 0.3, 5, Mode::train).value();
  };
  EXPECT_TRUE(bit_identical(run(), run()));
}

TEST(Properties, GradientIsLinearInTheLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor p = Tensor::randn({2, 2, 4, 4}, rng);
    p.set_requires_grad(true);
    const Tensor k = Tensor::randn({2, 2, 3, 3}, rng);
    auto graph = [&](Tape& t) {
      Var x = t.bind(p);
      Var h = ad::relu(ad::conv2d(x, t.constant(k), 1, 1));
      return std::pair{project(t, h, seed + 100), project(t, ad::exp(ad::scale(x, 0.1)), seed + 200)};
    };
    std::vector<double> separate(p.size(), 0.0);
    for (int which = 0; which < 2; ++which) {
      p.zero_grad();
      Tape t;
      auto [l1, l2] = graph(t);
      t.backward(which == 0 ? l1 : l2);
      for (std::size_t i = 0; i < p.size(); ++i) separate[i] += p.grad()[i];
    }
    p.zero_grad();
    Tape t;
    auto [l1, l2] = graph(t);
    t.backward(ad::add(l1, l2));
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.grad()[i], separate[i], 1e-12);
  }
}

TEST(Properties, ZeroUpstreamGivesZeroParameterGradients) {
  Rng rng(4);
  Tensor k = Tensor::randn({2, 1, 3, 3}, rng);
  k.set_requires_grad(true);
  Tape tape;
  Var y = ad::relu(ad::conv2d(tape.constant(Tensor::randn({1, 1, 5, 5}, rng)), tape.bind(k), 1, 1));
  tape.backward(y, Tensor(y.shape(), 0.0));
  for (double g : k.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Tape, UnusedOutputHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, {1.0, 2.0}));
  Var unused = ad::exp(x);
  Var used = ad::sum(ad::scale(x, 3.0));
  tape.backward(used);
  const Tensor unused_grad = unused.grad();
  for (double g : unused_grad.data()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(x.grad().values(), (std::vector<double>{3.0, 3.0}));
}

TEST(Tape, BackwardVisitsEachNodeOnceInReverseOrder) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(1.0));
  std::vector<std::size_t> order;
  Var cur = x;
  for (int i = 0; i < 5; ++i) {
    const std::size_t in = cur.id();
    cur = tape.record(cur.value(), {in}, [in, &order](Tape& t, std::size_t self) {
      order.push_back(self);
      t.grad_of(in)[0] += t.grad_of(self)[0];
    });
  }
  tape.backward(cur);
  EXPECT_EQ(order, (std::vector<std::size_t>{5, 4, 3, 2, 1}));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tape, BoundParameterAccumulatesIntoItsGradient) {
  Tensor w({2}, {1.0, -1.0});
  w.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(ad::sum(ad::scale(tape.bind(w), 2.0)));
  }
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{4.0, 4.0}));
}

TEST(TensorType, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.grad().size(), 6u);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
}
