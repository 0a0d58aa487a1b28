#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "retina/common/error.hpp"
#include "retina/data/folds.hpp"
#include "retina/train/crossval.hpp"
#include "retina/train/synthetic.hpp"

using namespace retina;

namespace {

nn::TrunkConfig small_trunk(std::size_t size, bool bn) {
  nn::TrunkConfig c;
  c.input_size = size;
  c.stem_channels = 4;
  c.block1_branch = 2;
  c.block1_out = 6;
  c.down_channels = 6;
  c.block2_branch = 2;
  c.block2_out = 6;
  c.attention_channels = 6;
  c.block3_branch = 2;
  c.block3_out = 8;
  c.batch_norm = bn;
  return c;
}

TrainConfig small_config(std::size_t size = 4, bool bn = false) {
  TrainConfig c;
  c.trunk = small_trunk(size, bn);
  c.latent_dim = 4;
  c.batch_size = 8;
  c.pretrain_epochs = 2;
  c.finetune_epochs = 2;
  c.ensemble_size = 1;
  return c;
}

nn::NamedTensor named(Tensor& t) { return {"p", &t}; }

void expect_same_state(const nn::Module& a, const nn::Module& b) {
  const auto sa = a.state();
  const auto sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    ASSERT_EQ(sa[i].name, sb[i].name);
    const std::span<const double> x = sa[i].tensor->data();
    const std::span<const double> y = sb[i].tensor->data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << sa[i].name;
  }
}

}  // namespace

// ---- losses ---------------------------------------------------------------

TEST(MseLoss, Examples) {
  Tape t;
  const Tensor a({2}, {1.0, 0.0});
  EXPECT_EQ(mse_loss(t.constant(a), a).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(t.constant(Tensor({2}, {0.0, 0.0})), a).value().item(), 0.5);
  EXPECT_THROW(mse_loss(t.constant(Tensor({3})), a), DimensionError);
}

TEST(MseLoss, MatchesScalarLoop) {
  Rng rng(5);
  const Tensor p = Tensor::randn({100}, rng);
  const Tensor q = Tensor::randn({100}, rng);
  double sum = 0.0;
  for (std::size_t i = 0; i < 100; ++i) sum += (q[i] - p[i]) * (q[i] - p[i]);
  Tape t;
  EXPECT_NEAR(mse_loss(t.constant(p), q).value().item(), sum / 100.0, 1e-12);
}

TEST(MseLoss, PerSampleRowsAverageToWholeLoss) {
  Rng rng(6);
  const Tensor p = Tensor::randn({3, 2, 2, 2}, rng);
  const Tensor q = Tensor::randn({3, 2, 2, 2}, rng);
  Tape t;
  const Tensor rows = per_sample_mse(t.constant(p), q).value();
  ASSERT_EQ(rows.shape(), (Shape{3}));
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += (p[n * 8 + i] - q[n * 8 + i]) * (p[n * 8 + i] - q[n * 8 + i]);
    EXPECT_NEAR(rows[n], s / 8.0, 1e-12);
  }
  EXPECT_NEAR((rows[0] + rows[1] + rows[2]) / 3.0, mse_loss(t.constant(p), q).value().item(), 1e-12);
}

TEST(KlPerSample, AveragesToBatchKl) {
  Rng rng(8);
  Tape t;
  const Var m = t.constant(Tensor::randn({4, 3}, rng));
  const Var lv = t.constant(Tensor::randn({4, 3}, rng, 0.5));
  const Tensor rows = per_sample_kl(m, lv).value();
  const double mean = (rows[0] + rows[1] + rows[2] + rows[3]) / 4.0;
  EXPECT_NEAR(mean, nn::kl_divergence(m, lv).value().item(), 1e-12);
}

TEST(SmoothLabels, Examples) {
  const std::vector<double> hot{0, 0, 1, 0, 0};
  EXPECT_EQ(smooth_labels(hot, 0.0), hot);
  const auto s = smooth_labels(hot, 0.1);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s[i], i == 2 ? 0.92 : 0.02, 1e-15);
}

TEST(SmoothLabels, SumsToOneOverEpsilonGrid) {
  for (int k = 0; k < 100; ++k) {
    const double eps = k / 100.0;
    for (std::size_t hot = 0; hot < 5; ++hot) {
      std::vector<double> v(5, 0.0);
      v[hot] = 1.0;
      const auto s = smooth_labels(v, eps);
      EXPECT_NEAR(std::accumulate(s.begin(), s.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(SmoothLabels, Errors) {
  EXPECT_THROW(smooth_labels(std::vector<double>{0, 1, 1, 0, 0}, 0.1), ConfigError);
  EXPECT_THROW(smooth_labels(std::vector<double>{0, 0.5, 0, 0, 0}, 0.1), ConfigError);
  EXPECT_THROW(smooth_labels(std::vector<double>{0, 0, 0, 0, 0}, 0.1), ConfigError);
  EXPECT_THROW(smooth_labels(std::vector<double>{1, 0, 0, 0, 0}, 1.0), ConfigError);
  EXPECT_THROW(smooth_labels(std::vector<double>{1, 0, 0, 0, 0}, -0.1), ConfigError);
}

TEST(SmoothLabels, PerfectPredictionStillCostsSomething) {
  const std::vector<Grade> g{3};
  const Tensor targets = smoothed_targets(g, 0.1);
  Tape t;
  const Var logits = t.constant(Tensor({1, 5}, {-50.0, -50.0, -50.0, 50.0, -50.0}));
  EXPECT_GT(ad::softmax_cross_entropy(logits, targets).value()[0], 0.0);
}

TEST(WeightedBatchLoss, Examples) {
  LossConfig cfg;
  cfg.golden_weight = 2.0;
  cfg.tfl_weight = 1.0;
  const std::vector<double> losses{1.0, 2.0};
  const std::vector<Tier> tiers{Tier::golden, Tier::tfl};
  EXPECT_DOUBLE_EQ(weighted_batch_loss(losses, tiers, cfg), 4.0 / 3.0);

  cfg.golden_weight = cfg.tfl_weight = 0.7;
  EXPECT_DOUBLE_EQ(weighted_batch_loss(losses, tiers, cfg), 1.5);

  cfg.golden_weight = 1.0;
  cfg.tfl_weight = 0.0;
  const std::vector<double> three{1.0, 5.0, 3.0};
  const std::vector<Tier> t3{Tier::golden, Tier::tfl, Tier::golden};
  EXPECT_DOUBLE_EQ(weighted_batch_loss(three, t3, cfg), 2.0);
}

TEST(WeightedBatchLoss, ZeroTflWeightGivesExactlyZeroGradient) {
  LossConfig cfg;
  cfg.tfl_weight = 0.0;
  Tape t;
  const Var v = t.variable(Tensor({4}, {0.3, 1.7, 2.2, 0.9}));
  const std::vector<Tier> tiers{Tier::golden, Tier::tfl, Tier::golden, Tier::tfl};
  t.backward(weighted_batch_loss(v, tiers, cfg));
  const Tensor g = v.grad();
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[3], 0.0);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
}

TEST(WeightedBatchLoss, Errors) {
  LossConfig cfg;
  cfg.tfl_weight = 0.0;
  const std::vector<double> losses{1.0};
  const std::vector<Tier> tfl{Tier::tfl};
  EXPECT_THROW(weighted_batch_loss(losses, tfl, cfg), ConfigError);
  const std::vector<Tier> two{Tier::golden, Tier::golden};
  EXPECT_THROW(weighted_batch_loss(losses, two, cfg), DimensionError);
}

TEST(WeightedBatchLoss, PermutationInvariant) {
  Rng rng(17);
  LossConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> losses;
    std::vector<Tier> tiers;
    for (std::size_t i = 0; i < n; ++i) {
      losses.push_back(rng.uniform(0.0, 3.0));
      tiers.push_back(i == 0 || rng.bernoulli(0.5) ? Tier::golden : Tier::tfl);
    }
    const double before = weighted_batch_loss(losses, tiers, cfg);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<double> pl;
    std::vector<Tier> pt;
    for (std::size_t i : perm) {
      pl.push_back(losses[i]);
      pt.push_back(tiers[i]);
    }
    EXPECT_NEAR(weighted_batch_loss(pl, pt, cfg), before, 1e-12);
  }
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tfl_weight = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.golden_weight = 0.0;
  c.tfl_weight = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.smoothing_epsilon = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.kl_weight = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---- optimizers -----------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  Tensor p({2}, {1.0, -2.0});
  p.set_requires_grad(true);
  const std::vector<nn::NamedTensor> params{named(p)};
  Adam opt;
  p.grad()[0] = 1.0;
  p.grad()[1] = -1.0;
  opt.step(params);
  const double m0 = opt.first_moments()[0][0];
  const double v0 = opt.second_moments()[0][0];
  p.zero_grad();
  opt.step(params);
  EXPECT_LT(std::abs(opt.first_moments()[0][0]), std::abs(m0));
  EXPECT_LT(opt.second_moments()[0][0], v0);
  EXPECT_DOUBLE_EQ(opt.first_moments()[0][0], 0.9 * m0);
  // With no history, a zero gradient leaves the parameters where they are.
  Adam fresh;
  Tensor q({2}, {1.0, -2.0});
  q.set_requires_grad(true);
  const std::vector<nn::NamedTensor> qp{named(q)};
  q.zero_grad();
  fresh.step(qp);
  EXPECT_EQ(q[0], 1.0);
  EXPECT_EQ(q[1], -2.0);
  EXPECT_EQ(fresh.steps(), 1u);
}

TEST(Adam, QuadraticTraceMatchesReference) {
  // f(x) = x^2 from x = 1 with lr 0.1; reference trace from torch.optim.Adam in float64.
  static constexpr double kTrace[20] = {
      0.9000000005,         0.8004122286917927,   0.7015862729460302,   0.6039390605737459,
      0.5079636592643418,   0.41423645599366177,  0.3234207049391019,   0.23626372452104175,
      0.15358456007036347,  0.07624915560691209,  0.005131501948057088, -0.05893789063004737,
      -0.11523093514116552, -0.16317947513528472, -0.2024210893915043,  -0.23282491024249535,
      -0.2544940872815117,  -0.26774728236961387, -0.2730857716970153,  -0.2711540954901283};
  Tensor x({1}, {1.0});
  x.set_requires_grad(true);
  const std::vector<nn::NamedTensor> params{named(x)};
  Adam opt(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  double prev = std::abs(x[0]);
  for (int i = 0; i < 20; ++i) {
    x.grad()[0] = 2.0 * x[0];
    opt.step(params);
    EXPECT_NEAR(x[0], kTrace[i], 1e-12) << "step " << i;
    // Momentum carries the iterate past the minimum at step 12.
    if (i < 11) {
      EXPECT_LT(std::abs(x[0]), prev) << "step " << i;
    }
    prev = std::abs(x[0]);
  }
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(3);
    Tensor x = Tensor::randn({5}, rng);
    x.set_requires_grad(true);
    const std::vector<nn::NamedTensor> params{named(x)};
    Adam opt;
    for (int i = 0; i < 50; ++i) {
      for (std::size_t j = 0; j < 5; ++j) x.grad()[j] = std::sin(x[j] * (j + 1));
      opt.step(params);
    }
    return std::vector<double>(x.data().begin(), x.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, SavedStateResumesExactly) {
  auto grad = [](Tensor& x) {
    for (std::size_t j = 0; j < x.size(); ++j) x.grad()[j] = std::cos(x[j]) + 0.1 * x[j];
  };
  Tensor a({3}, {0.5, -1.0, 2.0});
  a.set_requires_grad(true);
  const std::vector<nn::NamedTensor> pa{named(a)};
  Adam full;
  for (int i = 0; i < 10; ++i) {
    grad(a);
    full.step(pa);
  }

  Tensor b({3}, {0.5, -1.0, 2.0});
  b.set_requires_grad(true);
  const std::vector<nn::NamedTensor> pb{named(b)};
  Adam first;
  for (int i = 0; i < 4; ++i) {
    grad(b);
    first.step(pb);
  }
  nn::Checkpoint cp;
  first.save(cp, "opt");
  const nn::Checkpoint restored = nn::decode_checkpoint(nn::encode_checkpoint(cp));
  Adam second;
  second.load(restored, "opt", pb);
  EXPECT_EQ(second.steps(), 4u);
  for (int i = 0; i < 6; ++i) {
    grad(b);
    second.step(pb);
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a[j], b[j]);
}

TEST(Adam, RejectsChangedParameterList) {
  Tensor a({2}), b({3});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Adam opt;
  opt.step(std::vector<nn::NamedTensor>{named(a)});
  EXPECT_THROW(opt.step(std::vector<nn::NamedTensor>{named(b)}), DimensionError);
  EXPECT_THROW(opt.step(std::vector<nn::NamedTensor>{named(a), named(b)}), DimensionError);
}

TEST(Nesterov, ZeroMomentumIsPlainSgd) {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  const std::vector<nn::NamedTensor> params{named(x)};
  Nesterov opt(NesterovConfig{0.1, 0.0, 1.0});
  x.grad()[0] = 0.5;
  x.grad()[1] = -1.0;
  opt.step(params, 0.1);
  EXPECT_DOUBLE_EQ(x[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(x[1], 2.0 + 0.1);
}

TEST(Nesterov, LookaheadForm) {
  Tensor x({1}, {1.0});
  x.set_requires_grad(true);
  const std::vector<nn::NamedTensor> params{named(x)};
  Nesterov opt(NesterovConfig{0.1, 0.9, 1.0});
  x.grad()[0] = 1.0;
  opt.step(params, 0.1);
  // v = 1, step = 0.1 * (1 + 0.9)
  EXPECT_DOUBLE_EQ(x[0], 1.0 - 0.19);
  EXPECT_DOUBLE_EQ(opt.velocities()[0][0], 1.0);
  x.grad()[0] = 0.0;
  opt.step(params, 0.1);
  // v = 0.9, step = 0.1 * (0 + 0.81)
  EXPECT_DOUBLE_EQ(x[0], 1.0 - 0.19 - 0.081);
}

TEST(Nesterov, QuadraticBowlConverges) {
  Tensor x({1}, {1.0});
  x.set_requires_grad(true);
  const std::vector<nn::NamedTensor> params{named(x)};
  Nesterov opt(NesterovConfig{0.1, 0.9, 1.0});
  for (int i = 0; i < 200; ++i) {
    x.grad()[0] = 2.0 * x[0];
    opt.step(params, 0.1);
  }
  EXPECT_LT(std::abs(x[0]), 1e-3);
}

TEST(Nesterov, ZeroVelocityAndGradientIsNoOp) {
  Tensor x({3}, {1.0, -1.0, 4.0});
  x.set_requires_grad(true);
  x.zero_grad();
  const std::vector<nn::NamedTensor> params{named(x)};
  Nesterov opt;
  opt.step(params, 0.01);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[1], -1.0);
  EXPECT_EQ(x[2], 4.0);
}

TEST(Nesterov, SavedStateResumesExactly) {
  auto grad = [](Tensor& x) {
    for (std::size_t j = 0; j < x.size(); ++j) x.grad()[j] = x[j] * x[j] - 0.5;
  };
  Tensor a({2}, {0.3, 0.8}), b({2}, {0.3, 0.8});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const std::vector<nn::NamedTensor> pa{named(a)}, pb{named(b)};
  Nesterov full;
  for (int i = 0; i < 8; ++i) {
    grad(a);
    full.step(pa, poly_lr(i, 8, 0.1, 1.0));
  }
  Nesterov first;
  for (int i = 0; i < 3; ++i) {
    grad(b);
    first.step(pb, poly_lr(i, 8, 0.1, 1.0));
  }
  nn::Checkpoint cp;
  first.save(cp, "n");
  Nesterov second;
  second.load(cp, "n", pb);
  for (int i = 3; i < 8; ++i) {
    grad(b);
    second.step(pb, poly_lr(i, 8, 0.1, 1.0));
  }
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[1], b[1]);
}

TEST(PolyLr, Examples) {
  EXPECT_EQ(poly_lr(0, 100, 0.01, 1.0), 0.01);
  EXPECT_EQ(poly_lr(100, 100, 0.01, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(50, 100, 0.01, 1.0), 0.005);
  EXPECT_DOUBLE_EQ(poly_lr(50, 100, 0.01, 2.0), 0.0025);
  EXPECT_THROW(poly_lr(101, 100, 0.01, 1.0), ConfigError);
  EXPECT_THROW(poly_lr(0, 0, 0.01, 1.0), ConfigError);
}

TEST(GradNormalize, Examples) {
  Tensor g({2});
  g.set_requires_grad(true);
  g.grad()[0] = 3.0;
  g.grad()[1] = 4.0;
  const std::vector<nn::NamedTensor> params{named(g)};
  EXPECT_DOUBLE_EQ(grad_normalize(params, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(g.grad()[1], 0.8);

  g.grad()[0] = 0.3;
  g.grad()[1] = 0.4;
  grad_normalize(params, 1.0);
  EXPECT_EQ(g.grad()[0], 0.3);
  EXPECT_EQ(g.grad()[1], 0.4);
  EXPECT_THROW(grad_normalize(params, 0.0), ConfigError);
}

TEST(GradNormalize, NeverIncreasesNormAndKeepsDirection) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a({1 + rng.below(6)}), b({1 + rng.below(6)});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const double scale = std::exp(rng.uniform(-4.0, 4.0));
    for (double& v : a.grad()) v = scale * rng.normal();
    for (double& v : b.grad()) v = scale * rng.normal();
    std::vector<double> before(a.grad().begin(), a.grad().end());
    before.insert(before.end(), b.grad().begin(), b.grad().end());
    const std::vector<nn::NamedTensor> params{named(a), named(b)};
    const double max_norm = rng.uniform(0.1, 5.0);
    const double norm = grad_normalize(params, max_norm);
    const double after = global_grad_norm(params);
    EXPECT_LE(after, max_norm + 1e-12);
    EXPECT_LE(after, norm + 1e-12);
    std::vector<double> now(a.grad().begin(), a.grad().end());
    now.insert(now.end(), b.grad().begin(), b.grad().end());
    double dot = 0.0;
    for (std::size_t i = 0; i < now.size(); ++i) dot += now[i] * before[i];
    EXPECT_NEAR(dot / (norm * after), 1.0, 1e-12);
  }
}

// ---- training procedures ---------------------------------------------------

TEST(EpochOrder, DeterministicPermutation) {
  const auto a = epoch_order(37, 9, 3);
  EXPECT_EQ(a, epoch_order(37, 9, 3));
  EXPECT_NE(a, epoch_order(37, 9, 4));
  auto s = a;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], i);
}

TEST(TrainConfigJson, RoundTripAndErrors) {
  TrainConfig c = small_config();
  c.seed = 7;
  c.loss.tfl_weight = 0.0;
  c.nesterov.power = 0.9;
  const std::string text = train_config_to_json(c);
  const TrainConfig back = train_config_from_json(text);
  EXPECT_EQ(train_config_to_json(back), text);
  EXPECT_EQ(back.trunk.block3_out, 8u);
  EXPECT_EQ(back.seed, 7u);

  const TrainConfig defaults = train_config_from_json("{}");
  EXPECT_EQ(defaults.ensemble_size, 5u);
  EXPECT_EQ(defaults.adam.lr, 1e-3);
  EXPECT_EQ(defaults.nesterov.lr, 1e-2);
  EXPECT_EQ(defaults.max_grad_norm, 5.0);
  EXPECT_EQ(defaults.loss.tfl_weight, 0.2);

  EXPECT_THROW(train_config_from_json("{\"epochs\": 3}"), ConfigError);
  EXPECT_THROW(train_config_from_json("{\"loss\": {\"gamma\": 3}}"), ConfigError);
  EXPECT_THROW(train_config_from_json("{\"ensemble_size\": 0}"), ConfigError);
  EXPECT_THROW(train_config_from_json("{\"seed\": \"x\"}"), ConfigError);
  EXPECT_THROW(train_config_from_json("{"), ParseError);
}

TEST(Pretrain, LossDecreasesOverFirstEpochs) {
  TrainConfig c = small_config(4);
  c.adam.lr = 1e-3;
  c.batch_size = 50;
  c.pretrain_epochs = 5;
  SyntheticConfig sc;
  sc.count = 50;
  sc.size = 4;
  sc.tfl_fraction = 0.3;
  const Dataset data = make_synthetic(sc, 11);
  nn::EncoderModel model = make_encoder(c);
  const auto logs = pretrain_encoder(data, model, c);
  ASSERT_EQ(logs.size(), 5u);
  for (std::size_t e = 1; e < logs.size(); ++e) EXPECT_LT(logs[e].loss, logs[e - 1].loss) << "epoch " << e;
}

TEST(Pretrain, WithoutReconstructionAndKlReducesToClassification) {
  TrainConfig c = small_config(4);
  c.loss.reconstruction_weight = 0.0;
  c.loss.kl_weight = 0.0;
  SyntheticConfig sc;
  sc.count = 8;
  sc.size = 4;
  sc.tfl_fraction = 0.5;
  const Dataset data = make_synthetic(sc, 12);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  const Batch batch = make_batch(data, idx);

  nn::EncoderModel model = make_encoder(c);
  nn::EncoderModel reference = model;
  Adam opt(c.adam);
  const StepStats s = pretrain_step(model, opt, batch, c, 99);
  EXPECT_EQ(s.reconstruction, 0.0);
  EXPECT_EQ(s.kl, 0.0);
  EXPECT_EQ(s.loss, s.classification);

  // Same forward pass scored only by the weighted smoothed cross entropy.
  Tape t;
  const auto out = reference.forward(t, t.constant(batch.images), Mode::train, 99, batch.keys);
  std::vector<Grade> grades;
  for (const auto& g : batch.grades) grades.push_back(*g);
  const Var ce = ad::softmax_cross_entropy(out.logits, smoothed_targets(grades, c.loss.smoothing_epsilon));
  EXPECT_EQ(weighted_batch_loss(ce, batch.tiers, c.loss).value().item(), s.loss);
}

TEST(Pretrain, EmptyDatasetIsRejected) {
  TrainConfig c = small_config(4);
  nn::EncoderModel model = make_encoder(c);
  EXPECT_THROW(pretrain_encoder({}, model, c), ConfigError);
  nn::Classifier clf = make_classifier(c);
  EXPECT_THROW(finetune_classifier({}, clf, c), ConfigError);
}

TEST(Pretrain, ZeroTflWeightIgnoresTflSamplesBitExactly) {
  TrainConfig c = small_config(4, false);
  c.loss.tfl_weight = 0.0;
  SyntheticConfig sc;
  sc.count = 12;
  sc.size = 4;
  sc.tfl_fraction = 0.5;
  const Dataset data = make_synthetic(sc, 13);
  std::vector<std::size_t> all(data.size()), golden;
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i : all)
    if (data[i].tier == Tier::golden) golden.push_back(i);
  ASSERT_GT(golden.size(), 0u);
  ASSERT_LT(golden.size(), all.size());

  nn::EncoderModel with = make_encoder(c);
  nn::EncoderModel without = with;
  Adam oa(c.adam), ob(c.adam);
  for (std::uint64_t step = 0; step < 3; ++step) {
    const StepStats a = pretrain_step(with, oa, make_batch(data, all), c, step);
    const StepStats b = pretrain_step(without, ob, make_batch(data, golden), c, step);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad_norm, b.grad_norm);
  }
  expect_same_state(with, without);

  nn::Classifier cw = make_classifier(c);
  nn::Classifier cwo = cw;
  Nesterov na(c.nesterov), nb(c.nesterov);
  for (std::uint64_t step = 0; step < 3; ++step) {
    finetune_step(cw, na, make_batch(data, all), c, 0.01, step);
    finetune_step(cwo, nb, make_batch(data, golden), c, 0.01, step);
  }
  expect_same_state(cw, cwo);
}

TEST(Pretrain, AllZeroWeightBatchIsSkipped) {
  TrainConfig c = small_config(4);
  c.loss.tfl_weight = 0.0;
  Dataset data = make_synthetic({4, 4, 0.1, 1.0}, 14);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  nn::Classifier clf = make_classifier(c);
  const nn::Classifier before = clf;
  Nesterov opt;
  EXPECT_FALSE(finetune_step(clf, opt, make_batch(data, idx), c, 0.01, 0).applied);
  EXPECT_EQ(opt.steps(), 0u);
  expect_same_state(clf, before);
}

TEST(Training, RerunAndResumeAreBitIdentical) {
  TrainConfig c = small_config(4, true);
  c.finetune_epochs = 4;
  SyntheticConfig sc;
  sc.count = 20;
  sc.size = 4;
  const Dataset data = make_synthetic(sc, 15);

  nn::Classifier a = make_classifier(c);
  const auto logs = finetune_classifier(data, a, c);
  nn::Classifier b = make_classifier(c);
  finetune_classifier(data, b, c);
  expect_same_state(a, b);

  nn::Classifier r = make_classifier(c);
  Nesterov opt(c.nesterov);
  for (std::size_t e = 0; e < 2; ++e) finetune_epoch(r, opt, data, c, e);
  nn::Checkpoint cp;
  nn::append_state(cp, r, "model");
  opt.save(cp, "optimizer");
  const nn::Checkpoint disk = nn::decode_checkpoint(nn::encode_checkpoint(cp));

  nn::Classifier resumed = make_classifier(small_config(4, true));
  nn::load_state(resumed, disk, "model");
  Nesterov opt2(c.nesterov);
  opt2.load(disk, "optimizer", resumed.parameters());
  for (std::size_t e = 2; e < 4; ++e) {
    const EpochLog l = finetune_epoch(resumed, opt2, data, c, e);
    EXPECT_EQ(epoch_log_json(l), epoch_log_json(logs[e]));
  }
  expect_same_state(a, resumed);
}

TEST(Training, PretrainedTrunkIsNotMutatedByFineTuning) {
  TrainConfig c = small_config(4);
  const Dataset data = make_synthetic({16, 4, 0.1, 0.0}, 16);
  nn::EncoderModel enc = make_encoder(c);
  pretrain_encoder(data, enc, c);
  const nn::EncoderModel snapshot = enc;
  nn::Classifier clf = make_classifier(c);
  nn::transfer_encoder_weights(enc, clf);
  finetune_classifier(data, clf, c);
  expect_same_state(enc, snapshot);
}

TEST(EpochLog, JsonLine) {
  EpochLog l;
  l.phase = "finetune";
  l.epoch = 3;
  l.steps = 2;
  l.loss = 0.5;
  l.lr = 0.01;
  const std::string s = epoch_log_json(l);
  EXPECT_EQ(s.find('\n'), std::string::npos);
  EXPECT_NE(s.find("\"phase\":\"finetune\""), std::string::npos);
  EXPECT_NE(s.find("\"epoch\":3"), std::string::npos);
  EXPECT_NE(s.find("\"grad_norm\":0"), std::string::npos);
}

// ---- ensembles ------------------------------------------------------------

TEST(Ensemble, SingleModelIsItsOwnProbabilities) {
  TrainConfig c = small_config(4);
  nn::Classifier m = make_classifier(c);
  Rng rng(1);
  const Tensor x = Tensor::randn({6, 3, 4, 4}, rng);
  nn::Classifier* one[] = {&m};
  const Tensor p = ensemble_predict(one, x);
  const Tensor q = predict_probabilities(m, x);
  EXPECT_TRUE(std::equal(p.data().begin(), p.data().end(), q.data().begin()));
}

TEST(Ensemble, IdenticalMembersMatchOne) {
  TrainConfig c = small_config(4);
  nn::Classifier m = make_classifier(c);
  nn::Classifier twin = m;
  Rng rng(2);
  const Tensor x = Tensor::randn({5, 3, 4, 4}, rng);
  nn::Classifier* two[] = {&m, &twin};
  const Tensor p = ensemble_predict(two, x);
  const Tensor q = predict_probabilities(m, x);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
}

TEST(Ensemble, RowsSumToOne) {
  TrainConfig base = small_config(4);
  std::vector<nn::Classifier> members;
  for (std::size_t m = 0; m < 5; ++m) members.push_back(make_classifier(member_config(base, m)));
  std::vector<nn::Classifier*> ptrs;
  for (auto& m : members) ptrs.push_back(&m);
  Rng rng(3);
  const Tensor x = Tensor::randn({7, 3, 4, 4}, rng, 2.0);
  const Tensor p = ensemble_predict(ptrs, x);
  ASSERT_EQ(p.shape(), (Shape{7, 5}));
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += p[r * 5 + k];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_THROW(ensemble_predict({}, x), ConfigError);
}

TEST(Ensemble, MembersDifferInArchitectureAndSeed) {
  const TrainConfig base = small_config(4);
  std::set<std::size_t> counts;
  std::set<std::uint64_t> seeds;
  for (std::size_t m = 0; m < 5; ++m) {
    const TrainConfig mc = member_config(base, m);
    EXPECT_NO_THROW(mc.trunk.validate());
    seeds.insert(mc.seed);
    counts.insert(make_classifier(mc).parameter_count());
  }
  EXPECT_EQ(member_config(base, 0).seed, base.seed);
  EXPECT_EQ(seeds.size(), 5u);
  EXPECT_EQ(counts.size(), 5u);
}

TEST(GradesFromProbabilities, ArgmaxWithTiesToHigherGrade) {
  const Tensor p({2, 5}, {0.1, 0.5, 0.1, 0.2, 0.1, 0.3, 0.1, 0.3, 0.2, 0.1});
  EXPECT_EQ(grades_from_probabilities(p), (std::vector<Grade>{1, 2}));
}

// ---- cross-validation -----------------------------------------------------

namespace {

TrainConfig crossval_config() {
  TrainConfig c = small_config(8, true);
  c.trunk = nn::TrunkConfig{};
  c.transfer = false;
  c.finetune_epochs = 12;
  c.batch_size = 16;
  return c;
}

ImageSource cohort_source(const SyntheticCohort& cohort) {
  return [&cohort](const Sample& s) { return cohort.images.at(s.image_path); };
}

}  // namespace

TEST(Crossval, OneReportPerDisjointCenterAndSeparableDataIsFound) {
  SyntheticCohortConfig cc;
  cc.centers = 5;
  cc.patients_per_center = 30;
  cc.noise = 0.05;
  cc.grade_offset = 0.08;
  const SyntheticCohort cohort = make_synthetic_cohort(cc, 21);
  const FoldPlan plan = make_center_folds(cohort.manifest, 5);
  EvaluationOptions opts;
  opts.n_resamples = 200;
  const CrossvalResult r = crossval_run(cohort.manifest, plan, crossval_config(), cohort_source(cohort), opts);
  ASSERT_EQ(r.folds.size(), 5u);
  std::set<std::string> tested;
  for (const auto& f : r.folds) {
    ASSERT_EQ(f.test_centers.size(), 1u);
    EXPECT_TRUE(tested.insert(*f.test_centers.begin()).second);
    std::set<std::string> patients;
    for (const auto& p : f.predictions) patients.insert(p.patient_id);
    for (const auto& s : cohort.manifest.samples)
      EXPECT_EQ(patients.contains(s.patient_id), s.center_id == *f.test_centers.begin());
    const auto sens = std::find_if(f.metrics.begin(), f.metrics.end(),
                                   [](const MetricReport& m) { return m.metric == "sensitivity"; });
    ASSERT_NE(sens, f.metrics.end());
    EXPECT_GE(sens->value, 0.95) << "fold " << f.fold;
  }
  const auto s = std::find_if(r.summary.begin(), r.summary.end(),
                              [](const MetricSummary& m) { return m.metric == "sensitivity"; });
  ASSERT_NE(s, r.summary.end());
  EXPECT_EQ(s->folds, 5u);
  EXPECT_GE(s->mean, 0.95);
}

TEST(Crossval, RerunIsIdentical) {
  SyntheticCohortConfig cc;
  cc.centers = 3;
  cc.patients_per_center = 10;
  cc.size = 4;
  const SyntheticCohort cohort = make_synthetic_cohort(cc, 22);
  const FoldPlan plan = make_center_folds(cohort.manifest, 3);
  TrainConfig c = small_config(4, true);
  EvaluationOptions opts;
  opts.n_resamples = 50;
  const auto a = crossval_run(cohort.manifest, plan, c, cohort_source(cohort), opts);
  const auto b = crossval_run(cohort.manifest, plan, c, cohort_source(cohort), opts);
  ASSERT_EQ(a.folds.size(), b.folds.size());
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    EXPECT_EQ(serialize_predictions(a.folds[f].predictions), serialize_predictions(b.folds[f].predictions));
    EXPECT_EQ(report_to_json(render_report(a.folds[f].metrics)), report_to_json(render_report(b.folds[f].metrics)));
    EXPECT_EQ(a.folds[f].stats.mean, b.folds[f].stats.mean);
  }
}

TEST(Crossval, EmptyTestFoldIsRejected) {
  SyntheticCohortConfig cc;
  cc.centers = 2;
  cc.patients_per_center = 5;
  cc.size = 4;
  SyntheticCohort cohort = make_synthetic_cohort(cc, 23);
  for (auto& s : cohort.manifest.samples)
    if (s.center_id == "C2") s.gradable = false;
  const FoldPlan plan = make_center_folds(cohort.manifest, 2);
  EXPECT_THROW(crossval_run(cohort.manifest, plan, small_config(4), cohort_source(cohort), {}), ConfigError);
}

TEST(Synthetic, DeterministicAndBalanced) {
  const Dataset a = make_synthetic({50, 8, 0.1, 0.4}, 3);
  const Dataset b = make_synthetic({50, 8, 0.1, 0.4}, 3);
  std::size_t tfl = 0;
  std::vector<int> per_grade(5, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].image.data().begin(), a[i].image.data().end(), b[i].image.data().begin()));
    EXPECT_EQ(a[i].image.shape(), (Shape{3, 8, 8}));
    tfl += a[i].tier == Tier::tfl ? 1 : 0;
    ++per_grade[*a[i].grade];
  }
  EXPECT_GT(tfl, 5u);
  EXPECT_LT(tfl, 35u);
  for (int n : per_grade) EXPECT_EQ(n, 10);
}
