#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "oce/nn/checkpoint.hpp"
#include "oce/nn/folds.hpp"
#include "oce/nn/resize.hpp"
#include "oce/nn/train.hpp"
#include "test_support.hpp"

using namespace oce;
using namespace oce::nn;

namespace {

ModelSpec mini_spec(InputKind kind = InputKind::seq3dt) {
  ModelSpec s;
  s.kind = kind;
  s.layers_per_block = 1;
  s.growth = 4;
  s.init_channels = 4;
  s.check_param_budget = false;
  return s;
}

// Travelling wave whose lateral wavenumber encodes the label.
NetInput wave_input(int depth, int lateral, int time, double label, std::mt19937_64& rng, double noise = 0.2) {
  NetInput x{depth, lateral, time, std::vector<float>(static_cast<std::size_t>(depth) * lateral * time)};
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::normal_distribution<double> n(0.0, noise);
  const double k = 0.15 + 0.03 * label;
  const double p0 = phase(rng);
  for (int d = 0; d < depth; ++d)
    for (int l = 0; l < lateral; ++l)
      for (int t = 0; t < time; ++t)
        x.data[(static_cast<std::size_t>(d) * lateral + l) * time + t] =
            static_cast<float>(std::sin(k * l - 0.6 * t + p0) * std::exp(-0.1 * d) + n(rng));
  return x;
}

std::vector<Sample> as_samples(const std::vector<NetInput>& xs, const std::vector<double>& labels) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({&xs[i], labels[i]});
  return out;
}

}  // namespace

TEST(DenseNet, DefaultParameterCountWithinBudget) {
  DenseNet<float> net(ModelSpec{}, 1);
  const auto n = net.parameter_count();
  EXPECT_GE(n, kMinParameterCount);
  EXPECT_LE(n, kMaxParameterCount);
  const double rel = (static_cast<double>(n) - kReferenceParameterCount) / kReferenceParameterCount;
  RecordProperty("parameter_count", std::to_string(n));
  RecordProperty("relative_to_reference", std::to_string(rel));
}

TEST(DenseNet, ParameterBudgetViolationIsConfigError) {
  ModelSpec big;
  big.growth = 16;
  EXPECT_THROW(DenseNet<float>(big, 1), ConfigError);
  ModelSpec tiny = mini_spec();
  tiny.check_param_budget = true;
  EXPECT_THROW(DenseNet<float>(tiny, 1), ConfigError);
}

TEST(DenseNet, TemporalLengthPreservedThroughTrunk) {
  for (auto kind : {InputKind::seq3dt, InputKind::seq2dt, InputKind::st_map}) {
    ModelSpec spec;
    spec.kind = kind;
    DenseNet<float> net(spec, 3);
    const int depth = kind == InputKind::st_map ? 1 : 8;
    Tensor<float> x({2, 1, depth, 16, 64});
    std::mt19937_64 rng(5);
    std::normal_distribution<float> n;
    for (auto& v : x.data) v = n(rng);
    const auto out = net.forward(x, false);
    ASSERT_EQ(out.size(), 2u);
    ASSERT_FALSE(net.trunk_time_sizes().empty());
    for (int t : net.trunk_time_sizes()) EXPECT_EQ(t, 64) << to_string(kind);
  }
}

TEST(DenseNet, GradientCheckMiniatureDouble) {
  DenseNet<double> net(mini_spec(), 11);
  Tensor<double> x({3, 1, 8, 8, 8});
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (auto& v : x.data) v = n(rng);
  const std::vector<double> w{0.7, -1.3, 0.4};
  auto loss = [&] {
    const auto out = net.forward(x, true);
    double l = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) l += w[i] * out[i];
    return l;
  };
  net.zero_grad();
  loss();
  net.backward(w);

  std::size_t total = 0, good = 0;
  const double h = 1e-6;
  for (auto* p : net.params()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = loss();
      p->value[i] = orig - h;
      const double down = loss();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      ++total;
      if (std::abs(numeric - analytic) / scale <= 1e-3) ++good;
    }
  }
  ASSERT_GT(total, 0u);
  EXPECT_GE(static_cast<double>(good) / total, 0.99) << good << " of " << total;
}

TEST(DenseNet, HandlesTinySpatialInputs) {
  DenseNet<double> net(mini_spec(InputKind::seq2dt), 2);
  Tensor<double> x({2, 1, 2, 3, 5});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (auto& v : x.data) v = n(rng);
  net.zero_grad();
  const auto out = net.forward(x, true);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NO_THROW(net.backward({1.0, 1.0}));
}

TEST(Sliding, WindowCountFor540Frames) {
  EXPECT_EQ(window_starts(540, 64, 8).size(), 60u);
  EXPECT_EQ(window_starts(64, 64, 8).size(), 1u);
  EXPECT_EQ(window_starts(72, 64, 8).size(), 2u);
  EXPECT_THROW(window_starts(63, 64, 8), DataError);
}

TEST(Sliding, ConstantModelGivesConstant) {
  int calls = 0;
  const auto r = infer_sliding(540, 64, 8, [&](const std::vector<int>& starts) {
    ++calls;
    return std::vector<double>(starts.size(), 42.0);
  });
  EXPECT_EQ(r.per_window.size(), 60u);
  EXPECT_DOUBLE_EQ(r.mean, 42.0);
  EXPECT_GT(calls, 1);
  EXPECT_EQ(r.starts.back(), 59 * 8);
}

TEST(Sliding, RegressorOnSequenceOfWindowLength) {
  Regressor<float> model(mini_spec(), 4, 8, 16, 1);
  std::mt19937_64 rng(2);
  const auto x = wave_input(4, 8, 16, 1.0, rng);
  const auto r = infer_sliding(model, x);
  EXPECT_EQ(r.per_window.size(), 1u);
  const auto wrong = wave_input(4, 9, 16, 1.0, rng);
  EXPECT_THROW(infer_sliding(model, wrong), DataError);
}

TEST(Resize, FullScaleShapes) {
  PhaseSequence seq;
  seq.depth = 128;
  seq.lateral = 314;
  seq.time = 540;
  seq.data.assign(static_cast<std::size_t>(128) * 314 * 540, 0.25f);
  const auto a = preprocess_for_net(seq);
  EXPECT_EQ(a.depth, 64);
  EXPECT_EQ(a.lateral, 128);
  EXPECT_EQ(a.time, 540);
  for (float v : a.data) ASSERT_NEAR(v, 0.25f, 1e-6f);

  STMap map;
  map.lateral = 141;
  map.time = 1080;
  map.data.assign(141 * 1080, -1.5f);
  const auto b = preprocess_for_net(map);
  EXPECT_EQ(b.lateral, 64);
  EXPECT_EQ(b.time, 1024);
  for (float v : b.data) ASSERT_NEAR(v, -1.5f, 1e-6f);

  map.lateral = 140;
  map.data.resize(140 * 1080);
  EXPECT_THROW(preprocess_for_net(map), DataError);
}

TEST(Resize, PreservesMeanOfRamp) {
  std::vector<float> in(100);
  for (int i = 0; i < 100; ++i) in[i] = static_cast<float>(i);
  std::vector<int> dims{100};
  const auto out = resize_axis(in, dims, 0, 50);
  ASSERT_EQ(out.size(), 50u);
  double m = 0.0;
  for (float v : out) m += v;
  EXPECT_NEAR(m / 50.0, 49.5, 0.5);
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_GT(out[i], out[i - 1]);
}

namespace {
DatasetIndex desk_index() {
  DatasetIndex idx;
  for (int c = 0; c < 6; ++c)
    for (int p = 0; p < 5; ++p)
      for (int k = 0; k < 3; ++k) idx.entries.push_back({"", c * 5 + p, c, 3.0 * (c + 1), {0.0, 0.0}, ScanMode::cone3dt});
  return idx;
}
}  // namespace

TEST(Folds, EveryPhantomTestedExactlyOnce) {
  const auto idx = desk_index();
  const auto plan = make_folds(idx, 17);
  ASSERT_EQ(plan.folds.size(), 5u);
  std::map<int, int> times;
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.test_phantoms.size(), 6u);
    for (int p : f.test_phantoms) ++times[p];
    ASSERT_EQ(f.inner.size(), 4u);
    std::set<std::set<int>> choices;
    for (const auto& in : f.inner) {
      choices.insert(in.validation_phantoms);
      EXPECT_EQ(in.validation_phantoms.size(), 6u);
      EXPECT_EQ(in.training_phantoms.size(), 18u);
      const auto s = split_entries(idx, f, in);
      EXPECT_NO_THROW(check_split(idx, s));
      EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), idx.entries.size());
    }
    EXPECT_EQ(choices.size(), 4u);
  }
  EXPECT_EQ(times.size(), 30u);
  for (const auto& [p, n] : times) EXPECT_EQ(n, 1) << p;
}

TEST(Folds, SeededAndSeedSensitive) {
  const auto idx = desk_index();
  const auto a = make_folds(idx, 17), b = make_folds(idx, 17), c = make_folds(idx, 18);
  bool differs = false;
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(a.folds[f].test_phantoms, b.folds[f].test_phantoms);
    for (std::size_t i = 0; i < 4; ++i)
      EXPECT_EQ(a.folds[f].inner[i].validation_phantoms, b.folds[f].inner[i].validation_phantoms);
    differs |= a.folds[f].test_phantoms != c.folds[f].test_phantoms;
  }
  EXPECT_TRUE(differs);
}

TEST(Folds, RejectsTooFewPhantomsAndLeaks) {
  DatasetIndex idx;
  for (int p = 0; p < 4; ++p) idx.entries.push_back({"", p, 0, 3.0, {}, ScanMode::cone3dt});
  EXPECT_THROW(make_folds(idx, 1), DataError);
  SplitIndices leak{{0}, {0}, {}};
  EXPECT_THROW(check_split(idx, leak), DataError);
}

TEST(Training, OverfitsFourSamples) {
  std::mt19937_64 rng(3);
  std::vector<NetInput> xs;
  const std::vector<double> labels{3.0, 12.0, 24.0, 75.0};
  for (double l : labels) xs.push_back(wave_input(4, 8, 16, l / 10.0, rng));
  const auto train_set = as_samples(xs, labels);
  Regressor<float> model(mini_spec(), 4, 8, 16, 9);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch = 4;
  cfg.lr = 3e-3;
  cfg.temporal_crop = 16;
  cfg.seed = 5;
  const auto h = train(model, train_set, {}, cfg);
  const double first = h.epochs.front().train_mse;
  double best = first;
  for (const auto& e : h.epochs) best = std::min(best, e.train_mse);
  EXPECT_LE(best * 100.0, first) << "first " << first << " best " << best;
}

TEST(Training, DeterministicForSeed) {
  std::mt19937_64 rng(4);
  std::vector<NetInput> xs;
  std::vector<double> labels;
  for (int i = 0; i < 6; ++i) {
    labels.push_back(3.0 * (i + 1));
    xs.push_back(wave_input(4, 8, 24, i, rng));
  }
  const auto s = as_samples(xs, labels);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.temporal_crop = 16;
  cfg.seed = 42;
  Regressor<float> a(mini_spec(), 4, 8, 16, 1), b(mini_spec(), 4, 8, 16, 1);
  const auto ha = train(a, s, s, cfg), hb = train(b, s, s, cfg);
  ASSERT_EQ(ha.epochs.size(), hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) {
    EXPECT_EQ(ha.epochs[i].train_mse, hb.epochs[i].train_mse);
    EXPECT_EQ(ha.epochs[i].validation_mse, hb.epochs[i].validation_mse);
  }
  const auto pa = snapshot_params(a.net()), pb = snapshot_params(b.net());
  EXPECT_EQ(pa, pb);
}

TEST(Training, ResumeFromCheckpointMatchesUninterrupted) {
  std::mt19937_64 rng(6);
  std::vector<NetInput> xs;
  std::vector<double> labels;
  for (int i = 0; i < 6; ++i) {
    labels.push_back(2.0 + i);
    xs.push_back(wave_input(4, 8, 24, i, rng));
  }
  const auto s = as_samples(xs, labels);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 3;
  cfg.lr = 1e-3;
  cfg.temporal_crop = 16;
  cfg.seed = 8;

  Regressor<float> full(mini_spec(), 4, 8, 16, 2);
  TrainState<float> full_state;
  train(full, s, s, cfg, full_state);

  Regressor<float> part(mini_spec(), 4, 8, 16, 2);
  TrainState<float> part_state;
  TrainConfig first = cfg;
  first.epochs = 3;
  train(part, s, s, first, part_state);
  oce::testing::TempDir dir;
  const auto path = dir.path() / "model.ocek";
  save_checkpoint(part, &part_state, path);
  auto loaded = load_checkpoint<float>(path);
  ASSERT_TRUE(loaded.state.has_value());
  train(*loaded.model, s, s, cfg, *loaded.state);

  ASSERT_EQ(loaded.state->history.epochs.size(), full_state.history.epochs.size());
  for (std::size_t i = 3; i < 6; ++i) {
    EXPECT_EQ(loaded.state->history.epochs[i].train_mse, full_state.history.epochs[i].train_mse) << i;
    EXPECT_EQ(loaded.state->history.epochs[i].validation_mse, full_state.history.epochs[i].validation_mse) << i;
  }
}

TEST(Training, CheckpointRoundTripPredictsIdentically) {
  std::mt19937_64 rng(9);
  const auto x = wave_input(4, 8, 40, 2.0, rng);
  Regressor<float> model(mini_spec(), 4, 8, 16, 5);
  model.set_label_scaling(20.0, 7.0);
  oce::testing::TempDir dir;
  save_checkpoint<float>(model, nullptr, dir.path() / "m.ocek");
  auto loaded = load_checkpoint<float>(dir.path() / "m.ocek");
  EXPECT_FALSE(loaded.state.has_value());
  const auto a = infer_sliding(model, x), b = infer_sliding(*loaded.model, x);
  EXPECT_EQ(a.per_window, b.per_window);

  std::ofstream(dir.path() / "bad.ocek") << "OCEKxx";
  EXPECT_THROW(load_checkpoint<float>(dir.path() / "bad.ocek"), ParseError);
  EXPECT_THROW(load_checkpoint<double>(dir.path() / "m.ocek"), ParseError);
}

TEST(Training, NonFiniteLossIsNumericError) {
  std::mt19937_64 rng(1);
  std::vector<NetInput> xs{wave_input(4, 8, 16, 1.0, rng), wave_input(4, 8, 16, 2.0, rng)};
  xs[0].data[5] = std::numeric_limits<float>::quiet_NaN();
  const auto s = as_samples(xs, {3.0, 6.0});
  Regressor<float> model(mini_spec(), 4, 8, 16, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.temporal_crop = 16;
  EXPECT_THROW(train(model, s, {}, cfg), NumericError);
}

TEST(Training, ShuffledLabelsDoNotGeneralise) {
  std::mt19937_64 rng(12);
  std::vector<NetInput> train_x, val_x;
  std::vector<double> train_y, val_y;
  for (int i = 0; i < 36; ++i) {
    const double label = 3.0 + 3.0 * (i % 6);
    train_y.push_back(label);
    train_x.push_back(wave_input(4, 8, 24, label / 3.0, rng));
  }
  for (int i = 0; i < 12; ++i) {
    const double label = 3.0 + 3.0 * (i % 6);
    val_y.push_back(label);
    val_x.push_back(wave_input(4, 8, 24, label / 3.0, rng));
  }
  auto shuffled = train_y;
  std::mt19937_64 perm(99);
  std::shuffle(shuffled.begin(), shuffled.end(), perm);

  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch = 6;
  cfg.lr = 2e-3;
  cfg.temporal_crop = 16;
  cfg.seed = 3;
  const auto val = as_samples(val_x, val_y);
  Regressor<float> real(mini_spec(), 4, 8, 16, 4), fake(mini_spec(), 4, 8, 16, 4);
  train(real, as_samples(train_x, train_y), {}, cfg);
  train(fake, as_samples(train_x, shuffled), {}, cfg);
  const double real_mse = evaluate_mse(real, val, 6);
  const double fake_mse = evaluate_mse(fake, val, 6);
  EXPECT_GE(fake_mse, 3.0 * real_mse) << "real " << real_mse << " shuffled " << fake_mse;
}

TEST(Training, RejectsBadConfiguration) {
  std::mt19937_64 rng(1);
  std::vector<NetInput> xs{wave_input(4, 8, 16, 1.0, rng)};
  const auto s = as_samples(xs, {3.0});
  Regressor<float> model(mini_spec(), 4, 8, 16, 1);
  TrainConfig cfg;
  cfg.temporal_crop = 8;
  EXPECT_THROW(train(model, s, {}, cfg), ConfigError);
  cfg.temporal_crop = 16;
  cfg.epochs = 0;
  EXPECT_THROW(train(model, s, {}, cfg), ConfigError);
  cfg.epochs = 1;
  EXPECT_THROW(train(model, {}, {}, cfg), DataError);
}
