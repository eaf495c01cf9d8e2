#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "sprnn/pipeline.hpp"

using namespace sprnn;

namespace {

std::vector<std::vector<double>> snapshot(const ParameterStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : store) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

std::vector<Sample> tiny_samples(std::uint64_t seed, std::size_t scenes = 3) {
  SynthSpec spec;
  spec.scenes = scenes;
  spec.agents = 3;
  spec.length = 8;
  spec.heading_noise = 0.1;
  DatasetConfig data;
  data.H = 3;
  data.F = 3;
  data.P = 2;
  data.stride = 2;
  return make_samples(synth_generate(spec, seed), data);
}

ModelConfig tiny_model(AblationMode mode) { return gradcheck_setup(mode, 0).model; }

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

// Hand-rolled trace of the stopping rule: stop once `patience` epochs pass
// without a strictly smaller value. Returns the 1-based stop epoch or 0.
std::size_t traced_stop_epoch(const std::vector<double>& metric, std::size_t patience) {
  double best = INFINITY;
  std::size_t since = 0;
  for (std::size_t e = 0; e < metric.size(); ++e) {
    if (metric[e] < best) {
      best = metric[e];
      since = 0;
    } else if (++since >= patience) {
      return e + 1;
    }
  }
  return 0;
}

std::size_t rule_stop_epoch(const std::vector<double>& metric, std::size_t patience) {
  for (std::size_t e = 1; e <= metric.size(); ++e)
    if (early_stop(std::span(metric).first(e), patience).stop) return e;
  return 0;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path path;
};

}  // namespace

TEST(Adam, ZeroGradientIsFixedPoint) {
  ParameterStore store;
  store.add("x", Tensor::vector({1.0, -2.0}, true));
  store.zero_grad();
  AdamState state;
  adam_step(store, state, 0.1);
  EXPECT_EQ(store.at("x").data()[0], 1.0);
  EXPECT_EQ(store.at("x").data()[1], -2.0);
  EXPECT_EQ(state.m["x"], (std::vector<double>{0, 0}));
  EXPECT_EQ(state.v["x"], (std::vector<double>{0, 0}));
}

TEST(Adam, FirstStepByHand) {
  ParameterStore store;
  store.add("x", Tensor::scalar(0.0, true));
  store.zero_grad();
  store.at("x").mutable_grad()[0] = 1.0;
  AdamState state;
  adam_step(store, state, 0.1);
  // m = 0.1, v = 0.001, m_hat = v_hat = 1, step = -0.1 / (1 + 1e-8)
  EXPECT_NEAR(store.at("x").data()[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(state.m["x"][0], 0.1, 1e-15);
  EXPECT_NEAR(state.v["x"][0], 0.001, 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, QuadraticConverges) {
  ParameterStore store;
  store.add("x", Tensor::scalar(1.0, true));
  AdamState state;
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    backward(square(store.at("x")));
    adam_step(store, state, 0.05);
  }
  EXPECT_LT(std::abs(store.at("x").data()[0]), 0.1);
}

TEST(Adam, MissingGradientThrows) {
  ParameterStore store;
  store.add("x", Tensor::scalar(1.0, true));
  AdamState state;
  EXPECT_THROW(adam_step(store, state, 0.1), TrainingError);
}

TEST(Clip, PreservesDirection) {
  ParameterStore store;
  store.add("a", Tensor::vector({0, 0}, true));
  store.add("b", Tensor::vector({0}, true));
  store.zero_grad();
  store.at("a").mutable_grad()[0] = 3.0;
  store.at("a").mutable_grad()[1] = 0.0;
  store.at("b").mutable_grad()[0] = -4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(store.at("a").grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(store.at("b").grad()[0], -0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 10.0), 1.0);
  EXPECT_NEAR(store.at("a").grad()[0], 0.6, 1e-15);
}

TEST(EarlyStop, StrictlyDecreasingNeverStops) {
  std::vector<double> m;
  for (int i = 0; i < 1000; ++i) m.push_back(1000.0 - i);
  EXPECT_FALSE(early_stop(m, 10).stop);
  EXPECT_EQ(rule_stop_epoch(m, 10), 0u);
}

TEST(EarlyStop, ConstantStopsAtEleven) {
  const std::vector<double> m(30, 1.0);
  EXPECT_EQ(rule_stop_epoch(m, 10), 11u);
  EXPECT_EQ(early_stop(std::span(m).first(11), 10).best_epoch, 0u);
}

TEST(EarlyStop, NoisyFixtureMatchesHandTrace) {
  const std::vector<double> m = {5.0, 4.0, 4.5, 3.0, 3.2, 3.0, 2.9, 3.1, 3.05, 2.95, 3.3, 3.4, 2.0};
  // best 2.9 at epoch 7; epochs 8..10 do not beat it, so patience 3 stops at 10
  EXPECT_EQ(traced_stop_epoch(m, 3), 10u);
  EXPECT_EQ(rule_stop_epoch(m, 3), 10u);
  EXPECT_EQ(early_stop(std::span(m).first(10), 3).best_epoch, 6u);
  for (std::size_t p = 1; p <= 6; ++p) EXPECT_EQ(rule_stop_epoch(m, p), traced_stop_epoch(m, p)) << p;
}

TEST(KlWarmup, LinearRamp) {
  TrainConfig c;
  EXPECT_EQ(kl_weight_for_epoch(c, 0), 1.0);
  c.kl_warmup_epochs = 4;
  EXPECT_DOUBLE_EQ(kl_weight_for_epoch(c, 0), 0.25);
  EXPECT_DOUBLE_EQ(kl_weight_for_epoch(c, 3), 1.0);
  EXPECT_DOUBLE_EQ(kl_weight_for_epoch(c, 10), 1.0);
}

TEST(Epoch, ZeroLearningRateLeavesParameters) {
  SocialPatteRNN model(tiny_model(AblationMode::pat_soc_att), 1);
  const auto before = snapshot(model.params());
  TrainConfig c;
  c.lr = 0.0;
  AdamState state;
  const auto samples = tiny_samples(2);
  train_epoch(model, samples, c, state, 0);
  EXPECT_EQ(snapshot(model.params()), before);
}

TEST(Epoch, DeterministicAcrossRuns) {
  auto run = [] {
    SocialPatteRNN model(tiny_model(AblationMode::pat_soc_att), 3);
    TrainConfig c;
    c.batch_size = 2;
    c.seed = 9;
    AdamState state;
    const auto samples = tiny_samples(4);
    std::vector<double> totals;
    for (std::size_t e = 0; e < 3; ++e) totals.push_back(train_epoch(model, samples, c, state, e).total);
    return std::make_pair(totals, snapshot(model.params()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Epoch, NonFiniteLossReportsBatchAndTerms) {
  SocialPatteRNN model(tiny_model(AblationMode::vrnn), 1);
  model.params().at(model.params().names().front()).mutable_data()[0] = std::nan("");
  TrainConfig c;
  AdamState state;
  const auto samples = tiny_samples(2);
  try {
    train_epoch(model, samples, c, state, 0);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("nll"), std::string::npos) << msg;
  }
}

TEST(Ablation, ParameterCountsIncrease) {
  std::vector<std::size_t> counts;
  for (auto mode : {AblationMode::vrnn, AblationMode::pat, AblationMode::pat_soc, AblationMode::pat_soc_att}) {
    ModelConfig m;
    m.context.mode = mode;
    SocialPatteRNN model(m, 0);
    counts.push_back(model.params().scalar_count());
    if (mode == AblationMode::vrnn) {
      EXPECT_EQ(model.context(), nullptr);
      for (const auto& name : model.params().names()) EXPECT_EQ(name.rfind("context", 0), std::string::npos) << name;
    }
  }
  for (std::size_t i = 1; i < counts.size(); ++i) EXPECT_GT(counts[i], counts[i - 1]);
}

TEST(Fit, KeepsBestParametersAndLogsEveryEpoch) {
  SocialPatteRNN model(tiny_model(AblationMode::pat), 5);
  const auto samples = tiny_samples(6, 4);
  auto [train, val] = split_samples(samples, 0.25, 1);
  TrainConfig c;
  c.max_epochs = 12;
  c.patience = 3;
  std::size_t calls = 0;
  const FitResult r = fit(model, train, val, c, [&](const EpochLog&) { ++calls; });
  EXPECT_EQ(calls, r.log.size());
  EXPECT_LE(r.log.size(), 12u);
  double best = INFINITY;
  for (const auto& e : r.log) best = std::min(best, e.val.total);
  EXPECT_EQ(r.best_metric, best);
  EXPECT_EQ(evaluate_loss(model, val, c).total, best);
}

TEST(Checkpoint, RoundTripIsBitExactAndResaveIdentical) {
  TempDir dir("sprnn_ckpt_roundtrip");
  SocialPatteRNN model(tiny_model(AblationMode::pat_soc_att), 7);
  TrainConfig c;
  AdamState state;
  const auto samples = tiny_samples(8);
  train_epoch(model, samples, c, state, 0);
  const Checkpoint ck = make_checkpoint(model, &state, "H = 3\n", 1, 0.5);
  save_checkpoint(dir.path / "a.bin", ck);
  const Checkpoint back = load_checkpoint(dir.path / "a.bin");
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.adam_m, ck.adam_m);
  EXPECT_EQ(back.adam_v, ck.adam_v);
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(back.adam_step, state.step);
  EXPECT_EQ(back.best_metric, 0.5);
  save_checkpoint(dir.path / "b.bin", back);
  EXPECT_EQ(read_bytes(dir.path / "a.bin"), read_bytes(dir.path / "b.bin"));

  SocialPatteRNN other(tiny_model(AblationMode::pat_soc_att), 99);
  load_parameters(other, back);
  EXPECT_EQ(snapshot(other.params()), snapshot(model.params()));
  const AdamState restored = adam_from_checkpoint(back);
  EXPECT_EQ(restored.m, state.m);
  EXPECT_EQ(restored.v, state.v);
}

TEST(Checkpoint, CorruptHeaderVersionAndTruncationRejected) {
  TempDir dir("sprnn_ckpt_corrupt");
  SocialPatteRNN model(tiny_model(AblationMode::pat), 7);
  save_checkpoint(dir.path / "ok.bin", make_checkpoint(model, nullptr, "", 0, 1.0));
  const std::string bytes = read_bytes(dir.path / "ok.bin");

  std::string bad_magic = bytes;
  bad_magic[2] ^= 0x20;
  write_bytes(dir.path / "magic.bin", bad_magic);
  EXPECT_THROW(load_checkpoint(dir.path / "magic.bin"), CheckpointError);

  std::string bad_version = bytes;
  bad_version[8] = static_cast<char>(kCheckpointVersion + 1);
  write_bytes(dir.path / "version.bin", bad_version);
  try {
    load_checkpoint(dir.path / "version.bin");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  write_bytes(dir.path / "short.bin", bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_checkpoint(dir.path / "short.bin"), CheckpointError);
  write_bytes(dir.path / "long.bin", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir.path / "long.bin"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path / "missing.bin"), CheckpointError);
}

TEST(Checkpoint, UnknownOrMissingParametersRejected) {
  SocialPatteRNN model(tiny_model(AblationMode::pat), 7);
  Checkpoint ck = make_checkpoint(model, nullptr, "", 0, 1.0);
  Checkpoint extra = ck;
  extra.params["context.bogus.weight"] = StoredTensor{{1}, {0.0}};
  EXPECT_THROW(load_parameters(model, extra), CheckpointError);
  Checkpoint missing = ck;
  missing.params.erase(missing.params.begin());
  EXPECT_THROW(load_parameters(model, missing), CheckpointError);
  Checkpoint reshaped = ck;
  reshaped.params.begin()->second.shape.push_back(1);
  EXPECT_THROW(load_parameters(model, reshaped), CheckpointError);
  SocialPatteRNN vrnn(tiny_model(AblationMode::vrnn), 7);
  EXPECT_THROW(load_parameters(vrnn, ck), CheckpointError);
}
