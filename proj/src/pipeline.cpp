#include "sprnn/pipeline.hpp"

#include <cstdio>

namespace sprnn {

std::vector<Scene> load_scenes(RunConfig& config, const std::optional<std::filesystem::path>& data_dir, bool held_out) {
  std::vector<Scene> scenes;
  if (data_dir) {
    scenes = load_dataset(*data_dir, config.data, config.threads);
    if (scenes.empty()) throw DataError("no scenes in " + data_dir->string());
    const std::size_t D = scenes.front().D;
    config.model.backbone.D = config.model.context.D = config.synth.dims = D;
  } else {
    if (config.data.format != DatasetFormat::synth) {
      throw DataError("dataset format " + to_string(config.data.format) + " needs --data-dir");
    }
    SynthSpec spec = config.synth;
    if (held_out) spec.scenes = config.synth_test_scenes;
    scenes = synth_generate(spec, held_out ? derive_seed(config.seed, 0x7e57u) : config.seed);
  }
  if (config.data.min_agents > 1) scenes = filter_min_agents(scenes, config.data.min_agents, config.data.window());
  return scenes;
}

TrainingData prepare_training_data(RunConfig& config, const std::optional<std::filesystem::path>& data_dir) {
  const auto scenes = load_scenes(config, data_dir, false);
  auto samples = make_samples(scenes, config.data);
  if (samples.empty()) {
    throw DataError("no training windows of " + std::to_string(config.data.window()) + " steps" +
                    (data_dir ? " in " + data_dir->string() : std::string()));
  }
  auto [train, val] = split_samples(std::move(samples), config.data.val_fraction, config.seed);
  return {std::move(train), std::move(val), units_label(config.data.format)};
}

std::vector<Sample> prepare_test_data(RunConfig& config, const std::optional<std::filesystem::path>& data_dir) {
  auto samples = make_samples(load_scenes(config, data_dir, true), config.data);
  if (samples.empty()) {
    throw DataError("no test windows of " + std::to_string(config.data.window()) + " steps" +
                    (data_dir ? " in " + data_dir->string() : std::string()));
  }
  return samples;
}

TrainedModel train_model(const RunConfig& config, const TrainingData& data,
                         const std::function<void(const EpochLog&)>& on_epoch) {
  TrainedModel out;
  out.model = std::make_unique<SocialPatteRNN>(config.model, config.seed);
  out.fit = fit(*out.model, data.train, data.val, config.train, on_epoch);
  return out;
}

std::string loss_log_header() {
  return "epoch,kl_weight,train_nll,train_kl,train_pattern,train_total,val_nll,val_kl,val_pattern,val_total\n";
}

std::string loss_log_row(const EpochLog& log) {
  char buf[512];
  if (log.has_val) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", log.epoch,
                  log.kl_weight, log.train.nll, log.train.kl, log.train.pattern_mse, log.train.total, log.val.nll,
                  log.val.kl, log.val.pattern_mse, log.val.total);
  } else {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,,,,\n", log.epoch, log.kl_weight, log.train.nll,
                  log.train.kl, log.train.pattern_mse, log.train.total);
  }
  return buf;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const std::optional<std::filesystem::path>& data_dir,
                                      std::size_t seeds, std::ostream* progress) {
  if (seeds < 1) throw ConfigError("ablation needs at least one seed");
  const AblationMode modes[] = {AblationMode::vrnn, AblationMode::pat, AblationMode::pat_soc,
                                AblationMode::pat_soc_att};
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    AblationRow row;
    row.mode = mode;
    rows.push_back(row);
  }
  for (std::size_t s = 0; s < seeds; ++s) {
    RunConfig base = config;
    base.seed = config.seed + s;
    base.finalize();
    TrainingData data = prepare_training_data(base, data_dir);
    const std::vector<Sample> test = prepare_test_data(base, data_dir);
    for (auto& row : rows) {
      RunConfig run = base;
      run.model.context.mode = row.mode;
      run.finalize();
      TrainedModel trained = train_model(run, data);
      row.parameters = trained.model->params().scalar_count();
      row.per_seed.push_back(evaluate(test, *trained.model, run.eval, data.units));
      if (progress) {
        *progress << "seed " << base.seed << " " << to_string(row.mode) << ": epochs " << trained.fit.log.size()
                  << " min_ade " << row.per_seed.back().min_ade << " min_fde " << row.per_seed.back().min_fde << "\n";
      }
    }
  }
  for (auto& row : rows) {
    for (const auto& r : row.per_seed) {
      row.mean_min_ade += r.min_ade / static_cast<double>(seeds);
      row.mean_min_fde += r.min_fde / static_cast<double>(seeds);
    }
  }
  return rows;
}

GradcheckSetup gradcheck_setup(AblationMode mode, std::uint64_t seed) {
  GradcheckSetup setup;
  auto& m = setup.model;
  m.backbone.D = 2;
  m.backbone.d_x = m.backbone.d_z = m.backbone.d_h = 4;
  m.backbone.mlp_hidden = 4;
  m.backbone.mlp_depth = 2;
  m.context.D = 2;
  m.context.P = 2;
  m.context.d_p = m.context.d_s = 4;
  m.context.heads = 2;
  m.context.d_h = 4;
  m.context.mlp_hidden = 4;
  m.context.mlp_depth = 2;
  m.context.mode = mode;

  SynthSpec spec;
  spec.scenes = 1;
  spec.agents = 2;
  spec.length = 5;
  spec.rule = PatternRule::weave;
  spec.heading_noise = 0.3;
  spec.arena = 2.0;
  DatasetConfig data;
  data.H = 3;
  data.F = 2;
  data.P = 2;
  setup.samples = make_samples(synth_generate(spec, seed), data);
  return setup;
}

GradCheckResult run_gradcheck(AblationMode mode, std::uint64_t seed, double eps, FdScheme scheme) {
  const GradcheckSetup setup = gradcheck_setup(mode, seed);
  SocialPatteRNN model(setup.model, seed);
  std::vector<const Sample*> ptrs;
  for (const auto& s : setup.samples) ptrs.push_back(&s);
  const Batch batch = make_batch(ptrs);
  const std::uint64_t noise_seed = derive_seed(seed, 0x9c4eu);
  auto loss = [&] {
    NoiseStreams noise = NoiseStreams::sequential(noise_seed);
    return model.forward_train(batch, noise, LossWeights{}).loss;
  };
  return finite_difference_check(loss, model.params(), eps, scheme);
}

}  // namespace sprnn
