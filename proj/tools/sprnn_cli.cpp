// Command-line entry point: train, evaluate, predict, ablate, synth, gradcheck.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sprnn/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sprnn;

namespace {

enum Exit { kOk = 0, kConfigFailure = 1, kDataFailure = 2, kTrainingFailure = 3 };

struct CommonArgs {
  std::string config_file;
  std::string data_dir;
  std::string dataset_format;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::string ablation;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> epochs;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_file, "flat key = value config file");
  cmd->add_option("--data-dir", a.data_dir, "directory (or file) of trajectory CSVs");
  cmd->add_option("--dataset-format", a.dataset_format, "trajair, sdd, nba or synth");
  cmd->add_option("--out", a.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", a.seed, "run seed");
  cmd->add_option("--k", a.k, "samples per agent-window");
  cmd->add_option("--ablation", a.ablation, "vrnn, pat, pat_soc or pat_soc_att");
  cmd->add_option("--threads", a.threads, "worker threads for loading and evaluation");
  cmd->add_option("--epochs", a.epochs, "epoch limit (max_epochs)");
  cmd->add_option("--set", a.overrides, "extra key=value override; repeatable");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Config file entries with command-line flags layered on top.
std::map<std::string, std::string> user_entries(const CommonArgs& a) {
  std::map<std::string, std::string> entries;
  if (!a.config_file.empty()) entries = parse_config_text(read_text(a.config_file), a.config_file);
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    const auto parsed = parse_config_text(o.substr(0, eq) + " = " + o.substr(eq + 1), "--set");
    for (const auto& [k, v] : parsed) entries[k] = v;
  }
  if (!a.dataset_format.empty()) entries["dataset_format"] = a.dataset_format;
  if (a.seed) entries["seed"] = std::to_string(*a.seed);
  if (a.k) entries["k"] = std::to_string(*a.k);
  if (!a.ablation.empty()) entries["ablation"] = a.ablation;
  if (a.threads) entries["threads"] = std::to_string(*a.threads);
  if (a.epochs) entries["max_epochs"] = std::to_string(*a.epochs);
  return entries;
}

std::optional<fs::path> data_path(const CommonArgs& a) {
  if (a.data_dir.empty()) return std::nullopt;
  return fs::path(a.data_dir);
}

json artifact_header(const RunConfig& config) {
  return json{{"tool", "sprnn"}, {"version", kToolVersion}, {"config", serialize_config(config)}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string comment_block(const RunConfig& config) {
  std::string out = std::string("# sprnn ") + kToolVersion + "\n";
  std::istringstream in(serialize_config(config));
  for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
  return out;
}

int cmd_train(const CommonArgs& a) {
  RunConfig config = build_config(user_entries(a));
  const TrainingData data = prepare_training_data(config, data_path(a));
  config.finalize();
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "loss_log.csv", std::ios::binary);
  log << comment_block(config) << loss_log_header();
  std::cout << "training " << to_string(config.model.context.mode) << " on " << data.train.size() << " windows ("
            << data.val.size() << " validation)\n";
  TrainedModel trained = train_model(config, data, [&](const EpochLog& e) {
    log << loss_log_row(e);
    log.flush();
  });
  const std::string text = serialize_config(config);
  save_checkpoint(fs::path(a.out) / "checkpoint.bin",
                  make_checkpoint(*trained.model, &trained.fit.adam, text, trained.fit.best_epoch,
                                  trained.fit.best_metric));
  write_text(fs::path(a.out) / "config.txt", "# sprnn " + std::string(kToolVersion) + "\n" + text);
  json summary = artifact_header(config);
  summary["epochs_run"] = trained.fit.log.size();
  summary["best_epoch"] = trained.fit.best_epoch;
  summary["best_metric"] = trained.fit.best_metric;
  summary["early_stopped"] = trained.fit.early_stopped;
  summary["parameters"] = trained.model->params().scalar_count();
  write_text(fs::path(a.out) / "train_summary.json", summary.dump(2) + "\n");
  std::cout << "epochs " << trained.fit.log.size() << ", best epoch " << trained.fit.best_epoch << ", best metric "
            << trained.fit.best_metric << "\nwrote " << (fs::path(a.out) / "checkpoint.bin").string() << "\n";
  return kOk;
}

// Config stored in the checkpoint; user entries may only change data, eval and run keys.
RunConfig checkpoint_config(const Checkpoint& ck, const std::map<std::string, std::string>& user) {
  auto entries = parse_config_text(ck.config_text, "checkpoint");
  const RunConfig stored = build_config(entries);
  for (const auto& [key, value] : user) {
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it->group == "model" || key == "P") {
      RunConfig probe = stored;
      set_config_value(probe, key, value);
      if (config_value(probe, key) != config_value(stored, key)) {
        throw ConfigError("config key '" + key + "' = " + value + " conflicts with the checkpoint (" +
                          config_value(stored, key) + ")");
      }
    }
    entries[key] = value;
  }
  return build_config(entries);
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<SocialPatteRNN> model;
  std::vector<Sample> test;
};

LoadedModel load_for_inference(const CommonArgs& a, const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  LoadedModel out;
  out.config = checkpoint_config(ck, user_entries(a));
  const std::size_t D = out.config.model.backbone.D;
  out.test = prepare_test_data(out.config, data_path(a));
  if (out.config.model.backbone.D != D) {
    throw ConfigError("data has D = " + std::to_string(out.config.model.backbone.D) + " but the checkpoint has D = " +
                      std::to_string(D));
  }
  out.config.finalize();
  out.model = std::make_unique<SocialPatteRNN>(out.config.model, out.config.seed);
  load_parameters(*out.model, ck);
  return out;
}

int cmd_evaluate(const CommonArgs& a, const std::string& checkpoint, const std::string& oracle_pred) {
  json report;
  MetricsReport metrics;
  RunConfig config;
  if (!oracle_pred.empty()) {
    config = checkpoint.empty() ? build_config(user_entries(a)) : checkpoint_config(load_checkpoint(checkpoint), user_entries(a));
    const auto test = prepare_test_data(config, data_path(a));
    config.finalize();
    const PredictionSet preds = read_predictions_csv(oracle_pred, test);
    metrics = score(preds, config.eval.joint_best, units_label(config.data.format));
    report = artifact_header(config);
    report["source"] = "predictions:" + oracle_pred;
  } else {
    if (checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint or --oracle-pred");
    LoadedModel loaded = load_for_inference(a, checkpoint);
    config = loaded.config;
    metrics = evaluate(loaded.test, *loaded.model, config.eval, units_label(config.data.format));
    report = artifact_header(config);
    report["source"] = "checkpoint:" + checkpoint;
    report["ablation"] = to_string(config.model.context.mode);
    report["parameters"] = loaded.model->params().scalar_count();
  }
  report["metrics"] = to_json(metrics);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "metrics.json", report.dump(2) + "\n");
  std::cout << "min_ade " << metrics.min_ade << " " << metrics.units << ", min_fde " << metrics.min_fde << " "
            << metrics.units << " (K=" << metrics.K << ", " << metrics.agent_windows << " agent-windows)\n";
  return kOk;
}

int cmd_predict(const CommonArgs& a, const std::string& checkpoint, bool svg) {
  if (checkpoint.empty()) throw ConfigError("predict needs --checkpoint");
  LoadedModel loaded = load_for_inference(a, checkpoint);
  const PredictionSet preds = predict(loaded.test, *loaded.model, loaded.config.eval);
  fs::create_directories(a.out);
  const fs::path csv = fs::path(a.out) / "predictions.csv";
  write_predictions_csv(csv, preds);
  write_text(fs::path(a.out) / "predictions.json", artifact_header(loaded.config).dump(2) + "\n");
  if (svg) write_svg(fs::path(a.out) / "overlay.svg", preds);
  std::cout << "wrote " << preds.agents.size() << " agent-windows x " << preds.K << " samples to " << csv.string()
            << "\n";
  return kOk;
}

int cmd_ablate(const CommonArgs& a, std::size_t seeds) {
  RunConfig config = build_config(user_entries(a));
  const auto rows = run_ablation(config, data_path(a), seeds, &std::cout);
  json report = artifact_header(config);
  report["seeds"] = seeds;
  report["rows"] = json::array();
  std::string csv = comment_block(config) + "mode,parameters,mean_min_ade,mean_min_fde,units\n";
  const std::string units = units_label(config.data.format);
  for (const auto& row : rows) {
    json r{{"mode", to_string(row.mode)},
           {"parameters", row.parameters},
           {"mean_min_ade", row.mean_min_ade},
           {"mean_min_fde", row.mean_min_fde},
           {"units", units},
           {"per_seed", json::array()}};
    for (const auto& m : row.per_seed) r["per_seed"].push_back(to_json(m));
    report["rows"].push_back(r);
    char line[256];
    std::snprintf(line, sizeof line, "%s,%zu,%.17g,%.17g,%s\n", to_string(row.mode).c_str(), row.parameters,
                  row.mean_min_ade, row.mean_min_fde, units.c_str());
    csv += line;
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "ablation.json", report.dump(2) + "\n");
  write_text(fs::path(a.out) / "ablation.csv", csv);
  for (const auto& row : rows) {
    std::printf("%-12s params %7zu  ADE %.4f  FDE %.4f %s\n", to_string(row.mode).c_str(), row.parameters,
                row.mean_min_ade, row.mean_min_fde, units.c_str());
  }
  return kOk;
}

int cmd_synth(const CommonArgs& a, bool held_out) {
  auto entries = user_entries(a);
  entries["dataset_format"] = "synth";
  RunConfig config = build_config(entries);
  const auto scenes = load_scenes(config, std::nullopt, held_out);
  fs::create_directories(a.out);
  write_trajectory_csv(fs::path(a.out) / "trajectories.csv", scenes);
  json gen = artifact_header(config);
  SynthSpec spec = config.synth;
  if (held_out) spec.scenes = config.synth_test_scenes;
  gen["spec"] = spec.describe();
  gen["seed"] = held_out ? derive_seed(config.seed, 0x7e57u) : config.seed;
  gen["scenes"] = json::array();
  for (const auto& s : scenes) {
    json scene{{"scene_id", s.scene_id}};
    if (s.oracle) {
      scene["rule"] = s.oracle->rule;
      scene["speed"] = s.oracle->speed;
      scene["heading"] = s.oracle->heading;
    }
    gen["scenes"].push_back(scene);
  }
  write_text(fs::path(a.out) / "generator.json", gen.dump(2) + "\n");
  std::cout << "wrote " << scenes.size() << " scenes to " << (fs::path(a.out) / "trajectories.csv").string() << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& ablation, bool all, std::uint64_t seed, double eps, bool plain,
                  const std::string& corrupt_op, double corrupt_factor) {
  if (!corrupt_op.empty()) set_backward_corruption(corrupt_op, corrupt_factor);
  std::vector<AblationMode> modes;
  if (all) modes = {AblationMode::vrnn, AblationMode::pat, AblationMode::pat_soc, AblationMode::pat_soc_att};
  else modes = {parse_ablation(ablation.empty() ? "pat_soc_att" : ablation)};
  constexpr double kThreshold = 1e-4;
  int code = kOk;
  for (auto mode : modes) {
    const GradCheckResult r = run_gradcheck(mode, seed, eps, plain ? FdScheme::central : FdScheme::richardson);
    const bool pass = r.max_relative_error < kThreshold;
    std::printf("%s %-12s max_relative_error %.3e over %zu scalars (%zu skipped at breakpoints); worst %s[%zu] "
                "analytic %.9g numeric %.9g\n",
                pass ? "PASS" : "FAIL", to_string(mode).c_str(), r.max_relative_error, r.checked, r.skipped,
                r.worst_parameter.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
    if (!pass) {
      std::fprintf(stderr, "gradient check failed in parameter %s\n", r.worst_parameter.c_str());
      code = kConfigFailure;
    }
  }
  set_backward_corruption("", 1.0);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory prediction with motion patterns and social attention"};
  app.footer(config_reference());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("sprnn ") + kToolVersion);

  CommonArgs common;
  std::string checkpoint, oracle_pred;
  std::size_t seeds = 3;
  bool svg = false, held_out = false, all_modes = false;
  std::uint64_t gc_seed = 0;
  double eps = kGradcheckEps, corrupt_factor = 2.0;
  bool plain_fd = false;
  std::string gc_ablation, corrupt_op;

  auto* train = app.add_subcommand("train", "train a model and write the best checkpoint");
  add_common(train, common);
  auto* evaluate_cmd = app.add_subcommand("evaluate", "best-of-K ADE/FDE report");
  add_common(evaluate_cmd, common);
  evaluate_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  evaluate_cmd->add_option("--oracle-pred", oracle_pred, "score a predictions CSV instead of a model");
  auto* predict_cmd = app.add_subcommand("predict", "write sampled futures as CSV");
  add_common(predict_cmd, common);
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict_cmd->add_flag("--svg", svg, "also write overlay.svg");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate all four ablation modes");
  add_common(ablate, common);
  ablate->add_option("--seeds", seeds, "number of seeds (seed, seed+1, ...)")->capture_default_str();
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, common);
  synth->add_flag("--held-out", held_out, "generate the held-out scene set");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the tiny model");
  gradcheck->add_option("--ablation", gc_ablation, "mode to check (default pat_soc_att)");
  gradcheck->add_flag("--all", all_modes, "check all four modes");
  gradcheck->add_option("--seed", gc_seed, "fixture seed")->capture_default_str();
  gradcheck->add_option("--eps", eps, "finite difference step")->capture_default_str();
  gradcheck->add_flag("--plain", plain_fd, "plain central differences instead of Richardson extrapolation");
  gradcheck->add_option("--corrupt-op", corrupt_op, "scale the backward rule of this op (negative control)");
  gradcheck->add_option("--corrupt-factor", corrupt_factor, "factor for --corrupt-op")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigFailure;
  }

  try {
    if (*train) return cmd_train(common);
    if (*evaluate_cmd) return cmd_evaluate(common, checkpoint, oracle_pred);
    if (*predict_cmd) return cmd_predict(common, checkpoint, svg);
    if (*ablate) return cmd_ablate(common, seeds);
    if (*synth) return cmd_synth(common, held_out);
    if (*gradcheck) return cmd_gradcheck(gc_ablation, all_modes, gc_seed, eps, plain_fd, corrupt_op, corrupt_factor);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  }
  return kOk;
}
