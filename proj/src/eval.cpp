#include "sprnn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

namespace sprnn {

std::uint64_t noise_stream_seed(std::uint64_t seed, const std::string& scene_id, std::size_t window, std::size_t k,
                                const std::string& agent_id) {
  return derive_seed(seed, hash_string(scene_id), window, k, hash_string(agent_id));
}

PredictionSet sample_k(const Sample& sample, const SocialPatteRNN& model, std::size_t K, std::uint64_t seed,
                       double noise_scale) {
  if (K < 1) throw std::invalid_argument("sample_k: K must be >= 1");
  const Sample* one[] = {&sample};
  const Batch batch = make_batch(one, K);
  std::vector<std::uint64_t> seeds(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    seeds[r] = noise_stream_seed(seed, sample.scene_id, sample.window, batch.row_copy[r],
                                 sample.agent_ids[batch.row_agent[r]]);
  }
  NoiseStreams noise = NoiseStreams::per_row(std::move(seeds));
  noise.set_scale(noise_scale);
  const Rollout rollout = model.rollout(model.warmup(batch, noise), batch, sample.F, noise);

  PredictionSet out;
  out.K = K;
  out.F = sample.F;
  out.D = sample.D;
  std::vector<std::size_t> slot(sample.agents(), 0);
  for (std::size_t a = 0; a < sample.agents(); ++a) {
    if (!sample.complete[a]) continue;
    slot[a] = out.agents.size();
    const Matrix abs = sample.absolute(a);
    AgentPrediction p;
    p.scene_id = sample.scene_id;
    p.window = sample.window;
    p.agent_id = sample.agent_ids[a];
    p.history = Matrix(sample.H, sample.D);
    p.ground_truth = Matrix(sample.F, sample.D);
    for (std::size_t t = 0; t < sample.H; ++t) std::copy_n(abs.row(t).begin(), sample.D, p.history.row(t).begin());
    for (std::size_t t = 0; t < sample.F; ++t)
      std::copy_n(abs.row(sample.H + t).begin(), sample.D, p.ground_truth.row(t).begin());
    p.samples.resize(K);
    out.agents.push_back(std::move(p));
  }
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t a = batch.row_agent[r];
    if (!sample.complete[a]) continue;
    out.agents[slot[a]].samples[batch.row_copy[r]] = rollout.positions[r];
  }
  return out;
}

PredictionSet predict(std::span<const Sample> samples, const SocialPatteRNN& model, const EvalOptions& options) {
  if (samples.empty()) throw std::invalid_argument("predict: empty sample set");
  std::vector<PredictionSet> parts(samples.size());
  std::vector<std::string> errors(samples.size());
  auto run = [&](std::size_t i) {
    try {
      parts[i] = sample_k(samples[i], model, options.K, options.seed, options.noise_scale);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, samples.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("predict: scene " + samples[i].scene_id + " window " +
                               std::to_string(samples[i].window) + ": " + errors[i]);
    }
  }
  PredictionSet out;
  out.K = options.K;
  out.F = samples.front().F;
  out.D = samples.front().D;
  for (auto& part : parts)
    for (auto& a : part.agents) out.agents.push_back(std::move(a));
  return out;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return std::sqrt(s);
}

void check_shapes(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols || a.rows == 0) {
    throw ShapeError(std::string(what) + ": prediction " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs ground truth " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

}  // namespace

double ade(const Matrix& prediction, const Matrix& truth) {
  check_shapes(prediction, truth, "ade");
  double s = 0.0;
  for (std::size_t t = 0; t < truth.rows; ++t) s += distance(prediction.row(t), truth.row(t));
  return s / static_cast<double>(truth.rows);
}

double fde(const Matrix& prediction, const Matrix& truth) {
  check_shapes(prediction, truth, "fde");
  return distance(prediction.row(truth.rows - 1), truth.row(truth.rows - 1));
}

MetricsReport score(const PredictionSet& predictions, bool joint_best, const std::string& units) {
  if (predictions.agents.empty()) throw std::invalid_argument("evaluate: no agent-windows to score");
  MetricsReport report;
  report.units = units;
  report.K = predictions.K;
  report.joint_best = joint_best;
  std::vector<std::pair<std::string, std::size_t>> windows;
  double sum_ade = 0.0, sum_fde = 0.0;
  for (const auto& agent : predictions.agents) {
    if (agent.samples.empty()) throw std::invalid_argument("evaluate: agent " + agent.agent_id + " has no samples");
    double best_ade = std::numeric_limits<double>::infinity();
    double best_fde = std::numeric_limits<double>::infinity();
    double fde_of_best_ade = 0.0;
    for (const auto& s : agent.samples) {
      const double a = ade(s, agent.ground_truth);
      const double f = fde(s, agent.ground_truth);
      if (a < best_ade) {
        best_ade = a;
        fde_of_best_ade = f;
      }
      best_fde = std::min(best_fde, f);
    }
    sum_ade += best_ade;
    sum_fde += joint_best ? fde_of_best_ade : best_fde;
    windows.emplace_back(agent.scene_id, agent.window);
  }
  std::sort(windows.begin(), windows.end());
  report.windows = static_cast<std::size_t>(std::unique(windows.begin(), windows.end()) - windows.begin());
  report.agent_windows = predictions.agents.size();
  report.min_ade = sum_ade / static_cast<double>(report.agent_windows);
  report.min_fde = sum_fde / static_cast<double>(report.agent_windows);
  return report;
}

MetricsReport evaluate(std::span<const Sample> samples, const SocialPatteRNN& model, const EvalOptions& options,
                       const std::string& units) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty test set");
  return score(predict(samples, model, options), options.joint_best, units);
}

nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{{"min_ade", r.min_ade},
                        {"min_fde", r.min_fde},
                        {"units", r.units},
                        {"agent_windows", r.agent_windows},
                        {"windows", r.windows},
                        {"k", r.K},
                        {"joint_best", r.joint_best},
                        {"averaging", r.averaging}};
}

void write_predictions_csv(const std::filesystem::path& file, const PredictionSet& predictions) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  static const char* axis[] = {"x", "y", "z"};
  out << "scene_id,window,agent_id,k,t";
  for (std::size_t d = 0; d < predictions.D; ++d) out << ',' << axis[d];
  out << '\n';
  char buf[64];
  for (const auto& agent : predictions.agents) {
    for (std::size_t k = 0; k < agent.samples.size(); ++k) {
      const Matrix& s = agent.samples[k];
      for (std::size_t t = 0; t < s.rows; ++t) {
        out << agent.scene_id << ',' << agent.window << ',' << agent.agent_id << ',' << k << ',' << t;
        for (std::size_t d = 0; d < s.cols; ++d) {
          std::snprintf(buf, sizeof buf, "%.17g", s(t, d));
          out << ',' << buf;
        }
        out << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

PredictionSet read_predictions_csv(const std::filesystem::path& file, std::span<const Sample> samples) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open predictions file " + file.string());
  if (samples.empty()) throw std::invalid_argument("read_predictions_csv: no samples to match against");
  const std::size_t D = samples.front().D, F = samples.front().F, H = samples.front().H;

  using Key = std::tuple<std::string, std::size_t, std::string>;
  std::map<Key, std::map<std::size_t, Matrix>> rows;
  std::vector<Key> order;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  std::getline(in, line);
  ++line_no;
  if (line.rfind("scene_id,window,agent_id,k,t", 0) != 0) fail("unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5 + D) fail("expected " + std::to_string(5 + D) + " fields");
    std::size_t window = 0, k = 0, t = 0;
    std::vector<double> xyz(D);
    try {
      window = std::stoul(f[1]);
      k = std::stoul(f[3]);
      t = std::stoul(f[4]);
      for (std::size_t d = 0; d < D; ++d) xyz[d] = std::stod(f[5 + d]);
    } catch (const std::exception&) {
      fail("malformed number");
    }
    if (t >= F) fail("future step " + std::to_string(t) + " outside horizon " + std::to_string(F));
    Key key{f[0], window, f[2]};
    auto [it, fresh] = rows.try_emplace(key);
    if (fresh) order.push_back(key);
    auto& m = it->second.try_emplace(k, Matrix(F, D, std::numeric_limits<double>::quiet_NaN())).first->second;
    std::copy(xyz.begin(), xyz.end(), m.row(t).begin());
  }

  PredictionSet out;
  out.F = F;
  out.D = D;
  for (const auto& key : order) {
    const auto& [scene, window, agent_id] = key;
    const Sample* match = nullptr;
    std::size_t a = 0;
    for (const auto& s : samples) {
      if (s.scene_id != scene || s.window != window) continue;
      auto pos = std::find(s.agent_ids.begin(), s.agent_ids.end(), agent_id);
      if (pos == s.agent_ids.end()) continue;
      match = &s;
      a = static_cast<std::size_t>(pos - s.agent_ids.begin());
      break;
    }
    if (!match) {
      throw std::runtime_error(file.string() + ": no test sample for scene " + scene + " window " +
                               std::to_string(window) + " agent " + agent_id);
    }
    const auto& by_k = rows.at(key);
    if (out.K == 0) out.K = by_k.size();
    if (by_k.size() != out.K || by_k.rbegin()->first + 1 != out.K) {
      throw std::runtime_error(file.string() + ": agent " + agent_id + " has an inconsistent set of sample indices");
    }
    AgentPrediction p;
    p.scene_id = scene;
    p.window = window;
    p.agent_id = agent_id;
    const Matrix abs = match->absolute(a);
    p.history = Matrix(H, D);
    p.ground_truth = Matrix(F, D);
    for (std::size_t t = 0; t < H; ++t) std::copy_n(abs.row(t).begin(), D, p.history.row(t).begin());
    for (std::size_t t = 0; t < F; ++t) std::copy_n(abs.row(H + t).begin(), D, p.ground_truth.row(t).begin());
    for (const auto& [k, m] : by_k) {
      for (double v : m.values) {
        if (std::isnan(v)) throw std::runtime_error(file.string() + ": agent " + agent_id + " sample " +
                                                    std::to_string(k) + " is missing future steps");
      }
      p.samples.push_back(m);
    }
    out.agents.push_back(std::move(p));
  }
  if (out.agents.empty()) throw std::runtime_error(file.string() + ": no predictions");
  return out;
}

void write_svg(const std::filesystem::path& file, const PredictionSet& predictions, std::size_t max_agents) {
  const std::size_t n = std::min(max_agents, predictions.agents.size());
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_x;
  auto extend = [&](const Matrix& m) {
    for (std::size_t t = 0; t < m.rows; ++t) {
      lo_x = std::min(lo_x, m(t, 0));
      hi_x = std::max(hi_x, m(t, 0));
      const double y = m.cols > 1 ? m(t, 1) : 0.0;
      lo_y = std::min(lo_y, y);
      hi_y = std::max(hi_y, y);
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = predictions.agents[i];
    extend(a.history);
    extend(a.ground_truth);
    for (const auto& s : a.samples) extend(s);
  }
  if (n == 0) lo_x = lo_y = 0.0, hi_x = hi_y = 1.0;
  const double size = 800.0, margin = 20.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double k = (size - 2 * margin) / span;
  auto point = [&](const Matrix& m, std::size_t t) {
    const double y = m.cols > 1 ? m(t, 1) : 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", margin + (m(t, 0) - lo_x) * k, size - margin - (y - lo_y) * k);
    return std::string(buf);
  };
  auto polyline = [&](std::ostream& out, const Matrix& m, const Matrix* before, const char* style) {
    out << "<polyline fill=\"none\" " << style << " points=\"";
    if (before && before->rows > 0) out << point(*before, before->rows - 1);
    for (std::size_t t = 0; t < m.rows; ++t) out << point(m, t);
    out << "\"/>\n";
  };
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = predictions.agents[i];
    for (const auto& s : a.samples) polyline(out, s, &a.history, "stroke=\"#d62728\" stroke-opacity=\"0.35\"");
    polyline(out, a.ground_truth, &a.history, "stroke=\"#2ca02c\" stroke-width=\"2\"");
    polyline(out, a.history, nullptr, "stroke=\"#1f77b4\" stroke-width=\"2\"");
  }
  out << "</svg>\n";
}

}  // namespace sprnn
