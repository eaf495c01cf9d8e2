#include "sprnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sprnn/rng.hpp"

namespace sprnn {

std::string to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::trajair: return "trajair";
    case DatasetFormat::sdd: return "sdd";
    case DatasetFormat::nba: return "nba";
    case DatasetFormat::synth: return "synth";
  }
  return "synth";
}

DatasetFormat parse_dataset_format(const std::string& text) {
  if (text == "trajair") return DatasetFormat::trajair;
  if (text == "sdd") return DatasetFormat::sdd;
  if (text == "nba") return DatasetFormat::nba;
  if (text == "synth") return DatasetFormat::synth;
  throw std::invalid_argument("unknown dataset format '" + text + "' (expected trajair, sdd, nba or synth)");
}

std::string units_label(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::trajair: return "km";
    case DatasetFormat::sdd: return "m";
    case DatasetFormat::nba: return "ft";
    case DatasetFormat::synth: return "units";
  }
  return "units";
}

void DatasetConfig::validate() const {
  if (H < 1 || F < 1) throw std::invalid_argument("dataset config: H and F must be >= 1");
  if (P < 1 || P > F) throw std::invalid_argument("dataset config: P must satisfy 1 <= P <= F");
  if (downsample < 1) throw std::invalid_argument("dataset config: downsample must be >= 1");
  if (min_agents < 1) throw std::invalid_argument("dataset config: min_agents must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("dataset config: val_fraction must be in [0, 1)");
  if (!(units_scale > 0.0)) throw std::invalid_argument("dataset config: units_scale must be positive");
}

std::size_t Scene::present_count(std::size_t t) const {
  std::size_t n = 0;
  for (const auto& a : agents) n += a.present[t] ? 1 : 0;
  return n;
}

Matrix Sample::history(std::size_t agent) const {
  const auto& d = displacements.at(agent);
  return Matrix(H, D, std::vector<double>(d.values.begin(), d.values.begin() + H * D));
}

Matrix Sample::future(std::size_t agent) const {
  const auto& d = displacements.at(agent);
  return Matrix(F, D, std::vector<double>(d.values.begin() + H * D, d.values.end()));
}

Matrix Sample::absolute(std::size_t agent) const {
  const auto start = start_abs.row(agent);
  return from_relative(std::vector<double>(start.begin(), start.end()), displacements.at(agent));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

struct Row {
  std::string scene_id;
  std::int64_t frame;
  std::string agent_id;
  std::vector<double> position;
};

struct ParsedFile {
  std::size_t dims = 0;
  std::vector<Row> rows;
};

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

[[noreturn]] void parse_fail(const std::string& origin, std::size_t line, const std::string& what) {
  throw DataError(origin + ":" + std::to_string(line) + ": " + what);
}

ParsedFile parse_rows(const std::string& text, const std::string& origin) {
  ParsedFile parsed;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    if (lineno == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    auto fields = split_commas(view);
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (!have_header) {
      const bool ok2 = fields.size() == 5 && fields[0] == "scene_id" && fields[1] == "frame" &&
                       fields[2] == "agent_id" && fields[3] == "x" && fields[4] == "y";
      const bool ok3 = fields.size() == 6 && fields[0] == "scene_id" && fields[1] == "frame" &&
                       fields[2] == "agent_id" && fields[3] == "x" && fields[4] == "y" && fields[5] == "z";
      if (!ok2 && !ok3) parse_fail(origin, lineno, "expected header scene_id,frame,agent_id,x,y[,z]");
      parsed.dims = ok3 ? 3 : 2;
      have_header = true;
      continue;
    }
    if (fields.size() != 3 + parsed.dims) {
      parse_fail(origin, lineno, "expected " + std::to_string(3 + parsed.dims) + " fields, got " +
                                     std::to_string(fields.size()));
    }
    Row row;
    row.scene_id = std::string(fields[0]);
    row.agent_id = std::string(fields[2]);
    if (row.scene_id.empty() || row.agent_id.empty()) parse_fail(origin, lineno, "empty scene_id or agent_id");
    {
      const auto f = fields[1];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), row.frame);
      if (ec != std::errc() || p != f.data() + f.size()) {
        parse_fail(origin, lineno, "invalid frame '" + std::string(f) + "'");
      }
    }
    for (std::size_t d = 0; d < parsed.dims; ++d) {
      const auto f = fields[3 + d];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
        parse_fail(origin, lineno, "invalid coordinate '" + std::string(f) + "'");
      }
      row.position.push_back(v);
    }
    parsed.rows.push_back(std::move(row));
  }
  if (!have_header) parse_fail(origin, lineno, "missing header");
  return parsed;
}

std::vector<Scene> build_scenes(std::vector<std::pair<std::string, ParsedFile>> files, const DatasetConfig& config) {
  std::size_t dims = 0;
  std::string dims_origin;
  struct Obs {
    std::int64_t frame;
    std::vector<double> pos;
    std::string origin;
  };
  std::vector<std::string> scene_order;
  std::unordered_map<std::string, std::vector<std::string>> agent_order;
  std::unordered_map<std::string, std::unordered_map<std::string, std::vector<Obs>>> grouped;

  for (auto& [origin, parsed] : files) {
    if (parsed.rows.empty()) continue;
    if (dims == 0) {
      dims = parsed.dims;
      dims_origin = origin;
    } else if (dims != parsed.dims) {
      throw DataError(origin + ": coordinate dimension " + std::to_string(parsed.dims) + " differs from " +
                      std::to_string(dims) + " in " + dims_origin);
    }
    for (auto& row : parsed.rows) {
      auto sit = grouped.find(row.scene_id);
      if (sit == grouped.end()) {
        scene_order.push_back(row.scene_id);
        sit = grouped.emplace(row.scene_id, std::unordered_map<std::string, std::vector<Obs>>{}).first;
      }
      auto ait = sit->second.find(row.agent_id);
      if (ait == sit->second.end()) {
        agent_order[row.scene_id].push_back(row.agent_id);
        ait = sit->second.emplace(row.agent_id, std::vector<Obs>{}).first;
      }
      for (auto& v : row.position) v *= config.units_scale;
      ait->second.push_back({row.frame, std::move(row.position), origin});
    }
  }

  std::vector<Scene> scenes;
  for (const auto& scene_id : scene_order) {
    auto& agents = grouped[scene_id];
    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    std::int64_t base = 0;
    for (const auto& agent_id : agent_order[scene_id]) {
      auto& obs = agents[agent_id];
      std::stable_sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.frame < b.frame; });
      for (std::size_t k = 1; k < obs.size(); ++k) {
        if (obs[k].frame <= obs[k - 1].frame) {
          throw DataError(obs[k].origin + ": non-monotonic frames for agent " + agent_id + " in scene " + scene_id +
                          " (frame " + std::to_string(obs[k].frame) + " repeated)");
        }
        base = std::gcd(base, obs[k].frame - obs[k - 1].frame);
      }
      lo = std::min(lo, obs.front().frame);
      hi = std::max(hi, obs.back().frame);
    }
    for (const auto& agent_id : agent_order[scene_id]) {
      for (const auto& o : agents[agent_id]) base = std::gcd(base, o.frame - lo);
    }
    if (base == 0) base = 1;
    const std::int64_t step = base * static_cast<std::int64_t>(config.downsample);

    Scene scene;
    scene.scene_id = scene_id;
    scene.D = dims;
    scene.T = static_cast<std::size_t>((hi - lo) / step) + 1;
    for (std::size_t t = 0; t < scene.T; ++t) scene.frames.push_back(lo + static_cast<std::int64_t>(t) * step);

    for (const auto& agent_id : agent_order[scene_id]) {
      SceneAgent agent;
      agent.id = agent_id;
      agent.positions = Matrix(scene.T, dims);
      agent.present.assign(scene.T, false);
      for (const auto& o : agents[agent_id]) {
        if ((o.frame - lo) % step != 0) continue;
        const auto t = static_cast<std::size_t>((o.frame - lo) / step);
        agent.present[t] = true;
        std::copy(o.pos.begin(), o.pos.end(), agent.positions.row(t).begin());
      }
      const auto first = std::find(agent.present.begin(), agent.present.end(), true);
      if (first == agent.present.end()) continue;
      std::size_t last_seen = static_cast<std::size_t>(first - agent.present.begin());
      for (std::size_t t = 0; t < scene.T; ++t) {
        if (agent.present[t]) {
          last_seen = t;
        } else {
          auto src = agent.positions.row(last_seen);
          std::copy(src.begin(), src.end(), agent.positions.row(t).begin());
        }
      }
      scene.agents.push_back(std::move(agent));
    }
    if (!scene.agents.empty()) scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

std::vector<Scene> parse_trajectory_csv(const std::string& text, const std::string& origin,
                                        const DatasetConfig& config) {
  std::vector<std::pair<std::string, ParsedFile>> files;
  files.emplace_back(origin, parse_rows(text, origin));
  return build_scenes(std::move(files), config);
}

std::vector<Scene> load_dataset(const std::filesystem::path& path, const DatasetConfig& config, std::size_t threads) {
  config.validate();
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .csv files in " + path.string());
  } else if (std::filesystem::is_regular_file(path, ec)) {
    files.push_back(path);
  } else {
    throw DataError("data path does not exist: " + path.string());
  }

  std::vector<std::pair<std::string, ParsedFile>> parsed(files.size());
  auto parse_one = [&](std::size_t k) {
    parsed[k] = {files[k].string(), parse_rows(read_file(files[k]), files[k].string())};
  };
  if (threads <= 1 || files.size() == 1) {
    for (std::size_t k = 0; k < files.size(); ++k) parse_one(k);
  } else {
    for (std::size_t begin = 0; begin < files.size(); begin += threads) {
      std::vector<std::future<void>> jobs;
      for (std::size_t k = begin; k < std::min(files.size(), begin + threads); ++k)
        jobs.push_back(std::async(std::launch::async, parse_one, k));
      for (auto& j : jobs) j.get();
    }
  }
  return build_scenes(std::move(parsed), config);
}

void write_trajectory_csv(const std::filesystem::path& file, const std::vector<Scene>& scenes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  const std::size_t dims = scenes.empty() ? 2 : scenes.front().D;
  out << (dims == 3 ? "scene_id,frame,agent_id,x,y,z\n" : "scene_id,frame,agent_id,x,y\n");
  char buf[64];
  for (const auto& scene : scenes) {
    for (std::size_t t = 0; t < scene.T; ++t) {
      for (const auto& agent : scene.agents) {
        if (!agent.present[t]) continue;
        out << scene.scene_id << ',' << scene.frames[t] << ',' << agent.id;
        for (std::size_t d = 0; d < scene.D; ++d) {
          std::snprintf(buf, sizeof buf, "%.17g", agent.positions(t, d));
          out << ',' << buf;
        }
        out << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Relative coordinates and patterns

RelativeTrack to_relative(const Matrix& abs_positions) {
  if (abs_positions.rows < 2) throw std::invalid_argument("to_relative: needs at least 2 positions");
  RelativeTrack out;
  const auto first = abs_positions.row(0);
  out.start_abs.assign(first.begin(), first.end());
  out.displacements = Matrix(abs_positions.rows - 1, abs_positions.cols);
  for (std::size_t t = 0; t + 1 < abs_positions.rows; ++t)
    for (std::size_t d = 0; d < abs_positions.cols; ++d)
      out.displacements(t, d) = abs_positions(t + 1, d) - abs_positions(t, d);
  return out;
}

Matrix from_relative(const std::vector<double>& start_abs, const Matrix& displacements) {
  Matrix out(displacements.rows, displacements.cols);
  std::vector<double> pos = start_abs;
  for (std::size_t t = 0; t < displacements.rows; ++t) {
    for (std::size_t d = 0; d < displacements.cols; ++d) {
      pos[d] += displacements(t, d);
      out(t, d) = pos[d];
    }
  }
  return out;
}

Matrix extract_pattern(const Matrix& displacements, std::size_t t, std::size_t P) {
  if (t < 1 || t > displacements.rows) {
    throw std::out_of_range("extract_pattern: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(displacements.rows) + "]");
  }
  if (P < 1) throw std::invalid_argument("extract_pattern: P must be >= 1");
  Matrix out(P, displacements.cols);
  for (std::size_t k = 0; k < P; ++k) {
    const std::size_t src = std::min(t - 1 + k, displacements.rows - 1);
    for (std::size_t d = 0; d < displacements.cols; ++d) out(k, d) = displacements(src, d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

std::vector<Sample> make_samples(const Scene& scene, const DatasetConfig& config) {
  config.validate();
  std::vector<Sample> out;
  const std::size_t W = config.window();
  if (scene.T < W) return out;
  const std::size_t D = scene.D;
  for (std::size_t s = 0; s + W <= scene.T; s += config.effective_stride()) {
    Sample sample;
    sample.scene_id = scene.scene_id;
    sample.window = s;
    sample.H = config.H;
    sample.F = config.F;
    sample.P = config.P;
    sample.D = D;
    std::vector<double> starts;
    for (const auto& agent : scene.agents) {
      std::vector<bool> present(agent.present.begin() + s, agent.present.begin() + s + W);
      const auto seen = std::count(present.begin(), present.end(), true);
      if (seen == 0) continue;
      Matrix disp(W, D);
      for (std::size_t t = 1; t < W; ++t)
        for (std::size_t d = 0; d < D; ++d)
          disp(t, d) = agent.positions(s + t, d) - agent.positions(s + t - 1, d);
      Matrix patterns(W, config.P * D);
      for (std::size_t t = 0; t < W; ++t) {
        const Matrix p = extract_pattern(disp, t + 1, config.P);
        std::copy(p.values.begin(), p.values.end(), patterns.row(t).begin());
      }
      const auto start = agent.positions.row(s);
      starts.insert(starts.end(), start.begin(), start.end());
      sample.agent_ids.push_back(agent.id);
      sample.displacements.push_back(std::move(disp));
      sample.gt_patterns.push_back(std::move(patterns));
      sample.complete.push_back(static_cast<std::size_t>(seen) == W);
      sample.present.push_back(std::move(present));
    }
    if (std::none_of(sample.complete.begin(), sample.complete.end(), [](bool c) { return c; })) continue;
    sample.start_abs = Matrix(sample.agent_ids.size(), D, std::move(starts));
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, const DatasetConfig& config) {
  std::vector<Sample> out;
  for (const auto& scene : scenes) {
    auto part = make_samples(scene, config);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<Scene> filter_min_agents(const std::vector<Scene>& scenes, std::size_t n, std::size_t window) {
  if (n < 1) throw std::invalid_argument("filter_min_agents: n must be >= 1");
  if (window < 1) throw std::invalid_argument("filter_min_agents: window must be >= 1");
  std::vector<Scene> out;
  for (const auto& scene : scenes) {
    bool keep = false;
    for (std::size_t s = 0; !keep && s + window <= scene.T; ++s) {
      std::size_t full = 0;
      for (const auto& agent : scene.agents) {
        if (std::all_of(agent.present.begin() + s, agent.present.begin() + s + window, [](bool p) { return p; })) ++full;
      }
      keep = full >= n;
    }
    if (keep) out.push_back(scene);
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(std::vector<Sample> samples, double val_fraction,
                                                                  std::uint64_t seed) {
  std::vector<Sample> train, val;
  const std::size_t n = samples.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5e11u));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<bool> is_val(n, false);
  for (std::size_t k = 0; k < n_val; ++k) is_val[order[k]] = true;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).push_back(std::move(samples[i]));
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::string to_string(PatternRule rule) {
  switch (rule) {
    case PatternRule::straight: return "straight";
    case PatternRule::circuit: return "circuit";
    case PatternRule::weave: return "weave";
  }
  return "circuit";
}

PatternRule parse_pattern_rule(const std::string& text) {
  if (text == "straight") return PatternRule::straight;
  if (text == "circuit") return PatternRule::circuit;
  if (text == "weave") return PatternRule::weave;
  throw std::invalid_argument("unknown pattern rule '" + text + "' (expected straight, circuit or weave)");
}

void SynthSpec::validate() const {
  if (dims != 2 && dims != 3) throw std::invalid_argument("synth: dims must be 2 or 3");
  if (scenes < 1 || agents < 1 || length < 2) throw std::invalid_argument("synth: scenes, agents must be >= 1 and length >= 2");
  if (!(speed_min > 0.0) || speed_max < speed_min) throw std::invalid_argument("synth: speeds must be positive with speed_min <= speed_max");
  if (heading_noise < 0.0 || repulsion_strength < 0.0) throw std::invalid_argument("synth: noise and repulsion strength must be >= 0");
  if (!(repulsion_radius > 0.0) || !(arena > 0.0)) throw std::invalid_argument("synth: repulsion radius and arena must be positive");
  if (circuit_long < 1 || circuit_short < 1 || weave_period < 1) throw std::invalid_argument("synth: circuit sides and weave period must be >= 1");
  if (head_on && agents != 2) throw std::invalid_argument("synth: head_on layout needs exactly 2 agents");
}

std::map<std::string, std::string> SynthSpec::describe() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"dims", std::to_string(dims)},
          {"scenes", std::to_string(scenes)},
          {"agents", std::to_string(agents)},
          {"length", std::to_string(length)},
          {"rule", to_string(rule)},
          {"speed_min", num(speed_min)},
          {"speed_max", num(speed_max)},
          {"heading_noise", num(heading_noise)},
          {"repulsion_radius", num(repulsion_radius)},
          {"repulsion_strength", num(repulsion_strength)},
          {"arena", num(arena)},
          {"circuit_long", std::to_string(circuit_long)},
          {"circuit_short", std::to_string(circuit_short)},
          {"weave_amplitude", num(weave_amplitude)},
          {"weave_period", std::to_string(weave_period)},
          {"head_on", head_on ? "true" : "false"}};
}

namespace {

struct AgentRule {
  double speed = 1.0;
  double heading = 0.0;
  double climb = 0.0;
  double weave_phase = 0.0;
  std::size_t circuit_phase = 0;
};

// Heading of the circuit rule at loop position k (counter-clockwise rectangle).
double circuit_heading(const SynthSpec& spec, double rotation, std::size_t k) {
  const std::size_t perimeter = 2 * (spec.circuit_long + spec.circuit_short);
  k %= perimeter;
  std::size_t side = 0;
  if (k < spec.circuit_long) side = 0;
  else if (k < spec.circuit_long + spec.circuit_short) side = 1;
  else if (k < 2 * spec.circuit_long + spec.circuit_short) side = 2;
  else side = 3;
  return rotation + static_cast<double>(side) * std::numbers::pi / 2.0;
}

}  // namespace

std::vector<Scene> synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t D = spec.dims;
  std::vector<Scene> scenes;
  for (std::size_t s = 0; s < spec.scenes; ++s) {
    Rng rng(derive_seed(seed, s));
    Scene scene;
    scene.scene_id = "synth" + std::to_string(s);
    scene.T = spec.length;
    scene.D = D;
    for (std::size_t t = 0; t < spec.length; ++t) scene.frames.push_back(static_cast<std::int64_t>(t));

    const double rotation = rng.uniform(0.0, two_pi);
    std::vector<double> center(D, 0.0);
    for (std::size_t d = 0; d < 2; ++d) center[d] = rng.uniform(-spec.arena / 4, spec.arena / 4);

    const std::size_t N = spec.agents;
    std::vector<AgentRule> rules(N);
    std::vector<std::vector<double>> pos(N, std::vector<double>(D, 0.0));
    SceneOracle oracle;
    oracle.rule = to_string(spec.rule);
    for (std::size_t a = 0; a < N; ++a) {
      auto& r = rules[a];
      r.speed = rng.uniform(spec.speed_min, spec.speed_max);
      r.heading = rng.uniform(0.0, two_pi);
      r.weave_phase = rng.uniform(0.0, two_pi);
      r.circuit_phase = rng.below(2 * (spec.circuit_long + spec.circuit_short));
      r.climb = spec.rule == PatternRule::circuit ? 0.0 : rng.uniform(-0.1, 0.1) * r.speed;
      for (std::size_t d = 0; d < 2; ++d) pos[a][d] = rng.uniform(-spec.arena, spec.arena);
      if (D == 3) pos[a][2] = rng.uniform(0.0, 2.0);

      if (spec.head_on) {
        r.heading = a == 0 ? 0.0 : std::numbers::pi;
        r.climb = 0.0;
        std::fill(pos[a].begin(), pos[a].end(), 0.0);
        pos[a][0] = a == 0 ? -spec.arena : spec.arena;
      } else if (spec.rule == PatternRule::circuit) {
        r.heading = rotation;
        // Walk from the rectangle's first corner to the agent's loop position.
        const double half_long = 0.5 * static_cast<double>(spec.circuit_long) * r.speed;
        const double half_short = 0.5 * static_cast<double>(spec.circuit_short) * r.speed;
        double x = -half_long, y = -half_short;
        const double c = std::cos(rotation), sn = std::sin(rotation);
        double px = center[0] + c * x - sn * y;
        double py = center[1] + sn * x + c * y;
        for (std::size_t k = 0; k < r.circuit_phase; ++k) {
          const double h = circuit_heading(spec, rotation, k);
          px += r.speed * std::cos(h);
          py += r.speed * std::sin(h);
        }
        pos[a][0] = px;
        pos[a][1] = py;
      }
      oracle.speed.push_back(r.speed);
      oracle.heading.push_back(r.heading);
    }

    std::vector<Matrix> tracks(N, Matrix(spec.length, D));
    for (std::size_t a = 0; a < N; ++a) std::copy(pos[a].begin(), pos[a].end(), tracks[a].row(0).begin());
    for (std::size_t t = 1; t < spec.length; ++t) {
      std::vector<std::vector<double>> next = pos;
      for (std::size_t a = 0; a < N; ++a) {
        const auto& r = rules[a];
        double heading = r.heading;
        if (!spec.head_on) {
          if (spec.rule == PatternRule::circuit) heading = circuit_heading(spec, rotation, r.circuit_phase + t - 1);
          if (spec.rule == PatternRule::weave) {
            heading += spec.weave_amplitude *
                       std::sin(two_pi * static_cast<double>(t - 1) / static_cast<double>(spec.weave_period) + r.weave_phase);
          }
        }
        heading += spec.heading_noise * rng.normal();
        next[a][0] += r.speed * std::cos(heading);
        next[a][1] += r.speed * std::sin(heading);
        if (D == 3) next[a][2] += r.climb;
        if (spec.repulsion_strength > 0.0) {
          for (std::size_t b = 0; b < N; ++b) {
            if (b == a) continue;
            double dist2 = 0.0;
            for (std::size_t d = 0; d < D; ++d) dist2 += (pos[a][d] - pos[b][d]) * (pos[a][d] - pos[b][d]);
            const double dist = std::sqrt(dist2);
            if (dist >= spec.repulsion_radius || dist == 0.0) continue;
            const double push = spec.repulsion_strength * (spec.repulsion_radius - dist) / spec.repulsion_radius;
            for (std::size_t d = 0; d < D; ++d) next[a][d] += push * (pos[a][d] - pos[b][d]) / dist;
          }
        }
      }
      pos = std::move(next);
      for (std::size_t a = 0; a < N; ++a) std::copy(pos[a].begin(), pos[a].end(), tracks[a].row(t).begin());
    }
    for (std::size_t a = 0; a < N; ++a) {
      SceneAgent agent;
      agent.id = "a" + std::to_string(a);
      agent.positions = std::move(tracks[a]);
      agent.present.assign(spec.length, true);
      scene.agents.push_back(std::move(agent));
    }
    scene.oracle = std::move(oracle);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace sprnn
