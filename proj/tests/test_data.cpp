#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "sprnn/data.hpp"
#include "sprnn/rng.hpp"

using namespace sprnn;

namespace {

Matrix random_track(Rng& rng, std::size_t T, std::size_t D) {
  Matrix m(T, D);
  for (auto& v : m.values) v = rng.uniform(-10, 10);
  return m;
}

Scene make_scene(const std::string& id, std::size_t T, const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                 std::uint64_t seed = 1) {
  Rng rng(seed);
  Scene s;
  s.scene_id = id;
  s.T = T;
  s.D = 2;
  for (std::size_t t = 0; t < T; ++t) s.frames.push_back(static_cast<std::int64_t>(t));
  for (std::size_t a = 0; a < spans.size(); ++a) {
    SceneAgent agent;
    agent.id = "ag" + std::to_string(a);
    agent.positions = random_track(rng, T, 2);
    agent.present.assign(T, false);
    for (std::size_t t = spans[a].first; t < spans[a].second; ++t) agent.present[t] = true;
    s.agents.push_back(std::move(agent));
  }
  return s;
}

DatasetConfig cfg(std::size_t H, std::size_t F, std::size_t P, std::size_t stride = 0) {
  DatasetConfig c;
  c.H = H;
  c.F = F;
  c.P = P;
  c.stride = stride;
  return c;
}

// Independent slice oracle: rows t-1 .. t-1+P-1 (1-based t), clamped to the last row.
std::vector<double> slice_oracle(const Matrix& d, std::size_t t, std::size_t P) {
  std::vector<double> out;
  for (std::size_t k = 0; k < P; ++k) {
    std::size_t r = t - 1 + k;
    if (r >= d.rows) r = d.rows - 1;
    for (std::size_t c = 0; c < d.cols; ++c) out.push_back(d.values[r * d.cols + c]);
  }
  return out;
}

}  // namespace

TEST(Csv, SingleTrack) {
  std::string text = "scene_id,frame,agent_id,x,y\n";
  for (int f = 0; f < 10; ++f) text += "s,"+ std::to_string(f) + ",a," + std::to_string(f) + ",0\n";
  const auto scenes = parse_trajectory_csv(text, "mem", DatasetConfig{});
  ASSERT_EQ(scenes.size(), 1u);
  EXPECT_EQ(scenes[0].agents.size(), 1u);
  EXPECT_EQ(scenes[0].T, 10u);
  EXPECT_EQ(scenes[0].D, 2u);
}

TEST(Csv, OverlappingAgentsShareGridWithMasks) {
  std::string text = "scene_id,frame,agent_id,x,y\n";
  for (int f = 14; f >= 5; --f) text += "s," + std::to_string(f) + ",b,1,2\n";
  for (int f = 0; f < 10; ++f) text += "s," + std::to_string(f) + ",a,0,0\n";
  const auto scenes = parse_trajectory_csv(text, "mem", DatasetConfig{});
  ASSERT_EQ(scenes.size(), 1u);
  const Scene& s = scenes[0];
  EXPECT_EQ(s.T, 15u);
  std::vector<bool> a_mask(15, false), b_mask(15, false);
  for (int t = 0; t < 10; ++t) a_mask[t] = true;
  for (int t = 5; t < 15; ++t) b_mask[t] = true;
  // agents keep first-seen order: b appears first in the file
  EXPECT_EQ(s.agents[0].id, "b");
  EXPECT_EQ(s.agents[0].present, b_mask);
  EXPECT_EQ(s.agents[1].present, a_mask);
}

TEST(Csv, ThreeDimensionsDownsampleAndScale) {
  std::string text = "scene_id,frame,agent_id,x,y,z\n";
  for (int f = 0; f < 10; ++f) text += "s," + std::to_string(f * 10) + ",a," + std::to_string(f) + ",0,1\n";
  DatasetConfig c;
  c.downsample = 2;
  c.units_scale = 0.5;
  const auto scenes = parse_trajectory_csv(text, "mem", c);
  ASSERT_EQ(scenes.size(), 1u);
  EXPECT_EQ(scenes[0].D, 3u);
  EXPECT_EQ(scenes[0].T, 5u);
  EXPECT_EQ(scenes[0].frames[1], 20);
  EXPECT_DOUBLE_EQ(scenes[0].agents[0].positions(2, 0), 2.0);
  EXPECT_DOUBLE_EQ(scenes[0].agents[0].positions(2, 2), 0.5);
}

TEST(Csv, ErrorsCarryOriginAndLine) {
  try {
    parse_trajectory_csv("scene_id,frame,agent_id,x,y\ns,0,a,1,2\ns,1,a,zz,2\n", "f.csv", DatasetConfig{});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("f.csv:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_trajectory_csv("frame,x\n", "f.csv", DatasetConfig{}), DataError);
  EXPECT_THROW(parse_trajectory_csv("scene_id,frame,agent_id,x,y\ns,0,a,1\n", "f.csv", DatasetConfig{}), DataError);
  EXPECT_THROW(parse_trajectory_csv("scene_id,frame,agent_id,x,y\ns,3,a,1,1\ns,3,a,2,2\n", "f.csv", DatasetConfig{}),
               DataError);
}

TEST(Csv, InconsistentDimensionAcrossFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "sprnn_test_dims";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "a.csv") << "scene_id,frame,agent_id,x,y\ns,0,a,1,2\ns,1,a,1,2\n";
  std::ofstream(dir / "b.csv") << "scene_id,frame,agent_id,x,y,z\nt,0,a,1,2,3\nt,1,a,1,2,3\n";
  EXPECT_THROW(load_dataset(dir, DatasetConfig{}), DataError);
  EXPECT_THROW(load_dataset(dir / "missing", DatasetConfig{}), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Csv, WriteThenLoadRoundTrip) {
  SynthSpec spec;
  spec.scenes = 2;
  spec.length = 12;
  const auto scenes = synth_generate(spec, 3);
  const auto dir = std::filesystem::temp_directory_path() / "sprnn_test_roundtrip";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_trajectory_csv(dir / "synth.csv", scenes);
  const auto back = load_dataset(dir, DatasetConfig{}, 2);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    ASSERT_EQ(back[s].agents.size(), scenes[s].agents.size());
    for (std::size_t a = 0; a < scenes[s].agents.size(); ++a)
      EXPECT_EQ(back[s].agents[a].positions, scenes[s].agents[a].positions);
  }
  std::filesystem::remove_all(dir);
}

TEST(Relative, Stationary) {
  const auto r = to_relative(Matrix(3, 2, 0.0));
  EXPECT_EQ(r.start_abs, (std::vector<double>{0, 0}));
  EXPECT_EQ(r.displacements, Matrix(2, 2, 0.0));
}

TEST(Relative, Definition) {
  const auto r = to_relative(Matrix(3, 2, {0, 0, 1, 0, 3, 0}));
  EXPECT_EQ(r.displacements, Matrix(2, 2, {1, 0, 2, 0}));
}

TEST(Relative, TooShortThrows) { EXPECT_THROW(to_relative(Matrix(1, 2)), std::invalid_argument); }

TEST(Relative, RoundTripRandomTracks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix track = random_track(rng, 10, 3);
    const auto r = to_relative(track);
    const Matrix back = from_relative(r.start_abs, r.displacements);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(track(0, d), r.start_abs[d]);
    for (std::size_t t = 1; t < 10; ++t)
      for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(back(t - 1, d), track(t, d), 1e-12);
  }
}

TEST(Pattern, InRangeSlice) {
  const Matrix d(3, 2, {1, 0, 2, 0, 3, 0});
  EXPECT_EQ(extract_pattern(d, 1, 2), Matrix(2, 2, {1, 0, 2, 0}));
}

TEST(Pattern, BoundaryRepeatsLastDisplacement) {
  const Matrix d(3, 2, {1, 0, 2, 0, 3, 0});
  EXPECT_EQ(extract_pattern(d, 3, 3), Matrix(3, 2, {3, 0, 3, 0, 3, 0}));
}

TEST(Pattern, OutOfRangeThrows) {
  const Matrix d(3, 2, {1, 0, 2, 0, 3, 0});
  EXPECT_THROW(extract_pattern(d, 0, 2), std::out_of_range);
  EXPECT_THROW(extract_pattern(d, 4, 2), std::out_of_range);
}

TEST(Pattern, MatchesSliceOracleEverywhere) {
  Rng rng(9);
  const Matrix d = random_track(rng, 15, 2);
  for (std::size_t P = 1; P <= 8; ++P)
    for (std::size_t t = 1; t <= d.rows; ++t) EXPECT_EQ(extract_pattern(d, t, P).values, slice_oracle(d, t, P));
}

TEST(Samples, WindowArithmetic) {
  EXPECT_EQ(make_samples(make_scene("s", 20, {{0, 20}}), cfg(8, 12, 6, 20)).size(), 1u);
  EXPECT_EQ(make_samples(make_scene("s", 25, {{0, 25}}), cfg(8, 12, 6, 5)).size(), 2u);
  EXPECT_TRUE(make_samples(make_scene("s", 19, {{0, 19}}), cfg(8, 12, 6)).empty());
}

TEST(Samples, AbsoluteReconstructionMatchesScene) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene scene = make_scene("s", 30, {{0, 30}, {0, 30}, {3, 30}}, seed);
    for (const auto& sample : make_samples(scene, cfg(4, 5, 3, 2))) {
      for (std::size_t a = 0; a < sample.agents(); ++a) {
        const Matrix abs = sample.absolute(a);
        const auto& agent = scene.agents[a];
        for (std::size_t t = 0; t < sample.steps(); ++t)
          for (std::size_t d = 0; d < 2; ++d)
            EXPECT_NEAR(abs(t, d), agent.positions(sample.window + t, d), 1e-12);
      }
    }
  }
}

TEST(Samples, PatternsEqualFutureDisplacementSlices) {
  const Scene scene = make_scene("s", 40, {{0, 40}, {0, 40}}, 4);
  const DatasetConfig c = cfg(6, 8, 4, 3);
  for (const auto& sample : make_samples(scene, c)) {
    for (std::size_t a = 0; a < sample.agents(); ++a) {
      const Matrix& d = sample.displacements[a];
      EXPECT_EQ(sample.history(a).rows, c.H);
      EXPECT_EQ(sample.future(a).rows, c.F);
      for (std::size_t t = 0; t + c.P <= sample.steps(); ++t) {
        const auto row = sample.gt_patterns[a].row(t);
        for (std::size_t k = 0; k < c.P; ++k)
          for (std::size_t dd = 0; dd < 2; ++dd) EXPECT_EQ(row[k * 2 + dd], d(t + k, dd));
      }
    }
  }
}

TEST(Samples, PartialAgentsKeptButIncomplete) {
  const Scene scene = make_scene("s", 20, {{0, 20}, {5, 20}, {0, 0}});
  const auto samples = make_samples(scene, cfg(8, 12, 6));
  ASSERT_EQ(samples.size(), 1u);
  ASSERT_EQ(samples[0].agents(), 2u);  // never-present agent dropped
  EXPECT_TRUE(samples[0].complete[0]);
  EXPECT_FALSE(samples[0].complete[1]);
  EXPECT_FALSE(samples[0].present[1][4]);
  EXPECT_TRUE(samples[0].present[1][5]);
}

TEST(Samples, WindowWithoutCompleteAgentIsSkipped) {
  const Scene scene = make_scene("s", 20, {{1, 20}, {0, 19}});
  EXPECT_TRUE(make_samples(scene, cfg(8, 12, 6)).empty());
}

TEST(Config, RejectsInvalidLengths) {
  EXPECT_THROW(cfg(0, 12, 6).validate(), std::invalid_argument);
  EXPECT_THROW(cfg(8, 0, 1).validate(), std::invalid_argument);
  EXPECT_THROW(cfg(8, 4, 5).validate(), std::invalid_argument);
  EXPECT_THROW(cfg(8, 4, 0).validate(), std::invalid_argument);
  EXPECT_NO_THROW(cfg(8, 4, 4).validate());
}

TEST(Filter, ThresholdOneIsIdentity) {
  const std::vector<Scene> scenes = {make_scene("a", 5, {{0, 5}}), make_scene("b", 5, {{0, 5}, {0, 5}})};
  const auto out = filter_min_agents(scenes, 1);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].scene_id, "a");
  EXPECT_EQ(out[1].scene_id, "b");
}

TEST(Filter, ThreeAgentsBelowFour) {
  EXPECT_TRUE(filter_min_agents({make_scene("a", 5, {{0, 5}, {0, 5}, {0, 5}})}, 4).empty());
}

TEST(Filter, MixedFixtureKeepsOnlyFourAgentScene) {
  const std::vector<Scene> scenes = {make_scene("one", 10, {{0, 10}}),
                                     make_scene("four", 10, {{0, 10}, {0, 10}, {2, 10}, {0, 8}}),
                                     make_scene("two", 10, {{0, 10}, {0, 10}})};
  const auto out = filter_min_agents(scenes, 4, 3);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].scene_id, "four");
  // simultaneous presence over a full window is required
  EXPECT_TRUE(filter_min_agents(scenes, 4, 7).empty());
}

TEST(Filter, OutputIsOrderedSubsequence) {
  Rng rng(12);
  std::vector<Scene> scenes;
  for (int i = 0; i < 30; ++i) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t a = 0; a < n; ++a) spans.push_back({rng.below(4), 6 + rng.below(5)});
    scenes.push_back(make_scene("s" + std::to_string(i), 10, spans, i));
  }
  const auto out = filter_min_agents(scenes, 3, 4);
  std::size_t pos = 0;
  for (const auto& s : out) {
    while (pos < scenes.size() && scenes[pos].scene_id != s.scene_id) ++pos;
    ASSERT_LT(pos, scenes.size()) << s.scene_id;
    ++pos;
  }
}

TEST(Split, DeterministicAndDisjoint) {
  SynthSpec spec;
  spec.scenes = 10;
  spec.length = 30;
  const auto samples = make_samples(synth_generate(spec, 1), cfg(4, 4, 2, 4));
  auto [tr1, va1] = split_samples(samples, 0.2, 5);
  auto [tr2, va2] = split_samples(samples, 0.2, 5);
  EXPECT_EQ(tr1.size() + va1.size(), samples.size());
  EXPECT_EQ(va1.size(), static_cast<std::size_t>(std::llround(0.2 * samples.size())));
  ASSERT_EQ(va1.size(), va2.size());
  std::set<std::pair<std::string, std::size_t>> train_keys;
  for (const auto& s : tr1) train_keys.insert({s.scene_id, s.window});
  for (std::size_t i = 0; i < va1.size(); ++i) {
    EXPECT_EQ(va1[i].scene_id, va2[i].scene_id);
    EXPECT_EQ(va1[i].window, va2[i].window);
    EXPECT_FALSE(train_keys.count({va1[i].scene_id, va1[i].window}));
  }
  auto [tr0, va0] = split_samples(samples, 0.0, 5);
  EXPECT_TRUE(va0.empty());
}

TEST(Synth, StraightNoiselessTracksAreCollinear) {
  SynthSpec spec;
  spec.rule = PatternRule::straight;
  spec.length = 15;
  for (const auto& scene : synth_generate(spec, 2)) {
    for (const auto& agent : scene.agents) {
      const auto& p = agent.positions;
      const double dx = p(1, 0) - p(0, 0), dy = p(1, 1) - p(0, 1);
      for (std::size_t t = 2; t < scene.T; ++t) {
        const double cross = dx * (p(t, 1) - p(0, 1)) - dy * (p(t, 0) - p(0, 0));
        EXPECT_NEAR(cross, 0.0, 1e-9);
      }
    }
  }
}

TEST(Synth, CircuitHeadingsTakeFourValuesPerLoop) {
  SynthSpec spec;
  spec.rule = PatternRule::circuit;
  spec.length = 2 * (spec.circuit_long + spec.circuit_short) + 1;
  for (const auto& scene : synth_generate(spec, 4)) {
    for (const auto& agent : scene.agents) {
      std::vector<double> headings;
      for (std::size_t t = 1; t < scene.T; ++t) {
        const double h = std::atan2(agent.positions(t, 1) - agent.positions(t - 1, 1),
                                    agent.positions(t, 0) - agent.positions(t - 1, 0));
        bool seen = false;
        for (double o : headings) seen = seen || std::abs(std::remainder(h - o, 2 * M_PI)) < 1e-9;
        if (!seen) headings.push_back(h);
      }
      EXPECT_EQ(headings.size(), 4u);
      for (std::size_t i = 1; i < headings.size(); ++i) {
        const double turn = std::abs(std::remainder(headings[i] - headings[0], M_PI / 2));
        EXPECT_NEAR(turn, 0.0, 1e-9);
      }
    }
  }
}

TEST(Synth, HeadOnRepulsionKeepsHalfRadius) {
  SynthSpec spec;
  spec.agents = 2;
  spec.head_on = true;
  spec.rule = PatternRule::straight;
  spec.speed_min = spec.speed_max = 0.5;
  spec.arena = 6.0;
  spec.length = 40;
  spec.repulsion_radius = 2.0;
  spec.repulsion_strength = 1.0;
  for (const auto& scene : synth_generate(spec, 8)) {
    double min_dist = 1e9;
    for (std::size_t t = 0; t < scene.T; ++t) {
      double d2 = 0;
      for (std::size_t d = 0; d < 2; ++d) {
        const double diff = scene.agents[0].positions(t, d) - scene.agents[1].positions(t, d);
        d2 += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
    EXPECT_GE(min_dist, spec.repulsion_radius / 2);
  }
}

TEST(Synth, BitReproducibleAndRecordsOracle) {
  SynthSpec spec;
  spec.rule = PatternRule::weave;
  spec.heading_noise = 0.2;
  spec.dims = 3;
  const auto a = synth_generate(spec, 77);
  const auto b = synth_generate(spec, 77);
  const auto c = synth_generate(spec, 78);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t i = 0; i < a[s].agents.size(); ++i) {
      EXPECT_EQ(a[s].agents[i].positions, b[s].agents[i].positions);
      EXPECT_NE(a[s].agents[i].positions, c[s].agents[i].positions);
    }
  ASSERT_TRUE(a[0].oracle.has_value());
  EXPECT_EQ(a[0].oracle->rule, "weave");
  EXPECT_EQ(a[0].oracle->speed.size(), spec.agents);
}

TEST(Synth, InvalidSpecThrows) {
  SynthSpec spec;
  spec.speed_min = 0.0;
  EXPECT_THROW(synth_generate(spec, 0), std::invalid_argument);
  spec = SynthSpec{};
  spec.length = 0;
  EXPECT_THROW(synth_generate(spec, 0), std::invalid_argument);
  spec = SynthSpec{};
  spec.dims = 4;
  EXPECT_THROW(synth_generate(spec, 0), std::invalid_argument);
}
