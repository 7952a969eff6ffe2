#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "groupdiff/csv.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/reproduce.hpp"
#include "groupdiff/run_config.hpp"
#include "groupdiff/train.hpp"
#include "test_support.hpp"

using namespace groupdiff;
using groupdiff::testing::scratch_dir;
using groupdiff::testing::tiny_model;

namespace {

RunConfig tiny_run(SamplerMode mode, std::size_t group_size) {
  RunConfig c;
  c.mode = mode;
  c.seed = 11;
  c.model = tiny_model(1);
  c.schedule.steps = 50;
  c.dataset.num_classes = 3;
  c.dataset.images_per_class = 10;
  c.dataset.image_size = 8;
  c.dataset.seed = 2;
  c.dataset.group_size_max = 4;
  c.group.group_size = group_size;
  c.train.iterations = 5;
  c.train.batch_groups = 4;
  c.train.optimizer.lr = 3e-3;
  c.sampler.mode = mode;
  c.sampler.steps = 3;
  c.sampler.group_size = group_size;
  c.eval.num_images = 28;
  c.eval.probe_layer = 0;
  return c;
}

bool same_parameters(const Denoiser& a, const Denoiser& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    if (a.parameters()[i].name != b.parameters()[i].name) return false;
    if (!bitwise_equal(a.parameters()[i].value, b.parameters()[i].value)) return false;
  }
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  Dataset data;
  DatasetIndex index;
};

Fixture fixture(const RunConfig& c) {
  Fixture f{generate_dataset(c.dataset), {}};
  f.index = build_index(f.data, c.group.tau);
  return f;
}

}  // namespace

TEST(RunConfigFile, RoundTripEveryField) {
  RunConfig c = tiny_run(SamplerMode::kGroupDiffF, 3);
  c.noise = {7, 0.25};
  c.group.mode = QueryMode::kClass;
  c.schedule.kind = ScheduleKind::kLinear;
  c.schedule.beta_end = 0.03;
  c.train.warmup = 3;
  c.train.optimizer.weight_decay = 0.0;
  c.sampler.group_window = {0.0, 0.4};
  c.sampler.guidance = {0.1, 0.9};
  c.sampler.group_layers = {0};
  c.sampler.clip_denoised = false;
  c.paths = {"a.gdd", "b.gdi", "out"};
  EXPECT_NO_THROW(c.validate());
  const RunConfig back = parse_run_config(serialize(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize(back), serialize(c));
}

TEST(RunConfigFile, RejectsUnknownKeysAndVersions) {
  const std::string good = serialize(tiny_run(SamplerMode::kGroupDiffL, 2));
  auto edited = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    const auto pos = s.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    return s.replace(pos, from.size(), to);
  };
  EXPECT_THROW(parse_run_config(edited("\"iterations\"", "\"iteration\"")), ValidationError);
  EXPECT_THROW(parse_run_config(edited("\"version\": 1", "\"version\": 2")), ValidationError);
  EXPECT_THROW(parse_run_config(edited("\"seed\": 11", "\"seed\": -1")), ValidationError);
  EXPECT_THROW(parse_run_config("{not json"), ValidationError);
}

TEST(RunConfigFile, SemanticValidation) {
  RunConfig c = tiny_run(SamplerMode::kBaseline, 2);
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_run(SamplerMode::kGroupDiffL, 2);
  c.dataset.num_classes = 4;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_run(SamplerMode::kGroupDiffL, 2);
  c.noise.max_timestep_deviation = 50;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_run(SamplerMode::kGroupDiffL, 2);
  c.paths.dataset = "/nonexistent/data.gdd";
  EXPECT_THROW(c.validate_paths(), IoError);
}

TEST(Manifest, RoundTripAndUniqueTags) {
  ExperimentManifest m;
  m.output_dir = "rep";
  m.runs = {{"n1", tiny_run(SamplerMode::kBaseline, 1)}, {"n2", tiny_run(SamplerMode::kGroupDiffL, 2)}};
  EXPECT_EQ(parse_manifest(serialize(m)), m);
  m.runs[1].tag = "n1";
  EXPECT_THROW(m.validate(), ValidationError);
  m.runs[1].tag = "a/b";
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Train, ZeroIterationsKeepInitialization) {
  RunConfig c = tiny_run(SamplerMode::kGroupDiffL, 2);
  c.train.iterations = 0;
  const auto f = fixture(c);
  const auto r = train(c, f.data, f.index);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(same_parameters(r.model, Denoiser(c.model, derive_seed(c.seed, 0x70))));
}

TEST(Train, NoDropoutMakesGroupDiffLMatchBaseline) {
  RunConfig l = tiny_run(SamplerMode::kGroupDiffL, 4);
  l.noise.label_dropout = 0.0;
  RunConfig b = l;
  b.mode = b.sampler.mode = SamplerMode::kBaseline;
  b.group.group_size = b.sampler.group_size = 1;
  const auto f = fixture(l);
  const auto rl = train(l, f.data, f.index), rb = train(b, f.data, f.index);
  EXPECT_EQ(rl.grouped_groups, 0u);
  ASSERT_EQ(rl.log.size(), rb.log.size());
  for (std::size_t i = 0; i < rl.log.size(); ++i) EXPECT_EQ(rl.log[i].loss, rb.log[i].loss);
  EXPECT_TRUE(same_parameters(rl.model, rb.model));
}

TEST(Train, ModeDecidesGroupedShare) {
  RunConfig c = tiny_run(SamplerMode::kGroupDiffF, 2);
  const auto f = fixture(c);
  const auto rf = train(c, f.data, f.index);
  EXPECT_EQ(rf.single_groups, 0u);
  EXPECT_EQ(rf.grouped_groups, c.train.iterations * c.train.batch_groups);
  c.mode = SamplerMode::kGroupDiffL;
  c.noise.label_dropout = 1.0;
  const auto rl = train(c, f.data, f.index);
  EXPECT_EQ(rl.single_groups, 0u);
}

TEST(Train, FixedBatchLossTrendsDown) {
  RunConfig c = tiny_run(SamplerMode::kGroupDiffF, 2);
  c.train.iterations = 200;
  const auto f = fixture(c);
  TrainOptions o;
  o.fixed_batch = true;
  const auto r = train(c, f.data, f.index, o);
  ASSERT_EQ(r.log.size(), 200u);
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 5 <= r.log.size(); i += 5) {
    double s = 0.0;
    for (std::size_t k = i; k < i + 5; ++k) s += r.log[k].loss;
    smooth.push_back(s / 5.0);
  }
  std::size_t rises = 0;
  for (std::size_t i = 1; i < smooth.size(); ++i) rises += smooth[i] > smooth[i - 1] ? 1 : 0;
  EXPECT_LT(smooth.back(), 0.5 * smooth.front());
  EXPECT_LE(rises, smooth.size() / 5);
}

TEST(Train, RepeatedRunsAreBitwiseIdentical) {
  const RunConfig c = tiny_run(SamplerMode::kGroupDiffL, 3);
  const auto f = fixture(c);
  const auto a = train(c, f.data, f.index), b = train(c, f.data, f.index);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(Train, RunWritesArtifacts) {
  const auto dir = scratch_dir("train_run");
  RunConfig c = tiny_run(SamplerMode::kGroupDiffL, 2);
  c.train.checkpoint_every = 2;
  write_dataset((dir / "d.gdd").string(), generate_dataset(c.dataset));
  c.paths.dataset = (dir / "d.gdd").string();
  c.paths.output_dir = (dir / "out").string();
  const auto r = train_run(c);
  EXPECT_EQ(load_run_config((dir / "out" / "config.json").string()), c);
  EXPECT_TRUE(same_parameters(Denoiser::load((dir / "out" / "model.gdf").string()), r.model));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "ckpt_2.gdf"));
  const auto log = read_csv((dir / "out" / "train_log.csv").string());
  EXPECT_EQ(log.header(), (std::vector<std::string>{"iter", "loss", "lr"}));
  EXPECT_EQ(log.rows().size(), 5u);
}

TEST(Reproduce, EmptyManifestWritesHeaderOnly) {
  const auto dir = scratch_dir("repro_empty");
  ExperimentManifest m;
  m.output_dir = (dir / "rep").string();
  EXPECT_TRUE(reproduce(m).empty());
  EXPECT_EQ(slurp(dir / "rep" / "summary.csv"), "tag,fid_proxy,s_cross,probe_acc,status\n");
}

TEST(Reproduce, IdenticalConfigsGiveIdenticalRowsAndFailuresAreIsolated) {
  const auto dir = scratch_dir("repro_runs");
  RunConfig c = tiny_run(SamplerMode::kGroupDiffL, 2);
  const std::string data_path = (dir / "d.gdd").string();
  write_dataset(data_path, generate_dataset(c.dataset));
  const auto before = slurp(data_path);
  c.paths.dataset = data_path;
  RunConfig broken = c;
  broken.paths.dataset = (dir / "missing.gdd").string();
  ExperimentManifest m;
  m.output_dir = (dir / "rep").string();
  m.runs = {{"a", c}, {"bad", broken}, {"b", c}};
  const auto out = reproduce(m);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].status, "ok");
  EXPECT_EQ(out[1].status.rfind("error:", 0), 0u);
  EXPECT_EQ(out[2].status, "ok");
  EXPECT_EQ(out[0].metrics->fid_proxy, out[2].metrics->fid_proxy);
  EXPECT_EQ(out[0].metrics->s_cross, out[2].metrics->s_cross);
  EXPECT_EQ(out[0].metrics->probe_acc, out[2].metrics->probe_acc);
  const auto summary = read_csv((dir / "rep" / "summary.csv").string());
  ASSERT_EQ(summary.rows().size(), 3u);
  auto a = summary.rows()[0], b = summary.rows()[2];
  a[0] = b[0] = "";
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(data_path), before);
  EXPECT_TRUE(std::filesystem::exists(dir / "rep" / "a" / "step_profile.csv"));
}

TEST(Csv, RoundTripWithQuoting) {
  const auto dir = scratch_dir("csv");
  CsvTable t({"name", "value"});
  t.add_row({"plain", format_double(0.1)});
  t.add_row({"has,comma \"q\"", format_double(1e-300)});
  EXPECT_THROW(t.add_row({"x"}), DimensionError);
  t.write((dir / "t.csv").string());
  const auto back = read_csv((dir / "t.csv").string());
  EXPECT_EQ(back.header(), t.header());
  EXPECT_EQ(back.rows(), t.rows());
  EXPECT_EQ(std::stod(back.rows()[0][1]), 0.1);
}

TEST(Svg, LinePlotIsWellFormed) {
  const std::string svg = line_plot_svg("t", "x", "y", {{"s", {0, 1, 2}, {1, 0.5, 0.25}}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
}
