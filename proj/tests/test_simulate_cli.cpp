#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "girder/cli.hpp"
#include "girder/simulate.hpp"

using namespace girder;
namespace fs = std::filesystem;

namespace {

SurrogateParams quiet_params() {
  SurrogateParams p;
  p.roughness_ratio = 0.0;
  p.dynamic_ratio = 0.0;
  return p;
}

const PassageRecord& channel(const std::vector<PassageRecord>& recs, const std::string& id) {
  for (const auto& r : recs)
    if (r.channel_id == id) return r;
  throw std::runtime_error("missing channel " + id);
}

double peak(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("girder_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int rc = cli::run(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Surrogate, InfluenceOrdinates) {
  EXPECT_DOUBLE_EQ(influence_strain(16.0, 16.0, 32.0), 8.0);
  EXPECT_DOUBLE_EQ(influence_strain(8.0, 8.0, 32.0), 6.0);
  EXPECT_DOUBLE_EQ(influence_strain(8.0, 16.0, 32.0), 4.0);
  EXPECT_DOUBLE_EQ(influence_strain(16.0, 8.0, 32.0), 4.0);
  EXPECT_DOUBLE_EQ(influence_strain(8.0, -1.0, 32.0), 0.0);
  EXPECT_DOUBLE_EQ(influence_strain(8.0, 33.0, 32.0), 0.0);
}

TEST(Surrogate, PassageLength) {
  EXPECT_EQ(passage_samples(default_train(360.0), 32.0, 1000.0), 2320u);
}

TEST(Surrogate, SuperpositionOfAxles) {
  const auto g = default_girder();
  const auto train = default_train(360.0);
  const auto recs = synthesize_passage(train, g, std::nullopt, std::nullopt, 1000.0, quiet_params());
  const auto& p5b = channel(recs, "P5b");
  const auto params = quiet_params();
  const double gain = params.strain_per_moment * g.tau(Lane::Up, Side::Left) * (1.0 + 0.8);
  const auto axles = axles_of(train);
  for (std::size_t i = 0; i < p5b.samples.size(); i += 37) {
    const double front = 100.0 * static_cast<double>(i) / 1000.0;
    double expect = 0.0;
    for (const auto& a : axles) expect += gain * a.weight * influence_strain(16.0, front - a.offset, 32.0);
    ASSERT_NEAR(p5b.samples[i], expect, 1e-9 * std::max(1.0, std::abs(expect))) << i;
  }
}

TEST(Surrogate, StaticLimitAtCrawlSpeed) {
  const auto g = default_girder();
  auto train = default_train(1.0);
  const auto recs = synthesize_passage(train, g, std::nullopt, std::nullopt, 50.0, quiet_params());
  // Static envelope: maximum moment over a fine sweep of load positions.
  const auto axles = axles_of(train);
  double env = 0.0;
  for (double front = 0.0; front <= 232.0; front += 0.001) {
    double m = 0.0;
    for (const auto& a : axles) m += a.weight * influence_strain(16.0, front - a.offset, 32.0);
    env = std::max(env, m);
  }
  const double gain = quiet_params().strain_per_moment * (1.0 + 0.8);
  EXPECT_NEAR(peak(channel(recs, "P5b").samples), gain * env, 1e-3 * gain * env);
}

TEST(Surrogate, EccentricityAndSections) {
  const auto g = default_girder();
  const auto recs = synthesize_passage(default_train(360.0), g, std::nullopt, std::nullopt, 1000.0, quiet_params());
  EXPECT_NEAR(peak(channel(recs, "P12b").samples) / peak(channel(recs, "P3b").samples), 0.7, 1e-12);
  EXPECT_GT(peak(channel(recs, "P5b").samples), peak(channel(recs, "P3b").samples));
  EXPECT_GT(peak(channel(recs, "P5b").samples), peak(channel(recs, "P7b").samples));
  EXPECT_LT(*std::min_element(channel(recs, "P3t").samples.begin(), channel(recs, "P3t").samples.end()), 0.0);

  const auto down = synthesize_passage(default_train(360.0, 1.0, Lane::Down), g, std::nullopt, std::nullopt,
                                       1000.0, quiet_params());
  EXPECT_GT(peak(channel(down, "P12b").samples), peak(channel(down, "P3b").samples));
}

TEST(Surrogate, ZeroDamageIsBaseline) {
  const auto g = default_girder();
  const auto irr = default_irregularities()[3];
  const PassageContext ctx{"X", "w100", 99};
  const auto a = synthesize_passage(default_train(), g, std::nullopt, irr, 1000.0, {}, ctx);
  const auto b = synthesize_passage(default_train(), g, DamageSpec{Section::Quarter, ComponentKind::BottomPlate, 0.0},
                                    irr, 1000.0, {}, ctx);
  for (std::size_t c = 0; c < a.size(); ++c) EXPECT_EQ(a[c].samples, b[c].samples);
}

TEST(Surrogate, DamageIsLocalAndGrowsWithDelta) {
  const auto g = default_girder();
  const PassageContext ctx{"X", "w100", 5};
  const auto base = synthesize_passage(default_train(), g, std::nullopt, std::nullopt, 1000.0, quiet_params(), ctx);
  double prev = 0.0;
  for (double d : {0.05, 0.10, 0.20}) {
    const auto dam = synthesize_passage(default_train(), g, DamageSpec{Section::Quarter, ComponentKind::BottomPlate, d},
                                        std::nullopt, 1000.0, quiet_params(), ctx);
    double diff = 0.0;
    for (std::size_t i = 0; i < base[0].samples.size(); ++i)
      diff += std::pow(channel(dam, "P3b").samples[i] - channel(base, "P3b").samples[i], 2);
    EXPECT_GT(diff, prev);
    prev = diff;
    EXPECT_EQ(channel(dam, "P5b").samples, channel(base, "P5b").samples);
    EXPECT_EQ(channel(dam, "P3t").samples, channel(base, "P3t").samples);
  }
  EXPECT_THROW(synthesize_passage(default_train(), g, DamageSpec{Section::Quarter, ComponentKind::BottomPlate, 1.0},
                                  std::nullopt),
               std::invalid_argument);
}

TEST(Surrogate, NoiseLevel) {
  const std::vector<double> flat(100000, 4.0);
  const auto y = add_noise(flat, 0.05, 17);
  double s = 0.0, ss = 0.0;
  for (double v : y) {
    s += v - 4.0;
    ss += (v - 4.0) * (v - 4.0);
  }
  const double n = static_cast<double>(y.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, 0.2, 0.01);
  EXPECT_EQ(add_noise(flat, 0.0, 1), flat);
  EXPECT_THROW(add_noise(flat, -0.1, 1), std::invalid_argument);
}

TEST(Surrogate, PassagesAreReproducible) {
  ExperimentPlan p;
  p.channels = {"P3b"};
  const auto conds = enumerate_conditions(p);
  const auto a = generate_passage(conds[5].passages[0], p, default_girder());
  const auto b = generate_passage(conds[5].passages[0], p, default_girder());
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].samples, b[0].samples);
  const auto c = generate_passage(conds[5].passages[1], p, default_girder());
  EXPECT_NE(a[0].samples, c[0].samples);
}

TEST(Plan, DefaultCountsAndSingleCondition) {
  const auto sum = generate_experiment(ExperimentPlan{}, default_girder(), std::nullopt);
  EXPECT_EQ(sum.baseline_conditions, 96u);
  EXPECT_EQ(sum.damage_conditions, 216u);

  ExperimentPlan one;
  one.speeds = {360.0};
  one.weight_classes = {{"w100", 1.0}};
  one.irregularities = {default_irregularities()[0]};
  one.include_damage = false;
  const auto s1 = generate_experiment(one, default_girder(), std::nullopt);
  EXPECT_EQ(s1.baseline_conditions, 1u);
  EXPECT_EQ(s1.damage_conditions, 0u);
}

TEST(Plan, ValidationNamesTheField) {
  auto expect_field = [](const nlohmann::json& j, const std::string& field) {
    try {
      validate(plan_from_json(j), default_girder());
      FAIL() << j.dump();
    } catch (const std::exception& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field({{"speeds", {-5.0}}}, "plan.speeds");
  expect_field({{"noise_level", -1.0}}, "plan.noise_level");
  expect_field({{"deltas", {1.5}}}, "plan.deltas");
  expect_field({{"channels", {"P99"}}}, "plan.channels");
  expect_field({{"unknown_key", 1}}, "unknown_key");

  const auto p = plan_from_json(to_json(ExperimentPlan{}));
  EXPECT_EQ(to_json(p), to_json(ExperimentPlan{}));
}

TEST(Cli, ExitCodesAndErrors) {
  std::string out, err;
  EXPECT_EQ(run_cli({}, &out, &err), cli::kError);
  EXPECT_EQ(run_cli({"simulate", "--plan", "/nonexistent/plan.toml", "--out", "x"}, &out, &err), cli::kError);
  EXPECT_NE(err.find("/nonexistent/plan.toml"), std::string::npos);
  EXPECT_EQ(run_cli({"baseline", "--data", "/nonexistent/data"}, &out, &err), cli::kError);
  EXPECT_FALSE(err.empty());

  const auto dir = scratch_dir("bad_plan");
  write(dir / "bad.toml", "speeds = [360.0]\nnoise_level = -1.0\n");
  EXPECT_EQ(run_cli({"simulate", "--plan", (dir / "bad.toml").string(), "--out", (dir / "o").string()}, &out, &err),
            cli::kError);
  EXPECT_NE(err.find("plan.noise_level"), std::string::npos) << err;
  write(dir / "syntax.toml", "speeds = [360.0\n");
  EXPECT_EQ(run_cli({"simulate", "--plan", (dir / "syntax.toml").string(), "--dry-run"}, &out, &err), cli::kError);
  EXPECT_NE(err.find("syntax.toml:"), std::string::npos) << err;
}

TEST(Cli, DryRunPrintsManifestOnly) {
  const auto dir = scratch_dir("dry");
  std::string out;
  ASSERT_EQ(run_cli({"simulate", "--dry-run", "--out", (dir / "data").string()}, &out), cli::kOk);
  const auto m = nlohmann::json::parse(out);
  EXPECT_EQ(m["counts"]["baseline_conditions"], 96);
  EXPECT_EQ(m["counts"]["damage_conditions"], 216);
  EXPECT_FALSE(fs::exists(dir / "data"));
}

TEST(Cli, PrecedenceMatrix) {
  const auto dir = scratch_dir("precedence");
  write(dir / "cfg.toml", "alpha = 0.05\nmodel_store = \"from_file\"\norder_max = 40\n");
  write(dir / "cfg.json", R"({"alpha": 0.02, "ar_order": 4})");
  write(dir / "bad.json", R"({"alpha": 0.02, "typo_key": 4})");
  ::unsetenv(cli::kModelStoreEnv);

  struct Case {
    bool flag, file, env;
    std::string expect;
  };
  for (const auto& c : std::vector<Case>{{false, false, false, "models"},
                                         {false, false, true, "from_env"},
                                         {false, true, false, "from_file"},
                                         {false, true, true, "from_file"},
                                         {true, false, false, "from_flag"},
                                         {true, false, true, "from_flag"},
                                         {true, true, false, "from_flag"},
                                         {true, true, true, "from_flag"}}) {
    if (c.env)
      ::setenv(cli::kModelStoreEnv, "from_env", 1);
    else
      ::unsetenv(cli::kModelStoreEnv);
    cli::PipelineFlags f;
    if (c.file) f.config = (dir / "cfg.toml").string();
    if (c.flag) f.model_store = "from_flag";
    EXPECT_EQ(f.resolve().model_store.string(), c.expect) << c.flag << c.file << c.env;
  }
  ::unsetenv(cli::kModelStoreEnv);

  cli::PipelineFlags f;
  EXPECT_DOUBLE_EQ(f.resolve().alpha, 0.01);
  f.config = (dir / "cfg.toml").string();
  EXPECT_DOUBLE_EQ(f.resolve().alpha, 0.05);
  EXPECT_EQ(f.resolve().order_max, 40);
  f.alpha = 0.03;
  EXPECT_DOUBLE_EQ(f.resolve().alpha, 0.03);
  f.config = (dir / "cfg.json").string();
  EXPECT_EQ(f.resolve().ar_order, 4);
  f.ar_order = "auto";
  EXPECT_FALSE(f.resolve().ar_order);
  f.config = (dir / "bad.json").string();
  EXPECT_THROW(f.resolve(), std::exception);
  f.config.clear();
  f.alpha = 0.7;
  EXPECT_THROW(f.resolve(), std::invalid_argument);
}

TEST(Cli, PipelineOnTinyDataset) {
  const auto dir = scratch_dir("pipeline");
  write(dir / "plan.toml",
        "speeds = [360.0]\nchannels = [\"P3b\"]\nbaseline_passages = 3\ndamage_passages = 2\n"
        "damage_sections = [\"L/4\"]\ndamage_components = [\"bottom_plate\"]\ndeltas = [0.20]\n"
        "irregularities = [{label = \"a\", level = 1.0, exponent = 2.0, seed = 1},"
        " {label = \"b\", level = 0.5, exponent = 2.5, seed = 2}]\n");
  const auto data = (dir / "data").string();
  std::string out, err;
  ASSERT_EQ(run_cli({"simulate", "--plan", (dir / "plan.toml").string(), "--out", data}, &out, &err), cli::kOk) << err;
  EXPECT_EQ(out, "8 baseline / 1 damaged conditions written\n");

  const auto models = (dir / "models").string();
  ASSERT_EQ(run_cli({"baseline", "--data", data + "/baseline", "--models", models, "--order-max", "10"}, &out, &err),
            cli::kOk)
      << err;
  EXPECT_TRUE(fs::exists(dir / "models" / "model_P3b_360.json"));
  EXPECT_TRUE(fs::exists(dir / "models" / "bic_P3b_360.csv"));

  const auto reports = (dir / "reports").string();
  EXPECT_EQ(run_cli({"detect", "--data", data + "/damaged", "--models", models, "--out", reports, "--name", "d20"},
                    &out, &err),
            cli::kOutliers)
      << err;
  EXPECT_EQ(run_cli({"report", reports + "/d20.json", "--out", reports}, &out, &err), cli::kOk) << err;
  std::ifstream mat(dir / "reports" / "detection_matrix.csv");
  std::string header, row;
  std::getline(mat, header);
  std::getline(mat, row);
  EXPECT_EQ(row.rfind("d20,", 0), 0u);
  EXPECT_FALSE(std::getline(mat, header));

  EXPECT_EQ(run_cli({"detect", "--data", data + "/damaged", "--models", (dir / "none").string()}, &out, &err),
            cli::kError);
  write(dir / "bad_report.json", "{\"rows\": 3}");
  EXPECT_EQ(run_cli({"report", (dir / "bad_report.json").string(), "--out", reports}, &out, &err), cli::kError);
  EXPECT_NE(err.find("malformed report"), std::string::npos);
}
