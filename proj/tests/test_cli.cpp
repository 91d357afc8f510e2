#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mamforge/cli.hpp"
#include "mamforge/testing/oracles.hpp"

using namespace mamforge;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "mamforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mamforge_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    cli::write_text_file(path(name), text);
    return path(name);
  }
  fs::path dir_;
};

std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) out.push_back(c);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  auto l = split_lines(text);
  if (!l.empty() && l.back().empty()) l.pop_back();
  return l;
}

}  // namespace

TEST_F(Cli, VersionFlag) {
  const auto r = run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(cli::kVersion), std::string::npos);
}

TEST_F(Cli, VoltageRow) {
  const auto r = run({"analyze", "voltage", "--def", "-3", "--n", "2", "--manifest", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto l = lines_of(r.out);
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0], "voltage_v");
  EXPECT_EQ(l[1], "1.5");
}

TEST_F(Cli, BatchMatchesFlags) {
  const auto batch = write("wsep.csv", "e1,e2,e12,area\n-10,-12,-23,10\n-5,-5,-10.5,4\n");
  const auto r = run({"analyze", "wsep", "--batch", batch, "--manifest", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto l = lines_of(r.out);
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0], "w_sep_ev_per_a2,w_sep_j_per_m2");
  EXPECT_DOUBLE_EQ(std::stod(csv_cells(l[1])[0]), 0.1);
  EXPECT_DOUBLE_EQ(std::stod(csv_cells(l[2])[0]), 0.125);
  const auto single = run({"analyze", "wsep", "--e1", "-10", "--e2", "-12", "--e12", "-23", "--area", "10", "--manifest",
                           path("m2.json")});
  EXPECT_EQ(lines_of(single.out)[1], l[1]);
}

TEST_F(Cli, CubicModuli) {
  const auto r = run({"analyze", "moduli", "--cubic", "100,50,30", "--manifest", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cells = csv_cells(lines_of(r.out)[1]);
  EXPECT_NEAR(std::stod(cells[0]), 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(std::stod(cells[1]), 28.0, 1e-12);
}

TEST_F(Cli, UsageErrorsExit64) {
  EXPECT_EQ(run({"frobnicate"}).code, 64);
  EXPECT_EQ(run({"analyze", "voltage", "--def", "1", "--n", "1", "--bogus", "2"}).code, 64);
  const auto missing = run({"analyze", "voltage", "--def", "1", "--manifest", path("m.json")});
  EXPECT_EQ(missing.code, 64);
  EXPECT_NE(missing.err.find("mamforge: error[usage]"), std::string::npos);
}

TEST_F(Cli, ErrorCategoriesMapToExitCodes) {
  const auto data = run({"analyze", "voltage", "--def", "1", "--n", "0", "--manifest", path("m.json")});
  EXPECT_EQ(data.code, 66);
  EXPECT_NE(data.err.find("error[data]"), std::string::npos);
  const auto cfg = write("bad.cfg", "opt.lr = 0.1\nnot a pair\n");
  const auto c = run({"train", "--data", std::string(MAMFORGE_DATA_DIR) + "/lj_cluster_30x8.xyz", "--model-out",
                      path("m.json"), "--config", cfg});
  EXPECT_EQ(c.code, 65);
  const auto unknown = run({"train", "--data", std::string(MAMFORGE_DATA_DIR) + "/lj_cluster_30x8.xyz", "--model-out",
                            path("m.json"), "--set", "opt.bogus=1"});
  EXPECT_EQ(unknown.code, 65);
  EXPECT_EQ(run({"analyze", "sliding", "--profile", path("absent.csv")}).code, 66);
}

TEST_F(Cli, PredictDimerAtMinimum) {
  const LennardJones lj;
  const double r0 = lj.minimum_distance();
  const auto s = make_structure({18, 18}, {Vec3(0, 0, 0), Vec3(r0, 0, 0)});
  const auto xyz = write("dimer.xyz", format_structure(s));
  const auto r = run({"predict", "--structure", xyz, "--model", "oracle:lj", "--out", path("out.xyz"), "--summary",
                      path("summary.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto frames = read_xyz_file(path("out.xyz"));
  ASSERT_EQ(frames.size(), 1u);
  ASSERT_TRUE(frames[0].forces);
  for (const auto& f : *frames[0].forces) EXPECT_LT(f.norm(), 1e-10);
  EXPECT_NEAR(*frames[0].energy, lj.pair(r0).first, 1e-12);
  const auto summary = lines_of(read_text_file(path("summary.csv")));
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(csv_cells(summary[0]).size(), 15u);
  EXPECT_TRUE(fs::exists(path("out.xyz.manifest.json")));
}

TEST_F(Cli, PredictIsReproducibleAndStressSymmetric) {
  Rng rng(5);
  Mat3 cell = Mat3::Identity() * 12.0;
  cell(1, 0) = 0.7;
  const auto s = oracle::random_cluster(rng, 8, 12.0, 2.0, {18});
  auto periodic = s;
  periodic.cell = cell;
  periodic.periodic = {true, true, true};
  const auto xyz = write("cell.xyz", format_structure(periodic));
  const std::vector<std::string> base{"predict", "--structure", xyz, "--model", "oracle:lj", "--set", "lj.cutoff=5.5"};
  auto a = base, b = base;
  a.insert(a.end(), {"--summary", path("a.csv")});
  b.insert(b.end(), {"--summary", path("b.csv")});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  const auto text = read_text_file(path("a.csv"));
  EXPECT_EQ(text, read_text_file(path("b.csv")));
  const auto cells = csv_cells(lines_of(text)[1]);
  Mat3 sigma;
  for (int k = 0; k < 9; ++k) sigma(k / 3, k % 3) = std::stod(cells[static_cast<std::size_t>(6 + k)]);
  EXPECT_LT((sigma - sigma.transpose()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT(sigma.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(Cli, ManifestRecordsDigestsAndConfig) {
  const auto xyz = write("dimer.xyz", format_structure(make_structure({18, 18}, {Vec3(0, 0, 0), Vec3(3, 0, 0)})));
  const auto cfg = write("run.cfg", "# pair potential\nlj.epsilon = 0.2\nlj.sigma = 2.5\n");
  ASSERT_EQ(run({"predict", "--structure", xyz, "--model", "oracle:lj", "--config", cfg, "--set", "lj.epsilon=0.3",
                 "--summary", path("s.csv"), "--manifest", path("m1.json")})
                .code,
            0);
  const auto m1 = nlohmann::json::parse(read_text_file(path("m1.json")));
  EXPECT_EQ(m1["subcommand"], "predict");
  EXPECT_EQ(m1["version"], cli::kVersion);
  EXPECT_EQ(m1["config"]["lj.epsilon"], "0.3");  // command line beats file
  EXPECT_EQ(m1["config"]["lj.sigma"], "2.5");
  EXPECT_EQ(m1["config"]["lj.cutoff"], "5.75");  // default
  // Known digest of the structure file contents.
  EXPECT_EQ(m1["inputs"][xyz], cli::sha256_hex(read_text_file(xyz)));
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  ASSERT_EQ(run({"predict", "--structure", xyz, "--model", "oracle:lj", "--config", cfg, "--summary", path("s.csv"),
                 "--manifest", path("m2.json")})
                .code,
            0);
  const auto m2 = nlohmann::json::parse(read_text_file(path("m2.json")));
  EXPECT_EQ(m1["inputs"][xyz], m2["inputs"][xyz]);
  write("dimer.xyz", format_structure(make_structure({18, 18}, {Vec3(0, 0, 0), Vec3(3.1, 0, 0)})));
  ASSERT_EQ(run({"predict", "--structure", xyz, "--model", "oracle:lj", "--summary", path("s.csv"), "--manifest",
                 path("m3.json")})
                .code,
            0);
  const auto m3 = nlohmann::json::parse(read_text_file(path("m3.json")));
  EXPECT_NE(m1["inputs"][xyz], m3["inputs"][xyz]);
}

TEST_F(Cli, TrainEvaluateRoundTrip) {
  const std::string data = std::string(MAMFORGE_DATA_DIR) + "/lj_cluster_30x8.xyz";
  const std::vector<std::string> train{"train", "--data", data, "--set", "opt.epochs=5", "--set", "model.hidden=6"};
  auto a = train, b = train;
  a.insert(a.end(), {"--model-out", path("a.json")});
  b.insert(b.end(), {"--model-out", path("b.json")});
  const auto ra = run(a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(read_text_file(path("a.json")), read_text_file(path("b.json")));
  const auto hist = lines_of(read_text_file(path("a.json.history.csv")));
  EXPECT_EQ(hist[0], "epoch,rmse_e_train,rmse_e_val,rmse_f_train,rmse_f_val,rmse_q_train,rmse_q_val");
  EXPECT_EQ(hist.size(), 7u);
  const auto manifest = nlohmann::json::parse(read_text_file(path("a.json.manifest.json")));
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_EQ(manifest["config"]["opt.epochs"], "5");

  const auto ev = run({"evaluate", "--data", data, "--model", path("a.json"), "--metrics-out", path("metrics.csv"),
                       "--parity-prefix", path("parity_")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(lines_of(read_text_file(path("metrics.csv"))).size(), 4u);
  EXPECT_EQ(lines_of(read_text_file(path("parity_force.csv"))).size(), 1u + 30u * 8u * 3u);

  const auto pr = run({"predict", "--structure", data, "--model", path("a.json"), "--summary", path("p.csv")});
  ASSERT_EQ(pr.code, 0) << pr.err;
  EXPECT_EQ(lines_of(read_text_file(path("p.csv"))).size(), 31u);
}

TEST_F(Cli, SlidingProfile) {
  std::string text = "l_a,w_sep_j_per_m2\n";
  const double amp = 0.2, period = 4.0;
  for (int k = 0; k < 64; ++k) {
    const double l = period * k / 64.0;
    text += format_number(l) + "," + format_number(amp * std::sin(2 * units::kPi * l / period)) + "\n";
  }
  const auto prof = write("profile.csv", text);
  const auto r = run({"analyze", "sliding", "--profile", prof, "--traction-out", path("t.csv"), "--manifest", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const double tau = std::stod(csv_cells(lines_of(r.out)[1])[1]);
  EXPECT_NEAR(tau, 2 * units::kPi * amp / period, 0.01 * 2 * units::kPi * amp / period);
  EXPECT_EQ(lines_of(read_text_file(path("t.csv"))).size(), 65u);
}

TEST_F(Cli, CycleTraceIsReproducible) {
  auto host = fcc_lattice(18, 3.6, 3, 3, 2);
  host.periodic[2] = false;
  host.cell(2, 2) = 20.0;
  const auto xyz = write("host.xyz", format_structure(host));
  const auto cfg = write("cycle.cfg",
                         "cycle.region_min = 9\ncycle.region_max = 11\ncycle.atoms_per_step = 2\n"
                         "cycle.bias_steps = 10\ncycle.seed = 9\ncycle.schedule = charge:2,discharge:1\n"
                         "relax.max_steps = 50\nrelax.fmax = 0.05\nlj.cutoff = 4.0\n");
  const std::vector<std::string> base{"cycle", "--structure", xyz, "--model", "oracle:lj", "--config", cfg};
  auto a = base, b = base;
  a.insert(a.end(), {"--trace-out", path("a.csv"), "--frames-out", path("a.xyz")});
  b.insert(b.end(), {"--trace-out", path("b.csv")});
  const auto ra = run(a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(run(b).code, 0);
  const auto trace = read_text_file(path("a.csv"));
  EXPECT_EQ(trace, read_text_file(path("b.csv")));
  const auto l = lines_of(trace);
  ASSERT_EQ(l.size(), 4u);  // header and three steps
  EXPECT_EQ(l[0], trace_csv_header());
  EXPECT_EQ(read_xyz_file(path("a.xyz")).size(), 3u);
}

TEST_F(Cli, CycleRejectsBadSchedule) {
  const auto xyz = write("host.xyz", format_structure(fcc_lattice(18, 3.6, 3, 3, 3)));
  const auto r = run({"cycle", "--structure", xyz, "--model", "oracle:lj", "--trace-out", path("t.csv"), "--set",
                      "cycle.region_min=0", "--set", "cycle.region_max=2", "--set", "cycle.schedule=melt:3"});
  EXPECT_EQ(r.code, 65);
}
