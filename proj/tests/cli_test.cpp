#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "streamweave/cloud.hpp"
#include "streamweave/wire.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kCli = STREAMWEAVE_CLI;
const fs::path kData = STREAMWEAVE_TEST_DATA;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "streamweave_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const auto out = scratch() / "stdout.txt";
  const auto err = scratch() / "stderr.txt";
  const std::string cmd = "'" + kCli.string() + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string data(const std::string& name) { return "'" + (kData / name).string() + "'"; }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Cli, SimulateTinyConfig) {
  const auto r = run("simulate --config " + data("tiny_synthetic.json"));
  EXPECT_EQ(r.code, 0) << r.err;
  const auto l = lines(r.out);
  ASSERT_FALSE(l.empty());
  EXPECT_EQ(l[0], "method,rate,aggregate,nrmse,imputed_ratio,solve_ms,seed");
  EXPECT_EQ(l.size(), 1u + 3 * 2 * 2 * 4);
}

TEST(Cli, SimulateWritesOutFile) {
  const auto path = scratch() / "results.csv";
  const auto r = run("simulate --config " + data("tiny_csv.json") + " --out '" + path.string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(lines(slurp(path)).size(), 13u);
}

TEST(Cli, BadKeyNamesKey) {
  const auto r = run("simulate --config " + data("bad_key.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sampling_ratez"), std::string::npos) << r.err;
}

TEST(Cli, MissingFileNamesPath) {
  const auto r = run("simulate --config /nonexistent/streamweave.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/streamweave.json"), std::string::npos);
}

TEST(Cli, OverrideRestrictsRates) {
  const auto r = run("simulate --config " + data("tiny_synthetic.json") + " --set 'sweep.rates=[0.5]' --seed 9");
  EXPECT_EQ(r.code, 0) << r.err;
  const auto l = lines(r.out);
  ASSERT_EQ(l.size(), 1u + 3 * 4);
  for (std::size_t i = 1; i < l.size(); ++i) {
    EXPECT_NE(l[i].find(",0.5,"), std::string::npos) << l[i];
    EXPECT_EQ(l[i].substr(l[i].size() - 2), ",9");
  }
}

TEST(Cli, PartialFailureExitsTwo) {
  const auto r = run("simulate --config " + data("tiny_synthetic.json") + " --set 'sweep.rates=[0.01,0.5]'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find(",failed,"), std::string::npos);
}

TEST(Cli, OptimizeSymmetric) {
  const auto r = run("optimize --config " + data("symmetric_instance.json"));
  EXPECT_EQ(r.code, 0) << r.err;
  const auto l = lines(r.out);
  ASSERT_GE(l.size(), 3u);
  EXPECT_EQ(l[0], "stream,n_real,n_imputed,predictor,bias,epsilon");
  EXPECT_EQ(l[1], "0,5,0,1,0,0");
  EXPECT_EQ(l[2], "1,5,0,0,0,0");
  EXPECT_NE(r.out.find("# objective,"), std::string::npos);
  EXPECT_NE(r.out.find("# feasible,true"), std::string::npos);
}

TEST(Cli, OptimizeZeroEpsilonNeverImputes) {
  const auto r = run("optimize --config " + data("symmetric_instance.json") + " --set budget=7 --set 'arrivals=[20,9]'");
  EXPECT_EQ(r.code, 0) << r.err;
  for (const auto& l : lines(r.out)) {
    if (l.empty() || l[0] == '#' || l[0] == 's') continue;
    std::istringstream f(l);
    std::string stream, real, imputed;
    std::getline(f, stream, ',');
    std::getline(f, real, ',');
    std::getline(f, imputed, ',');
    EXPECT_EQ(imputed, "0") << l;
  }
}

TEST(Cli, OptimizeImputesWithSlack) {
  const auto r = run("optimize --config " + data("symmetric_instance.json") + " --set 'epsilons=[100,100]'");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("0,5,0,"), std::string::npos) << r.out;
}

TEST(Cli, OptimizeZeroBudgetIsInfeasible) {
  const auto r = run("optimize --config " + data("symmetric_instance.json") + " --set budget=0");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("infeasible"), std::string::npos);
}

TEST(Cli, SynthRowCountAndDeterminism) {
  const auto a = scratch() / "a.csv", b = scratch() / "b.csv", c = scratch() / "c.csv";
  EXPECT_EQ(run("synth --config " + data("synth_spec.json") + " --seed 4 --out '" + a.string() + "'").code, 0);
  EXPECT_EQ(run("synth --config " + data("synth_spec.json") + " --seed 4 --out '" + b.string() + "'").code, 0);
  EXPECT_EQ(run("synth --config " + data("synth_spec.json") + " --seed 5 --out '" + c.string() + "'").code, 0);
  const auto la = lines(slurp(a));
  ASSERT_EQ(la.size(), 2401u);
  EXPECT_EQ(la[0], "timestamp,device_id,value");
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
}

TEST(Cli, SynthRejectsNonPsd) {
  const auto r = run("synth --config " + data("non_psd_spec.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("positive semidefinite"), std::string::npos);
}

TEST(Cli, InspectPayloadAndStore) {
  namespace sw = streamweave;
  sw::wire::WindowPayload p;
  p.window_id = 7;
  p.streams.push_back({0, {1.0, 2.0, 3.0}, std::nullopt});
  p.streams.push_back({1, {4.0}, sw::wire::ModelBlock{sw::models::ModelKind::Linear, {0.5, 2.0}, 0, 2}});
  const auto payload_path = scratch() / "window.swv";
  {
    const auto bytes = sw::wire::encode(p);
    std::ofstream out(payload_path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  auto r = run("inspect '" + payload_path.string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("# window,7"), std::string::npos);
  EXPECT_NE(r.out.find("1,1,Linear,0,2"), std::string::npos) << r.out;

  const auto log_path = scratch() / "store.log";
  fs::remove(log_path);
  {
    sw::cloud::Store store(log_path);
    store.store(sw::cloud::impute(p));
  }
  r = run("inspect --config '" + log_path.string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
  const auto l = lines(r.out);
  ASSERT_EQ(l.size(), 1u + 8u);
  EXPECT_EQ(l[0], "device_id,window_id,aggregate,value,sample_count,imputed_count");
  EXPECT_EQ(l[1], "0,7,AVG,2,3,0");
}

TEST(Cli, HelpListsAllFlags) {
  for (const std::string sub : {"simulate", "optimize", "synth", "inspect"}) {
    const auto r = run(sub + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    for (const std::string flag : {"--config", "--seed", "--out", "--set"}) {
      EXPECT_NE(r.out.find(flag), std::string::npos) << sub << " " << flag;
    }
  }
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const std::string sub : {"simulate", "optimize", "synth", "inspect"}) EXPECT_NE(r.out.find(sub), std::string::npos);
}

TEST(Cli, RequiresOneSubcommand) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}
