#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ddam/textio.hpp"
#include "json.hpp"

#include "cli_runner.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using testing_support::run_cli;
using testing_support::slurp;

namespace {

struct CliFixture : ::testing::Test {
  fs::path dir;
  void SetUp() override {
    dir = testing_support::scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  testing_support::CliRun run(const std::string& args) { return run_cli(args, dir / "stdout.txt", (dir / "stderr.txt").string()); }
  std::string err() const { return slurp(dir / "stderr.txt"); }
  std::string p(const std::string& name) const { return "'" + (dir / name).string() + "'"; }
};

}  // namespace

TEST_F(CliFixture, AmSmokeAndSummary) {
  auto r = run("am --L 64 --P 6 --seed 7 --basin-trials 20 --out " + p("am"));
  ASSERT_EQ(r.exit_code, 0) << err();
  for (const char* f : {"couplings.plam", "margins.csv", "basins.csv", "config.echo"}) {
    EXPECT_TRUE(fs::exists(dir / "am" / f)) << f;
  }
  auto j = nlohmann::json::parse(r.stdout_text);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_TRUE(j.contains("wall_ms"));
  EXPECT_EQ(j["out_dir"], (dir / "am").string());
}

TEST_F(CliFixture, AmRejectsZeroPatterns) {
  auto r = run("am --P 0 --out " + p("am"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(err().find("--P"), std::string::npos);
}

TEST_F(CliFixture, UnknownConfigKeyIsUsageError) {
  std::ofstream(dir / "bad.cfg") << "seed = 3\nbogus = 1\n";
  EXPECT_EQ(run("am --config " + p("bad.cfg") + " --out " + p("am")).exit_code, 2);
}

TEST_F(CliFixture, ConfigFileIsOverriddenByFlags) {
  std::ofstream(dir / "a.cfg") << "# comment\nL = 16\nP = 2\nseed = 5\nbasin-trials = 5\n";
  ASSERT_EQ(run("am --config " + p("a.cfg") + " --out " + p("a")).exit_code, 0) << err();
  ASSERT_EQ(run("am --config " + p("a.cfg") + " --L 20 --out " + p("b")).exit_code, 0) << err();
  EXPECT_NE(slurp(dir / "a" / "config.echo").find("L = 16"), std::string::npos);
  EXPECT_NE(slurp(dir / "b" / "config.echo").find("L = 20"), std::string::npos);
}

TEST_F(CliFixture, DataArchetypeHeaderAndSchedule) {
  ASSERT_EQ(run("data gen-archetype --n-train 20 --n-test 5 --seed 2 --out " + p("d.txt")).exit_code, 0) << err();
  EXPECT_EQ(slurp(dir / "d.txt").rfind("DDAM-DATA v1", 0), 0u);
  auto r = run("data --fraction-schedule default --out " + p("unused"));
  ASSERT_EQ(r.exit_code, 0) << err();
  auto j = nlohmann::json::parse(r.stdout_text);
  ASSERT_TRUE(j["fractions"].is_array());
  EXPECT_EQ(j["fractions"].front().get<double>(), 1e-4);
  EXPECT_EQ(j["fractions"].back().get<double>(), 1.0);
}

TEST_F(CliFixture, IngestEmptyFileFails) {
  std::ofstream(dir / "empty.txt") << "";
  EXPECT_EQ(run("data ingest --input " + p("empty.txt") + " --L 8 --out " + p("d.txt")).exit_code, 1);
  EXPECT_NE(err().find("insufficient"), std::string::npos);
}

TEST_F(CliFixture, TrainSingleSequenceNelboDoesNotIncrease) {
  std::ofstream(dir / "one.txt") << "DDAM-DATA v1 K=8 L=8 n_train=1 n_test=1 provenance=hand\n"
                                    "5 1 7 0 3 3 6 2\n---\n0 1 2 3 4 5 6 7\n";
  ASSERT_EQ(run("train --data " + p("one.txt") + " --epochs 100 --batch-size 1 --eval-time-samples 64 --out " + p("t"))
                .exit_code,
            0)
      << err();
  std::istringstream log(slurp(dir / "t" / "train_log.csv"));
  std::string line;
  std::vector<double> nelbo;
  std::getline(log, line);
  while (std::getline(log, line)) nelbo.push_back(std::stod(ddam::split(line, ',')[2]));
  ASSERT_GE(nelbo.size(), 2u);
  EXPECT_LE(nelbo.back(), nelbo.front());
}

TEST_F(CliFixture, TrainParameterGuardNamesCount) {
  std::ofstream big(dir / "big.txt");
  big << "DDAM-DATA v1 K=1000 L=20 n_train=1 n_test=1 provenance=hand\n";
  for (int i = 0; i < 20; ++i) big << i << (i == 19 ? "\n" : " ");
  big << "---\n";
  for (int i = 0; i < 20; ++i) big << i + 1 << (i == 19 ? "\n" : " ");
  big.close();
  auto r = run("train --data " + p("big.txt") + " --out " + p("t"));
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(err().find("400000000"), std::string::npos) << err();
}

TEST_F(CliFixture, ResumeMatchesUninterrupted) {
  ASSERT_EQ(run("data gen-archetype --L 6 --K 5 --n-train 30 --n-test 5 --seed 1 --out " + p("d.txt")).exit_code, 0);
  const std::string base = "train --data " + p("d.txt") + " --seed 4 --eval-every 5";
  ASSERT_EQ(run(base + " --epochs 10 --out " + p("full")).exit_code, 0) << err();
  ASSERT_EQ(run(base + " --epochs 4 --out " + p("part")).exit_code, 0) << err();
  ASSERT_EQ(run(base + " --epochs 10 --resume " + p("part/model.bin") + " --start-epoch 4 --out " + p("rest")).exit_code, 0)
      << err();
  EXPECT_EQ(slurp(dir / "full" / "model.bin"), slurp(dir / "rest" / "model.bin"));
}

TEST_F(CliFixture, Exp2WritesExactlyRequestedLevels) {
  ASSERT_EQ(run("data gen-archetype --L 6 --K 5 --n-train 30 --n-test 5 --seed 1 --out " + p("d.txt")).exit_code, 0);
  ASSERT_EQ(run("train --data " + p("d.txt") + " --epochs 5 --out " + p("t")).exit_code, 0) << err();
  ASSERT_EQ(run("exp2 --checkpoint " + p("t/model.bin") + " --data " + p("d.txt") +
                " --t-grid 0.25,0.5,0.75,1.0 --num-steps 5 --out " + p("e2"))
                .exit_code,
            0)
      << err();
  std::istringstream csv(slurp(dir / "e2" / "curves.csv"));
  std::string line;
  std::getline(csv, line);
  std::set<std::string> levels;
  while (std::getline(csv, line)) levels.insert(ddam::split(line, ',')[1]);
  EXPECT_EQ(levels, (std::set<std::string>{"0.25", "0.5", "0.75", "1"}));
}

TEST_F(CliFixture, MissingDatasetNamesPath) {
  auto r = run("exp2 --checkpoint " + p("nope.bin") + " --data " + p("missing.txt") + " --out " + p("e"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_TRUE(err().find("missing.txt") != std::string::npos || err().find("nope.bin") != std::string::npos) << err();
  auto q = run("train --data " + p("missing.txt") + " --out " + p("t"));
  EXPECT_EQ(q.exit_code, 1);
  EXPECT_NE(err().find("missing.txt"), std::string::npos);
}

TEST_F(CliFixture, DualityVerifyBinaryWithinBound) {
  ASSERT_EQ(run("duality-verify --K 2 --grid 0,0.5,0.9 --samples 200000 --seed 3 --out " + p("du")).exit_code, 0) << err();
  std::istringstream csv(slurp(dir / "du" / "duality.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    auto cells = ddam::split(line, ',');
    EXPECT_LE(std::stod(cells[4]), std::stod(cells[5])) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3);
}

TEST_F(CliFixture, LaplaceCheckFromFile) {
  std::ofstream(dir / "h.txt") << "4\n";
  ASSERT_EQ(run("laplace-check --hessian " + p("h.txt") + " --out " + p("la")).exit_code, 0) << err();
  EXPECT_NE(slurp(dir / "la" / "laplace.csv").find("0.72579135"), std::string::npos);
}

TEST_F(CliFixture, HelpListsDefaults) {
  auto r = run("sweep --help");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.stdout_text.find("--steps"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("2000"), std::string::npos);
}
