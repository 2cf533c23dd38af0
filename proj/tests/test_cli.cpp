#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <fmt/format.h>

#include "mlde/synth.hpp"
#include "test_support.hpp"

namespace mlde {
namespace {

using testing::TempDir;

struct Outcome {
  int exit_code;
  std::string err;
  std::string out;
};

Outcome run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const auto cmd = fmt::format("'{}' {} >'{}' 2>'{}'", MLDE_CLI_PATH, args, out.string(), err.string());
  const int status = std::system(cmd.c_str());
  const auto slurp = [](const std::filesystem::path& p) {
    const auto b = testing::read_bytes(p);
    return std::string(b.begin(), b.end());
  };
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err), slurp(out)};
}

TEST(Cli, UnknownFlagIsAConfigError) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "train --no-such-flag 1").exit_code, 2);
  EXPECT_EQ(run_cli(dir, "").exit_code, 2);
}

TEST(Cli, InvalidValueIsAConfigError) {
  TempDir dir;
  const auto r = run_cli(dir, fmt::format("train --train_manifest x.csv --momentum 2 --out_dir '{}'", (dir / "o").string()));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("kind=config"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("momentum"), std::string::npos) << r.err;
}

TEST(Cli, MissingManifestIsADataError) {
  TempDir dir;
  const auto r = run_cli(dir, fmt::format("train --train_manifest '{}' --out_dir '{}'", (dir / "none.csv").string(),
                                          (dir / "o").string()));
  EXPECT_EQ(r.exit_code, 3) << r.err;
  EXPECT_NE(r.err.find("kind=data"), std::string::npos) << r.err;
}

TEST(Cli, MissingCheckpointsIsAnEvaluationError) {
  TempDir dir;
  const auto s = synth::generate({dir / "data", 14, 1, 0.5});
  const auto r = run_cli(dir, fmt::format("evaluate --eval_manifest '{}' --out_dir '{}'", s.test_manifest.string(),
                                          (dir / "o").string()));
  EXPECT_EQ(r.exit_code, 5) << r.err;
  EXPECT_NE(r.err.find("MEL"), std::string::npos) << r.err;
}

TEST(Cli, SchemaAndVersion) {
  TempDir dir;
  const auto r = run_cli(dir, "config-schema");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("epochs_per_stage = "), std::string::npos);
  EXPECT_EQ(run_cli(dir, "--version").exit_code, 0);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  TempDir dir;
  testing::write_file(dir / "run.conf", "momentum = 3\n");
  // The flag overrides the invalid file value, so the run gets as far as the data.
  const auto r = run_cli(dir, fmt::format("train -c '{}' --momentum 0.5 --train_manifest '{}' --out_dir '{}'",
                                          (dir / "run.conf").string(), (dir / "none.csv").string(),
                                          (dir / "o").string()));
  EXPECT_EQ(r.exit_code, 3) << r.err;
}

}  // namespace
}  // namespace mlde
