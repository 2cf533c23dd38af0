#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mlde/commands.hpp"
#include "mlde/errors.hpp"
#include "mlde/parallel.hpp"

namespace {

std::string_view kind_name(mlde::ErrorKind kind) {
  switch (kind) {
    case mlde::ErrorKind::config: return "config";
    case mlde::ErrorKind::data: return "data";
    case mlde::ErrorKind::training: return "training";
    case mlde::ErrorKind::evaluation: return "evaluation";
  }
  return "unknown";
}

// Options shared by the commands that take a run configuration.
struct RunOptions {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> flags;

  void attach(CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "run configuration file (key = value)");
    for (const auto& key : mlde::config_schema()) {
      const std::string name(key.name);
      flags[name] = sub->add_option("--" + name, values[name], std::string(key.description));
    }
  }

  mlde::RunConfig resolve() const {
    std::vector<mlde::Assignment> assignments;
    if (!config_file.empty()) assignments = mlde::read_config_file(config_file);
    for (const auto& [name, opt] : flags)
      if (opt->count() > 0) assignments.emplace_back(name, values.at(name));
    return mlde::build_run_config(assignments);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level deep ensemble for one-vs-rest skin lesion classification"};
  app.require_subcommand(1);
  int workers = 0;
  std::string log_level = "info";
  app.add_option("--workers", workers, "worker threads (0 = logical core count)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
  app.set_version_flag("--version", std::string(mlde::kToolVersion));

  mlde::synth::Options synth_opts;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate the synthetic multiscale dataset");
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("-n,--n-images", synth_opts.n_images, "number of images (>= 14)");
  synth->add_option("--seed", synth_opts.seed, "generator seed");
  synth->add_option("--test-fraction", synth_opts.test_fraction, "fraction of each class held out");

  RunOptions train_opts, predict_opts, evaluate_opts, report_opts;
  auto* train = app.add_subcommand("train", "train the seven one-vs-rest ensembles");
  train_opts.attach(train);
  auto* predict = app.add_subcommand("predict", "write prediction CSVs for eval_manifest");
  predict_opts.attach(predict);
  auto* evaluate = app.add_subcommand("evaluate", "per-class and mean AUC on eval_manifest");
  evaluate_opts.attach(evaluate);
  auto* report = app.add_subcommand("report", "ensemble vs branch comparison table");
  report_opts.attach(report);
  auto* schema = app.add_subcommand("config-schema", "print every configuration key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(mlde::ErrorKind::config);
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");
  mlde::set_worker_count(workers);

  try {
    if (synth->parsed()) {
      synth_opts.out_dir = synth_out;
      return mlde::cmd_synth(synth_opts);
    }
    if (schema->parsed()) {
      std::cout << mlde::render_config_schema();
      return 0;
    }
    const std::pair<CLI::App*, RunOptions*> runs[] = {
        {train, &train_opts}, {predict, &predict_opts}, {evaluate, &evaluate_opts}, {report, &report_opts}};
    for (const auto& [sub, opts] : runs) {
      if (!sub->parsed()) continue;
      const mlde::RunConfig config = opts->resolve();
      if (config.workers > 0) mlde::set_worker_count(config.workers);
      if (sub == train) return mlde::cmd_train(config);
      if (sub == predict) return mlde::cmd_predict(config);
      if (sub == evaluate) return mlde::cmd_evaluate(config);
      return mlde::cmd_report(config);
    }
  } catch (const mlde::ConfigError& e) {
    for (const auto& v : e.violations())
      std::cerr << "error kind=config exit=2 message=\"" << v << "\"\n";
    return e.exit_code();
  } catch (const mlde::Error& e) {
    std::cerr << "error kind=" << kind_name(e.kind()) << " exit=" << e.exit_code() << " message=\""
              << e.what() << "\"\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error kind=data exit=3 message=\"" << e.what() << "\"\n";
    return static_cast<int>(mlde::ErrorKind::data);
  }
  return 0;
}
