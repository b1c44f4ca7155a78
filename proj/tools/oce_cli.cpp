// oce: command-line front end for simulation, estimation, training and evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "oce/commands.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Optical coherence elastography desk laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir, mode;
  std::optional<std::uint64_t> seed;
  bool resume = false;

  const std::map<std::string, std::function<int(const oce::CommandContext&)>> commands{
      {"simulate", oce::cmd_simulate},         {"preprocess", oce::cmd_preprocess},
      {"estimate-fft", oce::cmd_estimate_fft}, {"train", oce::cmd_train},
      {"infer", oce::cmd_infer},               {"evaluate", oce::cmd_evaluate},
      {"stream-bench", oce::cmd_stream_bench}};
  const std::map<std::string, std::string> help{
      {"simulate", "synthesize one recording per grid cell and phantom"},
      {"preprocess", "phase differences, network inputs and ST maps"},
      {"estimate-fft", "conventional k-space estimates with and without angle correction"},
      {"train", "train the regressor on one cross-validation fold"},
      {"infer", "sliding-window predictions for every recording of the fold"},
      {"evaluate", "elasticity maps, MAE tables and DICE scores"},
      {"stream-bench", "real-time replay benchmark of a trained model"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "configuration file (key = value)");
    sub->add_option("--out", out_dir, "experiment directory (default: output_dir of the config)");
    sub->add_option("--seed", seed, "root seed override");
    sub->add_option("--mode", mode, "scan mode override")->check(CLI::IsMember({"line2dt", "cone3dt"}));
    if (name == "train") sub->add_flag("--resume", resume, "continue from the last saved epoch");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? oce::exit_code::kSuccess : oce::exit_code::kConfig;
  }

  oce::CommandContext ctx;
  if (!config_path.empty()) {
    ctx.cfg = oce::load_config(config_path);
  }
  if (seed) ctx.cfg.seed = *seed;
  if (!mode.empty()) ctx.cfg.scan.mode = oce::scan_mode_from_string(mode);
  ctx.cfg.validate();
  ctx.root = out_dir.empty() ? std::filesystem::path(ctx.cfg.output_dir) : std::filesystem::path(out_dir);
  ctx.resume = resume;
  return commands.at(app.get_subcommands().front()->get_name())(ctx);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const oce::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return oce::exit_code::kConfig;
  } catch (const oce::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return oce::exit_code::kNumeric;
  } catch (const oce::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return oce::exit_code::kData;
  } catch (const oce::DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return oce::exit_code::kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return oce::exit_code::kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
