#include "experiments.hpp"

#include "lorascape/errors.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

namespace {

void print_error(const std::string& kind, const std::string& message) {
  std::cout << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  using lorascape::cli::RunOptions;

  CLI::App app{"Low-rank adaptation landscape experiments"};
  app.require_subcommand(1);

  RunOptions opts;
  std::int64_t seed = 0;
  const struct {
    const char* name;
    const char* help;
  } commands[] = {
      {"solve_full", "proximal gradient on f + lambda ||X||_*"},
      {"solve_lora", "factored gradient descent plus second-order certificate"},
      {"estimate_constants", "Monte-Carlo restricted strong convexity / smoothness constants"},
      {"classify", "certificate plus global/spurious classification"},
      {"sweep_lambda", "solution rank over a grid of lambda"},
      {"sweep_init", "factored runs over a list of initializations"},
      {"rank_dynamics", "low-rank bias of minibatch SGD with weight decay"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opts.config_path, "TOML config")->required()->check(CLI::ExistingFile);
    sub->add_option("--outdir", opts.outdir, "output root")->capture_default_str();
    sub->add_option("--jobs", opts.jobs, "worker threads (0 = hardware)")->capture_default_str();
    sub->add_option("--seed", seed, "override the config seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  opts.experiment = sub->get_name();
  if (sub->count("--seed")) opts.seed = seed;
  if (opts.jobs == 0) opts.jobs = std::max(1u, std::thread::hardware_concurrency());
  if (const char* det = std::getenv("LORASCAPE_DETERMINISTIC"); det && std::string(det) != "0")
    opts.jobs = 1;

  try {
    const auto outcome = lorascape::cli::run_experiment(opts);
    std::cout << outcome.directory << std::endl;
    return 0;
  } catch (const lorascape::cli::ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const lorascape::InvalidInput& e) {
    print_error("invalid_input", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 3;
  }
}
