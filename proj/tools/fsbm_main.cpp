// fsbm: keypoint generation, training, evaluation and plotting.
//
// Configuration comes from one INI file (-c) whose values can be replaced
// with flags or with --set section.key=value, applied in that order.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "fsbm/io.hpp"
#include "fsbm/matching.hpp"

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> scene;
  std::optional<double> alpha;
  std::optional<long long> n_keypoints;
  std::optional<std::string> keypoints;
  std::optional<long long> epochs;
  std::optional<long long> pairs;
  std::optional<long long> inner_steps;
  std::optional<double> lr;
  std::optional<long long> batch;
  std::optional<long long> sde_steps;
  std::optional<std::uint64_t> seed;
  std::optional<long long> n_eval;
  std::optional<std::string> ic;
  std::optional<std::string> output;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override, e.g. training.lr=5e-4 (repeatable)");
  app->add_option("--scene", c.scene, "stunnel | vneck | opinion");
  app->add_option("--alpha", c.alpha, "Guidance weight");
  app->add_option("--n-keypoints", c.n_keypoints, "Number of keypoints");
  app->add_option("--keypoints", c.keypoints, "Keypoint file");
  app->add_option("--epochs", c.epochs);
  app->add_option("--pairs", c.pairs, "Pairs per epoch");
  app->add_option("--inner-steps", c.inner_steps);
  app->add_option("--lr", c.lr);
  app->add_option("--batch", c.batch);
  app->add_option("--sde-steps", c.sde_steps);
  app->add_option("--seed", c.seed);
  app->add_option("--n-eval", c.n_eval, "Particles simulated for evaluation");
  app->add_option("--ic", c.ic, "Initial condition(s): vanilla, perturbed_mean, ... or all");
  app->add_option("-o,--output", c.output, "Output directory");
}

std::string text(const std::string& v) { return v; }
std::string text(double v) { return fsbm::io::format_double(v); }
std::string text(long long v) { return std::to_string(v); }
std::string text(std::uint64_t v) { return std::to_string(v); }

template <class T>
void put(std::vector<std::string>& o, const char* key, const std::optional<T>& v) {
  if (v) o.push_back(std::string(key) + "=" + text(*v));
}

fsbm::config::RunConfig resolve(const Common& c) {
  std::vector<std::string> o;
  put(o, "scene.name", c.scene);
  put(o, "guidance.alpha", c.alpha);
  put(o, "guidance.n_keypoints", c.n_keypoints);
  put(o, "guidance.keypoint_file", c.keypoints);
  put(o, "training.epochs", c.epochs);
  put(o, "training.pairs_per_epoch", c.pairs);
  put(o, "training.inner_steps", c.inner_steps);
  put(o, "training.lr", c.lr);
  put(o, "training.batch", c.batch);
  put(o, "training.sde_steps", c.sde_steps);
  put(o, "training.seed", c.seed);
  put(o, "eval.n_eval", c.n_eval);
  put(o, "eval.initial_condition", c.ic);
  put(o, "output.dir", c.output);
  o.insert(o.end(), c.sets.begin(), c.sets.end());
  if (c.config_file.empty()) return fsbm::config::parse_config("", o);
  return fsbm::config::load_config(c.config_file, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback Schrodinger bridge matching"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  Common common;
  std::string kp_out, checkpoint, csv, plot_dir;

  auto* gen = app.add_subcommand("generate-keypoints", "Pair and route keypoints");
  add_common(gen, common);
  gen->add_option("--keypoints-out", kp_out, "Destination keypoint file");

  auto* train = app.add_subcommand("train", "Run bridge matching");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Forward network checkpoint");

  auto* sim = app.add_subcommand("simulate", "Simulate the reference dynamics only");
  add_common(sim, common);

  auto* plot = app.add_subcommand("plot", "Render SVG snapshots from a trajectory CSV");
  add_common(plot, common);
  plot->add_option("--csv", csv, "Trajectory CSV")->required();
  plot->add_option("--plot-dir", plot_dir, "Directory for the SVG files");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*train && !common.seed) throw fsbm::config::ConfigError("train requires --seed");
    const fsbm::config::RunConfig cfg = resolve(common);
    if (*gen) fsbm::cli::generate_keypoints(cfg, kp_out, std::cout);
    if (*train) fsbm::cli::train(cfg, std::cout);
    if (*eval) fsbm::cli::eval(cfg, checkpoint, std::cout);
    if (*sim) fsbm::cli::simulate(cfg, std::cout);
    if (*plot) fsbm::cli::plot(cfg, csv, plot_dir, std::cout);
  } catch (const fsbm::config::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const fsbm::matching::TrainingAborted& e) {
    spdlog::error("training aborted: {}", e.what());
    return 3;
  } catch (const fsbm::matching::DivergenceError& e) {
    spdlog::error("diverged: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
