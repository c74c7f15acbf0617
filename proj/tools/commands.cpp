#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>

#include "fsbm/driftnet.hpp"
#include "fsbm/guidance.hpp"
#include "fsbm/io.hpp"
#include "fsbm/matching.hpp"
#include "fsbm/scenes.hpp"

namespace fsbm::cli {

namespace fs = std::filesystem;
using scenes::InitialCondition;

namespace {

const char* table_label(InitialCondition ic) {
  switch (ic) {
    case InitialCondition::Vanilla:
      return "Vanilla";
    case InitialCondition::PerturbedMean:
      return "Perturbed Mean";
    case InitialCondition::PerturbedSTD:
      return "Perturbed STD";
    case InitialCondition::Uniform:
      return "Uniform Distribution";
  }
  return "?";
}

bool wants(const config::RunConfig& c, const std::string& metric) {
  return std::find(c.metrics.begin(), c.metrics.end(), metric) != c.metrics.end();
}

bool report_kl(const config::RunConfig& c) { return wants(c, "kl") && !c.scene.is_crowd(); }

std::uint64_t eval_seed(const config::RunConfig& c, std::ostream& log) {
  if (!c.has_seed) log << "no seed given; using 0\n";
  return c.has_seed ? c.training.seed : 0;
}

std::ofstream open_text(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw CommandError("cannot write " + file.string());
  return out;
}

// Evaluates every configured initial condition, dumps trajectories into
// `dir`, writes <dir>/<table> and prints the summary table.
std::vector<matching::Evaluation> evaluate_all(const config::RunConfig& c,
                                               const driftnet::DriftNetwork& net,
                                               std::uint64_t seed, const fs::path& dir,
                                               const std::string& table, bool plots,
                                               std::ostream& log) {
  std::vector<matching::Evaluation> out;
  const bool kl = report_kl(c);
  std::ofstream csv = open_text(dir / table);
  csv << "initial_condition,w2" << (kl ? ",kl" : "") << '\n';
  log << std::left << std::setw(22) << "initial condition" << std::setw(12) << "W2"
      << (kl ? "KL" : "") << '\n';
  for (InitialCondition ic : c.eval_conditions) {
    matching::Evaluation ev =
        matching::evaluate(net, c.scene, ic, c.n_eval, c.training.sde_steps, seed);
    const std::string name = scenes::to_string(ic);
    const io::Snapshots snaps = io::take_snapshots(ev.trajectory);
    io::write_trajectory_csv(dir / ("trajectories_" + name + ".csv"), snaps);
    if (plots) io::write_snapshot_svgs(dir / "plots", name, snaps, c.scene);
    csv << name << ',' << io::format_double(ev.w2);
    if (kl) csv << ',' << io::format_double(ev.kl);
    csv << '\n';
    log << std::left << std::setw(22) << table_label(ic) << std::setw(12) << std::fixed
        << std::setprecision(4) << ev.w2;
    if (kl) log << ev.kl;
    log << '\n';
    out.push_back(std::move(ev));
  }
  log.unsetf(std::ios::fixed);
  return out;
}

}  // namespace

fs::path generate_keypoints(const config::RunConfig& c, const fs::path& out, std::ostream& log) {
  fs::path file = out;
  if (file.empty()) file = c.keypoint_file;
  if (file.empty()) file = c.output_dir / "keypoints.txt";

  Rng rng(derive_seed(eval_seed(c, log), 21));
  const guidance::KeypointSet ks =
      scenes::generate_keypoints(c.scene, c.n_keypoints, rng, c.keypoints);
  io::write_keypoints(file, ks);

  const double pair_cost = (ks.source_points - ks.target_points).rowwise().squaredNorm().mean();
  log << "wrote " << file.string() << ": N=" << ks.size() << " d=" << ks.dim()
      << " T=" << ks.steps() << '\n'
      << "mean squared pair distance " << pair_cost << '\n';
  if (c.scene.is_crowd()) {
    double worst = 0.0;
    for (const Mat& tr : ks.trajectories)
      for (Index k = 0; k < tr.rows(); ++k)
        worst = std::max(worst, c.scene.obstacle_cost(tr.row(k).transpose()));
    log << "max obstacle cost along keypoint trajectories " << worst << '\n';
  }
  return file;
}

void train(const config::RunConfig& c, std::ostream& log) {
  config::require_seed(c);
  std::unique_ptr<guidance::GuidanceContext> guide;
  if (c.alpha > 0.0) {
    if (c.keypoint_file.empty())
      throw CommandError("guidance.alpha > 0 requires guidance.keypoint_file");
    if (!fs::exists(c.keypoint_file))
      throw CommandError("keypoint file not found: " + c.keypoint_file.string());
    guide = std::make_unique<guidance::GuidanceContext>(io::read_keypoints(c.keypoint_file),
                                                        c.alpha);
    if (guide->keypoints().dim() != c.scene.dim)
      throw CommandError("keypoint dimension does not match the scene");
  }

  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  // A rerun into the same directory must not append to old metrics.
  fs::remove(dir / "metrics.jsonl");
  open_text(dir / "config.ini") << config::to_ini(c);

  matching::TrainConfig tc = c.training;
  tc.run_dir = dir;
  const matching::TrainResult result = matching::run_fsbm(c.scene, guide.get(), tc);
  log << "trained " << result.state.epoch << " epochs"
      << (result.early_stopped ? " (early stop)" : "") << '\n';
  evaluate_all(c, result.state.forward_net, c.training.seed, dir, "summary.csv", false, log);
}

void eval(const config::RunConfig& c, const fs::path& checkpoint, std::ostream& log) {
  const fs::path ckpt = checkpoint.empty() ? c.output_dir / "forward.ckpt" : checkpoint;
  if (!fs::exists(ckpt)) throw CommandError("checkpoint not found: " + ckpt.string());
  const driftnet::DriftNetwork net = driftnet::load_checkpoint(ckpt);
  if (net.config().input_dim != c.scene.dim)
    throw CommandError("checkpoint dimension " + std::to_string(net.config().input_dim) +
                       " does not match scene dimension " + std::to_string(c.scene.dim));
  evaluate_all(c, net, eval_seed(c, log), c.output_dir / "eval", "metrics.csv", true, log);
}

void simulate(const config::RunConfig& c, std::ostream& log) {
  const std::uint64_t seed = eval_seed(c, log);
  const fs::path dir = c.output_dir / "reference";
  for (InitialCondition ic : c.eval_conditions) {
    const matching::Trajectory tr =
        matching::simulate_reference(c.scene, c.n_eval, c.training.sde_steps, seed, ic);
    const std::string name = scenes::to_string(ic);
    const io::Snapshots snaps = io::take_snapshots(tr);
    io::write_trajectory_csv(dir / (name + ".csv"), snaps);
    io::write_snapshot_svgs(dir / "plots", name, snaps, c.scene);
    log << "reference " << name << ": " << tr.terminal().rows() << " particles\n";
  }
}

void plot(const config::RunConfig& c, const fs::path& csv, const fs::path& out_dir,
          std::ostream& log) {
  if (!fs::exists(csv)) throw CommandError("CSV not found: " + csv.string());
  const io::Snapshots snaps = io::read_trajectory_csv(csv);
  const fs::path dir = out_dir.empty() ? csv.parent_path() : out_dir;
  for (const fs::path& f : io::write_snapshot_svgs(dir, csv.stem().string(), snaps, c.scene))
    log << "wrote " << f.string() << '\n';
}

}  // namespace fsbm::cli
