#include "fsbm/config.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fsbm/io.hpp"

namespace fsbm::config {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"scene",
       {"name", "dim", "sigma", "source_mean", "source_std", "perturbed_mean", "perturbed_std",
        "uniform_half_width", "target_mean", "target_std", "obstacles", "obstacle_weight"}},
      {"guidance",
       {"alpha", "n_keypoints", "keypoint_file", "pairing_epsilon", "keypoint_knots",
        "keypoint_spline_steps", "safety_margin"}},
      {"training",
       {"epochs", "pairs_per_epoch", "inner_steps", "lr", "weight_decay", "batch", "sde_steps",
        "seed", "nu", "hidden_dim", "n_blocks", "time_embed_dim", "patience_tol", "patience",
        "monitor_samples", "max_spline_divergence"}},
      {"paths", {"K", "mc_times", "mc_samples", "spline_steps", "spline_lr", "t_min"}},
      {"eval", {"n_eval", "initial_condition", "metrics"}},
      {"output", {"dir"}},
  };
  return keys;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

long long to_int(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

// "x y z" or "x, y, z"
Vec to_vec(const std::string& key, const std::string& text) {
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::vector<double> vals;
  for (std::string tok; in >> tok;) vals.push_back(to_double(key, tok));
  if (vals.empty()) throw ConfigError(key + ": empty vector");
  return Eigen::Map<const Vec>(vals.data(), static_cast<Index>(vals.size()));
}

// Polygons separated by ';', vertices by ',', coordinates by whitespace.
std::vector<scenes::Polygon> to_polygons(const std::string& key, const std::string& text) {
  std::vector<scenes::Polygon> out;
  if (trim(text).empty()) return out;
  for (const std::string& poly : split(text, ';')) {
    if (poly.empty()) continue;
    const auto verts = split(poly, ',');
    if (verts.size() < 3) throw ConfigError(key + ": a polygon needs at least 3 vertices");
    scenes::Polygon p;
    p.vertices.resize(static_cast<Index>(verts.size()), 2);
    for (std::size_t k = 0; k < verts.size(); ++k) {
      const Vec v = to_vec(key, verts[k]);
      if (v.size() != 2) throw ConfigError(key + ": vertices need two coordinates");
      p.vertices.row(static_cast<Index>(k)) = v.transpose();
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string vec_text(const Vec& v) {
  std::string s;
  for (Index k = 0; k < v.size(); ++k) s += (k ? " " : "") + io::format_double(v(k));
  return s;
}

std::string polygons_text(const std::vector<scenes::Polygon>& polys) {
  std::string s;
  for (std::size_t p = 0; p < polys.size(); ++p) {
    if (p) s += "; ";
    const Mat& v = polys[p].vertices;
    for (Index k = 0; k < v.rows(); ++k)
      s += (k ? ", " : "") + io::format_double(v(k, 0)) + " " + io::format_double(v(k, 1));
  }
  return s;
}

void apply_override(pt::ptree& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' lacks '='");
  const std::string lhs = trim(assignment.substr(0, eq));
  const auto dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  // ptree paths use '.' as separator, matching the override syntax.
  tree.put(pt::ptree::path_type(lhs, '.'), trim(assignment.substr(eq + 1)));
}

void check_known(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError("unknown section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("[" + section + "] is not a section");
    for (const auto& [key, _] : body)
      if (!it->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
  }
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto s = tree_.get_child_optional(pt::ptree::path_type(section, '.'));
    if (!s) return std::nullopt;
    const auto v = s->get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!v) return std::nullopt;
    return trim(*v);
  }
  void get(const std::string& s, const std::string& k, double& out) const {
    if (auto v = raw(s, k)) out = to_double(s + "." + k, *v);
  }
  void get(const std::string& s, const std::string& k, int& out) const {
    if (auto v = raw(s, k)) out = static_cast<int>(to_int(s + "." + k, *v));
  }
  void get(const std::string& s, const std::string& k, Index& out) const {
    if (auto v = raw(s, k)) out = static_cast<Index>(to_int(s + "." + k, *v));
  }
  void get(const std::string& s, const std::string& k, Vec& out) const {
    if (auto v = raw(s, k)) out = to_vec(s + "." + k, *v);
  }

 private:
  const pt::ptree& tree_;
};

RunConfig from_tree(const pt::ptree& tree) {
  check_known(tree);
  const Reader r(tree);
  RunConfig c;

  const std::string name = r.raw("scene", "name").value_or("stunnel");
  Index dim = 10;
  r.get("scene", "dim", dim);
  if (dim < 1) throw ConfigError("scene.dim must be >= 1");
  try {
    c.scene = scenes::make_scene(name, dim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.scene.is_crowd() && r.raw("scene", "dim") && dim != 2)
    throw ConfigError("crowd scenes are 2D");
  r.get("scene", "sigma", c.scene.sigma);
  r.get("scene", "source_mean", c.scene.source_mean);
  r.get("scene", "source_std", c.scene.source_std);
  r.get("scene", "perturbed_mean", c.scene.perturbed_mean);
  r.get("scene", "perturbed_std", c.scene.perturbed_std);
  r.get("scene", "uniform_half_width", c.scene.uniform_half_width);
  r.get("scene", "target_mean", c.scene.target_mean);
  r.get("scene", "target_std", c.scene.target_std);
  if (auto v = r.raw("scene", "obstacles")) c.scene.obstacles = to_polygons("scene.obstacles", *v);
  r.get("scene", "obstacle_weight", c.scene.obstacle_weight);

  c.n_keypoints = c.scene.default_keypoints;
  r.get("guidance", "alpha", c.alpha);
  r.get("guidance", "n_keypoints", c.n_keypoints);
  if (auto v = r.raw("guidance", "keypoint_file")) c.keypoint_file = *v;
  r.get("guidance", "pairing_epsilon", c.keypoints.epsilon);
  r.get("guidance", "keypoint_knots", c.keypoints.knots);
  r.get("guidance", "keypoint_spline_steps", c.keypoints.spline_steps);
  r.get("guidance", "safety_margin", c.keypoints.safety_margin);

  matching::TrainConfig& t = c.training;
  r.get("training", "epochs", t.epochs);
  r.get("training", "pairs_per_epoch", t.pairs_per_epoch);
  r.get("training", "inner_steps", t.inner_steps);
  r.get("training", "lr", t.lr);
  r.get("training", "weight_decay", t.weight_decay);
  r.get("training", "batch", t.batch);
  r.get("training", "sde_steps", t.sde_steps);
  if (auto v = r.raw("training", "seed")) {
    t.seed = to_u64("training.seed", *v);
    c.has_seed = true;
  }
  r.get("training", "nu", t.nu);
  r.get("training", "hidden_dim", t.net.hidden_dim);
  r.get("training", "n_blocks", t.net.n_blocks);
  r.get("training", "time_embed_dim", t.net.time_embed_dim);
  r.get("training", "patience_tol", t.patience_tol);
  r.get("training", "patience", t.patience);
  r.get("training", "monitor_samples", t.monitor_samples);
  r.get("training", "max_spline_divergence", t.max_spline_divergence);

  // Opinion keypoints default to 2% of the pairs drawn per epoch.
  if (!r.raw("guidance", "n_keypoints") && c.scene.default_keypoints == 0)
    c.n_keypoints = std::max<Index>(1, (t.pairs_per_epoch + 25) / 50);

  r.get("paths", "K", t.spline.knots);
  r.get("paths", "mc_times", t.spline.mc_times);
  r.get("paths", "mc_samples", t.spline.mc_samples);
  r.get("paths", "spline_steps", t.spline.steps);
  r.get("paths", "spline_lr", t.spline.lr);
  r.get("paths", "t_min", t.t_min);

  r.get("eval", "n_eval", c.n_eval);
  if (auto v = r.raw("eval", "initial_condition")) {
    c.eval_conditions.clear();
    if (*v == "all") {
      c.eval_conditions.assign(std::begin(scenes::kAllInitialConditions),
                               std::end(scenes::kAllInitialConditions));
    } else {
      for (const std::string& n : split(*v, ',')) {
        try {
          c.eval_conditions.push_back(scenes::parse_initial_condition(n));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    }
  }
  if (auto v = r.raw("eval", "metrics")) c.metrics = split(*v, ',');

  if (auto v = r.raw("output", "dir")) c.output_dir = *v;
  validate(c);
  return c;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  for (const std::string& o : overrides) apply_override(tree, o);
  return from_tree(tree);
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), overrides);
}

std::string to_ini(const RunConfig& c) {
  const auto d = [](double v) { return io::format_double(v); };
  const matching::TrainConfig& t = c.training;
  std::ostringstream o;
  o << "[scene]\n"
    << "name = " << c.scene.name << "\n"
    << "dim = " << c.scene.dim << "\n"
    << "sigma = " << d(c.scene.sigma) << "\n"
    << "source_mean = " << vec_text(c.scene.source_mean) << "\n"
    << "source_std = " << d(c.scene.source_std) << "\n"
    << "perturbed_mean = " << vec_text(c.scene.perturbed_mean) << "\n"
    << "perturbed_std = " << d(c.scene.perturbed_std) << "\n"
    << "uniform_half_width = " << d(c.scene.uniform_half_width) << "\n"
    << "target_mean = " << vec_text(c.scene.target_mean) << "\n"
    << "target_std = " << d(c.scene.target_std) << "\n"
    << "obstacles = " << polygons_text(c.scene.obstacles) << "\n"
    << "obstacle_weight = " << d(c.scene.obstacle_weight) << "\n\n";
  o << "[guidance]\n"
    << "alpha = " << d(c.alpha) << "\n"
    << "n_keypoints = " << c.n_keypoints << "\n";
  if (!c.keypoint_file.empty()) o << "keypoint_file = " << c.keypoint_file.string() << "\n";
  o << "pairing_epsilon = " << d(c.keypoints.epsilon) << "\n"
    << "keypoint_knots = " << c.keypoints.knots << "\n"
    << "keypoint_spline_steps = " << c.keypoints.spline_steps << "\n"
    << "safety_margin = " << d(c.keypoints.safety_margin) << "\n\n";
  o << "[training]\n"
    << "epochs = " << t.epochs << "\n"
    << "pairs_per_epoch = " << t.pairs_per_epoch << "\n"
    << "inner_steps = " << t.inner_steps << "\n"
    << "lr = " << d(t.lr) << "\n"
    << "weight_decay = " << d(t.weight_decay) << "\n"
    << "batch = " << t.batch << "\n"
    << "sde_steps = " << t.sde_steps << "\n";
  if (c.has_seed) o << "seed = " << t.seed << "\n";
  o << "nu = " << d(t.nu) << "\n"
    << "hidden_dim = " << t.net.hidden_dim << "\n"
    << "n_blocks = " << t.net.n_blocks << "\n"
    << "time_embed_dim = " << t.net.time_embed_dim << "\n"
    << "patience_tol = " << d(t.patience_tol) << "\n"
    << "patience = " << t.patience << "\n"
    << "monitor_samples = " << t.monitor_samples << "\n"
    << "max_spline_divergence = " << d(t.max_spline_divergence) << "\n\n";
  o << "[paths]\n"
    << "K = " << t.spline.knots << "\n"
    << "mc_times = " << t.spline.mc_times << "\n"
    << "mc_samples = " << t.spline.mc_samples << "\n"
    << "spline_steps = " << t.spline.steps << "\n"
    << "spline_lr = " << d(t.spline.lr) << "\n"
    << "t_min = " << d(t.t_min) << "\n\n";
  o << "[eval]\n"
    << "n_eval = " << c.n_eval << "\n"
    << "initial_condition = ";
  for (std::size_t k = 0; k < c.eval_conditions.size(); ++k)
    o << (k ? "," : "") << scenes::to_string(c.eval_conditions[k]);
  o << "\nmetrics = ";
  for (std::size_t k = 0; k < c.metrics.size(); ++k) o << (k ? "," : "") << c.metrics[k];
  o << "\n\n[output]\n"
    << "dir = " << c.output_dir.string() << "\n";
  return o.str();
}

void validate(const RunConfig& c) {
  const auto positive = [](const char* name, long long v) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  const scenes::Scene& s = c.scene;
  if (s.source_mean.size() != s.dim || s.perturbed_mean.size() != s.dim ||
      s.target_mean.size() != s.dim)
    throw ConfigError("scene means must have dimension " + std::to_string(s.dim));
  if (!(s.sigma > 0.0) || !(s.source_std > 0.0) || !(s.target_std > 0.0) ||
      !(s.perturbed_std > 0.0) || !(s.uniform_half_width > 0.0))
    throw ConfigError("scene scales must be positive");
  if (s.obstacle_weight < 0.0) throw ConfigError("scene.obstacle_weight must be >= 0");
  if (!s.is_crowd() && !s.obstacles.empty())
    throw ConfigError("the opinion scene has no obstacles");

  if (!(c.alpha >= 0.0)) throw ConfigError("guidance.alpha must be >= 0");
  positive("guidance.n_keypoints", c.n_keypoints);
  if (!(c.keypoints.epsilon > 0.0)) throw ConfigError("guidance.pairing_epsilon must be > 0");
  positive("guidance.keypoint_knots", c.keypoints.knots);
  if (c.keypoints.knots > paths::kMaxKnots)
    throw ConfigError("guidance.keypoint_knots must be <= " + std::to_string(paths::kMaxKnots));
  positive("guidance.keypoint_spline_steps", c.keypoints.spline_steps);

  const matching::TrainConfig& t = c.training;
  positive("training.epochs", t.epochs);
  positive("training.pairs_per_epoch", t.pairs_per_epoch);
  positive("training.inner_steps", t.inner_steps);
  positive("training.batch", t.batch);
  positive("training.sde_steps", t.sde_steps);
  positive("training.hidden_dim", t.net.hidden_dim);
  positive("training.n_blocks", t.net.n_blocks);
  positive("training.patience", t.patience);
  positive("training.monitor_samples", t.monitor_samples);
  if (t.net.time_embed_dim < 4 || t.net.time_embed_dim % 2)
    throw ConfigError("training.time_embed_dim must be even and >= 4");
  if (!(t.lr > 0.0)) throw ConfigError("training.lr must be > 0");
  if (t.weight_decay < 0.0 || t.nu < 0.0 || t.patience_tol < 0.0)
    throw ConfigError("training.weight_decay, nu and patience_tol must be >= 0");

  positive("paths.K", t.spline.knots);
  if (t.spline.knots > paths::kMaxKnots)
    throw ConfigError("paths.K must be <= " + std::to_string(paths::kMaxKnots));
  positive("paths.mc_times", t.spline.mc_times);
  positive("paths.mc_samples", t.spline.mc_samples);
  positive("paths.spline_steps", t.spline.steps);
  if (!(t.spline.lr > 0.0)) throw ConfigError("paths.spline_lr must be > 0");
  if (!(t.t_min > 0.0 && t.t_min < 0.5)) throw ConfigError("paths.t_min must lie in (0, 0.5)");

  positive("eval.n_eval", c.n_eval);
  if (c.eval_conditions.empty()) throw ConfigError("eval.initial_condition is empty");
  for (const std::string& m : c.metrics)
    if (m != "w2" && m != "kl") throw ConfigError("unknown metric '" + m + "'");
}

void require_seed(const RunConfig& c) {
  if (!c.has_seed) throw ConfigError("a seed is required (training.seed or --seed)");
}

}  // namespace fsbm::config
