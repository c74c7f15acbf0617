#include "fsbm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fsbm::io {

namespace {

std::ofstream open_out(const std::filesystem::path& file, std::ios::openmode mode = std::ios::trunc) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::out | mode);
  if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
  return out;
}

double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw std::runtime_error(where + ": cannot parse number '" + std::string(token) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vec parse_row(const std::string& line, Index expected, const std::string& where) {
  const auto tokens = split_ws(line);
  if (static_cast<Index>(tokens.size()) != expected)
    throw std::runtime_error(where + ": expected " + std::to_string(expected) + " values");
  Vec v(expected);
  for (Index k = 0; k < expected; ++k) v(k) = parse_double(tokens[static_cast<std::size_t>(k)], where);
  return v;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, ptr);
}

void write_keypoints(const std::filesystem::path& file, const guidance::KeypointSet& ks) {
  ks.validate();
  std::ofstream out = open_out(file);
  out << "FSBM-KP v1 " << ks.size() << ' ' << ks.dim() << ' ' << ks.steps() << '\n';
  for (Index k = 0; k < ks.steps(); ++k) out << (k ? " " : "") << format_double(ks.time_grid(k));
  out << '\n';
  for (const Mat& tr : ks.trajectories) {
    for (Index k = 0; k < tr.rows(); ++k) {
      for (Index j = 0; j < tr.cols(); ++j) out << (j ? " " : "") << format_double(tr(k, j));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

guidance::KeypointSet read_keypoints(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open keypoint file " + file.string());
  const std::string where = file.string();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(where + ": empty file");
  std::istringstream header(line);
  std::string magic, version;
  long long n = 0, d = 0, t = 0;
  header >> magic >> version >> n >> d >> t;
  if (!header || magic != "FSBM-KP" || version != "v1")
    throw std::runtime_error(where + ": not an FSBM-KP v1 file");
  if (n < 1 || d < 1 || t < 2) throw std::runtime_error(where + ": invalid header sizes");

  guidance::KeypointSet ks;
  if (!std::getline(in, line)) throw std::runtime_error(where + ": missing time grid");
  ks.time_grid = parse_row(line, t, where);
  ks.source_points.resize(n, d);
  ks.target_points.resize(n, d);
  for (long long i = 0; i < n; ++i) {
    Mat tr(t, d);
    for (long long k = 0; k < t; ++k) {
      if (!std::getline(in, line)) throw std::runtime_error(where + ": truncated trajectories");
      tr.row(k) = parse_row(line, d, where).transpose();
    }
    ks.source_points.row(i) = tr.row(0);
    ks.target_points.row(i) = tr.row(t - 1);
    ks.trajectories.push_back(std::move(tr));
  }
  ks.validate();
  return ks;
}

std::string metrics_line(const matching::EpochRecord& record) {
  nlohmann::ordered_json j;
  j["epoch"] = record.epoch;
  j["fitted"] = matching::to_string(record.fitted);
  j["bm_loss"] = record.bm_loss;
  j["w2"] = record.w2;
  j["spline_divergences"] = record.spline_divergences;
  return j.dump();
}

void append_metrics(const std::filesystem::path& file, const matching::EpochRecord& record) {
  std::ofstream out = open_out(file, std::ios::app);
  out << metrics_line(record) << '\n';
}

Snapshots take_snapshots(const matching::Trajectory& trajectory, const std::vector<double>& times) {
  if (trajectory.states.empty()) throw std::invalid_argument("empty trajectory");
  Snapshots s;
  const Index last = static_cast<Index>(trajectory.states.size()) - 1;
  for (double t : times) {
    Index best = 0;
    for (Index k = 1; k <= last; ++k)
      if (std::abs(trajectory.times(k) - t) < std::abs(trajectory.times(best) - t)) best = k;
    s.times.push_back(t);
    s.states.push_back(trajectory.states[static_cast<std::size_t>(best)]);
  }
  return s;
}

void write_trajectory_csv(const std::filesystem::path& file, const Snapshots& snapshots) {
  if (snapshots.states.empty()) throw std::invalid_argument("no snapshots to write");
  std::ofstream out = open_out(file);
  const Index d = snapshots.states.front().cols();
  out << "t,particle_id";
  for (Index j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  for (std::size_t s = 0; s < snapshots.states.size(); ++s) {
    const Mat& x = snapshots.states[s];
    const std::string t = format_double(snapshots.times[s]);
    for (Index i = 0; i < x.rows(); ++i) {
      out << t << ',' << i;
      for (Index j = 0; j < d; ++j) out << ',' << format_double(x(i, j));
      out << '\n';
    }
  }
}

Snapshots read_trajectory_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  const std::string where = file.string();
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,particle_id", 0) != 0)
    throw std::runtime_error(where + ": missing CSV header");
  const auto d = static_cast<Index>(std::count(line.begin(), line.end(), ',') - 1);
  if (d < 1) throw std::runtime_error(where + ": no coordinate columns");

  // Keep snapshot order as encountered.
  std::vector<double> times;
  std::vector<std::vector<Vec>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      cells.push_back(rest.substr(0, pos));
    cells.push_back(rest);
    if (static_cast<Index>(cells.size()) != d + 2) throw std::runtime_error(where + ": ragged row");
    const double t = parse_double(cells[0], where);
    if (times.empty() || times.back() != t) {
      times.push_back(t);
      rows.emplace_back();
    }
    Vec x(d);
    for (Index j = 0; j < d; ++j) x(j) = parse_double(cells[static_cast<std::size_t>(j + 2)], where);
    rows.back().push_back(std::move(x));
  }
  Snapshots s;
  s.times = times;
  for (const auto& r : rows) {
    Mat m(static_cast<Index>(r.size()), d);
    for (std::size_t i = 0; i < r.size(); ++i) m.row(static_cast<Index>(i)) = r[i].transpose();
    s.states.push_back(std::move(m));
  }
  return s;
}

std::string render_svg(const Mat& points, const scenes::Scene& scene, double t) {
  if (points.cols() < 1) throw std::invalid_argument("render_svg needs at least one coordinate");
  const auto px = [&](Index i) { return points(i, 0); };
  const auto py = [&](Index i) { return points.cols() > 1 ? points(i, 1) : 0.0; };

  double x0, x1, y0, y1;
  if (scene.is_crowd()) {
    x0 = -16.0;
    x1 = 16.0;
    y0 = -12.0;
    y1 = 12.0;
  } else {
    const double r = 4.0 * scene.target_std + 1.0;
    x0 = y0 = -r;
    x1 = y1 = r;
  }
  constexpr double width = 640.0;
  const double height = width * (y1 - y0) / (x1 - x0);
  const auto sx = [&](double x) { return (x - x0) / (x1 - x0) * width; };
  const auto sy = [&](double y) { return height - (y - y0) / (y1 - y0) * height; };

  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"8\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << scene.name
      << " t=" << format_double(t) << "</text>\n";
  if (scene.is_crowd()) {
    for (const scenes::Polygon& poly : scene.obstacles) {
      svg << "<polygon fill=\"#888\" stroke=\"#444\" points=\"";
      for (Index k = 0; k < poly.vertices.rows(); ++k)
        svg << (k ? " " : "") << sx(poly.vertices(k, 0)) << ',' << sy(poly.vertices(k, 1));
      svg << "\"/>\n";
    }
  }
  svg << "<g fill=\"#1f77b4\" fill-opacity=\"0.6\">\n";
  for (Index i = 0; i < points.rows(); ++i)
    svg << "<circle cx=\"" << sx(px(i)) << "\" cy=\"" << sy(py(i)) << "\" r=\"1.8\"/>\n";
  svg << "</g>\n</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> write_snapshot_svgs(const std::filesystem::path& dir,
                                                       const std::string& prefix,
                                                       const Snapshots& snapshots,
                                                       const scenes::Scene& scene) {
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < snapshots.states.size(); ++k) {
    const auto file = dir / (prefix + "_t" + std::to_string(k) + ".svg");
    std::ofstream out = open_out(file);
    out << render_svg(snapshots.states[k], scene, snapshots.times[k]);
    written.push_back(file);
  }
  return written;
}

}  // namespace fsbm::io
