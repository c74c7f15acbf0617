#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fsbm/io.hpp"

using namespace fsbm;
using namespace fsbm::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fsbm_test_io";
  fs::create_directories(dir);
  return dir / name;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

guidance::KeypointSet awkward_keypoints(Rng& rng) {
  guidance::KeypointSet ks = guidance::KeypointSet::linear(normal_matrix(3, 2, rng) * 1e-7,
                                                           normal_matrix(3, 2, rng) * 1e5, 9);
  // Values with long shortest representations and subnormals.
  ks.trajectories[1](4, 0) = 0.1 + 0.2;
  ks.trajectories[1](4, 1) = std::numeric_limits<double>::denorm_min();
  ks.trajectories[2](3, 1) = -std::numeric_limits<double>::max();
  ks.time_grid(3) = 1.0 / 3.0;
  return ks;
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 10000; ++k) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(-2.0), "-2");
}

TEST(Keypoints, RoundTripIsBitwise) {
  Rng rng(2);
  const guidance::KeypointSet ks = awkward_keypoints(rng);
  const fs::path file = scratch("kp.txt");
  write_keypoints(file, ks);
  const guidance::KeypointSet back = read_keypoints(file);
  EXPECT_TRUE(bitwise_equal(back.source_points, ks.source_points));
  EXPECT_TRUE(bitwise_equal(back.target_points, ks.target_points));
  EXPECT_TRUE(bitwise_equal(back.time_grid, ks.time_grid));
  ASSERT_EQ(back.trajectories.size(), ks.trajectories.size());
  for (std::size_t i = 0; i < ks.trajectories.size(); ++i)
    EXPECT_TRUE(bitwise_equal(back.trajectories[i], ks.trajectories[i]));
}

TEST(Keypoints, HeaderLayout) {
  Rng rng(3);
  const guidance::KeypointSet ks = guidance::KeypointSet::linear(normal_matrix(4, 3, rng),
                                                                 normal_matrix(4, 3, rng), 5);
  const fs::path file = scratch("kp_layout.txt");
  write_keypoints(file, ks);
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "FSBM-KP v1 4 3 5");
  std::getline(in, line);
  std::istringstream grid(line);
  int count = 0;
  for (double v; grid >> v;) ++count;
  EXPECT_EQ(count, 5);
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4 * 5);
}

TEST(Keypoints, MalformedFilesRejected) {
  const fs::path file = scratch("kp_bad.txt");
  {
    std::ofstream(file) << "FSBM-KP v2 1 1 2\n0 1\n0\n1\n";
  }
  EXPECT_THROW(read_keypoints(file), std::runtime_error);
  {
    std::ofstream(file) << "FSBM-KP v1 1 2 2\n0 1\n0 0\n";
  }
  EXPECT_THROW(read_keypoints(file), std::runtime_error);
  {
    std::ofstream(file) << "FSBM-KP v1 1 1 2\n0 1\n0\nabc\n";
  }
  EXPECT_THROW(read_keypoints(file), std::runtime_error);
  EXPECT_THROW(read_keypoints(scratch("does_not_exist.txt")), std::runtime_error);
}

TEST(Metrics, OneJsonObjectPerLine) {
  matching::EpochRecord r;
  r.epoch = 3;
  r.fitted = matching::Direction::Backward;
  r.bm_loss = 0.125;
  r.w2 = 1.0 / 3.0;
  r.spline_divergences = 2;
  const std::string line = metrics_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_EQ(j["fitted"], "backward");
  EXPECT_EQ(j["bm_loss"].get<double>(), 0.125);
  EXPECT_EQ(j["w2"].get<double>(), 1.0 / 3.0);
  EXPECT_EQ(j["spline_divergences"], 2);

  const fs::path file = scratch("metrics.jsonl");
  fs::remove(file);
  append_metrics(file, r);
  append_metrics(file, r);
  std::ifstream in(file);
  int lines = 0;
  for (std::string l; std::getline(in, l);) {
    EXPECT_EQ(l, line);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(Snapshots, NearestTimes) {
  matching::Trajectory tr;
  tr.times = Vec::LinSpaced(4, 0.0, 1.0);
  for (int k = 0; k < 4; ++k) tr.states.push_back(Mat::Constant(2, 2, k));
  const Snapshots s = take_snapshots(tr, {0.0, 0.3, 0.7, 1.0});
  ASSERT_EQ(s.states.size(), 4u);
  EXPECT_EQ(s.states[1](0, 0), 1.0);
  EXPECT_EQ(s.states[2](0, 0), 2.0);
  EXPECT_EQ(s.states[3](0, 0), 3.0);
  EXPECT_THROW(take_snapshots(matching::Trajectory{}), std::invalid_argument);
}

TEST(TrajectoryCsv, RoundTrip) {
  Rng rng(4);
  Snapshots s;
  s.times = kSnapshotTimes;
  for (std::size_t k = 0; k < s.times.size(); ++k) s.states.push_back(normal_matrix(7, 3, rng));
  const fs::path file = scratch("traj.csv");
  write_trajectory_csv(file, s);
  const Snapshots back = read_trajectory_csv(file);
  ASSERT_EQ(back.times.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(back.times[k], s.times[k]);
    EXPECT_TRUE(bitwise_equal(back.states[k], s.states[k]));
  }
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,particle_id,x_0,x_1,x_2");
}

TEST(TrajectoryCsv, RejectsRaggedRows) {
  const fs::path file = scratch("ragged.csv");
  {
    std::ofstream(file) << "t,particle_id,x_0,x_1\n0,0,1,2\n0,1,3\n";
  }
  EXPECT_THROW(read_trajectory_csv(file), std::runtime_error);
  {
    std::ofstream(file) << "time,id,x\n";
  }
  EXPECT_THROW(read_trajectory_csv(file), std::runtime_error);
}

TEST(Svg, ValidXmlWithOneCirclePerParticle) {
  Rng rng(5);
  for (const scenes::Scene& scene : {scenes::vneck_scene(), scenes::opinion_scene(4)}) {
    const Mat pts = normal_matrix(123, scene.dim, rng);
    std::istringstream in(render_svg(pts, scene, 1.0 / 3.0));
    boost::property_tree::ptree tree;
    ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree)) << scene.name;
    const auto& svg = tree.get_child("svg");
    int circles = 0;
    for (const auto& [tag, node] : svg.get_child("g"))
      if (tag == "circle") ++circles;
    EXPECT_EQ(circles, 123);
    int polygons = 0;
    for (const auto& [tag, node] : svg)
      if (tag == "polygon") ++polygons;
    EXPECT_EQ(polygons, static_cast<int>(scene.obstacles.size()));
  }
}

TEST(Svg, PureFunctionOfInput) {
  Rng rng(6);
  const Mat pts = normal_matrix(10, 2, rng);
  EXPECT_EQ(render_svg(pts, scenes::stunnel_scene(), 0.5), render_svg(pts, scenes::stunnel_scene(), 0.5));
}

TEST(Svg, SnapshotFiles) {
  Rng rng(7);
  Snapshots s;
  s.times = kSnapshotTimes;
  for (std::size_t k = 0; k < 4; ++k) s.states.push_back(normal_matrix(5, 2, rng));
  const fs::path dir = scratch("plots");
  fs::remove_all(dir);
  const auto files = write_snapshot_svgs(dir, "vanilla", s, scenes::stunnel_scene());
  ASSERT_EQ(files.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(files[k].filename(), "vanilla_t" + std::to_string(k) + ".svg");
    EXPECT_TRUE(fs::exists(files[k]));
  }
}
