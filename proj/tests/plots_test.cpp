#include "injected/plots.hpp"

#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <set>
#include <sstream>

using namespace injected;
namespace pt = boost::property_tree;

namespace {

pt::ptree parse_svg(const std::string& svg) {
  std::istringstream in(svg);
  pt::ptree tree;
  pt::read_xml(in, tree);
  return tree;
}

const pt::ptree& plot_area(const pt::ptree& svg) {
  for (const auto& [name, child] : svg) {
    if (name == "g" && child.get<std::string>("<xmlattr>.class", "") == "plot-area") return child;
  }
  throw std::runtime_error("no plot-area group");
}

std::vector<const pt::ptree*> children(const pt::ptree& node, const std::string& tag) {
  std::vector<const pt::ptree*> out;
  for (const auto& [name, child] : node)
    if (name == tag) out.push_back(&child);
  return out;
}

plot::FigureInputs small_inputs() {
  const auto s = build_schedule(50, 0.95);
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::fourier}, 2);
  plot::FigureInputs in;
  in.dataset = "toy";
  in.config = "fourier-fourier-0.95";
  in.bundle = sample(m, s, 30, 3);
  in.original = {{0, 0}, {1, 1}, {-1, 0.5}};
  in.displacement = displacement(in.bundle);
  in.velocity = velocity(in.bundle);
  in.clusters = cluster_trajectories(in.bundle, 5, 1);
  const auto g = Grid2D::around(in.bundle.positions, 0.5, 6, 6);
  for (int t = 1; t <= 50; ++t) in.backward_fields.push_back(backward_drift(g, t, m, s));
  for (int t : {1, 13, 25, 38, 50}) in.forward_fields.push_back(forward_drift(g, t, PointCloud{in.original, {}}, s));
  in.alignment = drift_alignment(in.bundle, in.backward_fields);
  in.losses.epoch_loss = {1.0, 0.8, 0.7};
  in.losses.mse_per_timestep.assign(50, 0.5);
  return in;
}

}  // namespace

TEST(Render, ScatterDrawsOneCirclePerPoint) {
  plot::PlotSpec spec{"three", "x", "y", 400, 300, plot::ScatterData{{{0, 0}, {1, 2}, {-1, 3}}, {}, 2.5}};
  const auto tree = parse_svg(plot::render(spec));
  EXPECT_EQ(tree.size(), 1u);
  const auto& svg = tree.get_child("svg");
  EXPECT_EQ(children(plot_area(svg), "circle").size(), 3u);
}

TEST(Render, ScatterCoordinatesInvertToData) {
  Rng rng(5);
  plot::ScatterData d;
  for (int i = 0; i < 50; ++i) d.points.push_back({rng.normal() * 3, rng.normal() + 10});
  const auto tree = parse_svg(plot::render({"inv", "x", "y", 640, 480, d}));
  const auto& area = plot_area(tree.get_child("svg"));
  const double xlo = area.get<double>("<xmlattr>.data-x-lo");
  const double xhi = area.get<double>("<xmlattr>.data-x-hi");
  const double ylo = area.get<double>("<xmlattr>.data-y-lo");
  const double yhi = area.get<double>("<xmlattr>.data-y-hi");
  const double left = area.get<double>("<xmlattr>.data-left");
  const double right = area.get<double>("<xmlattr>.data-right");
  const double top = area.get<double>("<xmlattr>.data-top");
  const double bottom = area.get<double>("<xmlattr>.data-bottom");
  const auto circles = children(area, "circle");
  ASSERT_EQ(circles.size(), d.points.size());
  for (std::size_t i = 0; i < circles.size(); ++i) {
    const double cx = circles[i]->get<double>("<xmlattr>.cx");
    const double cy = circles[i]->get<double>("<xmlattr>.cy");
    const double x = xlo + (cx - left) / (right - left) * (xhi - xlo);
    const double y = ylo + (bottom - cy) / (bottom - top) * (yhi - ylo);
    EXPECT_NEAR(x, d.points[i].x, 1e-6);
    EXPECT_NEAR(y, d.points[i].y, 1e-6);
  }
}

TEST(Render, HeatmapCellsFollowGridOrderAndRamp) {
  const Grid2D g{0, 3, 0, 2, 4, 3};
  plot::HeatmapData h{g, {}};
  for (std::size_t i = 0; i < g.size(); ++i) h.values.push_back(static_cast<double>(i));
  const auto tree = parse_svg(plot::render({"heat", "x", "y", 500, 400, h}));
  const auto cells = children(plot_area(tree.get_child("svg")), "rect");
  ASSERT_EQ(cells.size(), g.size());
  double prev_x = -1, prev_y = 1e9;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(cells[i]->get<std::string>("<xmlattr>.class"), "cell");
    EXPECT_EQ(cells[i]->get<double>("<xmlattr>.data-value"), static_cast<double>(i));
    const double x = cells[i]->get<double>("<xmlattr>.x");
    const double y = cells[i]->get<double>("<xmlattr>.y");
    if (i % 4 == 0) {
      EXPECT_LT(y, prev_y);  // next row up the page
      prev_y = y;
    } else {
      EXPECT_GT(x, prev_x);
    }
    prev_x = x;
  }
  EXPECT_EQ(cells.front()->get<std::string>("<xmlattr>.fill"), "rgb(247,251,255)");
  EXPECT_EQ(cells.back()->get<std::string>("<xmlattr>.fill"), "rgb(8,48,107)");
}

TEST(Render, QuiverArrowPointsAlongPositiveX) {
  plot::QuiverData q{{{0, 0}}, {{1, 0}}, 1.0};
  const auto tree = parse_svg(plot::render({"q", "x", "y", 400, 400, q}));
  const auto arrows = children(plot_area(tree.get_child("svg")), "g");
  ASSERT_EQ(arrows.size(), 1u);
  const auto& line = arrows[0]->get_child("line");
  EXPECT_GT(line.get<double>("<xmlattr>.x2"), line.get<double>("<xmlattr>.x1"));
  EXPECT_EQ(line.get<std::string>("<xmlattr>.y2"), line.get<std::string>("<xmlattr>.y1"));
  EXPECT_EQ(children(*arrows[0], "polygon").size(), 1u);
}

TEST(Render, HistogramAndLinesAreWellFormed) {
  plot::HistogramData h{{0, 1, 2, 3}, {4, 0, 2}};
  plot::LineData l;
  l.series.push_back({{0, 1, 2}, {1, 0.5, 2}, 0});
  l.series.push_back({{0, 1}, {0, 1}, 3});
  const plot::PlotSpec specs[] = {{"h & <title>", "a", "b", 640, 420, h}, {"l", "a", "b", 640, 420, l}};
  const auto ht = parse_svg(plot::render(specs[0]));
  EXPECT_EQ(children(plot_area(ht.get_child("svg")), "rect").size(), 3u);
  EXPECT_EQ(children(ht.get_child("svg"), "text").front()->data(), "h & <title>");
  const auto lt = parse_svg(plot::render(specs[1]));
  EXPECT_EQ(children(plot_area(lt.get_child("svg")), "polyline").size(), 2u);
}

TEST(Render, ByteIdenticalAcrossCalls) {
  plot::ScatterData d{{{0.1, 0.2}, {0.3, -0.4}}, {0, 1}, 2.5};
  EXPECT_EQ(plot::render({"d", "x", "y", 640, 480, d}), plot::render({"d", "x", "y", 640, 480, d}));
}

TEST(Render, RejectsEmptyOrNonFinitePayloads) {
  EXPECT_THROW(plot::render({"e", "x", "y", 640, 480, plot::ScatterData{}}), InvalidArgument);
  EXPECT_THROW(plot::render({"e", "x", "y", 640, 480, plot::HistogramData{}}), InvalidArgument);
  EXPECT_THROW(plot::render({"e", "x", "y", 640, 480, plot::ScatterData{{{std::nan(""), 0}}, {}, 1}}),
               InvalidArgument);
  EXPECT_THROW(plot::render({"e", "x", "y", 640, 480, plot::LineData{}}), InvalidArgument);
}

TEST(FigureBundle, InventoryAndSnapshots) {
  const auto in = small_inputs();
  const auto figs = plot::figure_bundle(in);
  std::set<std::string> names;
  for (const auto& f : figs) {
    EXPECT_EQ(f.path.rfind("toy/fourier-fourier-0.95/", 0), 0u) << f.path;
    names.insert(f.path.substr(f.path.rfind('/') + 1));
    EXPECT_NO_THROW(parse_svg(f.svg)) << f.path;
  }
  EXPECT_GE(figs.size(), 8u);
  for (const char* n : {"alignment.svg", "displacement_hist.svg", "clusters_final.svg", "trajectories_clustered.svg",
                        "velocity.svg", "mse_per_timestep.svg", "loss_epoch.svg", "original_vs_generated.svg",
                        "heatmap_forward_t1.svg", "heatmap_backward_t50.svg", "quiver_backward_t25.svg"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  int snapshots = 0;
  for (int tau : {10, 20, 30, 40, 50}) snapshots += names.count("snapshot_tau" + std::to_string(tau) + ".svg");
  EXPECT_EQ(snapshots, 5);

  const auto again = plot::figure_bundle(in);
  ASSERT_EQ(again.size(), figs.size());
  for (std::size_t i = 0; i < figs.size(); ++i) EXPECT_EQ(again[i].svg, figs[i].svg);
}

TEST(FigureBundle, MissingInputsAreNamed) {
  auto in = small_inputs();
  in.alignment = {};
  in.forward_fields.clear();
  try {
    plot::figure_bundle(in);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("alignment"), std::string::npos) << msg;
    EXPECT_NE(msg.find("forward drift fields"), std::string::npos) << msg;
  }
}
