#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "svmp/svg.hpp"

using namespace svmp;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string render(const std::vector<PlotCurve>& curves) {
  std::ostringstream out;
  emit_svg_plot(curves, out);
  return out.str();
}

// Number of "x,y" pairs in the first polyline.
std::size_t polyline_points(const std::string& svg) {
  const std::size_t start = svg.find("points=\"", svg.find("<polyline")) + 8;
  const std::size_t end = svg.find('"', start);
  return count(svg.substr(start, end - start), ",");
}

}  // namespace

TEST(Svg, TwoPointCurve) {
  const std::string svg = render({{"run", {{10.0, -5.0}, {1000.0, -2.0}}, false}});
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\""), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_EQ(polyline_points(svg), 2u);
  EXPECT_EQ(count(svg, "class=\"diverged\""), 0u);
}

TEST(Svg, NanTailStopsAtLastFinitePoint) {
  const std::string svg =
      render({{"bad", {{1.0, -5.0}, {10.0, -4.0}, {100.0, NAN}, {1000.0, -3.0}}, false}});
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_EQ(polyline_points(svg), 2u);
  EXPECT_EQ(count(svg, "class=\"diverged\""), 1u);
  EXPECT_NE(svg.find("bad (diverged)"), std::string::npos);
}

TEST(Svg, DivergedFlagIsMarkedAndHealthyCurvesSetRange) {
  const std::string svg = render({{"ok", {{1e2, -10.0}, {1e4, -5.0}}, false},
                                  {"blown", {{1e2, -10.0}, {1e3, -1e9}}, true}});
  EXPECT_EQ(count(svg, "<polyline"), 2u);
  EXPECT_EQ(count(svg, "class=\"diverged\""), 1u);
  EXPECT_EQ(svg.find("e+08"), std::string::npos);  // tick labels follow the healthy curve
}

TEST(Svg, DeterministicAndEscaped) {
  const std::vector<PlotCurve> curves{{"a<b & c", {{5.0, 1.0}, {50.0, 2.0}}, false}};
  EXPECT_EQ(render(curves), render(curves));
  EXPECT_NE(render(curves).find("a&lt;b &amp; c"), std::string::npos);
}

TEST(Svg, RejectsUnplottableInput) {
  std::ostringstream out;
  EXPECT_THROW(emit_svg_plot({}, out), std::invalid_argument);
  EXPECT_THROW(emit_svg_plot({{"e", {}, false}}, out), std::invalid_argument);
  EXPECT_THROW(emit_svg_plot({{"z", {{0.0, 1.0}}, false}}, out), std::invalid_argument);
}
