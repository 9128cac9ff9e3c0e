#include "npgrow/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace npgrow {

namespace {

constexpr int kWidth = 680, kHeight = 460;
constexpr int kLeft = 70, kRight = 30, kTop = 50, kBottom = 55;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (std::isnan(x) || std::isnan(y)) continue;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!(xmin < xmax)) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (!(ymin < ymax)) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
     << "' font-family='sans-serif' font-size='12'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
     << "</text>\n";

  // Axes and ticks.
  os << "<rect x='" << kLeft << "' y='" << kTop << "' width='" << pw << "' height='" << ph
     << "' fill='none' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double x = xmin + (xmax - xmin) * i / 5.0;
    const double y = ymin + (ymax - ymin) * i / 5.0;
    os << "<line x1='" << sx(x) << "' y1='" << kTop + ph << "' x2='" << sx(x) << "' y2='"
       << kTop + ph + 5 << "' stroke='black'/>\n";
    os << "<text x='" << sx(x) << "' y='" << kTop + ph + 20 << "' text-anchor='middle'>" << fmt(x)
       << "</text>\n";
    os << "<line x1='" << kLeft - 5 << "' y1='" << sy(y) << "' x2='" << kLeft << "' y2='" << sy(y)
       << "' stroke='black'/>\n";
    os << "<text x='" << kLeft - 9 << "' y='" << sy(y) + 4 << "' text-anchor='end'>" << fmt(y)
       << "</text>\n";
  }
  os << "<text x='" << kLeft + pw / 2 << "' y='" << kHeight - 12 << "' text-anchor='middle'>"
     << xlabel << "</text>\n";
  os << "<text x='18' y='" << kTop + ph / 2 << "' text-anchor='middle' transform='rotate(-90 18 "
     << kTop + ph / 2 << ")'>" << ylabel << "</text>\n";

  int legend_y = kTop + 14;
  for (const auto& s : series) {
    os << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.8'";
    if (s.dashed) os << " stroke-dasharray='6 4'";
    os << " points='";
    bool pen_up = true;
    std::ostringstream seg;
    for (const auto& [x, y] : s.points) {
      if (std::isnan(x) || std::isnan(y)) {
        pen_up = true;
        continue;
      }
      if (pen_up && seg.tellp() > 0) {
        os << seg.str() << "'/>\n<polyline fill='none' stroke='" << s.color
           << "' stroke-width='1.8'";
        if (s.dashed) os << " stroke-dasharray='6 4'";
        os << " points='";
        seg.str("");
      }
      seg << sx(x) << ',' << sy(y) << ' ';
      pen_up = false;
    }
    os << seg.str() << "'/>\n";
    os << "<line x1='" << kLeft + pw - 150 << "' y1='" << legend_y << "' x2='"
       << kLeft + pw - 126 << "' y2='" << legend_y << "' stroke='" << s.color
       << "' stroke-width='2'" << (s.dashed ? " stroke-dasharray='6 4'" : "") << "/>\n";
    os << "<text x='" << kLeft + pw - 120 << "' y='" << legend_y + 4 << "'>" << s.label
       << "</text>\n";
    legend_y += 17;
  }
  os << "</svg>\n";

  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write plot: " + path);
  f << os.str();
}

namespace {

void write_ppm(const std::string& path, int h, int w,
               const std::vector<std::array<uint8_t, 3>>& rgb) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write image: " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (const auto& px : rgb) f.write(reinterpret_cast<const char*>(px.data()), 3);
}

constexpr std::array<std::array<uint8_t, 3>, 4> kClassColors = {{
    {20, 20, 20},     // background
    {126, 87, 194},   // outer
    {255, 152, 0},    // middle
    {255, 238, 88},   // core
}};

}  // namespace

void write_segmentation_ppm(const std::string& path, const SegGrid& seg, int upscale) {
  const int h = seg.h * upscale, w = seg.w * upscale;
  std::vector<std::array<uint8_t, 3>> rgb(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const uint8_t label = seg.at(i / upscale, j / upscale);
      rgb[static_cast<size_t>(i) * w + j] = kClassColors[label < 4 ? label : 0];
    }
  write_ppm(path, h, w, rgb);
}

void write_channel_ppm(const std::string& path, const Tensor& image, int channel, int upscale) {
  const int ih = image.dim(1), iw = image.dim(2);
  double lo = image.at(channel, 0, 0), hi = lo;
  for (int i = 0; i < ih; ++i)
    for (int j = 0; j < iw; ++j) {
      lo = std::min(lo, image.at(channel, i, j));
      hi = std::max(hi, image.at(channel, i, j));
    }
  const double range = hi > lo ? hi - lo : 1.0;
  const int h = ih * upscale, w = iw * upscale;
  std::vector<std::array<uint8_t, 3>> rgb(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double v = (image.at(channel, i / upscale, j / upscale) - lo) / range;
      const auto g = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0);
      rgb[static_cast<size_t>(i) * w + j] = {g, g, g};
    }
  write_ppm(path, h, w, rgb);
}

}  // namespace npgrow
