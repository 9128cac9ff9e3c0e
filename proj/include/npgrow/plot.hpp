#pragma once

#include <string>
#include <vector>

#include "npgrow/types.hpp"

namespace npgrow {

struct PlotSeries {
  std::string label;
  std::string color;   // SVG color
  bool dashed = false;
  std::vector<std::pair<double, double>> points;
};

// Minimal static SVG line plot; NaN points break the line.
void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series);

// Class-colored segmentation panel.
void write_segmentation_ppm(const std::string& path, const SegGrid& seg, int upscale = 4);
// One image channel, grayscale over its own value range.
void write_channel_ppm(const std::string& path, const Tensor& image, int channel,
                       int upscale = 4);

}  // namespace npgrow
