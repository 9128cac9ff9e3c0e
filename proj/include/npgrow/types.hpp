#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npgrow/tensor.hpp"

namespace npgrow {

// Hard label grid, values in {0 = background, 1 = outer, 2 = middle, 3 = core}.
struct SegGrid {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  SegGrid() = default;
  SegGrid(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
  size_t size() const { return v.size(); }

  size_t foreground_count() const {
    size_t n = 0;
    for (uint8_t x : v) n += (x > 0);
    return n;
  }
  size_t class_count(uint8_t cls) const {
    size_t n = 0;
    for (uint8_t x : v) n += (x == cls);
    return n;
  }
  bool operator==(const SegGrid& o) const { return h == o.h && w == o.w && v == o.v; }
};

// One (image, segmentation, time) point of a trajectory. Image is
// (channels, H, W); time lives on a continuous axis normalized to ~[0, 1].
struct TimedObservation {
  Tensor image;
  SegGrid segmentation;
  double time = 0.0;
};

struct Trajectory {
  std::string subject_id;
  std::vector<TimedObservation> observations;

  size_t length() const { return observations.size(); }
};

// Split of one trajectory into conditioning points and query points. During
// training the model reconstructs context and extra point alike, so the
// effective target set is context + target.
struct ContextTargetBatch {
  std::vector<TimedObservation> context;
  std::vector<TimedObservation> target;

  std::vector<TimedObservation> effective_targets() const {
    std::vector<TimedObservation> all = context;
    all.insert(all.end(), target.begin(), target.end());
    return all;
  }
};

struct GaussianLatent {
  Tensor mu;
  Tensor sigma;
};

}  // namespace npgrow
