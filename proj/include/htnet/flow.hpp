// Frame sequences to 28x28x3 composite optical-flow maps: apex spotting by
// histogram correlation, Farneback dense flow, optical strain, and the
// landmark-guided four-region composition.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "htnet/image.hpp"
#include "htnet/tensor.hpp"

namespace htnet {

struct FrameSequence {
  std::vector<Image> frames;
  int onset_index = 0;
  int offset_index = 0;
  std::optional<int> apex_index;

  // index ordering, bounds, and uniform resolution; throws DataError
  void validate() const;
};

// Axis-aligned pixel rectangle: top-left corner plus size.
struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
};

struct FlowField {
  int height = 0, width = 0;
  std::vector<double> u, v;  // row-major, pixels of displacement
};

struct LandmarkSet {
  std::array<double, 2> left_eye{}, right_eye{}, left_lip{}, right_lip{};
};

struct FlowParams {
  int pyramid_levels = 3;
  double pyr_scale = 0.5;
  int window_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const;  // ConfigError on out-of-range fields
};

struct CompositeFlowMap {
  int size = 28;             // spatial side length
  std::uint8_t layout = 0;   // 0 = eyes in the top quadrants, lips bottom
  // row-major (row, column, channel), channels = [u, v, strain]
  std::vector<double> data;
};

// Normalized histogram correlation d in [0, 1]; d = 1 iff the histograms are
// proportional. Inputs must be same-length, non-negative, not all zero.
double histogram_correlation(const std::vector<double>& h1,
                             const std::vector<double>& h2);

// Intensity histogram of the rectangle, `bins` equal cells over [0, 256).
std::vector<double> roi_histogram(const Image& img, const Rect& roi, int bins);

// Returns the candidate index in (onset, offset] whose summed per-ROI
// correlation with the onset frame is smallest (largest difference).
// Ties resolve to the earliest index.
int spot_apex(const FrameSequence& seq, const std::vector<Rect>& rois,
              int bins);

// Square rectangles centered on the four landmarks, clamped to the frame.
std::vector<Rect> default_rois(const LandmarkSet& lm, int frame_width,
                               int frame_height, int roi_size = 16);

// Dense Farneback flow from onset to apex.
FlowField compute_flow(const Image& onset, const Image& apex,
                       const FlowParams& params);

// Optical strain magnitude per pixel: central differences in the interior,
// one-sided at the borders. Output is non-negative, same shape as the flow.
std::vector<double> compute_strain(const FlowField& flow);

// Stacks [u, v, strain], resizes to out_size x out_size (bilinear; u and v
// rescaled to the new pixel grid), then tiles four half-size landmark crops:
// left eye -> top-left, right eye -> top-right, left lip -> bottom-left,
// right lip -> bottom-right.
CompositeFlowMap build_composite(const FlowField& flow,
                                 const std::vector<double>& strain,
                                 const LandmarkSet& landmarks,
                                 int out_size = 28);

// JSON object with keys left_eye, right_eye, left_lip, right_lip: [x, y].
LandmarkSet load_landmarks(const std::string& path);
void save_landmarks(const LandmarkSet& lm, const std::string& path);

// HTFM container; round-trips bit-exactly.
void write_flow_file(const CompositeFlowMap& map, const std::string& path);
CompositeFlowMap read_flow_file(const std::string& path);

// [3, size, size] channel-major tensor for the model.
Tensor composite_to_tensor(const CompositeFlowMap& map);

}  // namespace htnet
