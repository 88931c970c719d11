#include "htnet/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/video/tracking.hpp>

#include "htnet/binio.hpp"
#include "htnet/error.hpp"

namespace htnet {

namespace {

// Keep OpenCV kernels on one thread so outputs are independent of the
// machine's core count and of the harness's own --jobs parallelism.
void ensure_single_thread() {
  static const bool once = [] {
    cv::setNumThreads(1);
    return true;
  }();
  (void)once;
}

cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC1);
  for (int y = 0; y < img.height; ++y)
    std::copy(img.pixels.begin() + static_cast<std::size_t>(y) * img.width,
              img.pixels.begin() + static_cast<std::size_t>(y + 1) * img.width,
              m.ptr<std::uint8_t>(y));
  return m;
}

}  // namespace

void FrameSequence::validate() const {
  if (frames.empty()) throw DataError("frame sequence is empty");
  const int h = frames.front().height, w = frames.front().width;
  if (h < 1 || w < 1) throw DataError("frame sequence has empty frames");
  for (const Image& f : frames)
    if (f.height != h || f.width != w ||
        f.pixels.size() != static_cast<std::size_t>(h) * w)
      throw DataError("frame sequence mixes resolutions");
  const int n = static_cast<int>(frames.size());
  if (onset_index < 0 || offset_index >= n || onset_index > offset_index)
    throw DataError("frame sequence indices out of order: onset " +
                    std::to_string(onset_index) + ", offset " +
                    std::to_string(offset_index) + ", length " +
                    std::to_string(n));
  if (apex_index &&
      (*apex_index < onset_index || *apex_index > offset_index))
    throw DataError("apex index " + std::to_string(*apex_index) +
                    " outside [onset, offset]");
}

double histogram_correlation(const std::vector<double>& h1,
                             const std::vector<double>& h2) {
  if (h1.size() != h2.size())
    throw ShapeError("histogram_correlation: lengths differ (" +
                     std::to_string(h1.size()) + " vs " +
                     std::to_string(h2.size()) + ")");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    if (h1[i] < 0.0 || h2[i] < 0.0)
      throw ContractError("histogram_correlation: negative bin count");
    dot += h1[i] * h2[i];
    n1 += h1[i] * h1[i];
    n2 += h2[i] * h2[i];
  }
  if (n1 == 0.0 || n2 == 0.0)
    throw ContractError("histogram_correlation: all-zero histogram");
  return std::clamp(dot / std::sqrt(n1 * n2), 0.0, 1.0);
}

std::vector<double> roi_histogram(const Image& img, const Rect& roi,
                                  int bins) {
  if (bins < 2)
    throw ConfigError("roi_histogram: need at least 2 bins, got " +
                      std::to_string(bins));
  if (roi.w < 1 || roi.h < 1 || roi.x < 0 || roi.y < 0 ||
      roi.x + roi.w > img.width || roi.y + roi.h > img.height)
    throw GeometryError("ROI (" + std::to_string(roi.x) + ", " +
                        std::to_string(roi.y) + ", " + std::to_string(roi.w) +
                        "x" + std::to_string(roi.h) +
                        ") outside frame " + std::to_string(img.width) + "x" +
                        std::to_string(img.height));
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (int y = roi.y; y < roi.y + roi.h; ++y)
    for (int x = roi.x; x < roi.x + roi.w; ++x)
      hist[static_cast<std::size_t>(img.at(y, x)) * bins / 256] += 1.0;
  return hist;
}

int spot_apex(const FrameSequence& seq, const std::vector<Rect>& rois,
              int bins) {
  seq.validate();
  if (rois.empty()) throw ConfigError("spot_apex: no ROIs given");
  if (seq.offset_index <= seq.onset_index)
    throw DataError("spot_apex: no candidate frames between onset " +
                    std::to_string(seq.onset_index) + " and offset " +
                    std::to_string(seq.offset_index));

  const Image& onset = seq.frames[static_cast<std::size_t>(seq.onset_index)];
  std::vector<std::vector<double>> onset_hists;
  onset_hists.reserve(rois.size());
  for (const Rect& roi : rois)
    onset_hists.push_back(roi_histogram(onset, roi, bins));

  int best_index = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (int i = seq.onset_index + 1; i <= seq.offset_index; ++i) {
    const Image& frame = seq.frames[static_cast<std::size_t>(i)];
    double score = 0.0;
    for (std::size_t r = 0; r < rois.size(); ++r)
      score += histogram_correlation(onset_hists[r],
                                     roi_histogram(frame, rois[r], bins));
    // strict comparison keeps the earliest index on ties
    if (score < best_score) {
      best_score = score;
      best_index = i;
    }
  }
  return best_index;
}

std::vector<Rect> default_rois(const LandmarkSet& lm, int frame_width,
                               int frame_height, int roi_size) {
  if (roi_size < 1)
    throw ConfigError("spotting ROI size must be >= 1, got " +
                      std::to_string(roi_size));
  if (frame_width < roi_size || frame_height < roi_size)
    throw DataError("frame too small for " + std::to_string(roi_size) +
                    "px spotting ROIs: " + std::to_string(frame_width) + "x" +
                    std::to_string(frame_height));
  std::vector<Rect> rois;
  for (const auto& pt :
       {lm.left_eye, lm.right_eye, lm.left_lip, lm.right_lip}) {
    Rect r;
    r.w = r.h = roi_size;
    r.x = std::clamp(static_cast<int>(std::lround(pt[0])) - roi_size / 2, 0,
                     frame_width - roi_size);
    r.y = std::clamp(static_cast<int>(std::lround(pt[1])) - roi_size / 2, 0,
                     frame_height - roi_size);
    rois.push_back(r);
  }
  return rois;
}

void FlowParams::validate() const {
  if (pyramid_levels < 1)
    throw ConfigError("flow: pyramid_levels must be >= 1, got " +
                      std::to_string(pyramid_levels));
  if (!(pyr_scale > 0.0 && pyr_scale < 1.0))
    throw ConfigError("flow: pyr_scale must lie in (0, 1), got " +
                      std::to_string(pyr_scale));
  if (window_size < 1)
    throw ConfigError("flow: window_size must be >= 1, got " +
                      std::to_string(window_size));
  if (iterations < 1)
    throw ConfigError("flow: iterations must be >= 1, got " +
                      std::to_string(iterations));
  if (poly_n < 3 || poly_n % 2 == 0)
    throw ConfigError("flow: poly_n must be odd and >= 3, got " +
                      std::to_string(poly_n));
  if (!(poly_sigma > 0.0))
    throw ConfigError("flow: poly_sigma must be > 0, got " +
                      std::to_string(poly_sigma));
}

FlowField compute_flow(const Image& onset, const Image& apex,
                       const FlowParams& params) {
  params.validate();
  if (onset.width != apex.width || onset.height != apex.height)
    throw ShapeError("compute_flow: frame sizes differ, " +
                     std::to_string(onset.width) + "x" +
                     std::to_string(onset.height) + " vs " +
                     std::to_string(apex.width) + "x" +
                     std::to_string(apex.height));
  if (onset.width < 1 || onset.height < 1)
    throw ShapeError("compute_flow: empty frames");
  ensure_single_thread();

  if (onset.pixels == apex.pixels) {
    // zero displacement is exact; the iterative solver would leave ~1e-5
    // residue that downstream contracts (all-zero flow maps) cannot absorb
    FlowField zero;
    zero.height = onset.height;
    zero.width = onset.width;
    zero.u.assign(static_cast<std::size_t>(onset.height) * onset.width, 0.0);
    zero.v = zero.u;
    return zero;
  }

  cv::Mat flow;
  cv::calcOpticalFlowFarneback(to_mat(onset), to_mat(apex), flow,
                               params.pyr_scale, params.pyramid_levels,
                               params.window_size, params.iterations,
                               params.poly_n, params.poly_sigma, 0);

  FlowField out;
  out.height = onset.height;
  out.width = onset.width;
  out.u.resize(static_cast<std::size_t>(out.height) * out.width);
  out.v.resize(out.u.size());
  for (int y = 0; y < out.height; ++y) {
    const cv::Vec2f* row = flow.ptr<cv::Vec2f>(y);
    for (int x = 0; x < out.width; ++x) {
      out.u[static_cast<std::size_t>(y) * out.width + x] = row[x][0];
      out.v[static_cast<std::size_t>(y) * out.width + x] = row[x][1];
    }
  }
  return out;
}

std::vector<double> compute_strain(const FlowField& flow) {
  const int h = flow.height, w = flow.width;
  if (h < 2 || w < 2)
    throw GeometryError("compute_strain: flow must be at least 2x2, got " +
                        std::to_string(w) + "x" + std::to_string(h));
  if (flow.u.size() != static_cast<std::size_t>(h) * w ||
      flow.v.size() != flow.u.size())
    throw ShapeError("compute_strain: flow buffers do not match dimensions");

  auto dx = [w](const std::vector<double>& f, int y, int x) {
    const std::size_t row = static_cast<std::size_t>(y) * w;
    if (x == 0) return f[row + 1] - f[row];
    if (x == w - 1) return f[row + w - 1] - f[row + w - 2];
    return (f[row + x + 1] - f[row + x - 1]) / 2.0;
  };
  auto dy = [h, w](const std::vector<double>& f, int y, int x) {
    if (y == 0) return f[static_cast<std::size_t>(w) + x] - f[x];
    if (y == h - 1)
      return f[static_cast<std::size_t>(h - 1) * w + x] -
             f[static_cast<std::size_t>(h - 2) * w + x];
    return (f[static_cast<std::size_t>(y + 1) * w + x] -
            f[static_cast<std::size_t>(y - 1) * w + x]) /
           2.0;
  };

  std::vector<double> strain(flow.u.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double exx = dx(flow.u, y, x);
      const double eyy = dy(flow.v, y, x);
      const double shear = dy(flow.u, y, x) + dx(flow.v, y, x);
      strain[static_cast<std::size_t>(y) * w + x] =
          std::sqrt(exx * exx + eyy * eyy + 0.5 * shear * shear);
    }
  return strain;
}

CompositeFlowMap build_composite(const FlowField& flow,
                                 const std::vector<double>& strain,
                                 const LandmarkSet& landmarks, int out_size) {
  const int h = flow.height, w = flow.width;
  if (h < 1 || w < 1 ||
      flow.u.size() != static_cast<std::size_t>(h) * w ||
      flow.v.size() != flow.u.size() || strain.size() != flow.u.size())
    throw ShapeError("build_composite: flow/strain dimensions inconsistent");
  if (out_size < 2 || out_size % 2 != 0)
    throw GeometryError("build_composite: output size must be even and >= 2, "
                        "got " + std::to_string(out_size));
  for (const auto& pt : {landmarks.left_eye, landmarks.right_eye,
                         landmarks.left_lip, landmarks.right_lip})
    if (pt[0] < 0.0 || pt[0] >= w || pt[1] < 0.0 || pt[1] >= h)
      throw DataError("landmark (" + std::to_string(pt[0]) + ", " +
                      std::to_string(pt[1]) + ") outside frame " +
                      std::to_string(w) + "x" + std::to_string(h));
  ensure_single_thread();

  cv::Mat vm(h, w, CV_64FC3);
  for (int y = 0; y < h; ++y) {
    cv::Vec3d* row = vm.ptr<cv::Vec3d>(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      row[x] = {flow.u[i], flow.v[i], strain[i]};
    }
  }
  cv::Mat resized;
  cv::resize(vm, resized, cv::Size(out_size, out_size), 0, 0,
             cv::INTER_LINEAR);

  // displacements change units with the resample; strain is dimensionless
  const double sx = static_cast<double>(out_size) / w;
  const double sy = static_cast<double>(out_size) / h;
  for (int y = 0; y < out_size; ++y) {
    cv::Vec3d* row = resized.ptr<cv::Vec3d>(y);
    for (int x = 0; x < out_size; ++x) {
      row[x][0] *= sx;
      row[x][1] *= sy;
    }
  }

  const int half = out_size / 2;
  auto crop_start = [&](double coord, double scale_factor) {
    // pixel-center convention for the landmark's resized coordinate
    const double mapped = (coord + 0.5) * scale_factor - 0.5;
    return std::clamp(static_cast<int>(std::lround(mapped)) - half / 2, 0,
                      out_size - half);
  };

  CompositeFlowMap map;
  map.size = out_size;
  map.layout = 0;
  map.data.assign(static_cast<std::size_t>(out_size) * out_size * 3, 0.0);

  struct Placement {
    std::array<double, 2> landmark;
    int row0, col0;  // destination quadrant origin
  };
  const Placement placements[4] = {
      {landmarks.left_eye, 0, 0},
      {landmarks.right_eye, 0, half},
      {landmarks.left_lip, half, 0},
      {landmarks.right_lip, half, half},
  };
  for (const Placement& p : placements) {
    const int src_x = crop_start(p.landmark[0], sx);
    const int src_y = crop_start(p.landmark[1], sy);
    for (int dy2 = 0; dy2 < half; ++dy2) {
      const cv::Vec3d* src = resized.ptr<cv::Vec3d>(src_y + dy2);
      for (int dx2 = 0; dx2 < half; ++dx2) {
        const cv::Vec3d& v = src[src_x + dx2];
        const std::size_t base =
            (static_cast<std::size_t>(p.row0 + dy2) * out_size + p.col0 +
             dx2) *
            3;
        map.data[base + 0] = v[0];
        map.data[base + 1] = v[1];
        map.data[base + 2] = v[2];
      }
    }
  }
  return map;
}

LandmarkSet load_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open landmark file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("landmark file '" + path + "': " + e.what());
  }
  auto read_point = [&](const char* key) -> std::array<double, 2> {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 2)
      throw DataError("landmark file '" + path + "': key '" + key +
                      "' must be [x, y]");
    try {
      return {j[key][0].get<double>(), j[key][1].get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError("landmark file '" + path + "': " + e.what());
    }
  };
  LandmarkSet lm;
  lm.left_eye = read_point("left_eye");
  lm.right_eye = read_point("right_eye");
  lm.left_lip = read_point("left_lip");
  lm.right_lip = read_point("right_lip");
  return lm;
}

void save_landmarks(const LandmarkSet& lm, const std::string& path) {
  nlohmann::json j;
  j["left_eye"] = lm.left_eye;
  j["right_eye"] = lm.right_eye;
  j["left_lip"] = lm.left_lip;
  j["right_lip"] = lm.right_lip;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

void write_flow_file(const CompositeFlowMap& map, const std::string& path) {
  if (map.size < 1 ||
      map.data.size() != static_cast<std::size_t>(map.size) * map.size * 3)
    throw ContractError("write_flow_file: map data does not match size " +
                        std::to_string(map.size));
  binio::Writer w;
  w.magic("HTFM");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(map.size));
  w.u32(static_cast<std::uint32_t>(map.size));
  w.u32(3);
  w.u8(map.layout);
  w.f64_array(map.data.data(), map.data.size());
  w.save(path);
}

CompositeFlowMap read_flow_file(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("HTFM", "flow map");
  std::size_t at = r.offset();
  const std::uint32_t version = r.u32("flow map version");
  if (version != 1)
    throw FormatError("flow map: unsupported version " +
                          std::to_string(version),
                      at);
  at = r.offset();
  const std::uint32_t height = r.u32("flow map height");
  const std::uint32_t width = r.u32("flow map width");
  const std::uint32_t channels = r.u32("flow map channels");
  if (height == 0 || width == 0 || height != width || channels != 3 ||
      height > (1u << 16))
    throw FormatError("flow map: bad dimensions " + std::to_string(width) +
                          "x" + std::to_string(height) + "x" +
                          std::to_string(channels),
                      at);
  at = r.offset();
  const std::uint8_t layout = r.u8("flow map layout");
  if (layout != 0)
    throw FormatError("flow map: unknown layout code " +
                          std::to_string(layout),
                      at);
  CompositeFlowMap map;
  map.size = static_cast<int>(height);
  map.layout = layout;
  map.data.resize(static_cast<std::size_t>(height) * width * 3);
  r.f64_array(map.data.data(), map.data.size(), "flow map payload");
  r.expect_eof("flow map");
  return map;
}

Tensor composite_to_tensor(const CompositeFlowMap& map) {
  const int s = map.size;
  if (s < 1 || map.data.size() != static_cast<std::size_t>(s) * s * 3)
    throw ContractError("composite_to_tensor: inconsistent map");
  std::vector<double> out(map.data.size());
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        out[(static_cast<std::size_t>(ch) * s + y) * s + x] =
            map.data[(static_cast<std::size_t>(y) * s + x) * 3 + ch];
  return Tensor({3, s, s}, std::move(out));
}

}  // namespace htnet
