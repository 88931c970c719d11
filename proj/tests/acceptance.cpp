// Acceptance gate: one self-contained check per release criterion, printed
// as a single [PASS]/[FAIL] line each. Tolerances and budgets are pinned
// here, next to the checks they govern. Exit code = number of failures.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "htnet/commands.hpp"
#include "htnet/config.hpp"
#include "htnet/error.hpp"
#include "htnet/flow.hpp"
#include "htnet/log.hpp"
#include "htnet/model.hpp"
#include "htnet/synth.hpp"
#include "htnet/tensor.hpp"
#include "htnet/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace htnet;

namespace {

// --- pinned tolerances and budgets ----------------------------------------
constexpr double kGradTol = 1e-4;       // 1: max relative gradient error
constexpr double kGradH = 1e-5;         // 1: finite-difference step
constexpr int kGradProbes = 60;         // 1: >= 50 sampled parameters
constexpr double kGradBudget = 60.0;    // 1: seconds
constexpr double kOracleTol = 1e-10;    // 2: op vs explicit-loop oracle
constexpr int kOracleTrials = 100;      // 2: instances per op
constexpr double kStrainTol = 1e-9;     // 3: closed-form strain
constexpr double kCorrTol = 1e-12;      // 4: self-correlation
constexpr int kSpotTrials = 100;        // 4: randomized constructions
constexpr double kFlowTol = 0.25;       // 5: pixels
constexpr double kFlowBudget = 10.0;    // 5: seconds
constexpr int kLocalityTrials = 20;     // 6
constexpr int kMetricTrials = 1000;     // 7
constexpr double kUarHandTol = 1e-12;   // 7
constexpr double kUf1HandTol = 1e-4;    // 7
constexpr int kSplitTrials = 100;       // 8
constexpr int kOverfitEpochs = 200;     // 9
constexpr double kOverfitBudget = 300.0;   // 9: seconds
constexpr double kLosoUf1Min = 0.85;    // 10
constexpr double kLosoBudget = 1800.0;  // 10: seconds
constexpr int kRoundTrips = 100;        // 12

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::vector<double> randv(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = d(rng);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path root;
  explicit TempDir(const std::string& name)
      : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempDir() { fs::remove_all(root); }
};

// Small model used where the criterion leaves the configuration free.
ModelConfig small_model() {
  ModelConfig cfg;
  cfg.dims = {8, 12, 16};
  cfg.heads = {2, 2, 2};
  cfg.layers = {1, 1, 1};
  cfg.head_hidden = 12;
  return cfg;
}

// --- criterion 1: autodiff vs central finite differences -------------------
Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig mcfg;  // default configuration
  HTNet model(mcfg, 1234);
  std::mt19937_64 rng(99);
  const Tensor xa({3, 28, 28}, randv(rng, 3 * 28 * 28));
  const Tensor xb({3, 28, 28}, randv(rng, 3 * 28 * 28));
  const std::vector<int> labels{0, 2};
  const std::array<double, 3> weights{1.3, 0.8, 1.1};
  auto make_loss = [&] {
    return weighted_cross_entropy(
        concat_rows({model.forward(xa), model.forward(xb)}), labels, weights);
  };

  std::vector<Tensor>& params = model.params().tensors();
  for (Tensor& t : params) t.zero_grad();
  backward(make_loss());

  std::uniform_int_distribution<std::size_t> pick_tensor(0, params.size() - 1);
  double worst = 0.0;
  for (int p = 0; p < kGradProbes; ++p) {
    Tensor& t = params[pick_tensor(rng)];
    std::uniform_int_distribution<std::size_t> pick_elem(0,
                                                         t.data().size() - 1);
    const std::size_t e = pick_elem(rng);
    const double analytic = t.grad()[e];
    auto vals = t.mutable_data();
    const double saved = vals[e];
    double fp = 0.0, fm = 0.0;
    {
      NoGradGuard ng;
      vals[e] = saved + kGradH;
      fp = make_loss().item();
      vals[e] = saved - kGradH;
      fm = make_loss().item();
    }
    vals[e] = saved;
    const double numeric = (fp - fm) / (2.0 * kGradH);
    const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradBudget,
          fmt("max rel err %.2e over %d params (tol %.0e), %.1fs (budget %.0fs)",
              worst, kGradProbes, kGradTol, secs, kGradBudget)};
}

// --- criterion 2: op oracles ------------------------------------------------
Outcome criterion2() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> small(1, 8);
  double worst = 0.0;
  auto track = [&](double impl, double want) {
    worst = std::max(worst, std::abs(impl - want));
  };

  for (int i = 0; i < kOracleTrials; ++i) {  // matmul
    const int m = small(rng), k = small(rng), n = small(rng);
    const auto a = randv(rng, static_cast<std::size_t>(m) * k);
    const auto b = randv(rng, static_cast<std::size_t>(k) * n);
    const Tensor out = matmul(Tensor({m, k}, a), Tensor({k, n}, b));
    const auto want = oracle::matmul(a, b, m, k, n);
    for (std::size_t j = 0; j < want.size(); ++j) track(out.data()[j], want[j]);
  }

  std::uniform_int_distribution<int> chan(1, 4), side(3, 8), stride_d(1, 2),
      pad_d(0, 2);
  for (int i = 0; i < kOracleTrials; ++i) {  // conv2d_3x3
    const int cin = chan(rng), cout = chan(rng), h = side(rng), w = side(rng);
    const int stride = stride_d(rng), pad = pad_d(rng);
    const auto x = randv(rng, static_cast<std::size_t>(cin) * h * w);
    const auto wt = randv(rng, static_cast<std::size_t>(cout) * cin * 9);
    const auto b = randv(rng, static_cast<std::size_t>(cout));
    const Tensor out =
        conv2d_3x3(Tensor({cin, h, w}, x), Tensor({cout, cin, 3, 3}, wt),
                   Tensor({cout}, b), stride, pad);
    const auto want = oracle::conv3x3(x, wt, b, cin, h, w, cout, stride, pad);
    for (std::size_t j = 0; j < want.size(); ++j) track(out.data()[j], want[j]);
  }

  for (int i = 0; i < kOracleTrials; ++i) {  // maxpool2d_3x3
    const int c = chan(rng), h = side(rng), w = side(rng);
    const int stride = stride_d(rng), pad = pad_d(rng);
    const auto x = randv(rng, static_cast<std::size_t>(c) * h * w);
    const Tensor out = maxpool2d_3x3(Tensor({c, h, w}, x), stride, pad);
    const auto want = oracle::maxpool3x3(x, c, h, w, stride, pad);
    for (std::size_t j = 0; j < want.size(); ++j) track(out.data()[j], want[j]);
  }

  std::uniform_int_distribution<int> blocks_d(1, 2), tokens_d(2, 5),
      heads_d(1, 2), dh_d(2, 4);
  for (int i = 0; i < kOracleTrials; ++i) {  // block-local attention
    const int blocks = blocks_d(rng), n = tokens_d(rng);
    const int heads = heads_d(rng), d = heads * dh_d(rng);
    const auto x = randv(rng, static_cast<std::size_t>(blocks) * n * d);
    const auto wq = randv(rng, static_cast<std::size_t>(d) * d);
    const auto wk = randv(rng, static_cast<std::size_t>(d) * d);
    const auto wv = randv(rng, static_cast<std::size_t>(d) * d);
    const auto wo = randv(rng, static_cast<std::size_t>(d) * d);
    AttentionParams p{Tensor({d, d}, wq), Tensor({d, d}, wk),
                      Tensor({d, d}, wv), Tensor({d, d}, wo)};
    const Tensor out = local_msa(Tensor({blocks * n, d}, x), blocks, heads, p);
    for (int b = 0; b < blocks; ++b) {
      const std::vector<double> xb(
          x.begin() + static_cast<std::ptrdiff_t>(b) * n * d,
          x.begin() + static_cast<std::ptrdiff_t>(b + 1) * n * d);
      const auto want = oracle::attention(xb, n, d, wq, wk, wv, wo, heads);
      for (std::size_t j = 0; j < want.size(); ++j)
        track(out.data()[static_cast<std::size_t>(b) * n * d + j], want[j]);
    }
  }

  return {worst < kOracleTol,
          fmt("max abs err %.2e over %d instances/op (tol %.0e)", worst,
              kOracleTrials, kOracleTol)};
}

// --- criterion 3: strain closed forms --------------------------------------
Outcome criterion3() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coeff(-3.0, 3.0);
  const int h = 9, w = 12;
  auto field = [&](auto&& fu, auto&& fv) {
    FlowField f;
    f.height = h;
    f.width = w;
    f.u.resize(static_cast<std::size_t>(h) * w);
    f.v.resize(f.u.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        f.u[static_cast<std::size_t>(y) * w + x] = fu(x, y);
        f.v[static_cast<std::size_t>(y) * w + x] = fv(x, y);
      }
    return f;
  };
  double worst_const = 0.0, worst_lin = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double a = coeff(rng), b = coeff(rng);
    const auto s0 = compute_strain(field([&](int, int) { return a; },
                                         [&](int, int) { return b; }));
    for (double v : s0) worst_const = std::max(worst_const, std::abs(v));

    const auto su = compute_strain(field([&](int x, int) { return a * x; },
                                         [](int, int) { return 0.0; }));
    const auto sv = compute_strain(field([](int, int) { return 0.0; },
                                         [&](int x, int) { return b * x; }));
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        worst_lin = std::max(worst_lin, std::abs(su[i] - std::abs(a)));
        worst_lin = std::max(
            worst_lin, std::abs(sv[i] - std::abs(b) / std::sqrt(2.0)));
      }
  }
  return {worst_const == 0.0 && worst_lin < kStrainTol,
          fmt("constant-flow strain %.1e (exact 0), linear-field err %.2e "
              "(tol %.0e)",
              worst_const, worst_lin, kStrainTol)};
}

// --- criterion 4: histogram correlation and apex spotting -------------------
Outcome criterion4() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pix(0, 255);

  double worst_self = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Image img;
    img.height = 48;
    img.width = 48;
    img.pixels.resize(48 * 48);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(pix(rng));
    const Rect roi{8, 8, 24, 24};
    const auto hist = roi_histogram(img, roi, 16);
    worst_self =
        std::max(worst_self, std::abs(histogram_correlation(hist, hist) - 1.0));
  }

  int hits = 0;
  for (int trial = 0; trial < kSpotTrials; ++trial) {
    std::uniform_int_distribution<int> size_d(36, 64), len_d(5, 12);
    const int w = size_d(rng), h = size_d(rng), n = len_d(rng);
    std::uniform_int_distribution<int> peak_d(1, n - 1);
    const int peak = peak_d(rng);

    Image base;
    base.height = h;
    base.width = w;
    base.pixels.resize(static_cast<std::size_t>(h) * w);
    for (auto& p : base.pixels) p = static_cast<std::uint8_t>(pix(rng));

    LandmarkSet lm;
    lm.left_eye = {0.3 * w, 0.35 * h};
    lm.right_eye = {0.7 * w, 0.35 * h};
    lm.left_lip = {0.35 * w, 0.7 * h};
    lm.right_lip = {0.65 * w, 0.7 * h};
    const auto rois = default_rois(lm, w, h);

    FrameSequence seq;
    seq.onset_index = 0;
    seq.offset_index = n - 1;
    for (int t = 0; t < n; ++t) seq.frames.push_back(base);
    Image& apex = seq.frames[static_cast<std::size_t>(peak)];
    for (const Rect& r : rois)
      for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x)
          apex.at(y, x) = (y < r.y + r.h / 2) ? 255 : 0;

    if (spot_apex(seq, rois, 16) == peak) ++hits;
  }

  return {worst_self < kCorrTol && hits == kSpotTrials,
          fmt("self-correlation err %.1e (tol %.0e); engineered peak spotted "
              "%d/%d",
              worst_self, kCorrTol, hits, kSpotTrials)};
}

// --- criterion 5: Farneback recovers a known translation --------------------
Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 64;
  const double cx = 30.0, cy = 33.0, sigma = 10.0, amp = 220.0;
  auto blob = [&](double ox, double oy) {
    Image img;
    img.height = n;
    img.width = n;
    img.pixels.resize(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x - (cx + ox), dy = y - (cy + oy);
        const double v = amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        img.at(y, x) = static_cast<std::uint8_t>(std::lround(v));
      }
    return img;
  };
  const FlowField f = compute_flow(blob(0, 0), blob(2, 0), {});
  double su = 0.0, sv = 0.0;
  int count = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > 12.0 * 12.0) continue;
      su += f.u[static_cast<std::size_t>(y) * n + x];
      sv += f.v[static_cast<std::size_t>(y) * n + x];
      ++count;
    }
  const double mu = su / count, mv = sv / count;
  const double secs = seconds_since(t0);
  return {std::abs(mu - 2.0) < kFlowTol && std::abs(mv) < kFlowTol &&
              secs < kFlowBudget,
          fmt("mean interior flow (%.3f, %.3f) vs (2, 0), tol %.2f px; %.2fs",
              mu, mv, kFlowTol, secs)};
}

// --- criterion 6: bottom-level locality -------------------------------------
Outcome criterion6() {
  const ModelConfig mcfg;  // default: 4x4 grid of 7x7-pixel blocks
  HTNet model(mcfg, 77);
  std::mt19937_64 rng(3);
  const int grid = mcfg.grid_side(0);
  const int blk = mcfg.image_size / grid;
  const int tokens_per_block =
      (mcfg.image_size / grid / mcfg.patch_size) *
      (mcfg.image_size / grid / mcfg.patch_size);
  std::uniform_int_distribution<int> block_d(0, grid * grid - 1);
  double worst = 0.0;
  NoGradGuard ng;
  for (int trial = 0; trial < kLocalityTrials; ++trial) {
    const Tensor x({3, 28, 28}, randv(rng, 3 * 28 * 28));
    const Tensor base = model.level0_features(x);
    const int target = block_d(rng);
    const int br = target / grid, bc = target % grid;
    Tensor x2 = x.clone();
    {
      auto vals = x2.mutable_data();
      std::uniform_real_distribution<double> bump(0.5, 1.5);
      for (int c = 0; c < 3; ++c)
        for (int y = br * blk; y < (br + 1) * blk; ++y)
          for (int xx = bc * blk; xx < (bc + 1) * blk; ++xx)
            vals[(static_cast<std::size_t>(c) * 28 + y) * 28 + xx] += bump(rng);
    }
    const Tensor after = model.level0_features(x2);
    const int d = base.dim(1);
    for (int b = 0; b < grid * grid; ++b) {
      if (b == target) continue;
      for (int r = b * tokens_per_block; r < (b + 1) * tokens_per_block; ++r)
        for (int c = 0; c < d; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * d + c;
          worst = std::max(worst, std::abs(after.data()[i] - base.data()[i]));
        }
    }
  }
  return {worst == 0.0,
          fmt("max abs drift in untouched blocks %.1e over %d trials "
              "(required: exactly 0)",
              worst, kLocalityTrials)};
}

// --- criterion 7: metric oracles --------------------------------------------
Outcome criterion7() {
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<long long> count_d(0, 20);
  int exact = 0;
  for (int trial = 0; trial < kMetricTrials; ++trial) {
    Confusion c;
    oracle::Confusion o;
    for (int t = 0; t < 3; ++t) {
      long long row = 0;
      for (int p = 0; p < 3; ++p) {
        const long long v = count_d(rng);
        c.counts[t][p] = v;
        o.counts[t][p] = static_cast<long>(v);
        row += v;
      }
      if (row == 0) {  // keep every row populated so UAR is defined
        c.counts[t][t] = 1;
        o.counts[t][t] = 1;
      }
    }
    if (uf1(c) == oracle::uf1_brute(o) && uar(c) == oracle::uar_brute(o))
      ++exact;
  }

  Confusion hand;
  hand.counts = {{{5, 0, 0}, {0, 0, 5}, {0, 0, 5}}};
  const double hand_uar = uar(hand), hand_uf1 = uf1(hand);
  const bool hand_ok = std::abs(hand_uar - 2.0 / 3.0) < kUarHandTol &&
                       std::abs(hand_uf1 - 0.5556) < kUf1HandTol;
  return {exact == kMetricTrials && hand_ok,
          fmt("%d/%d random confusions exact; hand case UAR %.6f UF1 %.6f",
              exact, kMetricTrials, hand_uar, hand_uf1)};
}

// --- criterion 8: LOSO partition properties ---------------------------------
Outcome criterion8() {
  std::mt19937_64 rng(31);
  const char* datasets[] = {"SAMM", "SMIC", "CASME2"};
  int good = 0;
  for (int trial = 0; trial < kSplitTrials; ++trial) {
    std::uniform_int_distribution<int> nd(1, 3), ns(2, 6), nk(1, 5);
    Manifest m;
    const int d_count = nd(rng);
    for (int d = 0; d < d_count; ++d) {
      const int subjects = ns(rng);
      for (int s = 0; s < subjects; ++s)
        for (int k = 0, kk = nk(rng); k < kk; ++k) {
          ManifestEntry e;
          e.dataset = datasets[d];
          e.subject_id = "s" + std::to_string(s);  // ids recur across datasets
          e.sample_id = e.dataset + "_" + e.subject_id + "_" +
                        std::to_string(k);
          m.entries.push_back(e);
        }
    }
    const auto folds = loso_split(m);

    std::vector<int> seen(m.entries.size(), 0);
    bool ok = true;
    for (const Fold& f : folds) {
      for (int i : f.test_indices) ++seen[static_cast<std::size_t>(i)];
      // subject-leak freedom: the held-out pair never appears in train
      for (int i : f.train_indices) {
        const ManifestEntry& e = m.entries[static_cast<std::size_t>(i)];
        if (e.dataset == f.dataset && e.subject_id == f.subject_id) ok = false;
      }
      // train is exactly the complement of test
      if (f.train_indices.size() + f.test_indices.size() != m.entries.size())
        ok = false;
    }
    // disjoint and exhaustive: each index held out exactly once
    for (int s : seen)
      if (s != 1) ok = false;
    if (ok) ++good;
  }
  return {good == kSplitTrials,
          fmt("%d/%d random manifests partition cleanly", good, kSplitTrials)};
}

// --- criterion 9: 32-sample overfit -----------------------------------------
Outcome criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  auto sample = [&](int label) {
    std::vector<double> v(3 * 28 * 28);
    for (double& x : v) x = noise(rng);
    // one lit quadrant per class in channel 0
    const int qy = (label == 2) ? 14 : 0;
    const int qx = (label == 1) ? 14 : 0;
    for (int y = qy; y < qy + 14; ++y)
      for (int x = qx; x < qx + 14; ++x)
        v[(static_cast<std::size_t>(0) * 28 + y) * 28 + x] += 1.0;
    return Tensor({3, 28, 28}, std::move(v));
  };
  std::vector<TrainSample> set;
  for (int i = 0; i < 32; ++i) set.push_back({sample(i % 3), i % 3});

  TrainConfig tcfg;
  tcfg.learning_rate = 2e-3;
  tcfg.max_epochs = kOverfitEpochs;
  tcfg.batch_size = 8;
  tcfg.seed = 21;
  HTNet model(small_model(), 21);
  const auto curve = fit(model, set, tcfg);

  int correct = 0;
  {
    NoGradGuard ng;
    for (const TrainSample& s : set)
      if (predict_class(model.forward(s.input)) == s.label) ++correct;
  }
  const double secs = seconds_since(t0);
  return {correct == 32 && secs < kOverfitBudget,
          fmt("train accuracy %d/32 after %d epochs, final loss %.3g, %.0fs "
              "(budget %.0fs)",
              correct, static_cast<int>(curve.size()), curve.back(), secs,
              kOverfitBudget)};
}

// --- criterion 10: end-to-end LOSO on the bundled synthetic corpus ----------
Outcome criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto saved = log::threshold();
  log::set_threshold(log::Level::error);

  auto run_once = [&](const fs::path& root) {
    const fs::path data = root / "data";
    SynthConfig synth;  // the bundled 12-subject corpus, seed 0
    if (cmd_make_synth(synth, data.string()) != 0)
      throw Error("make-synth failed");

    RunConfig cfg;
    cfg.manifest = (data / "manifest.csv").string();
    cfg.out_dir = (root / "run").string();
    cfg.seed = 11;
    cfg.model = small_model();
    cfg.train.learning_rate = 2e-3;
    cfg.train.max_epochs = 15;
    cfg.train.batch_size = 8;
    if (cmd_spot(cfg) != 0) throw Error("spot failed");
    cfg.manifest = (data / "manifest_spotted.csv").string();
    if (cmd_extract(cfg, /*jobs=*/1) != 0) throw Error("extract failed");
    if (cmd_eval_loso(cfg, /*jobs=*/1) != 0) throw Error("eval-loso failed");
    return slurp(fs::path(cfg.out_dir) / "report.json");
  };

  TempDir dir_a("htnet_accept_loso_a");
  TempDir dir_b("htnet_accept_loso_b");
  const std::string report_a = run_once(dir_a.root);
  const std::string report_b = run_once(dir_b.root);
  log::set_threshold(saved);

  const EvalReport report = report_from_json(report_a);
  const double secs = seconds_since(t0);
  const bool deterministic = report_a == report_b;
  return {report.pooled_uf1 >= kLosoUf1Min && deterministic &&
              secs < kLosoBudget,
          fmt("pooled UF1 %.4f (floor %.2f), UAR %.4f, %zu folds; repeat %s; "
              "%.0fs for two runs (budget %.0fs)",
              report.pooled_uf1, kLosoUf1Min, report.pooled_uar,
              report.folds.size(),
              deterministic ? "byte-identical" : "DIVERGED", secs,
              kLosoBudget)};
}

// --- criterion 11: hierarchy geometry ---------------------------------------
Outcome criterion11() {
  const ModelConfig cfg;  // defaults
  const bool grids = cfg.grid_side(0) == 4 && cfg.grid_side(1) == 2 &&
                     cfg.grid_side(2) == 1;
  const bool sides = cfg.spatial_side(0) == 28 && cfg.spatial_side(1) == 14 &&
                     cfg.spatial_side(2) == 7;
  return {grids && sides,
          fmt("grids %dx%d -> %dx%d -> %dx%d, sides %d -> %d -> %d",
              cfg.grid_side(0), cfg.grid_side(0), cfg.grid_side(1),
              cfg.grid_side(1), cfg.grid_side(2), cfg.grid_side(2),
              cfg.spatial_side(0), cfg.spatial_side(1), cfg.spatial_side(2))};
}

// --- criterion 12: file-format round trips ----------------------------------
Outcome criterion12() {
  std::mt19937_64 rng(777);
  TempDir dir("htnet_accept_roundtrip");

  int flow_ok = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    std::uniform_int_distribution<int> size_d(4, 32);
    CompositeFlowMap map;
    map.size = size_d(rng);
    map.data = randv(rng, static_cast<std::size_t>(map.size) * map.size * 3,
                     -5.0, 5.0);
    const fs::path p1 = dir.root / "a.htfm", p2 = dir.root / "b.htfm";
    write_flow_file(map, p1.string());
    const CompositeFlowMap back = read_flow_file(p1.string());
    write_flow_file(back, p2.string());
    if (back.size == map.size && back.data == map.data &&
        slurp(p1) == slurp(p2))
      ++flow_ok;
  }

  ModelConfig tiny;
  tiny.dims = {4, 6, 8};
  tiny.heads = {2, 2, 2};
  tiny.layers = {1, 1, 1};
  tiny.head_hidden = 5;
  int ckpt_ok = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    HTNet model(tiny, static_cast<std::uint64_t>(i));
    const fs::path p1 = dir.root / "a.htck", p2 = dir.root / "b.htck";
    save_checkpoint(model, p1.string());
    const HTNet back = load_checkpoint(p1.string());
    save_checkpoint(back, p2.string());
    bool same = slurp(p1) == slurp(p2);
    const auto& ta = model.params().tensors();
    const auto& tb = back.params().tensors();
    same = same && ta.size() == tb.size();
    for (std::size_t t = 0; same && t < ta.size(); ++t)
      same = std::equal(ta[t].data().begin(), ta[t].data().end(),
                        tb[t].data().begin(), tb[t].data().end());
    if (same) ++ckpt_ok;
  }

  return {flow_ok == kRoundTrips && ckpt_ok == kRoundTrips,
          fmt("flow maps %d/%d, checkpoints %d/%d bit-exact", flow_ok,
              kRoundTrips, ckpt_ok, kRoundTrips)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "autodiff matches central finite differences on the full model",
       criterion1},
      {2, "matmul/conv/maxpool/attention match explicit-loop oracles",
       criterion2},
      {3, "optical strain closed forms", criterion3},
      {4, "histogram correlation and engineered-peak spotting", criterion4},
      {5, "optical flow recovers a known translation", criterion5},
      {6, "bottom-level block locality", criterion6},
      {7, "UF1/UAR match brute-force metric oracles", criterion7},
      {8, "LOSO folds are disjoint, exhaustive and leak-free", criterion8},
      {9, "32-sample synthetic set overfits to 100%", criterion9},
      {10, "end-to-end LOSO on the bundled synthetic corpus", criterion10},
      {11, "hierarchy geometry 4x4 -> 2x2 -> 1x1, 28 -> 14 -> 7", criterion11},
      {12, "flow-map and checkpoint files round-trip bit-exactly",
       criterion12},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %2d: %s — %s\n", out.pass ? "PASS" : "FAIL",
                c.id, c.name, out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures;
}
