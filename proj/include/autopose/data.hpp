#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "metrics.hpp"
#include "rng.hpp"
#include "serialize.hpp"
#include "tensor.hpp"

#ifdef AUTOPOSE_WITH_OPENCV
#include <opencv2/imgcodecs.hpp>
#endif

namespace autopose {

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

struct KeypointSample {
  int height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // H*W*3, row-major
  KeypointSet kps;                // coordinates in this sample's pixel frame
  double area = 0.0;              // instance area (crop frame)

  bool operator==(const KeypointSample& o) const {
    return height == o.height && width == o.width && rgb == o.rgb &&
           kps.points == o.kps.points && kps.visibility == o.kps.visibility &&
           kps.scale == o.kps.scale && area == o.area;
  }
};

struct Dataset {
  std::vector<KeypointSample> samples;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
  std::vector<std::pair<int, int>> flip_pairs;
  std::vector<double> k_constants;
  int num_keypoints = 0;
};

// ---------------------------------------------------------------------------
// Synthetic articulated stick figures
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int height = 64;
  int width = 48;
  int train_size = 192;
  int val_size = 48;
  double limb_thickness = 1.6;
  double noise_level = 0.06;
  double k_uniform = 0.12;
  int margin = 2;
  std::uint64_t seed = 1;
};

namespace detail_data {

inline double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail_data

// Keypoints: 0 head, 1 left elbow, 2 right elbow, 3 left wrist, 4 right wrist.
inline KeypointSample render_stick_figure(const SyntheticConfig& cfg, Rng& rng) {
  const int H = cfg.height, W = cfg.width;
  const double m = cfg.margin;
  // rejection-sample a pose whose keypoints stay inside the margin
  std::array<std::array<double, 2>, 5> kp{};
  std::array<double, 2> neck{}, hip{}, shl{}, shr{};
  double body = 0;
  for (int attempt = 0;; ++attempt) {
    body = rng.uniform(0.45, 0.75) * std::min(H, W);
    const double cx = rng.uniform(W * 0.3, W * 0.7);
    const double cy = rng.uniform(H * 0.35, H * 0.65);
    const double lean = rng.uniform(-0.25, 0.25);
    neck = {cx + lean * body * 0.3, cy - 0.30 * body};
    hip = {cx, cy + 0.30 * body};
    kp[0] = {neck[0], neck[1] - 0.22 * body};  // head
    const double sw = 0.26 * body;
    shl = {neck[0] - sw, neck[1] + 0.05 * body};
    shr = {neck[0] + sw, neck[1] + 0.05 * body};
    auto arm = [&](const std::array<double, 2>& sh, double side, std::array<double, 2>& elbow,
                   std::array<double, 2>& wrist) {
      const double a1 = rng.uniform(0.15, 1.35) * side + (side > 0 ? 0.0 : 3.14159265);
      const double upper = 0.28 * body, fore = 0.26 * body;
      elbow = {sh[0] + upper * std::cos(a1), sh[1] + upper * std::sin(a1) * 0.6 + upper * 0.4};
      const double a2 = a1 + rng.uniform(-1.1, 1.1);
      wrist = {elbow[0] + fore * std::cos(a2), elbow[1] + fore * std::sin(a2)};
    };
    std::array<double, 2> el, wl, er, wr;
    arm(shl, -1.0, el, wl);
    arm(shr, +1.0, er, wr);
    kp[1] = el;
    kp[2] = er;
    kp[3] = wl;
    kp[4] = wr;
    bool ok = true;
    for (const auto& p : kp)
      ok = ok && p[0] >= m && p[0] <= W - 1 - m && p[1] >= m && p[1] <= H - 1 - m;
    if (ok || attempt > 200) break;
  }

  KeypointSample s;
  s.height = H;
  s.width = W;
  s.rgb.assign(static_cast<std::size_t>(H) * W * 3, 0);
  // textured background: base level + gradient + noise
  const double base = rng.uniform(0.12, 0.35);
  const double gx = rng.uniform(-0.15, 0.15) / W, gy = rng.uniform(-0.15, 0.15) / H;
  const double fig = rng.uniform(0.75, 1.0);
  std::array<double, 3> tint = {rng.uniform(0.9, 1.0), rng.uniform(0.9, 1.0),
                                rng.uniform(0.9, 1.0)};
  const double thick = cfg.limb_thickness;
  const double head_r = 0.11 * body;
  const std::array<std::array<std::array<double, 2>, 2>, 6> limbs = {{{neck, hip},
                                                                      {shl, shr},
                                                                      {shl, kp[1]},
                                                                      {kp[1], kp[3]},
                                                                      {shr, kp[2]},
                                                                      {kp[2], kp[4]}}};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = base + gx * x + gy * y + rng.uniform(-cfg.noise_level, cfg.noise_level);
      double d = 1e9;
      for (const auto& L : limbs)
        d = std::min(d, detail_data::dist_to_segment(x, y, L[0][0], L[0][1], L[1][0], L[1][1]));
      const double dh = std::hypot(x - kp[0][0], y - kp[0][1]);
      if (d <= thick || dh <= head_r) v = fig;
      for (int c = 0; c < 3; ++c) {
        const double vc = std::min(1.0, std::max(0.0, v * tint[static_cast<std::size_t>(c)]));
        s.rgb[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<std::uint8_t>(std::lround(vc * 255.0));
      }
    }
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const auto& p : kp) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  x0 = std::min(x0, kp[0][0] - head_r);
  y0 = std::min(y0, kp[0][1] - head_r);
  x1 = std::max(x1, kp[0][0] + head_r);
  y1 = std::max(y1, kp[0][1] + head_r);
  s.area = (x1 - x0) * (y1 - y0);
  s.kps.points.assign(kp.begin(), kp.end());
  s.kps.visibility.assign(5, 2);
  s.kps.scale = std::sqrt(std::max(1.0, s.area));
  return s;
}

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.height % 4 != 0 || cfg.width % 4 != 0 || cfg.train_size < 1 || cfg.val_size < 1)
    throw std::invalid_argument("synthetic: size must be divisible by 4 and splits nonempty");
  Dataset ds;
  ds.num_keypoints = 5;
  ds.flip_pairs = {{1, 2}, {3, 4}};
  ds.k_constants.assign(5, cfg.k_uniform);
  Rng rng(cfg.seed);
  const int total = cfg.train_size + cfg.val_size;
  for (int i = 0; i < total; ++i) {
    KeypointSample s = render_stick_figure(cfg, rng);
    s.kps.k = ds.k_constants;
    ds.samples.push_back(std::move(s));
  }
  for (int i = 0; i < cfg.train_size; ++i) ds.train_indices.push_back(i);
  for (int i = cfg.train_size; i < total; ++i) ds.val_indices.push_back(i);
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset cache archive
// ---------------------------------------------------------------------------

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  BinWriter w(os);
  w.str("APDS");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(ds.num_keypoints));
  w.u64(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.i32(s.height);
    w.i32(s.width);
    w.bytes(s.rgb);
    w.f64(s.area);
    w.f64(s.kps.scale);
    for (const auto& p : s.kps.points) {
      w.f64(p[0]);
      w.f64(p[1]);
    }
    for (int v : s.kps.visibility) w.i32(v);
  }
  auto write_ints = [&](const std::vector<int>& v) {
    w.u64(v.size());
    for (int x : v) w.i32(x);
  };
  write_ints(ds.train_indices);
  write_ints(ds.val_indices);
  w.u64(ds.flip_pairs.size());
  for (auto [a, b] : ds.flip_pairs) {
    w.i32(a);
    w.i32(b);
  }
  for (double k : ds.k_constants) w.f64(k);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset cache: " + path);
  BinReader r(is);
  if (r.str() != "APDS") throw std::runtime_error("not a dataset cache: " + path);
  if (r.u32() != 1) throw std::runtime_error("unsupported dataset cache version");
  Dataset ds;
  ds.num_keypoints = static_cast<int>(r.u32());
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    KeypointSample s;
    s.height = r.i32();
    s.width = r.i32();
    s.rgb = r.bytes();
    s.area = r.f64();
    s.kps.scale = r.f64();
    s.kps.points.resize(static_cast<std::size_t>(ds.num_keypoints));
    for (auto& p : s.kps.points) {
      p[0] = r.f64();
      p[1] = r.f64();
    }
    s.kps.visibility.resize(static_cast<std::size_t>(ds.num_keypoints));
    for (auto& v : s.kps.visibility) v = r.i32();
    ds.samples.push_back(std::move(s));
  }
  auto read_ints = [&]() {
    std::vector<int> v(r.u64());
    for (auto& x : v) x = r.i32();
    return v;
  };
  ds.train_indices = read_ints();
  ds.val_indices = read_ints();
  ds.flip_pairs.resize(r.u64());
  for (auto& [a, b] : ds.flip_pairs) {
    a = r.i32();
    b = r.i32();
  }
  ds.k_constants.resize(static_cast<std::size_t>(ds.num_keypoints));
  for (auto& k : ds.k_constants) k = r.f64();
  for (auto& s : ds.samples) s.kps.k = ds.k_constants;
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation: random flip + rotation about the crop center
// ---------------------------------------------------------------------------

inline std::uint8_t bilinear_u8(const std::vector<std::uint8_t>& rgb, int H, int W, double y,
                                double x, int c) {
  if (x < 0 || y < 0 || x > W - 1 || y > H - 1) return 0;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int yy, int xx) {
    return static_cast<double>(rgb[(static_cast<std::size_t>(yy) * W + xx) * 3 +
                                   static_cast<std::size_t>(c)]);
  };
  const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                   fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  return static_cast<std::uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
}

// With probability 0.5 a horizontal flip (left/right keypoint channels
// swapped), then a rotation uniform in [-max_rot_deg, max_rot_deg] about the
// crop center. Keypoints rotated out of the crop become invisible.
inline KeypointSample augment(const KeypointSample& in,
                              const std::vector<std::pair<int, int>>& flip_pairs,
                              double max_rot_deg, std::uint64_t seed) {
  Rng rng(seed);
  KeypointSample s = in;
  const int H = s.height, W = s.width;
  if (rng.bernoulli(0.5)) {
    KeypointSample f = s;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          f.rgb[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)] =
              s.rgb[(static_cast<std::size_t>(y) * W + (W - 1 - x)) * 3 +
                    static_cast<std::size_t>(c)];
    for (auto& p : f.kps.points) p[0] = W - 1 - p[0];
    for (auto [a, b] : flip_pairs) {
      std::swap(f.kps.points[static_cast<std::size_t>(a)],
                f.kps.points[static_cast<std::size_t>(b)]);
      std::swap(f.kps.visibility[static_cast<std::size_t>(a)],
                f.kps.visibility[static_cast<std::size_t>(b)]);
    }
    s = std::move(f);
  }
  const double deg = rng.uniform(-max_rot_deg, max_rot_deg);
  if (deg != 0.0) {
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    KeypointSample r = s;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // inverse map: rotate destination by -theta
        const double sx = cs * (x - cx) + sn * (y - cy) + cx;
        const double sy = -sn * (x - cx) + cs * (y - cy) + cy;
        for (int c = 0; c < 3; ++c)
          r.rgb[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)] =
              bilinear_u8(s.rgb, H, W, sy, sx, c);
      }
    for (std::size_t k = 0; k < r.kps.points.size(); ++k) {
      const double px = s.kps.points[k][0], py = s.kps.points[k][1];
      const double nx = cs * (px - cx) - sn * (py - cy) + cx;
      const double ny = sn * (px - cx) + cs * (py - cy) + cy;
      r.kps.points[k] = {nx, ny};
      if (nx < 0 || ny < 0 || nx > W - 1 || ny > H - 1) r.kps.visibility[k] = 0;
    }
    s = std::move(r);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Batches and target heatmaps
// ---------------------------------------------------------------------------

template <typename T>
struct Batch {
  Tensor<T> images;   // {N,3,H,W} in [0,1]
  Tensor<T> targets;  // {N,K,H/4,W/4} gaussian heatmaps
  Tensor<T> vis;      // {N,K}
  std::vector<int> indices;
};

// Per-keypoint 2-D gaussian targets, amplitude 1, sigma in heatmap pixels.
template <typename T>
void render_target(const KeypointSet& kps, int hm_h, int hm_w, double sigma, int stride,
                   T* target /* K*hm_h*hm_w */, T* vis /* K */) {
  const std::size_t K = kps.size();
  for (std::size_t k = 0; k < K; ++k) {
    T* plane = target + k * hm_h * hm_w;
    const bool visible = kps.visibility[k] > 0;
    vis[k] = visible ? T(1) : T(0);
    const double cx = kps.points[k][0] / stride, cy = kps.points[k][1] / stride;
    for (int y = 0; y < hm_h; ++y)
      for (int x = 0; x < hm_w; ++x)
        plane[y * hm_w + x] =
            visible ? static_cast<T>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) /
                                              (2 * sigma * sigma)))
                    : T(0);
  }
}

template <typename T>
Batch<T> assemble_batch(const Dataset& ds, const std::vector<int>& idxs, double sigma = 2.0,
                        bool do_augment = false, double max_rot_deg = 45.0, Rng* aug_rng = nullptr) {
  if (idxs.empty()) throw std::invalid_argument("assemble_batch: empty index list");
  const auto& first = ds.samples[static_cast<std::size_t>(idxs[0])];
  const int H = first.height, W = first.width, K = ds.num_keypoints;
  const int hh = H / 4, hw = W / 4;
  Batch<T> b;
  b.indices = idxs;
  b.images = Tensor<T>(shape4(static_cast<int>(idxs.size()), 3, H, W));
  b.targets = Tensor<T>(shape4(static_cast<int>(idxs.size()), K, hh, hw));
  b.vis = Tensor<T>({static_cast<int>(idxs.size()), K});
  for (std::size_t n = 0; n < idxs.size(); ++n) {
    KeypointSample s = ds.samples[static_cast<std::size_t>(idxs[n])];
    if (do_augment) s = augment(s, ds.flip_pairs, max_rot_deg, aug_rng->raw());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          b.images.data[((n * 3 + static_cast<std::size_t>(c)) * H + y) * W + x] =
              static_cast<T>(s.rgb[(static_cast<std::size_t>(y) * W + x) * 3 +
                                   static_cast<std::size_t>(c)] /
                             255.0);
    render_target(s.kps, hh, hw, sigma, 4,
                  b.targets.data.data() + n * static_cast<std::size_t>(K) * hh * hw,
                  b.vis.data.data() + n * static_cast<std::size_t>(K));
  }
  return b;
}

// Deterministic epoch sampler: Fisher-Yates shuffled index stream. The whole
// state (permutation, cursor, rng) serializes so a resumed run replays the
// exact same batch sequence.
class IndexSampler {
 public:
  IndexSampler(std::vector<int> indices, std::uint64_t seed)
      : indices_(std::move(indices)), rng_(seed) {
    if (indices_.empty()) throw std::invalid_argument("sampler: empty index set");
    reshuffle();
  }

  std::vector<int> next(int n) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (pos_ == indices_.size()) reshuffle();
      out.push_back(indices_[pos_++]);
    }
    return out;
  }

  void save(BinWriter& w) const {
    w.str(rng_.save());
    w.u64(pos_);
    w.u64(indices_.size());
    for (int i : indices_) w.i32(i);
  }
  void restore(BinReader& r) {
    rng_.restore(r.str());
    pos_ = r.u64();
    indices_.resize(r.u64());
    for (auto& i : indices_) i = r.i32();
  }

 private:
  void reshuffle() {
    for (int i = static_cast<int>(indices_.size()) - 1; i > 0; --i) {
      const int j = rng_.uniform_int(0, i);
      std::swap(indices_[static_cast<std::size_t>(i)], indices_[static_cast<std::size_t>(j)]);
    }
    pos_ = 0;
  }

  std::vector<int> indices_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// COCO keypoints ingestion
// ---------------------------------------------------------------------------

struct CocoLoadReport {
  int loaded = 0;
  std::vector<std::string> errors;  // per-sample problems (missing files, ...)
};

struct RawImage {
  int height = 0, width = 0;
  std::vector<std::uint8_t> rgb;
};

// Minimal binary PPM (P6) reader; JPEG/PNG go through OpenCV when enabled.
inline RawImage load_image_file(const std::string& path) {
  {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing image file: " + path);
    std::string magic;
    is >> magic;
    if (magic == "P6") {
      int w, h, maxv;
      is >> w >> h >> maxv;
      is.get();
      if (w < 1 || h < 1 || maxv != 255) throw std::runtime_error("unsupported PPM: " + path);
      RawImage img;
      img.width = w;
      img.height = h;
      img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
      is.read(reinterpret_cast<char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
      if (static_cast<std::size_t>(is.gcount()) != img.rgb.size())
        throw std::runtime_error("truncated PPM: " + path);
      return img;
    }
  }
#ifdef AUTOPOSE_WITH_OPENCV
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot decode image: " + path);
  RawImage img;
  img.height = m.rows;
  img.width = m.cols;
  img.rgb.resize(static_cast<std::size_t>(m.rows) * m.cols * 3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);  // BGR
      const std::size_t o = (static_cast<std::size_t>(y) * m.cols + x) * 3;
      img.rgb[o] = px[2];
      img.rgb[o + 1] = px[1];
      img.rgb[o + 2] = px[0];
    }
  return img;
#else
  throw std::runtime_error("unsupported image format (build with OpenCV for JPEG/PNG): " + path);
#endif
}

// Crop transform: instance box expanded to the output aspect ratio about its
// center, then scaled to out_w x out_h. Pure similarity map, so keypoints
// round-trip exactly through crop_to_image.
struct CropTransform {
  double cx = 0, cy = 0;  // box center in image space
  double scale = 1.0;     // crop pixels per image pixel
  int out_h = 0, out_w = 0;

  std::array<double, 2> image_to_crop(double x, double y) const {
    return {(x - cx) * scale + out_w / 2.0, (y - cy) * scale + out_h / 2.0};
  }
  std::array<double, 2> crop_to_image(double x, double y) const {
    return {(x - out_w / 2.0) / scale + cx, (y - out_h / 2.0) / scale + cy};
  }
};

inline CropTransform make_crop_transform(double bx, double by, double bw, double bh, int out_h,
                                         int out_w) {
  CropTransform t;
  t.cx = bx + bw / 2.0;
  t.cy = by + bh / 2.0;
  t.out_h = out_h;
  t.out_w = out_w;
  const double aspect = static_cast<double>(out_w) / out_h;
  double ew = bw, eh = bh;
  if (ew / eh > aspect)
    eh = ew / aspect;
  else
    ew = eh * aspect;
  t.scale = out_w / ew;
  return t;
}

inline Dataset load_coco_keypoints(const std::string& annotation_file,
                                   const std::string& image_root, const std::string& split,
                                   int out_h, int out_w, CocoLoadReport* report = nullptr) {
  std::ifstream is(annotation_file);
  if (!is) throw std::runtime_error("cannot open annotation file: " + annotation_file);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("malformed COCO annotations: ") + e.what());
  }
  if (!j.contains("images") || !j.contains("annotations"))
    throw std::runtime_error("malformed COCO annotations: missing images/annotations");

  std::map<std::int64_t, std::string> files;
  for (const auto& im : j.at("images"))
    files[im.at("id").get<std::int64_t>()] = im.at("file_name").get<std::string>();

  Dataset ds;
  ds.num_keypoints = 17;
  ds.k_constants = coco_k_constants();
  // COCO left/right pairs
  ds.flip_pairs = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};
  CocoLoadReport local;
  CocoLoadReport& rep = report ? *report : local;

  std::map<std::string, RawImage> cache;
  for (const auto& ann : j.at("annotations")) {
    try {
      if (!ann.contains("keypoints") || !ann.contains("bbox"))
        throw std::runtime_error("annotation missing keypoints/bbox");
      const auto kp = ann.at("keypoints").get<std::vector<double>>();
      if (kp.size() != 17 * 3) throw std::runtime_error("annotation keypoints must have 17 triples");
      const auto box = ann.at("bbox").get<std::vector<double>>();
      if (box.size() != 4) throw std::runtime_error("bbox must have 4 entries");
      const std::int64_t img_id = ann.at("image_id").get<std::int64_t>();
      auto fit = files.find(img_id);
      if (fit == files.end()) throw std::runtime_error("unknown image_id");
      const std::string path = (std::filesystem::path(image_root) / fit->second).string();
      if (!cache.count(path)) cache[path] = load_image_file(path);
      const RawImage& img = cache[path];

      CropTransform t = make_crop_transform(box[0], box[1], box[2], box[3], out_h, out_w);
      KeypointSample s;
      s.height = out_h;
      s.width = out_w;
      s.rgb.resize(static_cast<std::size_t>(out_h) * out_w * 3);
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          auto [sx, sy] = t.crop_to_image(x, y);
          for (int c = 0; c < 3; ++c)
            s.rgb[(static_cast<std::size_t>(y) * out_w + x) * 3 + static_cast<std::size_t>(c)] =
                bilinear_u8(img.rgb, img.height, img.width, sy, sx, c);
        }
      for (int k = 0; k < 17; ++k) {
        auto [x, y] = t.image_to_crop(kp[static_cast<std::size_t>(3 * k)],
                                      kp[static_cast<std::size_t>(3 * k + 1)]);
        s.kps.points.push_back({x, y});
        s.kps.visibility.push_back(static_cast<int>(kp[static_cast<std::size_t>(3 * k + 2)]));
      }
      const double area =
          ann.contains("area") ? ann.at("area").get<double>() : box[2] * box[3];
      s.area = area * t.scale * t.scale;  // crop frame
      s.kps.scale = std::sqrt(std::max(1.0, s.area));
      s.kps.k = ds.k_constants;
      ds.samples.push_back(std::move(s));
      ++rep.loaded;
    } catch (const std::exception& e) {
      rep.errors.emplace_back(e.what());
    }
  }
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
    (split == "val" ? ds.val_indices : ds.train_indices).push_back(i);
  return ds;
}

}  // namespace autopose
