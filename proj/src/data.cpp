#include "cmwnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "cmwnet/errors.hpp"
#include "cmwnet/image_io.hpp"

namespace cmwnet {

void RGBDTriplet::validate() const {
  if (rgb.rank() != 3 || rgb.channels() != 3) {
    throw ShapeError("triplet " + id + ": RGB must be 3xHxW, got " + shape_string(rgb.shape()));
  }
  if (depth.rank() != 3 || depth.channels() != 1 || depth.height() != rgb.height() ||
      depth.width() != rgb.width()) {
    throw ShapeError("triplet " + id + ": depth " + shape_string(depth.shape()) +
                     " does not match RGB " + shape_string(rgb.shape()));
  }
  if (!has_gt()) return;
  if (gt.rank() != 3 || gt.channels() != 1 || gt.height() != rgb.height() ||
      gt.width() != rgb.width()) {
    throw ShapeError("triplet " + id + ": GT " + shape_string(gt.shape()) +
                     " does not match RGB " + shape_string(rgb.shape()));
  }
  for (float v : gt.values()) {
    if (v != 0.0f && v != 1.0f) throw DataError("triplet " + id + ": GT is not binary");
  }
}

namespace data {

std::filesystem::path DatasetManifest::rgb_path(const std::string& id) const {
  return root / rgb_dir / (id + ".png");
}
std::filesystem::path DatasetManifest::depth_path(const std::string& id) const {
  return root / depth_dir / (id + ".png");
}
std::filesystem::path DatasetManifest::gt_path(const std::string& id) const {
  return root / gt_dir / (id + ".png");
}

void DatasetManifest::validate() const {
  if (items.empty()) throw DataError("dataset at " + root.string() + " has no items");
  std::vector<std::string> missing;
  for (const auto& id : items) {
    if (!std::filesystem::exists(rgb_path(id))) missing.push_back(rgb_path(id).string());
    if (!std::filesystem::exists(depth_path(id))) missing.push_back(depth_path(id).string());
    if (require_gt && !std::filesystem::exists(gt_path(id))) missing.push_back(gt_path(id).string());
  }
  if (!missing.empty()) {
    std::string msg = "dataset incomplete, missing:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " (+" + std::to_string(missing.size() - 10) + " more)";
    throw DataError(msg);
  }
}

DatasetManifest manifest_from_json(const std::filesystem::path& root, const json& j) {
  DatasetManifest m;
  m.root = root;
  for (const auto& [key, value] : j.items()) {
    if (key == "rgb_dir") {
      m.rgb_dir = value.get<std::string>();
    } else if (key == "depth_dir") {
      m.depth_dir = value.get<std::string>();
    } else if (key == "gt_dir") {
      m.gt_dir = value.get<std::string>();
    } else if (key == "items") {
      m.items = value.get<std::vector<std::string>>();
    } else if (key == "invert_depth") {
      m.invert_depth = value.get<bool>();
    } else if (key == "subtract_mean") {
      m.subtract_mean = value.get<bool>();
    } else {
      throw ConfigError("unknown dataset manifest key '" + key + "'");
    }
  }
  return m;
}

DatasetManifest scan(const std::filesystem::path& root, bool require_gt) {
  if (!std::filesystem::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  DatasetManifest m;
  const auto override_path = root / "manifest.json";
  if (std::filesystem::exists(override_path)) {
    std::ifstream in(override_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("cannot parse " + override_path.string() + ": " + e.what());
    }
    m = manifest_from_json(root, j);
  }
  m.root = root;
  m.require_gt = require_gt;
  if (m.items.empty()) {
    const auto dir = root / m.rgb_dir;
    if (!std::filesystem::is_directory(dir)) throw DataError("missing directory " + dir.string());
    std::set<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") ids.insert(e.path().stem().string());
    }
    m.items.assign(ids.begin(), ids.end());
  }
  m.validate();
  return m;
}

void normalize_depth(Tensor<float>& depth, bool invert) {
  if (depth.empty()) return;
  const auto [lo, hi] = std::minmax_element(depth.values().begin(), depth.values().end());
  const float min = *lo, range = *hi - *lo;
  for (float& v : depth.values()) {
    if (range > 0) {
      v = (v - min) / range;
      if (invert) v = 1.0f - v;
    } else {
      v = 0.0f;
    }
  }
}

RGBDTriplet load_item(const DatasetManifest& m, const std::string& id) {
  RGBDTriplet t;
  t.id = id;
  t.rgb = io::to_tensor(io::read_png(m.rgb_path(id), 3));
  t.depth = io::to_tensor(io::read_png(m.depth_path(id), 1));
  normalize_depth(t.depth, m.invert_depth);
  const auto gt_file = m.gt_path(id);
  if (m.require_gt || std::filesystem::exists(gt_file)) {
    const io::PngImage g = io::read_png(gt_file, 1);
    t.gt = Tensor<float>({1, g.height, g.width});
    const double cut = g.max_value() * (128.0 / 255.0);
    for (std::size_t i = 0; i < g.samples.size(); ++i) t.gt[i] = g.samples[i] >= cut ? 1.0f : 0.0f;
  }
  if (m.subtract_mean) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = t.rgb.channel(c);
      for (std::size_t i = 0; i < t.rgb.plane(); ++i) p[i] -= kImageNetMean[c];
    }
  }
  try {
    t.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("size mismatch within triplet: ") + e.what());
  }
  return t;
}

std::vector<RGBDTriplet> load(const DatasetManifest& m) {
  m.validate();
  std::vector<RGBDTriplet> out;
  out.reserve(m.items.size());
  for (const auto& id : m.items) out.push_back(load_item(m, id));
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width) {
  const std::size_t c = t.channels(), h = t.height(), w = t.width();
  if (h == height && w == width) return t;
  Tensor<float> out({c, height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  auto coord = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(pos);
    i1 = std::min(i0 + 1, n - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord((y + 0.5) * sy - 0.5, h, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord((x + 0.5) * sx - 0.5, w, x0, x1, fx);
      for (std::size_t k = 0; k < c; ++k) {
        const double top = t.at(k, y0, x0) * (1 - fx) + t.at(k, y0, x1) * fx;
        const double bottom = t.at(k, y1, x0) * (1 - fx) + t.at(k, y1, x1) * fx;
        out.at(k, y, x) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& t, std::size_t height, std::size_t width) {
  const std::size_t c = t.channels(), h = t.height(), w = t.width();
  Tensor<float> out({c, height, width});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t src_y = y * h / height;
      for (std::size_t x = 0; x < width; ++x) out.at(k, y, x) = t.at(k, src_y, x * w / width);
    }
  }
  return out;
}

RGBDTriplet resize_triplet(const RGBDTriplet& t, std::size_t size) {
  if (size == 0 || size % 16 != 0) {
    throw ConfigError("resize target " + std::to_string(size) + " is not a positive multiple of 16");
  }
  t.validate();
  RGBDTriplet out;
  out.id = t.id;
  out.rgb = resize_bilinear(t.rgb, size, size);
  out.depth = resize_bilinear(t.depth, size, size);
  if (t.has_gt()) out.gt = resize_nearest(t.gt, size, size);
  return out;
}

Tensor<float> rot90(const Tensor<float>& t) {
  const std::size_t c = t.channels(), h = t.height(), w = t.width();
  Tensor<float> out({c, w, h});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < w; ++y) {
      for (std::size_t x = 0; x < h; ++x) out.at(k, y, x) = t.at(k, x, w - 1 - y);
    }
  }
  return out;
}

Tensor<float> mirror(const Tensor<float>& t) {
  const std::size_t c = t.channels(), h = t.height(), w = t.width();
  Tensor<float> out({c, h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(k, y, x) = t.at(k, y, w - 1 - x);
    }
  }
  return out;
}

namespace {

template <typename Fn>
RGBDTriplet transform(const RGBDTriplet& t, const std::string& suffix, Fn fn) {
  RGBDTriplet out;
  out.id = t.id + suffix;
  out.rgb = fn(t.rgb);
  out.depth = fn(t.depth);
  if (t.has_gt()) out.gt = fn(t.gt);
  return out;
}

}  // namespace

std::array<RGBDTriplet, 5> augment(const RGBDTriplet& t) {
  t.validate();
  if (t.height() != t.width()) {
    throw ShapeError("augment needs square triplets, " + t.id + " is " + shape_string(t.rgb.shape()));
  }
  auto r2 = [](const Tensor<float>& x) { return rot90(rot90(x)); };
  auto r3 = [](const Tensor<float>& x) { return rot90(rot90(rot90(x))); };
  return {t, transform(t, "_r90", rot90), transform(t, "_r180", r2), transform(t, "_r270", r3),
          transform(t, "_m", mirror)};
}

std::vector<RGBDTriplet> augment_all(const std::vector<RGBDTriplet>& items) {
  std::vector<RGBDTriplet> out;
  out.reserve(items.size() * 5);
  for (const auto& t : items) {
    for (auto& a : augment(t)) out.push_back(std::move(a));
  }
  return out;
}

void SynthSpec::validate() const {
  if (count < 1) throw ConfigError("synthetic count must be >= 1");
  if (resolution == 0 || resolution % 16 != 0) {
    throw ConfigError("synthetic resolution " + std::to_string(resolution) +
                      " is not a positive multiple of 16");
  }
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("invalid shapes-per-image range");
  if (!(min_contrast > 0) || !(max_contrast >= min_contrast) || !(max_contrast < 1)) {
    throw ConfigError("depth contrast range must satisfy 0 < min <= max < 1");
  }
}

json to_json(const SynthSpec& s) {
  return json{{"seed", s.seed},
              {"count", s.count},
              {"resolution", s.resolution},
              {"min_shapes", s.min_shapes},
              {"max_shapes", s.max_shapes},
              {"min_contrast", s.min_contrast},
              {"max_contrast", s.max_contrast}};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(engine_() % (hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

struct Shape {
  bool ellipse = true;
  double cx = 0, cy = 0;
  double rx = 1, ry = 1, angle = 0;
  std::vector<std::pair<double, double>> vertices;  // counter-clockwise

  bool contains(double x, double y) const {
    if (ellipse) {
      const double dx = x - cx, dy = y - cy;
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
      return u * u + v * v <= 1.0;
    }
    const std::size_t n = vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto [x0, y0] = vertices[i];
      const auto [x1, y1] = vertices[(i + 1) % n];
      if ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) < 0) return false;
    }
    return true;
  }
};

Shape random_shape(Rng& rng, double res) {
  Shape s;
  s.ellipse = rng.uniform() < 0.5;
  s.cx = rng.uniform(0.25, 0.75) * res;
  s.cy = rng.uniform(0.25, 0.75) * res;
  s.rx = rng.uniform(0.12, 0.3) * res;
  s.ry = rng.uniform(0.12, 0.3) * res;
  s.angle = rng.uniform(0.0, M_PI);
  if (!s.ellipse) {
    // points on an ellipse in angular order form a convex polygon
    const std::size_t n = rng.index(3, 6);
    std::vector<double> angles(n);
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * M_PI);
    std::sort(angles.begin(), angles.end());
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    for (double a : angles) {
      const double u = s.rx * std::cos(a), v = s.ry * std::sin(a);
      s.vertices.emplace_back(s.cx + c * u - sn * v, s.cy + sn * u + c * v);
    }
  }
  return s;
}

}  // namespace

std::vector<RGBDTriplet> synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t r = spec.resolution, n = r * r;
  std::vector<RGBDTriplet> out;
  out.reserve(spec.count);
  for (std::size_t item = 0; item < spec.count; ++item) {
    Rng rng(splitmix64(spec.seed) ^ splitmix64(item + 1));
    RGBDTriplet t;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", item);
    t.id = id;
    for (;;) {
      t.rgb = Tensor<float>({3, r, r});
      t.depth = Tensor<float>({1, r, r});
      t.gt = Tensor<float>({1, r, r});
      double bg_color[3];
      for (double& c : bg_color) c = rng.uniform(0.05, 0.35);
      const double bg_depth = rng.uniform(0.0, 1.0 - spec.max_contrast) * 0.5;
      for (std::size_t p = 0; p < n; ++p) {
        for (int c = 0; c < 3; ++c) {
          t.rgb[c * n + p] = static_cast<float>(bg_color[c] + rng.uniform(-0.03, 0.03));
        }
        t.depth[p] = static_cast<float>(bg_depth);
      }
      const std::size_t shapes = rng.index(spec.min_shapes, spec.max_shapes);
      for (std::size_t k = 0; k < shapes; ++k) {
        const Shape s = random_shape(rng, static_cast<double>(r));
        double color[3];
        for (double& c : color) c = rng.uniform(0.65, 1.0);
        const double d = bg_depth + rng.uniform(spec.min_contrast, spec.max_contrast);
        for (std::size_t y = 0; y < r; ++y) {
          for (std::size_t x = 0; x < r; ++x) {
            if (!s.contains(x + 0.5, y + 0.5)) continue;
            const std::size_t p = y * r + x;
            for (int c = 0; c < 3; ++c) t.rgb[c * n + p] = static_cast<float>(color[c]);
            t.depth[p] = static_cast<float>(d);
            t.gt[p] = 1.0f;
          }
        }
      }
      std::size_t fg = 0;
      for (float v : t.gt.values()) fg += v > 0.5f;
      if (fg > 0 && fg < n) break;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& root,
                                                 const std::vector<RGBDTriplet>& items) {
  DatasetManifest m;
  m.root = root;
  for (const auto& dir : {m.rgb_dir, m.depth_dir, m.gt_dir}) std::filesystem::create_directories(root / dir);
  std::vector<std::filesystem::path> written;
  for (const auto& t : items) {
    t.validate();
    io::write_png(m.rgb_path(t.id), io::from_tensor(t.rgb));
    io::write_png(m.depth_path(t.id), io::from_tensor(t.depth));
    written.push_back(m.rgb_path(t.id));
    written.push_back(m.depth_path(t.id));
    if (t.has_gt()) {
      io::write_png(m.gt_path(t.id), io::from_tensor(t.gt));
      written.push_back(m.gt_path(t.id));
    }
  }
  return written;
}

}  // namespace data
}  // namespace cmwnet
