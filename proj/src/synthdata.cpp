#include "dsva/synthdata.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dsva/errors.hpp"
#include "dsva/rng.hpp"

namespace dsva::synth {

namespace {

constexpr std::uint64_t kTextEmbedSeed = 0x7E57E37ull;
constexpr std::uint64_t kVisMapSeed = 0x715CA1ull;
constexpr std::uint64_t kMixSeed = 0x3417ull;

constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.90, 0.10, 0.10},  // red
    {0.10, 0.80, 0.15},  // green
    {0.15, 0.20, 0.90},  // blue
    {0.90, 0.85, 0.10},  // yellow
    {0.85, 0.15, 0.85},  // magenta
    {0.10, 0.80, 0.85},  // cyan
    {0.95, 0.55, 0.10},  // orange
    {0.92, 0.92, 0.92},  // white
}};

// area-equalizing radius multiplier per shape kind
constexpr std::array<double, 3> kShapeScale = {1.0, 0.886, 1.45};

const std::vector<std::string> kTokens = {
    "red",  "green",  "blue",     "yellow", "magenta", "cyan", "orange",
    "white", "circle", "square",  "triangle", "small",  "large", "static",
    "fast"};

constexpr std::uint16_t kShapeTok0 = 8;   // circle
constexpr std::uint16_t kSizeTok0 = 11;   // small
constexpr std::uint16_t kMotionTok0 = 13; // static

bool point_in_shape(ShapeKind kind, double px, double py, double cx,
                    double cy, double r) {
  switch (kind) {
    case ShapeKind::circle:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    case ShapeKind::square:
      return std::abs(px - cx) <= r && std::abs(py - cy) <= r;
    case ShapeKind::triangle: {
      // upright triangle inscribed in radius r
      const double v0x = cx, v0y = cy - r;
      const double v1x = cx - 0.866 * r, v1y = cy + 0.5 * r;
      const double v2x = cx + 0.866 * r, v2y = cy + 0.5 * r;
      auto half = [px, py](double ax, double ay, double bx, double by) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      };
      const double d0 = half(v0x, v0y, v1x, v1y);
      const double d1 = half(v1x, v1y, v2x, v2y);
      const double d2 = half(v2x, v2y, v0x, v0y);
      return (d0 <= 0 && d1 <= 0 && d2 <= 0) ||
             (d0 >= 0 && d1 >= 0 && d2 >= 0);
    }
  }
  return false;
}

void paint_shape(std::vector<double>& img, std::size_t s, ShapeKind kind,
                 double cx, double cy, double r,
                 const std::array<double, 3>& col, double alpha) {
  const double lo_y = std::max(0.0, cy - 1.6 * r),
               hi_y = std::min(static_cast<double>(s - 1), cy + 1.6 * r);
  const double lo_x = std::max(0.0, cx - 1.6 * r),
               hi_x = std::min(static_cast<double>(s - 1), cx + 1.6 * r);
  for (std::size_t y = static_cast<std::size_t>(lo_y);
       y <= static_cast<std::size_t>(hi_y); ++y)
    for (std::size_t x = static_cast<std::size_t>(lo_x);
         x <= static_cast<std::size_t>(hi_x); ++x)
      if (point_in_shape(kind, static_cast<double>(x), static_cast<double>(y),
                         cx, cy, r))
        for (int c = 0; c < 3; ++c) {
          double& px = img[(y * s + x) * 3 + c];
          px = (1.0 - alpha) * px + alpha * col[c];
        }
}

std::vector<std::uint16_t> label_for(const SceneObject& o, bool motion_kind) {
  if (motion_kind)
    return {static_cast<std::uint16_t>(kMotionTok0 +
                                       static_cast<std::uint16_t>(o.motion)),
            static_cast<std::uint16_t>(kShapeTok0 +
                                       static_cast<std::uint16_t>(o.kind))};
  return {static_cast<std::uint16_t>(o.color),
          static_cast<std::uint16_t>(kSizeTok0 +
                                     static_cast<std::uint16_t>(o.size)),
          static_cast<std::uint16_t>(kShapeTok0 +
                                     static_cast<std::uint16_t>(o.kind))};
}

bool label_matches(const SceneObject& o, const SceneObject& target,
                   bool motion_kind) {
  if (motion_kind) return o.motion == target.motion && o.kind == target.kind;
  return o.color == target.color && o.size == target.size &&
         o.kind == target.kind;
}

}  // namespace

namespace vocab {
const std::vector<std::string>& tokens() { return kTokens; }
std::size_t size() { return kTokens.size(); }
std::uint16_t id(std::string_view token) {
  for (std::size_t i = 0; i < kTokens.size(); ++i)
    if (kTokens[i] == token) return static_cast<std::uint16_t>(i);
  throw VocabError("unknown token '" + std::string(token) + "'");
}
const std::string& token(std::uint16_t id) {
  if (id >= kTokens.size())
    throw VocabError("token id " + std::to_string(id) + " out of range");
  return kTokens[id];
}
}  // namespace vocab

void GenerationConfig::validate() const {
  if (image_size < 32 || image_size % 8 != 0)
    throw ContractError("generation: image side must be >= 32 and divisible "
                        "by the patch size");
  if (min_objects < 1 || max_objects > 4 || min_objects > max_objects)
    throw ContractError("generation: object count must satisfy 1 <= min <= "
                        "max <= 4");
  if (small_lo <= 0 || small_hi < small_lo || large_lo < small_hi ||
      large_hi < large_lo)
    throw ContractError("generation: size ranges must be ordered");
}

Tensor Scene::image_tensor() const {
  std::vector<double> d(image.begin(), image.end());
  return Tensor::from_data({image_size, image_size, 3}, std::move(d));
}

Tensor Scene::label_mask_tensor() const {
  std::vector<double> d(label_mask.begin(), label_mask.end());
  return Tensor::from_data({image_size, image_size}, std::move(d));
}

Tensor Scene::gt_mask_tensor() const {
  const auto& m = gt_masks.at(target_index);
  std::vector<double> d(m.begin(), m.end());
  return Tensor::from_data({image_size, image_size}, std::move(d));
}

Scene generate_scene(std::uint64_t seed, const GenerationConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xA11CE5ull));
  const std::size_t s = cfg.image_size;
  const double scale = static_cast<double>(s) / 64.0;

  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t n =
        cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    std::vector<SceneObject> objects;
    for (std::size_t i = 0; i < n; ++i) {
      SceneObject o;
      o.kind = static_cast<ShapeKind>(rng.below(3));
      o.color = static_cast<std::uint8_t>(rng.below(kPalette.size()));
      o.size = static_cast<SizeClass>(rng.below(2));
      o.motion = static_cast<MotionTag>(rng.below(2));
      double r = o.size == SizeClass::small
                     ? rng.uniform(cfg.small_lo, cfg.small_hi)
                     : rng.uniform(cfg.large_lo, cfg.large_hi);
      r *= kShapeScale[static_cast<std::size_t>(o.kind)] * scale;
      bool placed = false;
      for (int t = 0; t < 24 && !placed; ++t) {
        const double cx = rng.uniform(r + 1.0, static_cast<double>(s) - r - 1.0);
        const double cy = rng.uniform(r + 1.0, static_cast<double>(s) - r - 1.0);
        placed = true;
        for (const SceneObject& p : objects) {
          const double dmin = 0.95 * (r + p.radius);
          if ((cx - p.cx) * (cx - p.cx) + (cy - p.cy) * (cy - p.cy) <
              dmin * dmin) {
            placed = false;
            break;
          }
        }
        if (placed) {
          o.radius = static_cast<float>(r);
          o.cx = static_cast<float>(cx);
          o.cy = static_cast<float>(cy);
        }
      }
      if (!placed) break;
      objects.push_back(o);
    }
    if (objects.size() != n) continue;

    // render back-to-front; later objects occlude earlier ones
    const double bg = rng.uniform(0.10, 0.20);
    std::vector<double> img(s * s * 3, bg);
    std::vector<std::int16_t> owner(s * s, -1);
    for (std::size_t i = 0; i < n; ++i) {
      const SceneObject& o = objects[i];
      const auto& col = kPalette[o.color];
      if (o.motion == MotionTag::fast) {
        paint_shape(img, s, o.kind, o.cx - 8.0 * scale, o.cy, o.radius, col,
                    0.25);
        paint_shape(img, s, o.kind, o.cx - 4.0 * scale, o.cy, o.radius, col,
                    0.5);
      }
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          if (point_in_shape(o.kind, static_cast<double>(x),
                             static_cast<double>(y), o.cx, o.cy, o.radius)) {
            for (int c = 0; c < 3; ++c) img[(y * s + x) * 3 + c] = col[c];
            owner[y * s + x] = static_cast<std::int16_t>(i);
          }
    }

    std::vector<std::vector<std::uint8_t>> gt(n,
                                              std::vector<std::uint8_t>(s * s));
    std::vector<std::size_t> visible(n, 0);
    for (std::size_t p = 0; p < s * s; ++p)
      if (owner[p] >= 0) {
        gt[static_cast<std::size_t>(owner[p])][p] = 1;
        ++visible[static_cast<std::size_t>(owner[p])];
      }
    if (std::any_of(visible.begin(), visible.end(),
                    [](std::size_t v) { return v == 0; }))
      continue;

    const bool motion_kind = rng.uniform() < cfg.motion_label_prob;
    const std::size_t target = rng.below(n);
    std::size_t matches = 0;
    for (const SceneObject& o : objects)
      if (label_matches(o, objects[target], motion_kind)) ++matches;
    if (matches != 1 || visible[target] < 16) continue;

    Scene scene;
    scene.image_size = s;
    scene.image.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
      scene.image[i] = static_cast<float>(img[i]);
    scene.objects = std::move(objects);
    scene.gt_masks = std::move(gt);
    scene.referring_label = label_for(scene.objects[target], motion_kind);
    scene.label_mask = scene.gt_masks[target];
    scene.target_index = static_cast<std::uint32_t>(target);
    return scene;
  }
  throw GenerationError("scene generation failed after 64 attempts (seed " +
                        std::to_string(seed) + ")");
}

std::vector<float> text_factor(const std::vector<std::uint16_t>& label,
                               std::size_t d) {
  if (label.empty()) throw ContractError("text_factor: empty label");
  std::vector<double> acc(d, 0.0);
  for (std::uint16_t tok : label) {
    if (tok >= vocab::size())
      throw VocabError("token id " + std::to_string(tok) + " out of range");
    Rng rng(mix_seed(kTextEmbedSeed, tok));
    for (std::size_t i = 0; i < d; ++i) acc[i] += rng.normal();
  }
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i)
    out[i] = static_cast<float>(acc[i] / static_cast<double>(label.size()));
  return out;
}

std::vector<float> visual_factor(const Scene& scene, std::size_t d) {
  const std::size_t s = scene.image_size;
  const std::size_t block = s / 4;
  // 4x4 mean-color grid, centered and rescaled
  std::array<double, 48> grid{};
  for (std::size_t gy = 0; gy < 4; ++gy)
    for (std::size_t gx = 0; gx < 4; ++gx) {
      double m[3] = {0, 0, 0};
      for (std::size_t y = 0; y < block; ++y)
        for (std::size_t x = 0; x < block; ++x)
          for (int c = 0; c < 3; ++c)
            m[c] += scene.image[((gy * block + y) * s + gx * block + x) * 3 +
                                static_cast<std::size_t>(c)];
      for (int c = 0; c < 3; ++c)
        grid[(gy * 4 + gx) * 3 + static_cast<std::size_t>(c)] =
            (m[c] / static_cast<double>(block * block) - 0.5) * 2.0;
    }
  // fixed Gaussian lift to d dims
  Rng rng(mix_seed(kVisMapSeed, d));
  std::vector<float> out(d);
  const double inv = 1.0 / std::sqrt(48.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 48; ++j) acc += rng.normal() * inv * grid[j];
    out[i] = static_cast<float>(acc);
  }
  return out;
}

MixingMatrix make_mixing_matrix(std::uint32_t id, std::size_t d) {
  const std::size_t n = 2 * d;
  Rng rng(mix_seed(kMixSeed, id));
  MixingMatrix m;
  m.id = id;
  m.dim = static_cast<std::uint32_t>(n);
  const double inv = 1.0 / std::sqrt(static_cast<double>(n));
  for (int tries = 0; tries < 64; ++tries) {
    m.w.resize(n * n);
    for (auto& v : m.w) v = static_cast<float>(rng.normal() * inv);
    if (condition_number(m) <= 100.0) return m;
  }
  throw GenerationError("mixing matrix: condition bound not met in 64 draws");
}

double condition_number(const MixingMatrix& m) {
  Eigen::MatrixXd w(m.dim, m.dim);
  for (std::uint32_t r = 0; r < m.dim; ++r)
    for (std::uint32_t c = 0; c < m.dim; ++c)
      w(r, c) = static_cast<double>(m.w[r * m.dim + c]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const auto& sv = svd.singularValues();
  return sv(0) / sv(sv.size() - 1);
}

FusedHiddenState synthesize_hidden_state(const Scene& scene,
                                         const MixingMatrix& mixing,
                                         std::uint64_t seed,
                                         double sigma_noise, std::size_t d) {
  if (sigma_noise < 0.0)
    throw ContractError("synthesize_hidden_state: sigma_noise must be >= 0");
  if (mixing.dim != 2 * d)
    throw ShapeError("synthesize_hidden_state: mixing dim " +
                     std::to_string(mixing.dim) + " != 2*" + std::to_string(d));
  FusedHiddenState st;
  st.mixing_id = mixing.id;
  st.e_text = text_factor(scene.referring_label, d);
  st.e_vis = visual_factor(scene, d);
  std::vector<double> z(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = static_cast<double>(st.e_text[i]);
    z[d + i] = static_cast<double>(st.e_vis[i]);
  }
  Rng rng(mix_seed(seed, 0x0F05EDull));
  st.x_fused.resize(2 * d);
  for (std::size_t r = 0; r < 2 * d; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 2 * d; ++c)
      acc += static_cast<double>(mixing.w[r * 2 * d + c]) * z[c];
    if (sigma_noise > 0.0) {
      // per-component truncation at 3 sigma, resampled
      double eps = rng.normal() * sigma_noise;
      while (std::abs(eps) > 3.0 * sigma_noise)
        eps = rng.normal() * sigma_noise;
      acc += eps;
    }
    st.x_fused[r] = static_cast<float>(acc);
  }
  return st;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t scene_count,
                         const GenerationConfig& cfg, std::size_t d,
                         double sigma_noise) {
  cfg.validate();
  Dataset ds;
  ds.image_size = static_cast<std::uint32_t>(cfg.image_size);
  ds.factor_dim = static_cast<std::uint32_t>(d);
  ds.mixing = make_mixing_matrix(
      static_cast<std::uint32_t>(mix_seed(seed, fnv1a("mixing")) & 0xFFFFFFFFu),
      d);
  ds.scenes.reserve(scene_count);
  ds.states.reserve(scene_count);
  for (std::size_t i = 0; i < scene_count; ++i) {
    ds.scenes.push_back(generate_scene(mix_seed(seed, 1000 + i), cfg));
    ds.states.push_back(synthesize_hidden_state(
        ds.scenes.back(), ds.mixing, mix_seed(seed, 0x5000000ull + i),
        sigma_noise, d));
  }
  return ds;
}

// --- binary container -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'S', 'V', 'A'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    path_ = path;
  }
  template <typename T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  void put_array(const std::vector<T>& v) {
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
  }

private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path + "' for reading");
  }
  std::size_t offset() const { return offset_; }
  template <typename T>
  T get(const char* what) {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != sizeof(T))
      throw FormatError(std::string("truncated while reading ") + what,
                        offset_);
    offset_ += sizeof(T);
    return v;
  }
  template <typename T>
  void get_array(std::vector<T>& v, std::size_t n, const char* what) {
    v.resize(n);
    in_.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(n * sizeof(T)));
    if (static_cast<std::size_t>(in_.gcount()) != n * sizeof(T))
      throw FormatError(std::string("truncated while reading ") + what,
                        offset_);
    offset_ += n * sizeof(T);
  }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

private:
  std::ifstream in_;
  std::size_t offset_ = 0;
};

void check_mask_bytes(const std::vector<std::uint8_t>& m, std::size_t offset) {
  for (std::uint8_t b : m)
    if (b > 1) throw FormatError("mask byte outside {0,1}", offset);
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  Writer w(path);
  w.put(kMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(ds.scenes.size()));
  w.put(ds.image_size);
  w.put(ds.factor_dim);
  w.put(ds.mixing.id);
  w.put_array(ds.mixing.w);
  const std::size_t px = static_cast<std::size_t>(ds.image_size) * ds.image_size;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const Scene& sc = ds.scenes[i];
    const FusedHiddenState& st = ds.states[i];
    w.put(static_cast<std::uint32_t>(sc.objects.size()));
    for (const SceneObject& o : sc.objects) {
      w.put(static_cast<std::uint8_t>(o.kind));
      w.put(o.color);
      w.put(static_cast<std::uint8_t>(o.size));
      w.put(static_cast<std::uint8_t>(o.motion));
      w.put(o.radius);
      w.put(o.cx);
      w.put(o.cy);
    }
    w.put_array(sc.image);
    for (const auto& m : sc.gt_masks) w.put_array(m);
    w.put_array(sc.label_mask);
    w.put(sc.target_index);
    w.put(static_cast<std::uint16_t>(sc.referring_label.size()));
    w.put_array(sc.referring_label);
    w.put_array(st.x_fused);
    w.put_array(st.e_text);
    w.put_array(st.e_vis);
    (void)px;
  }
  w.close();
}

Dataset read_dataset(const std::string& path) {
  Reader r(path);
  char magic[4];
  {
    std::vector<char> m;
    r.get_array(m, 4, "magic");
    std::copy(m.begin(), m.end(), magic);
  }
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic, expected 'DSVA'", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion)
    throw FormatError("unsupported version " + std::to_string(version), 4);
  Dataset ds;
  const auto scene_count = r.get<std::uint32_t>("scene count");
  ds.image_size = r.get<std::uint32_t>("image size");
  ds.factor_dim = r.get<std::uint32_t>("factor dim");
  if (scene_count > 1000000)
    throw FormatError("implausible scene count", r.offset() - 12);
  if (ds.image_size < 32 || ds.image_size > 4096)
    throw FormatError("implausible image size", r.offset() - 8);
  if (ds.factor_dim < 1 || ds.factor_dim > 4096)
    throw FormatError("implausible factor dim", r.offset() - 4);
  ds.mixing.id = r.get<std::uint32_t>("mixing id");
  ds.mixing.dim = 2 * ds.factor_dim;
  r.get_array(ds.mixing.w,
              static_cast<std::size_t>(ds.mixing.dim) * ds.mixing.dim,
              "mixing matrix");
  const std::size_t px = static_cast<std::size_t>(ds.image_size) * ds.image_size;
  for (std::uint32_t i = 0; i < scene_count; ++i) {
    Scene sc;
    sc.image_size = ds.image_size;
    const std::size_t count_off = r.offset();
    const auto object_count = r.get<std::uint32_t>("object count");
    if (object_count < 1 || object_count > 16)
      throw FormatError("implausible object count", count_off);
    sc.objects.resize(object_count);
    for (auto& o : sc.objects) {
      const std::size_t attr_off = r.offset();
      const auto kind = r.get<std::uint8_t>("shape kind");
      if (kind > 2) throw FormatError("bad shape kind", attr_off);
      o.kind = static_cast<ShapeKind>(kind);
      o.color = r.get<std::uint8_t>("color id");
      if (o.color >= kPalette.size())
        throw FormatError("bad color id", attr_off + 1);
      const auto size = r.get<std::uint8_t>("size class");
      if (size > 1) throw FormatError("bad size class", attr_off + 2);
      o.size = static_cast<SizeClass>(size);
      const auto motion = r.get<std::uint8_t>("motion tag");
      if (motion > 1) throw FormatError("bad motion tag", attr_off + 3);
      o.motion = static_cast<MotionTag>(motion);
      o.radius = r.get<float>("radius");
      o.cx = r.get<float>("cx");
      o.cy = r.get<float>("cy");
    }
    r.get_array(sc.image, px * 3, "image");
    sc.gt_masks.resize(object_count);
    for (auto& m : sc.gt_masks) {
      const std::size_t off = r.offset();
      r.get_array(m, px, "gt mask");
      check_mask_bytes(m, off);
    }
    {
      const std::size_t off = r.offset();
      r.get_array(sc.label_mask, px, "label mask");
      check_mask_bytes(sc.label_mask, off);
    }
    const std::size_t tgt_off = r.offset();
    sc.target_index = r.get<std::uint32_t>("target index");
    if (sc.target_index >= object_count)
      throw FormatError("target index out of range", tgt_off);
    const std::size_t len_off = r.offset();
    const auto label_len = r.get<std::uint16_t>("label length");
    if (label_len < 1 || label_len > 64)
      throw FormatError("implausible label length", len_off);
    r.get_array(sc.referring_label, label_len, "label tokens");
    for (std::uint16_t t : sc.referring_label)
      if (t >= vocab::size())
        throw FormatError("label token out of vocabulary", len_off);
    FusedHiddenState st;
    st.mixing_id = ds.mixing.id;
    r.get_array(st.x_fused, 2 * ds.factor_dim, "fused state");
    r.get_array(st.e_text, ds.factor_dim, "text factor");
    r.get_array(st.e_vis, ds.factor_dim, "visual factor");
    ds.scenes.push_back(std::move(sc));
    ds.states.push_back(std::move(st));
  }
  if (!r.at_eof())
    throw FormatError("trailing bytes after last scene", r.offset());
  return ds;
}

}  // namespace dsva::synth
