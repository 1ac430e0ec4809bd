#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva::synth {

// Closed vocabulary: 8 colors, 3 shapes, 2 size classes, 2 motion tags.
namespace vocab {
const std::vector<std::string>& tokens();
std::size_t size();
std::uint16_t id(std::string_view token);          // VocabError if unknown
const std::string& token(std::uint16_t id);        // VocabError if out of range
}  // namespace vocab

enum class ShapeKind : std::uint8_t { circle = 0, square = 1, triangle = 2 };
enum class SizeClass : std::uint8_t { small = 0, large = 1 };
enum class MotionTag : std::uint8_t { still = 0, fast = 1 };

struct SceneObject {
  ShapeKind kind = ShapeKind::circle;
  std::uint8_t color = 0;  // palette index
  SizeClass size = SizeClass::small;
  MotionTag motion = MotionTag::still;
  float radius = 0.0f;  // shape-specific scale, area-equalized across kinds
  float cx = 0.0f, cy = 0.0f;
};

struct GenerationConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double small_lo = 8.0, small_hi = 10.5;
  double large_lo = 13.5, large_hi = 17.0;
  double motion_label_prob = 0.25;  // chance of a (motion, shape) label
  void validate() const;            // ContractError on nonsense
};

// One synthetic frame: objects rendered back-to-front, per-object visibility
// masks, a referring expression matching exactly one object, and its mask.
struct Scene {
  std::size_t image_size = 0;
  std::vector<float> image;  // H*W*3, row-major, values in [0,1]
  std::vector<SceneObject> objects;
  std::vector<std::vector<std::uint8_t>> gt_masks;  // visible pixels, 0/1
  std::vector<std::uint16_t> referring_label;
  std::vector<std::uint8_t> label_mask;
  std::uint32_t target_index = 0;

  Tensor image_tensor() const;       // {H, W, 3} float64
  Tensor label_mask_tensor() const;  // {H, W}
  Tensor gt_mask_tensor() const;     // {H, W}, mask of the referred object
  bool operator==(const Scene&) const = default;
};

struct MixingMatrix {
  std::uint32_t id = 0;   // seed the matrix is rebuilt from
  std::uint32_t dim = 0;  // 2*D
  std::vector<float> w;   // row-major dim x dim
  bool operator==(const MixingMatrix&) const = default;
};

struct FusedHiddenState {
  std::vector<float> x_fused;  // 2*D
  std::vector<float> e_text;   // D
  std::vector<float> e_vis;    // D
  std::uint32_t mixing_id = 0;
  bool operator==(const FusedHiddenState&) const = default;
};

struct Dataset {
  std::uint32_t image_size = 0;
  std::uint32_t factor_dim = 0;  // D
  MixingMatrix mixing;
  std::vector<Scene> scenes;
  std::vector<FusedHiddenState> states;
  bool operator==(const Dataset&) const = default;
};

Scene generate_scene(std::uint64_t seed, const GenerationConfig& cfg);

// Factor embeddings; both reproducible without training.
std::vector<float> text_factor(const std::vector<std::uint16_t>& label,
                               std::size_t d);
std::vector<float> visual_factor(const Scene& scene, std::size_t d);

// Full-rank mixing matrix with condition number <= 100 (resampled otherwise).
MixingMatrix make_mixing_matrix(std::uint32_t id, std::size_t d);
double condition_number(const MixingMatrix& m);

FusedHiddenState synthesize_hidden_state(const Scene& scene,
                                         const MixingMatrix& mixing,
                                         std::uint64_t seed,
                                         double sigma_noise, std::size_t d);

Dataset generate_dataset(std::uint64_t seed, std::size_t scene_count,
                         const GenerationConfig& cfg, std::size_t d,
                         double sigma_noise);

// DSVA binary container, little-endian, bitwise round-trip.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace dsva::synth
