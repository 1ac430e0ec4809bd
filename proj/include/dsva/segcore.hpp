#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsva/decoupler.hpp"
#include "dsva/losses.hpp"
#include "dsva/optim.hpp"
#include "dsva/synthdata.hpp"
#include "dsva/tensor.hpp"

namespace dsva {

struct SegConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t embed_dim = 64;  // E
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t pseudo_points = 4;  // P
  std::size_t sub_logits = 8;     // per-cell logit grid side (<= patch)
  double leaky_slope = 0.2;
  bool hard_reprompt = false;  // threshold the dense reprompt at 0.5
  std::size_t grid() const { return image_size / patch; }
  void validate() const;
};

// --- image encoder ---------------------------------------------------------------

struct EncoderParams {
  Tensor w1, b1, w2, b2;  // patch^2*3 -> E -> E
  static EncoderParams init(const SegConfig& cfg, std::uint64_t seed);
  std::vector<Tensor> params();
};

struct ImageEmbedding {
  Tensor grid;  // {G*G, E}
  std::size_t grid_side = 0;
};

ImageEmbedding encode_image(Tape& tape, const Tensor& image,
                            const EncoderParams& p, const SegConfig& cfg);

// --- prompts ---------------------------------------------------------------------

enum class PromptTag : std::uint8_t {
  decoupled_text,
  decoupled_visual,
  pseudo_point
};

struct PromptSet {
  Tensor sparse;                // {T, E}; undefined when T == 0
  std::vector<PromptTag> tags;  // one per sparse token
  Tensor dense;                 // {H, W} in [0,1]; undefined = absent
  void validate(const SegConfig& cfg) const;
};

// Linear map turning one feature vector into P prompt embeddings.
struct PromptMap {
  Tensor w, b;  // {in, P*E}, {P*E}
  static PromptMap init(std::size_t in_dim, const SegConfig& cfg,
                        std::uint64_t seed, const std::string& prefix);
  std::vector<Tensor> params();
};

// One {1, in} vector -> P prompt token embeddings {P, E}.
Tensor prompt_tokens(Tape& tape, const Tensor& vec, const PromptMap& map,
                     const SegConfig& cfg);

// Token table + prompt map for the text path.
struct TextPromptParams {
  Tensor vocab_embed;  // {V, E}
  PromptMap map;       // E -> P*E
  static TextPromptParams init(const SegConfig& cfg, std::size_t vocab_size,
                               std::uint64_t seed, const std::string& prefix);
  std::vector<Tensor> params();
};

// Mean token embedding of a label, {1, E}. OOV tokens raise VocabError.
Tensor embed_label(Tape& tape, const std::vector<std::uint16_t>& tokens,
                   const TextPromptParams& p);

// Label tokens -> P pseudo-point embeddings (mean embedding + linear map).
Tensor text_to_points(Tape& tape, const std::vector<std::uint16_t>& tokens,
                      const TextPromptParams& p, const SegConfig& cfg);

// --- mask decoder ----------------------------------------------------------------

struct AttentionBlockParams {
  Tensor sq, sk, sv, so;  // token self-attention
  Tensor cq, ck, cv, co;  // token -> grid cross-attention
  Tensor f1, g1, f2, g2;  // feed-forward (weights + biases)
};

struct DecoderParams {
  Tensor pos;         // {G*G, E} learned grid position table
  Tensor mask_token;  // {1, E}
  Tensor dense_w;     // {1, E} dense-prompt lift, bias-free on purpose
  std::vector<AttentionBlockParams> blocks;
  Tensor out_w, out_b;  // {E, E*sub^2}, {E*sub^2}
  Tensor logit_bias;    // {1}
  static DecoderParams init(const SegConfig& cfg, std::uint64_t seed,
                            const std::string& prefix);
  std::vector<Tensor> params();
  void set_requires_grad(bool v);
};

enum class DecoderPath : std::uint8_t { text, visual };

struct MaskLogits {
  Tensor logits;      // {H, W}
  DecoderPath path = DecoderPath::text;
  Tensor mask_token;  // {1, E} final mask-token embedding
};

MaskLogits decode_mask(Tape& tape, const ImageEmbedding& img,
                       const PromptSet& prompts, const DecoderParams& p,
                       const SegConfig& cfg, DecoderPath path);

// M_0 from the prompts without a dense component; each further iteration
// feeds sigmoid(M_t) (or a hard 0/1 mask) back as the dense prompt while the
// sparse tokens stay fixed.
MaskLogits self_feedback_refine(Tape& tape, const ImageEmbedding& img,
                                const PromptSet& prompts,
                                const DecoderParams& p, const SegConfig& cfg,
                                DecoderPath path, std::size_t iterations);

// --- phase-1 pre-training step -----------------------------------------------------

struct TextPathModel {
  EncoderParams& encoder;
  TextPromptParams& text_prompt;
  DecoderParams& text_decoder;
  DecouplerParams& decoupler;
};

// One supervised step of the text path: label -> pseudo points (+ real-text
// token through the third head) -> text decoder, CE+Dice against label_mask.
double pretrain_text_step(const std::vector<const synth::Scene*>& batch,
                          const std::vector<Tensor>& label_embeddings,
                          TextPathModel model, const SegConfig& cfg,
                          const LossWeights& w, Optimizer& opt,
                          std::vector<Tensor>& trainables);

}  // namespace dsva
