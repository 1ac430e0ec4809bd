#include "dsva/segcore.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "dsva/errors.hpp"
#include "dsva/init.hpp"

namespace dsva {

void SegConfig::validate() const {
  if (image_size % patch != 0)
    throw ShapeError("seg config: image size must be divisible by patch");
  if (embed_dim % heads != 0)
    throw ContractError("seg config: embed dim must split across heads");
  if (sub_logits < 1 || sub_logits > patch)
    throw ContractError("seg config: sub_logits must lie in [1, patch]");
  if (pseudo_points < 1)
    throw ContractError("seg config: need at least one pseudo point");
}

// --- encoder -----------------------------------------------------------------------

EncoderParams EncoderParams::init(const SegConfig& cfg, std::uint64_t seed) {
  const std::size_t in = cfg.patch * cfg.patch * 3;
  EncoderParams p;
  p.w1 = xavier_uniform({in, cfg.embed_dim}, param_seed(seed, "encoder.w1"));
  p.b1 = zeros_param({cfg.embed_dim});
  p.w2 = xavier_uniform({cfg.embed_dim, cfg.embed_dim},
                        param_seed(seed, "encoder.w2"));
  p.b2 = zeros_param({cfg.embed_dim});
  return p;
}

std::vector<Tensor> EncoderParams::params() { return {w1, b1, w2, b2}; }

namespace {
// process-lifetime caches; maps depend only on geometry
std::shared_ptr<const SparseMap> patchify_cache(std::size_t s,
                                                std::size_t patch) {
  static std::map<std::pair<std::size_t, std::size_t>,
                  std::shared_ptr<const SparseMap>>
      cache;
  auto& e = cache[{s, patch}];
  if (!e) e = make_patchify_map(s, s, 3, patch);
  return e;
}

std::shared_ptr<const SparseMap> upsample_cache(std::size_t fine,
                                                std::size_t s) {
  static std::map<std::pair<std::size_t, std::size_t>,
                  std::shared_ptr<const SparseMap>>
      cache;
  auto& e = cache[{fine, s}];
  if (!e) e = make_bilinear_upsample_map(fine, s, s);
  return e;
}

std::shared_ptr<const SparseMap> pool_cache(std::size_t s, std::size_t g) {
  static std::map<std::pair<std::size_t, std::size_t>,
                  std::shared_ptr<const SparseMap>>
      cache;
  auto& e = cache[{s, g}];
  if (!e) e = make_average_pool_map(s, s, g);
  return e;
}

// (cell, sub) layout -> row-major fine grid, as a fixed permutation
std::shared_ptr<const SparseMap> assemble_cache(std::size_t g,
                                                std::size_t sub) {
  static std::map<std::pair<std::size_t, std::size_t>,
                  std::shared_ptr<const SparseMap>>
      cache;
  auto& e = cache[{g, sub}];
  if (!e) {
    auto map = std::make_shared<SparseMap>();
    const std::size_t fine = g * sub;
    map->in_size = g * g * sub * sub;
    map->out_shape = {fine, fine};
    map->offsets.push_back(0);
    for (std::size_t y = 0; y < fine; ++y)
      for (std::size_t x = 0; x < fine; ++x) {
        const std::size_t cell = (y / sub) * g + (x / sub);
        const std::size_t s2 = (y % sub) * sub + (x % sub);
        map->cols.push_back(
            static_cast<std::uint32_t>(cell * sub * sub + s2));
        map->weights.push_back(1.0);
        map->offsets.push_back(static_cast<std::uint32_t>(map->cols.size()));
      }
    e = map;
  }
  return e;
}
}  // namespace

ImageEmbedding encode_image(Tape& tape, const Tensor& image,
                            const EncoderParams& p, const SegConfig& cfg) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != cfg.image_size ||
      image.dim(1) != cfg.image_size || image.dim(2) != 3)
    throw ShapeError("encode_image: expected {" +
                     std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + ",3}, got " +
                     shape_str(image.shape()));
  Tensor patches =
      tape.sparse_linear(image, patchify_cache(cfg.image_size, cfg.patch));
  Tensor hid = tape.leaky_relu(tape.affine(patches, p.w1, p.b1),
                               cfg.leaky_slope);
  ImageEmbedding e;
  e.grid = tape.affine(hid, p.w2, p.b2);
  e.grid_side = cfg.grid();
  return e;
}

// --- prompts -----------------------------------------------------------------------

void PromptSet::validate(const SegConfig& cfg) const {
  const bool has_sparse = sparse.defined() && sparse.dim(0) > 0;
  if (!has_sparse && !dense.defined())
    throw ContractError("prompt set: need a sparse token or a dense prompt");
  if (has_sparse) {
    if (sparse.rank() != 2 || sparse.dim(1) != cfg.embed_dim)
      throw ShapeError("prompt set: sparse tokens must be {T, E}");
    if (tags.size() != sparse.dim(0))
      throw ContractError("prompt set: tag per sparse token required");
  }
  if (dense.defined() &&
      (dense.rank() != 2 || dense.dim(0) != cfg.image_size ||
       dense.dim(1) != cfg.image_size))
    throw ShapeError("prompt set: dense prompt must be {H, W}");
}

PromptMap PromptMap::init(std::size_t in_dim, const SegConfig& cfg,
                          std::uint64_t seed, const std::string& prefix) {
  PromptMap m;
  m.w = xavier_uniform({in_dim, cfg.pseudo_points * cfg.embed_dim},
                       param_seed(seed, prefix + ".map_w"));
  m.b = zeros_param({cfg.pseudo_points * cfg.embed_dim});
  return m;
}

std::vector<Tensor> PromptMap::params() { return {w, b}; }

TextPromptParams TextPromptParams::init(const SegConfig& cfg,
                                        std::size_t vocab_size,
                                        std::uint64_t seed,
                                        const std::string& prefix) {
  TextPromptParams p;
  p.vocab_embed = xavier_uniform({vocab_size, cfg.embed_dim},
                                 param_seed(seed, prefix + ".vocab_embed"));
  p.map = PromptMap::init(cfg.embed_dim, cfg, seed, prefix);
  return p;
}

std::vector<Tensor> TextPromptParams::params() {
  return {vocab_embed, map.w, map.b};
}

Tensor embed_label(Tape& tape, const std::vector<std::uint16_t>& tokens,
                   const TextPromptParams& p) {
  if (tokens.empty()) throw ContractError("embed_label: empty token list");
  std::vector<Tensor> rows;
  rows.reserve(tokens.size());
  for (std::uint16_t t : tokens) {
    if (t >= p.vocab_embed.dim(0))
      throw VocabError("token id " + std::to_string(t) +
                       " outside the embedding table");
    rows.push_back(tape.slice(p.vocab_embed, 0, t, t + 1));
  }
  Tensor stacked = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  return tape.reshape(tape.mean(stacked, 0), {1, p.vocab_embed.dim(1)});
}

Tensor prompt_tokens(Tape& tape, const Tensor& vec, const PromptMap& map,
                     const SegConfig& cfg) {
  if (vec.rank() != 2 || vec.dim(0) != 1 || vec.dim(1) != map.w.dim(0))
    throw ShapeError("prompt_tokens: expected {1, " +
                     std::to_string(map.w.dim(0)) + "}, got " +
                     shape_str(vec.shape()));
  Tensor flat = tape.affine(vec, map.w, map.b);  // {1, P*E}
  return tape.reshape(flat, {cfg.pseudo_points, cfg.embed_dim});
}

Tensor text_to_points(Tape& tape, const std::vector<std::uint16_t>& tokens,
                      const TextPromptParams& p, const SegConfig& cfg) {
  return prompt_tokens(tape, embed_label(tape, tokens, p), p.map, cfg);
}

// --- decoder -----------------------------------------------------------------------

namespace {
AttentionBlockParams init_block(const SegConfig& cfg, std::uint64_t seed,
                                const std::string& prefix) {
  const std::size_t e = cfg.embed_dim;
  AttentionBlockParams b;
  b.sq = xavier_uniform({e, e}, param_seed(seed, prefix + ".sq"));
  b.sk = xavier_uniform({e, e}, param_seed(seed, prefix + ".sk"));
  b.sv = xavier_uniform({e, e}, param_seed(seed, prefix + ".sv"));
  b.so = xavier_uniform({e, e}, param_seed(seed, prefix + ".so"));
  b.cq = xavier_uniform({e, e}, param_seed(seed, prefix + ".cq"));
  b.ck = xavier_uniform({e, e}, param_seed(seed, prefix + ".ck"));
  b.cv = xavier_uniform({e, e}, param_seed(seed, prefix + ".cv"));
  b.co = xavier_uniform({e, e}, param_seed(seed, prefix + ".co"));
  b.f1 = xavier_uniform({e, 2 * e}, param_seed(seed, prefix + ".f1"));
  b.g1 = zeros_param({2 * e});
  b.f2 = xavier_uniform({2 * e, e}, param_seed(seed, prefix + ".f2"));
  b.g2 = zeros_param({e});
  return b;
}

// row-softmax with a mean shift; softmax is shift-invariant so the shift
// changes neither values nor gradients, it only tames exp magnitudes
Tensor row_softmax(Tape& tape, const Tensor& scores) {
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  Tensor c = tape.reshape(tape.mean(scores, 1), {rows, 1});
  Tensor e = tape.exp(tape.subtract(scores, tape.broadcast(c, scores.shape())));
  Tensor z = tape.reshape(tape.sum(e, 1), {rows, 1});
  return tape.divide(e, tape.broadcast(z, {rows, cols}));
}

Tensor multihead(Tape& tape, const Tensor& q_in, const Tensor& kv_in,
                 const Tensor& wq, const Tensor& wk, const Tensor& wv,
                 const Tensor& wo, std::size_t heads) {
  const std::size_t e = q_in.dim(1);
  const std::size_t dh = e / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = tape.matmul(q_in, wq);
  Tensor k = tape.matmul(kv_in, wk);
  Tensor v = tape.matmul(kv_in, wv);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = tape.slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = tape.slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = tape.slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores =
        tape.scalar_mul(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
    outs.push_back(tape.matmul(row_softmax(tape, scores), vh));
  }
  Tensor merged = outs.size() == 1 ? outs[0] : tape.concat(outs, 1);
  return tape.matmul(merged, wo);
}
}  // namespace

DecoderParams DecoderParams::init(const SegConfig& cfg, std::uint64_t seed,
                                  const std::string& prefix) {
  const std::size_t g2 = cfg.grid() * cfg.grid();
  const std::size_t e = cfg.embed_dim;
  DecoderParams p;
  p.pos = xavier_uniform({g2, e}, param_seed(seed, prefix + ".pos"));
  p.mask_token =
      xavier_uniform({1, e}, param_seed(seed, prefix + ".mask_token"));
  p.dense_w = xavier_uniform({1, e}, param_seed(seed, prefix + ".dense_w"));
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    p.blocks.push_back(
        init_block(cfg, seed, prefix + ".block" + std::to_string(b)));
  p.out_w = xavier_uniform({e, e * cfg.sub_logits * cfg.sub_logits},
                           param_seed(seed, prefix + ".out_w"));
  p.out_b = zeros_param({e * cfg.sub_logits * cfg.sub_logits});
  p.logit_bias = zeros_param({1});
  return p;
}

std::vector<Tensor> DecoderParams::params() {
  std::vector<Tensor> out = {pos, mask_token, dense_w, out_w, out_b,
                             logit_bias};
  for (AttentionBlockParams& b : blocks) {
    out.push_back(b.sq);
    out.push_back(b.sk);
    out.push_back(b.sv);
    out.push_back(b.so);
    out.push_back(b.cq);
    out.push_back(b.ck);
    out.push_back(b.cv);
    out.push_back(b.co);
    out.push_back(b.f1);
    out.push_back(b.g1);
    out.push_back(b.f2);
    out.push_back(b.g2);
  }
  return out;
}

void DecoderParams::set_requires_grad(bool v) {
  for (Tensor& t : params()) t.set_requires_grad(v);
}

MaskLogits decode_mask(Tape& tape, const ImageEmbedding& img,
                       const PromptSet& prompts, const DecoderParams& p,
                       const SegConfig& cfg, DecoderPath path) {
  cfg.validate();
  prompts.validate(cfg);
  const std::size_t g = cfg.grid();
  if (!img.grid.defined() || img.grid.rank() != 2 ||
      img.grid.dim(0) != g * g || img.grid.dim(1) != cfg.embed_dim)
    throw ShapeError("decode_mask: image embedding grid mismatch");

  Tensor grid = tape.add(img.grid, p.pos);
  if (prompts.dense.defined()) {
    Tensor pooled = tape.sparse_linear(prompts.dense,
                                       pool_cache(cfg.image_size, g));
    grid = tape.add(grid, tape.matmul(pooled, p.dense_w));
  }

  Tensor tokens = prompts.sparse.defined() && prompts.sparse.dim(0) > 0
                      ? tape.concat({p.mask_token, prompts.sparse}, 0)
                      : p.mask_token;
  for (const AttentionBlockParams& b : p.blocks) {
    tokens = tape.add(tokens, multihead(tape, tokens, tokens, b.sq, b.sk,
                                        b.sv, b.so, cfg.heads));
    tokens = tape.add(tokens, multihead(tape, tokens, grid, b.cq, b.ck, b.cv,
                                        b.co, cfg.heads));
    Tensor ff = tape.affine(
        tape.leaky_relu(tape.affine(tokens, b.f1, b.g1), cfg.leaky_slope),
        b.f2, b.g2);
    tokens = tape.add(tokens, ff);
  }
  Tensor mask_tok = tape.slice(tokens, 0, 0, 1);  // {1, E}

  const std::size_t s2 = cfg.sub_logits * cfg.sub_logits;
  Tensor head = tape.affine(mask_tok, p.out_w, p.out_b);  // {1, E*sub^2}
  Tensor w_m = tape.reshape(head, {cfg.embed_dim, s2});
  Tensor cells = tape.add(tape.matmul(grid, w_m),
                          tape.broadcast(p.logit_bias, {g * g, s2}));
  Tensor fine =
      tape.sparse_linear(tape.reshape(cells, {g * g * s2}),
                         assemble_cache(g, cfg.sub_logits));
  MaskLogits out;
  const std::size_t fine_side = g * cfg.sub_logits;
  out.logits = fine_side == cfg.image_size
                   ? fine
                   : tape.sparse_linear(
                         tape.reshape(fine, {fine_side * fine_side}),
                         upsample_cache(fine_side, cfg.image_size));
  out.path = path;
  out.mask_token = mask_tok;
  return out;
}

MaskLogits self_feedback_refine(Tape& tape, const ImageEmbedding& img,
                                const PromptSet& prompts,
                                const DecoderParams& p, const SegConfig& cfg,
                                DecoderPath path, std::size_t iterations) {
  PromptSet current = prompts;
  current.dense = Tensor();  // M_0 uses no dense prompt
  MaskLogits m = decode_mask(tape, img, current, p, cfg, path);
  for (std::size_t t = 0; t < iterations; ++t) {
    if (cfg.hard_reprompt) {
      Tensor hard = Tensor::zeros(m.logits.shape());
      for (std::size_t i = 0; i < m.logits.size(); ++i)
        hard.data()[i] = m.logits.at(i) > 0.0 ? 1.0 : 0.0;
      current.dense = hard;
    } else {
      current.dense = tape.sigmoid(m.logits);
    }
    m = decode_mask(tape, img, current, p, cfg, path);
  }
  return m;
}

// --- phase-1 step ------------------------------------------------------------------

double pretrain_text_step(const std::vector<const synth::Scene*>& batch,
                          const std::vector<Tensor>& label_embeddings,
                          TextPathModel model, const SegConfig& cfg,
                          const LossWeights& w, Optimizer& opt,
                          std::vector<Tensor>& trainables) {
  if (batch.empty()) throw ContractError("pretrain_text_step: empty batch");
  if (label_embeddings.size() != batch.size())
    throw ContractError("pretrain_text_step: one label embedding per scene");
  Tape tape;
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const synth::Scene& sc = *batch[i];
    ImageEmbedding img = encode_image(tape, sc.image_tensor(), model.encoder,
                                      cfg);
    Tensor pts = text_to_points(tape, sc.referring_label, model.text_prompt,
                                cfg);
    Tensor real = encode_real_text(tape, label_embeddings[i], model.decoupler);
    PromptSet prompts;
    prompts.sparse = tape.concat({pts, real}, 0);
    prompts.tags.assign(cfg.pseudo_points + 1, PromptTag::pseudo_point);
    MaskLogits logits =
        decode_mask(tape, img, prompts, model.text_decoder, cfg,
                    DecoderPath::text);
    total = tape.add(total,
                     mask_loss(tape, logits.logits, sc.label_mask_tensor(), w));
  }
  Tensor loss =
      tape.scalar_mul(total, 1.0 / static_cast<double>(batch.size()));
  tape.backward(loss);
  opt.step(trainables);
  return loss.value();
}

}  // namespace dsva
