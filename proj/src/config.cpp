#include "dsva/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dsva/errors.hpp"

namespace dsva {

RunPhase phase_from_string(const std::string& s) {
  if (s == "pretrain_text") return RunPhase::pretrain_text;
  if (s == "train_decouple") return RunPhase::train_decouple;
  if (s == "eval") return RunPhase::eval;
  throw ContractError("unknown phase '" + s + "'");
}

std::string to_string(RunPhase p) {
  switch (p) {
    case RunPhase::pretrain_text: return "pretrain_text";
    case RunPhase::train_decouple: return "train_decouple";
    case RunPhase::eval: return "eval";
  }
  return "?";
}

Optimizer OptimSettings::make() const {
  if (kind == "adam") return Optimizer::adam(learning_rate, beta1, beta2,
                                             epsilon);
  if (kind == "sgd") return Optimizer::sgd(learning_rate);
  throw ContractError("unknown optimizer kind '" + kind + "'");
}

namespace {

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ContractError("config: bad number '" + v + "' for " + key);
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ContractError("config: bad integer '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config: bad bool '" + v + "' for " + key);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, Setter> table = {
      {"run.seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v, "run.seed"); }},
      {"run.dataset", [](RunConfig& c, const std::string& v) { c.dataset = v; }},
      {"run.eval_dataset", [](RunConfig& c, const std::string& v) { c.eval_dataset = v; }},
      {"run.phase", [](RunConfig& c, const std::string& v) { c.phase = phase_from_string(v); }},
      {"run.output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
      {"run.init_checkpoint", [](RunConfig& c, const std::string& v) { c.init_checkpoint = v; }},
      {"run.steps", [](RunConfig& c, const std::string& v) { c.steps = parse_u64(v, "run.steps"); }},
      {"run.eval_interval", [](RunConfig& c, const std::string& v) { c.eval_interval = parse_u64(v, "run.eval_interval"); }},
      {"run.batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = parse_u64(v, "run.batch_size"); }},
      {"run.reprompt_iterations", [](RunConfig& c, const std::string& v) { c.reprompt_iterations = parse_u64(v, "run.reprompt_iterations"); }},
      {"model.image_size", [](RunConfig& c, const std::string& v) { c.seg.image_size = parse_u64(v, "model.image_size"); c.generation.image_size = c.seg.image_size; }},
      {"model.patch", [](RunConfig& c, const std::string& v) { c.seg.patch = parse_u64(v, "model.patch"); }},
      {"model.embed_dim", [](RunConfig& c, const std::string& v) { c.seg.embed_dim = parse_u64(v, "model.embed_dim"); }},
      {"model.heads", [](RunConfig& c, const std::string& v) { c.seg.heads = parse_u64(v, "model.heads"); }},
      {"model.blocks", [](RunConfig& c, const std::string& v) { c.seg.blocks = parse_u64(v, "model.blocks"); }},
      {"model.pseudo_points", [](RunConfig& c, const std::string& v) { c.seg.pseudo_points = parse_u64(v, "model.pseudo_points"); }},
      {"model.sub_logits", [](RunConfig& c, const std::string& v) { c.seg.sub_logits = parse_u64(v, "model.sub_logits"); }},
      {"model.leaky_slope", [](RunConfig& c, const std::string& v) { c.seg.leaky_slope = parse_double(v, "model.leaky_slope"); }},
      {"model.hard_reprompt", [](RunConfig& c, const std::string& v) { c.seg.hard_reprompt = parse_bool(v, "model.hard_reprompt"); }},
      {"model.factor_dim", [](RunConfig& c, const std::string& v) { c.factor_dim = parse_u64(v, "model.factor_dim"); }},
      {"model.hidden_dim", [](RunConfig& c, const std::string& v) { c.hidden_dim = parse_u64(v, "model.hidden_dim"); }},
      {"model.disc_hidden", [](RunConfig& c, const std::string& v) { c.disc_hidden = parse_u64(v, "model.disc_hidden"); }},
      {"model.q_hidden", [](RunConfig& c, const std::string& v) { c.q_hidden = parse_u64(v, "model.q_hidden"); }},
      {"model.q_mixture", [](RunConfig& c, const std::string& v) { c.q_mixture = parse_u64(v, "model.q_mixture"); }},
      {"model.freeze_image_encoder", [](RunConfig& c, const std::string& v) { c.freeze_image_encoder = parse_bool(v, "model.freeze_image_encoder"); }},
      {"losses.lambda_adv", [](RunConfig& c, const std::string& v) { c.losses.lambda_adv = parse_double(v, "losses.lambda_adv"); }},
      {"losses.lambda_club", [](RunConfig& c, const std::string& v) { c.losses.lambda_club = parse_double(v, "losses.lambda_club"); c.club.lambda_club = c.losses.lambda_club; }},
      {"losses.lambda_ortho", [](RunConfig& c, const std::string& v) { c.losses.lambda_ortho = parse_double(v, "losses.lambda_ortho"); }},
      {"losses.ce_variant", [](RunConfig& c, const std::string& v) { c.losses.ce_variant = ce_variant_from_string(v); }},
      {"losses.epsilon_dice", [](RunConfig& c, const std::string& v) { c.losses.epsilon_dice = parse_double(v, "losses.epsilon_dice"); }},
      {"club.k", [](RunConfig& c, const std::string& v) { c.club.k = parse_u64(v, "club.k"); }},
      {"club.q_steps_per_update", [](RunConfig& c, const std::string& v) { c.club.q_steps_per_update = parse_u64(v, "club.q_steps_per_update"); }},
      {"club.q_batch", [](RunConfig& c, const std::string& v) { c.q_batch = parse_u64(v, "club.q_batch"); }},
      {"club.q_learning_rate", [](RunConfig& c, const std::string& v) { c.q_learning_rate = parse_double(v, "club.q_learning_rate"); }},
      {"club.ramp_steps", [](RunConfig& c, const std::string& v) { c.club_ramp_steps = parse_u64(v, "club.ramp_steps"); }},
      {"adversary.wiring", [](RunConfig& c, const std::string& v) { c.adv_wiring = adv_wiring_from_string(v); }},
      {"adversary.disc_learning_rate", [](RunConfig& c, const std::string& v) { c.disc_learning_rate = parse_double(v, "adversary.disc_learning_rate"); }},
      {"optimizer.kind", [](RunConfig& c, const std::string& v) { c.optim.kind = v; }},
      {"optimizer.learning_rate", [](RunConfig& c, const std::string& v) { c.optim.learning_rate = parse_double(v, "optimizer.learning_rate"); }},
      {"optimizer.beta1", [](RunConfig& c, const std::string& v) { c.optim.beta1 = parse_double(v, "optimizer.beta1"); }},
      {"optimizer.beta2", [](RunConfig& c, const std::string& v) { c.optim.beta2 = parse_double(v, "optimizer.beta2"); }},
      {"optimizer.epsilon", [](RunConfig& c, const std::string& v) { c.optim.epsilon = parse_double(v, "optimizer.epsilon"); }},
      {"optimizer.cosine_decay", [](RunConfig& c, const std::string& v) { c.optim.cosine_decay = parse_bool(v, "optimizer.cosine_decay"); }},
      {"optimizer.decoupler_weight_decay", [](RunConfig& c, const std::string& v) { c.decoupler_weight_decay = parse_double(v, "optimizer.decoupler_weight_decay"); }},
      {"data.scenes", [](RunConfig& c, const std::string& v) { c.data_scenes = parse_u64(v, "data.scenes"); }},
      {"data.sigma_noise", [](RunConfig& c, const std::string& v) { c.sigma_noise = parse_double(v, "data.sigma_noise"); }},
      {"data.min_objects", [](RunConfig& c, const std::string& v) { c.generation.min_objects = parse_u64(v, "data.min_objects"); }},
      {"data.max_objects", [](RunConfig& c, const std::string& v) { c.generation.max_objects = parse_u64(v, "data.max_objects"); }},
      {"data.motion_label_prob", [](RunConfig& c, const std::string& v) { c.generation.motion_label_prob = parse_double(v, "data.motion_label_prob"); }},
  };
  auto it = table.find(dotted_key);
  if (it == table.end())
    throw ContractError("config: unknown key '" + dotted_key + "'");
  it->second(*this, value);
}

void RunConfig::validate() const {
  seg.validate();
  losses.validate();
  club.validate();
  generation.validate();
  if (hidden_dim != seg.embed_dim)
    throw ContractError(
        "config: hidden_dim must equal embed_dim (decoupled features drive "
        "the prompt maps and the ortho features)");
  if (batch_size < 1) throw ContractError("config: batch_size must be >= 1");
  if (q_batch < 2) throw ContractError("config: q_batch must be >= 2");
  if (generation.image_size != seg.image_size)
    throw ContractError("config: generation image size out of sync");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ContractError("config line " + std::to_string(lineno) +
                            ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) +
                          ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ContractError("config line " + std::to_string(lineno) +
                          ": key outside any [section]");
    cfg.set(section + "." + key, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string RunConfig::to_ini() const {
  std::ostringstream o;
  o << "[run]\n";
  o << "seed = " << seed << "\n";
  o << "dataset = " << dataset << "\n";
  o << "eval_dataset = " << eval_dataset << "\n";
  o << "phase = " << to_string(phase) << "\n";
  o << "output_dir = " << output_dir << "\n";
  o << "init_checkpoint = " << init_checkpoint << "\n";
  o << "steps = " << steps << "\n";
  o << "eval_interval = " << eval_interval << "\n";
  o << "batch_size = " << batch_size << "\n";
  o << "reprompt_iterations = " << reprompt_iterations << "\n";
  o << "\n[model]\n";
  o << "image_size = " << seg.image_size << "\n";
  o << "patch = " << seg.patch << "\n";
  o << "embed_dim = " << seg.embed_dim << "\n";
  o << "heads = " << seg.heads << "\n";
  o << "blocks = " << seg.blocks << "\n";
  o << "pseudo_points = " << seg.pseudo_points << "\n";
  o << "sub_logits = " << seg.sub_logits << "\n";
  o << "leaky_slope = " << fmt(seg.leaky_slope) << "\n";
  o << "hard_reprompt = " << (seg.hard_reprompt ? "true" : "false") << "\n";
  o << "factor_dim = " << factor_dim << "\n";
  o << "hidden_dim = " << hidden_dim << "\n";
  o << "disc_hidden = " << disc_hidden << "\n";
  o << "q_hidden = " << q_hidden << "\n";
  o << "q_mixture = " << q_mixture << "\n";
  o << "freeze_image_encoder = " << (freeze_image_encoder ? "true" : "false")
    << "\n";
  o << "\n[losses]\n";
  o << "lambda_adv = " << fmt(losses.lambda_adv) << "\n";
  o << "lambda_club = " << fmt(losses.lambda_club) << "\n";
  o << "lambda_ortho = " << fmt(losses.lambda_ortho) << "\n";
  o << "ce_variant = " << to_string(losses.ce_variant) << "\n";
  o << "epsilon_dice = " << fmt(losses.epsilon_dice) << "\n";
  o << "\n[club]\n";
  o << "k = " << club.k << "\n";
  o << "q_steps_per_update = " << club.q_steps_per_update << "\n";
  o << "q_batch = " << q_batch << "\n";
  o << "q_learning_rate = " << fmt(q_learning_rate) << "\n";
  o << "ramp_steps = " << club_ramp_steps << "\n";
  o << "\n[adversary]\n";
  o << "wiring = " << to_string(adv_wiring) << "\n";
  o << "disc_learning_rate = " << fmt(disc_learning_rate) << "\n";
  o << "\n[optimizer]\n";
  o << "kind = " << optim.kind << "\n";
  o << "learning_rate = " << fmt(optim.learning_rate) << "\n";
  o << "beta1 = " << fmt(optim.beta1) << "\n";
  o << "beta2 = " << fmt(optim.beta2) << "\n";
  o << "epsilon = " << fmt(optim.epsilon) << "\n";
  o << "cosine_decay = " << (optim.cosine_decay ? "true" : "false") << "\n";
  o << "decoupler_weight_decay = " << fmt(decoupler_weight_decay) << "\n";
  o << "\n[data]\n";
  o << "scenes = " << data_scenes << "\n";
  o << "sigma_noise = " << fmt(sigma_noise) << "\n";
  o << "min_objects = " << generation.min_objects << "\n";
  o << "max_objects = " << generation.max_objects << "\n";
  o << "motion_label_prob = " << fmt(generation.motion_label_prob) << "\n";
  return o.str();
}

}  // namespace dsva
