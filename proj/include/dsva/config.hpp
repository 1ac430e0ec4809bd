#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsva/adversary.hpp"
#include "dsva/club.hpp"
#include "dsva/losses.hpp"
#include "dsva/segcore.hpp"

namespace dsva {

enum class RunPhase { pretrain_text, train_decouple, eval };
RunPhase phase_from_string(const std::string& s);
std::string to_string(RunPhase p);

struct OptimSettings {
  std::string kind = "adam";  // adam | sgd
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  bool cosine_decay = true;  // decay to 5% of lr over the step budget
  Optimizer make() const;
};

// Full experiment configuration; one INI-style file, flat key = value pairs
// under [section] headers.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::string dataset;
  std::string eval_dataset;
  RunPhase phase = RunPhase::pretrain_text;
  std::string output_dir = "runs/out";
  std::string init_checkpoint;  // phase-1 checkpoint for train_decouple/eval
  std::uint64_t steps = 3000;
  std::uint64_t eval_interval = 500;
  std::size_t batch_size = 16;
  std::size_t reprompt_iterations = 1;

  // [model]
  SegConfig seg;
  std::size_t factor_dim = 64;  // D
  std::size_t hidden_dim = 64;  // H; must equal seg.embed_dim
  std::size_t disc_hidden = 64;
  std::size_t q_hidden = 64;
  std::size_t q_mixture = 1;
  bool freeze_image_encoder = false;

  // [losses]
  LossWeights losses;

  // [club]
  ClubSchedule club;
  std::size_t q_batch = 512;
  double q_learning_rate = 3e-3;
  std::uint64_t club_ramp_steps = 0;  // 0 = constant lambda_club

  // [adversary]
  AdvWiring adv_wiring = AdvWiring::paper;
  double disc_learning_rate = 1e-3;

  // [optimizer]
  OptimSettings optim;
  double decoupler_weight_decay = 0.0;  // per-step multiplicative decay

  // [data] (gen-data only)
  std::size_t data_scenes = 2000;
  double sigma_noise = 0.05;
  synth::GenerationConfig generation;

  void validate() const;
  std::string to_ini() const;

  void set(const std::string& dotted_key, const std::string& value);
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace dsva
