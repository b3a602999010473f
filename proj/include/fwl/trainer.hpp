#pragma once

#include <string>
#include <vector>

#include "fwl/retrieval.hpp"

namespace fwl {

struct TrainConfig {
  int batch_size = 32;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double loss_threshold = 0.001;
  int patience = 1000;   // training steps without a new best eval loss
  int eval_every = 50;
  int max_steps = 50000;
};

enum class RunStatus { Converged, Stalled, Capped, Failed };

const char* to_string(RunStatus s);

struct EvalPoint {
  int step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double accuracy = 0.0;
};

struct RunRecord {
  std::vector<EvalPoint> history;
  RunStatus status = RunStatus::Capped;
  int steps_run = 0;
  double best_eval_loss = 0.0;
  double accuracy = 0.0;  // at the best evaluation
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string diagnostic;  // set on Failed
};

struct AdamState {
  std::vector<Matrix> m1;
  std::vector<Matrix> m2;
  long t = 0;
};

AdamState make_adam_state(const std::vector<Tensor>& params);

// One bias-corrected Adam update; parameters without an accumulated
// gradient are treated as having zero gradient. Clears gradients.
void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& config);

RunRecord train_until(RetrievalModel& model, const RetrievalTaskConfig& task,
                      const TrainConfig& config, const Rng& rng);

// ---- capacity sweep -------------------------------------------------------

struct SweepVariant {
  std::string name;  // identity | elu1 | favorM | dpfpN | softmax
  ModelConfig model;
};

// Parses a variant label into a model configuration (d_dot implied).
SweepVariant parse_variant(const std::string& name, int d_key,
                           UpdateRule rule, Normalization norm);

struct SweepCell {
  std::string variant;
  ModelConfig model;
  RetrievalTaskConfig task;
  RunRecord run;
};

// Trains one model per (variant, S) cell; cells are independent and may run
// on a worker pool without affecting results. Failures are recorded
// per-cell, the sweep continues.
std::vector<SweepCell> capacity_sweep(const std::vector<SweepVariant>& variants,
                                      const std::vector<int>& s_list,
                                      int setting, const TrainConfig& config,
                                      const Rng& rng, int workers = 1);

}  // namespace fwl
