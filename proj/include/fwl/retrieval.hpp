#pragma once

#include <vector>

#include "fwl/fast_weight.hpp"
#include "fwl/feature_maps.hpp"
#include "fwl/rng.hpp"
#include "fwl/tensor.hpp"

namespace fwl {

// Synthetic associative retrieval: a sequence of key/value pairs followed
// by a query. Setting 1 samples without replacement (capacity test),
// Setting 2 with replacement (overwrite test, L = 2S).
struct RetrievalTaskConfig {
  int num_symbols = 20;  // S
  int setting = 1;
  int sequence_length() const {
    return setting == 1 ? num_symbols : 2 * num_symbols;
  }
};

struct Episode {
  std::vector<int> key_syms;    // length L
  std::vector<int> value_idx;   // length L
  int query_sym = 0;
  int target_idx = 0;  // value bound to query_sym (latest binding in Setting 2)
};

Episode gen_setting1(int num_symbols, RngStream& rs);
Episode gen_setting2(int num_symbols, RngStream& rs);
Episode gen_episode(const RetrievalTaskConfig& task, RngStream& rs);

enum class MemoryKind { FastWeight, SoftmaxBaseline };

struct ModelConfig {
  int num_symbols = 20;  // S
  int d_emb = 32;
  int d_key = 16;
  MemoryKind memory = MemoryKind::FastWeight;
  UpdateRule rule = UpdateRule::Sum;
  Normalization norm = Normalization::Attention;
  PhiKind phi = PhiKind::Identity;
  int nu = 1;
  int m = 0;
  RedrawPolicy redraw = RedrawPolicy::PerMinibatch;
};

// Slow weights: embedding table plus key/query (and write-strength)
// projections. Values are the fixed one-hot basis of R^S.
struct RetrievalModel {
  ModelConfig config;
  FeatureMap feature_map;  // evaluation features for favor
  Tensor embed;            // d_emb x S
  Tensor w_key;            // d_key x (d_emb + S)
  Tensor w_query;          // d_key x d_emb
  Tensor w_beta;           // 1 x (d_emb + S), delta rule only

  std::vector<Tensor> params() const;
};

RetrievalModel init_model(const ModelConfig& config, const Rng& rng);

// Writes all L pairs into the memory, then reads every query. Returns the
// retrieved value vectors as an S x num_queries tensor.
Tensor model_forward(Tape& tape, const RetrievalModel& model,
                     const FeatureMap& fm, const Episode& episode,
                     const std::vector<int>& query_syms);

// sum_j 0.5 (v*_j - vhat_j)^2
double retrieval_loss(const Vector& v_hat, const Vector& v_star);
// mean retrieval loss over the columns of v_hat
Tensor retrieval_loss_op(Tape& tape, const Tensor& v_hat,
                         const Matrix& targets);

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // exact argmax match
  int num_queries = 0;
};

// 20 fresh sequences, every key occurring in each sequence queried once.
// Deterministic given the rng's master seed.
EvalResult evaluate(const RetrievalModel& model,
                    const RetrievalTaskConfig& task, const Rng& rng,
                    int num_sequences = 20);

}  // namespace fwl
