#include "fwl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fwl {

namespace {

std::vector<int> shuffled_range(int n, RngStream& rs) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rs.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(v[i], v[j]);
  }
  return v;
}

}  // namespace

Episode gen_setting1(int num_symbols, RngStream& rs) {
  if (num_symbols < 1) throw std::invalid_argument("gen_setting1: S must be >= 1");
  Episode ep;
  ep.key_syms = shuffled_range(num_symbols, rs);
  ep.value_idx = shuffled_range(num_symbols, rs);
  const int pos = static_cast<int>(rs.next_below(num_symbols));
  ep.query_sym = ep.key_syms[pos];
  ep.target_idx = ep.value_idx[pos];
  return ep;
}

Episode gen_setting2(int num_symbols, RngStream& rs) {
  if (num_symbols < 1) throw std::invalid_argument("gen_setting2: S must be >= 1");
  const int L = 2 * num_symbols;
  Episode ep;
  ep.key_syms.resize(L);
  ep.value_idx.resize(L);
  for (int i = 0; i < L; ++i) {
    ep.key_syms[i] = static_cast<int>(rs.next_below(num_symbols));
    ep.value_idx[i] = static_cast<int>(rs.next_below(num_symbols));
  }
  // query one of the keys that actually occur
  const int pos = static_cast<int>(rs.next_below(L));
  ep.query_sym = ep.key_syms[pos];
  // target is the latest binding of the query key
  for (int i = L - 1; i >= 0; --i) {
    if (ep.key_syms[i] == ep.query_sym) {
      ep.target_idx = ep.value_idx[i];
      break;
    }
  }
  return ep;
}

Episode gen_episode(const RetrievalTaskConfig& task, RngStream& rs) {
  return task.setting == 1 ? gen_setting1(task.num_symbols, rs)
                           : gen_setting2(task.num_symbols, rs);
}

std::vector<Tensor> RetrievalModel::params() const {
  std::vector<Tensor> p{embed, w_key, w_query};
  if (w_beta.defined()) p.push_back(w_beta);
  return p;
}

RetrievalModel init_model(const ModelConfig& config, const Rng& rng) {
  RetrievalModel m;
  m.config = config;
  const int S = config.num_symbols;
  const int d_in = config.d_emb + S;
  if (config.memory == MemoryKind::FastWeight) {
    const bool sum_norm = config.norm == Normalization::SumNorm;
    m.feature_map = make_feature_map(config.phi, config.d_key, config.nu,
                                     config.m, sum_norm, rng);
    m.feature_map.redraw_policy = config.redraw;
  }
  auto normal_init = [&](const char* label, int rows, int cols) {
    RngStream rs = rng.stream(label);
    const double std = 1.0 / std::sqrt(static_cast<double>(cols));
    return Tensor::param(std * rs.normal_matrix(rows, cols));
  };
  m.embed = normal_init("init-embed", config.d_emb, S);
  m.w_key = normal_init("init-wkey", config.d_key, d_in);
  m.w_query = normal_init("init-wquery", config.d_key, config.d_emb);
  if (config.memory == MemoryKind::FastWeight &&
      config.rule == UpdateRule::Delta) {
    // beta starts at sigmoid(0) = 0.5
    m.w_beta = Tensor::param(Matrix::Zero(1, d_in));
  }
  return m;
}

Tensor model_forward(Tape& tape, const RetrievalModel& model,
                     const FeatureMap& fm, const Episode& episode,
                     const std::vector<int>& query_syms) {
  const auto& cfg = model.config;
  const int S = cfg.num_symbols;
  const int L = static_cast<int>(episode.key_syms.size());

  // one-hot value vectors, fixed basis
  Matrix value_mat = Matrix::Zero(S, L);
  for (int i = 0; i < L; ++i) value_mat(episode.value_idx[i], i) = 1.0;
  Tensor values = Tensor::constant(value_mat);

  Tensor e_keys = gather_cols(tape, model.embed, episode.key_syms);
  Tensor x = concat_rows(tape, e_keys, values);  // (d_emb + S) x L
  Tensor keys = matmul(tape, model.w_key, x);    // d_key x L

  Tensor e_query = gather_cols(tape, model.embed, query_syms);
  Tensor queries = matmul(tape, model.w_query, e_query);  // d_key x Q

  if (cfg.memory == MemoryKind::SoftmaxBaseline) {
    Tensor logits = matmul_tn(tape, keys, queries);  // L x Q
    Tensor attn = softmax_cols(tape, logits);
    return matmul(tape, values, attn);  // S x Q
  }

  Tensor phi_k = apply_phi(tape, fm, keys);
  Tensor phi_q = apply_phi(tape, fm, queries);
  Tensor beta;
  if (cfg.rule == UpdateRule::Delta)
    beta = sigmoid(tape, matmul(tape, model.w_beta, x));  // 1 x L

  SequenceConfig seq{cfg.rule, cfg.norm, kEpsGuard};
  return fast_weight_sequence(tape, phi_k, values, beta, phi_q, seq,
                              /*per_step_queries=*/false);
}

double retrieval_loss(const Vector& v_hat, const Vector& v_star) {
  if (v_hat.size() != v_star.size())
    throw ShapeError("retrieval_loss: dimension mismatch");
  return 0.5 * (v_star - v_hat).squaredNorm();
}

Tensor retrieval_loss_op(Tape& tape, const Tensor& v_hat,
                         const Matrix& targets) {
  Tensor total = half_squared_error(tape, v_hat, targets);
  const double q = static_cast<double>(targets.cols());
  return q == 1.0 ? total : scale(tape, total, 1.0 / q);
}

EvalResult evaluate(const RetrievalModel& model,
                    const RetrievalTaskConfig& task, const Rng& rng,
                    int num_sequences) {
  EvalResult res;
  double loss_sum = 0.0;
  int correct = 0, total = 0;
  for (int s = 0; s < num_sequences; ++s) {
    RngStream rs = rng.stream("eval-episodes", static_cast<std::uint64_t>(s));
    Episode ep = gen_episode(task, rs);

    // all distinct keys occurring in the sequence, with their latest binding
    std::vector<int> queries;
    std::vector<int> targets;
    std::vector<char> seen(static_cast<std::size_t>(task.num_symbols), 0);
    for (int i = static_cast<int>(ep.key_syms.size()) - 1; i >= 0; --i) {
      const int k = ep.key_syms[i];
      if (!seen[k]) {
        seen[k] = 1;
        queries.push_back(k);
        targets.push_back(ep.value_idx[i]);
      }
    }

    Tape tape(/*enabled=*/false);
    Tensor v_hat = model_forward(tape, model, model.feature_map, ep, queries);
    for (std::size_t j = 0; j < queries.size(); ++j) {
      Vector target = Vector::Zero(task.num_symbols);
      target(targets[j]) = 1.0;
      loss_sum += retrieval_loss(v_hat.value().col(j), target);
      Eigen::Index argmax;
      v_hat.value().col(j).maxCoeff(&argmax);
      if (argmax == targets[j]) ++correct;
      ++total;
    }
  }
  res.num_queries = total;
  res.mean_loss = loss_sum / total;
  res.accuracy = static_cast<double>(correct) / total;
  return res;
}

}  // namespace fwl
