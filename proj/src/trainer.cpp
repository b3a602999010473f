#include "fwl/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

namespace fwl {

const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::Stalled: return "stalled";
    case RunStatus::Capped: return "capped";
    case RunStatus::Failed: return "failed";
  }
  return "unknown";
}

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState st;
  for (const auto& p : params) {
    st.m1.push_back(Matrix::Zero(p.rows(), p.cols()));
    st.m2.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return st;
}

void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& config) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, state.t);
  const double bc2 = 1.0 - std::pow(config.adam_beta2, state.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Matrix g = p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols());
    if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient");
    state.m1[i] = config.adam_beta1 * state.m1[i] + (1.0 - config.adam_beta1) * g;
    state.m2[i] = config.adam_beta2 * state.m2[i] +
                  (1.0 - config.adam_beta2) * g.cwiseProduct(g);
    Matrix m_hat = state.m1[i] / bc1;
    Matrix v_hat = state.m2[i] / bc2;
    p.value().array() -=
        config.lr * m_hat.array() /
        (v_hat.array().sqrt() + config.adam_eps);
    p.zero_grad();
  }
}

RunRecord train_until(RetrievalModel& model, const RetrievalTaskConfig& task,
                      const TrainConfig& config, const Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.seed = rng.master_seed();
  rec.best_eval_loss = std::numeric_limits<double>::infinity();

  auto params = model.params();
  AdamState adam = make_adam_state(params);
  int best_step = 0;
  const bool redraw = model.config.memory == MemoryKind::FastWeight &&
                      model.config.phi == PhiKind::Favor &&
                      model.config.redraw == RedrawPolicy::PerMinibatch;

  auto finish = [&](RunStatus status) {
    rec.status = status;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return rec;
  };

  for (int step = 1; step <= config.max_steps; ++step) {
    FeatureMap fm = model.feature_map;
    if (redraw) {
      FeatureMap redrawable = model.feature_map;
      redrawable.redraw_policy = RedrawPolicy::PerMinibatch;
      fm = redraw_features(redrawable, rng, static_cast<std::uint64_t>(step));
    }

    double train_loss = 0.0;
    try {
      for (int b = 0; b < config.batch_size; ++b) {
        RngStream rs = rng.stream(
            "train-episodes",
            static_cast<std::uint64_t>(step) * config.batch_size + b);
        Episode ep = gen_episode(task, rs);
        Tape tape;
        Tensor v_hat =
            model_forward(tape, model, fm, ep, {ep.query_sym});
        Matrix target = Matrix::Zero(task.num_symbols, 1);
        target(ep.target_idx, 0) = 1.0;
        Tensor loss = scale(tape, half_squared_error(tape, v_hat, target),
                            1.0 / config.batch_size);
        train_loss += loss.value()(0, 0);
        tape.backward(loss);
      }
      adam_step(params, adam, config);
    } catch (const NumericError& e) {
      rec.steps_run = step;
      rec.diagnostic = e.what();
      return finish(RunStatus::Failed);
    }

    if (step % config.eval_every == 0) {
      EvalResult ev = evaluate(model, task, rng);
      rec.steps_run = step;
      if (!std::isfinite(ev.mean_loss)) {
        rec.diagnostic = "evaluation loss diverged";
        return finish(RunStatus::Failed);
      }
      rec.history.push_back({step, train_loss, ev.mean_loss, ev.accuracy});
      if (ev.mean_loss < rec.best_eval_loss) {
        rec.best_eval_loss = ev.mean_loss;
        rec.accuracy = ev.accuracy;
        best_step = step;
      }
      if (rec.best_eval_loss < config.loss_threshold)
        return finish(RunStatus::Converged);
      if (step - best_step >= config.patience)
        return finish(RunStatus::Stalled);
    }
  }
  rec.steps_run = config.max_steps;
  return finish(RunStatus::Capped);
}

SweepVariant parse_variant(const std::string& name, int d_key, UpdateRule rule,
                           Normalization norm) {
  SweepVariant v;
  v.name = name;
  v.model.d_key = d_key;
  v.model.rule = rule;
  v.model.norm = norm;
  if (name == "softmax") {
    v.model.memory = MemoryKind::SoftmaxBaseline;
  } else if (name == "identity") {
    v.model.phi = PhiKind::Identity;
  } else if (name == "elu1") {
    v.model.phi = PhiKind::Elu1;
  } else if (name.rfind("dpfp", 0) == 0) {
    v.model.phi = PhiKind::Dpfp;
    v.model.nu = std::stoi(name.substr(4));
  } else if (name.rfind("favor", 0) == 0) {
    v.model.phi = PhiKind::Favor;
    v.model.m = std::stoi(name.substr(5));
  } else {
    throw std::invalid_argument("unknown variant: " + name);
  }
  return v;
}

std::vector<SweepCell> capacity_sweep(const std::vector<SweepVariant>& variants,
                                      const std::vector<int>& s_list,
                                      int setting, const TrainConfig& config,
                                      const Rng& rng, int workers) {
  if (variants.empty() || s_list.empty())
    throw std::invalid_argument("capacity_sweep: empty grid");
  const std::size_t n = variants.size() * s_list.size();
  std::vector<SweepCell> cells(n);
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    for (std::size_t si = 0; si < s_list.size(); ++si) {
      SweepCell& c = cells[vi * s_list.size() + si];
      c.variant = variants[vi].name;
      c.model = variants[vi].model;
      c.model.num_symbols = s_list[si];
      c.task.num_symbols = s_list[si];
      c.task.setting = setting;
    }
  }

  auto run_cell = [&](std::size_t i) {
    SweepCell& c = cells[i];
    // per-cell substream keyed by grid position, so results do not depend
    // on the worker pool
    Rng cell_rng(rng.stream("sweep-cell", static_cast<std::uint64_t>(i)).next_u64());
    try {
      RetrievalModel model = init_model(c.model, cell_rng);
      c.run = train_until(model, c.task, config, cell_rng);
    } catch (const std::exception& e) {
      c.run.status = RunStatus::Failed;
      c.run.diagnostic = e.what();
      c.run.seed = cell_rng.master_seed();
    }
    c.run.seed = cell_rng.master_seed();
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int k = std::min<std::size_t>(workers, n);
    pool.reserve(k);
    for (int w = 0; w < k; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  return cells;
}

}  // namespace fwl
