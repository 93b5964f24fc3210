// SPDX-License-Identifier: Apache-2.0
#include "insure/trainer.hpp"

#include <cmath>
#include <ostream>

namespace insure::train {

Scalar schedule_weight(int step, int horizon, Scalar final_value) {
  if (step < 0) throw ContractError("schedule step must be nonnegative");
  if (horizon <= 0) return final_value;
  const Scalar progress = static_cast<Scalar>(step) / static_cast<Scalar>(horizon);
  return final_value * (2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0);
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               const std::vector<Scalar>& lrs, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != lrs.size())
    throw ContractError("adam_step: params, grads and lrs must align");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i]->allFinite())
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));

  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++state.t;
  const Scalar bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Scalar>(state.t));
  const Scalar bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Scalar>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = *grads[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square()).matrix();
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    params[i]->array() -= lrs[i] * m_hat / (v_hat.sqrt() + cfg.eps);
  }
}

void sma_update(SmaState& state, const model::ModelParams& params, int step, int sma_start) {
  if (step < 1) throw ContractError("sma_update: steps are counted from 1");
  if (step < sma_start) return;
  if (!state.snapshot) {
    state.snapshot = params;
    state.count = 1;
    return;
  }
  ++state.count;
  const Scalar w = 1.0 / static_cast<Scalar>(state.count);
  model::ModelParams& avg = *state.snapshot;
  auto avg_refs = model::param_refs(avg);
  auto cur_refs = model::param_refs(params);
  for (std::size_t i = 0; i < avg_refs.size(); ++i)
    *avg_refs[i].matrix += w * (*cur_refs[i].matrix - *avg_refs[i].matrix);
}

const std::optional<model::ModelParams>& sma_params(const SmaState& state) {
  return state.snapshot;
}

namespace {

int count_mask_on(const model::ModelParams& params) {
  return static_cast<int>((params.mask_logits.array() < 0.0).count());
}

}  // namespace

TrainResult train(const TrainConfig& config, const synth::SynthDataset& train_set) {
  if (config.steps < 1) throw ConfigError("steps must be positive");
  if (config.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (config.lr_mask <= 0.0 || config.lr_rest <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (config.sma_start >= config.steps)
    throw ConfigError("sma_start must be smaller than the step count");
  if (config.mode == losses::TrainMode::kMultiDG && train_set.n_domains < 2)
    throw ContractError("multi-source training needs at least two training domains");
  if (train_set.size() < 1) throw ContractError("training set is empty");

  model::ModelConfig mc;
  mc.input_dim = train_set.dim();
  mc.feature_dim = config.feature_dim;
  mc.hidden_dim = config.hidden_dim;
  mc.hidden_layers = config.hidden_layers;
  mc.n_classes = train_set.n_classes;
  mc.n_domains = train_set.n_domains;
  mc.probe = config.probe;

  RandomStream root(config.seed);
  RandomStream init_rng = root.derive(0);
  RandomStream batch_rng = root.derive(1);
  RandomStream noise_rng = root.derive(2);
  RandomStream pair_rng = root.derive(3);

  TrainResult result;
  result.raw = model::init_model(mc, init_rng.seed());
  model::ModelParams& params = result.raw;
  const bool stochastic = config.stochastic_encode && !config.probe;

  AdamState adam;
  SmaState sma;
  const int n = static_cast<int>(train_set.size());
  const int batch = std::min(config.batch_size, n);

  if (config.checkpoint_every > 0) result.checkpoints.emplace_back(0, params);

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b)
      idx[static_cast<std::size_t>(b)] = static_cast<int>(batch_rng.below(static_cast<std::uint64_t>(n)));

    Matrix x(batch, train_set.dim());
    std::vector<int> y(static_cast<std::size_t>(batch));
    std::vector<int> d(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      x.row(b) = train_set.x.row(idx[static_cast<std::size_t>(b)]);
      y[static_cast<std::size_t>(b)] = train_set.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])];
      d[static_cast<std::size_t>(b)] = train_set.domains[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])];
    }
    const std::vector<std::size_t> shuffle = pair_rng.permutation(static_cast<std::size_t>(batch));

    try {
      Tape tape;
      model::ModelGraph graph = model::register_params(tape, params);
      Var x_var = tape.constant(x);
      model::EncodeResult enc = model::encode(tape, graph, x_var, stochastic, &noise_rng);
      model::DisentangleResult split =
          model::disentangle(tape, enc.z, graph.mask_logits, config.train_mask);

      losses::TotalLossInputs inputs;
      inputs.graph = &graph;
      inputs.encoded = enc;
      inputs.split = split;
      inputs.labels = &y;
      inputs.domains = &d;
      inputs.weights = config.weights;
      inputs.mode = config.mode;
      inputs.puri_side = config.puri_side;
      inputs.toggles = config.toggles;
      inputs.alpha_t = schedule_weight(step, config.steps, config.weights.alpha);
      inputs.beta_t = schedule_weight(step, config.steps, config.weights.beta);
      inputs.pair_shuffle = &shuffle;

      losses::TotalLoss loss = losses::total_loss(tape, inputs);
      tape.backward(loss.node);

      std::vector<Matrix*> prefs;
      std::vector<const Matrix*> grefs;
      std::vector<Scalar> lrs;
      std::vector<Matrix> grads;
      grads.reserve(graph.leaves.size());
      auto refs = model::param_refs(params);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        grads.push_back(tape.grad(graph.leaves[i].var));
        prefs.push_back(refs[i].matrix);
        lrs.push_back(refs[i].is_mask ? config.lr_mask : config.lr_rest);
      }
      for (const Matrix& g : grads) grefs.push_back(&g);
      adam_step(prefs, grefs, lrs, adam);

      StepRecord rec;
      rec.step = step;
      rec.loss = loss.values;
      rec.mask_on = count_mask_on(params);
      result.metrics.steps.push_back(rec);
    } catch (const NumericError& e) {
      // Abort with the last-good parameters; this step's update never ran.
      result.metrics.aborted = true;
      result.metrics.abort_step = step;
      result.metrics.abort_reason = e.what();
      break;
    }

    sma_update(sma, params, step, config.sma_start);
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0)
      result.checkpoints.emplace_back(step, params);
  }

  result.sma = sma.snapshot;
  return result;
}

void write_metrics_csv(const RunMetrics& metrics, std::ostream& out) {
  out << "step,dis,it_l,it_d,puri,msr,ib,total,alpha,beta,mask_on\n";
  for (const StepRecord& r : metrics.steps) {
    out << r.step << "," << r.loss.dis << "," << r.loss.it_l << "," << r.loss.it_d << ","
        << r.loss.puri << "," << r.loss.msr << "," << r.loss.ib << "," << r.loss.total << ","
        << r.loss.alpha_t << "," << r.loss.beta_t << "," << r.mask_on << "\n";
  }
}

}  // namespace insure::train
