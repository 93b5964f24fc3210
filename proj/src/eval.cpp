// SPDX-License-Identifier: Apache-2.0
#include "insure/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "insure/losses.hpp"
#include "insure/rng.hpp"

namespace insure::eval {

Scalar accuracy(const model::ModelParams& params, const synth::SynthDataset& dataset,
                model::MaskKind infer_mode) {
  if (dataset.size() == 0) throw ContractError("accuracy: empty dataset");
  const std::vector<int> pred = model::predict(params, dataset.x, infer_mode);
  long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == dataset.labels[i]) ++correct;
  return static_cast<Scalar>(correct) / static_cast<Scalar>(pred.size());
}

MaskRecovery mask_recovery(const Matrix& mask_logits,
                           const std::vector<synth::Region>& region_of_dim) {
  if (static_cast<std::size_t>(mask_logits.cols()) != region_of_dim.size())
    throw ShapeError("mask_recovery: mask has " + std::to_string(mask_logits.cols()) +
                     " dims, region map has " + std::to_string(region_of_dim.size()));
  const Matrix on = hard_mask_values(mask_logits);
  MaskRecovery r;
  int hits = 0;
  for (Index j = 0; j < mask_logits.cols(); ++j) {
    const synth::Region reg = region_of_dim[static_cast<std::size_t>(j)];
    const bool relevant = reg == synth::Region::III || reg == synth::Region::IV;
    const bool is_on = on(0, j) > 0.5;
    if (relevant) ++r.target_count;
    if (is_on) ++r.on_count;
    if (relevant && is_on) ++hits;
  }
  if (r.on_count > 0) r.precision = static_cast<Scalar>(hits) / static_cast<Scalar>(r.on_count);
  r.recall = r.target_count > 0 ? static_cast<Scalar>(hits) / static_cast<Scalar>(r.target_count)
                                : 0.0;
  if (r.precision && (*r.precision + r.recall) > 0.0)
    r.f1 = 2.0 * *r.precision * r.recall / (*r.precision + r.recall);
  return r;
}

namespace {

void require_probe_alignment(const model::ModelParams& params, const synth::SynthDataset& dataset) {
  if (!params.config.probe)
    throw ContractError(
        "mask recovery needs probe mode: with a trained encoder the mask acts on learned "
        "features, not on the dataset's raw dimensions");
  if (dataset.mixing != synth::Mixing::kIdentity)
    throw ContractError(
        "mask recovery needs identity mixing: the region map refers to latent coordinates");
  if (!dataset.has_region_map)
    throw ContractError("dataset carries no ground-truth region map");
}

}  // namespace

MaskRecovery mask_recovery(const model::ModelParams& params, const synth::SynthDataset& dataset) {
  require_probe_alignment(params, dataset);
  return mask_recovery(params.mask_logits, dataset.region_of_dim);
}

Scalar mask_recall_on_region(const model::ModelParams& params, const synth::SynthDataset& dataset,
                             synth::Region region) {
  require_probe_alignment(params, dataset);
  const Matrix on = hard_mask_values(params.mask_logits);
  int total = 0, kept = 0;
  for (Index j = 0; j < on.cols(); ++j) {
    if (dataset.region_of_dim[static_cast<std::size_t>(j)] != region) continue;
    ++total;
    if (on(0, j) > 0.5) ++kept;
  }
  if (total == 0) throw ContractError("no dimensions belong to the requested region");
  return static_cast<Scalar>(kept) / static_cast<Scalar>(total);
}

namespace {

Scalar empirical_entropy(const std::vector<int>& labels, int n_values) {
  std::vector<long> counts(static_cast<std::size_t>(n_values), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  Scalar h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    const Scalar p = static_cast<Scalar>(c) / static_cast<Scalar>(labels.size());
    h -= p * std::log(p);
  }
  return h;
}

constexpr int kProbeIters = 300;
constexpr Scalar kProbeLr = 0.1;

/// Softmax regression from zero init (convex, so no seed needed).
std::pair<Matrix, Matrix> fit_affine_probe(const Matrix& x, const std::vector<int>& y,
                                           int n_classes) {
  Matrix w = Matrix::Zero(x.cols(), n_classes);
  Matrix b = Matrix::Zero(1, n_classes);
  train::AdamState adam;
  for (int it = 0; it < kProbeIters; ++it) {
    Tape tape;
    Var wv = tape.leaf(w);
    Var bv = tape.leaf(b);
    Var logits = add_rowvec(matmul(tape.constant(x), wv), bv);
    Var ce = losses::cross_entropy(tape, logits, y);
    tape.backward(ce);
    const Matrix gw = tape.grad(wv);
    const Matrix gb = tape.grad(bv);
    train::adam_step({&w, &b}, {&gw, &gb}, {kProbeLr, kProbeLr}, adam);
  }
  return {w, b};
}

Scalar holdout_cross_entropy(const Matrix& x, const std::vector<int>& y, const Matrix& w,
                             const Matrix& b) {
  Matrix logits = x * w;
  logits.rowwise() += b.row(0);
  const Matrix log_probs = log_softmax_rows_values(logits);
  Scalar ce = 0.0;
  for (Index i = 0; i < x.rows(); ++i) ce -= log_probs(i, y[static_cast<std::size_t>(i)]);
  return ce / static_cast<Scalar>(x.rows());
}

}  // namespace

InfoEstimate estimate_label_information(const Matrix& features, const std::vector<int>& labels,
                                        std::uint64_t split_seed) {
  const Index n = features.rows();
  if (static_cast<std::size_t>(n) != labels.size())
    throw ShapeError("estimate_label_information: feature rows and label count differ");
  if (n < 200) throw ContractError("information estimation needs at least 200 samples");

  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  int present = 0;
  {
    std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
    for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
    for (bool s : seen) present += s ? 1 : 0;
  }
  if (present < 2) return {0.0, true};

  RandomStream rng(split_seed);
  const std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
  const Index n_train = (n * 8) / 10;
  Matrix x_tr(n_train, features.cols());
  Matrix x_ho(n - n_train, features.cols());
  std::vector<int> y_tr(static_cast<std::size_t>(n_train));
  std::vector<int> y_ho(static_cast<std::size_t>(n - n_train));
  for (Index i = 0; i < n; ++i) {
    const Index src = static_cast<Index>(perm[static_cast<std::size_t>(i)]);
    if (i < n_train) {
      x_tr.row(i) = features.row(src);
      y_tr[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    } else {
      x_ho.row(i - n_train) = features.row(src);
      y_ho[static_cast<std::size_t>(i - n_train)] = labels[static_cast<std::size_t>(src)];
    }
  }

  const auto [w, b] = fit_affine_probe(x_tr, y_tr, n_classes);
  const Scalar h_y = empirical_entropy(labels, n_classes);
  const Scalar ce = holdout_cross_entropy(x_ho, y_ho, w, b);
  return {std::max(0.0, h_y - ce), false};
}

std::vector<TheoremPoint> sufficiency_sweep(
    const std::vector<std::pair<int, model::ModelParams>>& checkpoints,
    const synth::SynthDataset& data, std::uint64_t split_seed) {
  std::vector<TheoremPoint> points;
  points.reserve(checkpoints.size());
  for (const auto& [step, params] : checkpoints) {
    const Matrix z = model::encode_mean(params, data.x);
    const Matrix z_star = model::apply_mask(params, z, model::MaskKind::kHard);
    Matrix full_logits = z * params.f_w;
    full_logits.rowwise() += params.f_b.row(0);
    Matrix star_logits = z_star * params.f_w;
    star_logits.rowwise() += params.f_b.row(0);

    TheoremPoint p;
    p.step = step;
    p.it_label = losses::kl_divergence_value(full_logits, star_logits);
    p.info_z = estimate_label_information(z, data.labels, split_seed).nats;
    p.info_zstar = estimate_label_information(z_star, data.labels, split_seed).nats;
    points.push_back(p);
  }
  return points;
}

namespace {

std::vector<Scalar> average_ranks(const std::vector<Scalar>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<Scalar> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const Scalar avg = (static_cast<Scalar>(i) + static_cast<Scalar>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Scalar spearman(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ContractError("spearman needs two equally sized series of length >= 2");
  const std::vector<Scalar> ra = average_ranks(a);
  const std::vector<Scalar> rb = average_ranks(b);
  const Scalar n = static_cast<Scalar>(a.size());
  Scalar ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  Scalar cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;  // a constant series carries no order
  return cov / std::sqrt(va * vb);
}

Scalar dimension_mi(const Matrix& x, Index dim, const std::vector<int>& targets, int n_targets,
                    int bins) {
  if (dim < 0 || dim >= x.cols()) throw ContractError("dimension_mi: dim out of range");
  const Index n = x.rows();
  const Scalar lo = x.col(dim).minCoeff();
  const Scalar hi = x.col(dim).maxCoeff();
  if (hi <= lo) return 0.0;

  Matrix joint = Matrix::Zero(bins, n_targets);
  for (Index i = 0; i < n; ++i) {
    int b = static_cast<int>((x(i, dim) - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    joint(b, targets[static_cast<std::size_t>(i)]) += 1.0;
  }
  joint /= static_cast<Scalar>(n);
  const Vector pb = joint.rowwise().sum();
  const RowVector pt = joint.colwise().sum();
  Scalar mi = 0.0;
  for (int b = 0; b < bins; ++b)
    for (int t = 0; t < n_targets; ++t) {
      const Scalar p = joint(b, t);
      if (p <= 0.0) continue;
      mi += p * std::log(p / (pb(b) * pt(t)));
    }
  // Miller-Madow correction for plug-in bias.
  mi -= static_cast<Scalar>((bins - 1) * (n_targets - 1)) / (2.0 * static_cast<Scalar>(n));
  return std::max(0.0, mi);
}

// ---- ablation ----

namespace {

struct Variant {
  std::string name;
  losses::LossToggles toggles;
};

const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> variants = {
      {"Baseline", {false, false, false}}, {"+msr", {false, false, true}},
      {"+IT", {true, false, false}},       {"+Puri", {false, true, false}},
      {"+msr+IT", {true, false, true}},    {"+msr+Puri", {false, true, true}},
      {"+IT+Puri", {true, true, false}},   {"Full", {true, true, true}},
  };
  return variants;
}

void run_tasks(std::size_t n_tasks, int jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<AblationRow> AblationResult::rows() const {
  std::vector<AblationRow> out;
  for (std::size_t v = 0; v < variant_names.size(); ++v) {
    AblationRow row;
    row.name = variant_names[v];
    Scalar total = 0.0;
    for (std::size_t d = 0; d < holdout_original_ids.size(); ++d) {
      Scalar s = 0.0;
      for (std::size_t k = 0; k < seeds.size(); ++k) s += accuracy[v][d][k];
      s /= static_cast<Scalar>(seeds.size());
      row.per_domain.push_back(s);
      total += s;
    }
    row.mean = total / static_cast<Scalar>(holdout_original_ids.size());
    Scalar var = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const Scalar diff = seed_mean(v, k) - row.mean;
      var += diff * diff;
    }
    row.std_over_seeds =
        seeds.size() > 1 ? std::sqrt(var / static_cast<Scalar>(seeds.size() - 1)) : 0.0;
    out.push_back(std::move(row));
  }
  return out;
}

Scalar AblationResult::seed_mean(std::size_t variant, std::size_t seed) const {
  Scalar s = 0.0;
  for (std::size_t d = 0; d < holdout_original_ids.size(); ++d) s += accuracy[variant][d][seed];
  return s / static_cast<Scalar>(holdout_original_ids.size());
}

AblationResult run_ablation(const synth::SynthDataset& dataset, const train::TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, int jobs) {
  if (dataset.n_domains < 2) throw ContractError("ablation needs a multi-domain dataset");
  if (seeds.empty()) throw ContractError("ablation needs at least one seed");

  const auto& variants = ablation_variants();
  const std::size_t n_dom = static_cast<std::size_t>(dataset.n_domains);
  AblationResult result;
  for (const Variant& v : variants) result.variant_names.push_back(v.name);
  for (std::size_t d = 0; d < n_dom; ++d)
    result.holdout_original_ids.push_back(dataset.original_domain_of(static_cast<int>(d)));
  result.seeds = seeds;
  result.accuracy.assign(variants.size(),
                         std::vector<std::vector<Scalar>>(n_dom, std::vector<Scalar>(seeds.size())));

  const std::size_t n_tasks = variants.size() * n_dom * seeds.size();
  run_tasks(n_tasks, jobs, [&](std::size_t task) {
    const std::size_t v = task / (n_dom * seeds.size());
    const std::size_t d = (task / seeds.size()) % n_dom;
    const std::size_t s = task % seeds.size();
    auto [tr, te] = synth::split_leave_one_out(dataset, static_cast<int>(d));
    train::TrainConfig cfg = base;
    cfg.toggles = variants[v].toggles;
    cfg.seed = seeds[s];
    const train::TrainResult run = train::train(cfg, tr);
    result.accuracy[v][d][s] = accuracy(run.inference_params(), te, model::MaskKind::kHard);
  });
  return result;
}

// ---- region-III experiment ----

std::vector<Region3Row> Region3Result::rows() const {
  const char* names[2] = {"label-purification (keeps region III)",
                          "domain-purification (discards region III)"};
  std::vector<Region3Row> out;
  for (std::size_t side = 0; side < 2; ++side) {
    Region3Row row;
    row.name = names[side];
    std::vector<Scalar> per_seed(seeds.size(), 0.0);
    Scalar acc = 0, riii = 0, riv = 0;
    const Scalar n = static_cast<Scalar>(holdout_original_ids.size() * seeds.size());
    for (std::size_t d = 0; d < holdout_original_ids.size(); ++d)
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        acc += accuracy[side][d][s];
        riii += recall_iii[side][d][s];
        riv += recall_iv[side][d][s];
        per_seed[s] += accuracy[side][d][s] / static_cast<Scalar>(holdout_original_ids.size());
      }
    row.accuracy = acc / n;
    row.recall_iii = riii / n;
    row.recall_iv = riv / n;
    Scalar var = 0.0;
    for (Scalar v : per_seed) var += (v - row.accuracy) * (v - row.accuracy);
    row.accuracy_std =
        seeds.size() > 1 ? std::sqrt(var / static_cast<Scalar>(seeds.size() - 1)) : 0.0;
    out.push_back(std::move(row));
  }
  return out;
}

Region3Result region3_experiment(const synth::SynthDataset& dataset,
                                 const train::TrainConfig& config,
                                 const std::vector<std::uint64_t>& seeds, int jobs) {
  if (!dataset.has_region_map) throw ContractError("region-III experiment needs a region map");
  if (dataset.dims_in(synth::Region::III).empty())
    throw ContractError("region-III experiment is vacuous: the dataset has no region-III dims");
  if (!config.probe)
    throw ContractError("region-III experiment runs in probe mode so masks align with regions");
  if (dataset.n_domains < 2) throw ContractError("region-III experiment needs several domains");

  const std::size_t n_dom = static_cast<std::size_t>(dataset.n_domains);
  Region3Result result;
  result.seeds = seeds;
  for (std::size_t d = 0; d < n_dom; ++d)
    result.holdout_original_ids.push_back(dataset.original_domain_of(static_cast<int>(d)));
  auto shape = std::vector<std::vector<std::vector<Scalar>>>(
      2, std::vector<std::vector<Scalar>>(n_dom, std::vector<Scalar>(seeds.size())));
  result.accuracy = shape;
  result.recall_iii = shape;
  result.recall_iv = shape;

  const std::size_t n_tasks = 2 * n_dom * seeds.size();
  run_tasks(n_tasks, jobs, [&](std::size_t task) {
    const std::size_t side = task / (n_dom * seeds.size());
    const std::size_t d = (task / seeds.size()) % n_dom;
    const std::size_t s = task % seeds.size();
    auto [tr, te] = synth::split_leave_one_out(dataset, static_cast<int>(d));
    train::TrainConfig cfg = config;
    cfg.puri_side = side == 0 ? losses::PurificationSide::kLabel : losses::PurificationSide::kDomain;
    cfg.seed = seeds[s];
    const train::TrainResult run = train::train(cfg, tr);
    const model::ModelParams& m = run.inference_params();
    result.accuracy[side][d][s] = accuracy(m, te, model::MaskKind::kHard);
    result.recall_iii[side][d][s] = mask_recall_on_region(m, tr, synth::Region::III);
    result.recall_iv[side][d][s] = mask_recall_on_region(m, tr, synth::Region::IV);
  });
  return result;
}

// ---- report files ----

void write_ablation_csv(const AblationResult& result, std::ostream& out) {
  out << "variant";
  for (int id : result.holdout_original_ids) out << ",holdout_" << id;
  out << ",mean,std_over_seeds\n";
  for (const AblationRow& row : result.rows()) {
    out << row.name;
    for (Scalar v : row.per_domain) out << "," << v;
    out << "," << row.mean << "," << row.std_over_seeds << "\n";
  }
}

void write_seed_stats_csv(const AblationResult& result, std::ostream& out) {
  out << "variant,seed,mean_accuracy\n";
  for (std::size_t v = 0; v < result.variant_names.size(); ++v)
    for (std::size_t s = 0; s < result.seeds.size(); ++s)
      out << result.variant_names[v] << "," << result.seeds[s] << "," << result.seed_mean(v, s)
          << "\n";
}

void write_region3_csv(const Region3Result& result, std::ostream& out) {
  out << "variant,accuracy,accuracy_std,recall_region_iii,recall_region_iv\n";
  for (const Region3Row& row : result.rows())
    out << row.name << "," << row.accuracy << "," << row.accuracy_std << "," << row.recall_iii
        << "," << row.recall_iv << "\n";
}

}  // namespace insure::eval
