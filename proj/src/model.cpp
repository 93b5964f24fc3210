// SPDX-License-Identifier: Apache-2.0
#include "insure/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace insure::model {

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("model input_dim must be positive");
  if (n_classes < 2) throw ConfigError("model needs at least two classes");
  if (n_domains < 1) throw ConfigError("model needs at least one domain");
  if (!probe && (hidden_dim < 1 || hidden_layers < 1))
    throw ConfigError("encoder needs positive hidden width and depth");
  if (probe && feature_dim > 0 && feature_dim != input_dim)
    throw ConfigError("probe mode requires feature_dim == input_dim");
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  RandomStream rng(seed);
  const Index k = config.resolved_feature_dim();

  ModelParams p;
  p.config = config;

  auto fan_in_uniform = [&rng](Index in, Index out) {
    const Scalar a = 1.0 / std::sqrt(static_cast<Scalar>(in));
    return rng.uniform_matrix(in, out, -a, a);
  };

  if (!config.probe) {
    Index in = config.input_dim;
    for (int l = 0; l < config.hidden_layers; ++l) {
      p.enc_w.push_back(fan_in_uniform(in, config.hidden_dim));
      p.enc_b.push_back(Matrix::Zero(1, config.hidden_dim));
      in = config.hidden_dim;
    }
    p.w_mu = fan_in_uniform(in, k);
    p.b_mu = Matrix::Zero(1, k);
    p.w_lv = fan_in_uniform(in, k);
    p.b_lv = Matrix::Zero(1, k);
  }

  p.mask_logits = Matrix::Constant(1, k, -1.0);  // all-on under the sigma < 0.5 convention
  p.f_w = fan_in_uniform(k, config.n_classes);
  p.f_b = Matrix::Zero(1, config.n_classes);
  p.g_w = fan_in_uniform(k, config.n_domains);
  p.g_b = Matrix::Zero(1, config.n_domains);
  return p;
}

std::vector<NamedParam> param_refs(ModelParams& p) {
  std::vector<NamedParam> refs;
  for (std::size_t l = 0; l < p.enc_w.size(); ++l) {
    refs.push_back({"enc_w" + std::to_string(l), &p.enc_w[l], false});
    refs.push_back({"enc_b" + std::to_string(l), &p.enc_b[l], false});
  }
  if (!p.config.probe) {
    refs.push_back({"w_mu", &p.w_mu, false});
    refs.push_back({"b_mu", &p.b_mu, false});
    refs.push_back({"w_lv", &p.w_lv, false});
    refs.push_back({"b_lv", &p.b_lv, false});
  }
  refs.push_back({"mask", &p.mask_logits, true});
  refs.push_back({"f_w", &p.f_w, false});
  refs.push_back({"f_b", &p.f_b, false});
  refs.push_back({"g_w", &p.g_w, false});
  refs.push_back({"g_b", &p.g_b, false});
  return refs;
}

std::vector<NamedParamView> param_refs(const ModelParams& p) {
  std::vector<NamedParamView> views;
  for (const NamedParam& ref : param_refs(const_cast<ModelParams&>(p)))
    views.push_back({ref.name, ref.matrix, ref.is_mask});
  return views;
}

ModelGraph register_params(Tape& tape, ModelParams& params) {
  ModelGraph g;
  g.config = &params.config;
  for (const NamedParam& ref : param_refs(params)) {
    Var v = tape.leaf(*ref.matrix);
    g.leaves.push_back({ref.name, v});
    if (ref.name.rfind("enc_w", 0) == 0)
      g.enc_w.push_back(v);
    else if (ref.name.rfind("enc_b", 0) == 0)
      g.enc_b.push_back(v);
    else if (ref.name == "w_mu")
      g.w_mu = v;
    else if (ref.name == "b_mu")
      g.b_mu = v;
    else if (ref.name == "w_lv")
      g.w_lv = v;
    else if (ref.name == "b_lv")
      g.b_lv = v;
    else if (ref.name == "mask")
      g.mask_logits = v;
    else if (ref.name == "f_w")
      g.f_w = v;
    else if (ref.name == "f_b")
      g.f_b = v;
    else if (ref.name == "g_w")
      g.g_w = v;
    else if (ref.name == "g_b")
      g.g_b = v;
  }
  return g;
}

EncodeResult encode(Tape& tape, const ModelGraph& graph, Var x, bool stochastic,
                    RandomStream* rng) {
  const ModelConfig& cfg = *graph.config;
  if (tape.value(x).cols() != cfg.input_dim)
    throw ShapeError("encode: input has width " + std::to_string(tape.value(x).cols()) +
                     ", model expects " + std::to_string(cfg.input_dim));

  if (cfg.probe) return EncodeResult{x, x, Var{}, false};

  Var h = x;
  for (std::size_t l = 0; l < graph.enc_w.size(); ++l) {
    try {
      h = sigmoid(add_rowvec(matmul(h, graph.enc_w[l]), graph.enc_b[l]));
    } catch (const NumericError& e) {
      throw NumericError("encoder layer " + std::to_string(l) + ": " + e.what());
    }
  }
  Var mu, logvar;
  try {
    mu = add_rowvec(matmul(h, graph.w_mu), graph.b_mu);
    logvar = add_rowvec(matmul(h, graph.w_lv), graph.b_lv);
  } catch (const NumericError& e) {
    throw NumericError(std::string("encoder heads: ") + e.what());
  }

  Var z = mu;
  if (stochastic) {
    if (rng == nullptr) throw ContractError("stochastic encode needs a random stream");
    const Index rows = tape.value(mu).rows();
    const Index cols = tape.value(mu).cols();
    Var eps = tape.constant(rng->normal_matrix(rows, cols));
    Var sigma = exp(scale(logvar, 0.5));  // exp(logvar / 2) > 0 always
    z = add(mu, mul(sigma, eps));
  }
  return EncodeResult{z, mu, logvar, true};
}

DisentangleResult disentangle(Tape& tape, Var z, Var mask_logits, MaskKind kind) {
  const Index k = tape.value(z).cols();
  const Index rows = tape.value(z).rows();
  if (tape.value(mask_logits).cols() != k || tape.value(mask_logits).rows() != 1)
    throw ShapeError("disentangle: mask logits are " +
                     std::to_string(tape.value(mask_logits).rows()) + "x" +
                     std::to_string(tape.value(mask_logits).cols()) + ", feature width is " +
                     std::to_string(k));

  Var m = kind == MaskKind::kHard
              ? ste_mask(mask_logits)
              : sub(tape.constant(Matrix::Ones(1, k)), sigmoid(mask_logits));
  // Tile the 1 x k mask over the batch via ones * m; matmul's backward
  // column-sums the incoming gradient back onto the row vector.
  Var tiled = matmul(tape.constant(Matrix::Ones(rows, 1)), m);
  Var z_star = mul(z, tiled);
  Var complement = sub(tape.constant(Matrix::Ones(rows, k)), tiled);
  Var z_prime = mul(z, complement);
  return DisentangleResult{z_star, z_prime, m};
}

Var affine(Tape& tape, Var feat, Var w, Var b) {
  (void)tape;
  return add_rowvec(matmul(feat, w), b);
}

Matrix encode_mean(const ModelParams& p, const Matrix& x) {
  if (x.cols() != p.config.input_dim)
    throw ShapeError("encode: input has width " + std::to_string(x.cols()) + ", model expects " +
                     std::to_string(p.config.input_dim));
  if (p.config.probe) return x;
  Matrix h = x;
  for (std::size_t l = 0; l < p.enc_w.size(); ++l) {
    Matrix a = h * p.enc_w[l];
    a.rowwise() += p.enc_b[l].row(0);
    h = sigmoid_values(a);
    if (!h.allFinite()) throw NumericError("encoder layer " + std::to_string(l) + ": non-finite");
  }
  Matrix mu = h * p.w_mu;
  mu.rowwise() += p.b_mu.row(0);
  return mu;
}

Matrix mask_values(const ModelParams& p, MaskKind kind) {
  if (kind == MaskKind::kHard) return hard_mask_values(p.mask_logits);
  return Matrix::Ones(1, p.mask_logits.cols()) - sigmoid_values(p.mask_logits);
}

Matrix apply_mask(const ModelParams& p, const Matrix& z, MaskKind kind) {
  const Matrix m = mask_values(p, kind);
  return z.array().rowwise() * m.row(0).array();
}

namespace {

Matrix affine_probs(const Matrix& feat, const Matrix& w, const Matrix& b) {
  Matrix logits = feat * w;
  logits.rowwise() += b.row(0);
  return softmax_rows_values(logits);
}

}  // namespace

Matrix label_probs(const ModelParams& p, const Matrix& z_star) {
  return affine_probs(z_star, p.f_w, p.f_b);
}

Matrix domain_probs(const ModelParams& p, const Matrix& z_prime) {
  return affine_probs(z_prime, p.g_w, p.g_b);
}

std::vector<int> predict(const ModelParams& p, const Matrix& x, MaskKind infer_mode) {
  const Matrix z = encode_mean(p, x);
  const Matrix probs = label_probs(p, apply_mask(p, z, infer_mode));
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    probs.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---- Checkpoint io ----

namespace {

std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_params(std::ostream& out, ModelParams& p) {
  for (const NamedParam& ref : param_refs(p)) {
    const Matrix& m = *ref.matrix;
    out << ref.name << ": " << m.rows() << " " << m.cols();
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) out << " " << fmt(m(i, j));
    out << "\n";
  }
}

long read_kv_long(std::istream& in, const std::string& key, long& line_no) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing '" + key + "'", line_no + 1);
  ++line_no;
  const std::string prefix = key + ": ";
  if (line.rfind(prefix, 0) != 0) throw ParseError("expected '" + key + ": ...'", line_no);
  return std::strtol(line.c_str() + prefix.size(), nullptr, 10);
}

void read_params(std::istream& in, ModelParams& p, long& line_no) {
  for (const NamedParam& ref : param_refs(p)) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing parameter '" + ref.name + "'", line_no + 1);
    ++line_no;
    std::istringstream is(line);
    std::string name;
    long rows = 0, cols = 0;
    if (!(is >> name) || name != ref.name + ":")
      throw ParseError("expected parameter '" + ref.name + "'", line_no);
    if (!(is >> rows >> cols)) throw ParseError("bad shape for '" + ref.name + "'", line_no);
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) {
        std::string tok;
        if (!(is >> tok)) throw ParseError("parameter '" + ref.name + "' truncated", line_no);
        char* end = nullptr;
        m(i, j) = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw ParseError("bad number in '" + ref.name + "'", line_no);
      }
    *ref.matrix = std::move(m);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot open '" + path + "' for writing");
  const ModelConfig& c = ckpt.raw.config;
  out << "INSURE-CKPT v1\n";
  out << "config_hash: " << ckpt.config_hash << "\n";
  out << "input_dim: " << c.input_dim << "\n";
  out << "feature_dim: " << c.feature_dim << "\n";
  out << "hidden_dim: " << c.hidden_dim << "\n";
  out << "hidden_layers: " << c.hidden_layers << "\n";
  out << "n_classes: " << c.n_classes << "\n";
  out << "n_domains: " << c.n_domains << "\n";
  out << "probe: " << (c.probe ? 1 : 0) << "\n";
  out << "has_sma: " << (ckpt.sma.has_value() ? 1 : 0) << "\n";
  out << "raw:\n";
  ModelParams raw = ckpt.raw;
  write_params(out, raw);
  if (ckpt.sma) {
    out << "sma:\n";
    ModelParams sma = *ckpt.sma;
    write_params(out, sma);
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open '" + path + "'");
  long line_no = 0;
  std::string line;
  if (!std::getline(in, line) || line != "INSURE-CKPT v1")
    throw ParseError("expected header 'INSURE-CKPT v1'", 1);
  ++line_no;

  Checkpoint ckpt;
  if (!std::getline(in, line)) throw ParseError("missing 'config_hash'", line_no + 1);
  ++line_no;
  if (line.rfind("config_hash: ", 0) != 0) throw ParseError("expected 'config_hash: ...'", line_no);
  ckpt.config_hash = std::strtoull(line.c_str() + 13, nullptr, 10);
  ModelConfig c;
  c.input_dim = read_kv_long(in, "input_dim", line_no);
  c.feature_dim = read_kv_long(in, "feature_dim", line_no);
  c.hidden_dim = read_kv_long(in, "hidden_dim", line_no);
  c.hidden_layers = static_cast<int>(read_kv_long(in, "hidden_layers", line_no));
  c.n_classes = static_cast<int>(read_kv_long(in, "n_classes", line_no));
  c.n_domains = static_cast<int>(read_kv_long(in, "n_domains", line_no));
  c.probe = read_kv_long(in, "probe", line_no) != 0;
  const bool has_sma = read_kv_long(in, "has_sma", line_no) != 0;

  if (!std::getline(in, line) || line != "raw:") throw ParseError("expected 'raw:' section", ++line_no);
  ++line_no;
  ckpt.raw = init_model(c, 0);  // shapes only; values overwritten below
  read_params(in, ckpt.raw, line_no);
  if (has_sma) {
    if (!std::getline(in, line) || line != "sma:")
      throw ParseError("expected 'sma:' section", ++line_no);
    ++line_no;
    ModelParams sma = init_model(c, 0);
    read_params(in, sma, line_no);
    ckpt.sma = std::move(sma);
  }
  return ckpt;
}

}  // namespace insure::model
