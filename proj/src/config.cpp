// SPDX-License-Identifier: Apache-2.0
#include "insure/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace insure::config {

namespace {

std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

synth::RegionSpec RunConfig::region_spec() const {
  synth::RegionSpec spec;
  spec.k_i = k_i;
  spec.k_ii = k_ii;
  spec.k_iii = k_iii;
  spec.k_iv = k_iv;
  spec.noise_std = noise_std;
  if (mixing == "identity")
    spec.mixing = synth::Mixing::kIdentity;
  else if (mixing == "random-orthogonal")
    spec.mixing = synth::Mixing::kRandomOrthogonal;
  else
    throw ConfigError("unknown mixing '" + mixing + "'");
  return spec;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = batch_size;
  cfg.lr_mask = lr_mask;
  cfg.lr_rest = lr_rest;
  cfg.weights.alpha = alpha;
  cfg.weights.beta = beta;
  cfg.weights.gamma = gamma;
  cfg.weights.eps_ib = eps_ib;
  cfg.sma_start = sma_start;
  if (mode == "multi-dg")
    cfg.mode = losses::TrainMode::kMultiDG;
  else if (mode == "single-dg")
    cfg.mode = losses::TrainMode::kSingleDG;
  else
    throw ConfigError("unknown mode '" + mode + "'");
  if (train_mask == "hard")
    cfg.train_mask = model::MaskKind::kHard;
  else if (train_mask == "soft")
    cfg.train_mask = model::MaskKind::kSoft;
  else
    throw ConfigError("unknown train_mask '" + train_mask + "'");
  cfg.stochastic_encode = stochastic_encode;
  cfg.checkpoint_every = checkpoint_every;
  cfg.seed = seed;
  cfg.hidden_dim = hidden_dim;
  cfg.hidden_layers = hidden_layers;
  cfg.feature_dim = feature_dim;
  cfg.probe = probe;
  return cfg;
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  return {
      {"k_i", std::to_string(k_i)},
      {"k_ii", std::to_string(k_ii)},
      {"k_iii", std::to_string(k_iii)},
      {"k_iv", std::to_string(k_iv)},
      {"noise_std", fmt(noise_std)},
      {"mixing", mixing},
      {"n_domains", std::to_string(n_domains)},
      {"n_classes", std::to_string(n_classes)},
      {"n_per_domain", std::to_string(n_per_domain)},
      {"hidden_dim", std::to_string(hidden_dim)},
      {"hidden_layers", std::to_string(hidden_layers)},
      {"feature_dim", std::to_string(feature_dim)},
      {"probe", probe ? "true" : "false"},
      {"steps", std::to_string(steps)},
      {"batch_size", std::to_string(batch_size)},
      {"lr_mask", fmt(lr_mask)},
      {"lr_rest", fmt(lr_rest)},
      {"alpha", fmt(alpha)},
      {"beta", fmt(beta)},
      {"gamma", fmt(gamma)},
      {"eps_ib", fmt(eps_ib)},
      {"sma_start", std::to_string(sma_start)},
      {"mode", mode},
      {"train_mask", train_mask},
      {"stochastic_encode", stochastic_encode ? "true" : "false"},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"seed", std::to_string(seed)},
  };
}

namespace {

bool parse_bool(const std::string& v, long line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("expected a boolean, got '" + v + "'", line);
}

long parse_int(const std::string& v, long line) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ParseError("expected an integer, got '" + v + "'", line);
  return x;
}

Scalar parse_num(const std::string& v, long line) {
  char* end = nullptr;
  const Scalar x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw ParseError("expected a number, got '" + v + "'", line);
  return x;
}

}  // namespace

RunConfig parse_config(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty config", 1);
  ++line_no;
  if (trim(line) != "insure-config v1")
    throw ParseError("expected version line 'insure-config v1'", line_no);

  RunConfig cfg;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key=value'", line_no);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));

    if (key == "k_i") cfg.k_i = parse_int(value, line_no);
    else if (key == "k_ii") cfg.k_ii = parse_int(value, line_no);
    else if (key == "k_iii") cfg.k_iii = parse_int(value, line_no);
    else if (key == "k_iv") cfg.k_iv = parse_int(value, line_no);
    else if (key == "noise_std") cfg.noise_std = parse_num(value, line_no);
    else if (key == "mixing") cfg.mixing = value;
    else if (key == "n_domains") cfg.n_domains = static_cast<int>(parse_int(value, line_no));
    else if (key == "n_classes") cfg.n_classes = static_cast<int>(parse_int(value, line_no));
    else if (key == "n_per_domain") cfg.n_per_domain = static_cast<int>(parse_int(value, line_no));
    else if (key == "hidden_dim") cfg.hidden_dim = parse_int(value, line_no);
    else if (key == "hidden_layers") cfg.hidden_layers = static_cast<int>(parse_int(value, line_no));
    else if (key == "feature_dim") cfg.feature_dim = parse_int(value, line_no);
    else if (key == "probe") cfg.probe = parse_bool(value, line_no);
    else if (key == "steps") cfg.steps = static_cast<int>(parse_int(value, line_no));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value, line_no));
    else if (key == "lr_mask") cfg.lr_mask = parse_num(value, line_no);
    else if (key == "lr_rest") cfg.lr_rest = parse_num(value, line_no);
    else if (key == "alpha") cfg.alpha = parse_num(value, line_no);
    else if (key == "beta") cfg.beta = parse_num(value, line_no);
    else if (key == "gamma") cfg.gamma = parse_num(value, line_no);
    else if (key == "eps_ib") cfg.eps_ib = parse_num(value, line_no);
    else if (key == "sma_start") cfg.sma_start = static_cast<int>(parse_int(value, line_no));
    else if (key == "mode") cfg.mode = value;
    else if (key == "train_mask") cfg.train_mask = value;
    else if (key == "stochastic_encode") cfg.stochastic_encode = parse_bool(value, line_no);
    else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(parse_int(value, line_no));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::strtoull(value.c_str(), nullptr, 10));
    else throw ParseError("unknown key '" + key + "'", line_no);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open config '" + path + "'");
  return parse_config(in);
}

void write_config(const RunConfig& cfg, std::ostream& out) {
  out << "insure-config v1\n";
  for (const auto& [key, value] : cfg.items()) out << key << "=" << value << "\n";
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::ostringstream os;
  write_config(cfg, os);
  const std::string s = os.str();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace insure::config
