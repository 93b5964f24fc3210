// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "insure/synth.hpp"
#include "insure/trainer.hpp"

namespace insure::config {

/// Flat, versioned key=value run configuration. Every knob of the generator,
/// model and trainer lives here; unknown keys are rejected so manifests stay
/// authoritative.
struct RunConfig {
  // generator
  Index k_i = 8, k_ii = 8, k_iii = 8, k_iv = 8;
  Scalar noise_std = 0.3;
  std::string mixing = "identity";  // identity | random-orthogonal
  int n_domains = 4;
  int n_classes = 4;
  int n_per_domain = 500;

  // model
  Index hidden_dim = 64;
  int hidden_layers = 2;
  Index feature_dim = 0;  // 0 = input width
  bool probe = false;

  // training
  int steps = 5000;
  int batch_size = 32;
  Scalar lr_mask = 3.5e-4;
  Scalar lr_rest = 5e-5;
  Scalar alpha = 9.0;
  Scalar beta = 1.0;
  Scalar gamma = 1.0;
  Scalar eps_ib = 1e-7;
  int sma_start = 100;
  std::string mode = "multi-dg";  // multi-dg | single-dg
  std::string train_mask = "hard";  // hard | soft
  bool stochastic_encode = true;
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  synth::RegionSpec region_spec() const;
  train::TrainConfig train_config() const;

  /// Canonical (ordered) key=value pairs; serialization and hashing use it.
  std::vector<std::pair<std::string, std::string>> items() const;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
void write_config(const RunConfig& cfg, std::ostream& out);

/// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace insure::config
