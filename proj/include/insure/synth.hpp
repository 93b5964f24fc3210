// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "insure/common.hpp"

namespace insure::synth {

// Feature dimensions are built region by region (Venn regions of the
// domain/label diagram):
//   I   domain-specific, class-irrelevant   u ~ N(nu_d, noise)
//   II  domain-invariant, class-irrelevant  u ~ N(mu_const, noise)
//   III domain-specific, class-relevant     u ~ N(s_d .* mu'_y, noise)
//   IV  domain-invariant, class-relevant    u ~ N(mu_y, noise)
// Region III uses sign-preserving per-domain scales, so its class signal
// transfers to domains never seen in training.

enum class Region { I, II, III, IV };

const char* region_name(Region r);
Region region_from_name(const std::string& name);

enum class Mixing { kIdentity, kRandomOrthogonal };

struct RegionSpec {
  Index k_i = 8;
  Index k_ii = 8;
  Index k_iii = 8;
  Index k_iv = 8;
  Scalar noise_std = 0.3;
  Mixing mixing = Mixing::kIdentity;

  Index dims() const { return k_i + k_ii + k_iii + k_iv; }
};

struct SynthDataset {
  Matrix x;                  // n x d, one sample per row
  std::vector<int> labels;   // class index per sample
  std::vector<int> domains;  // dense domain index per sample
  int n_domains = 0;
  int n_classes = 0;

  // Ground truth. region_of_dim refers to latent (pre-mixing) coordinates,
  // which equal raw coordinates under identity mixing.
  bool has_region_map = true;
  std::vector<Region> region_of_dim;
  std::uint64_t generator_seed = 0;
  Scalar noise_std = 0.0;
  Mixing mixing = Mixing::kIdentity;
  Matrix mixing_matrix;  // d x d orthogonal; empty for identity

  // Latent parameters used by the generator (empty in degraded files).
  Matrix class_means_iv;     // C x k_iv
  Matrix class_means_iii;    // C x k_iii
  RowVector const_means_ii;  // 1 x k_ii
  Matrix domain_means_i;     // D x k_i
  Matrix domain_scales_iii;  // D x k_iii

  // After a leave-one-out split, maps dense domain index -> original index.
  std::vector<int> original_domain_ids;

  Index dim() const { return x.cols(); }
  Index size() const { return x.rows(); }
  int original_domain_of(int dense) const;
  std::vector<Index> dims_in(Region r) const;
};

SynthDataset generate(const RegionSpec& spec, int n_domains, int n_classes, int n_per_domain,
                      std::uint64_t seed);

/// Test split = exactly the target domain; train = the rest with dense
/// 0..N-2 domain indices (original ids recorded on both sides).
std::pair<SynthDataset, SynthDataset> split_leave_one_out(const SynthDataset& dataset,
                                                          int target_domain);

void save_dataset(const SynthDataset& dataset, const std::string& path);
SynthDataset load_dataset(const std::string& path);

void write_dataset(const SynthDataset& dataset, std::ostream& out);
SynthDataset read_dataset(std::istream& in);

}  // namespace insure::synth
