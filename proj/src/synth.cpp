// SPDX-License-Identifier: Apache-2.0
#include "insure/synth.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "insure/rng.hpp"

namespace insure::synth {

namespace {

constexpr std::uint64_t kParamStream = 0x70617261;   // parameter draws
constexpr std::uint64_t kSampleStreamBase = 1u << 20;  // per-sample substreams

/// Exact decimal round-trip for IEEE doubles.
std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Distinct +-1 rows, every column carrying both signs (when n >= 2) and
/// pairwise Hamming distance >= max(1, k/4). Rejection sampling; configs that
/// cannot satisfy this (e.g. more codes than 2^k) are configuration errors.
Matrix draw_sign_codes(int n, Index k, RandomStream& rng) {
  if (k == 0) return Matrix(n, 0);
  if (n == 1) {
    Matrix code(1, k);
    for (Index j = 0; j < k; ++j) code(0, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return code;
  }
  const int min_hamming = std::max<Index>(1, k / 4);
  for (int attempt = 0; attempt < 5000; ++attempt) {
    Matrix codes(n, k);
    for (int i = 0; i < n; ++i)
      for (Index j = 0; j < k; ++j) codes(i, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    bool ok = true;
    for (int a = 0; a < n && ok; ++a)
      for (int b = a + 1; b < n && ok; ++b) {
        const int hamming = static_cast<int>((codes.row(a) - codes.row(b)).cwiseAbs().sum() / 2.0);
        if (hamming < min_hamming) ok = false;
      }
    for (Index j = 0; j < k && ok; ++j) {
      const Scalar colsum = codes.col(j).sum();
      if (std::abs(colsum) == static_cast<Scalar>(n)) ok = false;  // all same sign
    }
    if (ok) return codes;
  }
  throw ConfigError("cannot place " + std::to_string(n) + " separable patterns in " +
                    std::to_string(k) + " dimensions");
}

/// Sign codes scaled by shared per-dimension magnitudes. Every dimension
/// separates at least one pair of codes by >= 3*unit, and the rows are
/// rescaled if needed so the minimum pairwise distance reaches min_sep.
Matrix build_means(int n, Index k, Scalar unit, Scalar min_sep, RandomStream& rng) {
  if (k == 0) return Matrix(n, 0);
  const Matrix codes = draw_sign_codes(n, k, rng);
  RowVector mags(k);
  for (Index j = 0; j < k; ++j) mags(j) = unit * rng.uniform(1.5, 2.5);
  Matrix means = codes.array().rowwise() * mags.array();
  if (n >= 2 && min_sep > 0.0) {
    Scalar dmin = std::numeric_limits<Scalar>::infinity();
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) dmin = std::min(dmin, (means.row(a) - means.row(b)).norm());
    if (dmin < min_sep) means *= min_sep / dmin;
  }
  return means;
}

/// Per-domain scales in [0.5, 1.5]; every dimension is redrawn until its
/// cross-domain spread reaches 0.4 so the scale difference is detectable.
Matrix draw_domain_scales(int n_domains, Index k, RandomStream& rng) {
  Matrix scales = rng.uniform_matrix(n_domains, k, 0.5, 1.5);
  if (n_domains < 2) return scales;
  for (Index j = 0; j < k; ++j) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      if (scales.col(j).maxCoeff() - scales.col(j).minCoeff() >= 0.4) break;
      for (int d = 0; d < n_domains; ++d) scales(d, j) = rng.uniform(0.5, 1.5);
    }
  }
  return scales;
}

}  // namespace

const char* region_name(Region r) {
  switch (r) {
    case Region::I: return "I";
    case Region::II: return "II";
    case Region::III: return "III";
    case Region::IV: return "IV";
  }
  return "?";
}

Region region_from_name(const std::string& name) {
  if (name == "I") return Region::I;
  if (name == "II") return Region::II;
  if (name == "III") return Region::III;
  if (name == "IV") return Region::IV;
  throw ContractError("unknown region name: " + name);
}

int SynthDataset::original_domain_of(int dense) const {
  if (dense < 0 || dense >= n_domains) throw LookupError("domain index out of range");
  if (original_domain_ids.empty()) return dense;
  return original_domain_ids[static_cast<std::size_t>(dense)];
}

std::vector<Index> SynthDataset::dims_in(Region r) const {
  std::vector<Index> out;
  for (Index j = 0; j < static_cast<Index>(region_of_dim.size()); ++j)
    if (region_of_dim[static_cast<std::size_t>(j)] == r) out.push_back(j);
  return out;
}

SynthDataset generate(const RegionSpec& spec, int n_domains, int n_classes, int n_per_domain,
                      std::uint64_t seed) {
  if (spec.dims() < 1) throw ConfigError("at least one feature dimension is required");
  if (spec.k_i < 0 || spec.k_ii < 0 || spec.k_iii < 0 || spec.k_iv < 0)
    throw ConfigError("region dimension counts must be nonnegative");
  if (spec.noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
  if (n_classes < 2) throw ConfigError("need at least two classes");
  if (n_domains < 1) throw ConfigError("need at least one domain");
  if (n_per_domain < 1) throw ConfigError("need at least one sample per domain");
  if (spec.k_iii + spec.k_iv == 0)
    throw ConfigError("zero class separation: no class-relevant dimensions (regions III/IV empty)");

  RandomStream root(seed);
  RandomStream params = root.derive(kParamStream);
  const Scalar unit = std::max(spec.noise_std, 0.25);
  const Scalar min_sep = 4.0 * spec.noise_std;

  SynthDataset ds;
  ds.n_domains = n_domains;
  ds.n_classes = n_classes;
  ds.generator_seed = seed;
  ds.noise_std = spec.noise_std;
  ds.mixing = spec.mixing;
  ds.domain_means_i = build_means(n_domains, spec.k_i, unit, min_sep, params);
  ds.const_means_ii = params.normal_matrix(1, spec.k_ii);
  ds.class_means_iii = build_means(n_classes, spec.k_iii, unit, min_sep, params);
  ds.class_means_iv = build_means(n_classes, spec.k_iv, unit, min_sep, params);
  ds.domain_scales_iii = draw_domain_scales(n_domains, spec.k_iii, params);

  const Index d = spec.dims();
  ds.region_of_dim.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < spec.k_i; ++j) ds.region_of_dim.push_back(Region::I);
  for (Index j = 0; j < spec.k_ii; ++j) ds.region_of_dim.push_back(Region::II);
  for (Index j = 0; j < spec.k_iii; ++j) ds.region_of_dim.push_back(Region::III);
  for (Index j = 0; j < spec.k_iv; ++j) ds.region_of_dim.push_back(Region::IV);

  if (spec.mixing == Mixing::kRandomOrthogonal) {
    const Matrix g = params.normal_matrix(d, d);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < d; ++j)
      if (r(j, j) < 0.0) q.col(j) *= -1.0;  // canonical sign
    ds.mixing_matrix = q;
  }

  const int n = n_domains * n_per_domain;
  ds.x.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.domains.resize(static_cast<std::size_t>(n));

  for (int dom = 0; dom < n_domains; ++dom) {
    for (int s = 0; s < n_per_domain; ++s) {
      const int g_idx = dom * n_per_domain + s;
      const int y = s % n_classes;  // round-robin: uniform label marginal per domain
      RandomStream sample_rng = root.derive(kSampleStreamBase + static_cast<std::uint64_t>(g_idx));
      Vector latent(d);
      Index at = 0;
      for (Index j = 0; j < spec.k_i; ++j, ++at)
        latent(at) = ds.domain_means_i(dom, j) + spec.noise_std * sample_rng.normal();
      for (Index j = 0; j < spec.k_ii; ++j, ++at)
        latent(at) = ds.const_means_ii(0, j) + spec.noise_std * sample_rng.normal();
      for (Index j = 0; j < spec.k_iii; ++j, ++at)
        latent(at) = ds.domain_scales_iii(dom, j) * ds.class_means_iii(y, j) +
                     spec.noise_std * sample_rng.normal();
      for (Index j = 0; j < spec.k_iv; ++j, ++at)
        latent(at) = ds.class_means_iv(y, j) + spec.noise_std * sample_rng.normal();
      if (spec.mixing == Mixing::kRandomOrthogonal)
        ds.x.row(g_idx) = (ds.mixing_matrix * latent).transpose();
      else
        ds.x.row(g_idx) = latent.transpose();
      ds.labels[static_cast<std::size_t>(g_idx)] = y;
      ds.domains[static_cast<std::size_t>(g_idx)] = dom;
    }
  }

  ds.original_domain_ids.resize(static_cast<std::size_t>(n_domains));
  for (int i = 0; i < n_domains; ++i) ds.original_domain_ids[static_cast<std::size_t>(i)] = i;
  return ds;
}

std::pair<SynthDataset, SynthDataset> split_leave_one_out(const SynthDataset& dataset,
                                                          int target_domain) {
  if (target_domain < 0 || target_domain >= dataset.n_domains)
    throw LookupError("target domain " + std::to_string(target_domain) + " not in dataset (" +
                      std::to_string(dataset.n_domains) + " domains)");

  auto base = [&dataset](int new_domains) {
    SynthDataset out;
    out.n_classes = dataset.n_classes;
    out.n_domains = new_domains;
    out.has_region_map = dataset.has_region_map;
    out.region_of_dim = dataset.region_of_dim;
    out.generator_seed = dataset.generator_seed;
    out.noise_std = dataset.noise_std;
    out.mixing = dataset.mixing;
    out.mixing_matrix = dataset.mixing_matrix;
    out.const_means_ii = dataset.const_means_ii;
    out.class_means_iii = dataset.class_means_iii;
    out.class_means_iv = dataset.class_means_iv;
    return out;
  };

  SynthDataset train = base(dataset.n_domains - 1);
  SynthDataset test = base(1);

  std::vector<int> old_to_new(static_cast<std::size_t>(dataset.n_domains), -1);
  int next = 0;
  for (int old = 0; old < dataset.n_domains; ++old) {
    if (old == target_domain) continue;
    old_to_new[static_cast<std::size_t>(old)] = next;
    train.original_domain_ids.push_back(dataset.original_domain_of(old));
    ++next;
  }
  test.original_domain_ids.push_back(dataset.original_domain_of(target_domain));

  auto select_rows = [&dataset](SynthDataset& out, const std::vector<int>& rows) {
    out.x.resize(static_cast<Index>(rows.size()), dataset.dim());
    out.labels.resize(rows.size());
    out.domains.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.x.row(static_cast<Index>(i)) = dataset.x.row(rows[i]);
      out.labels[i] = dataset.labels[static_cast<std::size_t>(rows[i])];
    }
  };

  std::vector<int> train_rows, test_rows;
  for (Index i = 0; i < dataset.size(); ++i) {
    if (dataset.domains[static_cast<std::size_t>(i)] == target_domain)
      test_rows.push_back(static_cast<int>(i));
    else
      train_rows.push_back(static_cast<int>(i));
  }
  select_rows(train, train_rows);
  select_rows(test, test_rows);
  for (std::size_t i = 0; i < train_rows.size(); ++i)
    train.domains[i] =
        old_to_new[static_cast<std::size_t>(dataset.domains[static_cast<std::size_t>(train_rows[i])])];
  for (std::size_t i = 0; i < test_rows.size(); ++i) test.domains[i] = 0;

  if (dataset.domain_means_i.size() > 0) {
    train.domain_means_i.resize(train.n_domains, dataset.domain_means_i.cols());
    test.domain_means_i.resize(1, dataset.domain_means_i.cols());
    test.domain_means_i.row(0) = dataset.domain_means_i.row(target_domain);
  }
  if (dataset.domain_scales_iii.size() > 0) {
    train.domain_scales_iii.resize(train.n_domains, dataset.domain_scales_iii.cols());
    test.domain_scales_iii.resize(1, dataset.domain_scales_iii.cols());
    test.domain_scales_iii.row(0) = dataset.domain_scales_iii.row(target_domain);
  }
  int row = 0;
  for (int old = 0; old < dataset.n_domains; ++old) {
    if (old == target_domain) continue;
    if (dataset.domain_means_i.size() > 0)
      train.domain_means_i.row(row) = dataset.domain_means_i.row(old);
    if (dataset.domain_scales_iii.size() > 0)
      train.domain_scales_iii.row(row) = dataset.domain_scales_iii.row(old);
    ++row;
  }

  return {std::move(train), std::move(test)};
}

namespace {

void write_matrix_line(std::ostream& out, const std::string& key, const Matrix& m) {
  out << key << ": " << m.rows() << " " << m.cols();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out << " " << fmt(m(i, j));
  out << "\n";
}

struct LineReader {
  std::istream& in;
  long line_no = 0;
  bool next(std::string& out) {
    if (!std::getline(in, out)) return false;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    ++line_no;
    return true;
  }
};

Scalar parse_double(const std::string& tok, long line) {
  char* end = nullptr;
  const Scalar v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError("expected a number, got '" + tok + "'", line);
  return v;
}

long parse_long(const std::string& tok, long line) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError("expected an integer, got '" + tok + "'", line);
  return v;
}

Matrix parse_matrix(const std::string& value, long line) {
  std::istringstream is(value);
  std::string tok;
  if (!(is >> tok)) throw ParseError("matrix value missing row count", line);
  const long rows = parse_long(tok, line);
  if (!(is >> tok)) throw ParseError("matrix value missing column count", line);
  const long cols = parse_long(tok, line);
  if (rows < 0 || cols < 0) throw ParseError("negative matrix dimensions", line);
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) {
      if (!(is >> tok)) throw ParseError("matrix value truncated", line);
      m(i, j) = parse_double(tok, line);
    }
  if (is >> tok) throw ParseError("matrix value has trailing data", line);
  return m;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_dataset(const SynthDataset& ds, std::ostream& out) {
  out << "INSURE-SYNTH v1\n";
  out << "n_samples: " << ds.size() << "\n";
  out << "dims: " << ds.dim() << "\n";
  out << "n_domains: " << ds.n_domains << "\n";
  out << "n_classes: " << ds.n_classes << "\n";
  out << "seed: " << ds.generator_seed << "\n";
  out << "noise_std: " << fmt(ds.noise_std) << "\n";
  out << "mixing: " << (ds.mixing == Mixing::kIdentity ? "identity" : "random-orthogonal") << "\n";
  if (ds.has_region_map) {
    out << "regions: ";
    for (std::size_t j = 0; j < ds.region_of_dim.size(); ++j) {
      if (j) out << ",";
      out << region_name(ds.region_of_dim[j]);
    }
    out << "\n";
  } else {
    out << "regions: none\n";
  }
  out << "original_domains: ";
  for (int i = 0; i < ds.n_domains; ++i) {
    if (i) out << ",";
    out << ds.original_domain_of(i);
  }
  out << "\n";
  write_matrix_line(out, "domain_means_i", ds.domain_means_i);
  write_matrix_line(out, "const_means_ii", ds.const_means_ii);
  write_matrix_line(out, "class_means_iii", ds.class_means_iii);
  write_matrix_line(out, "class_means_iv", ds.class_means_iv);
  write_matrix_line(out, "domain_scales_iii", ds.domain_scales_iii);
  if (ds.mixing == Mixing::kRandomOrthogonal) write_matrix_line(out, "mixing_matrix", ds.mixing_matrix);
  out << "data:\n";
  for (Index i = 0; i < ds.size(); ++i) {
    out << ds.domains[static_cast<std::size_t>(i)] << "," << ds.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < ds.dim(); ++j) out << "," << fmt(ds.x(i, j));
    out << "\n";
  }
}

SynthDataset read_dataset(std::istream& in) {
  LineReader reader{in};
  std::string line;
  if (!reader.next(line) || line != "INSURE-SYNTH v1")
    throw ParseError("expected header 'INSURE-SYNTH v1'", reader.line_no == 0 ? 1 : reader.line_no);

  SynthDataset ds;
  long n_samples = -1, dims = -1;
  bool saw_regions = false;

  while (true) {
    if (!reader.next(line)) throw ParseError("missing 'data:' section", reader.line_no + 1);
    if (line == "data:") break;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) {
      if (line == "data:") break;
      throw ParseError("expected 'key: value'", reader.line_no);
    }
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    const long ln = reader.line_no;
    if (key == "n_samples") {
      n_samples = parse_long(value, ln);
    } else if (key == "dims") {
      dims = parse_long(value, ln);
      if (dims < 1) throw ParseError("dims must be positive", ln);
    } else if (key == "n_domains") {
      ds.n_domains = static_cast<int>(parse_long(value, ln));
    } else if (key == "n_classes") {
      ds.n_classes = static_cast<int>(parse_long(value, ln));
    } else if (key == "seed") {
      ds.generator_seed = static_cast<std::uint64_t>(std::strtoull(value.c_str(), nullptr, 10));
    } else if (key == "noise_std") {
      ds.noise_std = parse_double(value, ln);
    } else if (key == "mixing") {
      if (value == "identity")
        ds.mixing = Mixing::kIdentity;
      else if (value == "random-orthogonal")
        ds.mixing = Mixing::kRandomOrthogonal;
      else
        throw ParseError("unknown mixing '" + value + "'", ln);
    } else if (key == "regions") {
      saw_regions = true;
      if (value == "none") {
        ds.has_region_map = false;
      } else {
        for (const std::string& tok : split_csv(value)) {
          try {
            ds.region_of_dim.push_back(region_from_name(tok));
          } catch (const ContractError& e) {
            throw ParseError(e.what(), ln);
          }
        }
      }
    } else if (key == "original_domains") {
      ds.original_domain_ids.clear();
      for (const std::string& tok : split_csv(value))
        ds.original_domain_ids.push_back(static_cast<int>(parse_long(tok, ln)));
    } else if (key == "domain_means_i") {
      ds.domain_means_i = parse_matrix(value, ln);
    } else if (key == "const_means_ii") {
      const Matrix m = parse_matrix(value, ln);
      ds.const_means_ii = m.rows() > 0 ? RowVector(m.row(0)) : RowVector(RowVector::Zero(m.cols()));
    } else if (key == "class_means_iii") {
      ds.class_means_iii = parse_matrix(value, ln);
    } else if (key == "class_means_iv") {
      ds.class_means_iv = parse_matrix(value, ln);
    } else if (key == "domain_scales_iii") {
      ds.domain_scales_iii = parse_matrix(value, ln);
    } else if (key == "mixing_matrix") {
      ds.mixing_matrix = parse_matrix(value, ln);
    } else {
      throw ParseError("unknown key '" + key + "'", ln);
    }
  }

  if (n_samples < 0) throw ParseError("missing n_samples", reader.line_no);
  if (dims < 1) throw ParseError("missing dims", reader.line_no);
  if (ds.n_domains < 1) throw ParseError("missing n_domains", reader.line_no);
  if (ds.n_classes < 1) throw ParseError("missing n_classes", reader.line_no);
  if (!saw_regions) ds.has_region_map = false;
  if (ds.has_region_map && static_cast<long>(ds.region_of_dim.size()) != dims)
    throw ParseError("region map covers " + std::to_string(ds.region_of_dim.size()) +
                         " dims, expected " + std::to_string(dims),
                     reader.line_no);
  if (ds.mixing == Mixing::kRandomOrthogonal &&
      (ds.mixing_matrix.rows() != dims || ds.mixing_matrix.cols() != dims))
    throw ParseError("random-orthogonal mixing requires a dims x dims mixing_matrix",
                     reader.line_no);

  ds.x.resize(n_samples, dims);
  ds.labels.resize(static_cast<std::size_t>(n_samples));
  ds.domains.resize(static_cast<std::size_t>(n_samples));
  for (long i = 0; i < n_samples; ++i) {
    if (!reader.next(line))
      throw ParseError("file truncated: expected " + std::to_string(n_samples) + " rows, got " +
                           std::to_string(i),
                       reader.line_no + 1);
    const auto fields = split_csv(line);
    if (static_cast<long>(fields.size()) != dims + 2)
      throw ParseError("row has " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(dims + 2),
                       reader.line_no);
    const long dom = parse_long(fields[0], reader.line_no);
    const long lab = parse_long(fields[1], reader.line_no);
    if (dom < 0 || dom >= ds.n_domains) throw ParseError("domain index out of range", reader.line_no);
    if (lab < 0 || lab >= ds.n_classes) throw ParseError("class label out of range", reader.line_no);
    ds.domains[static_cast<std::size_t>(i)] = static_cast<int>(dom);
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(lab);
    for (long j = 0; j < dims; ++j)
      ds.x(i, j) = parse_double(fields[static_cast<std::size_t>(j + 2)], reader.line_no);
  }
  while (reader.next(line)) {
    if (!line.empty()) throw ParseError("unexpected trailing data", reader.line_no);
  }
  return ds;
}

void save_dataset(const SynthDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot open '" + path + "' for writing");
  write_dataset(dataset, out);
  if (!out) throw Error("write to '" + path + "' failed");
}

SynthDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open '" + path + "'");
  return read_dataset(in);
}

}  // namespace insure::synth
