#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "d2c/error.hpp"
#include "d2c/matrix.hpp"
#include "d2c/rng.hpp"

namespace d2c {

using Label = std::uint32_t;

namespace detail {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t len) noexcept {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace detail

/// Dense feature matrix with integer class labels in [0, K).
class Dataset {
 public:
  Dataset(Matrix features, std::vector<Label> labels, std::size_t num_classes)
      : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
    detail::require(features_.rows() >= 1 && features_.cols() >= 1, "dataset: need n >= 1 and d >= 1");
    detail::require(labels_.size() == features_.rows(), "dataset: label count does not match row count");
    detail::require(num_classes_ >= 2, "dataset: need at least 2 classes");
    for (Label y : labels_)
      detail::require(y < num_classes_, "dataset: label " + std::to_string(y) + " out of range");
  }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dims() const noexcept { return features_.cols(); }
  std::size_t num_classes() const noexcept { return num_classes_; }

  const Matrix& features() const noexcept { return features_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  std::span<const double> row(std::size_t i) const noexcept { return features_.row(i); }
  Label label(std::size_t i) const noexcept { return labels_[i]; }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes_, 0);
    for (Label y : labels_) ++counts[y];
    return counts;
  }

  /// Rows at the given positions, in the given order.
  Dataset subset(std::span<const std::size_t> rows) const {
    detail::require(!rows.empty(), "dataset: empty subset");
    Matrix x(rows.size(), dims());
    std::vector<Label> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::require(rows[i] < size(), "dataset: subset index out of range");
      auto src = row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
      y[i] = labels_[rows[i]];
    }
    return Dataset(std::move(x), std::move(y), num_classes_);
  }

  /// 64-bit FNV-1a over the row-major feature bytes, then each label as a 32-bit integer.
  std::uint64_t fingerprint() const noexcept {
    std::uint64_t h = detail::kFnvOffset;
    h = detail::fnv1a(h, features_.data().data(), features_.data().size() * sizeof(double));
    for (Label y : labels_) h = detail::fnv1a(h, &y, sizeof(y));
    return h;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Matrix features_;
  std::vector<Label> labels_;
  std::size_t num_classes_;
};

/// FNV-1a of one feature row and its label; used to reason about row identity across shards.
inline std::uint64_t row_fingerprint(const Dataset& ds, std::size_t i) noexcept {
  auto r = ds.row(i);
  std::uint64_t h = detail::fnv1a(detail::kFnvOffset, r.data(), r.size() * sizeof(double));
  Label y = ds.label(i);
  return detail::fnv1a(h, &y, sizeof(y));
}

/// N disjoint, class-balanced partitions of a parent dataset.
struct ShardSet {
  std::vector<Dataset> shards;
  /// For every shard row, the parent row it was taken (or, after augmentation, derived) from.
  std::vector<std::vector<std::size_t>> source_rows;
  std::uint64_t parent_fingerprint = 0;

  std::size_t size() const noexcept { return shards.size(); }
};

struct SplitSpec {
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) noexcept {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Loads a headered CSV. Every non-label column must be a finite real; labels are
/// re-encoded to 0..K-1 in order of first appearance.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::string_view> lines;
  {
    std::string_view rest(text);
    while (!rest.empty()) {
      std::size_t nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      if (!detail::trim(line).empty()) lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  if (lines.empty()) throw DataError(path + ": missing header row");

  const auto header = detail::split_commas(lines[0]);
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) label_idx = i;
  if (label_idx == header.size()) throw DataError(path + ": no label column '" + label_column + "'");
  if (header.size() < 2) throw DataError(path + ": no feature columns");
  if (lines.size() < 2) throw DataError(path + ": no data rows");

  const std::size_t n = lines.size() - 1;
  const std::size_t d = header.size() - 1;
  Matrix x(n, d);
  std::vector<Label> y(n);
  std::unordered_map<std::string, Label> encoding;

  for (std::size_t r = 0; r < n; ++r) {
    const auto cells = detail::split_commas(lines[r + 1]);
    if (cells.size() != header.size())
      throw DataError(path + ": row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    std::size_t col = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) {
        std::string key(cells[c]);
        auto [it, inserted] = encoding.try_emplace(key, static_cast<Label>(encoding.size()));
        y[r] = it->second;
        continue;
      }
      double v = 0.0;
      const char* b = cells[c].data();
      const char* e = b + cells[c].size();
      auto res = std::from_chars(b, e, v);
      if (res.ec != std::errc() || res.ptr != e || cells[c].empty())
        throw DataError(path + ": non-numeric feature at row " + std::to_string(r + 1) + ", column " +
                        std::string(header[c]));
      if (!std::isfinite(v))
        throw DataError(path + ": non-finite feature at row " + std::to_string(r + 1) + ", column " +
                        std::string(header[c]));
      x(r, col++) = v;
    }
  }
  if (encoding.size() < 2) throw DataError(path + ": single-class file (need K >= 2)");
  return Dataset(std::move(x), std::move(y), encoding.size());
}

/// Writes columns x0..x{d-1} followed by `label`. Values round-trip exactly.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t c = 0; c < ds.dims(); ++c) out << 'x' << c << ',';
  out << "label\n";
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.row(r)) out << detail::format_double(v) << ',';
    out << ds.label(r) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthesis

/// Reassigns round(fraction * n) distinct, randomly chosen rows to a different class,
/// chosen uniformly among the other K-1.
inline Dataset flip_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  detail::require(fraction >= 0.0 && fraction <= 1.0, "flip_labels: fraction must lie in [0,1]");
  const std::size_t flips = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  if (flips == 0) return ds;
  Rng rng = make_rng(seed, {0x666c6970});
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Label> labels = ds.labels();
  std::uniform_int_distribution<std::size_t> other(1, ds.num_classes() - 1);
  for (std::size_t i = 0; i < flips; ++i) {
    Label& y = labels[order[i]];
    y = static_cast<Label>((y + other(rng)) % ds.num_classes());
  }
  return Dataset(ds.features(), std::move(labels), ds.num_classes());
}

/// Isotropic unit-variance Gaussian blobs, one per class, followed by label-flip noise.
///
/// Class labels are assigned round-robin before shuffling, so every class has at least
/// floor(n/K) samples. Class means: with K <= d they are (sep/sqrt 2) e_c, so every pair is
/// exactly `class_sep` apart; with K > d >= 2 they sit on a circle in the first two
/// coordinates with adjacent means `class_sep` apart; with d = 1 they are spaced `class_sep`
/// along the line.
inline Dataset gen_synthetic(std::size_t n, std::size_t d, std::size_t num_classes, double class_sep,
                             double noise_frac, std::uint64_t seed) {
  detail::require(num_classes >= 2, "gen_synthetic: need K >= 2");
  detail::require(d >= 1, "gen_synthetic: need d >= 1");
  detail::require(n >= num_classes, "gen_synthetic: need n >= K");
  detail::require(class_sep > 0.0, "gen_synthetic: class_sep must be positive");
  detail::require(noise_frac >= 0.0 && noise_frac < 1.0, "gen_synthetic: noise_frac must lie in [0,1)");

  Matrix means(num_classes, d, 0.0);
  if (num_classes <= d) {
    for (std::size_t c = 0; c < num_classes; ++c) means(c, c) = class_sep / std::numbers::sqrt2;
  } else if (d >= 2) {
    const double k = static_cast<double>(num_classes);
    const double radius = class_sep / (2.0 * std::sin(std::numbers::pi / k));
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / k;
      means(c, 0) = radius * std::cos(angle);
      means(c, 1) = radius * std::sin(angle);
    }
  } else {
    for (std::size_t c = 0; c < num_classes; ++c) means(c, 0) = class_sep * static_cast<double>(c);
  }

  Rng rng = make_rng(seed, {0x626c6f62});
  std::vector<Label> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<Label>(i % num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = means(labels[i], j) + gauss(rng);

  Dataset clean(std::move(x), std::move(labels), num_classes);
  return flip_labels(clean, noise_frac, derive_seed(seed, {0x6e6f697365}));
}

// ---------------------------------------------------------------------------
// Splitting and sharding

namespace detail {

inline std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.label(i)].push_back(i);
  return by_class;
}

}  // namespace detail

/// Stratified index partition. The validation set holds round(fraction * n) rows, apportioned
/// to classes by largest remainder (ties to the lower class index), every class keeping at
/// least one row on each side. Both index lists are ascending.
inline SplitIndices stratified_split_indices(const Dataset& ds, const SplitSpec& spec) {
  detail::require(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0,
                  "split: validation fraction must lie strictly between 0 and 1");
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0 && counts[c] < 2)
      throw DataError("split: class " + std::to_string(c) + " has a single sample");

  const double frac = spec.validation_fraction;
  const auto total = static_cast<std::size_t>(std::llround(frac * static_cast<double>(ds.size())));
  std::vector<std::size_t> quota(counts.size(), 0);
  std::vector<double> remainder(counts.size(), -1.0);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    const double exact = frac * static_cast<double>(counts[c]);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    assigned += quota[c];
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total && i < order.size(); ++i) {
    if (counts[order[i]] == 0) continue;
    ++quota[order[i]];
    ++assigned;
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) quota[c] = std::clamp<std::size_t>(quota[c], 1, counts[c] - 1);

  Rng rng = make_rng(spec.seed, {0x73706c6974});
  auto by_class = detail::rows_by_class(ds);
  SplitIndices out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    std::shuffle(rows.begin(), rows.end(), rng);
    out.val.insert(out.val.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    out.train.insert(out.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(quota[c]), rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const SplitSpec& spec) {
  const auto idx = stratified_split_indices(ds, spec);
  return {ds.subset(idx.train), ds.subset(idx.val)};
}

/// Per-class shuffle followed by one round-robin deal that continues from class to class, so
/// per-class counts and shard sizes each differ by at most one. Shard rows keep parent order.
inline ShardSet shard(const Dataset& ds, std::size_t num_shards, std::uint64_t seed) {
  detail::require(num_shards >= 1, "shard: need N >= 1");
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] < num_shards)
      throw DataError("insufficient per-class data: class " + std::to_string(c) + " has " +
                      std::to_string(counts[c]) + " samples, N = " + std::to_string(num_shards));

  Rng rng = make_rng(seed, {0x7368617264});
  auto by_class = detail::rows_by_class(ds);
  std::vector<std::vector<std::size_t>> members(num_shards);
  std::size_t next = 0;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t row : rows) {
      members[next].push_back(row);
      next = (next + 1) % num_shards;
    }
  }

  ShardSet out;
  out.parent_fingerprint = ds.fingerprint();
  for (auto& m : members) {
    std::sort(m.begin(), m.end());
    out.shards.push_back(ds.subset(m));
    out.source_rows.push_back(std::move(m));
  }
  return out;
}

/// Expands every shard on its own to `multiplier` times its size: the original rows verbatim,
/// then `multiplier - 1` jittered copies of each (independent N(0, sigma^2) per feature).
/// Copies never leave the shard of their source row.
inline ShardSet augment_shards(const ShardSet& s, double jitter_sigma, std::size_t multiplier,
                               std::uint64_t seed) {
  detail::require(multiplier >= 1, "augment: multiplier must be >= 1");
  detail::require(jitter_sigma >= 0.0, "augment: jitter sigma must be >= 0");
  if (multiplier == 1) return s;

  ShardSet out;
  out.parent_fingerprint = s.parent_fingerprint;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Dataset& src = s.shards[k];
    Rng rng = make_rng(seed, {0x6175676d, k});
    const std::size_t n = src.size();
    Matrix x(n * multiplier, src.dims());
    std::vector<Label> y(n * multiplier);
    std::vector<std::size_t> origin(n * multiplier);
    for (std::size_t copy = 0; copy < multiplier; ++copy) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = copy * n + i;
        auto from = src.row(i);
        auto to = x.row(r);
        for (std::size_t j = 0; j < from.size(); ++j)
          to[j] = copy == 0 ? from[j] : from[j] + jitter_sigma * gauss(rng);
        y[r] = src.label(i);
        origin[r] = s.source_rows.empty() ? i : s.source_rows[k][i];
      }
    }
    out.shards.emplace_back(std::move(x), std::move(y), src.num_classes());
    out.source_rows.push_back(std::move(origin));
  }
  return out;
}

}  // namespace d2c
