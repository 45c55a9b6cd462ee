#pragma once

#include <harmonic/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <compare>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace harmonic {

enum class BasisNorm { orthonormal, l1 };

inline std::string to_string(BasisNorm n) { return n == BasisNorm::l1 ? "l1" : "orthonormal"; }

inline BasisNorm parse_basis_norm(std::string_view s) {
  if (s == "orthonormal") return BasisNorm::orthonormal;
  if (s == "l1") return BasisNorm::l1;
  throw InvalidArgument("unknown basis norm '" + std::string(s) + "' (orthonormal|l1)");
}

/// Bank of K*K separable DCT-II filters, filter u*K+v = outer(rows[u], rows[v]).
///
/// Orthonormal rows are sqrt(alpha_u / K) cos(pi (x + 1/2) u / K) with alpha_0 = 1
/// and alpha_u = 2 otherwise. In l1 mode each row is divided by its L1 norm, which
/// makes every outer-product filter unit-L1 as well.
template <Real T>
struct DctBasis {
  std::size_t size = 0;
  BasisNorm norm = BasisNorm::orthonormal;
  Tensor<T> rows;     // [K, K]
  Tensor<T> filters;  // [K*K, K, K]
  /// filters[p] = scale[p] * orthonormal filter p. All ones in orthonormal mode.
  std::vector<double> scale;

  const T* filter(std::size_t u, std::size_t v) const {
    return filters.data() + (u * size + v) * size * size;
  }
};

/// Orthonormal DCT-II row vector b_u evaluated at full precision.
inline std::vector<double> dct_row(std::size_t k, std::size_t u) {
  std::vector<double> row(k);
  const double alpha = u == 0 ? 1.0 : 2.0;
  const double amp = std::sqrt(alpha / static_cast<double>(k));
  for (std::size_t x = 0; x < k; ++x) {
    row[x] = amp * std::cos(std::numbers::pi / static_cast<double>(k) *
                            (static_cast<double>(x) + 0.5) * static_cast<double>(u));
  }
  return row;
}

template <Real T>
DctBasis<T> make_basis(std::size_t k, BasisNorm norm = BasisNorm::orthonormal) {
  if (k < 1) throw InvalidArgument("make_basis: K must be >= 1");
  std::vector<std::vector<double>> rows(k);
  std::vector<double> row_scale(k, 1.0);
  for (std::size_t u = 0; u < k; ++u) {
    rows[u] = dct_row(k, u);
    if (norm == BasisNorm::l1) {
      double l1 = 0.0;
      for (double v : rows[u]) l1 += std::abs(v);
      row_scale[u] = 1.0 / l1;
      for (double& v : rows[u]) v *= row_scale[u];
    }
  }
  DctBasis<T> basis;
  basis.size = k;
  basis.norm = norm;
  basis.rows = Tensor<T>({k, k});
  basis.filters = Tensor<T>({k * k, k, k});
  basis.scale.assign(k * k, 1.0);
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t x = 0; x < k; ++x) basis.rows.at(u, x) = static_cast<T>(rows[u][x]);
  }
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t v = 0; v < k; ++v) {
      basis.scale[u * k + v] = row_scale[u] * row_scale[v];
      for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < k; ++y)
          basis.filters.at(u * k + v, x, y) = static_cast<T>(rows[u][x] * rows[v][y]);
    }
  }
  return basis;
}

struct Frequency {
  std::size_t u = 0;
  std::size_t v = 0;
  auto operator<=>(const Frequency&) const = default;
};

/// Retained (u, v) frequencies of a K x K bank, kept in row-major order.
class SpectrumSelection {
 public:
  SpectrumSelection() = default;

  /// Triangular selection u + v <= lambda - 1, 1 <= lambda <= 2K - 1.
  static SpectrumSelection triangle(std::size_t k, std::size_t lambda) {
    if (k < 1) throw InvalidArgument("select_spectrum: K must be >= 1");
    if (lambda < 1 || lambda > 2 * k - 1) {
      throw InvalidArgument("select_spectrum: lambda " + std::to_string(lambda) +
                            " outside [1, " + std::to_string(2 * k - 1) + "] for K=" +
                            std::to_string(k));
    }
    SpectrumSelection s;
    s.k_ = k;
    s.lambda_ = lambda;
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t v = 0; v < k; ++v)
        if (u + v + 1 <= lambda) s.indices_.push_back({u, v});
    return s;
  }

  static SpectrumSelection full(std::size_t k) { return triangle(k, 2 * k - 1); }

  /// Arbitrary keep-set; sorted into row-major order, duplicates rejected.
  static SpectrumSelection from_indices(std::size_t k, std::vector<Frequency> idx) {
    if (k < 1) throw InvalidArgument("spectrum selection: K must be >= 1");
    if (idx.empty()) throw InvalidArgument("spectrum selection must retain at least one frequency");
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i].u >= k || idx[i].v >= k) {
        throw InvalidArgument("frequency (" + std::to_string(idx[i].u) + "," +
                              std::to_string(idx[i].v) + ") out of range for K=" +
                              std::to_string(k));
      }
      if (i > 0 && idx[i] == idx[i - 1]) throw InvalidArgument("duplicate frequency in selection");
    }
    SpectrumSelection s;
    s.k_ = k;
    s.indices_ = std::move(idx);
    for (std::size_t lambda = 1; lambda <= 2 * k - 1; ++lambda) {
      if (triangle(k, lambda).indices_ == s.indices_) {
        s.lambda_ = lambda;
        break;
      }
    }
    return s;
  }

  SpectrumSelection without_dc() const {
    std::vector<Frequency> idx;
    for (auto f : indices_)
      if (f.u != 0 || f.v != 0) idx.push_back(f);
    return from_indices(k_, std::move(idx));
  }

  std::size_t kernel() const noexcept { return k_; }
  /// Lambda when the set is triangular.
  std::optional<std::size_t> lambda() const noexcept {
    return lambda_ ? std::optional<std::size_t>(lambda_) : std::nullopt;
  }
  std::size_t size() const noexcept { return indices_.size(); }
  const std::vector<Frequency>& indices() const noexcept { return indices_; }
  const Frequency& operator[](std::size_t p) const { return indices_[p]; }
  std::size_t flat(std::size_t p) const { return indices_[p].u * k_ + indices_[p].v; }

  bool contains(Frequency f) const {
    return std::binary_search(indices_.begin(), indices_.end(), f);
  }
  std::optional<std::size_t> position(Frequency f) const {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), f);
    if (it == indices_.end() || *it != f) return std::nullopt;
    return static_cast<std::size_t>(it - indices_.begin());
  }
  bool is_subset_of(const SpectrumSelection& o) const {
    if (o.k_ != k_) return false;
    return std::includes(o.indices_.begin(), o.indices_.end(), indices_.begin(), indices_.end());
  }
  bool is_full() const noexcept { return indices_.size() == k_ * k_; }

  bool operator==(const SpectrumSelection& o) const {
    return k_ == o.k_ && indices_ == o.indices_;
  }

 private:
  std::size_t k_ = 0;
  std::size_t lambda_ = 0;
  std::vector<Frequency> indices_;
};

inline SpectrumSelection select_spectrum(std::size_t k, std::size_t lambda) {
  return SpectrumSelection::triangle(k, lambda);
}

/// Closed-form size of the triangular selection.
inline std::size_t triangle_count(std::size_t k, std::size_t lambda) {
  if (lambda <= k) return lambda * (lambda + 1) / 2;
  const std::size_t r = 2 * k - 1 - lambda;
  return k * k - r * (r + 1) / 2;
}

/// Selected filters stacked as a [P, K, K] bank.
template <Real T>
Tensor<T> selected_bank(const DctBasis<T>& basis, const SpectrumSelection& sel) {
  if (sel.kernel() != basis.size) {
    throw ShapeError("selection K=" + std::to_string(sel.kernel()) + " vs basis K=" +
                     std::to_string(basis.size));
  }
  const std::size_t k = basis.size, kk = k * k;
  Tensor<T> bank({sel.size(), k, k});
  for (std::size_t p = 0; p < sel.size(); ++p) {
    std::copy_n(basis.filters.data() + sel.flat(p) * kk, kk, bank.data() + p * kk);
  }
  return bank;
}

}  // namespace harmonic
