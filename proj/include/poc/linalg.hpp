#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "poc/bytes.hpp"
#include "poc/fixed_point.hpp"

namespace poc {

struct LayerShape {
  std::string name;
  std::vector<int64_t> dims;

  int64_t size() const;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Ordered parameter layout of a model.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<LayerShape> layers);

  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  int64_t size() const noexcept { return size_; }
  /// Offset of the named layer inside the flat vector; throws `kLayoutMismatch` if absent.
  int64_t offset(const std::string& name) const;
  const LayerShape& layer(const std::string& name) const;

  void serialize(ByteWriter& w) const;
  static Layout deserialize(ByteReader& r);

  friend bool operator==(const Layout& a, const Layout& b) { return a.layers_ == b.layers_; }

 private:
  std::vector<LayerShape> layers_;
  int64_t size_ = 0;
};

/// Flat fixed-point parameter vector plus its layout.
class ModelWeights {
 public:
  ModelWeights() = default;
  ModelWeights(Layout layout, FixedVector data);

  static ModelWeights zeros(Layout layout);
  static ModelWeights from_doubles(Layout layout, std::span<const double> values);

  const Layout& layout() const noexcept { return layout_; }
  const FixedVector& data() const noexcept { return data_; }
  Eigen::Index size() const noexcept { return data_.size(); }
  Fixed operator[](Eigen::Index i) const { return data_[i]; }
  Fixed& operator[](Eigen::Index i) { return data_[i]; }

  Eigen::VectorXd to_doubles() const { return data_.cast<double>(); }

  /// Canonical bytes: layout header followed by the length-prefixed raw values.
  Bytes serialize() const;
  static ModelWeights deserialize(std::span<const uint8_t> bytes);

  friend bool operator==(const ModelWeights& a, const ModelWeights& b) {
    return a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  Layout layout_;
  FixedVector data_;
};

/// Throws `kLayoutMismatch` unless both layouts are identical.
void require_same_layout(const ModelWeights& a, const ModelWeights& b);

/// Cosine of the angle between two dense vectors, accumulated in double.
/// Throws `kZeroVector` if either norm is zero.
template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double a = static_cast<double>(u.derived().coeff(i));
    const double b = static_cast<double>(v.derived().coeff(i));
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) throw Error(Errc::kZeroVector, "cosine similarity of a zero vector");
  const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

double cosine_similarity(const ModelWeights& u, const ModelWeights& v);
double l2_distance(const ModelWeights& u, const ModelWeights& v);

/// Exact squared Euclidean distance at raw scale (units of 2^-2f).
int128 squared_distance_raw(const FixedVector& u, const FixedVector& v);
int128 squared_distance_raw(const ModelWeights& u, const ModelWeights& v);

/// Result of an exact weighted aggregation with its division witness:
/// for every entry j, sum_i weight_i.raw * model_i[j].raw
///   == total_weight.raw * aggregate[j].raw + remainders[j].
struct AggregationWitness {
  ModelWeights aggregate;
  std::vector<int64_t> remainders;
  Fixed total_weight;
};

AggregationWitness aggregate_with_witness(std::span<const ModelWeights> models, std::span<const Fixed> weights);

/// sum_i (weights_i / sum weights) * models_i in fixed point (floored per entry).
/// Throws `kEmptyInput` or `kLayoutMismatch`.
ModelWeights weighted_aggregate(std::span<const ModelWeights> models, std::span<const double> weights);

/// Fixed-point product with per-entry `fxp_mul` rounding, then summation.
/// Throws `kShapeMismatch` if A.cols != B.rows.
FixedMatrix matmul(const FixedMatrix& a, const FixedMatrix& b);

using RemainderMatrix = Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RescaledProduct {
  FixedMatrix product;
  RemainderMatrix remainder;
};

/// Exact product at doubled scale, floored back to single scale:
/// A.raw * B.raw == 2^f * product.raw + remainder, 0 <= remainder < 2^f.
RescaledProduct matmul_rescaled(const FixedMatrix& a, const FixedMatrix& b);

void serialize_matrix(ByteWriter& w, const FixedMatrix& m);
FixedMatrix deserialize_matrix(ByteReader& r);
Bytes serialize_matrix(const FixedMatrix& m);

}  // namespace poc
