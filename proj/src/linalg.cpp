#include "poc/linalg.hpp"

#include <numeric>

#include "poc/gadgets.hpp"

namespace poc {

int64_t LayerShape::size() const {
  return std::accumulate(dims.begin(), dims.end(), int64_t{1}, std::multiplies<>());
}

Layout::Layout(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
  for (const auto& l : layers_) {
    for (int64_t d : l.dims) {
      if (d <= 0) throw Error(Errc::kShapeMismatch, "layer '" + l.name + "' has a non-positive dimension");
    }
    size_ += l.size();
  }
}

int64_t Layout::offset(const std::string& name) const {
  int64_t off = 0;
  for (const auto& l : layers_) {
    if (l.name == name) return off;
    off += l.size();
  }
  throw Error(Errc::kLayoutMismatch, "no layer named '" + name + "'");
}

const LayerShape& Layout::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw Error(Errc::kLayoutMismatch, "no layer named '" + name + "'");
}

void Layout::serialize(ByteWriter& w) const {
  w.u32(static_cast<uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    w.str(l.name);
    w.i64_vec(l.dims);
  }
}

Layout Layout::deserialize(ByteReader& r) {
  const uint32_t n = r.u32();
  if (n > r.remaining()) throw Error(Errc::kMalformed, "layer count exceeds input");
  std::vector<LayerShape> layers;
  for (uint32_t i = 0; i < n; ++i) {
    LayerShape l;
    l.name = r.str();
    l.dims = r.i64_vec();
    layers.push_back(std::move(l));
  }
  return Layout(std::move(layers));
}

ModelWeights::ModelWeights(Layout layout, FixedVector data) : layout_(std::move(layout)), data_(std::move(data)) {
  if (data_.size() != layout_.size()) throw Error(Errc::kLayoutMismatch, "data length does not match layout size");
}

ModelWeights ModelWeights::zeros(Layout layout) {
  FixedVector data = FixedVector::Constant(layout.size(), Fixed());
  return ModelWeights(std::move(layout), std::move(data));
}

ModelWeights ModelWeights::from_doubles(Layout layout, std::span<const double> values) {
  if (static_cast<int64_t>(values.size()) != layout.size()) {
    throw Error(Errc::kLayoutMismatch, "value count does not match layout size");
  }
  FixedVector data(layout.size());
  for (size_t i = 0; i < values.size(); ++i) data[static_cast<Eigen::Index>(i)] = Fixed::from_double(values[i]);
  return ModelWeights(std::move(layout), std::move(data));
}

Bytes ModelWeights::serialize() const {
  ByteWriter w;
  layout_.serialize(w);
  w.fixed_vec(std::span<const Fixed>(data_.data(), static_cast<size_t>(data_.size())));
  return std::move(w).take();
}

ModelWeights ModelWeights::deserialize(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  Layout layout = Layout::deserialize(r);
  auto values = r.fixed_vec();
  r.expect_done();
  FixedVector data = Eigen::Map<const FixedVector>(values.data(), static_cast<Eigen::Index>(values.size()));
  return ModelWeights(std::move(layout), std::move(data));
}

void require_same_layout(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.layout() == b.layout())) throw Error(Errc::kLayoutMismatch, "models have different layouts");
}

double cosine_similarity(const ModelWeights& u, const ModelWeights& v) {
  require_same_layout(u, v);
  return cosine_similarity(u.data(), v.data());
}

double l2_distance(const ModelWeights& u, const ModelWeights& v) {
  require_same_layout(u, v);
  return (u.to_doubles() - v.to_doubles()).norm();
}

int128 squared_distance_raw(const FixedVector& u, const FixedVector& v) {
  if (u.size() != v.size()) throw Error(Errc::kLayoutMismatch, "vectors differ in length");
  int128 acc = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const int128 d = int128{u[i].raw()} - v[i].raw();
    acc += d * d;
  }
  return acc;
}

int128 squared_distance_raw(const ModelWeights& u, const ModelWeights& v) {
  require_same_layout(u, v);
  return squared_distance_raw(u.data(), v.data());
}

AggregationWitness aggregate_with_witness(std::span<const ModelWeights> models, std::span<const Fixed> weights) {
  if (models.empty()) throw Error(Errc::kEmptyInput, "no models to aggregate");
  if (models.size() != weights.size()) throw Error(Errc::kShapeMismatch, "one weight per model required");
  int128 total = 0;
  for (size_t i = 0; i < models.size(); ++i) {
    require_same_layout(models[0], models[i]);
    if (weights[i].raw() < 0) throw Error(Errc::kDomainError, "negative aggregation weight");
    total += weights[i].raw();
  }
  if (total <= 0) throw Error(Errc::kDomainError, "aggregation weights sum to zero");
  const Fixed total_weight = Fixed::from_raw(Fixed::checked(total));

  const Eigen::Index n = models[0].size();
  FixedVector out(n);
  std::vector<int64_t> remainders(static_cast<size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    int128 numerator = 0;
    for (size_t i = 0; i < models.size(); ++i) numerator += int128{weights[i].raw()} * models[i][j].raw();
    const DivMod dm = floor_divmod(numerator, total_weight.raw());
    out[j] = Fixed::from_raw(dm.quotient);
    remainders[static_cast<size_t>(j)] = dm.remainder;
  }
  return {ModelWeights(models[0].layout(), std::move(out)), std::move(remainders), total_weight};
}

ModelWeights weighted_aggregate(std::span<const ModelWeights> models, std::span<const double> weights) {
  if (models.empty()) throw Error(Errc::kEmptyInput, "no models to aggregate");
  if (models.size() != weights.size()) throw Error(Errc::kShapeMismatch, "one weight per model required");
  std::vector<Fixed> fw;
  fw.reserve(weights.size());
  for (double w : weights) fw.push_back(Fixed::from_double(w));
  return aggregate_with_witness(models, fw).aggregate;
}

FixedMatrix matmul(const FixedMatrix& a, const FixedMatrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::kShapeMismatch, "inner dimensions differ");
  FixedMatrix c = a * b;
  return c;
}

RescaledProduct matmul_rescaled(const FixedMatrix& a, const FixedMatrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::kShapeMismatch, "inner dimensions differ");
  RescaledProduct out{FixedMatrix(a.rows(), b.cols()), {}};
  out.remainder.resize(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      int128 acc = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += int128{a(i, k).raw()} * b(k, j).raw();
      const DivMod dm = floor_divmod(acc, kFixedOne);
      out.product(i, j) = Fixed::from_raw(dm.quotient);
      out.remainder(i, j) = dm.remainder;
    }
  }
  return out;
}

void serialize_matrix(ByteWriter& w, const FixedMatrix& m) {
  w.u64(static_cast<uint64_t>(m.rows()));
  w.u64(static_cast<uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.fixed(m.data()[i]);
}

FixedMatrix deserialize_matrix(ByteReader& r) {
  const uint64_t rows = r.u64();
  const uint64_t cols = r.u64();
  if (rows == 0 || cols == 0 || rows > r.remaining() || cols > r.remaining() / 8 / rows) {
    throw Error(Errc::kMalformed, "matrix dimensions exceed input");
  }
  FixedMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.fixed();
  return m;
}

Bytes serialize_matrix(const FixedMatrix& m) {
  ByteWriter w;
  serialize_matrix(w, m);
  return std::move(w).take();
}

}  // namespace poc
