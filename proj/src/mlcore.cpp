#include "poc/mlcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace poc::ml {

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double quantize(double v) { return Fixed::from_double(v).to_double(); }

// Double-precision views over a flat parameter vector.
struct Params {
  ModelSpec spec;
  Eigen::VectorXd flat;

  Params(const ModelWeights& w) : spec(ModelSpec::from_layout(w.layout())), flat(w.to_doubles()) {}

  Eigen::Map<RowMatrixXd> mat(const Layout& layout, const std::string& name, int rows, int cols) {
    return Eigen::Map<RowMatrixXd>(flat.data() + layout.offset(name), rows, cols);
  }
  Eigen::Map<Eigen::VectorXd> vec(const Layout& layout, const std::string& name, int n) {
    return Eigen::Map<Eigen::VectorXd>(flat.data() + layout.offset(name), n);
  }
};

// Row-wise softmax, in place.
void softmax_rows(Eigen::MatrixXd& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

double mean_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, labels[static_cast<size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

// Logits in double for the decoded parameters.
Eigen::MatrixXd forward_double(Params& p, const Layout& layout, const Eigen::MatrixXd& x) {
  const ModelSpec& s = p.spec;
  if (x.cols() != s.dim) throw Error(Errc::kShapeMismatch, "feature dimension does not match the model");
  if (s.kind == ModelKind::kLogistic) {
    auto w = p.mat(layout, "linear/weight", s.classes, s.dim);
    auto b = p.vec(layout, "linear/bias", s.classes);
    Eigen::MatrixXd z = x * w.transpose();
    z.rowwise() += b.transpose();
    return z;
  }
  auto w1 = p.mat(layout, "hidden/weight", s.hidden, s.dim);
  auto b1 = p.vec(layout, "hidden/bias", s.hidden);
  auto w2 = p.mat(layout, "output/weight", s.classes, s.hidden);
  auto b2 = p.vec(layout, "output/bias", s.classes);
  Eigen::MatrixXd a = x * w1.transpose();
  a.rowwise() += b1.transpose();
  Eigen::MatrixXd z = a.cwiseMax(0.0) * w2.transpose();
  z.rowwise() += b2.transpose();
  return z;
}

void require_compatible(const ModelSpec& s, const Dataset& data) {
  if (s.dim != data.dim() || s.classes != data.num_classes()) {
    throw Error(Errc::kShapeMismatch, "model shape does not match dataset");
  }
}

}  // namespace

// ---- Dataset ----

Dataset::Dataset(Eigen::MatrixXd features, std::vector<int> labels, int num_classes)
    : features_(features.unaryExpr(&quantize)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (num_classes_ < 1) throw Error(Errc::kShapeMismatch, "need at least one class");
  if (static_cast<Eigen::Index>(labels_.size()) != features_.rows()) {
    throw Error(Errc::kShapeMismatch, "label count does not match sample count");
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) throw Error(Errc::kShapeMismatch, "label out of range");
  }
}

FixedMatrix Dataset::fixed_features() const {
  FixedMatrix m(features_.rows(), features_.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = Fixed::from_double(features_(i, j));
  }
  return m;
}

Dataset Dataset::subset(std::span<const size_t> rows) const {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<int> l;
  l.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    l.push_back(labels_[rows[i]]);
  }
  return Dataset(std::move(f), std::move(l), num_classes_);
}

std::vector<int64_t> Dataset::label_histogram() const {
  std::vector<int64_t> h(static_cast<size_t>(num_classes_), 0);
  for (int y : labels_) ++h[static_cast<size_t>(y)];
  return h;
}

Bytes Dataset::serialize() const {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(num_classes_));
  serialize_matrix(w, fixed_features());
  std::vector<int64_t> l(labels_.begin(), labels_.end());
  w.i64_vec(l);
  return std::move(w).take();
}

Dataset Dataset::deserialize(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const auto k = static_cast<int>(r.u32());
  FixedMatrix f = deserialize_matrix(r);
  auto l = r.i64_vec();
  r.expect_done();
  Eigen::MatrixXd features = f.cast<double>();
  return Dataset(std::move(features), std::vector<int>(l.begin(), l.end()), k);
}

// ---- models ----

Layout ModelSpec::layout() const {
  if (kind == ModelKind::kLogistic) {
    return Layout({{"linear/weight", {classes, dim}}, {"linear/bias", {classes}}});
  }
  return Layout({{"hidden/weight", {hidden, dim}},
                 {"hidden/bias", {hidden}},
                 {"output/weight", {classes, hidden}},
                 {"output/bias", {classes}}});
}

ModelSpec ModelSpec::from_layout(const Layout& layout) {
  const auto& ls = layout.layers();
  ModelSpec s;
  if (ls.size() == 2 && ls[0].name == "linear/weight" && ls[0].dims.size() == 2) {
    s.kind = ModelKind::kLogistic;
    s.classes = static_cast<int>(ls[0].dims[0]);
    s.dim = static_cast<int>(ls[0].dims[1]);
  } else if (ls.size() == 4 && ls[0].name == "hidden/weight" && ls[0].dims.size() == 2 &&
             ls[2].dims.size() == 2) {
    s.kind = ModelKind::kMlp;
    s.hidden = static_cast<int>(ls[0].dims[0]);
    s.dim = static_cast<int>(ls[0].dims[1]);
    s.classes = static_cast<int>(ls[2].dims[0]);
  } else {
    throw Error(Errc::kShapeMismatch, "unrecognised model layout");
  }
  if (!(s.layout() == layout)) throw Error(Errc::kShapeMismatch, "inconsistent model layout");
  return s;
}

ModelWeights init_model(const ModelSpec& spec, uint64_t seed) {
  Layout layout = spec.layout();
  if (spec.kind == ModelKind::kLogistic) return ModelWeights::zeros(std::move(layout));
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(layout.size()), 0.0);
  const auto fill = [&](const std::string& name, double scale) {
    const auto off = static_cast<size_t>(layout.offset(name));
    const auto n = static_cast<size_t>(layout.layer(name).size());
    for (size_t i = 0; i < n; ++i) v[off + i] = rng.normal(0.0, scale);
  };
  fill("hidden/weight", std::sqrt(2.0 / spec.dim));
  fill("output/weight", std::sqrt(1.0 / spec.hidden));
  return ModelWeights::from_doubles(std::move(layout), v);
}

double local_loss(const ModelWeights& w, const Dataset& data) {
  Params p(w);
  require_compatible(p.spec, data);
  if (data.size() == 0) throw Error(Errc::kEmptyInput, "empty dataset");
  return mean_cross_entropy(forward_double(p, w.layout(), data.features()), data.labels());
}

ModelWeights train_local(const ModelWeights& w0, const Dataset& data, const TrainerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::kConfigError, "learning rate must be positive");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw Error(Errc::kConfigError, "invalid epochs or batch size");
  if (cfg.epochs == 0) return w0;
  Params p(w0);
  require_compatible(p.spec, data);
  const Layout& layout = w0.layout();
  const ModelSpec& s = p.spec;
  const auto n = static_cast<size_t>(data.size());
  if (n == 0) throw Error(Errc::kEmptyInput, "empty dataset");

  Rng rng(cfg.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  const auto& x = data.features();
  const auto& y = data.labels();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(n, start + static_cast<size_t>(cfg.batch_size));
      const auto bs = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(bs, x.cols());
      for (Eigen::Index i = 0; i < bs; ++i) xb.row(i) = x.row(static_cast<Eigen::Index>(order[start + i]));

      const double step = cfg.learning_rate / static_cast<double>(bs);
      if (s.kind == ModelKind::kLogistic) {
        auto w = p.mat(layout, "linear/weight", s.classes, s.dim);
        auto b = p.vec(layout, "linear/bias", s.classes);
        Eigen::MatrixXd g = xb * w.transpose();
        g.rowwise() += b.transpose();
        softmax_rows(g);
        for (Eigen::Index i = 0; i < bs; ++i) g(i, y[order[start + i]]) -= 1.0;
        w -= step * (g.transpose() * xb);
        b -= step * g.colwise().sum().transpose();
      } else {
        auto w1 = p.mat(layout, "hidden/weight", s.hidden, s.dim);
        auto b1 = p.vec(layout, "hidden/bias", s.hidden);
        auto w2 = p.mat(layout, "output/weight", s.classes, s.hidden);
        auto b2 = p.vec(layout, "output/bias", s.classes);
        Eigen::MatrixXd a = xb * w1.transpose();
        a.rowwise() += b1.transpose();
        const Eigen::MatrixXd h = a.cwiseMax(0.0);
        Eigen::MatrixXd g = h * w2.transpose();
        g.rowwise() += b2.transpose();
        softmax_rows(g);
        for (Eigen::Index i = 0; i < bs; ++i) g(i, y[order[start + i]]) -= 1.0;
        Eigen::MatrixXd dh = g * w2;
        dh = dh.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
        w2 -= step * (g.transpose() * h);
        b2 -= step * g.colwise().sum().transpose();
        w1 -= step * (dh.transpose() * xb);
        b1 -= step * dh.colwise().sum().transpose();
      }
    }
    if (!p.flat.allFinite()) throw Error(Errc::kDivergence, "non-finite parameters after epoch");
  }

  const double loss = mean_cross_entropy(forward_double(p, layout, x), y);
  if (!std::isfinite(loss)) throw Error(Errc::kDivergence, "non-finite training loss");
  try {
    return ModelWeights::from_doubles(layout, std::span<const double>(p.flat.data(), static_cast<size_t>(p.flat.size())));
  } catch (const Error& e) {
    throw Error(Errc::kDivergence, e.what());
  }
}

// ---- fixed-point inference ----

namespace {

FixedMatrix add_bias(FixedMatrix m, const ModelWeights& w, const std::string& name) {
  const Eigen::Index off = w.layout().offset(name);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += w[off + j];
  }
  return m;
}

}  // namespace

FixedMatrix layer_transposed(const ModelWeights& w, const std::string& name) {
  const auto& dims = w.layout().layer(name).dims;
  if (dims.size() != 2) throw Error(Errc::kLayoutMismatch, "layer is not a matrix: " + name);
  const Eigen::Index rows = dims[0], cols = dims[1];
  const Eigen::Index off = w.layout().offset(name);
  FixedMatrix t(cols, rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) t(c, r) = w[off + r * cols + c];
  }
  return t;
}

FixedForward forward_fixed(const ModelWeights& w, const FixedMatrix& features) {
  const ModelSpec s = ModelSpec::from_layout(w.layout());
  if (features.cols() != s.dim) throw Error(Errc::kShapeMismatch, "feature dimension does not match the model");
  FixedForward out;
  if (s.kind == ModelKind::kLogistic) {
    auto z = matmul_rescaled(features, layer_transposed(w, "linear/weight"));
    out.logits = add_bias(std::move(z.product), w, "linear/bias");
    out.logits_remainder = std::move(z.remainder);
    return out;
  }
  auto z1 = matmul_rescaled(features, layer_transposed(w, "hidden/weight"));
  out.pre = add_bias(std::move(z1.product), w, "hidden/bias");
  out.pre_remainder = std::move(z1.remainder);
  out.hidden = out.pre.unaryExpr([](const Fixed& v) { return v.raw() > 0 ? v : Fixed(); });
  auto z2 = matmul_rescaled(out.hidden, layer_transposed(w, "output/weight"));
  out.logits = add_bias(std::move(z2.product), w, "output/bias");
  out.logits_remainder = std::move(z2.remainder);
  return out;
}

std::vector<int> argmax_rows(const FixedMatrix& logits) {
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

int64_t correct_count(const ModelWeights& w, const Dataset& data) {
  require_compatible(ModelSpec::from_layout(w.layout()), data);
  const auto pred = argmax_rows(forward_fixed(w, data.fixed_features()).logits);
  int64_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels()[i];
  return correct;
}

double accuracy(const ModelWeights& w, const Dataset& data) {
  if (data.size() == 0) throw Error(Errc::kEmptyEval, "empty evaluation set");
  return static_cast<double>(correct_count(w, data)) / static_cast<double>(data.size());
}

// ---- attacks ----

Dataset poison_dataset(const Dataset& data) {
  if (data.size() == 0 || data.dim() == 0) return data;
  std::vector<double> first(static_cast<size_t>(data.size()));
  for (Eigen::Index i = 0; i < data.size(); ++i) first[static_cast<size_t>(i)] = data.features()(i, 0);
  std::vector<double> sorted = first;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = sorted[static_cast<size_t>(0.9 * static_cast<double>(sorted.size() - 1))];
  std::vector<int> labels = data.labels();
  for (size_t i = 0; i < labels.size(); ++i) {
    if (first[i] > threshold) labels[i] = 0;
  }
  return Dataset(data.features(), std::move(labels), data.num_classes());
}

ModelWeights apply_attack(const ModelWeights& w, const AttackSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case AttackKind::kByzantine: {
      if (!(spec.sigma > 0.0)) throw Error(Errc::kConfigError, "byzantine sigma must be positive");
      FixedVector v(w.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = Fixed::from_double(rng.normal(0.0, spec.sigma));
      return ModelWeights(w.layout(), std::move(v));
    }
    case AttackKind::kBackdoor: {
      if (!(spec.beta >= 1.0)) throw Error(Errc::kConfigError, "backdoor beta must be at least 1");
      const Fixed beta = Fixed::from_double(spec.beta);
      FixedVector v = w.data().unaryExpr([beta](const Fixed& x) { return beta * x; });
      return ModelWeights(w.layout(), std::move(v));
    }
    case AttackKind::kNone:
      break;
  }
  throw Error(Errc::kConfigError, "apply_attack requires an attack kind");
}

ModelWeights malicious_update(const ModelWeights& base, const Dataset& data, const TrainerConfig& cfg,
                              const AttackSpec& spec, Rng& rng) {
  if (spec.kind == AttackKind::kBackdoor) return apply_attack(train_local(base, poison_dataset(data), cfg), spec, rng);
  return apply_attack(base, spec, rng);
}

// ---- partitioning ----

std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec, size_t count, uint64_t seed) {
  if (count < 1) throw Error(Errc::kInsufficientData, "need at least one shard");
  Rng rng(seed);
  const auto n = static_cast<size_t>(data.size());
  std::vector<Dataset> shards;

  auto take = [&](std::vector<size_t> rows, size_t size) {
    rows.resize(size);
    shards.push_back(data.subset(rows));
  };

  switch (spec.scheme) {
    case PartitionScheme::kIid: {
      const size_t size = n / count;
      if (size == 0) throw Error(Errc::kInsufficientData, "fewer samples than shards");
      std::vector<size_t> order(n);
      std::iota(order.begin(), order.end(), size_t{0});
      rng.shuffle(order);
      for (size_t s = 0; s < count; ++s) {
        take(std::vector<size_t>(order.begin() + static_cast<ptrdiff_t>(s * size),
                                 order.begin() + static_cast<ptrdiff_t>((s + 1) * size)),
             size);
      }
      break;
    }
    case PartitionScheme::kLabelExclusive: {
      const auto k = static_cast<size_t>(data.num_classes());
      if (k < count) throw Error(Errc::kInsufficientData, "fewer labels than shards");
      std::vector<int> labels(k);
      std::iota(labels.begin(), labels.end(), 0);
      rng.shuffle(labels);
      std::vector<std::vector<size_t>> groups(count);
      std::vector<size_t> group_of(k);
      for (size_t i = 0; i < k; ++i) group_of[static_cast<size_t>(labels[i])] = i * count / k;
      for (size_t i = 0; i < n; ++i) groups[group_of[static_cast<size_t>(data.labels()[i])]].push_back(i);
      size_t size = n;
      for (auto& g : groups) {
        rng.shuffle(g);
        size = std::min(size, g.size());
      }
      if (size == 0) throw Error(Errc::kInsufficientData, "a label group is empty");
      for (auto& g : groups) take(std::move(g), size);
      break;
    }
    case PartitionScheme::kRareLabel: {
      if (spec.holder >= count) throw Error(Errc::kInsufficientData, "rare-label holder out of range");
      std::vector<size_t> rare, rest;
      for (size_t i = 0; i < n; ++i) {
        const int y = data.labels()[i];
        const bool is_rare = std::find(spec.rare_labels.begin(), spec.rare_labels.end(), y) != spec.rare_labels.end();
        (is_rare ? rare : rest).push_back(i);
      }
      rng.shuffle(rare);
      rng.shuffle(rest);
      size_t size = rare.size();
      if (count > 1) size = std::min(size, rest.size() / (count - 1));
      if (size == 0) throw Error(Errc::kInsufficientData, "not enough rare or common samples");
      size_t cursor = 0;
      for (size_t s = 0; s < count; ++s) {
        if (s == spec.holder) {
          take(rare, size);
        } else {
          take(std::vector<size_t>(rest.begin() + static_cast<ptrdiff_t>(cursor),
                                   rest.begin() + static_cast<ptrdiff_t>(cursor + size)),
               size);
          cursor += size;
        }
      }
      break;
    }
  }
  return shards;
}

OwnerSplit split_owner_data(const Dataset& data, uint64_t seed) {
  const auto n = static_cast<size_t>(data.size());
  if (n < 2) throw Error(Errc::kInsufficientData, "owner data needs at least two samples");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const size_t half = n / 2;
  std::vector<size_t> a(order.begin(), order.begin() + static_cast<ptrdiff_t>(half));
  std::vector<size_t> b(order.begin() + static_cast<ptrdiff_t>(half), order.end());
  return {data.subset(a), data.subset(b)};
}

Dataset sample_blobs(const BlobSpec& spec, size_t n, uint64_t seed) {
  if (spec.dim < 1 || spec.classes < 1) throw Error(Errc::kConfigError, "blob dimension and classes must be positive");
  Rng centers_rng(spec.center_seed);
  Eigen::MatrixXd centers(spec.classes, spec.dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = centers_rng.normal(0.0, spec.separation);

  Rng rng(seed);
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<size_t>(spec.classes));
  rng.shuffle(labels);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), spec.dim);
  for (size_t i = 0; i < n; ++i) {
    for (int j = 0; j < spec.dim; ++j) x(static_cast<Eigen::Index>(i), j) = centers(labels[i], j) + rng.normal();
  }
  return Dataset(std::move(x), std::move(labels), spec.classes);
}

// ---- IDX ----

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kNotFound, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) throw Error(Errc::kMalformed, "bad IDX magic");
  if (bytes[2] != 0x08) throw Error(Errc::kMalformed, "only unsigned-byte IDX files are supported");
  const size_t ndim = bytes[3];
  if (bytes.size() < 4 + 4 * ndim) throw Error(Errc::kMalformed, "truncated IDX header");
  IdxArray out;
  size_t total = 1;
  for (size_t i = 0; i < ndim; ++i) {
    const uint8_t* p = &bytes[4 + 4 * i];
    const uint32_t d = uint32_t{p[0]} << 24 | uint32_t{p[1]} << 16 | uint32_t{p[2]} << 8 | uint32_t{p[3]};
    out.dims.push_back(d);
    total *= d;
  }
  const size_t header = 4 + 4 * ndim;
  if (bytes.size() != header + total) throw Error(Errc::kMalformed, "IDX payload size mismatch");
  out.data.assign(bytes.begin() + static_cast<ptrdiff_t>(header), bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kNotFound, "cannot write " + path.string());
  const uint8_t magic[4] = {0, 0, 0x08, static_cast<uint8_t>(array.dims.size())};
  out.write(reinterpret_cast<const char*>(magic), 4);
  for (uint32_t d : array.dims) {
    const uint8_t be[4] = {static_cast<uint8_t>(d >> 24), static_cast<uint8_t>(d >> 16), static_cast<uint8_t>(d >> 8),
                           static_cast<uint8_t>(d)};
    out.write(reinterpret_cast<const char*>(be), 4);
  }
  out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.dims.empty() || lab.dims.size() != 1 || img.dims[0] != lab.dims[0]) {
    throw Error(Errc::kShapeMismatch, "image and label files disagree on sample count");
  }
  const auto n = static_cast<Eigen::Index>(img.dims[0]);
  Eigen::Index d = 1;
  for (size_t i = 1; i < img.dims.size(); ++i) d *= img.dims[i];
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = img.data[static_cast<size_t>(i * d + j)] / 255.0;
  }
  std::vector<int> y(lab.data.begin(), lab.data.end());
  return Dataset(std::move(x), std::move(y), num_classes);
}

DataManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kNotFound, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfigError, e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const char* key) {
    if (!j.contains(key)) throw Error(Errc::kConfigError, std::string("manifest missing '") + key + "'");
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  DataManifest m;
  m.train_images = resolve("train_images");
  m.train_labels = resolve("train_labels");
  m.owner_images = resolve("owner_images");
  m.owner_labels = resolve("owner_labels");
  m.num_classes = j.value("num_classes", 10);
  m.split_seed = j.value("split_seed", uint64_t{0});
  return m;
}

}  // namespace poc::ml
