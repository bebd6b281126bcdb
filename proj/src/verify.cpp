#include "poc/verify.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>
#include <unordered_map>

namespace poc::verify {

namespace {

constexpr uint8_t kMagic[4] = {'P', 'O', 'C', 'T'};
constexpr int kMaxRepetitions = 64;

struct CheckFailed {
  std::string stage;
  std::string message;
};

[[noreturn]] void fail(std::string stage, std::string message) {
  throw CheckFailed{std::move(stage), std::move(message)};
}

void require(bool cond, const char* stage, const std::string& message) {
  if (!cond) fail(stage, message);
}

template <typename Fn>
Verdict guarded(Fn&& fn) {
  try {
    fn();
    return Verdict::pass();
  } catch (const CheckFailed& f) {
    return Verdict::fail(f.stage, f.message);
  } catch (const Error& e) {
    return Verdict::fail("decode", e.what());
  } catch (const std::exception& e) {
    return Verdict::fail("decode", e.what());
  }
}

// Compact matrix codec used for witnesses: u64 rows, u64 cols, zigzag varints.
void put_fixed_matrix(ByteWriter& w, const FixedMatrix& m) {
  w.u64(static_cast<uint64_t>(m.rows()));
  w.u64(static_cast<uint64_t>(m.cols()));
  std::vector<int64_t> raw(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) raw[static_cast<size_t>(i)] = m.data()[i].raw();
  w.svarint_vec(raw);
}

void put_int_matrix(ByteWriter& w, const RemainderMatrix& m) {
  w.u64(static_cast<uint64_t>(m.rows()));
  w.u64(static_cast<uint64_t>(m.cols()));
  w.svarint_vec(std::span<const int64_t>(m.data(), static_cast<size_t>(m.size())));
}

std::pair<Eigen::Index, Eigen::Index> read_shape(ByteReader& r, size_t count) {
  const uint64_t rows = r.u64();
  const uint64_t cols = r.u64();
  if (rows == 0 || cols == 0 || rows > count || cols > count || rows * cols != count) {
    throw Error(Errc::kMalformed, "matrix shape does not match its entries");
  }
  return {static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

FixedMatrix get_fixed_matrix(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  ByteReader peek(bytes);
  peek.u64();
  peek.u64();
  const auto raw = peek.svarint_vec();
  const auto [rows, cols] = read_shape(r, raw.size());
  r.svarint_vec();
  r.expect_done();
  FixedMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Fixed::from_raw(raw[static_cast<size_t>(i)]);
  return m;
}

RemainderMatrix get_int_matrix(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  ByteReader peek(bytes);
  peek.u64();
  peek.u64();
  const auto raw = peek.svarint_vec();
  const auto [rows, cols] = read_shape(r, raw.size());
  r.svarint_vec();
  r.expect_done();
  RemainderMatrix m(rows, cols);
  std::copy(raw.begin(), raw.end(), m.data());
  return m;
}

Bytes fixed_matrix_bytes(const FixedMatrix& m) {
  ByteWriter w;
  put_fixed_matrix(w, m);
  return std::move(w).take();
}

Bytes int_matrix_bytes(const RemainderMatrix& m) {
  ByteWriter w;
  put_int_matrix(w, m);
  return std::move(w).take();
}

Bytes id_list_bytes(std::span<const TrainerId> ids) {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(ids.size()));
  for (TrainerId id : ids) w.u32(id);
  return std::move(w).take();
}

std::vector<TrainerId> read_id_list(ByteReader& r) {
  const uint32_t n = r.u32();
  if (n > r.remaining() / 4) throw Error(Errc::kMalformed, "id list exceeds input");
  std::vector<TrainerId> ids(n);
  for (auto& id : ids) id = r.u32();
  return ids;
}

/// Appends an inline response together with its commitment.
void put_inline(Transcript& t, const std::string& label, Bytes bytes) {
  t.commitments.push_back(commit(bytes, label));
  t.responses.emplace(label, std::move(bytes));
}

/// Commits bytes opened through the content store.
void put_external(Transcript& t, const std::string& label, Bytes bytes, std::vector<Bytes>& blobs) {
  t.commitments.push_back(commit(bytes, label));
  blobs.push_back(std::move(bytes));
}

void put_challenge(Transcript& t, size_t n) { t.challenges.emplace_back("v", derive_challenge(t.commitments, n)); }

class Opener {
 public:
  Opener(const Transcript& t, const BlobResolver& resolve) : t_(t), resolve_(resolve) {}

  Bytes bytes(const std::string& label) const {
    const Commitment* c = t_.commitment(label);
    if (c == nullptr) fail("commitment", "missing commitment " + label);
    Bytes b;
    if (auto it = t_.responses.find(label); it != t_.responses.end()) {
      b = it->second;
    } else {
      if (!resolve_) fail("opening", "no content store to open " + label);
      auto got = resolve_(c->digest);
      if (!got) fail("opening", "content not found for " + label);
      b = std::move(*got);
    }
    if (sha256(b) != c->digest) fail("commitment", "opening does not match commitment " + label);
    return b;
  }

  ModelWeights model(const std::string& label) const { return ModelWeights::deserialize(bytes(label)); }

 private:
  const Transcript& t_;
  const BlobResolver& resolve_;
};

int repetitions_of(const Transcript& t) {
  const int64_t reps = t.meta("reps");
  if (reps < 1 || reps > kMaxRepetitions) throw Error(Errc::kMalformed, "repetition count out of range");
  return static_cast<int>(reps);
}

std::vector<Fp> expect_challenge(const Transcript& t, size_t n) {
  const auto v = derive_challenge(t.commitments, n);
  require(t.challenges.size() == 1 && t.challenges[0].first == "v" && t.challenges[0].second == v, "challenge",
          "challenge does not match the commitments");
  return v;
}

std::vector<Fp> mat_vec(const FixedMatrix& m, std::span<const Fp> v) {
  std::vector<Fp> out(static_cast<size_t>(m.rows()), Fp(0));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Fp acc(0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) acc += encode(m(i, j)) * v[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc;
  }
  return out;
}

Fp inner(const FixedVector& x, std::span<const Fp> v) {
  Fp acc(0);
  for (Eigen::Index j = 0; j < x.size(); ++j) acc += encode(x[j]) * v[static_cast<size_t>(j)];
  return acc;
}

Fp inner(std::span<const int64_t> x, std::span<const Fp> v) {
  Fp acc(0);
  for (size_t j = 0; j < x.size(); ++j) acc += Fp::from_int(x[j]) * v[j];
  return acc;
}

TrainerId parse_id(const std::string& s) {
  if (s.empty() || s.size() > 10 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw Error(Errc::kMalformed, "bad trainer id in label");
  }
  const uint64_t v = std::stoull(s);
  if (v > UINT32_MAX) throw Error(Errc::kMalformed, "trainer id out of range");
  return static_cast<TrainerId>(v);
}

std::vector<TrainerId> ids_with_prefix(const Transcript& t, std::string_view prefix) {
  std::vector<TrainerId> ids;
  for (const auto& c : t.commitments) {
    if (c.label.starts_with(prefix)) ids.push_back(parse_id(c.label.substr(prefix.size())));
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error(Errc::kMalformed, "duplicate trainer id");
  return ids;
}

std::string id_label(std::string_view prefix, TrainerId id) { return std::string(prefix) + std::to_string(id); }

/// Projection check of an exact weighted mean:
/// W<v,agg> + <v,rem> == sum_i w_i <v,m_i>, with every remainder in [0, W).
void check_weighted_mean(const std::vector<const ModelWeights*>& members, std::span<const int64_t> weights,
                         const ModelWeights& agg, std::span<const int64_t> rem, std::span<const Fp> v, int reps,
                         const char* stage) {
  int128 total = 0;
  for (int64_t w : weights) {
    require(w > 0, "decode", "weights must be positive");
    total += w;
  }
  require(total > 0 && total < (int128{1} << 62), "decode", "total weight out of range");
  const auto d = static_cast<size_t>(agg.size());
  require(rem.size() == d, "decode", "remainder length mismatch");
  for (int64_t r : rem) require(r >= 0 && r < total, "range", "division remainder out of range");
  const Fp big_w = Fp::from_int(total);
  for (int rep = 0; rep < reps; ++rep) {
    const auto vr = v.subspan(static_cast<size_t>(rep) * d, d);
    Fp rhs(0);
    for (size_t i = 0; i < members.size(); ++i) rhs += Fp::from_int(weights[i]) * inner(members[i]->data(), vr);
    const Fp lhs = big_w * inner(agg.data(), vr) + inner(rem, vr);
    require(lhs == rhs, stage, "projection of the weighted mean does not match");
  }
}

FixedMatrix subtract_bias(const FixedMatrix& m, const ModelWeights& w, const std::string& name) {
  const Eigen::Index off = w.layout().offset(name);
  FixedMatrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = out(i, j) - w[off + j];
  }
  return out;
}

}  // namespace

// ---- commitments and challenges ----

Commitment commit(std::span<const uint8_t> bytes, std::string label) { return {std::move(label), sha256(bytes)}; }

std::vector<Fp> derive_challenge(std::span<const Commitment> commitments, size_t n) {
  if (n == 0) throw Error(Errc::kDomainError, "challenge length must be positive");
  Bytes seed;
  seed.reserve(commitments.size() * 32 + 8);
  for (const auto& c : commitments) seed.insert(seed.end(), c.digest.begin(), c.digest.end());
  const size_t prefix = seed.size();
  seed.resize(prefix + 8);
  constexpr uint64_t kMask = (uint64_t{1} << 61) - 1;
  std::vector<Fp> out;
  out.reserve(n);
  for (uint64_t counter = 0; out.size() < n; ++counter) {
    for (int i = 0; i < 8; ++i) seed[prefix + i] = static_cast<uint8_t>(counter >> (8 * i));
    const Digest h = sha256(seed);
    for (int k = 0; k < 4 && out.size() < n; ++k) {
      uint64_t x = 0;
      for (int i = 0; i < 8; ++i) x |= uint64_t{h[8 * k + i]} << (8 * i);
      x &= kMask;
      if (x < kModulus) out.push_back(Fp::from_canonical(x));
    }
  }
  return out;
}

std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::kMatmul: return "matmul";
    case Kind::kAggregation: return "aggregation";
    case Kind::kOutlier: return "outlier";
    case Kind::kAccuracy: return "accuracy";
  }
  return "unknown";
}

// ---- transcript container ----

Bytes Transcript::serialize() const {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kTranscriptVersion);
  w.u8(static_cast<uint8_t>(kind));
  w.u64(round);
  w.u32(static_cast<uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    w.str(k);
    w.i64(v);
  }
  w.u32(static_cast<uint32_t>(commitments.size()));
  for (const auto& c : commitments) {
    w.str(c.label);
    w.raw(c.digest);
  }
  w.u32(static_cast<uint32_t>(challenges.size()));
  for (const auto& [label, v] : challenges) {
    w.str(label);
    w.field_vec(v);
  }
  w.u32(static_cast<uint32_t>(responses.size()));
  for (const auto& [label, bytes] : responses) {
    w.str(label);
    w.blob(bytes);
  }
  return std::move(w).take();
}

Transcript Transcript::deserialize(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(Errc::kMalformed, "not a transcript");
  if (r.u16() != kTranscriptVersion) throw Error(Errc::kMalformed, "unsupported transcript version");
  Transcript t;
  const uint8_t kind = r.u8();
  if (kind < 1 || kind > 4) throw Error(Errc::kMalformed, "unknown transcript kind");
  t.kind = static_cast<Kind>(kind);
  t.round = r.u64();
  auto count = [&r](size_t min_entry) {
    const uint32_t n = r.u32();
    if (n > r.remaining() / min_entry) throw Error(Errc::kMalformed, "section count exceeds input");
    return n;
  };
  // Keys must be strictly increasing so every transcript has one byte form.
  std::string last;
  for (uint32_t i = 0, n = count(16); i < n; ++i) {
    std::string k = r.str();
    if (i > 0 && k <= last) throw Error(Errc::kMalformed, "metadata keys not strictly ordered");
    t.metadata.emplace(k, r.i64());
    last = std::move(k);
  }
  std::set<std::string> labels;
  for (uint32_t i = 0, n = count(40); i < n; ++i) {
    Commitment c;
    c.label = r.str();
    const auto d = r.raw(32);
    std::copy(d.begin(), d.end(), c.digest.begin());
    if (!labels.insert(c.label).second) throw Error(Errc::kMalformed, "duplicate commitment label");
    t.commitments.push_back(std::move(c));
  }
  for (uint32_t i = 0, n = count(16); i < n; ++i) {
    std::string label = r.str();
    t.challenges.emplace_back(std::move(label), r.field_vec());
  }
  for (uint32_t i = 0, n = count(16); i < n; ++i) {
    std::string k = r.str();
    if (i > 0 && k <= last) throw Error(Errc::kMalformed, "response labels not strictly ordered");
    t.responses.emplace(k, r.blob());
    last = std::move(k);
  }
  r.expect_done();
  return t;
}

const Commitment* Transcript::commitment(std::string_view label) const {
  for (const auto& c : commitments) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

int64_t Transcript::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw Error(Errc::kMalformed, "missing metadata " + key);
  return it->second;
}

BlobResolver resolver_from(std::span<const Bytes> blobs) {
  auto table = std::make_shared<std::map<Digest, Bytes>>();
  for (const auto& b : blobs) table->emplace(sha256(b), b);
  return [table](const Digest& d) -> std::optional<Bytes> {
    auto it = table->find(d);
    if (it == table->end()) return std::nullopt;
    return it->second;
  };
}

Verdict verify(const Transcript& t, const BlobResolver& resolve) {
  for (const auto& [label, bytes] : t.responses) {
    if (t.commitment(label) == nullptr) return Verdict::fail("decode", "response without commitment: " + label);
  }
  switch (t.kind) {
    case Kind::kMatmul: return verify_matmul(t, resolve);
    case Kind::kAggregation: return verify_aggregation(t, resolve);
    case Kind::kOutlier: return verify_outlier(t, resolve);
    case Kind::kAccuracy: return verify_accuracy(t, resolve);
  }
  return Verdict::fail("decode", "unknown transcript kind");
}

Verdict verify_bytes(std::span<const uint8_t> bytes, const BlobResolver& resolve) {
  Transcript t;
  try {
    t = Transcript::deserialize(bytes);
  } catch (const std::exception& e) {
    return Verdict::fail("decode", e.what());
  }
  return verify(t, resolve);
}

// ---- matrix products ----

bool freivalds_check(const FixedMatrix& a, const FixedMatrix& b, const FixedMatrix& c, const RemainderMatrix& r,
                     std::span<const Fp> v) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols() || r.rows() != c.rows() ||
      r.cols() != c.cols() || static_cast<Eigen::Index>(v.size()) != c.cols()) {
    return false;
  }
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (r.data()[i] < 0 || r.data()[i] >= kFixedOne) return false;
  }
  try {
    const auto abv = mat_vec(a, mat_vec(b, v));
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      Fp acc(0);
      for (Eigen::Index j = 0; j < c.cols(); ++j) {
        const int128 scaled = int128{c(i, j).raw()} * kFixedOne + r(i, j);
        acc += Fp::from_int(scaled) * v[static_cast<size_t>(j)];
      }
      if (!(acc == abv[static_cast<size_t>(i)])) return false;
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

MatmulProof prove_matmul(const FixedMatrix& a, const FixedMatrix& b, int repetitions) {
  if (repetitions < 1 || repetitions > kMaxRepetitions) throw Error(Errc::kDomainError, "repetitions out of range");
  RescaledProduct p = matmul_rescaled(a, b);
  MatmulProof out{std::move(p.product), std::move(p.remainder), {}};
  Transcript& t = out.transcript;
  t.kind = Kind::kMatmul;
  t.metadata = {{"cols", b.cols()}, {"inner", a.cols()}, {"reps", repetitions}, {"rows", a.rows()}};
  put_inline(t, "A", fixed_matrix_bytes(a));
  put_inline(t, "B", fixed_matrix_bytes(b));
  put_inline(t, "C", fixed_matrix_bytes(out.product));
  put_inline(t, "R", int_matrix_bytes(out.remainder));
  put_challenge(t, static_cast<size_t>(repetitions * b.cols()));
  return out;
}

Verdict verify_matmul(const Transcript& t, const BlobResolver& resolve) {
  return guarded([&] {
    require(t.kind == Kind::kMatmul, "decode", "not a matmul transcript");
    const Opener open(t, resolve);
    const FixedMatrix a = get_fixed_matrix(open.bytes("A"));
    const FixedMatrix b = get_fixed_matrix(open.bytes("B"));
    const FixedMatrix c = get_fixed_matrix(open.bytes("C"));
    const RemainderMatrix r = get_int_matrix(open.bytes("R"));
    require(a.rows() == t.meta("rows") && a.cols() == t.meta("inner") && b.rows() == a.cols() &&
                b.cols() == t.meta("cols") && c.rows() == a.rows() && c.cols() == b.cols() && r.rows() == c.rows() &&
                r.cols() == c.cols(),
            "decode", "matrix shapes do not match");
    const int reps = repetitions_of(t);
    const auto v = expect_challenge(t, static_cast<size_t>(reps * c.cols()));
    for (int rep = 0; rep < reps; ++rep) {
      const auto vr = std::span<const Fp>(v).subspan(static_cast<size_t>(rep * c.cols()), static_cast<size_t>(c.cols()));
      require(freivalds_check(a, b, c, r, vr), "freivalds", "A(Bv) != (2^f C + R)v");
    }
  });
}

// ---- aggregation ----

AggregationProof prove_aggregation(const ModelMap& models, const std::map<TrainerId, Fixed>& weights, uint64_t round,
                                   int repetitions) {
  if (models.empty()) throw Error(Errc::kEmptyInput, "no models to aggregate");
  if (repetitions < 1 || repetitions > kMaxRepetitions) throw Error(Errc::kDomainError, "repetitions out of range");
  std::vector<ModelWeights> ms;
  std::vector<Fixed> ws;
  std::vector<TrainerId> ids;
  for (const auto& [id, m] : models) {
    auto it = weights.find(id);
    if (it == weights.end()) throw Error(Errc::kDomainError, "missing aggregation weight");
    ids.push_back(id);
    ms.push_back(m);
    ws.push_back(it->second);
  }
  AggregationWitness aw = aggregate_with_witness(ms, ws);
  AggregationProof out{aw.aggregate, {}, {}};
  Transcript& t = out.transcript;
  t.kind = Kind::kAggregation;
  t.round = round;
  t.metadata = {{"count", static_cast<int64_t>(ids.size())}, {"predivided", 0}, {"reps", repetitions}};
  for (size_t i = 0; i < ids.size(); ++i) put_external(t, id_label("model:", ids[i]), ms[i].serialize(), out.blobs);
  ByteWriter wb;
  wb.u32(static_cast<uint32_t>(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    wb.u32(ids[i]);
    wb.fixed(ws[i]);
  }
  put_inline(t, "weights", std::move(wb).take());
  put_external(t, "aggregate", aw.aggregate.serialize(), out.blobs);
  ByteWriter rb;
  rb.svarint_vec(aw.remainders);
  put_inline(t, "remainder", std::move(rb).take());
  put_challenge(t, static_cast<size_t>(repetitions * aw.aggregate.size()));
  return out;
}

AggregationProof prove_aggregation_predivided(const ModelMap& models, uint64_t round, int repetitions) {
  if (models.empty()) throw Error(Errc::kEmptyInput, "no models to aggregate");
  if (repetitions < 1 || repetitions > kMaxRepetitions) throw Error(Errc::kDomainError, "repetitions out of range");
  const ModelWeights& first = models.begin()->second;
  FixedVector sum = FixedVector::Constant(first.size(), Fixed());
  for (const auto& [id, m] : models) {
    require_same_layout(first, m);
    for (Eigen::Index j = 0; j < sum.size(); ++j) sum[j] = sum[j] + m[j];
  }
  AggregationProof out{ModelWeights(first.layout(), std::move(sum)), {}, {}};
  Transcript& t = out.transcript;
  t.kind = Kind::kAggregation;
  t.round = round;
  t.metadata = {{"count", static_cast<int64_t>(models.size())}, {"predivided", 1}, {"reps", repetitions}};
  for (const auto& [id, m] : models) put_external(t, id_label("model:", id), m.serialize(), out.blobs);
  put_external(t, "aggregate", out.aggregate.serialize(), out.blobs);
  put_challenge(t, static_cast<size_t>(repetitions * out.aggregate.size()));
  return out;
}

std::vector<TrainerId> aggregation_members(const Transcript& t) { return ids_with_prefix(t, "model:"); }

std::map<TrainerId, Fixed> aggregation_weights(const Transcript& t) {
  std::map<TrainerId, Fixed> out;
  auto it = t.responses.find("weights");
  if (it == t.responses.end()) return out;
  ByteReader r(it->second);
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    const TrainerId id = r.u32();
    out[id] = r.fixed();
  }
  r.expect_done();
  return out;
}

Verdict verify_aggregation(const Transcript& t, const BlobResolver& resolve) {
  return guarded([&] {
    require(t.kind == Kind::kAggregation, "decode", "not an aggregation transcript");
    const Opener open(t, resolve);
    const auto ids = aggregation_members(t);
    require(!ids.empty() && static_cast<int64_t>(ids.size()) == t.meta("count"), "decode", "member count mismatch");
    std::vector<ModelWeights> models;
    for (TrainerId id : ids) models.push_back(open.model(id_label("model:", id)));
    const ModelWeights agg = open.model("aggregate");
    for (const auto& m : models) require(m.layout() == agg.layout(), "decode", "layout mismatch");
    const int reps = repetitions_of(t);
    const auto d = static_cast<size_t>(agg.size());
    const auto v = expect_challenge(t, static_cast<size_t>(reps) * d);
    std::vector<const ModelWeights*> members;
    for (const auto& m : models) members.push_back(&m);

    if (t.meta("predivided") != 0) {
      require(t.commitment("remainder") == nullptr, "decode", "pre-divided aggregation carries a division witness");
      for (int rep = 0; rep < reps; ++rep) {
        const auto vr = std::span<const Fp>(v).subspan(static_cast<size_t>(rep) * d, d);
        Fp rhs(0);
        for (const auto* m : members) rhs += inner(m->data(), vr);
        require(inner(agg.data(), vr) == rhs, "aggregate", "projection of the sum does not match");
      }
      return;
    }
    const Bytes wr_bytes = open.bytes("weights");
    ByteReader wr(wr_bytes);
    const uint32_t n = wr.u32();
    require(n == ids.size(), "decode", "weight count mismatch");
    std::vector<int64_t> weights;
    for (uint32_t i = 0; i < n; ++i) {
      require(wr.u32() == ids[i], "decode", "weight ids do not match members");
      weights.push_back(wr.i64());
    }
    wr.expect_done();
    const Bytes rr_bytes = open.bytes("remainder");
    ByteReader rr(rr_bytes);
    const auto rem = rr.svarint_vec();
    rr.expect_done();
    check_weighted_mean(members, weights, agg, rem, v, reps, "aggregate");
  });
}

// ---- outlier detection ----

OutlierProof prove_outlier(const outlier::RoundSubmissions& subs, double gamma, const outlier::DetectorState& state) {
  subs.validate();
  OutlierProof out;
  out.report = outlier::detect(subs, gamma, state);
  const outlier::DetectionReport& rep = out.report;
  Transcript& t = out.transcript;
  t.kind = Kind::kOutlier;
  t.round = subs.round;
  const bool krum = rep.cross_trainer_ran && (subs.round == 1 || !state.benign_average);
  const size_t n = subs.entries.size();
  t.metadata = {{"count", static_cast<int64_t>(n)},
                {"cross_trainer_ran", rep.cross_trainer_ran ? 1 : 0},
                {"flagged", rep.attack_flagged ? 1 : 0},
                {"gamma_bits", std::bit_cast<int64_t>(gamma)},
                {"krum_m", krum ? static_cast<int64_t>(n / 2) : 0},
                {"reps", 1}};
  for (const auto& [id, w] : subs.entries) put_external(t, id_label("sub:", id), w.serialize(), out.blobs);
  if (subs.round > 1) {
    for (const auto& [id, w] : subs.entries) {
      auto it = subs.previous->find(id);
      if (it != subs.previous->end()) put_external(t, id_label("prev:", id), it->second.serialize(), out.blobs);
    }
    ByteWriter cw;
    cw.u32(static_cast<uint32_t>(rep.cosine_scores.size()));
    for (const auto& [id, s] : rep.cosine_scores) {
      cw.u32(id);
      cw.f64(s);
    }
    put_inline(t, "cosine", std::move(cw).take());
  }
  ByteWriter pw;
  const std::vector<TrainerId> kept(rep.kept.begin(), rep.kept.end());
  const std::vector<TrainerId> removed(rep.removed.begin(), rep.removed.end());
  pw.raw(id_list_bytes(kept));
  pw.raw(id_list_bytes(removed));
  put_inline(t, "partition", std::move(pw).take());

  if (!rep.cross_trainer_ran) return out;

  ModelWeights reference;
  if (krum) {
    const auto sel = outlier::krum_select(subs.entries, n / 2);
    std::vector<ModelWeights> chosen;
    for (TrainerId id : sel.selected) chosen.push_back(subs.entries.at(id));
    const std::vector<Fixed> ones(chosen.size(), Fixed(1));
    AggregationWitness aw = aggregate_with_witness(chosen, ones);
    reference = aw.aggregate;
    ByteWriter kw;
    kw.raw(id_list_bytes(sel.selected));
    kw.svarint_vec(aw.remainders);
    put_inline(t, "krum", std::move(kw).take());
  } else {
    reference = *state.benign_average;
  }
  put_external(t, "reference", reference.serialize(), out.blobs);

  ByteWriter sw;
  sw.u32(static_cast<uint32_t>(n));
  std::vector<Fixed> scores;
  for (const auto& [id, w] : subs.entries) {
    const int128 d2 = squared_distance_raw(w, reference);
    if (d2 >= kModulus) throw Error(Errc::kOverflow, "squared distance exceeds the field");
    sw.u32(id);
    sw.u64(static_cast<uint64_t>(d2));
    sw.fixed(rep.l2_scores.at(id));
    scores.push_back(rep.l2_scores.at(id));
  }
  put_inline(t, "scores", std::move(sw).take());
  const outlier::ThreeSigma ts = outlier::three_sigma(scores);
  ByteWriter stw;
  stw.fixed(ts.mean);
  stw.i64(ts.mean_div.remainder);
  stw.i64(ts.variance_div.quotient);
  stw.i64(ts.variance_div.remainder);
  stw.fixed(ts.sigma);
  put_inline(t, "stats", std::move(stw).take());
  if (krum) put_challenge(t, static_cast<size_t>(reference.size()));
  return out;
}

namespace {

struct Partition {
  std::vector<TrainerId> kept;
  std::vector<TrainerId> removed;
};

Partition read_partition(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  Partition p;
  p.kept = read_id_list(r);
  p.removed = read_id_list(r);
  r.expect_done();
  return p;
}

struct ScoreWitness {
  TrainerId id;
  uint64_t d2;
  Fixed score;
};

std::vector<ScoreWitness> read_scores(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const uint32_t n = r.u32();
  if (n > r.remaining() / 20) throw Error(Errc::kMalformed, "score count exceeds input");
  std::vector<ScoreWitness> out(n);
  for (auto& s : out) {
    s.id = r.u32();
    s.d2 = r.u64();
    s.score = r.fixed();
  }
  r.expect_done();
  return out;
}

std::map<TrainerId, double> read_cosines(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const uint32_t n = r.u32();
  if (n > r.remaining() / 12) throw Error(Errc::kMalformed, "cosine count exceeds input");
  std::map<TrainerId, double> out;
  for (uint32_t i = 0; i < n; ++i) {
    const TrainerId id = r.u32();
    out[id] = r.f64();
  }
  r.expect_done();
  return out;
}

struct Stats {
  Fixed mean;
  int64_t mean_rem;
  int64_t var_q;
  int64_t var_rem;
  Fixed sigma;
};

Stats read_stats(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  Stats s{r.fixed(), r.i64(), r.i64(), r.i64(), r.fixed()};
  r.expect_done();
  return s;
}

}  // namespace

Verdict verify_outlier(const Transcript& t, const BlobResolver& resolve) {
  return guarded([&] {
    require(t.kind == Kind::kOutlier, "decode", "not an outlier transcript");
    require(t.round >= 1, "decode", "rounds start at 1");
    const Opener open(t, resolve);
    const auto sub_ids = ids_with_prefix(t, "sub:");
    const size_t n = sub_ids.size();
    require(n >= 1 && static_cast<int64_t>(n) == t.meta("count"), "decode", "submitter count mismatch");
    ModelMap subs;
    for (TrainerId id : sub_ids) subs.emplace(id, open.model(id_label("sub:", id)));
    const bool flagged = t.meta("flagged") != 0;
    const bool ran = t.meta("cross_trainer_ran") != 0;
    const double gamma = std::bit_cast<double>(t.meta("gamma_bits"));

    const Partition part = read_partition(open.bytes("partition"));
    {
      std::set<TrainerId> kept(part.kept.begin(), part.kept.end());
      std::set<TrainerId> removed(part.removed.begin(), part.removed.end());
      std::set<TrainerId> all(sub_ids.begin(), sub_ids.end());
      std::set<TrainerId> joined = kept;
      joined.insert(removed.begin(), removed.end());
      require(kept.size() == part.kept.size() && removed.size() == part.removed.size() &&
                  kept.size() + removed.size() == n && joined == all,
              "partition", "kept and removed do not partition the submitters");
    }

    outlier::RoundSubmissions rs{t.round, subs, std::nullopt};
    if (t.round > 1) {
      ModelMap prev;
      for (TrainerId id : ids_with_prefix(t, "prev:")) {
        require(subs.count(id) == 1, "decode", "previous model for a non-submitter");
        prev.emplace(id, open.model(id_label("prev:", id)));
      }
      rs.previous = std::move(prev);
      const auto cr = outlier::cross_round_check(rs, gamma);
      require(cr.flagged == flagged, "cross_round", "attack flag does not match the cosine replay");
      require(cr.scores == read_cosines(open.bytes("cosine")), "cross_round", "cosine scores do not match");
      require(ran == flagged, "cross_round", "cross-trainer check must run exactly when flagged");
    } else {
      require(ran && !flagged, "cross_round", "round 1 always runs the cross-trainer check unflagged");
    }
    if (!ran) {
      require(part.removed.empty(), "partition", "removal without a cross-trainer check");
      return;
    }
    require(n >= 3, "decode", "cross-trainer check needs at least three submitters");

    const ModelWeights reference = open.model("reference");
    const int64_t krum_m = t.meta("krum_m");
    if (krum_m != 0) {
      require(krum_m == static_cast<int64_t>(n / 2), "krum", "Krum selection size must be floor(L/2)");
      const Bytes kr_bytes = open.bytes("krum");
      ByteReader kr(kr_bytes);
      const auto selected = read_id_list(kr);
      const auto rem = kr.svarint_vec();
      kr.expect_done();
      const auto sel = outlier::krum_select(subs, static_cast<size_t>(krum_m));
      require(sel.selected == selected, "krum", "Krum selection does not match the replay");
      std::vector<const ModelWeights*> members;
      for (TrainerId id : selected) {
        members.push_back(&subs.at(id));
        require(subs.at(id).layout() == reference.layout(), "decode", "layout mismatch");
      }
      const std::vector<int64_t> ones(members.size(), kFixedOne);
      const auto v = expect_challenge(t, static_cast<size_t>(reference.size()));
      check_weighted_mean(members, ones, reference, rem, v, 1, "reference");
    } else {
      require(t.round > 1, "reference", "round 1 must use the Krum reference");
      require(t.challenges.empty(), "challenge", "unexpected challenge");
    }

    const auto scores = read_scores(open.bytes("scores"));
    require(scores.size() == n, "score", "score count mismatch");
    int128 sum = 0;
    for (size_t i = 0; i < n; ++i) {
      const auto& s = scores[i];
      require(s.id == sub_ids[i], "score", "score ids do not match submitters");
      require(s.d2 < kModulus, "score", "squared distance out of range");
      require(subs.at(s.id).layout() == reference.layout(), "decode", "layout mismatch");
      require(squared_distance_raw(subs.at(s.id), reference) == static_cast<int128>(s.d2), "score",
              "squared distance witness is wrong");
      require(check_isqrt(s.d2, s.score.raw()), "sqrt", "distance is not floor(sqrt(squared distance))");
      sum += s.score.raw();
    }
    const Stats st = read_stats(open.bytes("stats"));
    require(check_divmod(sum, static_cast<int64_t>(n), st.mean.raw(), st.mean_rem), "division",
            "mean division witness is wrong");
    int128 dev = 0;
    for (const auto& s : scores) {
      const int128 d = int128{s.score.raw()} - st.mean.raw();
      dev += d * d;
    }
    require(check_divmod(dev, static_cast<int64_t>(n - 1), st.var_q, st.var_rem), "division",
            "variance division witness is wrong");
    require(check_isqrt(st.var_q, st.sigma.raw()), "sqrt", "sigma is not floor(sqrt(variance))");
    const Fixed boundary = st.mean + st.sigma;
    std::vector<TrainerId> removed;
    for (const auto& s : scores) {
      if (s.score > boundary) removed.push_back(s.id);
    }
    require(removed == part.removed, "partition", "removed set does not match the mean + sigma boundary");
  });
}

outlier::DetectionReport report_from_transcript(const Transcript& t) {
  outlier::DetectionReport r;
  r.round = t.round;
  r.attack_flagged = t.meta("flagged") != 0;
  r.cross_trainer_ran = t.meta("cross_trainer_ran") != 0;
  auto response = [&t](const std::string& label) -> const Bytes& {
    auto it = t.responses.find(label);
    if (it == t.responses.end()) throw Error(Errc::kMalformed, "missing response " + label);
    return it->second;
  };
  const Partition part = read_partition(response("partition"));
  r.kept.insert(part.kept.begin(), part.kept.end());
  r.removed.insert(part.removed.begin(), part.removed.end());
  if (t.round > 1) r.cosine_scores = read_cosines(response("cosine"));
  if (r.cross_trainer_ran) {
    for (const auto& s : read_scores(response("scores"))) r.l2_scores[s.id] = s.score;
    const Stats st = read_stats(response("stats"));
    r.mean = st.mean;
    r.sigma = st.sigma;
    r.boundary = st.mean + st.sigma;
  }
  return r;
}

// ---- accuracy ----

AccuracyProof prove_accuracy(const ModelWeights& w, const ml::Dataset& data, uint64_t round, int repetitions) {
  if (data.size() == 0) throw Error(Errc::kEmptyEval, "empty evaluation set");
  if (repetitions < 1 || repetitions > kMaxRepetitions) throw Error(Errc::kDomainError, "repetitions out of range");
  const ml::ModelSpec spec = ml::ModelSpec::from_layout(w.layout());
  const ml::FixedForward fwd = ml::forward_fixed(w, data.fixed_features());
  const auto pred = ml::argmax_rows(fwd.logits);
  AccuracyProof out;
  out.total = data.size();
  for (size_t i = 0; i < pred.size(); ++i) out.correct += pred[i] == data.labels()[i];
  const bool mlp = spec.kind == ml::ModelKind::kMlp;
  Transcript& t = out.transcript;
  t.kind = Kind::kAccuracy;
  t.round = round;
  t.metadata = {{"correct", out.correct}, {"mlp", mlp ? 1 : 0}, {"n", out.total}, {"reps", repetitions}};
  put_external(t, "model", w.serialize(), out.blobs);
  put_external(t, "dataset", data.serialize(), out.blobs);
  size_t challenge_len = static_cast<size_t>(repetitions) * static_cast<size_t>(spec.classes);
  if (mlp) {
    put_inline(t, "pre", fixed_matrix_bytes(fwd.pre));
    put_inline(t, "pre_remainder", int_matrix_bytes(fwd.pre_remainder));
    put_inline(t, "hidden", fixed_matrix_bytes(fwd.hidden));
    challenge_len += static_cast<size_t>(repetitions) * static_cast<size_t>(spec.hidden);
  }
  put_inline(t, "logits", fixed_matrix_bytes(fwd.logits));
  put_inline(t, "logits_remainder", int_matrix_bytes(fwd.logits_remainder));
  put_challenge(t, challenge_len);
  return out;
}

Verdict verify_accuracy(const Transcript& t, const BlobResolver& resolve) {
  return guarded([&] {
    require(t.kind == Kind::kAccuracy, "decode", "not an accuracy transcript");
    const Opener open(t, resolve);
    const ModelWeights w = open.model("model");
    const ml::Dataset data = ml::Dataset::deserialize(open.bytes("dataset"));
    const ml::ModelSpec spec = ml::ModelSpec::from_layout(w.layout());
    require(data.size() > 0 && data.dim() == spec.dim && data.num_classes() == spec.classes, "decode",
            "dataset does not fit the model");
    require(t.meta("n") == data.size(), "count", "sample count does not match the dataset");
    const bool mlp = spec.kind == ml::ModelKind::kMlp;
    require(t.meta("mlp") == (mlp ? 1 : 0), "decode", "model kind mismatch");
    const int reps = repetitions_of(t);
    const auto k = static_cast<size_t>(spec.classes);
    const auto h = static_cast<size_t>(mlp ? spec.hidden : 0);
    const auto v = expect_challenge(t, static_cast<size_t>(reps) * (k + h));
    const std::span<const Fp> vs(v);
    const FixedMatrix x = data.fixed_features();

    FixedMatrix input = x;
    std::string out_weight = "linear/weight", out_bias = "linear/bias";
    if (mlp) {
      const FixedMatrix pre = get_fixed_matrix(open.bytes("pre"));
      const RemainderMatrix pre_rem = get_int_matrix(open.bytes("pre_remainder"));
      const FixedMatrix hidden = get_fixed_matrix(open.bytes("hidden"));
      require(pre.rows() == data.size() && pre.cols() == spec.hidden && hidden.rows() == pre.rows() &&
                  hidden.cols() == pre.cols(),
              "decode", "hidden layer shape mismatch");
      const FixedMatrix w1 = ml::layer_transposed(w, "hidden/weight");
      const FixedMatrix z1 = subtract_bias(pre, w, "hidden/bias");
      for (int rep = 0; rep < reps; ++rep) {
        require(freivalds_check(x, w1, z1, pre_rem, vs.subspan(static_cast<size_t>(rep) * h, h)), "freivalds",
                "hidden layer product check failed");
      }
      for (Eigen::Index i = 0; i < pre.size(); ++i) {
        const Fixed p = pre.data()[i];
        require(hidden.data()[i] == (p.raw() > 0 ? p : Fixed()), "relu", "hidden != max(pre, 0)");
      }
      input = hidden;
      out_weight = "output/weight";
      out_bias = "output/bias";
    }
    const FixedMatrix logits = get_fixed_matrix(open.bytes("logits"));
    const RemainderMatrix rem = get_int_matrix(open.bytes("logits_remainder"));
    require(logits.rows() == data.size() && logits.cols() == spec.classes, "decode", "logit shape mismatch");
    const FixedMatrix w2 = ml::layer_transposed(w, out_weight);
    const FixedMatrix z2 = subtract_bias(logits, w, out_bias);
    const size_t base = static_cast<size_t>(reps) * h;
    for (int rep = 0; rep < reps; ++rep) {
      require(freivalds_check(input, w2, z2, rem, vs.subspan(base + static_cast<size_t>(rep) * k, k)), "freivalds",
              "output layer product check failed");
    }
    const auto pred = ml::argmax_rows(logits);
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels()[i];
    require(correct == t.meta("correct"), "count", "claimed correct count does not match the replay");
  });
}

}  // namespace poc::verify
