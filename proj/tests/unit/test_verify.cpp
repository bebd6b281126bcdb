#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "poc/error.hpp"
#include "poc/verify.hpp"

namespace poc::verify {
namespace {

Bytes str_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

FixedMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen, int64_t bound = 4) {
  FixedMatrix m(r, c);
  std::uniform_int_distribution<int64_t> dist(-bound * kFixedOne, bound * kFixedOne);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = Fixed::from_raw(dist(gen));
  return m;
}

ModelWeights flat(std::vector<double> v) {
  return ModelWeights::from_doubles(Layout({LayerShape{"w", {static_cast<int64_t>(v.size())}}}), v);
}

// Re-derives commitments of inline responses and the challenge, as a cheating
// prover who edits a witness would.
void recommit(Transcript& t) {
  for (auto& c : t.commitments) {
    if (auto it = t.responses.find(c.label); it != t.responses.end()) c.digest = sha256(it->second);
  }
  for (auto& [label, v] : t.challenges) v = derive_challenge(t.commitments, v.size());
}

Bytes matrix_bytes(const FixedMatrix& m) {
  ByteWriter w;
  w.u64(static_cast<uint64_t>(m.rows()));
  w.u64(static_cast<uint64_t>(m.cols()));
  std::vector<int64_t> raw;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) raw.push_back(m(i, j).raw());
  w.svarint_vec(raw);
  return std::move(w).take();
}

FixedMatrix matrix_from(const Bytes& b) {
  ByteReader r(b);
  const auto rows = static_cast<Eigen::Index>(r.u64());
  const auto cols = static_cast<Eigen::Index>(r.u64());
  const auto raw = r.svarint_vec();
  FixedMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = Fixed::from_raw(raw[static_cast<size_t>(i * cols + j)]);
  return m;
}

TEST(Commit, Digests) {
  EXPECT_EQ(to_hex(commit({}).digest), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const Bytes x = str_bytes("model bytes");
  EXPECT_EQ(commit(x), commit(x));
  std::mt19937_64 gen(1);
  for (int i = 0; i < 200; ++i) {
    Bytes b(1 + gen() % 64);
    for (auto& v : b) v = static_cast<uint8_t>(gen());
    Bytes flipped = b;
    flipped[gen() % b.size()] ^= static_cast<uint8_t>(1u << (gen() % 8));
    EXPECT_NE(commit(b).digest, commit(flipped).digest);
  }
}

TEST(Challenge, GoldenVector) {
  const std::vector<Commitment> cs{commit(str_bytes("a"), "A"), commit(str_bytes("b"), "B")};
  const auto v = derive_challenge(cs, 4);
  std::vector<uint64_t> raw;
  for (Fp x : v) raw.push_back(x.value());
  EXPECT_EQ(raw, (std::vector<uint64_t>{1380272100351432416ull, 1284612585032927152ull, 689533212900338170ull,
                                         1617338969862207420ull}));
  for (Fp x : v) EXPECT_LT(x.value(), kModulus);
  const std::vector<Commitment> swapped{cs[1], cs[0]};
  EXPECT_NE(derive_challenge(swapped, 4), v);
  // Prefixes agree: a longer challenge extends a shorter one.
  const auto longer = derive_challenge(cs, 9);
  EXPECT_TRUE(std::equal(v.begin(), v.end(), longer.begin()));
  EXPECT_THROW(derive_challenge(cs, 0), Error);
}

TEST(Transcript, SerializationRoundTrip) {
  std::mt19937_64 gen(2);
  const auto p = prove_matmul(random_matrix(3, 4, gen), random_matrix(4, 2, gen), 2);
  const Bytes b = p.transcript.serialize();
  EXPECT_EQ(Transcript::deserialize(b), p.transcript);
  EXPECT_EQ(b[0], 'P');
  EXPECT_EQ(b[3], 'T');
  EXPECT_THROW(Transcript::deserialize(Bytes(b.begin(), b.end() - 1)), Error);
  Bytes bad = b;
  bad[0] = 'X';
  EXPECT_THROW(Transcript::deserialize(bad), Error);
  EXPECT_FALSE(verify_bytes(bad).ok);
  EXPECT_EQ(verify_bytes(bad).stage, "decode");
}

TEST(Transcript, GoldenMatmulFile) {
  const auto path = std::filesystem::path(POC_GOLDEN_DIR) / "matmul_3x4x2.bin";
  FixedMatrix a(3, 4), b(4, 2);
  for (int i = 0; i < 12; ++i) a(i / 4, i % 4) = Fixed::from_double(0.25 * (i - 5));
  for (int i = 0; i < 8; ++i) b(i / 2, i % 2) = Fixed::from_double(1.5 - 0.375 * i);
  const Bytes fresh = prove_matmul(a, b).transcript.serialize();
  if (std::getenv("POC_WRITE_GOLDEN") != nullptr) {
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(fresh.data()),
                                                static_cast<std::streamsize>(fresh.size()));
  }
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << path;
  const Bytes golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(fresh, golden);
  EXPECT_TRUE(verify_bytes(golden).ok);
}

TEST(Matmul, HonestProductsAccepted) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 20; ++i) {
    const auto p = prove_matmul(random_matrix(8, 8, gen), random_matrix(8, 8, gen));
    EXPECT_TRUE(verify_matmul(p.transcript).ok);
    EXPECT_EQ(p.product, matmul_rescaled(matrix_from(p.transcript.responses.at("A")),
                                         matrix_from(p.transcript.responses.at("B")))
                             .product);
  }
  EXPECT_THROW(prove_matmul(random_matrix(2, 3, gen), random_matrix(2, 3, gen)), Error);
}

TEST(Matmul, SingleEntryTamperRejected) {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 300; ++i) {
    auto p = prove_matmul(random_matrix(8, 8, gen), random_matrix(8, 8, gen));
    FixedMatrix c = p.product;
    const auto r = static_cast<Eigen::Index>(gen() % 8), col = static_cast<Eigen::Index>(gen() % 8);
    const int64_t delta = static_cast<int64_t>(gen() % 1000) + 1;
    c(r, col) = c(r, col) + Fixed::from_raw(gen() % 2 ? delta : -delta);
    p.transcript.responses["C"] = matrix_bytes(c);
    recommit(p.transcript);
    const Verdict v = verify_matmul(p.transcript);
    EXPECT_FALSE(v.ok);
    EXPECT_EQ(v.stage, "freivalds");
  }
}

TEST(Matmul, ZeroFactorForcesZeroProduct) {
  std::mt19937_64 gen(5);
  auto p = prove_matmul(FixedMatrix::Zero(4, 4), random_matrix(4, 4, gen));
  EXPECT_TRUE(verify_matmul(p.transcript).ok);
  FixedMatrix c = FixedMatrix::Zero(4, 4);
  c(2, 1) = Fixed::lsb();
  p.transcript.responses["C"] = matrix_bytes(c);
  recommit(p.transcript);
  EXPECT_FALSE(verify_matmul(p.transcript).ok);
}

TEST(Matmul, StaleCommitmentOrChallengeRejected) {
  std::mt19937_64 gen(6);
  auto p = prove_matmul(random_matrix(3, 3, gen), random_matrix(3, 3, gen));
  Transcript edited = p.transcript;
  FixedMatrix c = p.product;
  c(0, 0) = c(0, 0) + Fixed::lsb();
  edited.responses["C"] = matrix_bytes(c);
  EXPECT_EQ(verify(edited).stage, "commitment");
  Transcript rechallenged = p.transcript;
  rechallenged.challenges[0].second[0] += Fp(1);
  EXPECT_EQ(verify(rechallenged).stage, "challenge");
  Transcript orphan = p.transcript;
  orphan.responses["extra"] = Bytes{1};
  EXPECT_EQ(verify(orphan).stage, "decode");
}

ModelMap eight_models(std::mt19937_64& gen) {
  ModelMap m;
  std::normal_distribution<double> n(0.0, 1.0);
  for (TrainerId id = 1; id <= 8; ++id) {
    std::vector<double> v(25);
    for (auto& x : v) x = n(gen);
    m.emplace(id, flat(v));
  }
  return m;
}

TEST(Aggregation, HonestAccepted) {
  std::mt19937_64 gen(7);
  const ModelMap m = eight_models(gen);
  std::map<TrainerId, Fixed> w;
  for (const auto& [id, x] : m) w[id] = Fixed(1);
  const auto p = prove_aggregation(m, w, 3, 2);
  const Verdict v = verify_aggregation(p.transcript, resolver_from(p.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;
  EXPECT_EQ(aggregation_members(p.transcript).size(), 8u);
  EXPECT_EQ(aggregation_weights(p.transcript), w);
  EXPECT_EQ(p.transcript.round, 3u);
  // Without a resolver the external openings fail.
  EXPECT_EQ(verify_aggregation(p.transcript, {}).stage, "opening");
}

TEST(Aggregation, DroppedModelRejected) {
  std::mt19937_64 gen(8);
  const ModelMap m = eight_models(gen);
  std::map<TrainerId, Fixed> w;
  for (const auto& [id, x] : m) w[id] = Fixed::from_int(10 + id);
  const auto full = prove_aggregation(m, w);
  ModelMap seven = m;
  seven.erase(4);
  std::map<TrainerId, Fixed> w7 = w;
  w7.erase(4);
  auto p = prove_aggregation(seven, w7);
  // Claim the eight-model aggregate over seven committed models.
  std::vector<Bytes> blobs = p.blobs;
  for (const auto& b : full.blobs) blobs.push_back(b);
  for (auto& c : p.transcript.commitments) {
    if (c.label == "aggregate") c.digest = sha256(full.aggregate.serialize());
  }
  recommit(p.transcript);
  const Verdict v = verify_aggregation(p.transcript, resolver_from(blobs));
  EXPECT_FALSE(v.ok);
}

TEST(Aggregation, RemainderOutOfRangeRejected) {
  std::mt19937_64 gen(9);
  const ModelMap m = eight_models(gen);
  std::map<TrainerId, Fixed> w;
  for (const auto& [id, x] : m) w[id] = Fixed(1);
  auto p = prove_aggregation(m, w);
  ByteReader r(p.transcript.responses.at("remainder"));
  auto rem = r.svarint_vec();
  // r + W with the aggregate one LSB lower keeps the identity but breaks the range.
  rem[0] += 8 * kFixedOne;
  ModelWeights agg = p.aggregate;
  agg[0] = agg[0] - Fixed::lsb();
  ByteWriter wr;
  wr.svarint_vec(rem);
  p.transcript.responses["remainder"] = std::move(wr).take();
  for (auto& c : p.transcript.commitments) {
    if (c.label == "aggregate") c.digest = sha256(agg.serialize());
  }
  p.blobs.push_back(agg.serialize());
  recommit(p.transcript);
  const Verdict v = verify_aggregation(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "range");
}

TEST(Aggregation, PredividedModeAccepted) {
  std::mt19937_64 gen(10);
  ModelMap m = eight_models(gen);
  ModelWeights sum = ModelWeights::zeros(m.begin()->second.layout());
  for (auto& [id, w] : m) {
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      w[j] = Fixed::from_raw(w[j].raw() / 8);
      sum[j] = sum[j] + w[j];
    }
  }
  const auto p = prove_aggregation_predivided(m);
  EXPECT_EQ(p.aggregate, sum);
  EXPECT_EQ(p.transcript.commitment("remainder"), nullptr);
  const Verdict v = verify_aggregation(p.transcript, resolver_from(p.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;
  EXPECT_TRUE(aggregation_weights(p.transcript).empty());
}

outlier::RoundSubmissions round_one(std::mt19937_64& gen, bool with_outlier) {
  outlier::RoundSubmissions s{1, {}, std::nullopt};
  std::normal_distribution<double> n(0.0, 0.05);
  for (TrainerId id = 1; id <= 6; ++id) {
    std::vector<double> v(40);
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::cos(static_cast<double>(i)) + n(gen);
    s.entries.emplace(id, flat(v));
  }
  if (with_outlier) {
    std::vector<double> far(40, 30.0);
    s.entries[5] = flat(far);
  }
  return s;
}

TEST(Outlier, HonestReportsAccepted) {
  std::mt19937_64 gen(11);
  const auto s1 = round_one(gen, true);
  const auto p1 = prove_outlier(s1, 0.3, {});
  EXPECT_EQ(p1.report.removed, std::set<TrainerId>{5});
  Verdict v = verify_outlier(p1.transcript, resolver_from(p1.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;
  EXPECT_EQ(report_from_transcript(p1.transcript).removed, p1.report.removed);

  // Round 2, quiet: no cross-trainer stage.
  outlier::RoundSubmissions s2{2, s1.entries, s1.entries};
  const auto p2 = prove_outlier(s2, 0.3, {s1.entries.at(1)});
  EXPECT_FALSE(p2.report.cross_trainer_ran);
  v = verify_outlier(p2.transcript, resolver_from(p2.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;

  // Round 2 with an attack against a previous benign average.
  outlier::RoundSubmissions s3{2, s1.entries, s1.entries};
  std::vector<double> neg(40);
  for (size_t i = 0; i < neg.size(); ++i) neg[i] = -std::cos(static_cast<double>(i));
  s3.entries[2] = flat(neg);
  const auto p3 = prove_outlier(s3, 0.3, {s1.entries.at(1)});
  EXPECT_TRUE(p3.report.attack_flagged);
  v = verify_outlier(p3.transcript, resolver_from(p3.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;
}

TEST(Outlier, KeptOutlierRejectedAtPartition) {
  std::mt19937_64 gen(12);
  auto p = prove_outlier(round_one(gen, true), 0.3, {});
  ByteWriter w;
  w.u32(6);
  for (TrainerId id = 1; id <= 6; ++id) w.u32(id);
  w.u32(0);
  p.transcript.responses["partition"] = std::move(w).take();
  recommit(p.transcript);
  const Verdict v = verify_outlier(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "partition");
}

TEST(Outlier, ZeroSigmaRoundAccepted) {
  outlier::RoundSubmissions s{1, {}, std::nullopt};
  for (TrainerId id = 1; id <= 4; ++id) s.entries.emplace(id, flat({1, 2, 3}));
  const auto p = prove_outlier(s, 0.3, {});
  EXPECT_TRUE(p.report.removed.empty());
  EXPECT_EQ(p.report.sigma, Fixed());
  EXPECT_TRUE(verify_outlier(p.transcript, resolver_from(p.blobs)).ok);
}

TEST(Outlier, ScoreTamperRejected) {
  std::mt19937_64 gen(13);
  auto p = prove_outlier(round_one(gen, false), 0.3, {});
  Bytes& scores = p.transcript.responses.at("scores");
  scores[4 + 12] ^= 1;  // first entry's score, low byte
  recommit(p.transcript);
  const Verdict v = verify_outlier(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "sqrt");
}

ml::Dataset data(uint64_t seed, size_t n) { return ml::sample_blobs(ml::BlobSpec{5, 3, 1.5, 4}, n, seed); }

TEST(Accuracy, HonestLogisticAccepted) {
  const auto d = data(1, 60);
  const ModelWeights w =
      ml::train_local(ml::init_model(ml::ModelSpec{ml::ModelKind::kLogistic, 5, 3, 0}, 2), d, {0.1, 2, 10, 3});
  const auto p = prove_accuracy(w, d, 4);
  EXPECT_EQ(p.correct, ml::correct_count(w, d));
  EXPECT_EQ(p.total, 60);
  const Verdict v = verify_accuracy(p.transcript, resolver_from(p.blobs));
  EXPECT_TRUE(v.ok) << v.stage << ": " << v.message;
}

TEST(Accuracy, InflatedCountRejected) {
  const auto d = data(2, 50);
  const ModelWeights w = ml::init_model(ml::ModelSpec{ml::ModelKind::kLogistic, 5, 3, 0}, 5);
  auto p = prove_accuracy(w, d);
  p.transcript.metadata["correct"] += 1;
  const Verdict v = verify_accuracy(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "count");
}

TEST(Accuracy, MlpAcceptedAndForgedReluRejected) {
  const auto d = data(3, 40);
  const ModelWeights w = ml::init_model(ml::ModelSpec{ml::ModelKind::kMlp, 5, 3, 8}, 6);
  auto p = prove_accuracy(w, d, 1, 2);
  Verdict v = verify_accuracy(p.transcript, resolver_from(p.blobs));
  ASSERT_TRUE(v.ok) << v.stage << ": " << v.message;

  const FixedMatrix pre = matrix_from(p.transcript.responses.at("pre"));
  FixedMatrix hidden = matrix_from(p.transcript.responses.at("hidden"));
  bool forged = false;
  for (Eigen::Index i = 0; i < pre.rows() && !forged; ++i) {
    for (Eigen::Index j = 0; j < pre.cols() && !forged; ++j) {
      if (pre(i, j) < Fixed()) {
        hidden(i, j) = -pre(i, j);
        forged = true;
      }
    }
  }
  ASSERT_TRUE(forged);
  p.transcript.responses["hidden"] = matrix_bytes(hidden);
  recommit(p.transcript);
  v = verify_accuracy(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "relu");
}

TEST(Accuracy, ForgedLogitRejectedByFreivalds) {
  const auto d = data(4, 30);
  const ModelWeights w = ml::init_model(ml::ModelSpec{ml::ModelKind::kLogistic, 5, 3, 0}, 7);
  auto p = prove_accuracy(w, d);
  FixedMatrix logits = matrix_from(p.transcript.responses.at("logits"));
  logits(3, 1) = logits(3, 1) + Fixed(1);
  p.transcript.responses["logits"] = matrix_bytes(logits);
  recommit(p.transcript);
  const Verdict v = verify_accuracy(p.transcript, resolver_from(p.blobs));
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.stage, "freivalds");
}

}  // namespace
}  // namespace poc::verify
