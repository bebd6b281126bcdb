#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poc/bytes.hpp"
#include "poc/hash.hpp"
#include "poc/mlcore.hpp"
#include "poc/outlier.hpp"

// Commit-and-check transcripts. Nothing here is zero-knowledge: committed
// values are opened to the verifier, and Fiat-Shamir challenges bind every
// check to the commitments that precede it.
namespace poc::verify {

struct Commitment {
  std::string label;
  Digest digest{};

  friend bool operator==(const Commitment&, const Commitment&) = default;
};

Commitment commit(std::span<const uint8_t> bytes, std::string label = {});

/// Expands SHA-256(digest_1 || ... || digest_k || counter) into n field
/// elements: 8-byte little-endian chunks masked to 61 bits, rejected if >= p.
std::vector<Fp> derive_challenge(std::span<const Commitment> commitments, size_t n);

enum class Kind : uint8_t { kMatmul = 1, kAggregation = 2, kOutlier = 3, kAccuracy = 4 };
std::string_view to_string(Kind k);

inline constexpr uint16_t kTranscriptVersion = 1;

struct Transcript {
  Kind kind = Kind::kMatmul;
  uint64_t round = 0;
  std::map<std::string, int64_t> metadata;
  std::vector<Commitment> commitments;
  std::vector<std::pair<std::string, std::vector<Fp>>> challenges;
  /// Inline openings and witnesses, keyed by label. A commitment whose label
  /// has no response here is opened through the blob resolver.
  std::map<std::string, Bytes> responses;

  /// "POCT", u16 version, u8 kind, u64 round, then four length-prefixed
  /// sections: metadata, commitments, challenges, responses.
  Bytes serialize() const;
  static Transcript deserialize(std::span<const uint8_t> bytes);

  const Commitment* commitment(std::string_view label) const;
  /// Throws `kMalformed` when absent.
  int64_t meta(const std::string& key) const;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

struct Verdict {
  bool ok = true;
  std::string stage;  ///< failing check, empty on success
  std::string message;

  static Verdict pass() { return {}; }
  static Verdict fail(std::string stage, std::string message) { return {false, std::move(stage), std::move(message)}; }
  explicit operator bool() const noexcept { return ok; }
};

/// Content lookup by digest; returns nullopt when unknown.
using BlobResolver = std::function<std::optional<Bytes>(const Digest&)>;
BlobResolver resolver_from(std::span<const Bytes> blobs);

/// Dispatches on the transcript kind. Never throws: malformed input is a failed verdict.
Verdict verify(const Transcript& t, const BlobResolver& resolve = {});
Verdict verify_bytes(std::span<const uint8_t> bytes, const BlobResolver& resolve = {});

// ---- matrix products ----

/// Checks A(Bv) == (2^f C + R)v over F_p, where R holds the rescaling
/// remainders, each in [0, 2^f).
bool freivalds_check(const FixedMatrix& a, const FixedMatrix& b, const FixedMatrix& c, const RemainderMatrix& r,
                     std::span<const Fp> v);

struct MatmulProof {
  FixedMatrix product;  ///< floor(A*B / 2^f)
  RemainderMatrix remainder;
  Transcript transcript;
};

/// A, B, C and R are all opened inline. Throws `kShapeMismatch`.
MatmulProof prove_matmul(const FixedMatrix& a, const FixedMatrix& b, int repetitions = 1);
Verdict verify_matmul(const Transcript& t, const BlobResolver& resolve = {});

// ---- aggregation ----

struct AggregationProof {
  ModelWeights aggregate;
  Transcript transcript;
  std::vector<Bytes> blobs;  ///< models and aggregate, opened by digest
};

/// Weighted mean with per-coordinate floor remainders as division witnesses.
AggregationProof prove_aggregation(const ModelMap& models, const std::map<TrainerId, Fixed>& weights, uint64_t round = 0,
                                   int repetitions = 1);
/// Trainers have already divided their models; the aggregate is the plain sum
/// and no division witness is present.
AggregationProof prove_aggregation_predivided(const ModelMap& models, uint64_t round = 0, int repetitions = 1);
Verdict verify_aggregation(const Transcript& t, const BlobResolver& resolve);

/// Ids of the "model:<id>" commitments, ascending.
std::vector<TrainerId> aggregation_members(const Transcript& t);
/// Weights recorded in the inline "weights" response; empty when pre-divided.
std::map<TrainerId, Fixed> aggregation_weights(const Transcript& t);

// ---- outlier detection ----

struct OutlierProof {
  outlier::DetectionReport report;
  Transcript transcript;
  std::vector<Bytes> blobs;
};

/// Runs `outlier::detect` and records everything needed to replay it: cosine
/// scores, squared distances with floor-sqrt witnesses, mean and variance
/// division witnesses, the sigma sqrt witness and, when the reference is the
/// Krum average, its selection and remainder witnesses.
OutlierProof prove_outlier(const outlier::RoundSubmissions& subs, double gamma, const outlier::DetectorState& state);
Verdict verify_outlier(const Transcript& t, const BlobResolver& resolve);

/// Report recorded in an outlier transcript (no verification).
outlier::DetectionReport report_from_transcript(const Transcript& t);

// ---- accuracy ----

struct AccuracyProof {
  int64_t correct = 0;
  int64_t total = 0;
  Transcript transcript;
  std::vector<Bytes> blobs;
};

/// Commits logits (and the MLP hidden layer), proves each layer with a
/// Freivalds check and lets the verifier replay ReLU, argmax and the count.
AccuracyProof prove_accuracy(const ModelWeights& w, const ml::Dataset& data, uint64_t round = 0, int repetitions = 1);
Verdict verify_accuracy(const Transcript& t, const BlobResolver& resolve);

}  // namespace poc::verify
