#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

#include "poc/gadgets.hpp"
#include "poc/linalg.hpp"

namespace poc {

using TrainerId = uint32_t;
using ModelMap = std::map<TrainerId, ModelWeights>;

}  // namespace poc

namespace poc::outlier {

/// Models submitted in one round, plus the previous round's when round > 1.
struct RoundSubmissions {
  uint64_t round = 1;
  ModelMap entries;
  std::optional<ModelMap> previous;

  /// Throws `kLayoutMismatch` / `kMissingPrevious` / `kEmptyInput` on violated invariants.
  void validate() const;
};

struct CrossRoundResult {
  bool flagged = false;
  std::map<TrainerId, double> scores;
};

/// Cosine similarity between each trainer's consecutive submissions;
/// flagged iff any score falls below `gamma`. A zero model scores 0.
CrossRoundResult cross_round_check(const RoundSubmissions& subs, double gamma);

/// m-Krum scoring on exact squared distances. Each model is scored by the sum
/// of its ceil(L/2) smallest squared distances to the other models; the m
/// lowest (score, id) pairs are selected.
struct KrumSelection {
  std::vector<TrainerId> selected;
  std::map<TrainerId, int128> scores;
};

size_t krum_neighbors(size_t count);
KrumSelection krum_select(const ModelMap& models, size_t m);
/// Equal-weight average of the Krum selection. Throws `kTooFew` if fewer than two models.
ModelWeights krum_average(const ModelMap& models, size_t m);
/// Positional overload; ties break on input position.
ModelWeights krum_average(std::span<const ModelWeights> models, size_t m);

/// Mean and sample standard deviation of fixed-point scores, floored at each
/// step so a verifier can replay them exactly from the witnesses below.
struct ThreeSigma {
  Fixed mean;
  Fixed sigma;
  Fixed boundary;          ///< mean + sigma
  int128 score_sum = 0;    ///< sum of raws
  DivMod mean_div{};       ///< score_sum / n
  int128 deviation_sum = 0;  ///< sum of (raw - mean.raw)^2
  DivMod variance_div{};   ///< deviation_sum / (n - 1), at doubled scale
};

/// Requires at least two scores.
ThreeSigma three_sigma(std::span<const Fixed> scores);

struct DetectionReport {
  uint64_t round = 1;
  bool attack_flagged = false;
  bool cross_trainer_ran = false;
  std::map<TrainerId, double> cosine_scores;
  std::map<TrainerId, Fixed> l2_scores;
  Fixed mean, sigma, boundary;
  std::set<TrainerId> removed;
  std::set<TrainerId> kept;

  nlohmann::json to_json() const;
  static DetectionReport from_json(const nlohmann::json& j);
};

struct CrossTrainerResult {
  DetectionReport report;
  ModelWeights reference;  ///< w_avg the scores were measured against
  ModelWeights average;    ///< equal-weight average of the kept models
};

/// Cross-trainer distance check. The reference is the Krum average with
/// m = floor(L/2) when no previous benign average is supplied. Removes every
/// trainer whose distance strictly exceeds mean + sigma. Throws `kTooFew` if L < 3.
CrossTrainerResult cross_trainer_check(const RoundSubmissions& subs, const std::optional<ModelWeights>& avg_prev);

/// Running defence state: the previous round's post-removal aggregate.
struct DetectorState {
  std::optional<ModelWeights> benign_average;
};

/// Two-stage detection: round 1 always runs the cross-trainer check; later
/// rounds run it only when the cross-round check flags an attack.
DetectionReport detect(const RoundSubmissions& subs, double gamma, const DetectorState& state);

/// Distance score of a model against the reference: floor(sqrt(squared raw distance)).
Fixed distance_score(int128 squared_raw);

}  // namespace poc::outlier
