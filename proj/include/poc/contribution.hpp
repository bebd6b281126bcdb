#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "poc/mlcore.hpp"
#include "poc/outlier.hpp"
#include "poc/rng.hpp"

namespace poc::contribution {

/// Honest local models of one round with their aggregation weights.
struct RoundModels {
  uint64_t round = 1;
  ModelMap models;
  std::map<TrainerId, Fixed> weights;  ///< typically local dataset sizes
  ModelWeights previous_global;

  std::vector<TrainerId> ids() const;
  /// Weighted aggregate of a coalition; the empty coalition is the previous global model.
  ModelWeights coalition_model(std::span<const TrainerId> coalition) const;
};

/// Correct-prediction count of the coalition aggregate on the evaluation set.
using CoalitionEvaluator = std::function<int64_t(std::span<const TrainerId>)>;

/// Evaluates coalitions directly (no proofs).
CoalitionEvaluator direct_evaluator(const RoundModels& rm, const ml::Dataset& eval);

/// Subset size max(2, ceil(log2 N)), capped at N.
size_t rloo_subset_size(size_t honest_count);

/// `trainer` plus k-1 others drawn uniformly without replacement, sorted.
std::vector<TrainerId> rloo_subset(std::span<const TrainerId> honest, TrainerId trainer, size_t k, Rng& rng);

struct RlooTrial {
  TrainerId trainer = 0;
  std::vector<TrainerId> subset;
  int64_t correct_with = 0;
  int64_t correct_without = 0;
};

struct RlooRound {
  std::map<TrainerId, double> values;  ///< C_i^(t)
  std::vector<RlooTrial> trials;
};

/// C_i = Acc(agg(S)) - Acc(agg(S \ {i})) for a sampled S containing i,
/// averaged over `repetitions` draws. Throws `kEmptyEval` if eval_size == 0.
RlooRound rloo_round(std::span<const TrainerId> honest, int64_t eval_size, const CoalitionEvaluator& evaluate, Rng& rng,
                     int repetitions = 1);
std::map<TrainerId, double> rloo_round(const RoundModels& rm, const ml::Dataset& eval, Rng& rng, int repetitions = 1);

/// Subset with `trainer` removed.
std::vector<TrainerId> without_trainer(std::span<const TrainerId> subset, TrainerId trainer);
/// Per-trainer mean of (correct_with - correct_without) / eval_size, in trial order.
std::map<TrainerId, double> rloo_values(std::span<const RlooTrial> trials, int64_t eval_size);

struct ContributionVector {
  std::vector<TrainerId> ids;
  std::vector<std::map<TrainerId, double>> raw;         ///< per round
  std::vector<std::map<TrainerId, double>> normalized;  ///< per round
  std::map<TrainerId, double> totals;
  std::map<TrainerId, double> clipped;

  nlohmann::json to_json() const;
  static ContributionVector from_json(const nlohmann::json& j);
};

/// Divides each round by the L1 norm of its values (all-zero rounds contribute
/// zeros), sums per trainer and clips at zero. `ids` fixes the reported
/// trainers; values for other trainers still count toward each round's norm.
ContributionVector normalize_and_total(std::span<const std::map<TrainerId, double>> rounds,
                                       std::span<const TrainerId> ids);
ContributionVector normalize_and_total(std::span<const std::map<TrainerId, double>> rounds);

/// share_i = clipped_i / sum clipped, or all zero when the sum is zero.
std::map<TrainerId, double> reward_shares(const ContributionVector& cv);

/// Exact Shapley values held as numerators over a common denominator.
struct ShapleyValues {
  std::map<TrainerId, int128> numerators;
  int128 denominator = 1;

  double value(TrainerId id) const;
  std::map<TrainerId, double> values() const;
};

/// Utility of the coalition encoded as a bitmask over `players`.
using CoalitionUtility = std::function<int64_t(uint32_t mask)>;

/// sum over S not containing i of |S|!(N-|S|-1)!/N! * (u(S+i) - u(S)), divided
/// by `utility_scale`. Throws `kTooManyTrainers` if N > 12.
ShapleyValues shapley_from_utility(std::span<const TrainerId> players, const CoalitionUtility& utility,
                                   int64_t utility_scale);
ShapleyValues shapley_exact(const RoundModels& rm, const ml::Dataset& eval);

inline constexpr size_t kMaxShapleyPlayers = 12;

}  // namespace poc::contribution
