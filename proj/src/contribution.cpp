#include "poc/contribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace poc::contribution {

std::vector<TrainerId> RoundModels::ids() const {
  std::vector<TrainerId> out;
  for (const auto& [id, w] : models) out.push_back(id);
  return out;
}

ModelWeights RoundModels::coalition_model(std::span<const TrainerId> coalition) const {
  if (coalition.empty()) return previous_global;
  std::vector<ModelWeights> members;
  std::vector<Fixed> w;
  for (TrainerId id : coalition) {
    members.push_back(models.at(id));
    auto it = weights.find(id);
    w.push_back(it == weights.end() ? Fixed(1) : it->second);
  }
  return aggregate_with_witness(members, w).aggregate;
}

CoalitionEvaluator direct_evaluator(const RoundModels& rm, const ml::Dataset& eval) {
  return [&rm, &eval](std::span<const TrainerId> coalition) {
    return ml::correct_count(rm.coalition_model(coalition), eval);
  };
}

size_t rloo_subset_size(size_t honest_count) {
  if (honest_count == 0) return 0;
  const auto log2n = static_cast<size_t>(std::bit_width(honest_count - 1));  // ceil(log2 N)
  return std::min(honest_count, std::max<size_t>(2, log2n));
}

std::vector<TrainerId> rloo_subset(std::span<const TrainerId> honest, TrainerId trainer, size_t k, Rng& rng) {
  std::vector<TrainerId> others;
  for (TrainerId id : honest) {
    if (id != trainer) others.push_back(id);
  }
  std::vector<TrainerId> subset{trainer};
  const size_t extra = std::min(others.size(), k == 0 ? 0 : k - 1);
  for (size_t idx : rng.sample(others.size(), extra)) subset.push_back(others[idx]);
  std::sort(subset.begin(), subset.end());
  return subset;
}

RlooRound rloo_round(std::span<const TrainerId> honest, int64_t eval_size, const CoalitionEvaluator& evaluate, Rng& rng,
                     int repetitions) {
  if (eval_size <= 0) throw Error(Errc::kEmptyEval, "empty evaluation set");
  if (repetitions < 1) throw Error(Errc::kConfigError, "RLOO repetitions must be positive");
  const size_t k = rloo_subset_size(honest.size());
  RlooRound out;
  for (TrainerId i : honest) {
    for (int r = 0; r < repetitions; ++r) {
      RlooTrial trial;
      trial.trainer = i;
      trial.subset = rloo_subset(honest, i, k, rng);
      trial.correct_with = evaluate(trial.subset);
      trial.correct_without = evaluate(without_trainer(trial.subset, i));
      out.trials.push_back(std::move(trial));
    }
  }
  out.values = rloo_values(out.trials, eval_size);
  return out;
}

std::vector<TrainerId> without_trainer(std::span<const TrainerId> subset, TrainerId trainer) {
  std::vector<TrainerId> out;
  for (TrainerId id : subset) {
    if (id != trainer) out.push_back(id);
  }
  return out;
}

std::map<TrainerId, double> rloo_values(std::span<const RlooTrial> trials, int64_t eval_size) {
  if (eval_size <= 0) throw Error(Errc::kEmptyEval, "empty evaluation set");
  std::map<TrainerId, std::pair<double, int>> acc;
  for (const auto& t : trials) {
    auto& [sum, n] = acc[t.trainer];
    sum += static_cast<double>(t.correct_with - t.correct_without) / static_cast<double>(eval_size);
    ++n;
  }
  std::map<TrainerId, double> out;
  for (const auto& [id, sn] : acc) out[id] = sn.first / sn.second;
  return out;
}

std::map<TrainerId, double> rloo_round(const RoundModels& rm, const ml::Dataset& eval, Rng& rng, int repetitions) {
  const auto ids = rm.ids();
  return rloo_round(ids, eval.size(), direct_evaluator(rm, eval), rng, repetitions).values;
}

ContributionVector normalize_and_total(std::span<const std::map<TrainerId, double>> rounds,
                                       std::span<const TrainerId> ids) {
  ContributionVector cv;
  cv.ids.assign(ids.begin(), ids.end());
  std::sort(cv.ids.begin(), cv.ids.end());
  for (TrainerId id : cv.ids) cv.totals[id] = 0.0;
  for (const auto& round : rounds) {
    double l1 = 0.0;
    for (const auto& [id, v] : round) l1 += std::fabs(v);
    std::map<TrainerId, double> norm;
    for (const auto& [id, v] : round) norm[id] = l1 > 0.0 ? v / l1 : 0.0;
    for (auto& [id, total] : cv.totals) {
      auto it = norm.find(id);
      if (it != norm.end()) total += it->second;
    }
    cv.raw.push_back(round);
    cv.normalized.push_back(std::move(norm));
  }
  for (const auto& [id, total] : cv.totals) cv.clipped[id] = std::max(0.0, total);
  return cv;
}

ContributionVector normalize_and_total(std::span<const std::map<TrainerId, double>> rounds) {
  std::vector<TrainerId> ids;
  for (const auto& round : rounds) {
    for (const auto& [id, v] : round) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return normalize_and_total(rounds, ids);
}

std::map<TrainerId, double> reward_shares(const ContributionVector& cv) {
  double sum = 0.0;
  for (const auto& [id, c] : cv.clipped) sum += c;
  std::map<TrainerId, double> out;
  for (const auto& [id, c] : cv.clipped) out[id] = sum > 0.0 ? c / sum : 0.0;
  return out;
}

namespace {

nlohmann::json id_map_json(const std::map<TrainerId, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, v] : m) j[std::to_string(id)] = v;
  return j;
}

std::map<TrainerId, double> id_map_from_json(const nlohmann::json& j) {
  std::map<TrainerId, double> m;
  for (const auto& [k, v] : j.items()) m[static_cast<TrainerId>(std::stoul(k))] = v.get<double>();
  return m;
}

}  // namespace

nlohmann::json ContributionVector::to_json() const {
  nlohmann::json j;
  j["ids"] = ids;
  j["raw"] = nlohmann::json::array();
  for (const auto& r : raw) j["raw"].push_back(id_map_json(r));
  j["normalized"] = nlohmann::json::array();
  for (const auto& r : normalized) j["normalized"].push_back(id_map_json(r));
  j["totals"] = id_map_json(totals);
  j["clipped"] = id_map_json(clipped);
  return j;
}

ContributionVector ContributionVector::from_json(const nlohmann::json& j) {
  ContributionVector cv;
  cv.ids = j.at("ids").get<std::vector<TrainerId>>();
  for (const auto& r : j.at("raw")) cv.raw.push_back(id_map_from_json(r));
  for (const auto& r : j.at("normalized")) cv.normalized.push_back(id_map_from_json(r));
  cv.totals = id_map_from_json(j.at("totals"));
  cv.clipped = id_map_from_json(j.at("clipped"));
  return cv;
}

double ShapleyValues::value(TrainerId id) const {
  return static_cast<double>(numerators.at(id)) / static_cast<double>(denominator);
}

std::map<TrainerId, double> ShapleyValues::values() const {
  std::map<TrainerId, double> out;
  for (const auto& [id, num] : numerators) out[id] = static_cast<double>(num) / static_cast<double>(denominator);
  return out;
}

ShapleyValues shapley_from_utility(std::span<const TrainerId> players, const CoalitionUtility& utility,
                                   int64_t utility_scale) {
  const size_t n = players.size();
  if (n > kMaxShapleyPlayers) throw Error(Errc::kTooManyTrainers, "exact Shapley limited to 12 trainers");
  if (utility_scale <= 0) throw Error(Errc::kDomainError, "utility scale must be positive");
  std::vector<int128> fact(n + 1, 1);
  for (size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<int128>(i);

  const uint32_t full = n == 0 ? 0 : (n == 32 ? ~0u : (1u << n) - 1);
  std::vector<int64_t> u(size_t{full} + 1);
  for (uint32_t mask = 0; mask <= full; ++mask) u[mask] = utility(mask);

  ShapleyValues out;
  out.denominator = (n == 0 ? 1 : fact[n]) * utility_scale;
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bit = 1u << i;
    int128 num = 0;
    for (uint32_t mask = 0; mask <= full; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<size_t>(std::popcount(mask));
      num += fact[s] * fact[n - s - 1] * (u[mask | bit] - u[mask]);
    }
    out.numerators[players[i]] = num;
  }
  return out;
}

ShapleyValues shapley_exact(const RoundModels& rm, const ml::Dataset& eval) {
  if (eval.size() == 0) throw Error(Errc::kEmptyEval, "empty evaluation set");
  const auto players = rm.ids();
  if (players.size() > kMaxShapleyPlayers) throw Error(Errc::kTooManyTrainers, "exact Shapley limited to 12 trainers");
  return shapley_from_utility(
      players,
      [&](uint32_t mask) {
        std::vector<TrainerId> coalition;
        for (size_t i = 0; i < players.size(); ++i) {
          if (mask & (1u << i)) coalition.push_back(players[i]);
        }
        return ml::correct_count(rm.coalition_model(coalition), eval);
      },
      eval.size());
}

}  // namespace poc::contribution
