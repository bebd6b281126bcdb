#include "poc/outlier.hpp"

#include <algorithm>
#include <bit>

namespace poc::outlier {

void RoundSubmissions::validate() const {
  if (round < 1) throw Error(Errc::kDomainError, "rounds start at 1");
  if (entries.empty()) throw Error(Errc::kEmptyInput, "no submissions");
  const ModelWeights& first = entries.begin()->second;
  for (const auto& [id, w] : entries) require_same_layout(first, w);
  if (round > 1 && !previous) throw Error(Errc::kMissingPrevious, "round > 1 requires previous submissions");
  if (previous) {
    for (const auto& [id, w] : *previous) require_same_layout(first, w);
  }
}

CrossRoundResult cross_round_check(const RoundSubmissions& subs, double gamma) {
  if (subs.round <= 1 || !subs.previous) throw Error(Errc::kMissingPrevious, "cross-round check needs round > 1");
  subs.validate();
  CrossRoundResult out;
  for (const auto& [id, w] : subs.entries) {
    auto prev = subs.previous->find(id);
    if (prev == subs.previous->end()) continue;
    double score;
    try {
      score = cosine_similarity(prev->second, w);
    } catch (const Error& e) {
      if (e.code() != Errc::kZeroVector) throw;
      score = 0.0;
    }
    out.scores[id] = score;
    if (score < gamma) out.flagged = true;
  }
  return out;
}

size_t krum_neighbors(size_t count) { return std::min((count + 1) / 2, count - 1); }

KrumSelection krum_select(const ModelMap& models, size_t m) {
  const size_t n = models.size();
  if (n < 2) throw Error(Errc::kTooFew, "Krum needs at least two models");
  if (m < 1 || m > n) throw Error(Errc::kDomainError, "Krum selection size out of range");
  std::vector<TrainerId> ids;
  std::vector<const ModelWeights*> ptr;
  for (const auto& [id, w] : models) {
    ids.push_back(id);
    ptr.push_back(&w);
  }
  std::vector<std::vector<int128>> d2(n, std::vector<int128>(n, 0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) d2[i][j] = d2[j][i] = squared_distance_raw(*ptr[i], *ptr[j]);
  }
  const size_t k = krum_neighbors(n);
  KrumSelection out;
  std::vector<std::pair<int128, TrainerId>> ranked;
  for (size_t i = 0; i < n; ++i) {
    std::vector<int128> row;
    for (size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(d2[i][j]);
    }
    std::partial_sort(row.begin(), row.begin() + static_cast<ptrdiff_t>(k), row.end());
    int128 score = 0;
    for (size_t j = 0; j < k; ++j) score += row[j];
    out.scores[ids[i]] = score;
    ranked.emplace_back(score, ids[i]);
  }
  std::sort(ranked.begin(), ranked.end());
  for (size_t i = 0; i < m; ++i) out.selected.push_back(ranked[i].second);
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

namespace {

ModelWeights equal_average(const ModelMap& models, std::span<const TrainerId> ids) {
  std::vector<ModelWeights> chosen;
  for (TrainerId id : ids) chosen.push_back(models.at(id));
  std::vector<Fixed> ones(chosen.size(), Fixed(1));
  return aggregate_with_witness(chosen, ones).aggregate;
}

}  // namespace

ModelWeights krum_average(const ModelMap& models, size_t m) {
  const KrumSelection sel = krum_select(models, m);
  return equal_average(models, sel.selected);
}

ModelWeights krum_average(std::span<const ModelWeights> models, size_t m) {
  ModelMap map;
  for (size_t i = 0; i < models.size(); ++i) map.emplace(static_cast<TrainerId>(i), models[i]);
  return krum_average(map, m);
}

ThreeSigma three_sigma(std::span<const Fixed> scores) {
  if (scores.size() < 2) throw Error(Errc::kTooFew, "three-sigma rule needs at least two scores");
  ThreeSigma t;
  for (Fixed s : scores) t.score_sum += s.raw();
  const auto n = static_cast<int64_t>(scores.size());
  t.mean_div = floor_divmod(t.score_sum, n);
  t.mean = Fixed::from_raw(t.mean_div.quotient);
  for (Fixed s : scores) {
    const int128 d = int128{s.raw()} - t.mean.raw();
    t.deviation_sum += d * d;
  }
  t.variance_div = floor_divmod(t.deviation_sum, n - 1);
  t.sigma = Fixed::from_raw(isqrt(t.variance_div.quotient));
  t.boundary = t.mean + t.sigma;
  return t;
}

Fixed distance_score(int128 squared_raw) { return Fixed::from_raw(isqrt(squared_raw)); }

CrossTrainerResult cross_trainer_check(const RoundSubmissions& subs, const std::optional<ModelWeights>& avg_prev) {
  subs.validate();
  const size_t n = subs.entries.size();
  if (n < 3) throw Error(Errc::kTooFew, "cross-trainer check needs at least three models");
  ModelWeights reference = avg_prev ? *avg_prev : krum_average(subs.entries, n / 2);
  require_same_layout(subs.entries.begin()->second, reference);

  CrossTrainerResult out;
  DetectionReport& r = out.report;
  r.round = subs.round;
  r.cross_trainer_ran = true;
  std::vector<Fixed> scores;
  for (const auto& [id, w] : subs.entries) {
    const Fixed s = distance_score(squared_distance_raw(w, reference));
    r.l2_scores[id] = s;
    scores.push_back(s);
  }
  const ThreeSigma t = three_sigma(scores);
  r.mean = t.mean;
  r.sigma = t.sigma;
  r.boundary = t.boundary;
  std::vector<TrainerId> kept;
  for (const auto& [id, s] : r.l2_scores) {
    if (s > t.boundary) {
      r.removed.insert(id);
    } else {
      r.kept.insert(id);
      kept.push_back(id);
    }
  }
  out.reference = std::move(reference);
  out.average = equal_average(subs.entries, kept);
  return out;
}

DetectionReport detect(const RoundSubmissions& subs, double gamma, const DetectorState& state) {
  subs.validate();
  if (subs.round == 1) {
    DetectionReport r = cross_trainer_check(subs, std::nullopt).report;
    r.attack_flagged = false;
    return r;
  }
  const CrossRoundResult cr = cross_round_check(subs, gamma);
  DetectionReport r;
  if (cr.flagged) {
    r = cross_trainer_check(subs, state.benign_average).report;
  } else {
    r.round = subs.round;
    for (const auto& [id, w] : subs.entries) r.kept.insert(id);
  }
  r.attack_flagged = cr.flagged;
  r.cosine_scores = cr.scores;
  return r;
}

nlohmann::json DetectionReport::to_json() const {
  nlohmann::json j;
  j["round"] = round;
  j["attack_flagged"] = attack_flagged;
  j["cross_trainer_ran"] = cross_trainer_ran;
  auto& cos = j["cosine_scores"] = nlohmann::json::object();
  for (const auto& [id, s] : cosine_scores) cos[std::to_string(id)] = s;
  auto& l2 = j["l2_scores_raw"] = nlohmann::json::object();
  for (const auto& [id, s] : l2_scores) l2[std::to_string(id)] = s.raw();
  j["mean_raw"] = mean.raw();
  j["sigma_raw"] = sigma.raw();
  j["boundary_raw"] = boundary.raw();
  j["mean"] = mean.to_double();
  j["sigma"] = sigma.to_double();
  j["boundary"] = boundary.to_double();
  j["removed"] = std::vector<TrainerId>(removed.begin(), removed.end());
  j["kept"] = std::vector<TrainerId>(kept.begin(), kept.end());
  return j;
}

DetectionReport DetectionReport::from_json(const nlohmann::json& j) {
  DetectionReport r;
  r.round = j.at("round").get<uint64_t>();
  r.attack_flagged = j.at("attack_flagged").get<bool>();
  r.cross_trainer_ran = j.at("cross_trainer_ran").get<bool>();
  for (const auto& [k, v] : j.at("cosine_scores").items()) r.cosine_scores[static_cast<TrainerId>(std::stoul(k))] = v.get<double>();
  for (const auto& [k, v] : j.at("l2_scores_raw").items()) {
    r.l2_scores[static_cast<TrainerId>(std::stoul(k))] = Fixed::from_raw(v.get<int64_t>());
  }
  r.mean = Fixed::from_raw(j.at("mean_raw").get<int64_t>());
  r.sigma = Fixed::from_raw(j.at("sigma_raw").get<int64_t>());
  r.boundary = Fixed::from_raw(j.at("boundary_raw").get<int64_t>());
  for (TrainerId id : j.at("removed").get<std::vector<TrainerId>>()) r.removed.insert(id);
  for (TrainerId id : j.at("kept").get<std::vector<TrainerId>>()) r.kept.insert(id);
  return r;
}

}  // namespace poc::outlier
