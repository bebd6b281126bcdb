#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poc/ledger.hpp"
#include "poc/mlcore.hpp"

namespace poc::orchestrator {

struct DataConfig {
  std::string source = "blobs";  ///< "blobs" or "idx"
  int dim = 20;
  int classes = 10;
  double separation = 1.0;
  size_t samples_per_trainer = 200;
  size_t owner_samples = 1000;
  std::filesystem::path manifest;  ///< idx only
};

struct ScenarioConfig {
  uint32_t trainers = 8;
  uint64_t rounds = 10;
  uint64_t seed = 0;
  ml::ModelKind model = ml::ModelKind::kLogistic;
  int hidden = 32;
  DataConfig data;
  ml::PartitionScheme partition = ml::PartitionScheme::kIid;
  std::vector<int> rare_labels{0, 1};
  TrainerId rare_holder = 1;
  double learning_rate = 0.1;
  int epochs = 1;
  int batch_size = 20;
  ml::AttackSpec attack;
  std::set<TrainerId> malicious;
  double gamma = 0.3;
  int rloo_repetitions = 1;
  bool shapley_oracle = false;
  int proof_repetitions = 1;
  ledger::RewardSchedule rewards{10, 0.1, 0.9, 1000, 50};
  int64_t deposit = 0;  ///< 0 selects the smallest valid deposit
  double dropout_rate = 0.0;
  std::vector<std::pair<uint64_t, TrainerId>> dropouts;  ///< (round, trainer)
  uint32_t quorum = 0;
  int early_stop_patience = 0;  ///< 0 disables early termination

  /// Throws `kConfigError` on any violated invariant.
  void validate() const;
  int64_t effective_deposit() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected. A relative
  /// manifest path resolves against `base_dir`. Throws `kConfigError`.
  static ScenarioConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ScenarioConfig load(const std::filesystem::path& path);
};

// ---- tampering (test hooks) ----

enum class TamperKind {
  kNone,
  kAggregateCid,        ///< submit a Cid other than the proven aggregate
  kAggregateValue,      ///< perturb the aggregate and re-commit it
  kAggregateRemainder,  ///< perturb one division remainder
  kOutlierPartition,    ///< move a trainer across the kept/removed boundary
  kOutlierScore,        ///< perturb one distance score
  kOutlierFlag,         ///< flip the attack flag
  kValidationAccuracy,  ///< inflate a per-round correct count
  kFinalAccuracy,       ///< inflate the claimed final accuracy
  kContributionValue,   ///< alter one contribution total
  kRlooCount,           ///< alter one RLOO trial count
};

std::string_view to_string(TamperKind k);
TamperKind tamper_from_string(std::string_view s);

struct TamperSpec {
  TamperKind kind = TamperKind::kNone;
  uint64_t round = 1;
  uint64_t variant = 0;  ///< selects entry / trainer / direction
};

/// Re-commits inline responses and re-derives the challenge, so a tampered
/// transcript stays self-consistent at the commitment layer.
void recommit(verify::Transcript& t);

// ---- runs ----

struct RunOptions {
  TamperSpec tamper;
};

struct DetectionMetrics {
  double cross_round_accuracy = 1.0;
  double cross_trainer_recall = 1.0;
  double benign_false_removal = 0.0;
  int flag_rounds = 0, flags_correct = 0;
  int malicious_submitted = 0, malicious_removed = 0;
  int benign_submitted = 0, benign_removed = 0;

  nlohmann::json to_json() const;
};

/// Metrics over the verified rounds of an event log. Rounds >= 2 score the
/// attack flag against "some malicious trainer submitted"; undefined recall
/// is 1 and undefined false-removal is 0.
DetectionMetrics detection_metrics(std::span<const nlohmann::json> events, const std::set<TrainerId>& malicious);

/// Config and options recorded in a log's run_start event. Throws `kConfigError`.
std::pair<ScenarioConfig, RunOptions> recorded_run(std::span<const nlohmann::json> events);

/// Report recomputed from the event log alone.
nlohmann::json report_from_events(std::span<const nlohmann::json> events);

struct RunResult {
  nlohmann::json report;
  std::vector<nlohmann::json> events;
  ledger::ContentStore store;
  ledger::ContractState state;
  std::vector<ledger::Cid> transcripts;  ///< every transcript the run stored, in order
};

/// Deterministic end-to-end run. Throws only `kConfigError`; protocol
/// failures end in an Aborted contract and are recorded in the report.
RunResult run(const ScenarioConfig& config, const RunOptions& options = {});

/// Writes report.json, events.jsonl and store/<cid>.bin.
void write_run(const RunResult& r, const std::filesystem::path& dir);

std::string report_text(const nlohmann::json& report);

/// Differences between two reports as "path: a != b" lines; empty when equal.
std::vector<std::string> diff_reports(const nlohmann::json& a, const nlohmann::json& b);

struct SweepRow {
  uint64_t seed = 0;
  std::string terminal_phase;
  DetectionMetrics metrics;
  double final_accuracy = 0.0;
};

std::vector<SweepRow> sweep(const ScenarioConfig& config, uint64_t first_seed, uint64_t last_seed);
std::string sweep_table(std::span<const SweepRow> rows);

}  // namespace poc::orchestrator
