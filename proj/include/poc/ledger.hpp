#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poc/contribution.hpp"
#include "poc/hash.hpp"
#include "poc/verify.hpp"

namespace poc::ledger {

using Cid = Digest;

/// Content-addressed blob storage keyed by SHA-256.
class ContentStore {
 public:
  Cid put(std::span<const uint8_t> bytes);
  /// Throws `kNotFound`.
  Bytes get(const Cid& cid) const;
  std::optional<Bytes> find(const Cid& cid) const;
  bool contains(const Cid& cid) const { return blobs_.count(cid) != 0; }
  size_t size() const noexcept { return blobs_.size(); }
  const std::map<Cid, Bytes>& entries() const noexcept { return blobs_; }

  /// Resolver over this store; the store must outlive it.
  verify::BlobResolver resolver() const;

  /// One file per blob, named <hex cid>.bin.
  void save(const std::filesystem::path& dir) const;
  /// Throws `kMalformed` if a file's content does not hash to its name.
  static ContentStore load(const std::filesystem::path& dir);

 private:
  std::map<Cid, Bytes> blobs_;
};

// ---- phases ----

enum class PhaseKind : uint8_t {
  kCreated,
  kRegistration,
  kRoundLocalTraining,
  kRoundAwaitingAggregator,
  kRoundVerification,
  kAwaitingFinalize,
  kRewardSpread,
  kAborted,
};

struct Phase {
  PhaseKind kind = PhaseKind::kCreated;
  uint64_t round = 0;  ///< only for the three per-round phases

  std::string to_string() const;
  /// Inverse of to_string; throws `kMalformed`.
  static Phase parse(std::string_view s);
  bool terminal() const noexcept { return kind == PhaseKind::kRewardSpread || kind == PhaseKind::kAborted; }
  friend bool operator==(const Phase&, const Phase&) = default;
};

/// Edges of the contract flow. Any non-terminal phase may abort; a verified
/// round either opens the next round or, on the last round or early stop,
/// moves to finalization.
bool transition_allowed(const Phase& from, const Phase& to, uint64_t max_rounds);

// ---- contract data ----

struct RewardSchedule {
  int64_t participation_fee = 0;  ///< R_p
  double acc_base = 0.0;
  double acc_target = 1.0;
  int64_t pool = 0;
  int64_t aggregator_fee = 0;

  nlohmann::json to_json() const;
  static RewardSchedule from_json(const nlohmann::json& j);
};

struct TaskDescriptor {
  std::optional<Cid> owner_data;     ///< split into validation/test once registration closes
  std::optional<Cid> initial_model;  ///< base model of round 1
  std::string model_description;
  nlohmann::json hyperparameters = nlohmann::json::object();
  uint32_t trainers = 0;  ///< L
  uint64_t max_rounds = 0;
  uint32_t quorum = 0;  ///< 0 selects max(3, ceil(L/2))
  std::string owner_address;
  std::string aggregator_address;

  uint32_t effective_quorum() const;
  nlohmann::json to_json() const;
  static TaskDescriptor from_json(const nlohmann::json& j);
};

struct Registration {
  std::string pubkey_id;
  std::string address;
  int64_t samples = 0;  ///< local dataset size, the aggregation weight

  friend bool operator==(const Registration&, const Registration&) = default;
};

struct RoundRecord {
  uint64_t round = 0;
  Cid base_model{};
  std::map<TrainerId, Cid> local_models;
  std::set<TrainerId> kept;
  std::set<TrainerId> removed;
  std::optional<Cid> aggregate;
  std::vector<Cid> transcripts;
  bool verified = false;
  bool attack_flagged = false;
  bool cross_trainer_ran = false;

  nlohmann::json to_json() const;
};

struct ContractState {
  Phase phase;
  int64_t deposit = 0;
  TaskDescriptor descriptor;
  RewardSchedule schedule;
  std::map<TrainerId, Registration> registry;
  Digest deploy_digest{};
  uint64_t partition_seed = 0;
  std::optional<Cid> validation;
  std::optional<Cid> test;
  std::vector<RoundRecord> rounds;
  // Set by finalize or abort.
  std::optional<nlohmann::json> contribution;
  std::optional<double> final_accuracy;
  std::map<uint64_t, double> validation_accuracy;
  std::map<std::string, int64_t> payouts;
  int64_t aggregator_paid = 0;
  int64_t refund = 0;
  std::string abort_reason;

  /// Canonical JSON image; two states are equal iff their images are.
  nlohmann::json to_json() const;
  const RoundRecord* record(uint64_t round) const;
};

// ---- finalize message ----

struct FinalizeClaim {
  contribution::ContributionVector contribution;
  int repetitions = 1;
  std::map<uint64_t, std::vector<contribution::RlooTrial>> trials;  ///< per round
  /// Aggregation transcripts of every RLOO coalition and accuracy transcripts
  /// of the coalition models on the test split.
  std::vector<Cid> coalition_transcripts;
  Cid final_accuracy_transcript{};
  double final_accuracy = 0.0;
  std::map<uint64_t, Cid> validation_transcripts;

  nlohmann::json to_json() const;
  static FinalizeClaim from_json(const nlohmann::json& j);
};

// ---- operations ----
// Each operation is a pure function of the current state: it returns the next
// state plus the event describing it, or throws and leaves the input untouched.

struct Transition {
  ContractState state;
  nlohmann::json event;
};

/// Throws `kInsufficientDeposit` unless deposit >= L*R_p + fee and
/// pool + fee <= deposit; `kInvalidDescriptor` on a missing Cid or bad
/// parameters.
Transition deploy(const TaskDescriptor& descriptor, int64_t deposit, const RewardSchedule& schedule);

/// The L-th registration derives the data-partition seed, splits the owner
/// data into validation and test (stored in `store`) and opens round 1.
Transition register_trainer(const ContractState& s, TrainerId id, const Registration& reg, ContentStore& store);

Transition submit_local(const ContractState& s, uint64_t round, TrainerId id, const Cid& model);

/// Submission deadline for a round: proceeds with at least a quorum of local
/// models, otherwise the run aborts.
Transition close_submissions(const ContractState& s, uint64_t round);

Transition submit_round(const ContractState& s, const std::string& caller, uint64_t round,
                        const std::set<TrainerId>& kept, const Cid& aggregate, const std::vector<Cid>& transcripts);

/// Checks the outlier and aggregation transcripts and their consistency with
/// the recorded Cids. Throws `kMissingTranscript` when a transcript cannot be
/// fetched; any failed check aborts the run. `stop_early` finalizes after a
/// verified round before the last.
Transition verify_round(const ContractState& s, uint64_t round, const ContentStore& store, bool stop_early = false);

/// Verifies every RLOO coalition proof, replays the contribution vector from
/// the proven counts, and checks the final and per-round validation
/// accuracy transcripts. Throws `kMissingTranscript`; failures abort.
Transition finalize(const ContractState& s, const std::string& caller, const FinalizeClaim& claim,
                    const ContentStore& store);

struct Payouts {
  std::map<std::string, int64_t> by_address;
  int64_t aggregator_fee = 0;
  int64_t refund = 0;
};

/// Payouts fixed at finalize. Throws `kWrongPhase` unless the phase is RewardSpread.
Payouts spread_rewards(const ContractState& s);

/// Honest trainers: kept in more than half of the verified rounds they submitted to.
std::set<TrainerId> honest_trainers(const ContractState& s);

/// Reward formula over the honest set; `clipped` holds their clipped
/// contribution totals. Returns per-trainer tokens.
std::map<TrainerId, int64_t> compute_rewards(const RewardSchedule& schedule, double final_accuracy,
                                             const std::map<TrainerId, double>& clipped, int64_t available);

// ---- stateful wrapper ----

/// Serialized state machine: applies one operation at a time and appends its
/// event to the log only when the operation succeeds.
class Contract {
 public:
  explicit Contract(ContentStore& store) : store_(store) {}

  const ContractState& state() const noexcept { return state_; }
  const std::vector<nlohmann::json>& events() const noexcept { return events_; }
  /// Appends a caller-provided event (orchestrator annotations).
  void annotate(nlohmann::json event);

  void deploy(const TaskDescriptor& d, int64_t deposit, const RewardSchedule& schedule);
  void register_trainer(TrainerId id, const Registration& reg);
  void submit_local(uint64_t round, TrainerId id, const Cid& model);
  void close_submissions(uint64_t round);
  void submit_round(const std::string& caller, uint64_t round, const std::set<TrainerId>& kept, const Cid& aggregate,
                    const std::vector<Cid>& transcripts);
  void verify_round(uint64_t round, bool stop_early = false);
  void finalize(const std::string& caller, const FinalizeClaim& claim);

 private:
  void commit(Transition t);

  ContentStore& store_;
  ContractState state_;
  std::vector<nlohmann::json> events_;
};

/// JSON-lines image of an event list.
std::string to_jsonl(std::span<const nlohmann::json> events);
/// Throws `kMalformed` on a bad line.
std::vector<nlohmann::json> parse_jsonl(std::string_view text);

}  // namespace poc::ledger
