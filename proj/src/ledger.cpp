#include "poc/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace poc::ledger {

using nlohmann::json;

// ---- content store ----

Cid ContentStore::put(std::span<const uint8_t> bytes) {
  const Cid cid = sha256(bytes);
  blobs_.try_emplace(cid, bytes.begin(), bytes.end());
  return cid;
}

Bytes ContentStore::get(const Cid& cid) const {
  auto it = blobs_.find(cid);
  if (it == blobs_.end()) throw Error(Errc::kNotFound, "no content for " + to_hex(cid));
  return it->second;
}

std::optional<Bytes> ContentStore::find(const Cid& cid) const {
  auto it = blobs_.find(cid);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

verify::BlobResolver ContentStore::resolver() const {
  return [this](const Digest& d) { return find(d); };
}

void ContentStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [cid, bytes] : blobs_) {
    std::ofstream out(dir / (to_hex(cid) + ".bin"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::kNotFound, "cannot write " + (dir / to_hex(cid)).string());
  }
}

ContentStore ContentStore::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::kNotFound, "no store directory " + dir.string());
  ContentStore store;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".bin") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const Cid cid = store.put(bytes);
    if (to_hex(cid) != entry.path().stem().string()) {
      throw Error(Errc::kMalformed, "blob does not match its name: " + entry.path().string());
    }
  }
  return store;
}

// ---- phases ----

namespace {

constexpr std::pair<PhaseKind, std::string_view> kPhaseNames[] = {
    {PhaseKind::kCreated, "Created"},
    {PhaseKind::kRegistration, "Registration"},
    {PhaseKind::kRoundLocalTraining, "RoundLocalTraining"},
    {PhaseKind::kRoundAwaitingAggregator, "RoundAwaitingAggregator"},
    {PhaseKind::kRoundVerification, "RoundVerification"},
    {PhaseKind::kAwaitingFinalize, "AwaitingFinalize"},
    {PhaseKind::kRewardSpread, "RewardSpread"},
    {PhaseKind::kAborted, "Aborted"},
};

bool per_round(PhaseKind k) {
  return k == PhaseKind::kRoundLocalTraining || k == PhaseKind::kRoundAwaitingAggregator ||
         k == PhaseKind::kRoundVerification;
}

}  // namespace

std::string Phase::to_string() const {
  std::string name;
  for (const auto& [k, n] : kPhaseNames) {
    if (k == kind) name = n;
  }
  if (per_round(kind)) name += "(" + std::to_string(round) + ")";
  return name;
}

Phase Phase::parse(std::string_view s) {
  const auto open = s.find('(');
  const std::string_view name = s.substr(0, open);
  for (const auto& [k, n] : kPhaseNames) {
    if (n != name) continue;
    Phase p{k, 0};
    if (per_round(k)) {
      if (open == std::string_view::npos || s.back() != ')') throw Error(Errc::kMalformed, "phase needs a round");
      const std::string digits(s.substr(open + 1, s.size() - open - 2));
      if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) {
        throw Error(Errc::kMalformed, "bad phase round");
      }
      p.round = std::stoull(digits);
    } else if (open != std::string_view::npos) {
      throw Error(Errc::kMalformed, "phase takes no round");
    }
    return p;
  }
  throw Error(Errc::kMalformed, "unknown phase " + std::string(s));
}

bool transition_allowed(const Phase& from, const Phase& to, uint64_t max_rounds) {
  using K = PhaseKind;
  if (from.terminal()) return false;
  if (to.kind == K::kAborted) return from.kind != K::kCreated;
  const uint64_t t = from.round;
  switch (from.kind) {
    case K::kCreated: return to == Phase{K::kRegistration, 0};
    case K::kRegistration: return to == Phase{K::kRoundLocalTraining, 1};
    case K::kRoundLocalTraining: return to == Phase{K::kRoundAwaitingAggregator, t};
    case K::kRoundAwaitingAggregator: return to == Phase{K::kRoundVerification, t};
    case K::kRoundVerification:
      return to == Phase{K::kAwaitingFinalize, 0} || (t < max_rounds && to == Phase{K::kRoundLocalTraining, t + 1});
    case K::kAwaitingFinalize: return to == Phase{K::kRewardSpread, 0};
    default: return false;
  }
}

// ---- JSON images ----

namespace {

json cid_json(const std::optional<Cid>& c) { return c ? json(to_hex(*c)) : json(nullptr); }

std::optional<Cid> cid_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return digest_from_hex(j.get<std::string>());
}

json cid_list(std::span<const Cid> cids) {
  json a = json::array();
  for (const auto& c : cids) a.push_back(to_hex(c));
  return a;
}

}  // namespace

json RewardSchedule::to_json() const {
  return {{"participation_fee", participation_fee},
          {"acc_base", acc_base},
          {"acc_target", acc_target},
          {"pool", pool},
          {"aggregator_fee", aggregator_fee}};
}

RewardSchedule RewardSchedule::from_json(const json& j) {
  RewardSchedule s;
  s.participation_fee = j.at("participation_fee").get<int64_t>();
  s.acc_base = j.at("acc_base").get<double>();
  s.acc_target = j.at("acc_target").get<double>();
  s.pool = j.at("pool").get<int64_t>();
  s.aggregator_fee = j.at("aggregator_fee").get<int64_t>();
  return s;
}

uint32_t TaskDescriptor::effective_quorum() const {
  if (quorum != 0) return quorum;
  return std::max<uint32_t>(3, (trainers + 1) / 2);
}

json TaskDescriptor::to_json() const {
  return {{"owner_data", cid_json(owner_data)},
          {"initial_model", cid_json(initial_model)},
          {"model_description", model_description},
          {"hyperparameters", hyperparameters},
          {"trainers", trainers},
          {"max_rounds", max_rounds},
          {"quorum", quorum},
          {"owner_address", owner_address},
          {"aggregator_address", aggregator_address}};
}

TaskDescriptor TaskDescriptor::from_json(const json& j) {
  TaskDescriptor d;
  d.owner_data = cid_from(j.at("owner_data"));
  d.initial_model = cid_from(j.at("initial_model"));
  d.model_description = j.at("model_description").get<std::string>();
  d.hyperparameters = j.at("hyperparameters");
  d.trainers = j.at("trainers").get<uint32_t>();
  d.max_rounds = j.at("max_rounds").get<uint64_t>();
  d.quorum = j.at("quorum").get<uint32_t>();
  d.owner_address = j.at("owner_address").get<std::string>();
  d.aggregator_address = j.at("aggregator_address").get<std::string>();
  return d;
}

json RoundRecord::to_json() const {
  json locals = json::object();
  for (const auto& [id, c] : local_models) locals[std::to_string(id)] = to_hex(c);
  return {{"round", round},
          {"base_model", to_hex(base_model)},
          {"local_models", locals},
          {"kept", kept},
          {"removed", removed},
          {"aggregate", cid_json(aggregate)},
          {"transcripts", cid_list(transcripts)},
          {"verified", verified},
          {"attack_flagged", attack_flagged},
          {"cross_trainer_ran", cross_trainer_ran}};
}

json ContractState::to_json() const {
  json registry_json = json::object();
  for (const auto& [id, r] : registry) {
    registry_json[std::to_string(id)] = {{"pubkey_id", r.pubkey_id}, {"address", r.address}, {"samples", r.samples}};
  }
  json rounds_json = json::array();
  for (const auto& r : rounds) rounds_json.push_back(r.to_json());
  json val_acc = json::object();
  for (const auto& [t, a] : validation_accuracy) val_acc[std::to_string(t)] = a;
  return {{"phase", phase.to_string()},
          {"deposit", deposit},
          {"descriptor", descriptor.to_json()},
          {"schedule", schedule.to_json()},
          {"registry", registry_json},
          {"deploy_digest", to_hex(deploy_digest)},
          {"partition_seed", partition_seed},
          {"validation", cid_json(validation)},
          {"test", cid_json(test)},
          {"rounds", rounds_json},
          {"contribution", contribution ? *contribution : json(nullptr)},
          {"final_accuracy", final_accuracy ? json(*final_accuracy) : json(nullptr)},
          {"validation_accuracy", val_acc},
          {"payouts", payouts},
          {"aggregator_paid", aggregator_paid},
          {"refund", refund},
          {"abort_reason", abort_reason}};
}

const RoundRecord* ContractState::record(uint64_t round) const {
  for (const auto& r : rounds) {
    if (r.round == round) return &r;
  }
  return nullptr;
}

json FinalizeClaim::to_json() const {
  json trials_json = json::object();
  for (const auto& [t, list] : trials) {
    json a = json::array();
    for (const auto& tr : list) {
      a.push_back({{"trainer", tr.trainer},
                   {"subset", tr.subset},
                   {"correct_with", tr.correct_with},
                   {"correct_without", tr.correct_without}});
    }
    trials_json[std::to_string(t)] = a;
  }
  json val = json::object();
  for (const auto& [t, c] : validation_transcripts) val[std::to_string(t)] = to_hex(c);
  return {{"contribution", contribution.to_json()},
          {"repetitions", repetitions},
          {"trials", trials_json},
          {"coalition_transcripts", cid_list(coalition_transcripts)},
          {"final_accuracy_transcript", to_hex(final_accuracy_transcript)},
          {"final_accuracy", final_accuracy},
          {"validation_transcripts", val}};
}

FinalizeClaim FinalizeClaim::from_json(const json& j) {
  FinalizeClaim c;
  c.contribution = contribution::ContributionVector::from_json(j.at("contribution"));
  c.repetitions = j.at("repetitions").get<int>();
  for (const auto& [k, list] : j.at("trials").items()) {
    auto& out = c.trials[std::stoull(k)];
    for (const auto& tr : list) {
      contribution::RlooTrial t;
      t.trainer = tr.at("trainer").get<TrainerId>();
      t.subset = tr.at("subset").get<std::vector<TrainerId>>();
      t.correct_with = tr.at("correct_with").get<int64_t>();
      t.correct_without = tr.at("correct_without").get<int64_t>();
      out.push_back(std::move(t));
    }
  }
  for (const auto& h : j.at("coalition_transcripts")) c.coalition_transcripts.push_back(digest_from_hex(h.get<std::string>()));
  c.final_accuracy_transcript = digest_from_hex(j.at("final_accuracy_transcript").get<std::string>());
  c.final_accuracy = j.at("final_accuracy").get<double>();
  for (const auto& [k, v] : j.at("validation_transcripts").items()) {
    c.validation_transcripts[std::stoull(k)] = digest_from_hex(v.get<std::string>());
  }
  return c;
}

// ---- operations ----

namespace {

/// A check that failed inside verify_round / finalize; aborts the run.
struct Rejected {
  std::string reason;
};

void reject_unless(bool cond, const std::string& reason) {
  if (!cond) throw Rejected{reason};
}

void expect_phase(const ContractState& s, PhaseKind kind) {
  if (s.phase.kind != kind) throw Error(Errc::kWrongPhase, "operation not allowed in phase " + s.phase.to_string());
}

void expect_round_phase(const ContractState& s, PhaseKind kind, uint64_t round) {
  expect_phase(s, kind);
  if (s.phase.round != round) {
    throw Error(Errc::kWrongRound, "round " + std::to_string(round) + " but contract is at " + s.phase.to_string());
  }
}

void expect_aggregator(const ContractState& s, const std::string& caller) {
  if (caller != s.descriptor.aggregator_address) throw Error(Errc::kUnauthorized, "caller is not the aggregator");
}

RoundRecord& current_record(ContractState& s) { return s.rounds.back(); }

void move_to(ContractState& s, Phase next) {
  if (!transition_allowed(s.phase, next, s.descriptor.max_rounds)) {
    throw Error(Errc::kWrongPhase, "illegal transition " + s.phase.to_string() + " -> " + next.to_string());
  }
  s.phase = next;
}

/// Aborted run: honest trainers of the verified rounds keep R_p; the owner
/// gets everything else back.
void abort_run(ContractState& s, const std::string& reason) {
  move_to(s, Phase{PhaseKind::kAborted, 0});
  s.abort_reason = reason;
  s.payouts.clear();
  int64_t paid = 0;
  const auto honest = honest_trainers(s);
  for (const auto& [id, reg] : s.registry) {
    const int64_t amount = honest.count(id) ? s.schedule.participation_fee : 0;
    s.payouts[reg.address] += amount;
    paid += amount;
  }
  s.aggregator_paid = 0;
  s.refund = s.deposit - paid;
}

json payout_event(const ContractState& s) {
  return {{"payouts", s.payouts}, {"aggregator_paid", s.aggregator_paid}, {"refund", s.refund}};
}

std::optional<verify::Transcript> fetch_transcript(const ContentStore& store, const Cid& cid) {
  auto bytes = store.find(cid);
  if (!bytes) throw Error(Errc::kMissingTranscript, "transcript " + to_hex(cid) + " not in store");
  try {
    return verify::Transcript::deserialize(*bytes);
  } catch (const Error&) {
    return std::nullopt;
  }
}

json verdict_json(const verify::Verdict& v) { return {{"ok", v.ok}, {"stage", v.stage}, {"message", v.message}}; }

const Digest& committed(const verify::Transcript& t, const std::string& label) {
  const auto* c = t.commitment(label);
  reject_unless(c != nullptr, "transcript lacks commitment " + label);
  return c->digest;
}

/// Latest model a trainer submitted before `round`.
std::optional<Cid> previous_submission(const ContractState& s, TrainerId id, uint64_t round) {
  std::optional<Cid> out;
  for (const auto& r : s.rounds) {
    if (r.round >= round) break;
    if (auto it = r.local_models.find(id); it != r.local_models.end()) out = it->second;
  }
  return out;
}

void check_aggregation_inputs(const ContractState& s, const RoundRecord& rec, const verify::Transcript& agg,
                              const std::set<TrainerId>& members) {
  reject_unless(agg.round == rec.round, "aggregation transcript is for another round");
  reject_unless(agg.meta("predivided") == 0, "pre-divided aggregation is not accepted");
  const auto ids = verify::aggregation_members(agg);
  reject_unless(std::set<TrainerId>(ids.begin(), ids.end()) == members, "aggregation members do not match");
  for (TrainerId id : ids) {
    auto it = rec.local_models.find(id);
    reject_unless(it != rec.local_models.end() && committed(agg, "model:" + std::to_string(id)) == it->second,
                  "aggregated model does not match the recorded submission");
  }
  const auto weights = verify::aggregation_weights(agg);
  reject_unless(weights.size() == ids.size(), "aggregation weights missing");
  for (const auto& [id, w] : weights) {
    reject_unless(w == Fixed::from_int(s.registry.at(id).samples), "aggregation weight differs from the registered data size");
  }
}

}  // namespace

Transition deploy(const TaskDescriptor& d, int64_t deposit, const RewardSchedule& schedule) {
  if (!d.owner_data) throw Error(Errc::kInvalidDescriptor, "descriptor lacks the owner data Cid");
  if (!d.initial_model) throw Error(Errc::kInvalidDescriptor, "descriptor lacks the initial model Cid");
  if (d.trainers < 3) throw Error(Errc::kInvalidDescriptor, "at least three trainers are required");
  if (d.max_rounds < 1) throw Error(Errc::kInvalidDescriptor, "at least one round is required");
  if (d.effective_quorum() < 3 || d.effective_quorum() > d.trainers) {
    throw Error(Errc::kInvalidDescriptor, "quorum must lie in [3, L]");
  }
  if (d.owner_address.empty() || d.aggregator_address.empty()) {
    throw Error(Errc::kInvalidDescriptor, "owner and aggregator addresses are required");
  }
  if (!(schedule.acc_target > schedule.acc_base) || schedule.participation_fee < 0 || schedule.pool < 0 ||
      schedule.aggregator_fee < 0) {
    throw Error(Errc::kInvalidDescriptor, "invalid reward schedule");
  }
  const int128 floor = int128{d.trainers} * schedule.participation_fee + schedule.aggregator_fee;
  if (deposit < floor || int128{schedule.pool} + schedule.aggregator_fee > deposit) {
    throw Error(Errc::kInsufficientDeposit, "deposit does not cover participation fees, aggregator fee and pool");
  }
  ContractState s;
  s.deposit = deposit;
  s.descriptor = d;
  s.schedule = schedule;
  move_to(s, Phase{PhaseKind::kRegistration, 0});
  const json image = {{"descriptor", d.to_json()}, {"deposit", deposit}, {"schedule", schedule.to_json()}};
  const std::string dumped = image.dump();
  s.deploy_digest = sha256(std::span(reinterpret_cast<const uint8_t*>(dumped.data()), dumped.size()));
  json ev = image;
  ev["op"] = "deploy";
  ev["deploy_digest"] = to_hex(s.deploy_digest);
  return {std::move(s), std::move(ev)};
}

Transition register_trainer(const ContractState& in, TrainerId id, const Registration& reg, ContentStore& store) {
  expect_phase(in, PhaseKind::kRegistration);
  if (in.registry.count(id)) throw Error(Errc::kDuplicateRegistration, "trainer already registered");
  if (reg.samples <= 0) throw Error(Errc::kDomainError, "registered data size must be positive");
  ContractState s = in;
  s.registry.emplace(id, reg);
  json ev = {{"op", "register"}, {"trainer", id}, {"address", reg.address}, {"samples", reg.samples}};
  if (s.registry.size() == s.descriptor.trainers) {
    ByteWriter w;
    for (const auto& [rid, r] : s.registry) w.u32(rid);
    w.raw(s.deploy_digest);
    const Digest h = sha256(w.bytes());
    for (int i = 0; i < 8; ++i) s.partition_seed |= uint64_t{h[i]} << (8 * i);
    const auto owner = ml::Dataset::deserialize(store.get(*s.descriptor.owner_data));
    const auto split = ml::split_owner_data(owner, s.partition_seed);
    s.validation = store.put(split.validation.serialize());
    s.test = store.put(split.test.serialize());
    RoundRecord first;
    first.round = 1;
    first.base_model = *s.descriptor.initial_model;
    s.rounds.push_back(std::move(first));
    move_to(s, Phase{PhaseKind::kRoundLocalTraining, 1});
    ev["partition_seed"] = s.partition_seed;
    ev["validation"] = to_hex(*s.validation);
    ev["test"] = to_hex(*s.test);
  }
  return {std::move(s), std::move(ev)};
}

Transition submit_local(const ContractState& in, uint64_t round, TrainerId id, const Cid& model) {
  expect_round_phase(in, PhaseKind::kRoundLocalTraining, round);
  if (!in.registry.count(id)) throw Error(Errc::kUnknownTrainer, "trainer not registered");
  if (in.rounds.back().local_models.count(id)) throw Error(Errc::kDuplicateSubmission, "already submitted this round");
  ContractState s = in;
  RoundRecord& rec = current_record(s);
  rec.local_models.emplace(id, model);
  if (rec.local_models.size() == s.registry.size()) move_to(s, Phase{PhaseKind::kRoundAwaitingAggregator, round});
  json ev = {{"op", "submit_local"}, {"round", round}, {"trainer", id}, {"model", to_hex(model)}};
  return {std::move(s), std::move(ev)};
}

Transition close_submissions(const ContractState& in, uint64_t round) {
  expect_round_phase(in, PhaseKind::kRoundLocalTraining, round);
  ContractState s = in;
  const size_t count = current_record(s).local_models.size();
  json ev = {{"op", "close_submissions"}, {"round", round}, {"submitted", count}};
  if (count >= s.descriptor.effective_quorum()) {
    move_to(s, Phase{PhaseKind::kRoundAwaitingAggregator, round});
  } else {
    abort_run(s, "round " + std::to_string(round) + ": " + std::to_string(count) + " submissions, quorum " +
                     std::to_string(s.descriptor.effective_quorum()));
    ev["abort_reason"] = s.abort_reason;
    ev.update(payout_event(s));
  }
  return {std::move(s), std::move(ev)};
}

Transition submit_round(const ContractState& in, const std::string& caller, uint64_t round,
                        const std::set<TrainerId>& kept, const Cid& aggregate, const std::vector<Cid>& transcripts) {
  expect_round_phase(in, PhaseKind::kRoundAwaitingAggregator, round);
  expect_aggregator(in, caller);
  const RoundRecord& cur = in.rounds.back();
  for (TrainerId id : kept) {
    if (!cur.local_models.count(id)) throw Error(Errc::kUnknownTrainer, "kept trainer did not submit");
  }
  ContractState s = in;
  RoundRecord& rec = current_record(s);
  rec.kept = kept;
  rec.removed.clear();
  for (const auto& [id, c] : rec.local_models) {
    if (!kept.count(id)) rec.removed.insert(id);
  }
  rec.aggregate = aggregate;
  rec.transcripts = transcripts;
  move_to(s, Phase{PhaseKind::kRoundVerification, round});
  json ev = {{"op", "submit_round"},
             {"round", round},
             {"kept", kept},
             {"aggregate", to_hex(aggregate)},
             {"transcripts", cid_list(transcripts)}};
  return {std::move(s), std::move(ev)};
}

Transition verify_round(const ContractState& in, uint64_t round, const ContentStore& store, bool stop_early) {
  expect_round_phase(in, PhaseKind::kRoundVerification, round);
  ContractState s = in;
  RoundRecord& rec = current_record(s);
  json ev = {{"op", "verify_round"}, {"round", round}};

  std::optional<verify::Transcript> outlier_t, agg_t;
  std::vector<std::optional<verify::Transcript>> fetched;
  for (const auto& cid : rec.transcripts) fetched.push_back(fetch_transcript(store, cid));
  try {
    for (auto& t : fetched) {
      reject_unless(t.has_value(), "undecodable transcript");
      if (t->kind == verify::Kind::kOutlier && !outlier_t) {
        outlier_t = std::move(t);
      } else if (t->kind == verify::Kind::kAggregation && !agg_t) {
        agg_t = std::move(t);
      } else {
        reject_unless(false, "unexpected transcript kind " + std::string(verify::to_string(t->kind)));
      }
    }
    if (!outlier_t || !agg_t) throw Error(Errc::kMissingTranscript, "round needs outlier and aggregation transcripts");

    const auto resolve = store.resolver();
    const verify::Verdict vo = verify::verify_outlier(*outlier_t, resolve);
    const verify::Verdict va = verify::verify_aggregation(*agg_t, resolve);
    ev["verdicts"] = {{"outlier", verdict_json(vo)}, {"aggregation", verdict_json(va)}};
    reject_unless(vo.ok, "outlier transcript failed at " + vo.stage + ": " + vo.message);
    reject_unless(va.ok, "aggregation transcript failed at " + va.stage + ": " + va.message);

    // Outlier transcript against the chain.
    const verify::Transcript& ot = *outlier_t;
    reject_unless(ot.round == round, "outlier transcript is for another round");
    std::set<TrainerId> submitted;
    for (const auto& [id, c] : rec.local_models) {
      submitted.insert(id);
      const auto* com = ot.commitment("sub:" + std::to_string(id));
      reject_unless(com != nullptr && com->digest == c, "outlier input does not match the recorded submission");
    }
    reject_unless(ot.meta("count") == static_cast<int64_t>(submitted.size()), "outlier transcript covers other trainers");
    size_t prev_count = 0;
    for (const auto& c : ot.commitments) prev_count += c.label.starts_with("prev:");
    size_t expected_prev = 0;
    if (round > 1) {
      for (TrainerId id : submitted) {
        const auto prev = previous_submission(s, id, round);
        if (!prev) continue;
        ++expected_prev;
        const auto* com = ot.commitment("prev:" + std::to_string(id));
        reject_unless(com != nullptr && com->digest == *prev, "previous model does not match the chain");
      }
    }
    reject_unless(prev_count == expected_prev, "unexpected previous-model commitments");
    if (ot.meta("cross_trainer_ran") != 0 && ot.meta("krum_m") == 0) {
      reject_unless(committed(ot, "reference") == rec.base_model, "reference is not the previous global model");
    }
    const outlier::DetectionReport report = verify::report_from_transcript(ot);
    ev["detection"] = report.to_json();
    reject_unless(report.kept == rec.kept, "kept set differs from the proven partition");

    check_aggregation_inputs(s, rec, *agg_t, rec.kept);
    reject_unless(committed(*agg_t, "aggregate") == *rec.aggregate, "aggregate Cid differs from the proven aggregate");

    rec.verified = true;
    rec.attack_flagged = report.attack_flagged;
    rec.cross_trainer_ran = report.cross_trainer_ran;
    if (round == s.descriptor.max_rounds || stop_early) {
      move_to(s, Phase{PhaseKind::kAwaitingFinalize, 0});
    } else {
      RoundRecord next;
      next.round = round + 1;
      next.base_model = *rec.aggregate;
      s.rounds.push_back(std::move(next));
      move_to(s, Phase{PhaseKind::kRoundLocalTraining, round + 1});
    }
    ev["ok"] = true;
  } catch (const Rejected& r) {
    abort_run(s, "round " + std::to_string(round) + ": " + r.reason);
    ev["ok"] = false;
    ev["abort_reason"] = s.abort_reason;
    ev.update(payout_event(s));
  } catch (const Error& e) {
    if (e.code() == Errc::kMissingTranscript) throw;
    abort_run(s, "round " + std::to_string(round) + ": " + e.what());
    ev["ok"] = false;
    ev["abort_reason"] = s.abort_reason;
    ev.update(payout_event(s));
  }
  return {std::move(s), std::move(ev)};
}

std::set<TrainerId> honest_trainers(const ContractState& s) {
  std::map<TrainerId, std::pair<int, int>> counts;  // submitted, kept
  for (const auto& r : s.rounds) {
    if (!r.verified) continue;
    for (const auto& [id, c] : r.local_models) {
      auto& [sub, kept] = counts[id];
      ++sub;
      kept += r.kept.count(id) ? 1 : 0;
    }
  }
  std::set<TrainerId> out;
  for (const auto& [id, sk] : counts) {
    if (2 * sk.second > sk.first) out.insert(id);
  }
  return out;
}

std::map<TrainerId, int64_t> compute_rewards(const RewardSchedule& schedule, double final_accuracy,
                                             const std::map<TrainerId, double>& clipped, int64_t available) {
  std::map<TrainerId, int64_t> out;
  if (clipped.empty()) return out;
  const auto n = static_cast<int64_t>(clipped.size());
  const double frac =
      std::clamp((final_accuracy - schedule.acc_base) / (schedule.acc_target - schedule.acc_base), 0.0, 1.0);
  const auto total = static_cast<int64_t>(std::floor(static_cast<double>(schedule.pool) * frac));
  const int128 need = int128{n} * schedule.participation_fee;
  const int64_t fee = need <= available ? schedule.participation_fee : available / n;
  const int64_t alpha = std::max<int64_t>(0, static_cast<int64_t>(std::min<int128>(total - need, available - int128{fee} * n)));
  // Shares as integer weights so the floored bonuses never exceed alpha.
  std::map<TrainerId, int64_t> q;
  int128 qsum = 0;
  for (const auto& [id, c] : clipped) {
    q[id] = std::llround(std::max(0.0, c) * 0x1.0p40);
    qsum += q[id];
  }
  for (const auto& [id, c] : clipped) {
    const int64_t bonus = qsum > 0 ? static_cast<int64_t>(int128{alpha} * q[id] / qsum) : 0;
    out[id] = fee + bonus;
  }
  return out;
}

Transition finalize(const ContractState& in, const std::string& caller, const FinalizeClaim& claim,
                    const ContentStore& store) {
  expect_phase(in, PhaseKind::kAwaitingFinalize);
  expect_aggregator(in, caller);
  ContractState s = in;
  json ev = {{"op", "finalize"}, {"claim", claim.to_json()}};
  const auto resolve = store.resolver();
  std::map<Cid, bool> verified_cache;
  auto checked = [&](const Cid& cid) -> verify::Transcript {
    auto t = fetch_transcript(store, cid);
    reject_unless(t.has_value(), "undecodable transcript " + to_hex(cid));
    auto [it, fresh] = verified_cache.try_emplace(cid, false);
    if (fresh) {
      const verify::Verdict v = verify::verify(*t, resolve);
      it->second = v.ok;
      reject_unless(v.ok, std::string(verify::to_string(t->kind)) + " transcript failed at " + v.stage + ": " + v.message);
    }
    reject_unless(it->second, "transcript failed verification");
    return *t;
  };
  auto accuracy_of = [](const verify::Transcript& t) {
    return static_cast<double>(t.meta("correct")) / static_cast<double>(t.meta("n"));
  };

  std::vector<const RoundRecord*> verified;
  for (const auto& r : s.rounds) {
    if (r.verified) verified.push_back(&r);
  }
  for (const auto* r : verified) {
    if (!claim.validation_transcripts.count(r->round)) {
      throw Error(Errc::kMissingTranscript, "no validation accuracy transcript for round " + std::to_string(r->round));
    }
  }
  try {
    reject_unless(!verified.empty(), "no verified rounds");
    for (const auto* r : verified) {
      const verify::Transcript t = checked(claim.validation_transcripts.at(r->round));
      reject_unless(t.kind == verify::Kind::kAccuracy && t.round == r->round, "validation transcript has the wrong kind or round");
      reject_unless(committed(t, "model") == *r->aggregate, "validation transcript evaluates another model");
      reject_unless(committed(t, "dataset") == *s.validation, "validation transcript uses another dataset");
      s.validation_accuracy[r->round] = accuracy_of(t);
    }
    const RoundRecord& last = *verified.back();
    const verify::Transcript ft = checked(claim.final_accuracy_transcript);
    reject_unless(ft.kind == verify::Kind::kAccuracy, "final accuracy transcript has the wrong kind");
    reject_unless(committed(ft, "model") == *last.aggregate, "final accuracy is not for the final model");
    reject_unless(committed(ft, "dataset") == *s.test, "final accuracy does not use the test split");
    reject_unless(accuracy_of(ft) == claim.final_accuracy, "claimed final accuracy differs from the proof");
    const int64_t test_size = ft.meta("n");

    // Index coalition proofs.
    std::map<std::pair<uint64_t, std::vector<TrainerId>>, Cid> coalition_model;
    std::map<Cid, int64_t> correct_of;
    for (const auto& cid : claim.coalition_transcripts) {
      const verify::Transcript t = checked(cid);
      if (t.kind == verify::Kind::kAggregation) {
        const RoundRecord* rec = s.record(t.round);
        reject_unless(rec != nullptr && rec->verified, "coalition proof for an unverified round");
        const auto ids = verify::aggregation_members(t);
        for (TrainerId id : ids) reject_unless(rec->kept.count(id) == 1, "coalition includes a removed trainer");
        check_aggregation_inputs(s, *rec, t, std::set<TrainerId>(ids.begin(), ids.end()));
        coalition_model[{t.round, ids}] = committed(t, "aggregate");
      } else if (t.kind == verify::Kind::kAccuracy) {
        reject_unless(committed(t, "dataset") == *s.test, "coalition accuracy does not use the test split");
        correct_of[committed(t, "model")] = t.meta("correct");
      } else {
        reject_unless(false, "unexpected coalition transcript kind");
      }
    }

    reject_unless(claim.repetitions >= 1, "RLOO repetitions must be positive");
    std::vector<std::map<TrainerId, double>> raw;
    std::set<TrainerId> ids;
    for (const auto* r : verified) {
      auto it = claim.trials.find(r->round);
      reject_unless(it != claim.trials.end(), "no RLOO trials for round " + std::to_string(r->round));
      const auto& trials = it->second;
      const std::vector<TrainerId> honest(r->kept.begin(), r->kept.end());
      const size_t k = contribution::rloo_subset_size(honest.size());
      reject_unless(trials.size() == honest.size() * static_cast<size_t>(claim.repetitions), "RLOO trial count mismatch");
      auto model_of = [&](const std::vector<TrainerId>& members) -> Cid {
        if (members.empty()) return r->base_model;
        auto m = coalition_model.find({r->round, members});
        if (m == coalition_model.end()) throw Error(Errc::kMissingTranscript, "coalition without aggregation proof");
        return m->second;
      };
      auto proven_correct = [&](const Cid& model) {
        auto c = correct_of.find(model);
        if (c == correct_of.end()) throw Error(Errc::kMissingTranscript, "coalition model without accuracy proof");
        return c->second;
      };
      for (size_t i = 0; i < trials.size(); ++i) {
        const auto& tr = trials[i];
        reject_unless(tr.trainer == honest[i / static_cast<size_t>(claim.repetitions)], "RLOO trials out of order");
        reject_unless(tr.subset.size() == k && std::is_sorted(tr.subset.begin(), tr.subset.end()) &&
                          std::adjacent_find(tr.subset.begin(), tr.subset.end()) == tr.subset.end(),
                      "RLOO subset has the wrong shape");
        reject_unless(std::binary_search(tr.subset.begin(), tr.subset.end(), tr.trainer), "RLOO subset lacks its trainer");
        for (TrainerId id : tr.subset) reject_unless(r->kept.count(id) == 1, "RLOO subset includes a removed trainer");
        reject_unless(proven_correct(model_of(tr.subset)) == tr.correct_with, "RLOO count with the trainer is not proven");
        reject_unless(proven_correct(model_of(contribution::without_trainer(tr.subset, tr.trainer))) == tr.correct_without,
                      "RLOO count without the trainer is not proven");
      }
      raw.push_back(contribution::rloo_values(trials, test_size));
      ids.insert(r->kept.begin(), r->kept.end());
    }
    const std::vector<TrainerId> id_list(ids.begin(), ids.end());
    const auto cv = contribution::normalize_and_total(raw, id_list);
    reject_unless(cv.to_json() == claim.contribution.to_json(), "contribution vector differs from the replayed trials");

    s.contribution = cv.to_json();
    s.final_accuracy = claim.final_accuracy;
    const auto honest = honest_trainers(s);
    std::map<TrainerId, double> clipped;
    for (TrainerId id : honest) {
      auto c = cv.clipped.find(id);
      clipped[id] = c == cv.clipped.end() ? 0.0 : c->second;
    }
    const int64_t available = s.deposit - s.schedule.aggregator_fee;
    const auto rewards = compute_rewards(s.schedule, claim.final_accuracy, clipped, available);
    s.payouts.clear();
    int64_t paid = 0;
    for (const auto& [id, reg] : s.registry) {
      auto it = rewards.find(id);
      const int64_t amount = it == rewards.end() ? 0 : it->second;
      s.payouts[reg.address] += amount;
      paid += amount;
    }
    s.aggregator_paid = s.schedule.aggregator_fee;
    s.refund = s.deposit - paid - s.aggregator_paid;
    move_to(s, Phase{PhaseKind::kRewardSpread, 0});
    ev["ok"] = true;
    ev["final_accuracy"] = claim.final_accuracy;
    json val = json::object();
    for (const auto& [t, a] : s.validation_accuracy) val[std::to_string(t)] = a;
    ev["validation_accuracy"] = val;
    ev["honest"] = honest;
    ev.update(payout_event(s));
  } catch (const Rejected& r) {
    abort_run(s, "finalize: " + r.reason);
    ev["ok"] = false;
    ev["abort_reason"] = s.abort_reason;
    ev.update(payout_event(s));
  } catch (const Error& e) {
    if (e.code() == Errc::kMissingTranscript) throw;
    abort_run(s, std::string("finalize: ") + e.what());
    ev["ok"] = false;
    ev["abort_reason"] = s.abort_reason;
    ev.update(payout_event(s));
  }
  return {std::move(s), std::move(ev)};
}

Payouts spread_rewards(const ContractState& s) {
  expect_phase(s, PhaseKind::kRewardSpread);
  return {s.payouts, s.aggregator_paid, s.refund};
}

// ---- stateful wrapper ----

void Contract::commit(Transition t) {
  t.event["seq"] = events_.size();
  t.event["phase"] = t.state.phase.to_string();
  state_ = std::move(t.state);
  events_.push_back(std::move(t.event));
}

void Contract::annotate(json event) {
  event["seq"] = events_.size();
  event["phase"] = state_.phase.to_string();
  events_.push_back(std::move(event));
}

void Contract::deploy(const TaskDescriptor& d, int64_t deposit, const RewardSchedule& schedule) {
  expect_phase(state_, PhaseKind::kCreated);
  commit(ledger::deploy(d, deposit, schedule));
}

void Contract::register_trainer(TrainerId id, const Registration& reg) {
  commit(ledger::register_trainer(state_, id, reg, store_));
}

void Contract::submit_local(uint64_t round, TrainerId id, const Cid& model) {
  commit(ledger::submit_local(state_, round, id, model));
}

void Contract::close_submissions(uint64_t round) { commit(ledger::close_submissions(state_, round)); }

void Contract::submit_round(const std::string& caller, uint64_t round, const std::set<TrainerId>& kept,
                            const Cid& aggregate, const std::vector<Cid>& transcripts) {
  commit(ledger::submit_round(state_, caller, round, kept, aggregate, transcripts));
}

void Contract::verify_round(uint64_t round, bool stop_early) {
  commit(ledger::verify_round(state_, round, store_, stop_early));
}

void Contract::finalize(const std::string& caller, const FinalizeClaim& claim) {
  commit(ledger::finalize(state_, caller, claim, store_));
}

std::string to_jsonl(std::span<const json> events) {
  std::string out;
  for (const auto& e : events) {
    out += e.dump();
    out += '\n';
  }
  return out;
}

std::vector<json> parse_jsonl(std::string_view text) {
  std::vector<json> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(Errc::kMalformed, std::string("bad event line: ") + e.what());
    }
  }
  return out;
}

}  // namespace poc::ledger
