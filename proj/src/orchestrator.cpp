#include "poc/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "poc/contribution.hpp"
#include "poc/outlier.hpp"

namespace poc::orchestrator {

using nlohmann::json;

// ---- config ----

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(Errc::kConfigError, what); }

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) config_error("unknown key " + where + "." + k);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

constexpr std::pair<ml::PartitionScheme, std::string_view> kSchemes[] = {
    {ml::PartitionScheme::kIid, "iid"},
    {ml::PartitionScheme::kLabelExclusive, "label_exclusive"},
    {ml::PartitionScheme::kRareLabel, "rare_label"},
};

constexpr std::pair<ml::AttackKind, std::string_view> kAttacks[] = {
    {ml::AttackKind::kNone, "none"},
    {ml::AttackKind::kByzantine, "byzantine"},
    {ml::AttackKind::kBackdoor, "backdoor"},
};

template <typename E, size_t N>
std::string name_of(const std::pair<E, std::string_view> (&table)[N], E v) {
  for (const auto& [k, n] : table) {
    if (k == v) return std::string(n);
  }
  return "?";
}

template <typename E, size_t N>
E parse_name(const std::pair<E, std::string_view> (&table)[N], const std::string& s, const char* what) {
  for (const auto& [k, n] : table) {
    if (n == s) return k;
  }
  config_error(std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

int64_t ScenarioConfig::effective_deposit() const {
  if (deposit != 0) return deposit;
  return std::max<int64_t>(int64_t{trainers} * rewards.participation_fee, rewards.pool) + rewards.aggregator_fee;
}

void ScenarioConfig::validate() const {
  if (trainers < 3) config_error("at least three trainers are required");
  if (rounds < 1) config_error("rounds must be at least 1");
  for (TrainerId id : malicious) {
    if (id < 1 || id > trainers) config_error("malicious ids must lie in [1, L]");
  }
  if (attack.kind == ml::AttackKind::kNone && !malicious.empty()) config_error("malicious trainers need an attack kind");
  if (!(gamma > -1.0 && gamma < 1.0)) config_error("gamma must lie in (-1, 1)");
  if (hidden < 1) config_error("hidden width must be positive");
  if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 1) config_error("invalid training parameters");
  if (!(attack.sigma > 0.0) || !(attack.beta > 0.0)) config_error("attack scales must be positive");
  if (rloo_repetitions < 1) config_error("RLOO repetitions must be positive");
  if (proof_repetitions < 1 || proof_repetitions > 64) config_error("proof repetitions must lie in [1, 64]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) config_error("dropout rate must lie in [0, 1)");
  for (const auto& [t, id] : dropouts) {
    if (t < 1 || t > rounds || id < 1 || id > trainers) config_error("dropout event out of range");
  }
  if (quorum != 0 && (quorum < 3 || quorum > trainers)) config_error("quorum must lie in [3, L]");
  if (rare_holder < 1 || rare_holder > trainers) config_error("rare-label holder must lie in [1, L]");
  if (early_stop_patience < 0) config_error("patience must be nonnegative");
  if (data.source == "blobs") {
    if (data.dim < 1 || data.classes < 2 || data.samples_per_trainer < 1 || data.owner_samples < 2 ||
        !(data.separation > 0.0)) {
      config_error("invalid blob data parameters");
    }
  } else if (data.source == "idx") {
    if (data.manifest.empty()) config_error("idx data needs a manifest");
  } else {
    config_error("data source must be 'blobs' or 'idx'");
  }
  const auto& r = rewards;
  if (!(r.acc_target > r.acc_base) || r.participation_fee < 0 || r.pool < 0 || r.aggregator_fee < 0) {
    config_error("invalid reward schedule");
  }
  if (deposit != 0 && (deposit < int64_t{trainers} * r.participation_fee + r.aggregator_fee ||
                       r.pool + r.aggregator_fee > deposit)) {
    config_error("deposit does not cover participation fees, aggregator fee and pool");
  }
}

json ScenarioConfig::to_json() const {
  json dropout_events = json::array();
  for (const auto& [t, id] : dropouts) dropout_events.push_back({t, id});
  json data_json = {{"source", data.source}};
  if (data.source == "idx") {
    data_json["manifest"] = data.manifest.string();
  } else {
    data_json.update({{"dim", data.dim},
                      {"classes", data.classes},
                      {"separation", data.separation},
                      {"samples_per_trainer", data.samples_per_trainer},
                      {"owner_samples", data.owner_samples}});
  }
  return {
      {"trainers", trainers},
      {"rounds", rounds},
      {"seed", seed},
      {"model", {{"kind", model == ml::ModelKind::kMlp ? "mlp" : "logistic"}, {"hidden", hidden}}},
      {"data", data_json},
      {"partition", {{"scheme", name_of(kSchemes, partition)}, {"rare_labels", rare_labels}, {"holder", rare_holder}}},
      {"training", {{"learning_rate", learning_rate}, {"epochs", epochs}, {"batch_size", batch_size}}},
      {"attack",
       {{"kind", name_of(kAttacks, attack.kind)}, {"sigma", attack.sigma}, {"beta", attack.beta}, {"malicious", malicious}}},
      {"gamma", gamma},
      {"contribution", {{"rloo_repetitions", rloo_repetitions}, {"shapley_oracle", shapley_oracle}}},
      {"proof", {{"repetitions", proof_repetitions}}},
      {"rewards",
       {{"participation_fee", rewards.participation_fee},
        {"acc_base", rewards.acc_base},
        {"acc_target", rewards.acc_target},
        {"pool", rewards.pool},
        {"aggregator_fee", rewards.aggregator_fee},
        {"deposit", deposit}}},
      {"dropout", {{"rate", dropout_rate}, {"events", dropout_events}}},
      {"quorum", quorum},
      {"early_stop_patience", early_stop_patience},
  };
}

ScenarioConfig ScenarioConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  ScenarioConfig c;
  try {
    check_keys(j,
               {"trainers", "rounds", "seed", "model", "data", "partition", "training", "attack", "gamma", "contribution",
                "proof", "rewards", "dropout", "quorum", "early_stop_patience"},
               "config");
    read(j, "trainers", c.trainers);
    read(j, "rounds", c.rounds);
    read(j, "seed", c.seed);
    read(j, "gamma", c.gamma);
    read(j, "quorum", c.quorum);
    read(j, "early_stop_patience", c.early_stop_patience);
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, {"kind", "hidden"}, "model");
      const std::string kind = m.value("kind", "logistic");
      if (kind == "mlp") {
        c.model = ml::ModelKind::kMlp;
      } else if (kind != "logistic") {
        config_error("model kind must be 'logistic' or 'mlp'");
      }
      read(m, "hidden", c.hidden);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      check_keys(d, {"source", "dim", "classes", "separation", "samples_per_trainer", "owner_samples", "manifest"}, "data");
      read(d, "source", c.data.source);
      read(d, "dim", c.data.dim);
      read(d, "classes", c.data.classes);
      read(d, "separation", c.data.separation);
      read(d, "samples_per_trainer", c.data.samples_per_trainer);
      read(d, "owner_samples", c.data.owner_samples);
      if (d.contains("manifest")) {
        std::filesystem::path p = d["manifest"].get<std::string>();
        c.data.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
    }
    if (j.contains("partition")) {
      const auto& p = j["partition"];
      check_keys(p, {"scheme", "rare_labels", "holder"}, "partition");
      if (p.contains("scheme")) c.partition = parse_name(kSchemes, p["scheme"].get<std::string>(), "partition scheme");
      read(p, "rare_labels", c.rare_labels);
      read(p, "holder", c.rare_holder);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      check_keys(t, {"learning_rate", "epochs", "batch_size"}, "training");
      read(t, "learning_rate", c.learning_rate);
      read(t, "epochs", c.epochs);
      read(t, "batch_size", c.batch_size);
    }
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      check_keys(a, {"kind", "sigma", "beta", "malicious"}, "attack");
      if (a.contains("kind")) c.attack.kind = parse_name(kAttacks, a["kind"].get<std::string>(), "attack kind");
      read(a, "sigma", c.attack.sigma);
      read(a, "beta", c.attack.beta);
      read(a, "malicious", c.malicious);
    }
    if (j.contains("contribution")) {
      const auto& k = j["contribution"];
      check_keys(k, {"rloo_repetitions", "shapley_oracle"}, "contribution");
      read(k, "rloo_repetitions", c.rloo_repetitions);
      read(k, "shapley_oracle", c.shapley_oracle);
    }
    if (j.contains("proof")) {
      check_keys(j["proof"], {"repetitions"}, "proof");
      read(j["proof"], "repetitions", c.proof_repetitions);
    }
    if (j.contains("rewards")) {
      const auto& r = j["rewards"];
      check_keys(r, {"participation_fee", "acc_base", "acc_target", "pool", "aggregator_fee", "deposit"}, "rewards");
      read(r, "participation_fee", c.rewards.participation_fee);
      read(r, "acc_base", c.rewards.acc_base);
      read(r, "acc_target", c.rewards.acc_target);
      read(r, "pool", c.rewards.pool);
      read(r, "aggregator_fee", c.rewards.aggregator_fee);
      read(r, "deposit", c.deposit);
    }
    if (j.contains("dropout")) {
      const auto& d = j["dropout"];
      check_keys(d, {"rate", "events"}, "dropout");
      read(d, "rate", c.dropout_rate);
      if (d.contains("events")) {
        for (const auto& e : d["events"]) c.dropouts.emplace_back(e.at(0).get<uint64_t>(), e.at(1).get<TrainerId>());
      }
    }
  } catch (const json::exception& e) {
    config_error(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j, path.parent_path());
}

// ---- tampering ----

std::string_view to_string(TamperKind k) {
  switch (k) {
    case TamperKind::kNone: return "none";
    case TamperKind::kAggregateCid: return "aggregate_cid";
    case TamperKind::kAggregateValue: return "aggregate_value";
    case TamperKind::kAggregateRemainder: return "aggregate_remainder";
    case TamperKind::kOutlierPartition: return "outlier_partition";
    case TamperKind::kOutlierScore: return "outlier_score";
    case TamperKind::kOutlierFlag: return "outlier_flag";
    case TamperKind::kValidationAccuracy: return "validation_accuracy";
    case TamperKind::kFinalAccuracy: return "final_accuracy";
    case TamperKind::kContributionValue: return "contribution_value";
    case TamperKind::kRlooCount: return "rloo_count";
  }
  return "none";
}

TamperKind tamper_from_string(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(TamperKind::kRlooCount); ++k) {
    if (to_string(static_cast<TamperKind>(k)) == s) return static_cast<TamperKind>(k);
  }
  config_error("unknown tamper kind " + std::string(s));
}

void recommit(verify::Transcript& t) {
  for (auto& c : t.commitments) {
    if (auto it = t.responses.find(c.label); it != t.responses.end()) c.digest = sha256(it->second);
  }
  for (auto& [label, v] : t.challenges) v = verify::derive_challenge(t.commitments, v.size());
}

namespace {

void patch_i64(Bytes& b, size_t offset, int64_t delta) {
  int64_t v;
  std::memcpy(&v, b.data() + offset, 8);
  v += delta;
  std::memcpy(b.data() + offset, &v, 8);
}

void patch_f64(Bytes& b, size_t offset, double delta) {
  double v;
  std::memcpy(&v, b.data() + offset, 8);
  v += delta;
  std::memcpy(b.data() + offset, &v, 8);
}

Bytes partition_bytes(const std::set<TrainerId>& kept, const std::set<TrainerId>& removed) {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(kept.size()));
  for (TrainerId id : kept) w.u32(id);
  w.u32(static_cast<uint32_t>(removed.size()));
  for (TrainerId id : removed) w.u32(id);
  return std::move(w).take();
}

/// Applies an outlier-report tamper; returns the kept set the aggregator will claim.
std::set<TrainerId> tamper_outlier(verify::OutlierProof& op, const TamperSpec& spec) {
  auto& t = op.transcript;
  std::set<TrainerId> kept = op.report.kept;
  std::set<TrainerId> removed = op.report.removed;
  std::vector<TrainerId> ids(kept.begin(), kept.end());
  ids.insert(ids.end(), removed.begin(), removed.end());
  std::sort(ids.begin(), ids.end());
  const size_t n = ids.size();
  switch (spec.kind) {
    case TamperKind::kOutlierPartition: {
      TrainerId id = ids[spec.variant % n];
      if (kept.count(id) && kept.size() == 1) id = ids[(spec.variant + 1) % n];
      if (kept.erase(id)) {
        removed.insert(id);
      } else {
        removed.erase(id);
        kept.insert(id);
      }
      t.responses["partition"] = partition_bytes(kept, removed);
      break;
    }
    case TamperKind::kOutlierScore: {
      const size_t j = spec.variant % n;
      const int64_t delta = (spec.variant / n) % 2 == 0 ? 1 : -1;
      if (auto it = t.responses.find("scores"); it != t.responses.end()) {
        patch_i64(it->second, 4 + j * 20 + 12, delta);
      } else {
        auto& cos = t.responses.at("cosine");
        const size_t m = (cos.size() - 4) / 12;
        patch_f64(cos, 4 + (j % m) * 12 + 4, delta * 1e-3);
      }
      break;
    }
    case TamperKind::kOutlierFlag: t.metadata["flagged"] ^= 1; break;
    default: break;
  }
  recommit(t);
  return kept;
}

}  // namespace

std::pair<ScenarioConfig, RunOptions> recorded_run(std::span<const json> events) {
  for (const auto& e : events) {
    if (e.value("op", "") != "run_start") continue;
    std::pair<ScenarioConfig, RunOptions> out{ScenarioConfig::from_json(e.at("config")), {}};
    if (e.contains("tamper")) {
      const auto& t = e["tamper"];
      out.second.tamper = {tamper_from_string(t.at("kind").get<std::string>()), t.at("round").get<uint64_t>(),
                           t.at("variant").get<uint64_t>()};
    }
    return out;
  }
  config_error("event log has no run_start record");
}

// ---- metrics and reports ----

json DetectionMetrics::to_json() const {
  return {{"cross_round_accuracy", cross_round_accuracy},
          {"cross_trainer_recall", cross_trainer_recall},
          {"benign_false_removal", benign_false_removal},
          {"flag_rounds", flag_rounds},
          {"flags_correct", flags_correct},
          {"malicious_submitted", malicious_submitted},
          {"malicious_removed", malicious_removed},
          {"benign_submitted", benign_submitted},
          {"benign_removed", benign_removed}};
}

DetectionMetrics detection_metrics(std::span<const json> events, const std::set<TrainerId>& malicious) {
  DetectionMetrics m;
  for (const auto& e : events) {
    if (e.value("op", "") != "verify_round" || !e.value("ok", false) || !e.contains("detection")) continue;
    const auto report = outlier::DetectionReport::from_json(e["detection"]);
    std::set<TrainerId> submitted = report.kept;
    submitted.insert(report.removed.begin(), report.removed.end());
    bool attack_present = false;
    for (TrainerId id : submitted) {
      const bool mal = malicious.count(id) != 0;
      const bool rem = report.removed.count(id) != 0;
      attack_present |= mal;
      if (mal) {
        ++m.malicious_submitted;
        m.malicious_removed += rem;
      } else {
        ++m.benign_submitted;
        m.benign_removed += rem;
      }
    }
    if (report.round >= 2) {
      ++m.flag_rounds;
      m.flags_correct += report.attack_flagged == attack_present;
    }
  }
  if (m.flag_rounds > 0) m.cross_round_accuracy = static_cast<double>(m.flags_correct) / m.flag_rounds;
  if (m.malicious_submitted > 0) m.cross_trainer_recall = static_cast<double>(m.malicious_removed) / m.malicious_submitted;
  if (m.benign_submitted > 0) m.benign_false_removal = static_cast<double>(m.benign_removed) / m.benign_submitted;
  return m;
}

json report_from_events(std::span<const json> events) {
  json rep = json::object();
  std::map<uint64_t, json> rounds;
  auto round_entry = [&rounds](uint64_t t) -> json& {
    json& r = rounds[t];
    if (r.is_null()) r = {{"round", t}, {"submitted", json::array()}, {"verified", false}};
    return r;
  };
  std::set<TrainerId> malicious;
  for (const auto& e : events) {
    const std::string op = e.value("op", "");
    if (op == "run_start") {
      rep["config"] = e["config"];
      malicious = e["config"]["attack"]["malicious"].get<std::set<TrainerId>>();
    } else if (op == "baseline") {
      rep["initial_test_accuracy"] = e["initial_test_accuracy"];
    } else if (op == "deploy") {
      rep["deposit"] = e["deposit"];
      rep["schedule"] = e["schedule"];
    } else if (op == "register" && e.contains("partition_seed")) {
      rep["partition_seed"] = e["partition_seed"];
    } else if (op == "submit_local") {
      round_entry(e["round"].get<uint64_t>())["submitted"].push_back(e["trainer"]);
    } else if (op == "verify_round") {
      json& r = round_entry(e["round"].get<uint64_t>());
      r["verified"] = e.value("ok", false);
      if (e.contains("verdicts")) r["verdicts"] = e["verdicts"];
      if (e.contains("detection")) r["detection"] = e["detection"];
    } else if (op == "finalize" && e.value("ok", false)) {
      rep["final_test_accuracy"] = e["final_accuracy"];
      rep["contribution"] = e["claim"]["contribution"];
      rep["reward_shares"] = json::object();
      const auto cv = contribution::ContributionVector::from_json(e["claim"]["contribution"]);
      for (const auto& [id, s] : contribution::reward_shares(cv)) rep["reward_shares"][std::to_string(id)] = s;
      rep["honest"] = e["honest"];
      for (const auto& [t, a] : e["validation_accuracy"].items()) round_entry(std::stoull(t))["validation_accuracy"] = a;
    } else if (op == "shapley_oracle") {
      rep["shapley_oracle"] = e["contribution"];
    } else if (op == "run_error") {
      rep["error"] = e["message"];
    }
    if (e.contains("abort_reason")) rep["abort_reason"] = e["abort_reason"];
    if (e.contains("payouts")) {
      rep["payouts"] = e["payouts"];
      rep["aggregator_paid"] = e["aggregator_paid"];
      rep["refund"] = e["refund"];
    }
    if (e.contains("phase")) rep["terminal_phase"] = e["phase"];
  }
  rep["rounds"] = json::array();
  for (auto& [t, r] : rounds) rep["rounds"].push_back(std::move(r));
  rep["metrics"] = detection_metrics(events, malicious).to_json();
  const std::string log = ledger::to_jsonl(events);
  rep["event_log_digest"] = to_hex(sha256(std::span(reinterpret_cast<const uint8_t*>(log.data()), log.size())));
  return rep;
}

// ---- the run ----

namespace {

constexpr const char* kAggregator = "aggregator";
constexpr const char* kOwner = "owner";

std::string address_of(TrainerId id) { return "trainer-" + std::to_string(id); }

class Runner {
 public:
  Runner(const ScenarioConfig& cfg, const RunOptions& opt, RunResult& out)
      : cfg_(cfg), opt_(opt), out_(out), contract_(out.store) {}

  void execute() {
    load_data();
    json start = {{"op", "run_start"}, {"config", cfg_.to_json()}};
    if (opt_.tamper.kind != TamperKind::kNone) {
      start["tamper"] = {{"kind", to_string(opt_.tamper.kind)}, {"round", opt_.tamper.round}, {"variant", opt_.tamper.variant}};
    }
    contract_.annotate(std::move(start));
    try {
      setup_contract();
      for (uint64_t t = 1; t <= cfg_.rounds; ++t) {
        if (contract_.state().phase != ledger::Phase{ledger::PhaseKind::kRoundLocalTraining, t}) break;
        if (!play_round(t)) break;
      }
      if (contract_.state().phase.kind == ledger::PhaseKind::kAwaitingFinalize) finish();
    } catch (const Error& e) {
      if (e.code() == Errc::kConfigError) throw;
      contract_.annotate({{"op", "run_error"}, {"message", e.what()}});
    }
    out_.events = contract_.events();
    out_.state = contract_.state();
  }

 private:
  bool tampering(TamperKind k, uint64_t round) const {
    return opt_.tamper.kind == k && opt_.tamper.round == round;
  }

  ledger::Cid put(const Bytes& b) { return out_.store.put(b); }

  ledger::Cid put_transcript(const verify::Transcript& t, const std::vector<Bytes>& blobs) {
    for (const auto& b : blobs) put(b);
    const ledger::Cid cid = put(t.serialize());
    if (std::find(out_.transcripts.begin(), out_.transcripts.end(), cid) == out_.transcripts.end()) {
      out_.transcripts.push_back(cid);
    }
    return cid;
  }

  void load_data() {
    ml::Dataset pool;
    try {
      if (cfg_.data.source == "blobs") {
        ml::BlobSpec bs{cfg_.data.dim, cfg_.data.classes, cfg_.data.separation, derive_seed(cfg_.seed, {1})};
        pool = ml::sample_blobs(bs, cfg_.data.samples_per_trainer * cfg_.trainers, derive_seed(cfg_.seed, {2}));
        owner_ = ml::sample_blobs(bs, cfg_.data.owner_samples, derive_seed(cfg_.seed, {3}));
      } else {
        const auto m = ml::read_manifest(cfg_.data.manifest);
        pool = ml::load_idx_dataset(m.train_images, m.train_labels, m.num_classes);
        owner_ = ml::load_idx_dataset(m.owner_images, m.owner_labels, m.num_classes);
      }
      ml::PartitionSpec ps;
      ps.scheme = cfg_.partition;
      ps.rare_labels = cfg_.rare_labels;
      ps.holder = cfg_.rare_holder - 1;
      shards_ = ml::partition(pool, ps, cfg_.trainers, derive_seed(cfg_.seed, {5}));
    } catch (const Error& e) {
      if (e.code() == Errc::kConfigError) throw;
      config_error(std::string("data: ") + e.what());
    }
    spec_ = ml::ModelSpec{cfg_.model, static_cast<int>(pool.dim()), pool.num_classes(), cfg_.hidden};
  }

  void setup_contract() {
    global_ = ml::init_model(spec_, derive_seed(cfg_.seed, {6}));
    ledger::TaskDescriptor d;
    d.owner_data = put(owner_.serialize());
    d.initial_model = put(global_.serialize());
    base_cid_ = *d.initial_model;
    d.model_description = (cfg_.model == ml::ModelKind::kMlp ? "mlp " : "logistic ") + std::to_string(spec_.dim) + "x" +
                          std::to_string(spec_.classes);
    d.hyperparameters = {{"learning_rate", cfg_.learning_rate},
                         {"epochs", cfg_.epochs},
                         {"batch_size", cfg_.batch_size},
                         {"gamma", cfg_.gamma},
                         {"rloo_repetitions", cfg_.rloo_repetitions},
                         {"proof_repetitions", cfg_.proof_repetitions}};
    d.trainers = cfg_.trainers;
    d.max_rounds = cfg_.rounds;
    d.quorum = cfg_.quorum;
    d.owner_address = kOwner;
    d.aggregator_address = kAggregator;
    try {
      contract_.deploy(d, cfg_.effective_deposit(), cfg_.rewards);
    } catch (const Error& e) {
      config_error(e.what());
    }
    for (TrainerId id = 1; id <= cfg_.trainers; ++id) {
      const auto samples = static_cast<int64_t>(shards_[id - 1].size());
      contract_.register_trainer(id, {"pk-" + std::to_string(id), address_of(id), samples});
      weights_[id] = Fixed::from_int(samples);
    }
    validation_ = ml::Dataset::deserialize(out_.store.get(*contract_.state().validation));
    test_ = ml::Dataset::deserialize(out_.store.get(*contract_.state().test));
    contract_.annotate({{"op", "baseline"}, {"initial_test_accuracy", ml::accuracy(global_, test_)}});
  }

  bool dropped(uint64_t t, TrainerId id) const {
    for (const auto& [rt, rid] : cfg_.dropouts) {
      if (rt == t && rid == id) return true;
    }
    if (cfg_.dropout_rate <= 0.0) return false;
    Rng rng(derive_seed(cfg_.seed, {10, t, id}));
    return rng.uniform01() < cfg_.dropout_rate;
  }

  bool play_round(uint64_t t) {
    ModelMap subs;
    for (TrainerId id = 1; id <= cfg_.trainers; ++id) {
      if (dropped(t, id)) continue;
      ml::TrainerConfig tc{cfg_.learning_rate, cfg_.epochs, cfg_.batch_size, derive_seed(cfg_.seed, {7, t, id})};
      ModelWeights w;
      if (cfg_.malicious.count(id)) {
        Rng rng(derive_seed(cfg_.seed, {8, t, id}));
        w = ml::malicious_update(global_, shards_[id - 1], tc, cfg_.attack, rng);
      } else {
        w = ml::train_local(global_, shards_[id - 1], tc);
      }
      contract_.submit_local(t, id, put(w.serialize()));
      subs.emplace(id, std::move(w));
    }
    if (contract_.state().phase.kind == ledger::PhaseKind::kRoundLocalTraining) {
      contract_.close_submissions(t);
      if (contract_.state().phase.terminal()) return false;
    }

    // Aggregator: detection, aggregation, proofs.
    outlier::RoundSubmissions rs{t, subs, t > 1 ? std::optional<ModelMap>(previous_) : std::nullopt};
    verify::OutlierProof op = verify::prove_outlier(rs, cfg_.gamma, detector_);
    std::set<TrainerId> kept = op.report.kept;
    if (tampering(TamperKind::kOutlierPartition, t) || tampering(TamperKind::kOutlierScore, t) ||
        tampering(TamperKind::kOutlierFlag, t)) {
      kept = tamper_outlier(op, opt_.tamper);
    }
    ModelMap kept_models;
    std::map<TrainerId, Fixed> kept_weights;
    for (TrainerId id : kept) {
      kept_models.emplace(id, subs.at(id));
      kept_weights[id] = weights_.at(id);
    }
    verify::AggregationProof ap = verify::prove_aggregation(kept_models, kept_weights, t, cfg_.proof_repetitions);
    ModelWeights aggregate = ap.aggregate;
    ledger::Cid claimed_aggregate = sha256(aggregate.serialize());
    tamper_aggregation(t, ap, aggregate, claimed_aggregate);

    const ledger::Cid outlier_cid = put_transcript(op.transcript, op.blobs);
    const ledger::Cid agg_cid = put_transcript(ap.transcript, ap.blobs);
    contract_.submit_round(kAggregator, t, kept, claimed_aggregate, {outlier_cid, agg_cid});

    verify::AccuracyProof vp = verify::prove_accuracy(aggregate, validation_, t, cfg_.proof_repetitions);
    if (tampering(TamperKind::kValidationAccuracy, t)) {
      if (opt_.tamper.variant % 2 == 0) {
        vp.transcript.metadata["correct"] += 1 + static_cast<int64_t>(opt_.tamper.variant / 2 % 3);
      } else {
        Bytes& logits = vp.transcript.responses.at("logits");
        logits.back() ^= 0x02;
        recommit(vp.transcript);
      }
    }
    validation_transcripts_[t] = put_transcript(vp.transcript, vp.blobs);
    const double val_acc = static_cast<double>(vp.correct) / static_cast<double>(vp.total);
    bool stop_early = false;
    if (cfg_.early_stop_patience > 0) {
      if (val_acc > best_validation_) {
        best_validation_ = val_acc;
        stale_rounds_ = 0;
      } else if (++stale_rounds_ >= cfg_.early_stop_patience) {
        stop_early = true;
      }
    }

    contract_.verify_round(t, stop_early);
    if (contract_.state().phase.terminal()) return false;

    // Contribution trials for this round, evaluated on the test split.
    const ModelWeights base = global_;
    const ledger::Cid base_cid = base_cid_;
    std::vector<TrainerId> honest(kept.begin(), kept.end());
    Rng rng(derive_seed(cfg_.seed, {9, t}));
    auto evaluate = [&](std::span<const TrainerId> members) -> int64_t {
      ModelWeights model;
      ledger::Cid model_cid;
      if (members.empty()) {
        model = base;
        model_cid = base_cid;
      } else {
        ModelMap m;
        for (TrainerId id : members) m.emplace(id, kept_models.at(id));
        std::map<TrainerId, Fixed> w;
        for (TrainerId id : members) w[id] = weights_.at(id);
        const verify::AggregationProof cp = verify::prove_aggregation(m, w, t, cfg_.proof_repetitions);
        coalition_transcripts_.push_back(put_transcript(cp.transcript, cp.blobs));
        model = cp.aggregate;
        model_cid = sha256(model.serialize());
      }
      auto it = coalition_correct_.find(model_cid);
      if (it != coalition_correct_.end()) return it->second;
      const verify::AccuracyProof acc = verify::prove_accuracy(model, test_, t, cfg_.proof_repetitions);
      coalition_transcripts_.push_back(put_transcript(acc.transcript, acc.blobs));
      coalition_correct_[model_cid] = acc.correct;
      return acc.correct;
    };
    const auto rr = contribution::rloo_round(honest, test_.size(), evaluate, rng, cfg_.rloo_repetitions);
    trials_[t] = rr.trials;
    rloo_values_.push_back(rr.values);
    if (cfg_.shapley_oracle && honest.size() <= contribution::kMaxShapleyPlayers) {
      contribution::RoundModels rm{t, kept_models, kept_weights, base};
      shapley_values_.push_back(contribution::shapley_exact(rm, test_).values());
    }

    global_ = aggregate;
    base_cid_ = claimed_aggregate;
    detector_.benign_average = aggregate;
    for (auto& [id, w] : subs) previous_[id] = std::move(w);
    for (TrainerId id : kept) honest_ids_.insert(id);
    last_round_ = t;
    return contract_.state().phase.kind == ledger::PhaseKind::kRoundLocalTraining;
  }

  void tamper_aggregation(uint64_t t, verify::AggregationProof& ap, ModelWeights& aggregate, ledger::Cid& claimed) {
    const uint64_t v = opt_.tamper.variant;
    const auto d = static_cast<uint64_t>(aggregate.size());
    if (tampering(TamperKind::kAggregateCid, t)) {
      ModelWeights other = aggregate;
      other[static_cast<Eigen::Index>(v % d)] = other[static_cast<Eigen::Index>(v % d)] + Fixed::from_raw(1);
      claimed = put(other.serialize());
    } else if (tampering(TamperKind::kAggregateValue, t)) {
      const int64_t delta = static_cast<int64_t>(1 + v / d % 3) * ((v / d / 3) % 2 == 0 ? 1 : -1);
      aggregate[static_cast<Eigen::Index>(v % d)] = aggregate[static_cast<Eigen::Index>(v % d)] + Fixed::from_raw(delta);
      const Bytes bytes = aggregate.serialize();
      claimed = put(bytes);
      for (auto& c : ap.transcript.commitments) {
        if (c.label == "aggregate") c.digest = claimed;
      }
      ap.blobs.push_back(bytes);
      recommit(ap.transcript);
    } else if (tampering(TamperKind::kAggregateRemainder, t)) {
      Bytes& rem = ap.transcript.responses.at("remainder");
      ByteReader r(rem);
      auto values = r.svarint_vec();
      int64_t total = 0;
      for (const auto& [id, w] : verify::aggregation_weights(ap.transcript)) total += w.raw();
      values[v % d] += (v / d) % 2 == 0 ? 1 : total;
      ByteWriter w;
      w.svarint_vec(values);
      rem = std::move(w).take();
      recommit(ap.transcript);
    }
  }

  void finish() {
    const std::vector<TrainerId> ids(honest_ids_.begin(), honest_ids_.end());
    ledger::FinalizeClaim claim;
    claim.contribution = contribution::normalize_and_total(rloo_values_, ids);
    claim.repetitions = cfg_.rloo_repetitions;
    claim.trials = trials_;
    claim.coalition_transcripts = coalition_transcripts_;
    claim.validation_transcripts = validation_transcripts_;
    verify::AccuracyProof fp = verify::prove_accuracy(global_, test_, last_round_, cfg_.proof_repetitions);
    claim.final_accuracy = static_cast<double>(fp.correct) / static_cast<double>(fp.total);
    const uint64_t v = opt_.tamper.variant;
    if (opt_.tamper.kind == TamperKind::kFinalAccuracy) {
      if (v % 2 == 0) {
        claim.final_accuracy += static_cast<double>(1 + v / 2 % 5) / static_cast<double>(fp.total);
      } else {
        fp.transcript.metadata["correct"] += 1;
        claim.final_accuracy = static_cast<double>(fp.correct + 1) / static_cast<double>(fp.total);
      }
    }
    claim.final_accuracy_transcript = put_transcript(fp.transcript, fp.blobs);
    if (opt_.tamper.kind == TamperKind::kContributionValue && !ids.empty()) {
      const TrainerId id = ids[v % ids.size()];
      const double delta = 0.01 * static_cast<double>(1 + v / ids.size() % 7);
      claim.contribution.totals[id] += delta;
      claim.contribution.clipped[id] = std::max(0.0, claim.contribution.totals[id]);
    }
    if (opt_.tamper.kind == TamperKind::kRlooCount) {
      auto it = claim.trials.find(opt_.tamper.round);
      if (it == claim.trials.end()) it = claim.trials.begin();
      auto& trial = it->second[v % it->second.size()];
      if ((v / it->second.size()) % 2 == 0) {
        trial.correct_with += 1;
      } else {
        trial.correct_without -= 1;
      }
    }
    contract_.finalize(kAggregator, claim);
    if (cfg_.shapley_oracle && !shapley_values_.empty()) {
      contract_.annotate({{"op", "shapley_oracle"},
                          {"contribution", contribution::normalize_and_total(shapley_values_, ids).to_json()}});
    }
  }

  const ScenarioConfig& cfg_;
  const RunOptions& opt_;
  RunResult& out_;
  ledger::Contract contract_;

  ml::Dataset owner_, validation_, test_;
  std::vector<ml::Dataset> shards_;
  ml::ModelSpec spec_;
  std::map<TrainerId, Fixed> weights_;

  ModelWeights global_;
  ledger::Cid base_cid_{};
  ModelMap previous_;
  outlier::DetectorState detector_;
  uint64_t last_round_ = 0;
  double best_validation_ = -1.0;
  int stale_rounds_ = 0;

  std::set<TrainerId> honest_ids_;
  std::map<uint64_t, std::vector<contribution::RlooTrial>> trials_;
  std::vector<std::map<TrainerId, double>> rloo_values_;
  std::vector<std::map<TrainerId, double>> shapley_values_;
  std::vector<ledger::Cid> coalition_transcripts_;
  std::map<ledger::Cid, int64_t> coalition_correct_;
  std::map<uint64_t, ledger::Cid> validation_transcripts_;
};

}  // namespace

RunResult run(const ScenarioConfig& config, const RunOptions& options) {
  config.validate();
  RunResult out;
  Runner(config, options, out).execute();
  out.report = report_from_events(out.events);
  return out;
}

void write_run(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    out << r.report.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "events.jsonl", std::ios::binary);
    out << ledger::to_jsonl(r.events);
  }
  r.store.save(dir / "store");
}

std::string report_text(const json& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "terminal phase: " << rep.value("terminal_phase", "?") << '\n';
  if (rep.contains("abort_reason")) os << "abort reason:   " << rep["abort_reason"].get<std::string>() << '\n';
  if (rep.contains("error")) os << "error:          " << rep["error"].get<std::string>() << '\n';
  for (const auto& r : rep["rounds"]) {
    os << "round " << std::setw(2) << r["round"].get<uint64_t>() << "  submitted " << r["submitted"].size();
    if (r.contains("detection")) {
      const auto& d = r["detection"];
      os << "  flagged " << (d.value("attack_flagged", false) ? "yes" : "no ") << "  removed " << d["removed"].dump();
    }
    os << "  verified " << (r.value("verified", false) ? "yes" : "no");
    if (r.contains("validation_accuracy")) os << "  val acc " << r["validation_accuracy"].get<double>();
    os << '\n';
  }
  if (rep.contains("initial_test_accuracy")) os << "initial test accuracy: " << rep["initial_test_accuracy"].get<double>() << '\n';
  if (rep.contains("final_test_accuracy")) os << "final test accuracy:   " << rep["final_test_accuracy"].get<double>() << '\n';
  const auto& m = rep["metrics"];
  os << "cross-round accuracy " << m["cross_round_accuracy"].get<double>() << ", cross-trainer recall "
     << m["cross_trainer_recall"].get<double>() << ", benign false removal " << m["benign_false_removal"].get<double>()
     << '\n';
  if (rep.contains("reward_shares")) {
    os << "shares:";
    for (const auto& [id, s] : rep["reward_shares"].items()) os << ' ' << id << '=' << s.get<double>();
    os << '\n';
  }
  if (rep.contains("payouts")) {
    os << "payouts:";
    for (const auto& [a, p] : rep["payouts"].items()) os << ' ' << a << '=' << p.get<int64_t>();
    os << "  aggregator=" << rep["aggregator_paid"].get<int64_t>() << "  refund=" << rep["refund"].get<int64_t>() << '\n';
  }
  os << "event log digest: " << rep.value("event_log_digest", "") << '\n';
  return os.str();
}

namespace {

void diff_into(const json& a, const json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.type() != b.type() && !(a.is_number() && b.is_number())) {
    out.push_back(path + ": " + a.dump() + " != " + b.dump());
    return;
  }
  if (a.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      const std::string p = path + "/" + k;
      if (!a.contains(k)) {
        out.push_back(p + ": missing on the left");
      } else if (!b.contains(k)) {
        out.push_back(p + ": missing on the right");
      } else {
        diff_into(a[k], b[k], p, out);
      }
    }
  } else if (a.is_array()) {
    if (a.size() != b.size()) out.push_back(path + ": length " + std::to_string(a.size()) + " != " + std::to_string(b.size()));
    for (size_t i = 0; i < std::min(a.size(), b.size()); ++i) diff_into(a[i], b[i], path + "/" + std::to_string(i), out);
  } else if (a != b) {
    out.push_back(path + ": " + a.dump() + " != " + b.dump());
  }
}

}  // namespace

std::vector<std::string> diff_reports(const json& a, const json& b) {
  std::vector<std::string> out;
  diff_into(a, b, "", out);
  return out;
}

std::vector<SweepRow> sweep(const ScenarioConfig& config, uint64_t first_seed, uint64_t last_seed) {
  if (last_seed < first_seed) config_error("seed range is empty");
  std::vector<SweepRow> rows;
  for (uint64_t s = first_seed; s <= last_seed; ++s) {
    ScenarioConfig c = config;
    c.seed = s;
    const RunResult r = run(c);
    SweepRow row;
    row.seed = s;
    row.terminal_phase = r.report.value("terminal_phase", "?");
    row.metrics = detection_metrics(r.events, c.malicious);
    row.final_accuracy = r.report.value("final_test_accuracy", 0.0);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "seed  phase             cross_round  recall  false_removal  test_acc\n";
  double sum[4] = {0, 0, 0, 0};
  double lo[4] = {1e9, 1e9, 1e9, 1e9};
  for (const auto& r : rows) {
    const double v[4] = {r.metrics.cross_round_accuracy, r.metrics.cross_trainer_recall, r.metrics.benign_false_removal,
                         r.final_accuracy};
    os << std::left << std::setw(6) << r.seed << std::setw(18) << r.terminal_phase << std::right << std::setw(11) << v[0]
       << std::setw(8) << v[1] << std::setw(15) << v[2] << std::setw(10) << v[3] << '\n';
    for (int i = 0; i < 4; ++i) {
      sum[i] += v[i];
      lo[i] = std::min(lo[i], v[i]);
    }
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    os << std::left << std::setw(24) << "mean" << std::right << std::setw(11) << sum[0] / n << std::setw(8) << sum[1] / n
       << std::setw(15) << sum[2] / n << std::setw(10) << sum[3] / n << '\n';
    os << std::left << std::setw(24) << "min" << std::right << std::setw(11) << lo[0] << std::setw(8) << lo[1]
       << std::setw(15) << lo[2] << std::setw(10) << lo[3] << '\n';
  }
  return os.str();
}

}  // namespace poc::orchestrator
