#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "poc/error.hpp"
#include "poc/orchestrator.hpp"
#include "poc/verify.hpp"

namespace fs = std::filesystem;
namespace orch = poc::orchestrator;
using nlohmann::json;

namespace {

enum Exit : int {
  kOk = 0,
  kIo = 1,
  kConfig = 2,
  kVerification = 3,
  kAborted = 4,
  kReplayMismatch = 5,
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<uint64_t, uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw poc::Error(poc::Errc::kConfigError, "seed range must look like a..b");
  auto number = [](std::string_view v) {
    uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
      throw poc::Error(poc::Errc::kConfigError, "bad seed '" + std::string(v) + "'");
    }
    return out;
  };
  return {number(std::string_view(s).substr(0, dots)), number(std::string_view(s).substr(dots + 2))};
}

int cmd_run(const std::string& config, std::optional<uint64_t> seed, const std::string& out, const std::string& tamper,
            uint64_t tamper_round, uint64_t tamper_variant, bool as_json) {
  auto cfg = orch::ScenarioConfig::load(config);
  if (seed) cfg.seed = *seed;
  orch::RunOptions opt;
  opt.tamper = {orch::tamper_from_string(tamper), tamper_round, tamper_variant};
  const auto r = orch::run(cfg, opt);
  if (!out.empty()) orch::write_run(r, out);
  std::cout << (as_json ? r.report.dump(2) + "\n" : orch::report_text(r.report));
  return r.state.phase.kind == poc::ledger::PhaseKind::kRewardSpread ? kOk : kAborted;
}

int cmd_verify(const std::vector<std::string>& files, const std::string& store_dir) {
  std::optional<poc::ledger::ContentStore> shared;
  if (!store_dir.empty()) shared = poc::ledger::ContentStore::load(store_dir);
  int status = kOk;
  for (const auto& f : files) {
    const std::string bytes = read_file(f);
    // Without --store, the transcript's own directory serves as the store.
    std::optional<poc::ledger::ContentStore> local;
    if (!shared) local = poc::ledger::ContentStore::load(fs::absolute(f).parent_path());
    const auto& store = shared ? *shared : *local;
    poc::verify::Verdict v;
    std::string kind = "?";
    try {
      const auto t = poc::verify::Transcript::deserialize(
          std::span(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()));
      kind = std::string(poc::verify::to_string(t.kind));
      v = poc::verify::verify(t, store.resolver());
    } catch (const poc::Error& e) {
      v = poc::verify::Verdict::fail("decode", e.what());
    }
    if (v.ok) {
      std::cout << f << ": ok (" << kind << ")\n";
    } else {
      std::cout << f << ": FAIL (" << kind << ") at " << v.stage << ": " << v.message << '\n';
      status = kVerification;
    }
  }
  return status;
}

int cmd_replay(const std::string& log_path, const std::string& report_path, bool rerun) {
  const auto events = poc::ledger::parse_jsonl(read_file(log_path));
  const json recomputed = orch::report_from_events(events);
  int status = kOk;
  auto show = [&status](const std::string& what, const std::vector<std::string>& diff) {
    if (diff.empty()) {
      std::cout << what << ": identical\n";
      return;
    }
    std::cout << what << ": " << diff.size() << " difference(s)\n";
    for (const auto& d : diff) std::cout << "  " << d << '\n';
    status = kReplayMismatch;
  };
  fs::path report = report_path;
  if (report.empty()) report = fs::path(log_path).parent_path() / "report.json";
  if (fs::exists(report)) {
    show("report vs " + report.string(), orch::diff_reports(json::parse(read_file(report)), recomputed));
  } else if (!report_path.empty()) {
    throw IoError("cannot read " + report.string());
  }
  if (rerun) {
    const auto [cfg, opt] = orch::recorded_run(events);
    const auto r = orch::run(cfg, opt);
    const json a = json(events), b = json(r.events);
    show("event log vs fresh run", orch::diff_reports(a, b));
  }
  if (status == kOk) std::cout << orch::report_text(recomputed);
  return status;
}

int cmd_sweep(const std::string& config, const std::string& seeds) {
  const auto cfg = orch::ScenarioConfig::load(config);
  const auto [a, b] = parse_seed_range(seeds);
  const auto rows = orch::sweep(cfg, a, b);
  std::cout << orch::sweep_table(rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proof-of-contribution federated learning simulator"};
  app.require_subcommand(1);

  std::string config, out, tamper = "none", store, report, seeds;
  std::vector<std::string> files;
  std::optional<uint64_t> seed;
  uint64_t tamper_round = 1, tamper_variant = 0;
  bool as_json = false, rerun = false;

  auto* run = app.add_subcommand("run", "Run a scenario and write its report and event log");
  run->add_option("--config", config, "Scenario config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Output directory for report.json, events.jsonl and store/");
  run->add_option("--tamper", tamper, "Misbehaving-aggregator hook (test use)");
  run->add_option("--tamper-round", tamper_round);
  run->add_option("--tamper-variant", tamper_variant);
  run->add_flag("--json", as_json, "Print the JSON report");

  auto* ver = app.add_subcommand("verify-transcript", "Re-verify stored transcripts");
  ver->add_option("files", files, "Transcript files")->required();
  ver->add_option("--store", store, "Blob store directory (default: each file's directory)");

  auto* rep = app.add_subcommand("replay", "Recompute the report from an event log and diff");
  rep->add_option("eventlog", out, "events.jsonl")->required();
  rep->add_option("--report", report, "Report to compare (default: report.json beside the log)");
  rep->add_flag("--rerun", rerun, "Also re-execute the recorded run and diff the event logs");

  auto* swp = app.add_subcommand("sweep", "Detection metrics over a seed range");
  swp->add_option("--config", config, "Scenario config (JSON)")->required();
  swp->add_option("--seeds", seeds, "Inclusive range a..b")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kIo;
  }

  try {
    if (*run) return cmd_run(config, seed, out, tamper, tamper_round, tamper_variant, as_json);
    if (*ver) return cmd_verify(files, store);
    if (*rep) return cmd_replay(out, report, rerun);
    if (*swp) return cmd_sweep(config, seeds);
  } catch (const poc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == poc::Errc::kConfigError ? kConfig : kIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kIo;
}
