#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/corpus.hpp"
#include "cem/eval.hpp"
#include "cem/gateway.hpp"
#include "cem/sim.hpp"
#include "cem/trainset.hpp"

namespace cem {

struct ReplayConfig {
  enum class Mode { None, Random };
  Mode mode = Mode::None;
  std::size_t n = 0;
};

struct SimConfig {
  std::size_t capacity = 0;
  std::uint64_t noise_seed = 1;
  std::vector<std::string> initial_facts;
};

// Whole-run configuration; single structured config file with
// environment-variable overrides for endpoint credentials.
struct RunConfig {
  std::string cem_task;
  std::map<std::string, std::filesystem::path> tasks;  // name -> dataset
  EndpointConfig learner, embedder, judge;
  Strategy strategy = Strategy::Plain;
  double alpha = 1.0;
  AssembleSizes sizes;
  int rounds = 1;
  ReplayConfig replay;
  std::uint64_t seed = 0;
  std::filesystem::path workspace;
  bool use_web = true;
  bool use_encyclopedia = true;
  std::filesystem::path web_fixture;   // offline search fixture
  std::string search_api;              // live search endpoint (exclusive)
  std::filesystem::path wiki_dump;     // (title, body) records
  std::filesystem::path general_pool;  // instruction records for I_G
  std::string train_hook;  // command template; empty -> dry run
  int kp_x = 5;
  int search_k = 4;
  double hi = 0.80;
  double lo = 0.70;
  bool run_effectiveness = false;
  bool require_effective = false;
  int max_rounds_cap = 10;  // iteration must not be endless
  SimConfig sim;
  std::string test_fail_after;  // fault injection for resumability tests

  static RunConfig load(const std::filesystem::path& file);
  std::vector<std::string> validate() const;
};

void from_json(const json& j, RunConfig& cfg);

struct RoundResult {
  int round = 0;
  std::map<std::string, double> accuracies;  // per task
  double w2r = 0.0, r2w = 0.0;               // CEM task vs previous round
  std::optional<double> er;                  // vs round 0
  std::optional<double> afr;                 // vs round 0, non-CEM tasks
  json trainset_manifest;
  bool dry_run = false;
  double wall_seconds = 0.0;
};

void to_json(json& j, const RoundResult& v);
void from_json(const json& j, RoundResult& v);

// Field-wise equality ignoring wall-clock.
bool same_result(const RoundResult& a, const RoundResult& b);

// Thrown by the fault-injection hook after the named stage completes.
struct StageAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Drives multi-round CEM: evaluate, collect mistakes, extract knowledge
// points, acquire corpus, build the training set, invoke the train hook,
// re-evaluate. Every stage checkpoints its outputs under
// workspace/rounds/<n>/; a rerun resumes from the first missing output.
class Orchestrator {
 public:
  explicit Orchestrator(RunConfig cfg);
  ~Orchestrator();

  // Runs rounds 1..cfg.rounds (establishing the round-0 baseline first)
  // and returns one result per round.
  std::vector<RoundResult> iterate();

  // Runs a single round against the persisted state.
  RoundResult run_round(int round);

  // Human-readable summary plus machine-readable per-round series.
  static std::string report_text(const std::vector<RoundResult>& results,
                                 const std::string& cem_task);
  static json report_series(const std::vector<RoundResult>& results);

  Gateway& gateway();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cem
