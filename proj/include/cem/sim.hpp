#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/gateway.hpp"

namespace cem::sim {

// Fact keys ride inside fixture text as tagged spans: ((fact:KEY)).
std::vector<std::string> extract_fact_keys(const std::string& text);

// Capacity-bounded fact set with least-recently-refreshed eviction; the
// coarse forgetting model behind the simulated learner.
class KnowledgeStore {
 public:
  KnowledgeStore() = default;
  KnowledgeStore(std::size_t capacity, std::uint64_t noise_seed)
      : capacity_(capacity), noise_seed_(noise_seed) {}

  // Inserts (or moves to most-recent); evicts least-recent beyond capacity.
  void insert(const std::string& key);
  // Moves to most-recent only if already known.
  void refresh(const std::string& key);
  bool knows(const std::string& key) const { return known_.count(key) > 0; }
  std::size_t size() const { return order_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t noise_seed() const { return noise_seed_; }

  json to_json() const;
  static KnowledgeStore from_json(const json& j);
  void save(const std::filesystem::path& file) const;
  static KnowledgeStore load(const std::filesystem::path& file);

 private:
  std::size_t capacity_ = 0;
  std::uint64_t noise_seed_ = 0;
  std::vector<std::string> order_;  // least-recent first
  std::set<std::string> known_;
};

struct SimItem {
  QAItem qa;
  std::string fact_key;
  std::vector<std::string> phrases;  // knowledge points the judge "finds"
};

void to_json(json& j, const SimItem& v);
void from_json(const json& j, SimItem& v);

// Deterministic in-process stand-in for the learner, judge and embedder
// endpoints plus the train step. Single-threaded callers only (the gateway
// in-flight cap of 1 is configured by register_on).
class SimWorld {
 public:
  SimWorld(std::vector<SimItem> items, KnowledgeStore store);

  // Correct, standardized answer iff the item's fact is known; otherwise a
  // deterministic wrong option.
  std::string answer(const QAItem& item) const;

  // Dispatches a chat prompt: knowledge-point extraction, entailment
  // judging, or question answering, recognized by the prompt's task line.
  std::string chat(const std::string& prompt);

  // Deterministic hash-based unit vectors; equal texts embed identically.
  static std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts, int dim = 32);

  // Applies a serialized combined training stream: CPT docs and
  // extractive/review records insert their fact keys; general records
  // refresh only.
  void train_on_combined(const std::filesystem::path& combined_jsonl);
  void train(const TrainingSet& ts);

  const KnowledgeStore& store() const { return store_; }
  KnowledgeStore& store() { return store_; }

  // Registers this world's handlers under the given sim names.
  void register_on(Gateway& gw, const std::string& learner_name,
                   const std::string& judge_name,
                   const std::string& embedder_name);

 private:
  const SimItem* find_by_prompt(const std::string& prompt) const;
  void apply_record(RecordKind kind, const std::string& text);

  std::vector<SimItem> items_;
  KnowledgeStore store_;
  mutable std::mutex mu_;
};

}  // namespace cem::sim
