#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/gateway.hpp"

namespace cem {

// Instruction/output templates. Defaults match the standardized formats;
// a JSON file with the same keys overrides any of them.
struct Templates {
  std::string normative_task =
      "Please select the correct answer for the following single choice "
      "questions:";
  std::string extractive_task =
      "Please select the correct answer for the following single choice "
      "questions based on the supplementary materials provided:";
  std::string entailment_task =
      "Can the correct answer to the given multiple-choice question be "
      "derived solely from the knowledge in the following material? Please "
      "respond with 'Yes' or 'No'.";

  static Templates load(const std::filesystem::path& file);
};

std::string normative_instruction(const QAItem& item,
                                  const Templates& tpl = {});
// "The answer is C. Mediterranean Sea. <stem restated with the answer>"
std::string normative_output(const QAItem& item);
std::string extractive_instruction(const QAItem& item,
                                   const std::string& material,
                                   const Templates& tpl = {});
std::string entailment_prompt_for(const QAItem& item,
                                  const std::string& material,
                                  const Templates& tpl = {});

std::vector<InstructionRecord> make_normative(const std::vector<QAItem>& items,
                                              const Templates& tpl = {});

inline constexpr std::size_t kMaterialTokenBudget = 1800;

// One record per item that has a judge-affirmed material; among passing
// materials the highest relevance wins, ties by lowest doc_id. Materials
// are truncated to the token budget before judging.
std::vector<InstructionRecord> make_extractive(
    const std::vector<QAItem>& items,
    const std::map<std::string, std::vector<CorpusDocument>>& materials,
    Gateway& gw, const EndpointConfig& judge, const Templates& tpl = {},
    std::size_t token_budget = kMaterialTokenBudget);

struct ReviewResult {
  std::vector<InstructionRecord> records;
  std::size_t fallback_count = 0;  // extractive slots with no material
};

// Seeded shuffle, then the first floor(alpha * |r|) entries in the
// normative format and the rest in the extractive format. Extractive slots
// without material fall back to normative and are tallied.
ReviewResult make_review(
    const std::vector<std::pair<QAItem, std::vector<CorpusDocument>>>& pool,
    double alpha, std::uint64_t seed, const Templates& tpl = {},
    std::size_t token_budget = kMaterialTokenBudget);

// Seeded uniform sample without replacement; records come back kind=General.
std::vector<InstructionRecord> sample_general(
    const std::vector<InstructionRecord>& pool, std::size_t n,
    std::uint64_t seed);

struct AssembleSizes {
  std::size_t cpt = 25000;
  std::map<RecordKind, std::size_t> cit = {{RecordKind::Normative, 2000},
                                           {RecordKind::Extractive, 2000},
                                           {RecordKind::Review, 2000},
                                           {RecordKind::General, 2000}};
};

// Downsamples the corpus to sizes.cpt with the seed, truncates each CIT
// component to its per-kind size, and rejects components whose kinds the
// strategy does not admit. Leak-filtered documents never enter.
TrainingSet assemble(
    Strategy strategy, std::vector<CorpusDocument> corpus,
    const std::map<RecordKind, std::vector<InstructionRecord>>& components,
    const AssembleSizes& sizes, std::uint64_t seed);

struct TrainsetFiles {
  std::filesystem::path cpt;       // raw-text records
  std::filesystem::path cit;       // instruction/output records
  std::filesystem::path combined;  // seed-shuffled interleaving of both
  std::filesystem::path manifest;
};

// Deterministic given the training set's seed: same inputs, same seed,
// byte-identical files.
TrainsetFiles serialize_trainset(const TrainingSet& ts,
                                 const std::filesystem::path& dir);

json trainset_manifest(const TrainingSet& ts);

}  // namespace cem
