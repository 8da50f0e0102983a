#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/gateway.hpp"

namespace cem {

struct RoundDiff {
  double w2r = 0.0;
  double r2w = 0.0;
  // question id -> one of "w2r", "r2w", "stay_right", "stay_wrong"
  std::map<std::string, std::string> transitions;
};

struct TaskAccuracy {
  double initial = 0.0;  // A_i^0
  double current = 0.0;  // A_i^*
};

struct MultiTaskLedger {
  std::map<std::string, TaskAccuracy> tasks;
  std::string cem_task;  // task k, excluded from AFR
};

// Default evaluation prompt: the standardized multiple-choice instruction.
std::string default_eval_prompt(const QAItem& item);

// Pattern-matching answer extraction. Tiers, in order: an "answer is X"
// statement, a standalone label token, a unique full option-text match.
// Ties within a tier or no match at all return nullopt.
std::optional<char> extract_answer(
    const std::string& raw,
    const std::vector<std::pair<char, std::string>>& options);

// Runs the dataset through the learner. Per-item transport failures are
// recorded as unparseable responses; the run always completes. Responses
// are ordered as the dataset is.
EvaluationReport run_eval(const std::vector<QAItem>& dataset, Gateway& gw,
                          const EndpointConfig& learner, int round,
                          const std::string& task_line = "");

std::vector<std::string> mistake_ids(const EvaluationReport& report);
std::vector<std::string> correct_ids(const EvaluationReport& report);

// Transition rates over the question ids present in both reports;
// unparseable counts as wrong.
RoundDiff diff_rounds(const EvaluationReport& prev,
                      const EvaluationReport& curr);

// (astar - a0) / a0; a0 must be positive.
double enhancement_rate(double a0, double astar);

// Mean over non-CEM tasks of (A_i^0 - A_i^*) / A_i^0; negative values mean
// improvement on other tasks.
double average_forgetting_rate(const MultiTaskLedger& ledger);

}  // namespace cem
