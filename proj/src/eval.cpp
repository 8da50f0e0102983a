#include "cem/eval.hpp"

#include <atomic>
#include <cctype>
#include <set>
#include <thread>

#include "cem/text.hpp"

namespace cem {

std::string default_eval_prompt(const QAItem& item) {
  std::string p =
      "Please select the correct answer for the following single choice "
      "questions:\n### Question:\n";
  p += item.stem;
  p += '\n';
  p += item.options_line();
  return p;
}

namespace {

bool valid_label(char c,
                 const std::vector<std::pair<char, std::string>>& options) {
  for (const auto& [l, t] : options)
    if (l == c) return true;
  return false;
}

// Tier 1: "answer is X" / "answer: X" style statements.
std::set<char> answer_is_matches(
    const std::string& lower, const std::string& raw,
    const std::vector<std::pair<char, std::string>>& options) {
  std::set<char> found;
  std::size_t pos = 0;
  while ((pos = lower.find("answer", pos)) != std::string::npos) {
    std::size_t i = pos + 6;
    // skip "is", ":" and filler between "answer" and the label
    while (i < lower.size() &&
           (std::isspace(static_cast<unsigned char>(lower[i])) ||
            lower[i] == ':' || lower[i] == '*' || lower[i] == '(' ||
            lower[i] == '"' || lower[i] == '\'')) {
      ++i;
    }
    if (lower.compare(i, 2, "is") == 0) {
      i += 2;
      while (i < lower.size() &&
             (std::isspace(static_cast<unsigned char>(lower[i])) ||
              lower[i] == ':' || lower[i] == '*' || lower[i] == '(' ||
              lower[i] == '"' || lower[i] == '\'')) {
        ++i;
      }
    }
    if (i < raw.size()) {
      char c = static_cast<char>(
          std::toupper(static_cast<unsigned char>(raw[i])));
      bool boundary = (i + 1 >= raw.size()) ||
                      !std::isalnum(static_cast<unsigned char>(raw[i + 1]));
      if (boundary && valid_label(c, options)) found.insert(c);
    }
    pos += 6;
  }
  return found;
}

// Tier 2: standalone single-letter tokens. Uppercase only; a lowercase
// article "a" must not read as the label A.
std::set<char> standalone_labels(
    const std::string& raw,
    const std::vector<std::pair<char, std::string>>& options) {
  std::set<char> found;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char c = raw[i];
    if (!std::isupper(static_cast<unsigned char>(c))) continue;
    bool left_ok =
        (i == 0) || !std::isalnum(static_cast<unsigned char>(raw[i - 1]));
    bool right_ok = (i + 1 >= raw.size()) ||
                    !std::isalnum(static_cast<unsigned char>(raw[i + 1]));
    if (left_ok && right_ok) {
      char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (valid_label(u, options)) found.insert(u);
    }
  }
  return found;
}

}  // namespace

std::optional<char> extract_answer(
    const std::string& raw,
    const std::vector<std::pair<char, std::string>>& options) {
  std::string lower = text::to_lower_ascii(raw);

  auto tier1 = answer_is_matches(lower, raw, options);
  if (tier1.size() == 1) return *tier1.begin();
  if (tier1.size() > 1) return std::nullopt;

  auto tier2 = standalone_labels(raw, options);
  if (tier2.size() == 1) return *tier2.begin();
  if (tier2.size() > 1) return std::nullopt;

  // Tier 3: unique full option-text match.
  std::set<char> tier3;
  for (const auto& [l, t] : options) {
    if (t.empty()) continue;
    if (lower.find(text::to_lower_ascii(t)) != std::string::npos)
      tier3.insert(l);
  }
  if (tier3.size() == 1) return *tier3.begin();
  return std::nullopt;
}

EvaluationReport run_eval(const std::vector<QAItem>& dataset, Gateway& gw,
                          const EndpointConfig& learner, int round,
                          const std::string& task_line) {
  std::vector<ModelResponse> responses(dataset.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= dataset.size()) return;
      const QAItem& item = dataset[i];
      ModelResponse r;
      r.question_id = item.id;
      std::string prompt = task_line.empty()
                               ? default_eval_prompt(item)
                               : task_line + "\n### Question:\n" + item.stem +
                                     "\n" + item.options_line();
      try {
        r.raw_text = gw.chat(learner, prompt);
        r.extracted = extract_answer(r.raw_text, item.options);
        if (r.extracted) r.correct = (*r.extracted == item.gold);
      } catch (const std::exception& e) {
        // unparseable after retry exhaustion; the run completes
        r.raw_text = std::string("[transport error: ") + e.what() + "]";
        r.extracted.reset();
        r.correct.reset();
      }
      responses[i] = std::move(r);
    }
  };
  unsigned n = std::min<std::size_t>(
      std::max(1, learner.max_in_flight),
      std::max<std::size_t>(std::size_t{1}, dataset.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return EvaluationReport::from_responses(round, std::move(responses));
}

std::vector<std::string> mistake_ids(const EvaluationReport& report) {
  std::vector<std::string> out;
  for (const auto& r : report.responses)
    if (r.correct != true) out.push_back(r.question_id);
  return out;
}

std::vector<std::string> correct_ids(const EvaluationReport& report) {
  std::vector<std::string> out;
  for (const auto& r : report.responses)
    if (r.correct == true) out.push_back(r.question_id);
  return out;
}

RoundDiff diff_rounds(const EvaluationReport& prev,
                      const EvaluationReport& curr) {
  std::map<std::string, bool> prev_correct;
  for (const auto& r : prev.responses)
    prev_correct[r.question_id] = (r.correct == true);
  RoundDiff d;
  std::size_t shared = 0, w2r = 0, r2w = 0;
  for (const auto& r : curr.responses) {
    auto it = prev_correct.find(r.question_id);
    if (it == prev_correct.end()) continue;
    ++shared;
    bool was = it->second;
    bool now = (r.correct == true);
    const char* label;
    if (!was && now) {
      ++w2r;
      label = "w2r";
    } else if (was && !now) {
      ++r2w;
      label = "r2w";
    } else {
      label = was ? "stay_right" : "stay_wrong";
    }
    d.transitions[r.question_id] = label;
  }
  if (shared > 0) {
    d.w2r = static_cast<double>(w2r) / shared;
    d.r2w = static_cast<double>(r2w) / shared;
  }
  return d;
}

double enhancement_rate(double a0, double astar) {
  if (a0 <= 0.0)
    throw ValidationError("enhancement_rate: undefined baseline (a0 <= 0)");
  return (astar - a0) / a0;
}

double average_forgetting_rate(const MultiTaskLedger& ledger) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [name, acc] : ledger.tasks) {
    if (name == ledger.cem_task) continue;
    if (acc.initial <= 0.0)
      throw ValidationError("AFR: task '" + name + "' has zero baseline");
    sum += (acc.initial - acc.current) / acc.initial;
    ++n;
  }
  if (n == 0)
    throw ValidationError("AFR requires at least one non-CEM task");
  return sum / static_cast<double>(n);
}

}  // namespace cem
