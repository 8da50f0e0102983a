#include "cem/knowledge.hpp"

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "cem/text.hpp"

namespace cem {

std::string build_kp_prompt(const QAItem& item, const std::string& answer_text,
                            int x) {
  if (x < 1) throw ValidationError("knowledge point cap x must be >= 1");
  std::string p =
      "Please analyze the core knowledge points examined by the following "
      "question.\n### Question:\n";
  p += item.stem;
  p += '\n';
  p += item.options_line();
  p += "\n### Answer\n";
  p += answer_text;
  p +=
      "\n### Requirements:\n"
      "- Prioritize identifying directly relevant named entities from the "
      "question and options.\n"
      "- Knowledge points should be closely related to the question and "
      "options, aiding in eliminating incorrect options and selecting the "
      "correct one.\n"
      "- Knowledge points should be specific, avoiding overly broad, common, "
      "or indistinct concepts, e.g., \"Prime Minister\", \"Archaeology\".\n"
      "- Return the knowledge points in a list format, e.g., [\"English "
      "Civil War\", \"Glorious Revolution\"].\n"
      "- The number of returned knowledge points should not exceed " +
      std::to_string(x) + ".";
  return p;
}

std::vector<std::string> parse_kp_list(const std::string& response, int x) {
  std::vector<std::string> out;
  if (x < 1) return out;
  auto lb = response.find('[');
  if (lb == std::string::npos) return out;
  auto rb = response.find(']', lb);
  if (rb == std::string::npos) return out;
  std::string inner = response.substr(lb + 1, rb - lb - 1);
  std::set<std::string> seen;  // lowercase keys
  std::size_t i = 0;
  while (i < inner.size()) {
    char q = inner[i];
    if (q != '"' && q != '\'') {
      ++i;
      continue;
    }
    auto end = inner.find(q, i + 1);
    if (end == std::string::npos) break;
    std::string phrase = text::trim(inner.substr(i + 1, end - i - 1));
    i = end + 1;
    if (phrase.empty() || phrase.size() > kMaxPhraseLen) continue;
    if (!seen.insert(text::to_lower_ascii(phrase)).second) continue;
    out.push_back(phrase);
    if (out.size() == static_cast<std::size_t>(x)) break;
  }
  return out;
}

KpExtraction extract_all(
    const std::vector<std::pair<QAItem, ModelResponse>>& mistakes, Gateway& gw,
    const EndpointConfig& judge, int x) {
  KpExtraction result;
  std::vector<std::vector<std::string>> phrases(mistakes.size());
  std::vector<bool> failed(mistakes.size(), false);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= mistakes.size()) return;
      const auto& [item, resp] = mistakes[i];
      std::string answer_text = "The answer is " + std::string(1, item.gold);
      if (const auto* t = item.option_text(item.gold)) {
        answer_text += ". " + *t + ".";
      } else {
        answer_text += ".";
      }
      std::string prompt = build_kp_prompt(item, answer_text, x);
      // one retry on an empty parse, then skip with flag
      for (int attempt = 0; attempt < 2; ++attempt) {
        try {
          auto parsed = parse_kp_list(gw.chat(judge, prompt), x);
          if (!parsed.empty()) {
            phrases[i] = std::move(parsed);
            break;
          }
          failed[i] = true;
        } catch (const std::exception&) {
          failed[i] = true;
        }
      }
      if (!phrases[i].empty()) failed[i] = false;
    }
  };
  unsigned n = std::min<std::size_t>(std::max(1, judge.max_in_flight),
                                     std::max<std::size_t>(1, mistakes.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::set<std::string> pooled_seen;
  for (std::size_t i = 0; i < mistakes.size(); ++i) {
    const auto& qid = mistakes[i].first.id;
    result.by_question[qid] = phrases[i];
    if (failed[i]) result.failed_questions.push_back(qid);
    for (const auto& p : phrases[i]) {
      if (pooled_seen.insert(text::to_lower_ascii(p)).second)
        result.pooled.push_back(p);
    }
  }
  return result;
}

}  // namespace cem
