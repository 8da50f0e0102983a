#pragma once

#include <map>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/gateway.hpp"

namespace cem {

inline constexpr int kDefaultKpCap = 5;        // x
inline constexpr std::size_t kMaxPhraseLen = 80;  // bytes

// Knowledge-point extraction prompt: task, question, answer and
// requirements blocks, with the cap x substituted.
std::string build_kp_prompt(const QAItem& item, const std::string& answer_text,
                            int x);

// Extracts the first bracketed, comma-separated quoted list; trims, drops
// empties, over-long phrases and duplicates (case-insensitive), truncates
// to x. No list found -> empty result (caller flags and retries).
std::vector<std::string> parse_kp_list(const std::string& response, int x);

struct KpExtraction {
  std::map<std::string, std::vector<std::string>> by_question;
  std::vector<std::string> pooled;  // case-insensitive dedupe, stable order
  std::vector<std::string> failed_questions;  // parse/transport failures
};

// One judge call per mistake (retried once on parse failure), run
// concurrently under the gateway's in-flight cap.
KpExtraction extract_all(
    const std::vector<std::pair<QAItem, ModelResponse>>& mistakes, Gateway& gw,
    const EndpointConfig& judge, int x = kDefaultKpCap);

}  // namespace cem
