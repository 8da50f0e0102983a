#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cem/core.hpp"
#include "cem/gateway.hpp"
#include "cem/index.hpp"

namespace cem {

struct SearchResult {
  std::string url;
  std::string title;
  std::string content;  // raw html or text
  int rank = 1;
};

// Pluggable search-API contract: (query, k) -> ranked results.
class SearchClient {
 public:
  virtual ~SearchClient() = default;
  virtual std::vector<SearchResult> search(const std::string& phrase,
                                           int k) = 0;
};

// Offline fixture: a JSON file mapping phrase -> [{url, title, html}, ...].
class FixtureSearchClient : public SearchClient {
 public:
  explicit FixtureSearchClient(const std::filesystem::path& fixture_file);
  explicit FixtureSearchClient(json fixture);
  std::vector<SearchResult> search(const std::string& phrase, int k) override;

 private:
  json fixture_;
};

// Live client: GET <api>?q=<phrase>&k=<k> returns a JSON array of
// {url, title}; page bodies are fetched through a polite fetcher.
class HttpSearchClient : public SearchClient {
 public:
  struct Options {
    std::string api_url;               // search API endpoint
    std::filesystem::path cache_dir;   // page cache, keyed by url hash
    int per_host_delay_ms = 1000;
    std::size_t max_page_bytes = 1 << 20;
    int fetch_budget_per_phrase = 16;
    bool honor_robots = true;
    int timeout_ms = 15000;
  };
  explicit HttpSearchClient(Options opts);
  ~HttpSearchClient() override;
  std::vector<SearchResult> search(const std::string& phrase, int k) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct Extraction {
  bool ok = false;
  std::string text;
  std::string reason;  // set when rejected: "spam", "too short", ...
};

// Readability-style main-content extraction: strips scripts, styles and
// chrome blocks, keeps content blocks with low link density. Rejects pages
// whose main text is under min_chars or whose link-text density exceeds 0.5.
Extraction extract_main_text(const std::string& html,
                             std::size_t min_chars = 200);

// 13-gram leak filter: true (drop) iff the document shares at least one
// n-gram with the question stem AND at least one with the gold answer text.
bool leak_filter_drop(const std::string& doc_text, const QAItem& item,
                      int n = 13);

// Encyclopedia dump: (title, body) records, aligned with the TitleIndex rows.
struct EncyclopediaDump {
  std::vector<std::pair<std::string, std::string>> entries;  // title, body

  static EncyclopediaDump load(const std::filesystem::path& jsonl_file);
};

// Threshold retrieval over the title index: top-k entries scoring >= hi,
// else the single best if it scores strictly above lo, else none.
std::vector<CorpusDocument> retrieve_encyclopedia(
    const std::string& phrase, const TitleIndex& index,
    const EncyclopediaDump& dump, Gateway& gw, const EndpointConfig& embedder,
    int k = 4, double hi = 0.80, double lo = 0.70);

// Entailment prompt asking whether the material alone suffices to answer.
std::string effectiveness_prompt(const QAItem& item,
                                 const std::string& answer_text,
                                 const std::string& material);

// Judge verdict on whether the document helps answer the question. Stored
// on the document by callers; it does not drop by default.
bool effectiveness_check(const CorpusDocument& doc, const QAItem& item,
                         Gateway& gw, const EndpointConfig& judge);

struct AcquireOptions {
  int search_k = 4;
  double hi = 0.80;
  double lo = 0.70;
  bool use_web = true;
  bool use_encyclopedia = true;
  bool run_effectiveness = false;
  bool require_effective = false;
  std::size_t min_chars = 200;
};

// Per-phrase acquisition across both sources with leak filtering against
// every originating question. Dropped documents are returned with
// leak_filtered set so callers can audit them; they never enter a
// training set.
std::vector<CorpusDocument> acquire_corpus(
    const std::map<std::string, std::vector<std::string>>& kp_by_question,
    const std::map<std::string, QAItem>& items_by_id, SearchClient* web,
    const TitleIndex* index, const EncyclopediaDump* dump, Gateway& gw,
    const EndpointConfig& embedder, const EndpointConfig& judge,
    const AcquireOptions& opts);

}  // namespace cem
