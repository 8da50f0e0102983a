#include "cem/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>

#include "cem/jsonl.hpp"
#include "cem/rng.hpp"
#include "cem/text.hpp"

namespace cem {

// ---------------------------------------------------------------------------
// Search clients
// ---------------------------------------------------------------------------

FixtureSearchClient::FixtureSearchClient(
    const std::filesystem::path& fixture_file)
    : fixture_(json::parse(read_file(fixture_file))) {}

FixtureSearchClient::FixtureSearchClient(json fixture)
    : fixture_(std::move(fixture)) {}

std::vector<SearchResult> FixtureSearchClient::search(const std::string& phrase,
                                                      int k) {
  std::vector<SearchResult> out;
  if (k < 1 || !fixture_.contains(phrase)) return out;
  int rank = 1;
  for (const auto& hit : fixture_.at(phrase)) {
    if (rank > k) break;
    SearchResult r;
    r.url = hit.value("url", "");
    r.title = hit.value("title", "");
    r.content = hit.value("html", hit.value("text", ""));
    r.rank = rank++;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct UrlParts {
  std::string base;  // scheme://host[:port]
  std::string path;  // /path?query
  std::string host;
};

bool split_url(const std::string& url, UrlParts& out) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return false;
  auto path_start = url.find('/', scheme_end + 3);
  out.base = path_start == std::string::npos ? url : url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  auto host = out.base.substr(scheme_end + 3);
  auto colon = host.find(':');
  out.host = colon == std::string::npos ? host : host.substr(0, colon);
  return !out.host.empty();
}

std::string url_encode(const std::string& s) {
  static const char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

}  // namespace

struct HttpSearchClient::Impl {
  Options opts;
  std::mutex mu;
  std::map<std::string, std::chrono::steady_clock::time_point> last_fetch;
  std::map<std::string, std::vector<std::string>> robots_disallow;

  // Blocks until the per-host politeness window has elapsed.
  void wait_turn(const std::string& host) {
    std::chrono::steady_clock::time_point until;
    {
      std::lock_guard lk(mu);
      auto now = std::chrono::steady_clock::now();
      auto it = last_fetch.find(host);
      auto earliest =
          it == last_fetch.end()
              ? now
              : it->second + std::chrono::milliseconds(opts.per_host_delay_ms);
      until = std::max(now, earliest);
      last_fetch[host] = until;
    }
    std::this_thread::sleep_until(until);
  }

  std::optional<std::string> http_get(const std::string& base,
                                      const std::string& path) {
    httplib::Client cli(base);
    cli.set_connection_timeout(0, opts.timeout_ms * 1000LL);
    cli.set_read_timeout(opts.timeout_ms / 1000, (opts.timeout_ms % 1000) * 1000);
    cli.set_follow_location(true);
    std::string body;
    auto res = cli.Get(path, [&](const char* data, size_t len) {
      body.append(data, len);
      return body.size() <= opts.max_page_bytes;
    });
    if (!res || res->status != 200) return std::nullopt;
    return body;
  }

  bool robots_allows(const UrlParts& u) {
    if (!opts.honor_robots) return true;
    std::vector<std::string> rules;
    {
      std::lock_guard lk(mu);
      auto it = robots_disallow.find(u.host);
      if (it != robots_disallow.end()) rules = it->second;
    }
    if (rules.empty() && !robots_disallow.count(u.host)) {
      wait_turn(u.host);
      auto body = http_get(u.base, "/robots.txt");
      rules = body ? parse_robots(*body) : std::vector<std::string>{};
      std::lock_guard lk(mu);
      robots_disallow[u.host] = rules;
    }
    for (const auto& prefix : rules) {
      if (!prefix.empty() && u.path.rfind(prefix, 0) == 0) return false;
    }
    return true;
  }

  // Disallow prefixes from the "User-agent: *" sections.
  static std::vector<std::string> parse_robots(const std::string& body) {
    std::vector<std::string> out;
    bool applies = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
      auto eol = body.find('\n', pos);
      if (eol == std::string::npos) eol = body.size();
      std::string line = text::trim(body.substr(pos, eol - pos));
      pos = eol + 1;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = text::trim(line.substr(0, hash));
      if (line.empty()) continue;
      auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = text::to_lower_ascii(text::trim(line.substr(0, colon)));
      std::string val = text::trim(line.substr(colon + 1));
      if (key == "user-agent") {
        applies = (val == "*");
      } else if (key == "disallow" && applies) {
        if (!val.empty()) out.push_back(val);
      }
    }
    return out;
  }

  std::filesystem::path cache_path(const std::string& url) const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(url)));
    return opts.cache_dir / (std::string(buf) + ".json");
  }

  std::optional<std::string> fetch_page(const std::string& url) {
    if (!opts.cache_dir.empty()) {
      std::error_code ec;
      auto p = cache_path(url);
      if (std::filesystem::exists(p, ec)) {
        try {
          json j = json::parse(read_file(p));
          if (j.value("url", "") == url) return j.at("body").get<std::string>();
        } catch (const std::exception&) {
        }
      }
    }
    UrlParts u;
    if (!split_url(url, u)) return std::nullopt;
    if (!robots_allows(u)) return std::nullopt;
    wait_turn(u.host);
    auto body = http_get(u.base, u.path);
    if (body && !opts.cache_dir.empty()) {
      std::filesystem::create_directories(opts.cache_dir);
      json j{{"url", url}, {"body", *body}};
      write_file_atomic(cache_path(url), j.dump());
    }
    return body;
  }
};

HttpSearchClient::HttpSearchClient(Options opts)
    : impl_(std::make_unique<Impl>()) {
  impl_->opts = std::move(opts);
}

HttpSearchClient::~HttpSearchClient() = default;

std::vector<SearchResult> HttpSearchClient::search(const std::string& phrase,
                                                   int k) {
  std::vector<SearchResult> out;
  if (k < 1) return out;
  UrlParts api;
  if (!split_url(impl_->opts.api_url, api))
    throw ValidationError("bad search api url: " + impl_->opts.api_url);
  std::string sep = api.path.find('?') == std::string::npos ? "?" : "&";
  std::string path = api.path + sep + "q=" + url_encode(phrase) +
                     "&k=" + std::to_string(k);
  auto body = impl_->http_get(api.base, path);
  if (!body) return out;  // quota/transport trouble skips the phrase
  json hits;
  try {
    hits = json::parse(*body);
  } catch (const std::exception&) {
    return out;
  }
  int rank = 1;
  int budget = impl_->opts.fetch_budget_per_phrase;
  for (const auto& hit : hits) {
    if (rank > k || budget-- <= 0) break;
    std::string url = hit.value("url", "");
    if (url.empty()) continue;
    auto page = impl_->fetch_page(url);
    if (!page) continue;
    SearchResult r;
    r.url = url;
    r.title = hit.value("title", "");
    r.content = std::move(*page);
    r.rank = rank++;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Main-content extraction
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string> kSuppressed = {"script", "style",  "noscript",
                                           "head",   "nav",    "header",
                                           "footer", "aside",  "form",
                                           "svg",    "iframe", "template"};
const std::set<std::string> kBlockTags = {
    "p",  "div", "section", "article", "li",  "ul",    "ol",   "h1",
    "h2", "h3",  "h4",      "h5",      "h6",  "table", "tr",   "td",
    "th", "br",  "blockquote", "pre",  "main", "body", "figure"};

std::string decode_entities(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] != '&') {
      out += s[i++];
      continue;
    }
    auto semi = s.find(';', i);
    if (semi == std::string::npos || semi - i > 10) {
      out += s[i++];
      continue;
    }
    std::string ent = s.substr(i + 1, semi - i - 1);
    if (ent == "amp") out += '&';
    else if (ent == "lt") out += '<';
    else if (ent == "gt") out += '>';
    else if (ent == "quot") out += '"';
    else if (ent == "apos") out += '\'';
    else if (ent == "nbsp") out += ' ';
    else if (!ent.empty() && ent[0] == '#') {
      long cp = std::strtol(ent.c_str() + 1, nullptr,
                            ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X')
                                ? 16
                                : 10);
      if (cp > 0 && cp < 128) out += static_cast<char>(cp);
      else out += ' ';
    } else {
      out += s.substr(i, semi - i + 1);
    }
    i = semi + 1;
  }
  return out;
}

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out += ' ';
      space = false;
      out += c;
    }
  }
  return out;
}

struct Block {
  std::string text;
  std::size_t link_chars = 0;
};

}  // namespace

Extraction extract_main_text(const std::string& html, std::size_t min_chars) {
  const std::string lower_html = text::to_lower_ascii(html);
  std::vector<Block> blocks;
  Block cur;
  int suppress = 0;
  int link_depth = 0;
  std::size_t doc_chars = 0, doc_link_chars = 0;

  auto flush = [&] {
    cur.text = collapse_ws(cur.text);
    if (!cur.text.empty()) blocks.push_back(cur);
    cur = Block{};
  };

  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] == '<') {
      if (html.compare(i, 4, "<!--") == 0) {
        auto end = html.find("-->", i);
        i = end == std::string::npos ? html.size() : end + 3;
        continue;
      }
      auto close = html.find('>', i);
      if (close == std::string::npos) break;
      std::string tag = html.substr(i + 1, close - i - 1);
      i = close + 1;
      bool closing = !tag.empty() && tag[0] == '/';
      if (closing) tag = tag.substr(1);
      std::string name;
      for (char c : tag) {
        if (std::isalnum(static_cast<unsigned char>(c)))
          name += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
          break;
      }
      if (kSuppressed.count(name)) {
        if (closing) {
          if (suppress > 0) --suppress;
        } else if (tag.back() != '/') {
          ++suppress;
          // script/style bodies are raw text; skip to their close tag
          if (name == "script" || name == "style") {
            auto end = lower_html.find("</" + name, i);
            i = end == std::string::npos ? html.size() : end;
            --suppress;
            // the loop will re-parse the close tag without effect
            if (end != std::string::npos) {
              auto gt = html.find('>', end);
              i = gt == std::string::npos ? html.size() : gt + 1;
            }
          }
        }
      } else if (name == "a") {
        if (closing) {
          if (link_depth > 0) --link_depth;
        } else {
          ++link_depth;
        }
      }
      if (kBlockTags.count(name)) flush();
      continue;
    }
    auto lt = html.find('<', i);
    if (lt == std::string::npos) lt = html.size();
    std::string chunk = decode_entities(html.substr(i, lt - i));
    i = lt;
    if (suppress > 0) continue;
    std::string collapsed = collapse_ws(chunk);
    if (collapsed.empty()) continue;
    doc_chars += collapsed.size();
    if (link_depth > 0) {
      doc_link_chars += collapsed.size();
      cur.link_chars += collapsed.size();
    }
    if (!cur.text.empty()) cur.text += ' ';
    cur.text += collapsed;
  }
  flush();

  if (doc_chars > 0 &&
      static_cast<double>(doc_link_chars) / doc_chars > 0.5) {
    return {false, "", "spam"};
  }

  std::string main_text;
  for (const auto& b : blocks) {
    if (b.text.size() < 25) continue;
    double link_density =
        static_cast<double>(b.link_chars) / static_cast<double>(b.text.size());
    if (link_density > 0.33) continue;
    if (!main_text.empty()) main_text += '\n';
    main_text += b.text;
  }
  if (main_text.size() < min_chars) return {false, "", "too short"};
  return {true, main_text, ""};
}

// ---------------------------------------------------------------------------
// Filters and retrieval
// ---------------------------------------------------------------------------

bool leak_filter_drop(const std::string& doc_text, const QAItem& item, int n) {
  const std::string* answer = item.option_text(item.gold);
  if (!answer) return false;
  return text::shares_ngram(doc_text, item.stem, n) &&
         text::shares_ngram(doc_text, *answer, n);
}

EncyclopediaDump EncyclopediaDump::load(
    const std::filesystem::path& jsonl_file) {
  EncyclopediaDump d;
  std::ifstream in(jsonl_file);
  if (!in) throw IoError("cannot open " + jsonl_file.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    d.entries.emplace_back(j.at("title").get<std::string>(),
                           j.at("body").get<std::string>());
  }
  return d;
}

std::vector<CorpusDocument> retrieve_encyclopedia(
    const std::string& phrase, const TitleIndex& index,
    const EncyclopediaDump& dump, Gateway& gw, const EndpointConfig& embedder,
    int k, double hi, double lo) {
  auto vecs = gw.embed(embedder, {phrase});
  auto hits = threshold_select(index.search(vecs[0], k), hi, lo);
  std::vector<CorpusDocument> out;
  for (const auto& h : hits) {
    const auto& entry = index.entry(h.row);
    CorpusDocument doc;
    doc.source = Source::Encyclopedia;
    doc.knowledge_point = phrase;
    doc.title = entry.title;
    doc.relevance_score = h.score;
    if (h.row < dump.entries.size() && dump.entries[h.row].first == entry.title)
      doc.body = dump.entries[h.row].second;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(phrase + "\x1f" + entry.entry_id)));
    doc.doc_id = "wiki:" + std::string(buf);
    if (!doc.body.empty()) out.push_back(std::move(doc));
  }
  return out;
}

std::string effectiveness_prompt(const QAItem& item,
                                 const std::string& answer_text,
                                 const std::string& material) {
  std::string p =
      "Can the correct answer to the given multiple-choice question be "
      "derived solely from the knowledge in the following material? Please "
      "respond with 'Yes' or 'No'.\n### Question:\n";
  p += item.stem;
  p += '\n';
  p += item.options_line();
  p += "\n### Answer\n";
  p += answer_text;
  p += "\n### Materials:\n";
  p += material;
  return p;
}

namespace {

std::string normative_answer_text(const QAItem& item) {
  std::string out = "The answer is " + std::string(1, item.gold);
  if (const auto* t = item.option_text(item.gold)) out += ". " + *t + ".";
  else out += ".";
  return out;
}

}  // namespace

bool effectiveness_check(const CorpusDocument& doc, const QAItem& item,
                         Gateway& gw, const EndpointConfig& judge) {
  auto prompt =
      effectiveness_prompt(item, normative_answer_text(item), doc.body);
  return gw.judge_yes_no(judge, prompt);
}

std::vector<CorpusDocument> acquire_corpus(
    const std::map<std::string, std::vector<std::string>>& kp_by_question,
    const std::map<std::string, QAItem>& items_by_id, SearchClient* web,
    const TitleIndex* index, const EncyclopediaDump* dump, Gateway& gw,
    const EndpointConfig& embedder, const EndpointConfig& judge,
    const AcquireOptions& opts) {
  // Duplicate phrases across questions are retrieved once, attributed to all
  // originating questions; the leak filter stays per-question.
  std::map<std::string, std::vector<std::string>> questions_by_phrase;
  std::vector<std::string> phrase_order;
  for (const auto& [qid, phrases] : kp_by_question) {
    for (const auto& p : phrases) {
      auto key = text::to_lower_ascii(p);
      auto& qs = questions_by_phrase[key];
      if (qs.empty()) phrase_order.push_back(p);
      qs.push_back(qid);
    }
  }

  std::vector<CorpusDocument> all;
  std::mutex out_mu;
  std::atomic<std::size_t> next{0};

  auto process_phrase = [&](const std::string& phrase) {
    const auto& qids = questions_by_phrase.at(text::to_lower_ascii(phrase));
    std::vector<CorpusDocument> docs;

    if (opts.use_web && web) {
      std::vector<SearchResult> results;
      try {
        results = web->search(phrase, opts.search_k);
      } catch (const std::exception&) {
        // network failures yield fewer results, never abort the phrase
      }
      for (const auto& r : results) {
        auto ext = extract_main_text(r.content, opts.min_chars);
        if (!ext.ok) continue;
        CorpusDocument doc;
        doc.source = Source::Web;
        doc.knowledge_point = phrase;
        doc.title = r.title;
        doc.body = ext.text;
        doc.relevance_score = 1.0 / r.rank;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(r.url)));
        doc.doc_id = "web:" + std::string(buf);
        docs.push_back(std::move(doc));
      }
    }

    if (opts.use_encyclopedia && index && dump) {
      try {
        auto wiki = retrieve_encyclopedia(phrase, *index, *dump, gw, embedder,
                                          opts.search_k, opts.hi, opts.lo);
        docs.insert(docs.end(), wiki.begin(), wiki.end());
      } catch (const std::exception&) {
        // embedding failure skips the phrase for this source
      }
    }

    for (auto& doc : docs) {
      for (const auto& qid : qids) {
        auto it = items_by_id.find(qid);
        if (it == items_by_id.end()) continue;
        if (leak_filter_drop(doc.body, it->second)) {
          doc.leak_filtered = true;
          break;
        }
      }
      if (!doc.leak_filtered && opts.run_effectiveness && !qids.empty()) {
        auto it = items_by_id.find(qids.front());
        if (it != items_by_id.end()) {
          try {
            doc.effective = effectiveness_check(doc, it->second, gw, judge);
          } catch (const JudgeIndeterminate&) {
            doc.effective.reset();
          }
        }
      }
    }
    std::lock_guard lk(out_mu);
    for (auto& d : docs) {
      if (opts.require_effective && !d.leak_filtered && d.effective != true)
        continue;
      all.push_back(std::move(d));
    }
  };

  unsigned workers = std::min<std::size_t>(
      4, std::max<std::size_t>(1, phrase_order.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= phrase_order.size()) return;
        process_phrase(phrase_order[i]);
      }
    });
  }
  for (auto& t : pool) t.join();

  // Deterministic output order regardless of worker interleaving.
  std::sort(all.begin(), all.end(),
            [](const CorpusDocument& a, const CorpusDocument& b) {
              if (a.knowledge_point != b.knowledge_point)
                return a.knowledge_point < b.knowledge_point;
              return a.doc_id < b.doc_id;
            });
  return all;
}

}  // namespace cem
