#pragma once

// Deterministic fixture world shared by the test suites: a 50-question
// "geography" task whose facts live behind ((fact:KEY)) tags, two 20-question
// held-out tasks, an offline search fixture serving one page per knowledge
// point, and an encyclopedia dump aligned with the same phrases.

#include <filesystem>
#include <string>
#include <vector>

#include "cem/jsonl.hpp"
#include "cem/orchestrator.hpp"
#include "cem/sim.hpp"

namespace fixtures {

inline std::string pad3(int n) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", n);
  return buf;
}

// One simulated question; stems embed the zero-padded index so prompt ->
// item lookup is unambiguous.
inline cem::sim::SimItem make_item(const std::string& task, int n,
                                   const std::string& fact_prefix) {
  cem::sim::SimItem si;
  auto num = pad3(n);
  si.qa.id = task + "-" + num;
  si.qa.stem = "Which code names the canonical " + task + " register entry " +
               num + "?";
  si.fact_key = fact_prefix + num;
  si.qa.options = {{'A', "register code alpha " + num},
                   {'B', "register code bravo " + num},
                   {'C', "register code delta " + num},
                   {'D', "register code omega " + num}};
  si.qa.gold = "ABCD"[n % 4];
  // the gold option carries the fact tag so instruction records built from
  // this item are fact-bearing (replay refresh, review re-insertion)
  for (auto& [label, text] : si.qa.options) {
    if (label == si.qa.gold) text += " ((fact:" + si.fact_key + "))";
  }
  si.qa.subject = task;
  si.phrases = {task + " register entry " + num + " code assignment"};
  return si;
}

struct World {
  std::vector<cem::sim::SimItem> geo;   // CEM task, facts C001..C050
  std::vector<cem::sim::SimItem> hist;  // held-out, facts H001..H020
  std::vector<cem::sim::SimItem> sci;   // held-out, facts S001..S020
  std::vector<std::string> initial_facts;  // hist, sci, then C001..C010
};

inline World make_world() {
  World w;
  for (int i = 1; i <= 50; ++i) w.geo.push_back(make_item("geography", i, "C"));
  for (int i = 1; i <= 20; ++i) w.hist.push_back(make_item("history", i, "H"));
  for (int i = 1; i <= 20; ++i) w.sci.push_back(make_item("science", i, "S"));
  // held-out facts are seeded least-recent; ten geography facts most recent
  for (const auto& s : w.hist) w.initial_facts.push_back(s.fact_key);
  for (const auto& s : w.sci) w.initial_facts.push_back(s.fact_key);
  for (int i = 0; i < 10; ++i) w.initial_facts.push_back(w.geo[i].fact_key);
  return w;
}

// A fixture web page for one item's knowledge point: long enough to pass
// main-text extraction, carries the fact tag, shares no 13-gram with the
// question (stems are shorter than 13 tokens).
inline std::string page_html(const cem::sim::SimItem& si) {
  std::string body =
      "The registry handbook describes how entries are catalogued, audited "
      "and cross referenced by the standards committee during the yearly "
      "revision cycle. Each catalogued entry receives a stable designation "
      "recorded in the committee ledger. For this entry the ledger records "
      "the designation ((fact:" +
      si.fact_key +
      ")) alongside provenance notes, adoption dates and the responsible "
      "working group. Readers should consult the ledger directly when "
      "citing a designation in downstream documents.";
  return "<html><head><title>" + si.phrases[0] +
         "</title></head><body><article><p>" + body +
         "</p></article></body></html>";
}

inline cem::json web_fixture(const World& w) {
  cem::json j = cem::json::object();
  auto add = [&](const std::vector<cem::sim::SimItem>& items) {
    for (const auto& si : items) {
      j[si.phrases[0]] = cem::json::array(
          {{{"url", "https://fixture.test/" + si.fact_key},
            {"title", si.phrases[0]},
            {"html", page_html(si)}}});
    }
  };
  add(w.geo);
  add(w.hist);
  add(w.sci);
  return j;
}

// Encyclopedia dump: title equals the knowledge-point phrase so the
// deterministic embedder scores it 1.0 against the phrase query.
inline std::string wiki_dump_jsonl(const World& w) {
  std::string out;
  auto add = [&](const std::vector<cem::sim::SimItem>& items) {
    for (const auto& si : items) {
      cem::json j{{"title", si.phrases[0]},
                  {"body",
                   "Ledger article for this register entry. The recorded "
                   "designation is ((fact:" +
                       si.fact_key +
                       ")) as adopted by the standards committee and kept "
                       "current through the yearly revision cycle of the "
                       "registry handbook maintained by the working group."}};
      out += j.dump() + "\n";
    }
  };
  add(w.geo);
  add(w.hist);
  add(w.sci);
  return out;
}

struct WorldFiles {
  std::filesystem::path dir;
  std::filesystem::path geo, hist, sci;
  std::filesystem::path web, wiki;
};

inline WorldFiles write_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WorldFiles f;
  f.dir = dir;
  f.geo = dir / "geo.jsonl";
  f.hist = dir / "hist.jsonl";
  f.sci = dir / "sci.jsonl";
  f.web = dir / "web_fixture.json";
  f.wiki = dir / "wiki_dump.jsonl";
  cem::write_jsonl(f.geo, w.geo);
  cem::write_jsonl(f.hist, w.hist);
  cem::write_jsonl(f.sci, w.sci);
  cem::write_file(f.web, web_fixture(w).dump(2));
  cem::write_file(f.wiki, wiki_dump_jsonl(w));
  return f;
}

// Baseline run config: simulated endpoints, Plain strategy, web fixture
// source, capacity tuned so three rounds evict twenty least-recent facts.
inline cem::json run_config(const World& w, const WorldFiles& f,
                            const std::filesystem::path& workspace,
                            std::uint64_t seed) {
  cem::json endpoints{
      {"learner", {{"name", "learner"}, {"base_url", "sim:learner"}}},
      {"judge", {{"name", "judge"}, {"base_url", "sim:judge"}}},
      {"embedder", {{"name", "embedder"}, {"base_url", "sim:embedder"}}}};
  return cem::json{
      {"cem_task", "geo"},
      {"tasks",
       {{"geo", f.geo.string()},
        {"hist", f.hist.string()},
        {"sci", f.sci.string()}}},
      {"endpoints", endpoints},
      {"strategy", "plain"},
      {"rounds", 3},
      {"seed", seed},
      {"workspace", workspace.string()},
      {"sources", cem::json::array({"web"})},
      {"web_fixture", f.web.string()},
      {"sizes",
       {{"cpt", 12}, {"cit", {{"normative", 10}, {"general", 40}}}}},
      {"sim",
       {{"capacity", 66},
        {"noise_seed", 7},
        {"initial_facts", w.initial_facts}}}};
}

// Unique scratch directory under the build tree, wiped on entry.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cem_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
