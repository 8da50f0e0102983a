#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <thread>
#include <unordered_set>

#include <httplib.h>

#include "cem/corpus.hpp"
#include "cem/rng.hpp"
#include "cem/text.hpp"
#include "fixtures.hpp"

using namespace cem;

namespace {

// Independent 13-gram oracle: simple ASCII tokenizer, materialized shingle
// string sets, plain set intersection.
std::vector<std::string> oracle_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::set<std::string> oracle_shingles(const std::string& s, int n) {
  auto toks = oracle_tokens(s);
  std::set<std::string> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string sh;
    for (int j = 0; j < n; ++j) sh += toks[i + j] + "\x1f";
    out.insert(sh);
  }
  return out;
}

bool oracle_intersects(const std::set<std::string>& a,
                       const std::set<std::string>& b) {
  for (const auto& x : a)
    if (b.count(x)) return true;
  return false;
}

std::string words(Rng& rng, int n) {
  static const char* vocab[] = {"river",  "treaty", "empire", "basalt",
                                "orbit",  "enzyme", "sonata", "harbor",
                                "meadow", "cipher", "lantern", "quarry"};
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    out += vocab[rng.next_below(12)];
    out += std::to_string(rng.next_below(30));
  }
  return out;
}

}  // namespace

TEST_CASE("fixture search client serves ranked results per phrase") {
  json fx{{"alpha phrase",
           json::array({{{"url", "https://x/1"},
                         {"title", "t1"},
                         {"html", "<p>one</p>"}},
                        {{"url", "https://x/2"},
                         {"title", "t2"},
                         {"text", "two"}}})}};
  FixtureSearchClient c(fx);
  auto r = c.search("alpha phrase", 4);
  REQUIRE(r.size() == 2);
  CHECK(r[0].rank == 1);
  CHECK(r[1].rank == 2);
  CHECK(r[1].content == "two");
  CHECK(c.search("alpha phrase", 1).size() == 1);
  CHECK(c.search("unknown", 4).empty());
}

TEST_CASE("main-text extraction strips chrome, keeps content") {
  std::string html =
      "<html><head><title>T</title><script>var x = 'junk junk junk';"
      "</script></head><body><nav>Home | About | Contact and more links"
      "</nav><article><p>" +
      std::string(
          "The committee catalogued the designation in the annual ledger "
          "alongside provenance notes, adoption dates and the responsible "
          "working group for future reference by all readers. ") +
      "</p><p>Second paragraph with plenty of descriptive prose about the "
      "registry handbook and its yearly revision cycle for the record."
      "</p></article><footer>Copyright footer boilerplate</footer>"
      "</body></html>";
  auto ext = extract_main_text(html, 100);
  REQUIRE(ext.ok);
  CHECK(ext.text.find("committee catalogued") != std::string::npos);
  CHECK(ext.text.find("junk") == std::string::npos);
  CHECK(ext.text.find("Home | About") == std::string::npos);
  CHECK(ext.text.find("Copyright") == std::string::npos);
}

TEST_CASE("extraction rejects link farms and thin pages") {
  std::string farm = "<body><p><a href=x>click here for amazing deals</a> "
                     "<a href=y>more deals and amazing offers here</a></p>"
                     "<p>tiny</p></body>";
  auto ext = extract_main_text(farm, 10);
  CHECK(!ext.ok);
  CHECK(ext.reason == "spam");

  auto thin = extract_main_text("<p>just a few words here</p>", 200);
  CHECK(!thin.ok);
  CHECK(thin.reason == "too short");
}

TEST_CASE("entities decode and comments are skipped") {
  std::string html =
      "<p>Tom &amp; Jerry &lt;3 the &quot;registry&quot; handbook entry "
      "number one hundred <!-- hidden secret comment text --> as described "
      "in the annual committee ledger for the record keeping.</p>";
  auto ext = extract_main_text(html, 50);
  REQUIRE(ext.ok);
  CHECK(ext.text.find("Tom & Jerry <3 the \"registry\"") != std::string::npos);
  CHECK(ext.text.find("hidden secret") == std::string::npos);
}

TEST_CASE("leak filter agrees with the materialized shingle oracle") {
  Rng rng(2024);
  int dropped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    QAItem q;
    q.id = "t";
    q.stem = words(rng, 13 + static_cast<int>(rng.next_below(6)));
    std::string gold_text = words(rng, 13 + static_cast<int>(rng.next_below(6)));
    q.options = {{'A', gold_text}, {'B', words(rng, 5)}};
    q.gold = 'A';

    std::string doc;
    int variant = static_cast<int>(rng.next_below(5));
    switch (variant) {
      case 0:  // verbatim stem + answer: must drop
        doc = words(rng, 8) + " " + q.stem + " " + gold_text + " " +
              words(rng, 8);
        break;
      case 1:  // stem only
        doc = q.stem + " " + words(rng, 20);
        break;
      case 2:  // answer only
        doc = words(rng, 20) + " " + gold_text;
        break;
      case 3: {  // adversarial near miss: 12 of 13 stem tokens
        auto toks = oracle_tokens(q.stem);
        std::string partial;
        for (std::size_t i = 0; i + 1 < toks.size(); ++i)
          partial += toks[i] + " ";
        doc = partial + "BREAK " + gold_text;
        break;
      }
      default:
        doc = words(rng, 40);
    }
    bool got = leak_filter_drop(doc, q, 13);
    bool want =
        oracle_intersects(oracle_shingles(doc, 13), oracle_shingles(q.stem, 13)) &&
        oracle_intersects(oracle_shingles(doc, 13),
                          oracle_shingles(gold_text, 13));
    CHECK(got == want);
    if (variant == 0) CHECK(got);  // verbatim stem + answer always drops
    if (got) ++dropped;
  }
  CHECK(dropped > 0);
}

TEST_CASE("encyclopedia retrieval applies the threshold rule") {
  auto w = fixtures::make_world();
  auto dir = fixtures::scratch("corpus_wiki");
  write_file(dir / "dump.jsonl", fixtures::wiki_dump_jsonl(w));
  auto dump = EncyclopediaDump::load(dir / "dump.jsonl");

  Gateway gw;
  gw.register_sim_embed("embedder", [](const std::vector<std::string>& t) {
    return sim::SimWorld::embed(t);
  });
  EndpointConfig emb;
  emb.name = "embedder";
  emb.base_url = "sim:embedder";

  std::vector<TitleIndex::Entry> entries;
  std::vector<std::string> titles;
  for (std::size_t i = 0; i < dump.entries.size(); ++i) {
    entries.push_back({"e" + std::to_string(i), dump.entries[i].first});
    titles.push_back(dump.entries[i].first);
  }
  auto index = TitleIndex::build(entries, gw.embed(emb, titles));

  // phrase identical to a title embeds identically: similarity 1.0 >= 0.80
  auto docs = retrieve_encyclopedia(w.geo[3].phrases[0], index, dump, gw, emb);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].source == Source::Encyclopedia);
  CHECK(docs[0].title == w.geo[3].phrases[0]);
  CHECK(docs[0].body.find(w.geo[3].fact_key) != std::string::npos);
  CHECK(*docs[0].relevance_score == doctest::Approx(1.0));
  CHECK(docs[0].doc_id.rfind("wiki:", 0) == 0);

  // unrelated phrase scores nowhere near 0.70: nothing retrieved
  auto none = retrieve_encyclopedia(
      "completely unrelated nonsense query string", index, dump, gw, emb);
  CHECK(none.empty());
}

TEST_CASE("effectiveness judge verdict is recorded, not a drop by default") {
  auto w = fixtures::make_world();
  sim::SimWorld world(w.geo, sim::KnowledgeStore(10, 1));
  Gateway gw;
  world.register_on(gw, "learner", "judge", "embedder");
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";

  CorpusDocument good;
  good.body = "material mentioning ((fact:" + w.geo[0].fact_key + ")) here";
  CHECK(effectiveness_check(good, w.geo[0].qa, gw, judge));

  CorpusDocument bad;
  bad.body = "unrelated material about nothing in particular";
  CHECK(!effectiveness_check(bad, w.geo[0].qa, gw, judge));
}

TEST_CASE("acquire_corpus: attribution, leak audit, deterministic order") {
  auto w = fixtures::make_world();
  auto web_json = fixtures::web_fixture(w);

  // poison one phrase's page so it leaks stem + answer for geo item 5
  const auto& victim = w.geo[5];
  std::string leak_stem = victim.qa.stem;
  // stems are short; lengthen the question so 13-grams exist
  QAItem leaky = victim.qa;
  leaky.stem = "alpha beta gamma delta epsilon zeta eta theta iota kappa "
               "lambda mu nu xi omicron";
  for (auto& [label, t] : leaky.options) {
    if (label == leaky.gold)
      t = "one two three four five six seven eight nine ten eleven twelve "
          "thirteen fourteen";
  }
  web_json[victim.phrases[0]] = json::array(
      {{{"url", "https://fixture.test/leak"},
        {"title", "leaky"},
        {"html",
         "<p>" + leaky.stem + " " + *leaky.option_text(leaky.gold) +
             " padding so the extractor keeps this block and the page "
             "clears the minimum length requirement for main text with room "
             "to spare and then some more filler prose to be safe.</p>"}}});

  FixtureSearchClient web(web_json);
  Gateway gw;
  EndpointConfig ep;  // embedder unused (no wiki)

  std::map<std::string, std::vector<std::string>> kp;
  std::map<std::string, QAItem> by_id;
  for (int i = 0; i < 8; ++i) {
    const auto& si = w.geo[i];
    kp[si.qa.id] = si.phrases;
    by_id[si.qa.id] = si.qa;
  }
  by_id[victim.qa.id] = leaky;
  kp[victim.qa.id] = victim.phrases;

  AcquireOptions opts;
  opts.use_encyclopedia = false;
  auto docs = acquire_corpus(kp, by_id, &web, nullptr, nullptr, gw, ep, ep,
                             opts);
  REQUIRE(docs.size() == 8);

  int leaked = 0;
  for (const auto& d : docs) {
    CHECK(d.doc_id.rfind("web:", 0) == 0);
    if (d.leak_filtered) {
      ++leaked;
      CHECK(d.knowledge_point == victim.phrases[0]);
    } else {
      CHECK(d.body.find("((fact:") != std::string::npos);
    }
  }
  CHECK(leaked == 1);  // kept in the output for audit, flagged

  // byte-identical across runs despite the worker pool
  auto again = acquire_corpus(kp, by_id, &web, nullptr, nullptr, gw, ep, ep,
                              opts);
  CHECK(docs == again);
  for (std::size_t i = 1; i < docs.size(); ++i) {
    CHECK(std::pair(docs[i - 1].knowledge_point, docs[i - 1].doc_id) <=
          std::pair(docs[i].knowledge_point, docs[i].doc_id));
  }
}

TEST_CASE("require_effective drops unaffirmed documents") {
  auto w = fixtures::make_world();
  sim::SimWorld world(w.geo, sim::KnowledgeStore(10, 1));
  Gateway gw;
  world.register_on(gw, "learner", "judge", "embedder");
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";

  auto web_json = fixtures::web_fixture(w);
  // add a page with no fact tag: judge says No
  web_json[w.geo[0].phrases[0]].push_back(
      {{"url", "https://fixture.test/useless"},
       {"title", "useless"},
       {"html",
        "<p>A long but entirely unhelpful page of filler prose that keeps "
        "the extractor satisfied while containing no relevant designation "
        "for any registry entry in the catalogue whatsoever, truly nothing "
        "of value for answering questions.</p>"}});
  FixtureSearchClient web(web_json);

  std::map<std::string, std::vector<std::string>> kp{
      {w.geo[0].qa.id, w.geo[0].phrases}};
  std::map<std::string, QAItem> by_id{{w.geo[0].qa.id, w.geo[0].qa}};

  AcquireOptions opts;
  opts.use_encyclopedia = false;
  opts.run_effectiveness = true;
  opts.require_effective = true;
  auto docs = acquire_corpus(kp, by_id, &web, nullptr, nullptr, gw, judge,
                             judge, opts);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].effective == true);
  CHECK(docs[0].body.find("((fact:") != std::string::npos);
}

TEST_CASE("http search client: api, robots, politeness cache") {
  httplib::Server svr;
  std::atomic<int> page_hits{0};
  svr.Get("/robots.txt", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("User-agent: *\nDisallow: /private/\n", "text/plain");
  });
  svr.Get(R"(/page/(\d+))", [&](const httplib::Request&, httplib::Response& res) {
    ++page_hits;
    res.set_content(
        "<p>A perfectly ordinary fixture page with enough descriptive prose "
        "to clear the extraction threshold used by the acquisition filters "
        "in this test suite, nothing more and nothing less overall.</p>",
        "text/html");
  });
  svr.Get("/private/2", [&](const httplib::Request&, httplib::Response& res) {
    ++page_hits;
    res.set_content("should never be fetched", "text/html");
  });
  int port = svr.bind_to_any_port("127.0.0.1");
  // the search handler needs the bound port, so register it after binding
  // but before the listener thread starts
  svr.Get("/search", [port](const httplib::Request&, httplib::Response& res) {
    json hits = json::array(
        {{{"url", "http://127.0.0.1:" + std::to_string(port) + "/page/1"},
          {"title", "ok page"}},
         {{"url", "http://127.0.0.1:" + std::to_string(port) + "/private/2"},
          {"title", "blocked"}}});
    res.set_content(hits.dump(), "application/json");
  });
  std::thread th([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();

  auto dir = fixtures::scratch("http_search");
  HttpSearchClient::Options o;
  o.api_url = "http://127.0.0.1:" + std::to_string(port) + "/search";
  o.cache_dir = dir / "pages";
  o.per_host_delay_ms = 10;
  HttpSearchClient client(std::move(o));

  auto results = client.search("some phrase", 4);
  REQUIRE(results.size() == 1);  // /private/ blocked by robots
  CHECK(results[0].title == "ok page");
  CHECK(page_hits == 1);

  // second search hits the page cache, not the server
  auto again = client.search("some phrase", 4);
  REQUIRE(again.size() == 1);
  CHECK(page_hits == 1);
  CHECK(again[0].content == results[0].content);

  svr.stop();
  th.join();
}
