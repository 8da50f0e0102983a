#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cem/knowledge.hpp"
#include "fixtures.hpp"

using namespace cem;

namespace {

QAItem item() {
  QAItem q;
  q.id = "q1";
  q.stem = "Which sea borders the Nile delta?";
  q.options = {{'A', "Red Sea"}, {'B', "Caspian Sea"},
               {'C', "Mediterranean Sea"}, {'D', "Black Sea"}};
  q.gold = 'C';
  return q;
}

}  // namespace

TEST_CASE("knowledge-point prompt carries all blocks and the cap") {
  auto p = build_kp_prompt(item(), "Mediterranean Sea", 5);
  CHECK(p.find("core knowledge points") != std::string::npos);
  CHECK(p.find("### Question:") != std::string::npos);
  CHECK(p.find("### Answer") != std::string::npos);
  CHECK(p.find("### Requirements:") != std::string::npos);
  CHECK(p.find("should not exceed 5.") != std::string::npos);
  CHECK(p.find(item().stem) != std::string::npos);
  CHECK(p.find("Mediterranean Sea") != std::string::npos);

  auto p3 = build_kp_prompt(item(), "x", 3);
  CHECK(p3.find("should not exceed 3.") != std::string::npos);
}

TEST_CASE("kp list parsing: brackets, quotes, trimming, dedupe, cap") {
  auto got = parse_kp_list(R"(Sure: ["Nile delta", 'Mediterranean geography'])",
                           5);
  CHECK(got == std::vector<std::string>{"Nile delta",
                                        "Mediterranean geography"});

  // case-insensitive dedupe keeps first spelling
  got = parse_kp_list(R"(["Delta", "delta", "DELTA", "other"])", 5);
  CHECK(got == std::vector<std::string>{"Delta", "other"});

  // cap truncates
  got = parse_kp_list(R"(["a1","a2","a3","a4","a5","a6"])", 5);
  CHECK(got.size() == 5);

  // empties and over-long phrases dropped
  std::string long_phrase(100, 'x');
  got = parse_kp_list("[\"\", \"ok\", \"" + long_phrase + "\"]", 5);
  CHECK(got == std::vector<std::string>{"ok"});

  // no list at all
  CHECK(parse_kp_list("I cannot answer that.", 5).empty());
  CHECK(parse_kp_list("", 5).empty());
}

TEST_CASE("extract_all over the sim judge") {
  auto w = fixtures::make_world();
  sim::KnowledgeStore store(1000, 7);
  sim::SimWorld world(w.geo, std::move(store));
  Gateway gw;
  world.register_on(gw, "learner", "judge", "embedder");
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";

  std::vector<std::pair<QAItem, ModelResponse>> mistakes;
  for (int i = 10; i < 14; ++i) {
    ModelResponse r;
    r.question_id = w.geo[i].qa.id;
    r.correct = false;
    mistakes.emplace_back(w.geo[i].qa, r);
  }
  auto res = extract_all(mistakes, gw, judge, 5);
  CHECK(res.failed_questions.empty());
  CHECK(res.by_question.size() == 4);
  for (int i = 10; i < 14; ++i)
    CHECK(res.by_question.at(w.geo[i].qa.id) == w.geo[i].phrases);
  CHECK(res.pooled.size() == 4);  // one distinct phrase per item
}

TEST_CASE("pooled phrases dedupe case-insensitively in stable order") {
  Gateway gw;
  gw.register_sim_chat("judge", [](const std::string& prompt) -> std::string {
    if (prompt.find("first-q") != std::string::npos)
      return R"(["Shared Phrase", "unique one"])";
    return R"(["shared phrase", "unique two"])";
  });
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";
  judge.max_in_flight = 1;

  auto q1 = item();
  q1.id = "a";
  q1.stem = "first-q " + q1.stem;
  auto q2 = item();
  q2.id = "b";
  q2.stem = "second-q " + q2.stem;
  std::vector<std::pair<QAItem, ModelResponse>> mistakes{
      {q1, ModelResponse{"a", "", {}, {}}},
      {q2, ModelResponse{"b", "", {}, {}}}};
  auto res = extract_all(mistakes, gw, judge, 5);
  CHECK(res.pooled == std::vector<std::string>{"Shared Phrase", "unique one",
                                               "unique two"});
}

TEST_CASE("empty parse is retried once, then flagged") {
  Gateway gw;
  int calls = 0;
  gw.register_sim_chat("judge", [&](const std::string&) -> std::string {
    ++calls;
    return calls >= 2 ? R"(["recovered"])" : "no list here";
  });
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";
  std::vector<std::pair<QAItem, ModelResponse>> mistakes{
      {item(), ModelResponse{"q1", "", {}, {}}}};
  auto res = extract_all(mistakes, gw, judge, 5);
  CHECK(calls == 2);
  CHECK(res.failed_questions.empty());
  CHECK(res.by_question.at("q1") == std::vector<std::string>{"recovered"});

  // permanently empty -> flagged, run completes
  Gateway gw2;
  gw2.register_sim_chat("judge", [](const std::string&) { return "nope"; });
  auto res2 = extract_all(mistakes, gw2, judge, 5);
  CHECK(res2.failed_questions == std::vector<std::string>{"q1"});
  CHECK(res2.by_question.at("q1").empty());
}

TEST_CASE("judge transport failure flags the question") {
  Gateway gw;
  gw.register_sim_chat("judge", [](const std::string&) -> std::string {
    throw TransportError("down");
  });
  EndpointConfig judge;
  judge.name = "judge";
  judge.base_url = "sim:judge";
  std::vector<std::pair<QAItem, ModelResponse>> mistakes{
      {item(), ModelResponse{"q1", "", {}, {}}}};
  auto res = extract_all(mistakes, gw, judge, 5);
  CHECK(res.failed_questions == std::vector<std::string>{"q1"});
}
