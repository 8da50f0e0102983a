#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cem/eval.hpp"
#include "cem/rng.hpp"
#include "fixtures.hpp"

using namespace cem;

namespace {

QAItem sea_item() {
  QAItem q;
  q.id = "q1";
  q.stem = "Which sea borders the Nile delta?";
  q.options = {{'A', "Red Sea"},
               {'B', "Caspian Sea"},
               {'C', "Mediterranean Sea"},
               {'D', "Black Sea"}};
  q.gold = 'C';
  return q;
}

}  // namespace

TEST_CASE("evaluation prompt follows the standardized shape") {
  auto p = default_eval_prompt(sea_item());
  CHECK(p.find("Please select the correct answer for the following single "
               "choice questions:") == 0);
  CHECK(p.find("### Question:") != std::string::npos);
  CHECK(p.find(sea_item().stem) != std::string::npos);
  CHECK(p.find("A. Red Sea  B. Caspian Sea") != std::string::npos);
}

TEST_CASE("answer extraction tier 1: 'answer is X' statements") {
  auto opts = sea_item().options;
  CHECK(extract_answer("The answer is C. Mediterranean Sea.", opts) == 'C');
  CHECK(extract_answer("ANSWER: B", opts) == 'B');
  CHECK(extract_answer("I think the answer is (D)", opts) == 'D');
  CHECK(extract_answer("the correct answer is a", opts) == 'A');
  // conflicting statements tie out
  CHECK(!extract_answer("The answer is A. No wait, the answer is B.", opts)
             .has_value());
}

TEST_CASE("answer extraction tier 2: standalone uppercase labels") {
  auto opts = sea_item().options;
  CHECK(extract_answer("C", opts) == 'C');
  CHECK(extract_answer("Option B, final.", opts) == 'B');
  // the article 'a' must not read as label A
  CHECK(!extract_answer("it borders a sea", opts).has_value());
  // two distinct standalone labels tie out
  CHECK(!extract_answer("B or C", opts).has_value());
}

TEST_CASE("answer extraction tier 3: unique option-text mention") {
  auto opts = sea_item().options;
  CHECK(extract_answer("It borders the Mediterranean Sea.", opts) == 'C');
  // "Red Sea" and "Black Sea" both present: ambiguous
  CHECK(!extract_answer("Either the Red Sea or the Black Sea.", opts)
             .has_value());
  CHECK(!extract_answer("I do not know.", opts).has_value());
}

TEST_CASE("run_eval over the sim learner; unparseable counted wrong") {
  auto w = fixtures::make_world();
  sim::KnowledgeStore store(1000, 7);
  for (const auto& f : w.initial_facts) store.insert(f);
  sim::SimWorld world(w.geo, std::move(store));
  Gateway gw;
  world.register_on(gw, "learner", "judge", "embedder");
  EndpointConfig ep;
  ep.name = "learner";
  ep.base_url = "sim:learner";

  std::vector<QAItem> qa;
  for (const auto& si : w.geo) qa.push_back(si.qa);
  auto report = run_eval(qa, gw, ep, 0);
  CHECK(report.round == 0);
  CHECK(report.responses.size() == 50);
  CHECK(report.accuracy == doctest::Approx(10.0 / 50.0));  // 10 known facts
  // responses are dataset-ordered
  for (std::size_t i = 0; i < qa.size(); ++i)
    CHECK(report.responses[i].question_id == qa[i].id);
  CHECK(mistake_ids(report).size() == 40);
  CHECK(correct_ids(report).size() == 10);

  // a learner that answers garbage: zero accuracy, run completes
  gw.register_sim_chat("mute", [](const std::string&) { return "..."; });
  ep.base_url = "sim:mute";
  auto bad = run_eval(qa, gw, ep, 0);
  CHECK(bad.accuracy == 0.0);
  CHECK(mistake_ids(bad).size() == 50);
}

TEST_CASE("per-item transport failures do not abort the run") {
  Gateway gw;
  int n = 0;
  gw.register_sim_chat("flaky", [&](const std::string& p) -> std::string {
    if (++n % 2 == 0) throw TransportError("boom");
    // answer A regardless
    return "The answer is A.";
  });
  EndpointConfig ep;
  ep.name = "learner";
  ep.base_url = "sim:flaky";
  ep.max_in_flight = 1;  // deterministic alternation
  std::vector<QAItem> qa;
  for (int i = 0; i < 6; ++i) {
    auto q = sea_item();
    q.id = "q" + std::to_string(i);
    q.gold = 'A';
    qa.push_back(q);
  }
  auto report = run_eval(qa, gw, ep, 1);
  CHECK(report.responses.size() == 6);
  int wrong = 0;
  for (const auto& r : report.responses)
    if (r.correct != true) ++wrong;
  CHECK(wrong == 3);
  CHECK(report.accuracy == doctest::Approx(0.5));
}

TEST_CASE("diff_rounds counts transitions over shared ids only") {
  auto mk = [](std::vector<std::pair<std::string, bool>> marks, int round) {
    std::vector<ModelResponse> rs;
    for (auto& [id, ok] : marks) {
      ModelResponse r;
      r.question_id = id;
      r.extracted = 'A';
      r.correct = ok;
      rs.push_back(r);
    }
    return EvaluationReport::from_responses(round, rs);
  };
  auto prev = mk({{"a", false}, {"b", true}, {"c", false}, {"d", true}}, 0);
  auto curr = mk({{"a", true}, {"b", false}, {"c", false}, {"e", true}}, 1);
  auto d = diff_rounds(prev, curr);
  // shared = a, b, c
  CHECK(d.w2r == doctest::Approx(1.0 / 3.0));
  CHECK(d.r2w == doctest::Approx(1.0 / 3.0));
  CHECK(d.transitions.at("a") == "w2r");
  CHECK(d.transitions.at("b") == "r2w");
  CHECK(d.transitions.at("c") == "stay_wrong");
  CHECK(d.transitions.count("d") == 0);
  CHECK(d.transitions.count("e") == 0);
}

TEST_CASE("enhancement rate formula and guard") {
  CHECK(enhancement_rate(0.4241, 0.5687) == doctest::Approx(0.3410).epsilon(1e-3));
  CHECK(enhancement_rate(0.5, 0.4) == doctest::Approx(-0.2));
  CHECK_THROWS_AS(enhancement_rate(0.0, 0.5), ValidationError);
}

TEST_CASE("average forgetting rate: hand example, sign, guards") {
  MultiTaskLedger l;
  l.cem_task = "cem";
  l.tasks["cem"] = {0.3, 0.6};  // excluded
  l.tasks["t1"] = {0.5, 0.4};
  l.tasks["t2"] = {0.5, 0.45};
  CHECK(average_forgetting_rate(l) == doctest::Approx(0.15));

  l.tasks["t1"] = {0.5, 0.6};
  l.tasks["t2"] = {0.5, 0.55};
  CHECK(average_forgetting_rate(l) < 0.0);  // improvement on other tasks

  MultiTaskLedger only_cem;
  only_cem.cem_task = "cem";
  only_cem.tasks["cem"] = {0.3, 0.6};
  CHECK_THROWS_AS(average_forgetting_rate(only_cem), ValidationError);

  MultiTaskLedger zero;
  zero.cem_task = "cem";
  zero.tasks["t1"] = {0.0, 0.1};
  CHECK_THROWS_AS(average_forgetting_rate(zero), ValidationError);
}

TEST_CASE("accuracy delta equals w2r - r2w on identical question sets") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ModelResponse> prev_r, curr_r;
    int n = 20 + static_cast<int>(rng.next_below(60));
    for (int i = 0; i < n; ++i) {
      ModelResponse a, b;
      a.question_id = b.question_id = "q" + std::to_string(i);
      a.extracted = b.extracted = 'A';
      a.correct = rng.next_below(2) == 0;
      b.correct = rng.next_below(2) == 0;
      prev_r.push_back(a);
      curr_r.push_back(b);
    }
    auto prev = EvaluationReport::from_responses(0, prev_r);
    auto curr = EvaluationReport::from_responses(1, curr_r);
    auto d = diff_rounds(prev, curr);
    CHECK(std::abs((curr.accuracy - prev.accuracy) - (d.w2r - d.r2w)) < 1e-12);
  }
}
