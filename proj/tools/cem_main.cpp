#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cem/corpus.hpp"
#include "cem/eval.hpp"
#include "cem/index.hpp"
#include "cem/jsonl.hpp"
#include "cem/knowledge.hpp"
#include "cem/orchestrator.hpp"
#include "cem/sim.hpp"
#include "cem/trainset.hpp"

namespace {

// Exit codes: 0 success, 2 validation, 3 transport, 4 stage failure.
constexpr int kExitValidation = 2;
constexpr int kExitTransport = 3;
constexpr int kExitStage = 4;

struct Endpoints {
  cem::RunConfig cfg;
  std::unique_ptr<cem::Gateway> gw;
  std::unique_ptr<cem::sim::SimWorld> world;
};

// Standalone subcommands pull endpoints from the run config; sim endpoints
// get an in-process world loaded from the config's datasets.
Endpoints open_endpoints(const std::string& config_path) {
  Endpoints e;
  e.cfg = cem::RunConfig::load(config_path);
  e.gw = std::make_unique<cem::Gateway>(e.cfg.workspace / "cache");
  bool any_sim = e.cfg.learner.is_sim() || e.cfg.judge.is_sim() ||
                 e.cfg.embedder.is_sim();
  if (any_sim) {
    std::vector<cem::sim::SimItem> items;
    for (const auto& [name, path] : e.cfg.tasks)
      for (auto& si : cem::read_jsonl<cem::sim::SimItem>(path))
        items.push_back(std::move(si));
    cem::sim::KnowledgeStore store(e.cfg.sim.capacity, e.cfg.sim.noise_seed);
    auto init = e.cfg.workspace / "store_init.json";
    if (std::filesystem::exists(init)) {
      store = cem::sim::KnowledgeStore::load(init);
    } else {
      for (const auto& f : e.cfg.sim.initial_facts) store.insert(f);
    }
    e.world = std::make_unique<cem::sim::SimWorld>(std::move(items),
                                                   std::move(store));
    e.world->register_on(*e.gw, e.cfg.learner.sim_name(),
                         e.cfg.judge.sim_name(), e.cfg.embedder.sim_name());
  }
  return e;
}

const cem::EndpointConfig& pick_endpoint(const cem::RunConfig& cfg,
                                         const std::string& name) {
  if (name == "learner") return cfg.learner;
  if (name == "judge") return cfg.judge;
  if (name == "embedder") return cfg.embedder;
  throw cem::ValidationError("unknown endpoint name: " + name);
}

cem::EvaluationReport load_report(const std::string& path) {
  auto v = cem::read_jsonl<cem::EvaluationReport>(path);
  if (v.empty()) throw cem::IoError("empty report: " + path);
  return v.front();
}

cem::AssembleSizes parse_sizes(const std::string& spec) {
  cem::AssembleSizes sizes;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    auto comma = spec.find(',', pos);
    auto part = spec.substr(pos, comma - pos);
    auto eq = part.find('=');
    if (eq == std::string::npos)
      throw cem::ValidationError("bad --sizes entry: " + part);
    auto key = part.substr(0, eq);
    auto val = std::stoul(part.substr(eq + 1));
    if (key == "cpt") {
      sizes.cpt = val;
    } else if (key == "cit") {
      for (auto& [k, v] : sizes.cit) v = val;
    } else {
      sizes.cit[cem::kind_from_string(key)] = val;
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return sizes;
}

int cmd_run(const std::string& config_path, bool print_series) {
  cem::Orchestrator orch(cem::RunConfig::load(config_path));
  auto results = orch.iterate();
  auto cfg = cem::RunConfig::load(config_path);
  std::cout << cem::Orchestrator::report_text(results, cfg.cem_task);
  if (print_series)
    std::cout << cem::Orchestrator::report_series(results).dump(2) << "\n";
  cem::write_file_atomic(
      cfg.workspace / "report.json",
      cem::Orchestrator::report_series(results).dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& dataset,
                 const std::string& endpoint, const std::string& out,
                 int round) {
  auto e = open_endpoints(config_path);
  auto items = cem::read_jsonl<cem::QAItem>(dataset);
  for (const auto& item : items) {
    auto v = cem::validate(item);
    if (!v.empty())
      throw cem::ValidationError("item " + item.id + ": " + v.front());
  }
  auto report = cem::run_eval(items, *e.gw, pick_endpoint(e.cfg, endpoint),
                              round);
  cem::write_jsonl(out, std::vector<cem::EvaluationReport>{report});
  std::printf("accuracy %.4f over %zu questions\n", report.accuracy,
              report.responses.size());
  return 0;
}

int cmd_metrics(const std::string& prev_path, const std::string& curr_path,
                double baseline) {
  auto prev = load_report(prev_path);
  auto curr = load_report(curr_path);
  auto d = cem::diff_rounds(prev, curr);
  cem::json out{{"prev_accuracy", prev.accuracy},
                {"curr_accuracy", curr.accuracy},
                {"w2r", d.w2r},
                {"r2w", d.r2w}};
  double a0 = baseline > 0 ? baseline : prev.accuracy;
  if (a0 > 0) out["er"] = cem::enhancement_rate(a0, curr.accuracy);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_extract_kp(const std::string& config_path,
                   const std::string& report_path, const std::string& dataset,
                   const std::string& out, int x) {
  auto e = open_endpoints(config_path);
  auto report = load_report(report_path);
  std::map<std::string, cem::QAItem> by_id;
  for (auto& item : cem::read_jsonl<cem::QAItem>(dataset))
    by_id[item.id] = std::move(item);
  std::vector<std::pair<cem::QAItem, cem::ModelResponse>> mistakes;
  for (const auto& r : report.responses) {
    if (r.correct == true) continue;
    auto it = by_id.find(r.question_id);
    if (it != by_id.end()) mistakes.emplace_back(it->second, r);
  }
  auto res = cem::extract_all(mistakes, *e.gw, e.cfg.judge, x);
  cem::json j{{"schema_version", cem::kSchemaVersion},
              {"by_question", res.by_question},
              {"pooled", res.pooled},
              {"failed", res.failed_questions}};
  cem::write_file_atomic(out, j.dump(2) + "\n");
  std::printf("%zu knowledge points from %zu mistakes (%zu failed)\n",
              res.pooled.size(), mistakes.size(), res.failed_questions.size());
  return 0;
}

int cmd_acquire(const std::string& config_path, const std::string& kp_path,
                const std::string& dataset, const std::string& sources,
                const std::string& out) {
  auto e = open_endpoints(config_path);
  cem::json kp = cem::json::parse(cem::read_file(kp_path));
  auto by_question =
      kp.at("by_question")
          .get<std::map<std::string, std::vector<std::string>>>();
  std::map<std::string, cem::QAItem> by_id;
  for (auto& item : cem::read_jsonl<cem::QAItem>(dataset))
    by_id[item.id] = std::move(item);

  cem::AcquireOptions opts;
  opts.search_k = e.cfg.search_k;
  opts.hi = e.cfg.hi;
  opts.lo = e.cfg.lo;
  opts.use_web = sources.find("web") != std::string::npos;
  opts.use_encyclopedia = sources.find("wiki") != std::string::npos;
  opts.run_effectiveness = e.cfg.run_effectiveness;
  opts.require_effective = e.cfg.require_effective;

  std::unique_ptr<cem::SearchClient> web;
  if (opts.use_web) {
    if (!e.cfg.web_fixture.empty()) {
      web = std::make_unique<cem::FixtureSearchClient>(e.cfg.web_fixture);
    } else if (!e.cfg.search_api.empty()) {
      cem::HttpSearchClient::Options o;
      o.api_url = e.cfg.search_api;
      o.cache_dir = e.cfg.workspace / "pages";
      web = std::make_unique<cem::HttpSearchClient>(std::move(o));
    } else {
      throw cem::ValidationError("web source requested but not configured");
    }
  }
  cem::EncyclopediaDump dump;
  std::optional<cem::TitleIndex> index;
  if (opts.use_encyclopedia) {
    if (e.cfg.wiki_dump.empty())
      throw cem::ValidationError("wiki source requested but wiki_dump unset");
    dump = cem::EncyclopediaDump::load(e.cfg.wiki_dump);
    auto index_path = e.cfg.workspace / "index.bin";
    if (std::filesystem::exists(index_path)) {
      index = cem::TitleIndex::load(index_path);
    } else {
      std::vector<cem::TitleIndex::Entry> entries;
      std::vector<std::string> titles;
      for (std::size_t i = 0; i < dump.entries.size(); ++i) {
        entries.push_back({"e" + std::to_string(i), dump.entries[i].first});
        titles.push_back(dump.entries[i].first);
      }
      index = cem::TitleIndex::build(entries,
                                     e.gw->embed(e.cfg.embedder, titles));
      index->save(index_path);
    }
  }

  auto corpus = cem::acquire_corpus(by_question, by_id, web.get(),
                                    index ? &*index : nullptr,
                                    index ? &dump : nullptr, *e.gw,
                                    e.cfg.embedder, e.cfg.judge, opts);
  cem::write_jsonl(out, corpus);
  std::size_t kept = 0;
  for (const auto& d : corpus)
    if (!d.leak_filtered) ++kept;
  std::printf("%zu documents (%zu kept, %zu leak-filtered)\n", corpus.size(),
              kept, corpus.size() - kept);
  return 0;
}

int cmd_build_trainset(const std::string& config_path,
                       const std::string& strategy_s, double alpha,
                       const std::string& corpus_path,
                       const std::string& report_path,
                       const std::string& dataset,
                       const std::string& general_pool,
                       const std::string& sizes_s, std::uint64_t seed,
                       const std::string& out_dir) {
  auto e = open_endpoints(config_path);
  auto strategy = cem::strategy_from_string(strategy_s);
  auto sizes = sizes_s.empty() ? cem::AssembleSizes{} : parse_sizes(sizes_s);
  auto corpus = cem::read_jsonl<cem::CorpusDocument>(corpus_path);

  std::map<std::string, cem::QAItem> by_id;
  std::vector<cem::QAItem> items;
  for (auto& item : cem::read_jsonl<cem::QAItem>(dataset)) {
    by_id[item.id] = item;
    items.push_back(std::move(item));
  }
  std::vector<cem::QAItem> mistake_items, correct_items;
  if (!report_path.empty()) {
    auto report = load_report(report_path);
    for (const auto& r : report.responses) {
      auto it = by_id.find(r.question_id);
      if (it == by_id.end()) continue;
      if (r.correct == true) correct_items.push_back(it->second);
      else mistake_items.push_back(it->second);
    }
  }
  std::map<std::string, std::vector<cem::CorpusDocument>> materials;
  for (const auto& [qid, item] : by_id) {
    for (const auto& d : corpus) {
      // material candidates: any non-filtered doc acquired for the item's
      // knowledge points; the corpus carries only the phrase, so match all
      if (!d.leak_filtered && !d.body.empty()) materials[qid].push_back(d);
    }
  }

  std::map<cem::RecordKind, std::vector<cem::InstructionRecord>> components;
  components[cem::RecordKind::Normative] = cem::make_normative(items);
  if (strategy != cem::Strategy::Plain)
    components[cem::RecordKind::Extractive] =
        cem::make_extractive(mistake_items, materials, *e.gw, e.cfg.judge);
  if (strategy == cem::Strategy::Review) {
    std::vector<std::pair<cem::QAItem, std::vector<cem::CorpusDocument>>> pool;
    for (const auto& item : correct_items)
      pool.emplace_back(item, materials[item.id]);
    components[cem::RecordKind::Review] =
        cem::make_review(pool, alpha, seed).records;
  }
  if (!general_pool.empty()) {
    auto gpool = cem::read_jsonl<cem::InstructionRecord>(general_pool);
    std::size_t cap = sizes.cit.count(cem::RecordKind::General)
                          ? sizes.cit.at(cem::RecordKind::General)
                          : gpool.size();
    components[cem::RecordKind::General] =
        cem::sample_general(gpool, std::min(cap, gpool.size()), seed);
  }

  auto ts = cem::assemble(strategy, std::move(corpus), components, sizes, seed);
  auto files = cem::serialize_trainset(ts, out_dir);
  std::printf("cpt %zu, cit %zu -> %s\n", ts.cpt.size(), ts.cit.size(),
              files.combined.string().c_str());
  return 0;
}

int cmd_index_build(const std::string& config_path, const std::string& dump_path,
                    const std::string& out) {
  auto e = open_endpoints(config_path);
  auto dump = cem::EncyclopediaDump::load(dump_path);
  std::vector<cem::TitleIndex::Entry> entries;
  std::vector<std::string> titles;
  for (std::size_t i = 0; i < dump.entries.size(); ++i) {
    entries.push_back({"e" + std::to_string(i), dump.entries[i].first});
    titles.push_back(dump.entries[i].first);
  }
  auto index =
      cem::TitleIndex::build(entries, e.gw->embed(e.cfg.embedder, titles));
  index.save(out);
  std::printf("indexed %zu titles (d=%d) -> %s\n", index.size(),
              index.dimension(), out.c_str());
  return 0;
}

int cmd_index_query(const std::string& config_path,
                    const std::string& index_path, const std::string& phrase,
                    int k) {
  auto e = open_endpoints(config_path);
  auto index = cem::TitleIndex::load(index_path);
  auto vec = e.gw->embed(e.cfg.embedder, {phrase}).front();
  auto hits = cem::threshold_select(index.search(vec, k), e.cfg.hi, e.cfg.lo);
  for (const auto& h : hits)
    std::printf("%.4f  %s\n", h.score, index.entry(h.row).title.c_str());
  if (hits.empty()) std::printf("(no hit above threshold)\n");
  return 0;
}

int cmd_report(const std::string& workspace) {
  std::vector<cem::RoundResult> results;
  for (int r = 1;; ++r) {
    auto p = std::filesystem::path(workspace) / "rounds" / std::to_string(r) /
             "result.json";
    if (!std::filesystem::exists(p)) break;
    results.push_back(
        cem::json::parse(cem::read_file(p)).get<cem::RoundResult>());
  }
  if (results.empty()) {
    std::cout << "no completed rounds under " << workspace << "\n";
    return 0;
  }
  std::string cem_task;
  // first task named in the series; the text report wants one to headline
  if (!results.front().accuracies.empty())
    cem_task = results.front().accuracies.begin()->first;
  std::cout << cem::Orchestrator::report_text(results, cem_task);
  std::cout << cem::Orchestrator::report_series(results).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mistake-driven continual-learning pipeline"};
  app.require_subcommand(1);

  std::string config, dataset, endpoint = "learner", out, prev, curr;
  std::string report_path, kp_path, sources = "web,wiki", corpus_path;
  std::string strategy = "plain", general_pool, sizes_s, dump_path, index_path;
  std::string phrase, workspace;
  double alpha = 1.0, baseline = 0.0;
  std::uint64_t seed = 0;
  int round = 0, x = cem::kDefaultKpCap, k = 4;
  bool print_series = false;

  auto* run = app.add_subcommand("run", "execute configured rounds");
  run->add_option("--config", config)->required();
  run->add_flag("--series", print_series, "also print the JSON series");

  auto* ev = app.add_subcommand("evaluate", "evaluate a dataset");
  ev->add_option("--config", config)->required();
  ev->add_option("--dataset", dataset)->required();
  ev->add_option("--endpoint", endpoint, "learner|judge|embedder");
  ev->add_option("--out", out)->required();
  ev->add_option("--round", round);

  auto* me = app.add_subcommand("metrics", "transition metrics between reports");
  me->add_option("--prev", prev)->required();
  me->add_option("--curr", curr)->required();
  me->add_option("--baseline", baseline, "round-0 accuracy for ER");

  auto* kp = app.add_subcommand("extract-kp", "knowledge points from mistakes");
  kp->add_option("--config", config)->required();
  kp->add_option("--report", report_path)->required();
  kp->add_option("--dataset", dataset)->required();
  kp->add_option("--out", out)->required();
  kp->add_option("--x", x, "max phrases per question");

  auto* ac = app.add_subcommand("acquire", "build the supplemental corpus");
  ac->add_option("--config", config)->required();
  ac->add_option("--kp", kp_path)->required();
  ac->add_option("--dataset", dataset)->required();
  ac->add_option("--sources", sources, "comma list: web,wiki");
  ac->add_option("--out", out)->required();

  auto* bt = app.add_subcommand("build-trainset", "assemble CPT+CIT files");
  bt->add_option("--config", config)->required();
  bt->add_option("--strategy", strategy, "plain|extractive|review");
  bt->add_option("--alpha", alpha);
  bt->add_option("--corpus", corpus_path)->required();
  bt->add_option("--report", report_path, "previous evaluation report");
  bt->add_option("--dataset", dataset)->required();
  bt->add_option("--general-pool", general_pool);
  bt->add_option("--sizes", sizes_s, "e.g. cpt=25000,cit=2000");
  bt->add_option("--seed", seed);
  bt->add_option("--out", out)->required();

  auto* ix = app.add_subcommand("index", "title-embedding index");
  ix->require_subcommand(1);
  auto* ib = ix->add_subcommand("build");
  ib->add_option("--config", config)->required();
  ib->add_option("--dump", dump_path)->required();
  ib->add_option("--out", out)->required();
  auto* iq = ix->add_subcommand("query");
  iq->add_option("--config", config)->required();
  iq->add_option("--index", index_path)->required();
  iq->add_option("--phrase", phrase)->required();
  iq->add_option("--k", k);

  auto* rp = app.add_subcommand("report", "summarize persisted rounds");
  rp->add_option("--workspace", workspace)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, print_series);
    if (*ev) return cmd_evaluate(config, dataset, endpoint, out, round);
    if (*me) return cmd_metrics(prev, curr, baseline);
    if (*kp) return cmd_extract_kp(config, report_path, dataset, out, x);
    if (*ac) return cmd_acquire(config, kp_path, dataset, sources, out);
    if (*bt)
      return cmd_build_trainset(config, strategy, alpha, corpus_path,
                                report_path, dataset, general_pool, sizes_s,
                                seed, out);
    if (*ib) return cmd_index_build(config, dump_path, out);
    if (*iq) return cmd_index_query(config, index_path, phrase, k);
    if (*rp) return cmd_report(workspace);
  } catch (const cem::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const cem::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const cem::StageAbort& e) {
    std::cerr << "stage aborted: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
