#include "cem/orchestrator.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cem/jsonl.hpp"
#include "cem/knowledge.hpp"
#include "cem/rng.hpp"
#include "cem/text.hpp"

namespace cem {

namespace {

ReplayConfig replay_from_json(const json& j) {
  ReplayConfig r;
  std::string mode = j.value("mode", "none");
  if (mode == "none") {
    r.mode = ReplayConfig::Mode::None;
  } else if (mode == "random") {
    r.mode = ReplayConfig::Mode::Random;
    r.n = j.value("n", 400);
  } else {
    throw ValidationError("unknown replay mode: " + mode);
  }
  return r;
}

}  // namespace

void from_json(const json& j, RunConfig& cfg) {
  cfg.cem_task = j.at("cem_task").get<std::string>();
  for (const auto& [name, path] : j.at("tasks").items())
    cfg.tasks[name] = path.get<std::string>();
  const auto& eps = j.at("endpoints");
  cfg.learner = eps.at("learner").get<EndpointConfig>();
  cfg.embedder = eps.at("embedder").get<EndpointConfig>();
  cfg.judge = eps.at("judge").get<EndpointConfig>();
  if (cfg.learner.name.empty()) cfg.learner.name = "learner";
  if (cfg.embedder.name.empty()) cfg.embedder.name = "embedder";
  if (cfg.judge.name.empty()) cfg.judge.name = "judge";
  cfg.strategy = strategy_from_string(j.value("strategy", "plain"));
  cfg.alpha = j.value("alpha", 1.0);
  if (j.contains("sizes")) {
    const auto& s = j.at("sizes");
    cfg.sizes.cpt = s.value("cpt", cfg.sizes.cpt);
    if (s.contains("cit")) {
      for (const auto& [k, v] : s.at("cit").items())
        cfg.sizes.cit[kind_from_string(k)] = v.get<std::size_t>();
    }
  }
  cfg.rounds = j.value("rounds", 1);
  if (j.contains("replay")) cfg.replay = replay_from_json(j.at("replay"));
  cfg.seed = j.value("seed", 0);
  cfg.workspace = j.at("workspace").get<std::string>();
  if (j.contains("sources")) {
    cfg.use_web = false;
    cfg.use_encyclopedia = false;
    for (const auto& s : j.at("sources")) {
      if (s == "web") cfg.use_web = true;
      else if (s == "wiki" || s == "encyclopedia") cfg.use_encyclopedia = true;
      else throw ValidationError("unknown source: " + s.get<std::string>());
    }
  }
  if (j.contains("web_fixture"))
    cfg.web_fixture = j.at("web_fixture").get<std::string>();
  cfg.search_api = j.value("search_api", "");
  if (j.contains("wiki_dump"))
    cfg.wiki_dump = j.at("wiki_dump").get<std::string>();
  if (j.contains("general_pool"))
    cfg.general_pool = j.at("general_pool").get<std::string>();
  cfg.train_hook = j.value("train_hook", "");
  cfg.kp_x = j.value("kp_x", 5);
  cfg.search_k = j.value("search_k", 4);
  cfg.hi = j.value("hi", 0.80);
  cfg.lo = j.value("lo", 0.70);
  cfg.run_effectiveness = j.value("effectiveness", false);
  cfg.require_effective = j.value("require_effective", false);
  cfg.max_rounds_cap = j.value("max_rounds_cap", 10);
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    cfg.sim.capacity = s.value("capacity", 0);
    cfg.sim.noise_seed = s.value("noise_seed", 1);
    cfg.sim.initial_facts =
        s.value("initial_facts", std::vector<std::string>{});
  }
  cfg.test_fail_after = j.value("test_fail_after", "");
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  RunConfig cfg = json::parse(read_file(file)).get<RunConfig>();
  apply_env_credentials(cfg.learner);
  apply_env_credentials(cfg.embedder);
  apply_env_credentials(cfg.judge);
  return cfg;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> v;
  if (rounds < 1) v.push_back("rounds must be >= 1");
  if (rounds > max_rounds_cap)
    v.push_back("rounds exceeds the hard cap of " +
                std::to_string(max_rounds_cap) +
                " (iteration must not be endless)");
  if (!tasks.count(cem_task)) v.push_back("cem_task missing from tasks");
  if (alpha < 0.0 || alpha > 1.0) v.push_back("alpha must be in [0,1]");
  if (workspace.empty()) v.push_back("workspace required");
  if (strategy == Strategy::Review && tasks.size() < 1)
    v.push_back("review strategy requires the CEM task");
  if (replay.mode == ReplayConfig::Mode::Random && tasks.size() < 2)
    v.push_back("random replay requires held-out tasks");
  if (use_encyclopedia && wiki_dump.empty())
    v.push_back("wiki source enabled but wiki_dump not set");
  if (use_web && web_fixture.empty() && search_api.empty())
    v.push_back("web source enabled but neither web_fixture nor search_api set");
  return v;
}

void to_json(json& j, const RoundResult& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"round", v.round},
           {"accuracies", v.accuracies},
           {"w2r", v.w2r},
           {"r2w", v.r2w},
           {"trainset_manifest", v.trainset_manifest},
           {"dry_run", v.dry_run},
           {"wall_seconds", v.wall_seconds}};
  if (v.er) j["er"] = *v.er;
  if (v.afr) j["afr"] = *v.afr;
}

void from_json(const json& j, RoundResult& v) {
  v.round = j.at("round").get<int>();
  v.accuracies = j.at("accuracies").get<std::map<std::string, double>>();
  v.w2r = j.value("w2r", 0.0);
  v.r2w = j.value("r2w", 0.0);
  v.trainset_manifest = j.value("trainset_manifest", json());
  v.dry_run = j.value("dry_run", false);
  v.wall_seconds = j.value("wall_seconds", 0.0);
  if (j.contains("er")) v.er = j.at("er").get<double>();
  else v.er.reset();
  if (j.contains("afr")) v.afr = j.at("afr").get<double>();
  else v.afr.reset();
}

bool same_result(const RoundResult& a, const RoundResult& b) {
  return a.round == b.round && a.accuracies == b.accuracies &&
         a.w2r == b.w2r && a.r2w == b.r2w && a.er == b.er && a.afr == b.afr &&
         a.trainset_manifest == b.trainset_manifest && a.dry_run == b.dry_run;
}

struct Orchestrator::Impl {
  RunConfig cfg;
  Gateway gw;
  std::map<std::string, std::vector<QAItem>> datasets;
  std::map<std::string, QAItem> cem_items_by_id;
  std::unique_ptr<SearchClient> web;
  std::optional<TitleIndex> index;
  EncyclopediaDump dump;
  std::unique_ptr<sim::SimWorld> world;
  bool sim_mode = false;

  explicit Impl(RunConfig c)
      : cfg(std::move(c)), gw(cfg.workspace / "cache") {
    auto violations = cfg.validate();
    if (!violations.empty()) throw ValidationError(violations.front());
    std::filesystem::create_directories(cfg.workspace);

    for (const auto& [name, path] : cfg.tasks) {
      datasets[name] = read_jsonl<QAItem>(path);
      for (const auto& item : datasets[name]) {
        auto v = cem::validate(item);
        if (!v.empty())
          throw ValidationError("dataset " + name + " item " + item.id +
                                ": " + v.front());
      }
    }
    for (const auto& item : datasets.at(cfg.cem_task))
      cem_items_by_id[item.id] = item;

    sim_mode = cfg.learner.is_sim();
    if (sim_mode) init_sim();

    if (cfg.use_web) {
      if (!cfg.web_fixture.empty()) {
        web = std::make_unique<FixtureSearchClient>(cfg.web_fixture);
      } else {
        HttpSearchClient::Options o;
        o.api_url = cfg.search_api;
        o.cache_dir = cfg.workspace / "pages";
        web = std::make_unique<HttpSearchClient>(std::move(o));
      }
    }
    if (cfg.use_encyclopedia) init_index();
  }

  void init_sim() {
    std::vector<sim::SimItem> items;
    for (const auto& [name, path] : cfg.tasks) {
      for (auto& si : read_jsonl<sim::SimItem>(path)) items.push_back(si);
    }
    sim::KnowledgeStore store(cfg.sim.capacity, cfg.sim.noise_seed);
    for (const auto& f : cfg.sim.initial_facts) store.insert(f);
    auto init_path = cfg.workspace / "store_init.json";
    if (std::filesystem::exists(init_path)) {
      store = sim::KnowledgeStore::load(init_path);
    } else {
      store.save(init_path);
    }
    world = std::make_unique<sim::SimWorld>(std::move(items), std::move(store));
    world->register_on(gw, cfg.learner.sim_name(), cfg.judge.sim_name(),
                       cfg.embedder.sim_name());
  }

  void init_index() {
    dump = EncyclopediaDump::load(cfg.wiki_dump);
    auto index_path = cfg.workspace / "index.bin";
    if (std::filesystem::exists(index_path)) {
      index = TitleIndex::load(index_path);
      if (index->size() == dump.entries.size()) return;
      index.reset();  // stale; rebuild
    }
    std::vector<TitleIndex::Entry> entries;
    std::vector<std::string> titles;
    for (std::size_t i = 0; i < dump.entries.size(); ++i) {
      entries.push_back({"e" + std::to_string(i), dump.entries[i].first});
      titles.push_back(dump.entries[i].first);
    }
    std::vector<std::vector<double>> vecs;
    const std::size_t batch = 64;
    for (std::size_t i = 0; i < titles.size(); i += batch) {
      std::vector<std::string> chunk(
          titles.begin() + i,
          titles.begin() + std::min(titles.size(), i + batch));
      auto got = gw.embed(cfg.embedder, chunk);
      vecs.insert(vecs.end(), got.begin(), got.end());
    }
    index = TitleIndex::build(std::move(entries), vecs);
    index->save(index_path);
  }

  std::filesystem::path round_dir(int r) const {
    return cfg.workspace / "rounds" / std::to_string(r);
  }

  void maybe_abort(const std::string& stage) const {
    if (cfg.test_fail_after == stage)
      throw StageAbort("injected failure after stage " + stage);
  }

  // Points the sim learner at the knowledge state in effect after round r.
  void sim_use_store(int r) {
    if (!sim_mode) return;
    std::filesystem::path p =
        r <= 0 ? cfg.workspace / "store_init.json"
               : round_dir(r) / "store.json";
    world->store() = sim::KnowledgeStore::load(p);
  }

  EvaluationReport eval_task(const std::string& task, int round) {
    return run_eval(datasets.at(task), gw, cfg.learner, round);
  }

  // Round-0 baseline: evaluate every task against the untouched model.
  void ensure_baseline() {
    auto dir = round_dir(0) / "reports";
    sim_use_store(0);
    for (const auto& [name, items] : datasets) {
      auto path = dir / (name + ".jsonl");
      if (std::filesystem::exists(path)) continue;
      auto report = eval_task(name, 0);
      write_jsonl(path, std::vector<EvaluationReport>{report});
    }
    if (sim_mode) {
      auto p = round_dir(0) / "store.json";
      if (!std::filesystem::exists(p)) {
        std::filesystem::create_directories(round_dir(0));
        world->store().save(p);
      }
    }
  }

  EvaluationReport load_report(int r, const std::string& task) const {
    auto path = round_dir(r) / "reports" / (task + ".jsonl");
    auto v = read_jsonl<EvaluationReport>(path);
    if (v.empty()) throw IoError("empty report " + path.string());
    return v.front();
  }

  // Review-pool question ids already consumed in earlier rounds.
  std::set<std::string> used_review_ids(int before_round) const {
    std::set<std::string> used;
    for (int r = 1; r < before_round; ++r) {
      auto mpath = round_dir(r) / "trainset" / "manifest.json";
      if (!std::filesystem::exists(mpath)) continue;
      json m = json::parse(read_file(mpath));
      for (const auto& rec : m.value("cit_records", json::array())) {
        if (rec.value("kind", "") == "review" &&
            !rec.value("origin_question_id", json()).is_null())
          used.insert(rec.at("origin_question_id").get<std::string>());
      }
    }
    return used;
  }

  std::map<std::string, std::vector<CorpusDocument>> materials_by_question(
      const std::map<std::string, std::vector<std::string>>& kp_by_question,
      const std::vector<CorpusDocument>& corpus) const {
    std::map<std::string, std::vector<CorpusDocument>> out;
    std::map<std::string, std::vector<const CorpusDocument*>> by_phrase;
    for (const auto& d : corpus)
      by_phrase[text::to_lower_ascii(d.knowledge_point)].push_back(&d);
    for (const auto& [qid, phrases] : kp_by_question) {
      for (const auto& p : phrases) {
        auto it = by_phrase.find(text::to_lower_ascii(p));
        if (it == by_phrase.end()) continue;
        for (const auto* d : it->second) out[qid].push_back(*d);
      }
    }
    return out;
  }

  RoundResult run_round(int r) {
    auto t0 = std::chrono::steady_clock::now();
    ensure_baseline();
    auto dir = round_dir(r);
    std::filesystem::create_directories(dir);

    auto prev_cem = load_report(r - 1, cfg.cem_task);
    std::vector<std::pair<QAItem, ModelResponse>> mistakes;
    std::vector<std::string> correct;
    for (const auto& resp : prev_cem.responses) {
      auto it = cem_items_by_id.find(resp.question_id);
      if (it == cem_items_by_id.end()) continue;
      if (resp.correct == true) correct.push_back(resp.question_id);
      else mistakes.emplace_back(it->second, resp);
    }

    // Stage 1: knowledge points for this round's mistakes.
    auto kp_path = dir / "kp.json";
    std::map<std::string, std::vector<std::string>> kp_by_question;
    if (std::filesystem::exists(kp_path)) {
      json j = json::parse(read_file(kp_path));
      kp_by_question =
          j.at("by_question")
              .get<std::map<std::string, std::vector<std::string>>>();
    } else {
      auto extraction = extract_all(mistakes, gw, cfg.judge, cfg.kp_x);
      kp_by_question = extraction.by_question;
      json j{{"schema_version", kSchemaVersion},
             {"by_question", extraction.by_question},
             {"pooled", extraction.pooled},
             {"failed", extraction.failed_questions}};
      write_file_atomic(kp_path, j.dump(2));
    }
    maybe_abort("kp");

    // Stage 2: corpus acquisition from the configured sources.
    auto corpus_path = dir / "corpus.jsonl";
    std::vector<CorpusDocument> corpus;
    if (std::filesystem::exists(corpus_path)) {
      corpus = read_jsonl<CorpusDocument>(corpus_path);
    } else {
      AcquireOptions opts;
      opts.search_k = cfg.search_k;
      opts.hi = cfg.hi;
      opts.lo = cfg.lo;
      opts.use_web = cfg.use_web && web != nullptr;
      opts.use_encyclopedia = cfg.use_encyclopedia && index.has_value();
      opts.run_effectiveness = cfg.run_effectiveness;
      opts.require_effective = cfg.require_effective;
      corpus = acquire_corpus(kp_by_question, cem_items_by_id, web.get(),
                              index ? &*index : nullptr,
                              index ? &dump : nullptr, gw, cfg.embedder,
                              cfg.judge, opts);
      write_jsonl(corpus_path, corpus);
    }
    maybe_abort("acquire");

    // Stage 3: training set construction.
    auto ts_dir = dir / "trainset";
    auto manifest_path = ts_dir / "manifest.json";
    json manifest;
    if (std::filesystem::exists(manifest_path)) {
      manifest = json::parse(read_file(manifest_path));
    } else {
      auto materials = materials_by_question(kp_by_question, corpus);
      std::map<RecordKind, std::vector<InstructionRecord>> components;

      // Normative: a fresh seeded sample of the task's questions each round.
      const auto& cem_items = datasets.at(cfg.cem_task);
      std::size_t n_cap = cfg.sizes.cit.count(RecordKind::Normative)
                              ? cfg.sizes.cit.at(RecordKind::Normative)
                              : 2000;
      Rng nrng(cfg.seed ^ (0xa5a5a5a5ULL + static_cast<std::uint64_t>(r)));
      auto nidx = nrng.sample_indices(cem_items.size(),
                                      std::min(n_cap, cem_items.size()));
      std::vector<QAItem> sampled;
      for (auto i : nidx) sampled.push_back(cem_items[i]);
      components[RecordKind::Normative] = make_normative(sampled);

      if (cfg.strategy == Strategy::Extractive ||
          cfg.strategy == Strategy::Review) {
        std::vector<QAItem> mistake_items;
        for (const auto& [item, resp] : mistakes) mistake_items.push_back(item);
        components[RecordKind::Extractive] =
            make_extractive(mistake_items, materials, gw, cfg.judge);
      }

      if (cfg.strategy == Strategy::Review) {
        auto used = used_review_ids(r);
        std::vector<std::pair<QAItem, std::vector<CorpusDocument>>> pool;
        for (const auto& qid : correct) {
          if (used.count(qid)) continue;  // non-repetitive across rounds
          auto it = cem_items_by_id.find(qid);
          if (it == cem_items_by_id.end()) continue;
          auto mit = materials.find(qid);
          pool.emplace_back(it->second,
                            mit == materials.end()
                                ? std::vector<CorpusDocument>{}
                                : mit->second);
        }
        auto review = make_review(pool, cfg.alpha,
                                  cfg.seed ^ (0x5eed0000ULL + r));
        components[RecordKind::Review] = std::move(review.records);
      }

      // General: random replay from held-out pools, or the configured pool.
      std::vector<InstructionRecord> gpool;
      if (cfg.replay.mode == ReplayConfig::Mode::Random) {
        for (const auto& [name, items] : datasets) {
          if (name == cfg.cem_task) continue;
          auto recs = make_normative(items);
          gpool.insert(gpool.end(), recs.begin(), recs.end());
        }
        if (cfg.replay.n > gpool.size())
          throw ValidationError("replay n exceeds held-out pool size");
        components[RecordKind::General] = sample_general(
            gpool, cfg.replay.n, cfg.seed ^ (0x6e6e0000ULL + r));
      } else if (!cfg.general_pool.empty()) {
        gpool = read_jsonl<InstructionRecord>(cfg.general_pool);
        std::size_t g_cap = cfg.sizes.cit.count(RecordKind::General)
                                ? cfg.sizes.cit.at(RecordKind::General)
                                : 2000;
        components[RecordKind::General] =
            sample_general(gpool, std::min(g_cap, gpool.size()),
                           cfg.seed ^ (0x6e6e0000ULL + r));
      }

      auto ts = assemble(cfg.strategy, corpus, components, cfg.sizes,
                         cfg.seed ^ static_cast<std::uint64_t>(r));
      serialize_trainset(ts, ts_dir);
      manifest = trainset_manifest(ts);
    }
    maybe_abort("build");

    // Stage 4: external train step (or simulated, or dry run).
    bool dry = false;
    auto train_marker = dir / "train.done";
    if (!std::filesystem::exists(train_marker)) {
      if (sim_mode) {
        sim_use_store(r - 1);
        world->train_on_combined(ts_dir / "combined.jsonl");
        world->store().save(dir / "store.json");
      } else if (!cfg.train_hook.empty()) {
        std::string cmd = cfg.train_hook;
        auto sub = [&](const std::string& key, const std::string& val) {
          auto pos = cmd.find(key);
          while (pos != std::string::npos) {
            cmd.replace(pos, key.size(), val);
            pos = cmd.find(key, pos + val.size());
          }
        };
        sub("{combined}", (ts_dir / "combined.jsonl").string());
        sub("{cpt}", (ts_dir / "cpt.jsonl").string());
        sub("{cit}", (ts_dir / "cit.jsonl").string());
        sub("{manifest}", manifest_path.string());
        int rc = std::system(cmd.c_str());
        if (rc != 0)
          throw TransportError("train hook failed with status " +
                               std::to_string(rc));
      } else {
        dry = true;  // no hook: stop at trainset emission
      }
      write_file_atomic(train_marker, dry ? "dry\n" : "trained\n");
    } else {
      dry = read_file(train_marker).rfind("dry", 0) == 0;
    }
    maybe_abort("train");

    // Stage 5: re-test every task.
    if (!dry) {
      sim_use_store(r);
      for (const auto& [name, items] : datasets) {
        auto path = dir / "reports" / (name + ".jsonl");
        if (std::filesystem::exists(path)) continue;
        write_jsonl(path,
                    std::vector<EvaluationReport>{eval_task(name, r)});
      }
    } else {
      // dry runs end at trainset emission; the round carries the previous
      // round's reports forward
      for (const auto& [name, items] : datasets) {
        auto path = dir / "reports" / (name + ".jsonl");
        if (std::filesystem::exists(path)) continue;
        write_jsonl(path, std::vector<EvaluationReport>{
                              load_report(r - 1, name)});
      }
    }
    maybe_abort("eval");

    // Stage 6: the round result.
    RoundResult result;
    auto result_path = dir / "result.json";
    if (std::filesystem::exists(result_path)) {
      result = json::parse(read_file(result_path)).get<RoundResult>();
    } else {
      result.round = r;
      result.dry_run = dry;
      result.trainset_manifest = manifest;
      auto curr_cem = load_report(r, cfg.cem_task);
      auto d = diff_rounds(prev_cem, curr_cem);
      result.w2r = d.w2r;
      result.r2w = d.r2w;
      MultiTaskLedger ledger;
      ledger.cem_task = cfg.cem_task;
      bool afr_ok = datasets.size() >= 2;
      for (const auto& [name, items] : datasets) {
        auto base = load_report(0, name);
        auto curr = load_report(r, name);
        result.accuracies[name] = curr.accuracy;
        ledger.tasks[name] = {base.accuracy, curr.accuracy};
        if (name != cfg.cem_task && base.accuracy <= 0.0) afr_ok = false;
      }
      auto base_cem = load_report(0, cfg.cem_task);
      if (base_cem.accuracy > 0.0)
        result.er = enhancement_rate(base_cem.accuracy, curr_cem.accuracy);
      if (afr_ok) result.afr = average_forgetting_rate(ledger);
      result.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      json out = result;
      write_file_atomic(result_path, out.dump(2));

      RoundState state;
      state.round = r;
      state.reports[cfg.cem_task] = curr_cem;
      state.mistake_ids = mistake_ids(curr_cem);
      state.correct_ids = correct_ids(curr_cem);
      write_file_atomic(dir / "state.json", serialize_round(state));
    }
    return result;
  }
};

Orchestrator::Orchestrator(RunConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Orchestrator::~Orchestrator() = default;

Gateway& Orchestrator::gateway() { return impl_->gw; }

RoundResult Orchestrator::run_round(int round) {
  return impl_->run_round(round);
}

std::vector<RoundResult> Orchestrator::iterate() {
  impl_->ensure_baseline();
  std::vector<RoundResult> results;
  for (int r = 1; r <= impl_->cfg.rounds; ++r)
    results.push_back(impl_->run_round(r));
  return results;
}

std::string Orchestrator::report_text(const std::vector<RoundResult>& results,
                                      const std::string& cem_task) {
  std::ostringstream os;
  os << "round  acc(" << cem_task << ")  w2r     r2w     er      afr\n";
  for (const auto& r : results) {
    double acc = r.accuracies.count(cem_task) ? r.accuracies.at(cem_task) : 0;
    char line[160];
    std::snprintf(line, sizeof line,
                  "%-6d %-10.4f  %-6.4f  %-6.4f  %-6s  %-6s\n", r.round, acc,
                  r.w2r, r.r2w,
                  r.er ? std::to_string(*r.er).substr(0, 6).c_str() : "-",
                  r.afr ? std::to_string(*r.afr).substr(0, 6).c_str() : "-");
    os << line;
  }
  return os.str();
}

json Orchestrator::report_series(const std::vector<RoundResult>& results) {
  json series = json::array();
  for (const auto& r : results) {
    json row{{"round", r.round},
             {"accuracies", r.accuracies},
             {"w2r", r.w2r},
             {"r2w", r.r2w}};
    row["er"] = r.er ? json(*r.er) : json();
    row["afr"] = r.afr ? json(*r.afr) : json();
    series.push_back(row);
  }
  return series;
}

}  // namespace cem
