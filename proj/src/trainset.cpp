#include "cem/trainset.hpp"

#include <algorithm>
#include <cmath>

#include "cem/jsonl.hpp"
#include "cem/rng.hpp"
#include "cem/text.hpp"

namespace cem {

Templates Templates::load(const std::filesystem::path& file) {
  Templates t;
  json j = json::parse(read_file(file));
  t.normative_task = j.value("normative_task", t.normative_task);
  t.extractive_task = j.value("extractive_task", t.extractive_task);
  t.entailment_task = j.value("entailment_task", t.entailment_task);
  return t;
}

std::string normative_instruction(const QAItem& item, const Templates& tpl) {
  return tpl.normative_task + "\n### Question:\n" + item.stem + "\n" +
         item.options_line();
}

std::string normative_output(const QAItem& item) {
  const std::string* answer = item.option_text(item.gold);
  std::string text = answer ? *answer : std::string(1, item.gold);
  std::string out = "The answer is " + std::string(1, item.gold) + ". " +
                    text + ". ";
  // Restate the stem with the answer: fill-in-the-blank stems get the blank
  // replaced; otherwise the answer sentence stands alone after the stem.
  auto blank = item.stem.find("___");
  if (blank != std::string::npos) {
    auto end = blank;
    while (end < item.stem.size() && item.stem[end] == '_') ++end;
    out += item.stem.substr(0, blank) + text + item.stem.substr(end);
  } else {
    out += item.stem + " " + text;
  }
  if (out.back() != '.' && out.back() != '?' && out.back() != '!') out += '.';
  return out;
}

std::string extractive_instruction(const QAItem& item,
                                   const std::string& material,
                                   const Templates& tpl) {
  return tpl.extractive_task + "\n### Question:\n" + item.stem + "\n" +
         item.options_line() + "\n### Supplementary Materials:\n" + material;
}

std::string entailment_prompt_for(const QAItem& item,
                                  const std::string& material,
                                  const Templates& tpl) {
  return tpl.entailment_task + "\n### Question:\n" + item.stem + "\n" +
         item.options_line() + "\n### Answer\n" + normative_output(item) +
         "\n### Materials:\n" + material;
}

std::vector<InstructionRecord> make_normative(const std::vector<QAItem>& items,
                                              const Templates& tpl) {
  std::vector<InstructionRecord> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    InstructionRecord r;
    r.kind = RecordKind::Normative;
    r.instruction = normative_instruction(item, tpl);
    r.output = normative_output(item);
    r.origin_question_id = item.id;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Highest relevance first, ties by lowest doc_id; leak-filtered and empty
// documents are not candidates.
std::vector<const CorpusDocument*> ranked_materials(
    const std::vector<CorpusDocument>& docs) {
  std::vector<const CorpusDocument*> out;
  for (const auto& d : docs) {
    if (!d.leak_filtered && !d.body.empty()) out.push_back(&d);
  }
  std::sort(out.begin(), out.end(),
            [](const CorpusDocument* a, const CorpusDocument* b) {
              double ra = a->relevance_score.value_or(0.0);
              double rb = b->relevance_score.value_or(0.0);
              if (ra != rb) return ra > rb;
              return a->doc_id < b->doc_id;
            });
  return out;
}

}  // namespace

std::vector<InstructionRecord> make_extractive(
    const std::vector<QAItem>& items,
    const std::map<std::string, std::vector<CorpusDocument>>& materials,
    Gateway& gw, const EndpointConfig& judge, const Templates& tpl,
    std::size_t token_budget) {
  std::vector<InstructionRecord> out;
  for (const auto& item : items) {
    auto it = materials.find(item.id);
    if (it == materials.end()) continue;
    for (const auto* doc : ranked_materials(it->second)) {
      std::string material = text::truncate_tokens(doc->body, token_budget);
      bool pass = false;
      try {
        pass = gw.judge_yes_no(judge,
                               entailment_prompt_for(item, material, tpl));
      } catch (const JudgeIndeterminate&) {
        pass = false;
      }
      if (!pass) continue;
      InstructionRecord r;
      r.kind = RecordKind::Extractive;
      r.instruction = extractive_instruction(item, material, tpl);
      r.output = normative_output(item);
      r.origin_question_id = item.id;
      out.push_back(std::move(r));
      break;  // one record per item, best passing material
    }
  }
  return out;
}

ReviewResult make_review(
    const std::vector<std::pair<QAItem, std::vector<CorpusDocument>>>& pool,
    double alpha, std::uint64_t seed, const Templates& tpl,
    std::size_t token_budget) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ValidationError("review alpha must be in [0,1]");
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::size_t n_normative = static_cast<std::size_t>(
      std::floor(alpha * static_cast<double>(pool.size())));
  ReviewResult result;
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const auto& [item, docs] = pool[order[slot]];
    InstructionRecord r;
    r.kind = RecordKind::Review;
    r.origin_question_id = item.id;
    r.output = normative_output(item);
    bool want_extractive = slot >= n_normative;
    const CorpusDocument* mat = nullptr;
    if (want_extractive) {
      auto ranked = ranked_materials(docs);
      if (!ranked.empty()) mat = ranked.front();
    }
    if (want_extractive && mat) {
      r.instruction = extractive_instruction(
          item, text::truncate_tokens(mat->body, token_budget), tpl);
    } else {
      if (want_extractive) ++result.fallback_count;
      r.instruction = normative_instruction(item, tpl);
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

std::vector<InstructionRecord> sample_general(
    const std::vector<InstructionRecord>& pool, std::size_t n,
    std::uint64_t seed) {
  if (n > pool.size())
    throw ValidationError("sample_general: n exceeds pool size");
  Rng rng(seed);
  auto idx = rng.sample_indices(pool.size(), n);
  std::vector<InstructionRecord> out;
  out.reserve(n);
  for (auto i : idx) {
    InstructionRecord r = pool[i];
    r.kind = RecordKind::General;
    out.push_back(std::move(r));
  }
  return out;
}

TrainingSet assemble(
    Strategy strategy, std::vector<CorpusDocument> corpus,
    const std::map<RecordKind, std::vector<InstructionRecord>>& components,
    const AssembleSizes& sizes, std::uint64_t seed) {
  TrainingSet ts;
  ts.strategy = strategy;
  ts.shuffle_seed = seed;

  for (const auto& [kind, recs] : components) {
    if (!recs.empty() && !kind_allowed(strategy, kind))
      throw ValidationError(std::string("component kind ") + to_string(kind) +
                            " not allowed under strategy " +
                            to_string(strategy));
  }

  std::erase_if(corpus, [](const CorpusDocument& d) {
    return d.leak_filtered || d.body.empty();
  });
  if (corpus.size() > sizes.cpt) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto idx = rng.sample_indices(corpus.size(), sizes.cpt);
    std::sort(idx.begin(), idx.end());  // keep the original document order
    std::vector<CorpusDocument> sampled;
    sampled.reserve(idx.size());
    for (auto i : idx) sampled.push_back(std::move(corpus[i]));
    corpus = std::move(sampled);
  }
  ts.cpt = std::move(corpus);

  for (const auto& [kind, recs] : components) {
    auto it = sizes.cit.find(kind);
    std::size_t cap = it == sizes.cit.end() ? recs.size() : it->second;
    std::size_t take = std::min(cap, recs.size());
    for (std::size_t i = 0; i < take; ++i) {
      if (recs[i].kind != kind)
        throw ValidationError("component list for " +
                              std::string(to_string(kind)) +
                              " contains a record of kind " +
                              to_string(recs[i].kind));
      ts.cit.push_back(recs[i]);
    }
  }

  auto violations = validate(ts);
  if (!violations.empty()) throw ValidationError(violations.front());
  return ts;
}

json trainset_manifest(const TrainingSet& ts) {
  json counts = json::object();
  for (const auto& r : ts.cit) {
    std::string k = to_string(r.kind);
    counts[k] = counts.value(k, 0) + 1;
  }
  json doc_ids = json::array();
  for (const auto& d : ts.cpt) doc_ids.push_back(d.doc_id);
  json cit_origins = json::array();
  for (const auto& r : ts.cit) {
    cit_origins.push_back(json{
        {"kind", to_string(r.kind)},
        {"origin_question_id",
         r.origin_question_id ? json(*r.origin_question_id) : json()}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"strategy", to_string(ts.strategy)},
              {"shuffle_seed", ts.shuffle_seed},
              {"cpt_count", ts.cpt.size()},
              {"cit_count", ts.cit.size()},
              {"cit_kind_counts", counts},
              {"cpt_doc_ids", doc_ids},
              {"cit_records", cit_origins}};
}

TrainsetFiles serialize_trainset(const TrainingSet& ts,
                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  TrainsetFiles files{dir / "cpt.jsonl", dir / "cit.jsonl",
                      dir / "combined.jsonl", dir / "manifest.json"};

  // CPT records carry raw text only; no instruction wrapper.
  std::vector<std::string> cpt_lines, cit_lines;
  for (const auto& d : ts.cpt) {
    json j{{"schema_version", kSchemaVersion},
           {"doc_id", d.doc_id},
           {"source", to_string(d.source)},
           {"knowledge_point", d.knowledge_point},
           {"title", d.title},
           {"text", d.body}};
    cpt_lines.push_back(j.dump());
  }
  for (const auto& r : ts.cit) {
    json j = r;
    cit_lines.push_back(j.dump());
  }

  auto join = [](const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) {
      out += l;
      out += '\n';
    }
    return out;
  };
  write_file(files.cpt, join(cpt_lines));
  write_file(files.cit, join(cit_lines));

  // Combined file for single-stage parallel training: both streams tagged
  // and interleaved in the seeded permutation.
  std::vector<std::string> combined;
  combined.reserve(cpt_lines.size() + cit_lines.size());
  for (const auto& l : cpt_lines)
    combined.push_back(json{{"type", "cpt"}, {"record", json::parse(l)}}.dump());
  for (const auto& l : cit_lines)
    combined.push_back(json{{"type", "cit"}, {"record", json::parse(l)}}.dump());
  Rng rng(ts.shuffle_seed);
  rng.shuffle(combined);
  write_file(files.combined, join(combined));

  write_file(files.manifest, trainset_manifest(ts).dump(2) + "\n");
  return files;
}

}  // namespace cem
