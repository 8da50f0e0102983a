#include "cem/sim.hpp"

#include <algorithm>
#include <cmath>

#include "cem/jsonl.hpp"
#include "cem/rng.hpp"
#include "cem/trainset.hpp"

namespace cem::sim {

std::vector<std::string> extract_fact_keys(const std::string& text) {
  std::vector<std::string> out;
  const std::string open = "((fact:";
  std::size_t pos = 0;
  while ((pos = text.find(open, pos)) != std::string::npos) {
    auto end = text.find("))", pos + open.size());
    if (end == std::string::npos) break;
    out.push_back(text.substr(pos + open.size(), end - pos - open.size()));
    pos = end + 2;
  }
  return out;
}

void KnowledgeStore::insert(const std::string& key) {
  if (known_.count(key)) {
    order_.erase(std::find(order_.begin(), order_.end(), key));
  } else {
    known_.insert(key);
  }
  order_.push_back(key);
  while (capacity_ > 0 && order_.size() > capacity_) {
    known_.erase(order_.front());
    order_.erase(order_.begin());
  }
}

void KnowledgeStore::refresh(const std::string& key) {
  if (!known_.count(key)) return;
  order_.erase(std::find(order_.begin(), order_.end(), key));
  order_.push_back(key);
}

json KnowledgeStore::to_json() const {
  return json{{"schema_version", kSchemaVersion},
              {"capacity", capacity_},
              {"noise_seed", noise_seed_},
              {"order", order_}};
}

KnowledgeStore KnowledgeStore::from_json(const json& j) {
  KnowledgeStore s(j.at("capacity").get<std::size_t>(),
                   j.at("noise_seed").get<std::uint64_t>());
  for (const auto& k : j.at("order")) s.insert(k.get<std::string>());
  return s;
}

void KnowledgeStore::save(const std::filesystem::path& file) const {
  write_file_atomic(file, to_json().dump());
}

KnowledgeStore KnowledgeStore::load(const std::filesystem::path& file) {
  return from_json(json::parse(read_file(file)));
}

void to_json(json& j, const SimItem& v) {
  j = json(v.qa);
  j["fact_key"] = v.fact_key;
  j["phrases"] = v.phrases;
}

void from_json(const json& j, SimItem& v) {
  v.qa = j.get<QAItem>();
  v.fact_key = j.value("fact_key", "");
  v.phrases = j.value("phrases", std::vector<std::string>{});
}

SimWorld::SimWorld(std::vector<SimItem> items, KnowledgeStore store)
    : items_(std::move(items)), store_(std::move(store)) {}

std::string SimWorld::answer(const QAItem& item) const {
  const SimItem* si = nullptr;
  for (const auto& s : items_) {
    if (s.qa.id == item.id) {
      si = &s;
      break;
    }
  }
  bool knows = si && store_.knows(si->fact_key);
  char label;
  if (knows) {
    label = item.gold;
  } else {
    // deterministic wrong option, seeded by (noise seed, question id)
    std::size_t n = item.options.size();
    Rng rng(store_.noise_seed() ^ fnv1a64(item.id));
    std::size_t pick = rng.next_below(n > 1 ? n - 1 : 1);
    std::size_t gold_idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (item.options[i].first == item.gold) gold_idx = i;
    }
    if (pick >= gold_idx) ++pick;
    label = item.options[std::min(pick, n - 1)].first;
  }
  std::string text;
  if (const auto* t = item.option_text(label)) text = *t;
  return "The answer is " + std::string(1, label) + ". " + text + ".";
}

const SimItem* SimWorld::find_by_prompt(const std::string& prompt) const {
  for (const auto& s : items_) {
    if (!s.qa.stem.empty() && prompt.find(s.qa.stem) != std::string::npos)
      return &s;
  }
  return nullptr;
}

std::string SimWorld::chat(const std::string& prompt) {
  std::lock_guard lk(mu_);
  const SimItem* si = find_by_prompt(prompt);
  if (prompt.find("core knowledge points") != std::string::npos) {
    json list = json::array();
    if (si)
      for (const auto& p : si->phrases) list.push_back(p);
    return list.dump();
  }
  if (prompt.find("Please respond with 'Yes' or 'No'") != std::string::npos) {
    // entailment: the material block must carry the item's fact tag or the
    // gold option text
    auto mpos = prompt.find("### Materials:");
    std::string material =
        mpos == std::string::npos ? "" : prompt.substr(mpos);
    if (!si) return "No.";
    bool yes = false;
    for (const auto& k : extract_fact_keys(material)) {
      if (k == si->fact_key) yes = true;
    }
    const auto* gold_text = si->qa.option_text(si->qa.gold);
    if (gold_text && !gold_text->empty() &&
        material.find(*gold_text) != std::string::npos)
      yes = true;
    return yes ? "Yes." : "No.";
  }
  if (!si) return "I cannot find this question.";
  return answer(si->qa);
}

std::vector<std::vector<double>> SimWorld::embed(
    const std::vector<std::string>& texts, int dim) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    Rng rng(fnv1a64(t));
    std::vector<double> v(dim);
    double sq = 0.0;
    for (auto& x : v) {
      x = rng.next_unit() * 2.0 - 1.0;
      sq += x * x;
    }
    double norm = std::sqrt(sq);
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

void SimWorld::apply_record(RecordKind kind, const std::string& text) {
  auto keys = extract_fact_keys(text);
  switch (kind) {
    case RecordKind::Extractive:
    case RecordKind::Review:
      for (const auto& k : keys) store_.insert(k);
      break;
    case RecordKind::General:
      for (const auto& k : keys) store_.refresh(k);
      break;
    case RecordKind::Normative:
      break;  // schema alignment only, no knowledge change
  }
}

void SimWorld::train(const TrainingSet& ts) {
  std::lock_guard lk(mu_);
  // replay the serialization order so training sees the seeded interleaving
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < ts.cpt.size(); ++i)
    lines.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < ts.cit.size(); ++i)
    lines.push_back("i" + std::to_string(i));
  Rng rng(ts.shuffle_seed);
  rng.shuffle(lines);
  for (const auto& l : lines) {
    std::size_t idx = std::stoul(l.substr(1));
    if (l[0] == 'c') {
      for (const auto& k : extract_fact_keys(ts.cpt[idx].body))
        store_.insert(k);
    } else {
      const auto& r = ts.cit[idx];
      apply_record(r.kind, r.instruction + "\n" + r.output);
    }
  }
}

void SimWorld::train_on_combined(const std::filesystem::path& combined_jsonl) {
  std::lock_guard lk(mu_);
  std::ifstream in(combined_jsonl);
  if (!in) throw IoError("cannot open " + combined_jsonl.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const auto& rec = j.at("record");
    if (j.at("type") == "cpt") {
      for (const auto& k :
           extract_fact_keys(rec.at("text").get<std::string>()))
        store_.insert(k);
    } else {
      apply_record(kind_from_string(rec.at("kind").get<std::string>()),
                   rec.at("instruction").get<std::string>() + "\n" +
                       rec.at("output").get<std::string>());
    }
  }
}

void SimWorld::register_on(Gateway& gw, const std::string& learner_name,
                           const std::string& judge_name,
                           const std::string& embedder_name) {
  auto chat_fn = [this](const std::string& prompt) { return chat(prompt); };
  gw.register_sim_chat(learner_name, chat_fn);
  gw.register_sim_chat(judge_name, chat_fn);
  gw.register_sim_embed(embedder_name, [](const std::vector<std::string>& t) {
    return embed(t);
  });
}

}  // namespace cem::sim
