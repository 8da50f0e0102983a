#include "cem/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace cem {

const std::string* QAItem::option_text(char label) const {
  for (const auto& [l, t] : options) {
    if (l == label) return &t;
  }
  return nullptr;
}

std::string QAItem::options_line() const {
  std::string line;
  for (const auto& [l, t] : options) {
    if (!line.empty()) line += "  ";
    line += l;
    line += ". ";
    line += t;
  }
  return line;
}

std::vector<std::string> validate(const QAItem& item) {
  std::vector<std::string> v;
  if (item.id.empty()) v.push_back("id non-empty");
  if (item.stem.empty()) v.push_back("stem non-empty");
  if (item.options.size() < 2) v.push_back("at least 2 options");
  std::set<char> labels;
  bool dup = false;
  for (const auto& [l, t] : item.options) {
    if (!labels.insert(l).second) dup = true;
  }
  if (dup) v.push_back("labels unique");
  bool contiguous = true;
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    if (item.options[i].first != static_cast<char>('A' + i)) contiguous = false;
  }
  if (!contiguous) v.push_back("labels contiguous from A");
  if (!labels.count(item.gold)) v.push_back("gold in labels");
  return v;
}

EvaluationReport EvaluationReport::from_responses(
    int round, std::vector<ModelResponse> responses) {
  EvaluationReport r;
  r.round = round;
  std::size_t correct = 0;
  for (const auto& resp : responses) {
    if (resp.correct == true) ++correct;
  }
  r.accuracy = responses.empty()
                   ? 0.0
                   : static_cast<double>(correct) / responses.size();
  r.responses = std::move(responses);
  return r;
}

bool kind_allowed(Strategy s, RecordKind k) {
  switch (k) {
    case RecordKind::Normative:
    case RecordKind::General:
      return true;
    case RecordKind::Extractive:
      return s == Strategy::Extractive || s == Strategy::Review;
    case RecordKind::Review:
      return s == Strategy::Review;
  }
  return false;
}

std::vector<std::string> validate(const TrainingSet& ts) {
  std::vector<std::string> v;
  for (const auto& rec : ts.cit) {
    if (!kind_allowed(ts.strategy, rec.kind)) {
      v.push_back(std::string("kind ") + to_string(rec.kind) +
                  " not allowed under strategy " + to_string(ts.strategy));
      break;
    }
  }
  for (const auto& doc : ts.cpt) {
    if (doc.leak_filtered) {
      v.push_back("leak-filtered document " + doc.doc_id + " in training set");
      break;
    }
    if (doc.body.empty()) {
      v.push_back("empty document body " + doc.doc_id);
      break;
    }
  }
  return v;
}

const char* to_string(Source s) {
  return s == Source::Web ? "web" : "encyclopedia";
}

const char* to_string(RecordKind k) {
  switch (k) {
    case RecordKind::Normative:
      return "normative";
    case RecordKind::Extractive:
      return "extractive";
    case RecordKind::Review:
      return "review";
    case RecordKind::General:
      return "general";
  }
  return "?";
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Plain:
      return "plain";
    case Strategy::Extractive:
      return "extractive";
    case Strategy::Review:
      return "review";
  }
  return "?";
}

Source source_from_string(const std::string& s) {
  if (s == "web") return Source::Web;
  if (s == "encyclopedia" || s == "wiki") return Source::Encyclopedia;
  throw ValidationError("unknown source: " + s);
}

RecordKind kind_from_string(const std::string& s) {
  if (s == "normative") return RecordKind::Normative;
  if (s == "extractive") return RecordKind::Extractive;
  if (s == "review") return RecordKind::Review;
  if (s == "general") return RecordKind::General;
  throw ValidationError("unknown record kind: " + s);
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "plain") return Strategy::Plain;
  if (s == "extractive") return Strategy::Extractive;
  if (s == "review") return Strategy::Review;
  throw ValidationError("unknown strategy: " + s);
}

namespace {

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key) && !j.at(key).is_null()) {
    v = j.at(key).get<T>();
  } else {
    v.reset();
  }
}

}  // namespace

void to_json(json& j, const QAItem& v) {
  json opts = json::object();
  for (const auto& [l, t] : v.options) opts[std::string(1, l)] = t;
  j = json{{"id", v.id},
           {"question", v.stem},
           {"options", opts},
           {"answer", std::string(1, v.gold)}};
  put_opt(j, "subject", v.subject);
}

void from_json(const json& j, QAItem& v) {
  v.id = j.at("id").get<std::string>();
  v.stem = j.at("question").get<std::string>();
  v.options.clear();
  for (const auto& [k, t] : j.at("options").items()) {
    if (k.size() != 1) throw ValidationError("option label not a letter: " + k);
    char label = static_cast<char>(
        std::toupper(static_cast<unsigned char>(k[0])));
    v.options.emplace_back(label, t.get<std::string>());
  }
  std::sort(v.options.begin(), v.options.end());
  std::string gold = j.at("answer").get<std::string>();
  if (gold.empty()) throw ValidationError("empty answer label");
  v.gold =
      static_cast<char>(std::toupper(static_cast<unsigned char>(gold[0])));
  get_opt(j, "subject", v.subject);
}

void to_json(json& j, const ModelResponse& v) {
  j = json{{"question_id", v.question_id}, {"raw_text", v.raw_text}};
  if (v.extracted) j["extracted"] = std::string(1, *v.extracted);
  if (v.correct) j["correct"] = *v.correct;
}

void from_json(const json& j, ModelResponse& v) {
  v.question_id = j.at("question_id").get<std::string>();
  v.raw_text = j.at("raw_text").get<std::string>();
  v.extracted.reset();
  if (j.contains("extracted") && !j.at("extracted").is_null()) {
    auto s = j.at("extracted").get<std::string>();
    if (!s.empty()) v.extracted = s[0];
  }
  get_opt(j, "correct", v.correct);
}

void to_json(json& j, const EvaluationReport& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"round", v.round},
           {"accuracy", v.accuracy},
           {"responses", v.responses}};
}

void from_json(const json& j, EvaluationReport& v) {
  v.round = j.at("round").get<int>();
  v.accuracy = j.at("accuracy").get<double>();
  v.responses = j.at("responses").get<std::vector<ModelResponse>>();
}

void to_json(json& j, const KnowledgePoint& v) {
  j = json{{"question_id", v.question_id}, {"phrase", v.phrase}};
}

void from_json(const json& j, KnowledgePoint& v) {
  v.question_id = j.at("question_id").get<std::string>();
  v.phrase = j.at("phrase").get<std::string>();
}

void to_json(json& j, const CorpusDocument& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"doc_id", v.doc_id},
           {"source", to_string(v.source)},
           {"knowledge_point", v.knowledge_point},
           {"title", v.title},
           {"body", v.body},
           {"leak_filtered", v.leak_filtered}};
  put_opt(j, "relevance_score", v.relevance_score);
  put_opt(j, "effective", v.effective);
}

void from_json(const json& j, CorpusDocument& v) {
  v.doc_id = j.at("doc_id").get<std::string>();
  v.source = source_from_string(j.at("source").get<std::string>());
  v.knowledge_point = j.at("knowledge_point").get<std::string>();
  v.title = j.at("title").get<std::string>();
  v.body = j.at("body").get<std::string>();
  v.leak_filtered = j.value("leak_filtered", false);
  get_opt(j, "relevance_score", v.relevance_score);
  get_opt(j, "effective", v.effective);
}

void to_json(json& j, const InstructionRecord& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"kind", to_string(v.kind)},
           {"instruction", v.instruction},
           {"output", v.output}};
  put_opt(j, "origin_question_id", v.origin_question_id);
}

void from_json(const json& j, InstructionRecord& v) {
  v.kind = kind_from_string(j.at("kind").get<std::string>());
  v.instruction = j.at("instruction").get<std::string>();
  v.output = j.at("output").get<std::string>();
  get_opt(j, "origin_question_id", v.origin_question_id);
}

void to_json(json& j, const TrainingSet& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"strategy", to_string(v.strategy)},
           {"cpt", v.cpt},
           {"cit", v.cit},
           {"shuffle_seed", v.shuffle_seed}};
}

void from_json(const json& j, TrainingSet& v) {
  v.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  v.cpt = j.at("cpt").get<std::vector<CorpusDocument>>();
  v.cit = j.at("cit").get<std::vector<InstructionRecord>>();
  v.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
}

void to_json(json& j, const RoundState& v) {
  j = json{{"schema_version", kSchemaVersion},
           {"round", v.round},
           {"reports", v.reports},
           {"mistake_ids", v.mistake_ids},
           {"correct_ids", v.correct_ids},
           {"replay_pool", v.replay_pool}};
}

void from_json(const json& j, RoundState& v) {
  v.round = j.at("round").get<int>();
  v.reports = j.at("reports").get<std::map<std::string, EvaluationReport>>();
  v.mistake_ids = j.at("mistake_ids").get<std::vector<std::string>>();
  v.correct_ids = j.at("correct_ids").get<std::vector<std::string>>();
  v.replay_pool =
      j.at("replay_pool").get<std::vector<InstructionRecord>>();
}

std::string serialize_round(const RoundState& state) {
  json j = state;
  return j.dump();
}

RoundState deserialize_round(const std::string& bytes) {
  json j = json::parse(bytes);
  int ver = j.value("schema_version", 0);
  if (ver != kSchemaVersion) {
    throw ValidationError("unsupported round state schema version " +
                          std::to_string(ver));
  }
  return j.get<RoundState>();
}

}  // namespace cem
