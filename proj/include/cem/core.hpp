#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cem {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct JudgeIndeterminate : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One multiple-choice question. Labels are uppercase letters, contiguous
// from 'A'; gold names one of them.
struct QAItem {
  std::string id;
  std::string stem;
  std::vector<std::pair<char, std::string>> options;  // (label, text)
  char gold = 0;
  std::optional<std::string> subject;

  const std::string* option_text(char label) const;
  // "A. Red Sea  B. Caspian Sea  C. Mediterranean Sea  D. Black Sea"
  std::string options_line() const;

  bool operator==(const QAItem&) const = default;
};

// All invariant violations of an item; empty means valid.
std::vector<std::string> validate(const QAItem& item);

struct ModelResponse {
  std::string question_id;
  std::string raw_text;
  std::optional<char> extracted;
  std::optional<bool> correct;  // set iff extracted is set

  bool operator==(const ModelResponse&) const = default;
};

struct EvaluationReport {
  int round = 0;
  std::vector<ModelResponse> responses;
  double accuracy = 0.0;

  // Computes accuracy with unparseable responses counted incorrect.
  static EvaluationReport from_responses(int round,
                                         std::vector<ModelResponse> responses);

  bool operator==(const EvaluationReport&) const = default;
};

struct KnowledgePoint {
  std::string question_id;
  std::string phrase;

  bool operator==(const KnowledgePoint&) const = default;
};

enum class Source { Web, Encyclopedia };

struct CorpusDocument {
  std::string doc_id;
  Source source = Source::Web;
  std::string knowledge_point;
  std::string title;
  std::string body;
  std::optional<double> relevance_score;
  bool leak_filtered = false;
  std::optional<bool> effective;

  bool operator==(const CorpusDocument&) const = default;
};

enum class RecordKind { Normative, Extractive, Review, General };

struct InstructionRecord {
  RecordKind kind = RecordKind::Normative;
  std::string instruction;
  std::string output;
  std::optional<std::string> origin_question_id;

  bool operator==(const InstructionRecord&) const = default;
};

enum class Strategy { Plain, Extractive, Review };

// Parallel CPT + CIT mixture; interleaving happens only at serialization,
// governed by shuffle_seed.
struct TrainingSet {
  Strategy strategy = Strategy::Plain;
  std::vector<CorpusDocument> cpt;
  std::vector<InstructionRecord> cit;
  std::uint64_t shuffle_seed = 0;

  bool operator==(const TrainingSet&) const = default;
};

// Which instruction kinds a strategy's CIT may contain.
bool kind_allowed(Strategy s, RecordKind k);
std::vector<std::string> validate(const TrainingSet& ts);

struct RoundState {
  int round = 0;
  std::map<std::string, EvaluationReport> reports;  // task name -> report
  std::vector<std::string> mistake_ids;
  std::vector<std::string> correct_ids;  // prior-round correct pool (Review)
  std::vector<InstructionRecord> replay_pool;

  bool operator==(const RoundState&) const = default;
};

const char* to_string(Source s);
const char* to_string(RecordKind k);
const char* to_string(Strategy s);
Source source_from_string(const std::string& s);
RecordKind kind_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

void to_json(json& j, const QAItem& v);
void from_json(const json& j, QAItem& v);
void to_json(json& j, const ModelResponse& v);
void from_json(const json& j, ModelResponse& v);
void to_json(json& j, const EvaluationReport& v);
void from_json(const json& j, EvaluationReport& v);
void to_json(json& j, const KnowledgePoint& v);
void from_json(const json& j, KnowledgePoint& v);
void to_json(json& j, const CorpusDocument& v);
void from_json(const json& j, CorpusDocument& v);
void to_json(json& j, const InstructionRecord& v);
void from_json(const json& j, InstructionRecord& v);
void to_json(json& j, const TrainingSet& v);
void from_json(const json& j, TrainingSet& v);
void to_json(json& j, const RoundState& v);
void from_json(const json& j, RoundState& v);

// Versioned, deterministic encoding; round-trips losslessly.
std::string serialize_round(const RoundState& state);
RoundState deserialize_round(const std::string& bytes);

}  // namespace cem
