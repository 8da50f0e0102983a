#pragma once

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cem/core.hpp"

namespace cem {

// One external model endpoint (learner, embedder or judge). base_url is
// either an http(s) URL speaking the OpenAI-compatible protocol, or
// "sim:<name>" selecting an in-process handler registered on the gateway.
struct EndpointConfig {
  std::string name;
  std::string base_url;
  std::string model;
  std::string api_key;
  double temperature = 0.0;
  int max_in_flight = 4;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_ms = 100;

  bool is_sim() const { return base_url.rfind("sim:", 0) == 0; }
  std::string sim_name() const { return base_url.substr(4); }
};

void to_json(json& j, const EndpointConfig& v);
void from_json(const json& j, EndpointConfig& v);

// Fills api_key from CEM_<NAME>_API_KEY when the config left it empty.
void apply_env_credentials(EndpointConfig& cfg);

// Uniform client for chat, embedding and yes/no judging over HTTP, with
// exponential-backoff retries, a per-endpoint in-flight cap, and a
// content-addressed response cache that survives restarts. Shareable
// across threads.
class Gateway {
 public:
  using SimChat = std::function<std::string(const std::string& prompt)>;
  using SimEmbed = std::function<std::vector<std::vector<double>>(
      const std::vector<std::string>& texts)>;

  explicit Gateway(std::filesystem::path cache_dir = {});
  ~Gateway();

  void register_sim_chat(const std::string& name, SimChat fn);
  void register_sim_embed(const std::string& name, SimEmbed fn);

  // Returns the completion text verbatim.
  std::string chat(const EndpointConfig& ep, const std::string& prompt);

  // One L2-normalized vector per input text, all of equal dimension.
  std::vector<std::vector<double>> embed(const EndpointConfig& ep,
                                         const std::vector<std::string>& texts);

  // Leading-token Yes/No match; throws JudgeIndeterminate otherwise.
  bool judge_yes_no(const EndpointConfig& ep, const std::string& prompt);

  static std::optional<bool> parse_yes_no(const std::string& response);
  static std::vector<double> l2_normalize(std::vector<double> v);

  struct Semaphore;  // opaque; named by internal RAII helpers

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cem
