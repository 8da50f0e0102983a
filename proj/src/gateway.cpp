#include "cem/gateway.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

#include "cem/jsonl.hpp"
#include "cem/rng.hpp"

namespace cem {

void to_json(json& j, const EndpointConfig& v) {
  j = json{{"name", v.name},
           {"base_url", v.base_url},
           {"model", v.model},
           {"temperature", v.temperature},
           {"max_in_flight", v.max_in_flight},
           {"timeout_ms", v.timeout_ms},
           {"max_retries", v.max_retries},
           {"backoff_ms", v.backoff_ms}};
}

void from_json(const json& j, EndpointConfig& v) {
  v.name = j.value("name", "");
  v.base_url = j.at("base_url").get<std::string>();
  v.model = j.value("model", "");
  v.api_key = j.value("api_key", "");
  v.temperature = j.value("temperature", 0.0);
  v.max_in_flight = j.value("max_in_flight", 4);
  v.timeout_ms = j.value("timeout_ms", 30000);
  v.max_retries = j.value("max_retries", 3);
  v.backoff_ms = j.value("backoff_ms", 100);
}

void apply_env_credentials(EndpointConfig& cfg) {
  if (!cfg.api_key.empty() || cfg.name.empty()) return;
  std::string var = "CEM_";
  for (char c : cfg.name)
    var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  var += "_API_KEY";
  if (const char* v = std::getenv(var.c_str())) cfg.api_key = v;
}

struct Gateway::Semaphore {
  explicit Semaphore(int n) : count(n) {}
  void acquire() {
    std::unique_lock lk(m);
    cv.wait(lk, [&] { return count > 0; });
    --count;
  }
  void release() {
    {
      std::lock_guard lk(m);
      ++count;
    }
    cv.notify_one();
  }
  std::mutex m;
  std::condition_variable cv;
  int count;
};

namespace {

struct SemGuard {
  explicit SemGuard(Gateway::Semaphore* s) : sem(s) {
    if (sem) sem->acquire();
  }
  ~SemGuard() {
    if (sem) sem->release();
  }
  Gateway::Semaphore* sem;
};

std::string cache_key(const std::string& op, const EndpointConfig& ep,
                      const std::string& payload) {
  json j{{"op", op},
         {"base_url", ep.base_url},
         {"model", ep.model},
         {"temperature", ep.temperature},
         {"payload", payload}};
  return j.dump();
}

}  // namespace

struct Gateway::Impl {
  std::filesystem::path cache_dir;
  std::mutex mu;
  std::map<std::string, std::unique_ptr<Semaphore>> sems;
  std::map<std::string, SimChat> sim_chats;
  std::map<std::string, SimEmbed> sim_embeds;
  std::mt19937_64 jitter{std::random_device{}()};
  std::mutex jitter_mu;

  Semaphore& sem_for(const EndpointConfig& ep) {
    std::lock_guard lk(mu);
    auto key = ep.name + "|" + ep.base_url;
    auto it = sems.find(key);
    if (it == sems.end()) {
      it = sems
               .emplace(key, std::make_unique<Semaphore>(
                                 std::max(1, ep.max_in_flight)))
               .first;
    }
    return *it->second;
  }

  std::filesystem::path cache_path(const std::string& key) const {
    auto h = fnv1a64(key);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h));
    return cache_dir / std::string(buf, 2) / (std::string(buf) + ".json");
  }

  std::optional<std::string> cache_get(const std::string& key) {
    if (cache_dir.empty()) return std::nullopt;
    auto p = cache_path(key);
    std::error_code ec;
    if (!std::filesystem::exists(p, ec)) return std::nullopt;
    try {
      json j = json::parse(read_file(p));
      if (j.at("key").get<std::string>() != key) return std::nullopt;
      return j.at("response").get<std::string>();
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  void cache_put(const std::string& key, const std::string& response) {
    if (cache_dir.empty()) return;
    auto p = cache_path(key);
    std::filesystem::create_directories(p.parent_path());
    json j{{"key", key}, {"response", response}};
    write_file_atomic(p, j.dump());
  }

  int jitter_ms(int max) {
    std::lock_guard lk(jitter_mu);
    if (max <= 0) return 0;
    return static_cast<int>(jitter() % static_cast<std::uint64_t>(max));
  }

  // POST with exponential backoff + jitter; retries on transport errors,
  // 429 and 5xx. Other 4xx fail immediately.
  json http_post(const EndpointConfig& ep, const std::string& path,
                 const json& body, const std::string& context) {
    std::string payload = body.dump();
    std::string last_err;
    for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
      if (attempt > 0) {
        int delay = ep.backoff_ms * (1 << (attempt - 1)) +
                    jitter_ms(ep.backoff_ms);
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
      httplib::Client cli(ep.base_url);
      cli.set_connection_timeout(0, ep.timeout_ms * 1000LL);
      cli.set_read_timeout(ep.timeout_ms / 1000, (ep.timeout_ms % 1000) * 1000);
      httplib::Headers headers;
      if (!ep.api_key.empty())
        headers.emplace("Authorization", "Bearer " + ep.api_key);
      auto res = cli.Post(path, headers, payload, "application/json");
      if (!res) {
        last_err = "transport failure (" + httplib::to_string(res.error()) +
                   ")";
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_err = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw TransportError(context + ": HTTP " +
                             std::to_string(res->status) + " from " +
                             ep.base_url + path);
      }
      try {
        return json::parse(res->body);
      } catch (const std::exception& e) {
        throw TransportError(context + ": malformed payload from " +
                             ep.base_url + ": " + e.what());
      }
    }
    throw TransportError(context + ": retries exhausted against " +
                         ep.base_url + path + ": " + last_err);
  }
};

Gateway::Gateway(std::filesystem::path cache_dir)
    : impl_(std::make_unique<Impl>()) {
  impl_->cache_dir = std::move(cache_dir);
  if (!impl_->cache_dir.empty())
    std::filesystem::create_directories(impl_->cache_dir);
}

Gateway::~Gateway() = default;

void Gateway::register_sim_chat(const std::string& name, SimChat fn) {
  std::lock_guard lk(impl_->mu);
  impl_->sim_chats[name] = std::move(fn);
}

void Gateway::register_sim_embed(const std::string& name, SimEmbed fn) {
  std::lock_guard lk(impl_->mu);
  impl_->sim_embeds[name] = std::move(fn);
}

std::string Gateway::chat(const EndpointConfig& ep, const std::string& prompt) {
  if (ep.is_sim()) {
    SimChat fn;
    {
      std::lock_guard lk(impl_->mu);
      auto it = impl_->sim_chats.find(ep.sim_name());
      if (it == impl_->sim_chats.end())
        throw TransportError("no sim chat handler '" + ep.sim_name() + "'");
      fn = it->second;
    }
    SemGuard g(&impl_->sem_for(ep));
    return fn(prompt);
  }
  auto key = cache_key("chat", ep, prompt);
  if (auto hit = impl_->cache_get(key)) return *hit;
  json body{{"model", ep.model},
            {"temperature", ep.temperature},
            {"messages", json::array({json{{"role", "user"},
                                           {"content", prompt}}})}};
  json res;
  {
    SemGuard g(&impl_->sem_for(ep));
    res = impl_->http_post(ep, "/v1/chat/completions", body, "chat");
  }
  std::string out;
  try {
    out = res.at("choices").at(0).at("message").at("content")
              .get<std::string>();
  } catch (const std::exception& e) {
    throw TransportError(std::string("chat: unexpected response shape: ") +
                         e.what());
  }
  impl_->cache_put(key, out);
  return out;
}

std::vector<std::vector<double>> Gateway::embed(
    const EndpointConfig& ep, const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("embed: empty input batch");
  std::vector<std::vector<double>> vecs;
  if (ep.is_sim()) {
    SimEmbed fn;
    {
      std::lock_guard lk(impl_->mu);
      auto it = impl_->sim_embeds.find(ep.sim_name());
      if (it == impl_->sim_embeds.end())
        throw TransportError("no sim embed handler '" + ep.sim_name() + "'");
      fn = it->second;
    }
    SemGuard g(&impl_->sem_for(ep));
    vecs = fn(texts);
  } else {
    auto key = cache_key("embed", ep, json(texts).dump());
    if (auto hit = impl_->cache_get(key)) {
      vecs = json::parse(*hit).get<std::vector<std::vector<double>>>();
    } else {
      json body{{"model", ep.model}, {"input", texts}};
      json res;
      {
        SemGuard g(&impl_->sem_for(ep));
        res = impl_->http_post(ep, "/v1/embeddings", body, "embed");
      }
      try {
        for (const auto& d : res.at("data"))
          vecs.push_back(d.at("embedding").get<std::vector<double>>());
      } catch (const std::exception& e) {
        throw TransportError(std::string("embed: unexpected response shape: ") +
                             e.what());
      }
      impl_->cache_put(key, json(vecs).dump());
    }
  }
  if (vecs.size() != texts.size())
    throw TransportError("embed: got " + std::to_string(vecs.size()) +
                         " vectors for " + std::to_string(texts.size()) +
                         " inputs");
  std::size_t dim = vecs.empty() ? 0 : vecs[0].size();
  for (auto& v : vecs) {
    if (v.size() != dim)
      throw TransportError("embed: dimension mismatch across batch");
    v = l2_normalize(std::move(v));
  }
  return vecs;
}

bool Gateway::judge_yes_no(const EndpointConfig& ep, const std::string& prompt) {
  auto out = chat(ep, prompt);
  auto verdict = parse_yes_no(out);
  if (!verdict)
    throw JudgeIndeterminate("judge response contains neither Yes nor No: " +
                             out.substr(0, 120));
  return *verdict;
}

std::optional<bool> Gateway::parse_yes_no(const std::string& response) {
  std::size_t i = 0;
  while (i < response.size() &&
         !std::isalpha(static_cast<unsigned char>(response[i])))
    ++i;
  std::string tok;
  while (i < response.size() &&
         std::isalpha(static_cast<unsigned char>(response[i])))
    tok += static_cast<char>(
        std::tolower(static_cast<unsigned char>(response[i++])));
  if (tok == "yes") return true;
  if (tok == "no") return false;
  return std::nullopt;
}

std::vector<double> Gateway::l2_normalize(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError("non-finite embedding");
    sq += x * x;
  }
  double norm = std::sqrt(sq);
  if (norm < 1e-12) throw ValidationError("degenerate embedding");
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace cem
