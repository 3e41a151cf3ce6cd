#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "json.hpp"
#include "kis/corpus.hpp"
#include "kis/harness/runner.hpp"

namespace httplib {
class Server;
}

namespace kis::service {

using nlohmann::json;

inline constexpr const char* kPolicyHeader = "X-KIS-Policy";

struct ServiceConfig {
  std::optional<std::filesystem::path> log_dir;     // session snapshots, one JSON file per session
  std::optional<std::filesystem::path> asset_root;  // resolves relative thumbnail paths
  std::string cors_origin = "*";
  int default_top_k = 10;
  std::uint64_t seed = 0;  // for generated session ids and noise draws
};

/// A handler result: JSON body unless `raw` is set.
struct Reply {
  int status = 200;
  json body;
  std::optional<std::string> raw;
  std::string content_type = "application/json";
};

enum class SessionMode { demo, live };

/// In-memory session registry with one lock per session. Handlers are
/// transport-independent; register_routes binds them to an HTTP server.
class SessionService {
 public:
  SessionService(const Corpus& corpus, const sim::PredictorSet* predictors, ServiceConfig config = {});

  Reply create_session(const std::string& body);
  Reply display(const std::string& id, const std::optional<std::string>& strategy);
  Reply feedback(const std::string& id, const std::string& body, const std::optional<std::string>& policy);
  Reply ranking(const std::string& id, const std::optional<std::string>& k);
  Reply item(const std::string& item_id) const;
  Reply thumbnail(const std::string& item_id) const;
  Reply health() const;

  /// Current snapshot of a session, or nullopt for unknown ids.
  std::optional<json> snapshot(const std::string& id) const;
  std::size_t num_sessions() const;

  void register_routes(httplib::Server& server);

 private:
  struct Session {
    std::string id;
    SessionMode mode = SessionMode::live;
    std::optional<ItemIndex> target;
    std::chrono::system_clock::time_point created_at;
    std::unique_ptr<sim::InteractiveSearch> search;
    std::vector<std::vector<std::vector<double>>> confidences;  // [step][space][pair]
    std::vector<std::string> policies;                          // per step
    mutable std::mutex mutex;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  json item_json(ItemIndex i) const;
  json top_json(const SessionState& state, Eigen::Index k) const;
  json snapshot_locked(const Session& s) const;
  void persist(const Session& s) const;
  sim::Policy resolve_policy(const std::optional<std::string>& header) const;

  const Corpus& corpus_;
  const sim::PredictorSet* predictors_;
  ServiceConfig config_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_counter_ = 0;
};

/// Probabilities travel as decimal strings with 12 significant digits.
std::string format_probability(double p);

}  // namespace kis::service
