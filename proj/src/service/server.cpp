#include "kis/service/server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cctype>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "kis/harness/synth.hpp"
#include "kis/random.hpp"
#include "kis/simulator.hpp"

namespace kis::service {

namespace {

constexpr std::uint64_t kIdStream = 0x1d;
constexpr std::uint64_t kNoiseStream = 0x5e55;

Reply error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, std::move(extra), std::nullopt, "application/json"};
}

// Thrown inside handlers and turned into a Reply at the boundary.
struct HttpError {
  int status;
  std::string message;
};

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw HttpError{400, "request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError{400, std::string("malformed JSON: ") + e.what()};
  }
}

Eigen::VectorXd vector_from(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw HttpError{400, std::string(what) + " must be a non-empty array of numbers"};
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw HttpError{400, std::string(what) + " must contain only numbers"};
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  if (!v.allFinite()) throw HttpError{400, std::string(what) + " contains non-finite values"};
  if (!(v.norm() > 0.0)) throw HttpError{400, std::string(what) + " is a zero vector"};
  return v;
}

Hyperparams params_from(const json& j) {
  Hyperparams p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw HttpError{400, "params must be an object"};
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "rho") {
        p.rho = value.get<double>();
      } else if (key == "init_temperature") {
        p.init_temperature = value.get<double>();
      } else if (key == "num_pairs") {
        p.num_pairs = value.get<int>();
      } else if (key == "n_display") {
        p.n_display = value.get<int>();
      } else if (key == "n_prune") {
        p.n_prune = value.get<int>();
      } else if (key == "max_steps") {
        p.max_steps = value.get<int>();
      } else {
        throw HttpError{400, "unknown parameter '" + key + "'"};
      }
    }
    p.validate();
  } catch (const json::exception& e) {
    throw HttpError{400, std::string("bad params: ") + e.what()};
  } catch (const std::invalid_argument& e) {
    throw HttpError{400, e.what()};
  }
  return p;
}

json params_json(const Hyperparams& p) {
  return {{"rho", p.rho},         {"num_pairs", p.num_pairs}, {"n_display", p.n_display},
          {"n_prune", p.n_prune}, {"max_steps", p.max_steps}, {"init_temperature", p.init_temperature}};
}

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  }
  return true;
}

std::string iso_time(std::chrono::system_clock::time_point t) {
  const auto tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

}  // namespace

std::string format_probability(double p) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", p);
  return buf;
}

SessionService::SessionService(const Corpus& corpus, const sim::PredictorSet* predictors, ServiceConfig config)
    : corpus_(corpus), predictors_(predictors), config_(std::move(config)) {
  if (predictors_ != nullptr && predictors_->size() != corpus_.num_spaces()) {
    throw std::invalid_argument("need one predictor per embedding space");
  }
  if (config_.log_dir) std::filesystem::create_directories(*config_.log_dir);
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionService::num_sessions() const {
  std::shared_lock lock(registry_mutex_);
  return sessions_.size();
}

json SessionService::item_json(ItemIndex i) const {
  const auto& info = corpus_.manifest().items[static_cast<std::size_t>(i)];
  json j{{"index", i}, {"item_id", info.item_id}, {"label", info.label}};
  j["thumbnail_uri"] = info.thumbnail_uri ? json(*info.thumbnail_uri) : json(nullptr);
  return j;
}

json SessionService::top_json(const SessionState& state, Eigen::Index k) const {
  json out = json::array();
  const auto top = top_items(state, k);
  for (std::size_t r = 0; r < top.size(); ++r) {
    auto j = item_json(top[r]);
    j["rank"] = r + 1;
    j["probability"] = format_probability(state.probs[top[r]]);
    out.push_back(std::move(j));
  }
  return out;
}

sim::Policy SessionService::resolve_policy(const std::optional<std::string>& header) const {
  sim::Policy policy{predictors_ != nullptr ? sim::PolicyKind::ours : sim::PolicyKind::pichunter};
  if (!header || header->empty()) return policy;
  const auto dash = header->find('-');
  try {
    policy.kind = sim::parse_policy_kind(header->substr(0, dash));
    if (dash != std::string::npos) policy.ablation = sim::parse_ablation(header->substr(dash + 1));
  } catch (const std::invalid_argument& e) {
    throw HttpError{400, e.what()};
  }
  if (policy.kind == sim::PolicyKind::aligned) throw HttpError{400, "policy 'aligned' is simulator-only"};
  if (policy.kind == sim::PolicyKind::ours && predictors_ == nullptr) {
    throw HttpError{400, "policy 'ours' needs checkpoints; none are loaded"};
  }
  return policy;
}

json SessionService::snapshot_locked(const Session& s) const {
  const auto& search = *s.search;
  const auto& state = search.state();
  json j;
  j["session_id"] = s.id;
  j["mode"] = s.mode == SessionMode::demo ? "demo" : "live";
  j["created_at"] = iso_time(s.created_at);
  j["seed"] = search.seed();
  j["params"] = params_json(search.params());
  j["step"] = state.step;
  j["finished"] = search.finished();
  if (s.target) j["target_id"] = corpus_.manifest().items[static_cast<std::size_t>(*s.target)].item_id;
  j["history"] = json::array();
  for (std::size_t t = 0; t < state.history.size(); ++t) {
    const auto& h = state.history[t];
    json step{{"step", t + 1}, {"strategy", std::string(to_string(h.display.strategy))}, {"labels", h.labels}};
    step["pairs"] = json::array();
    for (const auto& p : h.display.pairs) {
      step["pairs"].push_back({corpus_.manifest().items[static_cast<std::size_t>(p.a)].item_id,
                               corpus_.manifest().items[static_cast<std::size_t>(p.b)].item_id});
    }
    if (t < s.policies.size()) step["policy"] = s.policies[t];
    if (t < s.confidences.size()) step["confidences"] = s.confidences[t];
    j["history"].push_back(std::move(step));
  }
  j["pending_display"] = search.pending_display().has_value();
  j["top_k"] = top_json(state, config_.default_top_k);
  return j;
}

void SessionService::persist(const Session& s) const {
  if (!config_.log_dir) return;
  const auto path = *config_.log_dir / (s.id + ".json");
  std::ofstream out(path);
  out << snapshot_locked(s).dump(2) << '\n';
  if (!out) spdlog::warn("could not write session snapshot {}", path.string());
}

std::optional<json> SessionService::snapshot(const std::string& id) const {
  const auto s = find(id);
  if (!s) return std::nullopt;
  std::lock_guard lock(s->mutex);
  return snapshot_locked(*s);
}

Reply SessionService::create_session(const std::string& body) {
  try {
    const auto req = parse_body(body);
    auto session = std::make_shared<Session>();
    const auto mode = req.value("mode", std::string("live"));
    if (mode == "demo") {
      session->mode = SessionMode::demo;
    } else if (mode != "live") {
      throw HttpError{400, "mode must be 'demo' or 'live'"};
    }
    const auto params = params_from(req.contains("params") ? req["params"] : json());
    if (!req.contains("query") || !req["query"].is_object()) throw HttpError{400, "missing query object"};
    const auto& query = req["query"];

    std::optional<std::string> target_id;
    if (req.contains("target_id")) target_id = req["target_id"].get<std::string>();
    if (query.contains("target_id")) target_id = query["target_id"].get<std::string>();
    if (target_id) {
      const auto idx = corpus_.find_item(*target_id);
      if (!idx) return error(404, "unknown target_id '" + *target_id + "'");
      session->target = *idx;
    }
    if (session->mode == SessionMode::demo && !session->target) throw HttpError{400, "demo mode needs a target_id"};

    std::uint64_t seed = 0;
    {
      std::unique_lock lock(registry_mutex_);
      seed = derive_seed(config_.seed, {kIdStream, ++id_counter_});
    }
    if (req.contains("seed")) seed = req["seed"].get<std::uint64_t>();

    std::vector<Eigen::VectorXd> vectors;
    const auto f_count = corpus_.num_spaces();
    if (query.contains("vectors")) {
      if (!query["vectors"].is_array() || query["vectors"].size() != f_count) {
        throw HttpError{400, "query.vectors needs one vector per space (" + std::to_string(f_count) + ")"};
      }
      for (std::size_t f = 0; f < f_count; ++f) {
        vectors.push_back(vector_from(query["vectors"][f], "query vector"));
        if (vectors.back().size() != corpus_.space(f).dim()) {
          throw HttpError{400, "query vector " + std::to_string(f) + " has dimension " +
                                   std::to_string(vectors.back().size()) + ", space '" +
                                   corpus_.space(f).space_id + "' has " + std::to_string(corpus_.space(f).dim())};
        }
      }
    } else if (query.contains("vector")) {
      const auto v = vector_from(query["vector"], "query vector");
      for (std::size_t f = 0; f < f_count; ++f) {
        if (v.size() != corpus_.space(f).dim()) throw HttpError{400, "query vector dimension does not match every space"};
        vectors.push_back(v);
      }
    } else if (session->target) {
      const double sigma = query.value("sigma", 0.0);
      if (!(sigma >= 0.0)) throw HttpError{400, "sigma must be >= 0"};
      Rng rng(derive_seed(seed, {kNoiseStream}));
      vectors = sim::make_query(corpus_, *session->target, sigma, rng).vectors;
    } else {
      throw HttpError{400, "query needs 'vectors', 'vector', or 'target_id' with 'sigma'"};
    }

    if (req.contains("session_id")) {
      session->id = req["session_id"].get<std::string>();
      if (!valid_id(session->id)) throw HttpError{400, "session_id must be 1-128 characters of [A-Za-z0-9._-]"};
    }
    const auto policy = resolve_policy(req.contains("policy") ? std::optional(req["policy"].get<std::string>())
                                                              : std::nullopt);
    session->search = std::make_unique<sim::InteractiveSearch>(corpus_, std::move(vectors), params, policy,
                                                                predictors_, seed);
    session->search->mutable_state().target = session->target;
    session->created_at = std::chrono::system_clock::now();

    {
      std::unique_lock lock(registry_mutex_);
      if (session->id.empty()) {
        do {
          session->id = "s" + std::to_string(++id_counter_);
        } while (sessions_.count(session->id) != 0);
      } else if (sessions_.count(session->id) != 0) {
        return error(409, "session '" + session->id + "' already exists");
      }
      sessions_.emplace(session->id, session);
    }

    std::lock_guard lock(session->mutex);
    const auto& state = session->search->state();
    json out{{"session_id", session->id},
             {"mode", mode},
             {"step", state.step},
             {"seed", seed},
             {"policy", policy.name()},
             {"params", params_json(params)},
             {"top_k", top_json(state, config_.default_top_k)}};
    if (session->target) out["target_rank"] = rank_of(state, *session->target).rank;
    persist(*session);
    return {201, std::move(out), std::nullopt, "application/json"};
  } catch (const HttpError& e) {
    return error(e.status, e.message);
  } catch (const json::exception& e) {
    return error(400, std::string("bad request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  }
}

Reply SessionService::display(const std::string& id, const std::optional<std::string>& strategy) {
  const auto s = find(id);
  if (!s) return error(404, "unknown session '" + id + "'");
  DisplayStrategy st = DisplayStrategy::greedy;
  if (strategy && !strategy->empty()) {
    try {
      st = parse_strategy(*strategy);
    } catch (const std::invalid_argument& e) {
      return error(400, e.what());
    }
  }
  std::lock_guard lock(s->mutex);
  auto& search = *s->search;
  if (search.finished() && !search.pending_display()) {
    return error(410, "session reached max_steps", {{"ranking", "/sessions/" + id + "/ranking"}});
  }
  try {
    const auto& d = search.display(st);
    json out{{"session_id", id}, {"step", search.state().step}, {"strategy", std::string(to_string(d.strategy))}};
    out["pairs"] = json::array();
    for (const auto& p : d.pairs) out["pairs"].push_back({{"a", item_json(p.a)}, {"b", item_json(p.b)}});
    return {200, std::move(out), std::nullopt, "application/json"};
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  }
}

Reply SessionService::feedback(const std::string& id, const std::string& body,
                               const std::optional<std::string>& policy_header) {
  const auto s = find(id);
  if (!s) return error(404, "unknown session '" + id + "'");
  try {
    const auto req = parse_body(body);
    std::lock_guard lock(s->mutex);
    auto& search = *s->search;
    if (!search.pending_display()) return error(409, "no pending display; GET the display first");
    if (req.contains("step") && req["step"].get<int>() != search.state().step) {
      return error(409, "labels are for step " + std::to_string(req["step"].get<int>()) + ", session is at step " +
                            std::to_string(search.state().step));
    }
    if (!req.contains("labels") || !req["labels"].is_array()) throw HttpError{400, "missing labels array"};
    std::vector<int> labels;
    for (const auto& l : req["labels"]) {
      if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
        throw HttpError{400, "labels must be 0 or 1"};
      }
      labels.push_back(l.get<int>());
    }
    if (labels.size() != search.pending_display()->pairs.size()) {
      throw HttpError{400, "expected " + std::to_string(search.pending_display()->pairs.size()) + " labels, got " +
                               std::to_string(labels.size())};
    }
    const auto policy = policy_header ? resolve_policy(policy_header) : search.policy();
    search.set_policy(policy);
    const auto outcome = search.feedback(labels);
    s->confidences.push_back(outcome.confidences);
    s->policies.push_back(policy.name());

    const auto& state = search.state();
    json out{{"session_id", id},
             {"step", state.step},
             {"policy", policy.name()},
             {"finished", search.finished()},
             {"confidences", outcome.confidences},
             {"top_k", top_json(state, config_.default_top_k)}};
    if (s->mode == SessionMode::demo && s->target) out["target_rank"] = rank_of(state, *s->target).rank;
    persist(*s);
    return {200, std::move(out), std::nullopt, "application/json"};
  } catch (const HttpError& e) {
    return error(e.status, e.message);
  } catch (const json::exception& e) {
    return error(400, std::string("bad request: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  }
}

Reply SessionService::ranking(const std::string& id, const std::optional<std::string>& k_param) {
  const auto s = find(id);
  if (!s) return error(404, "unknown session '" + id + "'");
  long long k = config_.default_top_k;
  if (k_param && !k_param->empty()) {
    try {
      std::size_t used = 0;
      k = std::stoll(*k_param, &used);
      if (used != k_param->size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      return error(400, "k must be an integer");
    }
    if (k <= 0) return error(400, "k must be positive");
  }
  std::lock_guard lock(s->mutex);
  const auto& state = s->search->state();
  const auto items = top_json(state, static_cast<Eigen::Index>(k));
  double total = 0.0;
  for (auto i : top_items(state, static_cast<Eigen::Index>(k))) total += state.probs[i];
  return {200,
          {{"session_id", id}, {"step", state.step}, {"items", items}, {"total_probability", format_probability(total)}},
          std::nullopt,
          "application/json"};
}

Reply SessionService::item(const std::string& item_id) const {
  const auto idx = corpus_.find_item(item_id);
  if (!idx) return error(404, "unknown item '" + item_id + "'");
  return {200, item_json(*idx), std::nullopt, "application/json"};
}

Reply SessionService::thumbnail(const std::string& item_id) const {
  const auto idx = corpus_.find_item(item_id);
  if (!idx) return error(404, "unknown item '" + item_id + "'");
  const auto& uri = corpus_.manifest().items[static_cast<std::size_t>(*idx)].thumbnail_uri;
  if (!uri) return error(404, "item has no thumbnail");
  std::string path_str = *uri;
  if (path_str.rfind("file://", 0) == 0) path_str = path_str.substr(7);
  if (path_str.find("://") != std::string::npos) return error(404, "thumbnail is remote", {{"thumbnail_uri", *uri}});
  std::filesystem::path path(path_str);
  if (path.is_relative() && config_.asset_root) path = *config_.asset_root / path;
  std::ifstream in(path, std::ios::binary);
  if (!in) return error(404, "thumbnail file not found");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return {200, json(), bytes.str(), content_type_for(path)};
}

Reply SessionService::health() const {
  json spaces = json::array();
  for (const auto& sp : corpus_.spaces()) spaces.push_back({{"space_id", sp.space_id}, {"dim", sp.dim()}});
  return {200,
          {{"status", "ok"},
           {"items", corpus_.num_items()},
           {"spaces", spaces},
           {"sessions", num_sessions()},
           {"predictors_loaded", predictors_ != nullptr},
           {"default_policy", resolve_policy(std::nullopt).name()}},
          std::nullopt,
          "application/json"};
}

void SessionService::register_routes(httplib::Server& server) {
  auto send = [this](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
    if (r.raw) {
      res.set_content(*r.raw, r.content_type);
    } else {
      res.set_content(r.body.dump(), "application/json");
    }
  };
  auto param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
  };

  server.Options(R"(.*)", [this](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", std::string("Content-Type, ") + kPolicyHeader);
  });
  server.Get("/healthz", [=, this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server.Post("/sessions", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  server.Get(R"(/sessions/([^/]+)/display)", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, display(req.matches[1], param(req, "strategy")));
  });
  server.Post(R"(/sessions/([^/]+)/feedback)", [=, this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> policy;
    if (req.has_header(kPolicyHeader)) policy = req.get_header_value(kPolicyHeader);
    send(res, feedback(req.matches[1], req.body, policy));
  });
  server.Get(R"(/sessions/([^/]+)/ranking)", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, ranking(req.matches[1], param(req, "k")));
  });
  server.Get(R"(/sessions/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = snapshot(req.matches[1]);
    send(res, snap ? Reply{200, *snap, std::nullopt, "application/json"}
                   : error(404, "unknown session '" + std::string(req.matches[1]) + "'"));
  });
  server.Get(R"(/items/([^/]+)/thumbnail)", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, thumbnail(req.matches[1]));
  });
  server.Get(R"(/items/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, item(req.matches[1]));
  });
  server.set_exception_handler([this](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    spdlog::error("request failed: {}", what);
    res.status = 500;
    res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
    res.set_content(json{{"error", what}}.dump(), "application/json");
  });
}

}  // namespace kis::service
