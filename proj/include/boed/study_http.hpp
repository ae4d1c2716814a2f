// Copyright 2026 The boed-bandits Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// HTTP+JSON front end of the study service.
//
//   POST /sessions                     create; 201 with the participant view
//   GET  /sessions/{id}/state
//   POST /sessions/{id}/instructions   instructions read; moves to the quiz
//   POST /sessions/{id}/quiz           {"answers": [5 booleans]}
//   POST /sessions/{id}/choice         {"arm": 1..K, "block"?, "trial"?}
//   POST /sessions/{id}/resume         retry a paused inference
//   GET  /sessions/{id}/debrief
//   GET  /instructions                 text and quiz statements
//   GET  /export                       Authorization: Bearer <operator token>
//   GET  /healthz
//
// Errors are {"error": code, "message": text} with code one of wrong_phase,
// invalid_arm, session_not_found, inference_unavailable, out_of_order,
// invalid_request, unauthorized, internal.

#ifndef BOED_STUDY_HTTP_HPP
#define BOED_STUDY_HTTP_HPP

#include <openssl/crypto.h>

// The library default of 5 drops connections when many participants arrive
// at once.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#endif
#include <httplib.h>

#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "boed/study.hpp"

namespace boed::study {

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::session_not_found: return 404;
    case ErrorCode::wrong_phase:
    case ErrorCode::out_of_order: return 409;
    case ErrorCode::invalid_arm:
    case ErrorCode::invalid_request: return 400;
    case ErrorCode::inference_unavailable: return 503;
    case ErrorCode::unauthorized: return 401;
  }
  return 500;
}

/// "host:port" or ":port" (all interfaces).
inline std::pair<std::string, int> parse_bind(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address must be host:port, got " + s);
  const std::string host = colon == 0 ? "0.0.0.0" : s.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in bind address " + s);
  }
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in " + s);
  return {host, port};
}

class StudyHttpServer {
 public:
  /// An empty operator token disables /export.
  StudyHttpServer(StudyService& service, std::string operator_token, std::size_t threads = 16)
      : service_(service), token_(std::move(operator_token)) {
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_keep_alive_max_count(1000);
    // Small request/response pairs: without this, Nagle plus delayed ACKs
    // cost tens of milliseconds per request.
    server_.set_tcp_nodelay(true);
    routes();
  }

  ~StudyHttpServer() { stop(); }
  StudyHttpServer(const StudyHttpServer&) = delete;
  StudyHttpServer& operator=(const StudyHttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  /// Blocks until stop().
  void listen() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    send(res, status, {{"error", code}, {"message", message}});
  }

  static nlohmann::json body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw StudyError(ErrorCode::invalid_request, std::string("body is not JSON: ") + e.what());
    }
  }

  /// Maps service errors to status codes; anything else is a 500.
  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const StudyError& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "invalid_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  bool authorised(const httplib::Request& req) const {
    if (token_.empty()) return false;
    const std::string expected = "Bearer " + token_;
    const auto got = req.get_header_value("Authorization");
    return got.size() == expected.size() && CRYPTO_memcmp(got.data(), expected.data(), got.size()) == 0;
  }

  void routes() {
    const std::string id = R"(/sessions/([A-Za-z0-9_-]+))";
    const std::size_t trials = service_.config().trials;

    server_.Post("/sessions", guarded([this, trials](const httplib::Request&, httplib::Response& res) {
                   send(res, 201, participant_view(service_.create_session(), trials));
                 }));
    server_.Get(id + "/state", guarded([this, trials](const httplib::Request& req, httplib::Response& res) {
                  send(res, 200, participant_view(service_.state(req.matches[1]), trials));
                }));
    server_.Post(id + "/instructions", guarded([this, trials](const httplib::Request& req, httplib::Response& res) {
                   send(res, 200, participant_view(service_.acknowledge_instructions(req.matches[1]), trials));
                 }));
    server_.Post(id + "/quiz", guarded([this, trials](const httplib::Request& req, httplib::Response& res) {
                   const auto j = body(req);
                   if (!j.contains("answers") || !j["answers"].is_array())
                     throw StudyError(ErrorCode::invalid_request, "expected {\"answers\": [booleans]}");
                   const bool passed = service_.submit_quiz(req.matches[1], j["answers"].get<std::vector<bool>>());
                   send(res, 200, {{"passed", passed}, {"state", participant_view(service_.state(req.matches[1]), trials)}});
                 }));
    server_.Post(id + "/choice", guarded([this, trials](const httplib::Request& req, httplib::Response& res) {
                   const auto j = body(req);
                   if (!j.contains("arm") || !j["arm"].is_number_integer())
                     throw StudyError(ErrorCode::invalid_arm, "expected {\"arm\": integer}");
                   std::optional<std::size_t> block, trial;
                   if (j.contains("block")) block = j["block"].get<std::size_t>();
                   if (j.contains("trial")) trial = j["trial"].get<std::size_t>();
                   const auto out = service_.submit_choice(req.matches[1], j["arm"].get<int>(), block, trial);
                   send(res, 200, {{"reward", out.reward}, {"state", participant_view(out.state, trials)}});
                 }));
    server_.Post(id + "/resume", guarded([this, trials](const httplib::Request& req, httplib::Response& res) {
                   send(res, 200, participant_view(service_.resume(req.matches[1]), trials));
                 }));
    server_.Get(id + "/debrief", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto d = service_.debrief(req.matches[1]);
                  send(res, 200, {{"total_reward", d.total_reward}, {"max_reward", d.max_reward}, {"bonus_cents", d.bonus_cents}});
                }));
    server_.Get("/instructions", guarded([this](const httplib::Request&, httplib::Response& res) {
                  nlohmann::json items = nlohmann::json::array();
                  for (const auto& q : service_.config().quiz) items.push_back(q.statement);
                  send(res, 200, {{"text", service_.config().instructions}, {"quiz", items}});
                }));
    server_.Get("/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  if (!authorised(req)) throw StudyError(ErrorCode::unauthorized, "operator token required");
                  send(res, 200, service_.export_dataset().dataset);
                }));
    server_.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
                  send(res, 200, {{"status", "ok"}, {"sessions", service_.session_ids().size()}});
                }));
  }

  StudyService& service_;
  std::string token_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace boed::study

#endif  // BOED_STUDY_HTTP_HPP
