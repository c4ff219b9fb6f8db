#pragma once

// HTTP/JSON facade over a Workspace. Routes live under /api/v1; GET /healthz
// is open. Long pipeline steps run as polled jobs on a bounded worker pool.
// Needs cpp-httplib and OpenCV (link mindfuse::http and mindfuse::imaging).

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/image.hpp"
#include "mindfuse/workspace.hpp"

namespace mindfuse::service {

using nlohmann::json;

enum class JobState { kQueued, kRunning, kDone, kFailed };

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "queued";
}

struct JobHandle {
  std::string job_id;
  std::string kind;
  JobState state = JobState::kQueued;
  std::optional<json> result;
  std::optional<std::string> error;
  std::optional<std::string> error_code;
};

inline json to_json(const JobHandle& j) {
  json out{{"job_id", j.job_id}, {"kind", j.kind}, {"state", to_string(j.state)}};
  out["result"] = j.result ? *j.result : json(nullptr);
  out["error"] = j.error ? json(*j.error) : json(nullptr);
  if (j.error_code) out["error_code"] = *j.error_code;
  return out;
}

/// Fixed-size worker pool; jobs run in submission order per worker.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned workers) {
    for (unsigned i = 0; i < std::max(1u, workers); ++i) {
      threads_.emplace_back([this] { run(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

/// Job table. A kind may have at most one queued or running job.
class JobRegistry {
 public:
  explicit JobRegistry(unsigned workers) : pool_(workers) {}

  /// nullopt when a job of this kind is already active.
  std::optional<JobHandle> start(const std::string& kind, std::function<json()> work) {
    std::string id;
    {
      std::lock_guard lock(mu_);
      for (const auto& [_, j] : jobs_) {
        if (j.kind == kind && (j.state == JobState::kQueued || j.state == JobState::kRunning)) {
          return std::nullopt;
        }
      }
      id = "job-" + std::to_string(++counter_);
      jobs_[id] = JobHandle{id, kind, JobState::kQueued, {}, {}, {}};
    }
    pool_.submit([this, id, work = std::move(work)] {
      set(id, [](JobHandle& j) { j.state = JobState::kRunning; });
      try {
        auto result = work();
        set(id, [&](JobHandle& j) {
          j.result = std::move(result);
          j.state = JobState::kDone;
        });
      } catch (const Error& e) {
        set(id, [&](JobHandle& j) {
          j.error = e.what();
          j.error_code = mindfuse::to_string(e.code());
          j.state = JobState::kFailed;
        });
      } catch (const std::exception& e) {
        set(id, [&](JobHandle& j) {
          j.error = e.what();
          j.state = JobState::kFailed;
        });
      }
    });
    return get(id);
  }

  std::optional<JobHandle> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  template <class F>
  void set(const std::string& id, F&& f) {
    std::lock_guard lock(mu_);
    f(jobs_.at(id));
  }

  mutable std::mutex mu_;
  std::map<std::string, JobHandle> jobs_;
  std::size_t counter_ = 0;
  WorkerPool pool_;  // last: joined before the table goes away
};

struct ServiceOptions {
  std::string bearer_token;       // empty: no auth
  std::string cors_origin = "*";
  unsigned workers = 2;
  bool call_model_default = false;  // analyze calls the provider unless told otherwise
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownTemplate: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kProviderUnavailable:
    case ErrorCode::kTimeout: return 503;
    case ErrorCode::kIoError: return 500;
    default: return 400;
  }
}

inline FilterSpec filter_from_request(const json& body) {
  if (!body.contains("filter") || body["filter"].is_null()) return {};
  return filter_from_json(body["filter"]);
}

class Service {
 public:
  Service(Workspace& ws, ServiceOptions options = {})
      : ws_(ws), options_(std::move(options)), jobs_(options_.workers) {
    routes();
  }

  httplib::Server& server() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool is_running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_errors(httplib::Response& res, int status, std::vector<std::string> errors) {
    send(res, status, {{"errors", std::move(errors)}});
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
    }
    return j;
  }

  /// Wraps a handler with auth and the error-to-status mapping.
  Handler guarded(Handler h) {
    return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      if (!options_.bearer_token.empty() &&
          req.get_header_value("Authorization") != "Bearer " + options_.bearer_token) {
        send_errors(res, 401, {"missing or invalid bearer token"});
        return;
      }
      try {
        h(req, res);
      } catch (const Error& e) {
        send(res, http_status(e.code()),
             {{"errors", {e.what()}}, {"code", mindfuse::to_string(e.code())}});
      } catch (const json::exception& e) {
        send_errors(res, 400, {std::string("bad request: ") + e.what()});
      } catch (const std::exception& e) {
        send_errors(res, 500, {e.what()});
      }
    };
  }

  void job_route(const std::string& path, const std::string& kind,
                 std::function<json(const json&)> work) {
    server_.Post(path, guarded([this, kind, work](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      // Validate synchronously so schema problems are a 400, not a failed job.
      if (body.contains("filter")) (void)filter_from_request(body);
      auto job = jobs_.start(kind, [work, body] { return work(body); });
      if (!job) {
        send_errors(res, 409, {"a " + kind + " job is already running"});
        return;
      }
      send(res, 202, to_json(*job));
    }));
  }

  static MiningOptions mining_options(const json& body) {
    if (!body.contains("seed")) throw Error(ErrorCode::kInvalidArgument, "seed is required");
    MiningOptions o;
    o.seed = body.at("seed").get<std::uint64_t>();
    o.k_min = body.value("k_min", std::size_t{1});
    if (body.contains("k_max") && !body["k_max"].is_null()) o.k_max = body["k_max"].get<std::size_t>();
    return o;
  }

  void routes() {
    server_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
      res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
    });
    server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send(res, 200, {{"ok", true}});
    });

    // -- ads
    server_.Post("/api/v1/ads/ingest", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string payload = req.has_file("file") ? req.get_file_value("file").content : req.body;
      std::optional<std::string> hint;
      if (req.has_param("brand")) hint = req.get_param_value("brand");
      if (req.has_file("brand")) hint = req.get_file_value("brand").content;
      std::istringstream in(payload);
      auto report = ws_.ads().try_ingest(in, hint);
      if (!report) {
        send_errors(res, 409, {"another ingest is in progress"});
        return;
      }
      send(res, 200, to_json(*report));
    }));
    server_.Get("/api/v1/ads", guarded([this](const httplib::Request& req, httplib::Response& res) {
      FilterSpec f;
      auto list = [&](const char* key) -> std::optional<std::vector<std::string>> {
        if (!req.has_param(key)) return std::nullopt;
        std::vector<std::string> v;
        for (std::size_t i = 0; i < req.get_param_value_count(key); ++i) {
          v.push_back(req.get_param_value(key, i));
        }
        return v;
      };
      f.brands = list("brand");
      f.keyword_any = list("keyword");
      if (req.has_param("from") || req.has_param("to")) {
        auto from = Date::parse(req.get_param_value("from"));
        auto to = Date::parse(req.get_param_value("to"));
        if (!from || !to) throw Error(ErrorCode::kInvalidArgument, "from and to must both be YYYY-MM-DD");
        f.date_range = std::make_pair(*from, *to);
      }
      f.validate();
      json out = json::array();
      for (const auto& ad : ws_.ads().filter(f)) out.push_back(to_json(ad));
      send(res, 200, out);
    }));
    server_.Get(R"(/api/v1/ads/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(ws_.ads().get(req.matches[1])));
    }));

    // -- pipeline jobs
    job_route("/api/v1/pipeline/pillars", "pillars", [this](const json& body) {
      return to_json(ws_.run_pillars(filter_from_request(body)));
    });
    auto mining = [this](ArchetypeKind kind) {
      return [this, kind](const json& body) {
        std::optional<FilterSpec> filter;
        if (body.contains("filter") && !body["filter"].is_null()) filter = filter_from_request(body);
        return to_json(ws_.run_mining(kind, mining_options(body), filter));
      };
    };
    // Seed is checked before the job is queued.
    for (auto [path, kind] : {std::pair{"/api/v1/pipeline/personas", ArchetypeKind::kPersona},
                              std::pair{"/api/v1/pipeline/challenges", ArchetypeKind::kChallenge}}) {
      const std::string name = kind == ArchetypeKind::kPersona ? "personas" : "challenges";
      server_.Post(path, guarded([this, name, work = mining(kind)](const httplib::Request& req,
                                                                   httplib::Response& res) {
        auto body = parse_body(req);
        (void)mining_options(body);
        if (body.contains("filter")) (void)filter_from_request(body);
        auto job = jobs_.start(name, [work, body] { return work(body); });
        if (!job) {
          send_errors(res, 409, {"a " + name + " job is already running"});
          return;
        }
        send(res, 202, to_json(*job));
      }));
    }
    server_.Get(R"(/api/v1/pipeline/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto job = jobs_.get(req.matches[1]);
      if (!job) throw Error(ErrorCode::kNotFound, "job " + std::string(req.matches[1]));
      send(res, 200, to_json(*job));
    }));

    server_.Get("/api/v1/pillars", guarded([this](const httplib::Request&, httplib::Response& res) {
      auto t = ws_.pillars();
      if (!t) throw Error(ErrorCode::kNotFound, "no pillars");
      send(res, 200, to_json(*t));
    }));
    for (auto kind : {ArchetypeKind::kPersona, ArchetypeKind::kChallenge}) {
      const std::string path = kind == ArchetypeKind::kPersona ? "/api/v1/personas" : "/api/v1/challenges";
      server_.Get(path, guarded([this, kind](const httplib::Request&, httplib::Response& res) {
        auto m = ws_.mining(kind);
        if (!m) throw Error(ErrorCode::kNotFound, "no " + to_string(kind) + " clustering");
        send(res, 200, to_json(*m));
      }));
    }
    server_.Get("/api/v1/gaps", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::size_t top = 5;
      if (req.has_param("top")) {
        auto v = numeric::parse_int(req.get_param_value("top"));
        if (!v || *v < 0) throw Error(ErrorCode::kInvalidArgument, "top must be a count");
        top = static_cast<std::size_t>(*v);
      }
      send(res, 200, to_json(ws_.gaps(top)));
    }));

    // -- offerings and briefs
    server_.Post("/api/v1/offerings", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      if (!body.contains("offering_id")) body["offering_id"] = "";
      send(res, 200, to_json(ws_.add_offering(offering_from_json(body))));
    }));
    server_.Get("/api/v1/offerings", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& o : ws_.offerings()) out.push_back(to_json(o));
      send(res, 200, out);
    }));
    server_.Post("/api/v1/briefs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      std::vector<std::string> errors;
      for (const char* key : {"persona_id", "challenge_id", "offering_id"}) {
        if (!body.contains(key) || !body[key].is_string()) errors.push_back("missing: " + std::string(key));
      }
      if (!errors.empty()) {
        send_errors(res, 400, errors);
        return;
      }
      send(res, 200, to_json(ws_.brief(body["persona_id"], body["challenge_id"], body["offering_id"])));
    }));
    server_.Post("/api/v1/briefs/from-gaps", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      json out = json::array();
      for (const auto& b : ws_.briefs_from_gaps(body.value("top", std::size_t{1}),
                                                body.value("fanout", std::size_t{1}))) {
        out.push_back(to_json(b));
      }
      send(res, 200, out);
    }));
    server_.Post("/api/v1/briefs/distill", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      if (!body.contains("story") || !body["story"].is_string()) {
        send_errors(res, 400, {"missing: story"});
        return;
      }
      send(res, 200, {{"insight", ws_.distill(body["story"])}});
    }));
    server_.Get("/api/v1/briefs", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& b : ws_.briefs()) out.push_back(to_json(b));
      send(res, 200, out);
    }));
    server_.Get(R"(/api/v1/briefs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(ws_.get_brief(req.matches[1])));
    }));

    // -- telemetry
    server_.Post("/api/v1/telemetry/import", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::istringstream in(req.has_file("file") ? req.get_file_value("file").content : req.body);
      send(res, 200, {{"rows", ws_.import_telemetry(in)}});
    }));
    server_.Get("/api/v1/telemetry", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto g = parse_granularity(req.has_param("granularity") ? req.get_param_value("granularity") : "weekly");
      send(res, 200, to_json(ws_.trend(g)));
    }));
    server_.Post("/api/v1/telemetry/analyze", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      const auto g = parse_granularity(body.value("granularity", std::string("weekly")));
      if (ws_.telemetry().empty()) {
        send_errors(res, 400, {"no telemetry"});
        return;
      }
      const auto series = ws_.trend(g);
      std::vector<EncodedCreative> creatives;
      for (const auto& f : ws_.creative_images()) creatives.push_back(encode_creative(f));
      const auto prompt = build_analysis_prompt(series, creatives);
      json sections = json::array();
      for (const auto& [name, text] : prompt.sections) sections.push_back({{"name", name}, {"text", text}});
      json images = json::array();
      for (const auto& c : creatives) {
        images.push_back({{"creative_id", c.creative_id}, {"width", c.width}, {"height", c.height}, {"mime", c.mime}});
      }
      json out{{"prompt", {{"sections", sections}, {"text", prompt.text()}, {"image_payloads", images}}},
               {"series", to_json(series)}};
      if (body.value("call_model", options_.call_model_default)) {
        auto analysis = analyze_campaign(ws_.gateway(), prompt);
        json actions = json::array();
        for (const auto& a : analysis.actions) actions.push_back(to_json(a));
        out["actions"] = actions;
        out["provider_id"] = analysis.provider_id;
      }
      send(res, 200, out);
    }));
    server_.Post("/api/v1/annotations", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      Annotation a{body.value("target", ""), body.value("decision", ""), body.value("note", ""), ""};
      send(res, 200, to_json(ws_.annotate(a)));
    }));
    server_.Get("/api/v1/annotations", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& a : ws_.annotations()) out.push_back(to_json(a));
      send(res, 200, out);
    }));

    // -- creatives
    server_.Get(R"(/api/v1/creatives/([^/]+)/heatmap)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(ws_.heatmap(req.matches[1])));
    }));
    server_.Put(R"(/api/v1/creatives/([^/]+)/heatmap)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      body["creative_id"] = std::string(req.matches[1]);
      send(res, 200, to_json(ws_.put_heatmap(body)));
    }));
    server_.Get(R"(/api/v1/creatives/([^/]+)/regions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      double threshold = 0.6;
      if (req.has_param("threshold")) {
        auto t = numeric::parse_double(req.get_param_value("threshold"));
        if (!t) throw Error(ErrorCode::kInvalidArgument, "threshold must be a number");
        threshold = *t;
      }
      json out = json::array();
      for (const auto& r : rank_regions(ws_.heatmap(req.matches[1]), threshold)) out.push_back(to_json(r));
      send(res, 200, out);
    }));
    server_.Post(R"(/api/v1/creatives/([^/]+)/ablation-report)", guarded([](const httplib::Request& req, httplib::Response& res) {
      std::istringstream in(req.has_file("file") ? req.get_file_value("file").content : req.body);
      auto [original, variants] = split_original(read_variant_stats(in));
      const auto report = degradation_report(original, variants);
      json drops = json::array();
      for (const auto& d : summarize_drops(report)) drops.push_back(to_json(d));
      auto out = to_json(report);
      out["creative_id"] = std::string(req.matches[1]);
      out["drops"] = drops;
      out["csv"] = report_csv(report);
      send(res, 200, out);
    }));
  }

  Workspace& ws_;
  ServiceOptions options_;
  httplib::Server server_;
  JobRegistry jobs_;
};

}  // namespace mindfuse::service
