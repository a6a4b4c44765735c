#include "rfbn/triage_service.hpp"

#include "httplib.h"
#include "json.hpp"
#include "rfbn/errors.hpp"

#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace rfbn {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ojson vector_json(const Vector& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v[i]));
  return a;
}

ojson candidate_json(const CandidateRecord& c, const std::string& label) {
  ojson j;
  j["object_id"] = c.object_id;
  j["rank"] = c.rank;
  j["score"] = c.score;
  j["log_joint"] = c.log_joint;
  j["votes"] = vector_json(c.votes);
  ojson features = ojson::object();
  for (int f = 0; f < kNumFeatures; ++f) {
    const auto feat = static_cast<Feature>(f);
    features[std::string(kFeatureNames[static_cast<std::size_t>(f)])] =
        c.features.valid(feat) ? number_or_null(c.features[feat]) : ojson(nullptr);
  }
  j["features"] = features;
  j["period"] = number_or_null(c.period);
  j["band"] = std::string(to_string(c.band));
  j["triage_label"] = label;
  j["run_id"] = c.run_id;
  j["ra_deg"] = c.ra_deg;
  j["dec_deg"] = c.dec_deg;
  j["mean_mag"] = number_or_null(c.mean_mag);
  j["snr"] = number_or_null(c.snr);
  j["low_snr"] = c.low_snr;
  return j;
}

ojson label_json(const TriageLabel& l) {
  return {{"object_id", l.object_id},
          {"decision", l.decision},
          {"reviewer", l.reviewer},
          {"timestamp", l.timestamp},
          {"run_id", l.run_id}};
}

ojson job_json(const RetrainJob& job) {
  ojson groups = ojson::array();
  for (const auto& g : job.groups) groups.push_back({{"name", g.name}, {"size", g.object_ids.size()}});
  ojson j;
  j["job_id"] = job.job_id;
  j["source_run_id"] = job.source_run_id;
  j["groups"] = groups;
  j["status"] = std::string(to_string(job.status));
  j["iteration"] = job.iteration;
  j["result_run_id"] = job.result_run_id.empty() ? ojson(nullptr) : ojson(job.result_run_id);
  j["error"] = job.error.empty() ? ojson(nullptr) : ojson({{"stage", job.error_stage}, {"message", job.error}});
  return j;
}

Response json_response(int status, const ojson& body) { return {status, body.dump()}; }

Response error_response(int status, std::string_view category, const std::string& message) {
  return json_response(status, {{"error", category}, {"message", message}});
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::bad_request:
    case ErrorKind::invalid_argument:
    case ErrorKind::malformed_input: return 400;
    case ErrorKind::io_error: return 500;
  }
  return 500;
}

nlohmann::json parse_body(const std::string& body) {
  try {
    auto j = nlohmann::json::parse(body.empty() ? "{}" : body);
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw BadRequest(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::size_t parse_size(const std::map<std::string, std::string>& query, const std::string& key, std::size_t fallback) {
  const auto it = query.find(key);
  if (it == query.end() || it->second.empty()) return fallback;
  std::size_t v = 0;
  const auto* end = it->second.data() + it->second.size();
  const auto [ptr, ec] = std::from_chars(it->second.data(), end, v);
  if (ec != std::errc() || ptr != end) throw BadRequest("query parameter '" + key + "' must be a non-negative integer");
  return v;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(path);
  while (std::getline(in, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

bool matches_filter(const std::string& label, const std::string& filter) {
  if (filter.empty() || filter == "all") return true;
  if (filter == "artifact" || filter == "known") return label.rfind(filter + ":", 0) == 0;
  return label == filter;
}

}  // namespace

void validate_decision(const std::string& decision) {
  if (decision == "interesting" || decision == "skip") return;
  for (std::string_view prefix : {"artifact:", "known:"}) {
    if (decision.rfind(prefix, 0) == 0) {
      if (decision.size() == prefix.size()) {
        throw BadRequest("decision '" + decision + "' needs a non-empty name after the colon");
      }
      return;
    }
  }
  throw BadRequest("decision must be artifact:<group>, known:<class>, interesting or skip; got '" + decision + "'");
}

std::string rfc3339_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

LabelLog::LabelLog(fs::path path) : path_(std::move(path)) {}

void LabelLog::append(const TriageLabel& label) {
  const ojson line{{"id", label.object_id},
                   {"label", label.decision},
                   {"reviewer", label.reviewer},
                   {"timestamp", label.timestamp},
                   {"run_id", label.run_id}};
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path_.string());
}

std::vector<TriageLabel> LabelLog::replay() const {
  std::lock_guard lock(mutex_);
  std::vector<TriageLabel> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("label").get<std::string>(),
                     j.at("reviewer").get<std::string>(), j.at("timestamp").get<std::string>(),
                     j.at("run_id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw MalformedInput(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::string> LabelLog::state(const std::vector<TriageLabel>& log, const std::string& run_id) {
  std::map<std::string, std::string> s;
  for (const auto& l : log) {
    if (l.run_id == run_id && l.decision != "skip") s[l.object_id] = l.decision;
  }
  return s;
}

std::vector<ArtifactGroup> groups_from_labels(const std::map<std::string, std::string>& state,
                                              const std::vector<std::string>& names) {
  std::vector<ArtifactGroup> groups;
  for (const auto& name : names) {
    ArtifactGroup g{name, {}};
    for (const auto& [oid, label] : state) {
      if (label == artifact_class(name)) g.object_ids.push_back(oid);
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::string_view to_string(JobStatus status) noexcept {
  switch (status) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

struct TriageService::RunCache {
  RunInfo info;
  CandidateList list;
  std::unordered_map<std::string, std::size_t> index;
};

TriageService::TriageService(RunStore store, ServiceOptions options)
    : TriageService(store, store.root() / "labels.jsonl", std::move(options)) {}

TriageService::TriageService(RunStore store, fs::path label_log, ServiceOptions options)
    : store_(std::move(store)), log_(std::move(label_log)), options_(std::move(options)) {
  for (const auto& l : log_.replay()) {
    if (l.decision != "skip") label_state_[l.run_id][l.object_id] = l.decision;
  }
  worker_ = std::jthread([this](std::stop_token st) { worker_loop(st); });
}

TriageService::~TriageService() {
  stop();
  worker_.request_stop();
  job_cv_.notify_all();
}

std::shared_ptr<const TriageService::RunCache> TriageService::run(const std::string& run_id) const {
  {
    std::lock_guard lock(cache_mutex_);
    const auto it = cache_.find(run_id);
    if (it != cache_.end()) return it->second;
  }
  auto cache = std::make_shared<RunCache>();
  cache->info = store_.info(run_id);
  cache->list = store_.candidates(run_id);
  for (std::size_t i = 0; i < cache->list.candidates.size(); ++i) {
    cache->index.emplace(cache->list.candidates[i].object_id, i);
  }
  std::lock_guard lock(cache_mutex_);
  return cache_.emplace(run_id, std::move(cache)).first->second;
}

std::map<std::string, std::string> TriageService::labels_for(const std::string& run_id) const {
  std::shared_lock lock(label_mutex_);
  const auto it = label_state_.find(run_id);
  return it == label_state_.end() ? std::map<std::string, std::string>{} : it->second;
}

Response TriageService::list_runs() const {
  ojson runs = ojson::array();
  for (const auto& info : store_.list()) {
    ojson r;
    r["run_id"] = info.run_id;
    r["parent_run_id"] = info.parent_run_id.empty() ? ojson(nullptr) : ojson(info.parent_run_id);
    r["iteration"] = info.iteration;
    r["class_names"] = info.class_names;
    r["training_objects"] = info.training_objects;
    if (store_.scored(info.run_id)) {
      const auto s = store_.scoring(info.run_id);
      r["scored"] = s.scored;
      r["candidates"] = s.candidates;
    } else {
      r["scored"] = nullptr;
      r["candidates"] = nullptr;
    }
    runs.push_back(std::move(r));
  }
  return json_response(200, {{"runs", runs}});
}

Response TriageService::list_candidates(const std::string& run_id, std::size_t page, std::size_t size,
                                        const std::string& filter) const {
  if (page < 1) throw BadRequest("page starts at 1");
  if (size < 1 || size > 1000) throw BadRequest("size must be within 1..1000");
  if (!filter.empty() && filter != "all" && filter != "unreviewed" && filter != "artifact" && filter != "known") {
    validate_decision(filter);
  }
  const auto cache = run(run_id);
  const auto labels = labels_for(run_id);
  ojson items = ojson::array();
  std::size_t total = 0;
  const std::size_t first = (page - 1) * size;
  for (const auto& c : cache->list.candidates) {
    const auto it = labels.find(c.object_id);
    const std::string& label = it == labels.end() ? c.triage_label : it->second;
    if (!matches_filter(label, filter)) continue;
    if (total >= first && total < first + size) items.push_back(candidate_json(c, label));
    ++total;
  }
  ojson j;
  j["run_id"] = run_id;
  j["page"] = page;
  j["size"] = size;
  j["filter"] = filter.empty() ? "all" : filter;
  j["total"] = total;
  j["class_names"] = cache->list.class_names;
  j["candidates"] = items;
  return json_response(200, j);
}

Response TriageService::candidate_detail(const std::string& run_id, const std::string& object_id) const {
  const auto cache = run(run_id);
  const auto it = cache->index.find(object_id);
  if (it == cache->index.end()) throw NotFound("candidate '" + object_id + "' is not in run '" + run_id + "'");
  const auto& c = cache->list.candidates[it->second];
  const auto labels = labels_for(run_id);
  const auto lt = labels.find(object_id);

  if (c.path.empty() || !fs::is_regular_file(c.path)) {
    throw NotFound("light curve file not found: '" + c.path + "'");
  }
  const auto lc = read_lightcurve(c.path, c.band);

  ojson j = candidate_json(c, lt == labels.end() ? c.triage_label : lt->second);
  j["class_names"] = cache->list.class_names;
  j["curve"] = {{"times", vector_json(lc.times)},
                {"magnitudes", vector_json(lc.magnitudes)},
                {"errors", vector_json(lc.errors)}};
  const bool period_valid = std::isfinite(c.period) && c.period > 0.0;
  j["period_valid"] = period_valid;
  if (period_valid) {
    const auto folded = fold(lc, c.period);
    j["folded"] = {{"period", folded.period},
                   {"t0", folded.t0},
                   {"phases", vector_json(folded.phases)},
                   {"magnitudes", vector_json(folded.magnitudes)},
                   {"errors", vector_json(folded.errors)}};
  } else {
    j["folded"] = nullptr;
  }
  return json_response(200, j);
}

Response TriageService::post_label(const std::string& run_id, const std::string& object_id, const std::string& body) {
  const auto j = parse_body(body);
  const auto cache = run(run_id);
  if (!cache->index.count(object_id)) throw NotFound("candidate '" + object_id + "' is not in run '" + run_id + "'");
  if (!j.contains("decision") || !j["decision"].is_string()) throw BadRequest("field 'decision' (string) is required");
  if (!j.contains("reviewer") || !j["reviewer"].is_string() || j["reviewer"].get<std::string>().empty()) {
    throw BadRequest("field 'reviewer' (non-empty string) is required");
  }
  TriageLabel label{object_id, j["decision"].get<std::string>(), j["reviewer"].get<std::string>(), rfc3339_now(),
                    run_id};
  validate_decision(label.decision);

  std::unique_lock lock(label_mutex_);
  log_.append(label);
  if (label.decision != "skip") label_state_[run_id][object_id] = label.decision;
  return json_response(200, label_json(label));
}

Response TriageService::start_retrain(const std::string& run_id, const std::string& body) {
  const auto j = parse_body(body);
  const auto cache = run(run_id);
  if (!j.contains("groups") || !j["groups"].is_array()) throw BadRequest("field 'groups' (array) is required");
  if (j["groups"].empty()) throw BadRequest("at least one artifact group is required");

  const auto labels = labels_for(run_id);
  std::vector<ArtifactGroup> groups;
  std::set<std::string> names;
  for (const auto& g : j["groups"]) {
    ArtifactGroup group;
    if (g.is_string()) {
      group = groups_from_labels(labels, {g.get<std::string>()}).front();
    } else if (g.is_object() && g.contains("name") && g["name"].is_string()) {
      group.name = g["name"].get<std::string>();
      if (g.contains("object_ids")) {
        try {
          group.object_ids = g["object_ids"].get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception&) {
          throw BadRequest("object_ids must be an array of strings");
        }
      }
      for (const auto& oid : group.object_ids) {
        if (!cache->index.count(oid)) throw BadRequest("object '" + oid + "' is not a candidate of run '" + run_id + "'");
      }
    } else {
      throw BadRequest("each group is a name or an object with 'name' and 'object_ids'");
    }
    if (group.name.empty()) throw BadRequest("artifact group name is empty");
    if (!names.insert(group.name).second) throw BadRequest("duplicate artifact group '" + group.name + "'");
    const auto minimum = static_cast<std::size_t>(std::max(0, cache->info.config.min_artifact_group));
    if (group.object_ids.size() < minimum) {
      throw Conflict("artifact group '" + group.name + "' has " + std::to_string(group.object_ids.size()) +
                     " member(s); minimum is " + std::to_string(minimum));
    }
    groups.push_back(std::move(group));
  }

  RetrainJob job;
  job.source_run_id = run_id;
  job.groups = std::move(groups);
  job.iteration = cache->info.iteration + 1;
  {
    std::lock_guard lock(job_mutex_);
    job.job_id = "job-" + std::to_string(++job_counter_);
    jobs_[job.job_id] = job;
    queue_.push_back(job.job_id);
  }
  job_cv_.notify_all();
  return json_response(202, job_json(job));
}

Response TriageService::get_job(const std::string& job_id) const {
  std::lock_guard lock(job_mutex_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFound("unknown job '" + job_id + "'");
  return json_response(200, job_json(it->second));
}

RetrainJob TriageService::wait_for_job(const std::string& job_id) const {
  std::unique_lock lock(job_mutex_);
  if (!jobs_.count(job_id)) throw NotFound("unknown job '" + job_id + "'");
  job_cv_.wait(lock, [&] {
    const auto s = jobs_.at(job_id).status;
    return s == JobStatus::done || s == JobStatus::failed;
  });
  return jobs_.at(job_id);
}

void TriageService::worker_loop(std::stop_token stop) {
  while (true) {
    std::string id;
    RetrainJob job;
    {
      std::unique_lock lock(job_mutex_);
      if (!job_cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
      id = queue_.front();
      queue_.pop_front();
      jobs_[id].status = JobStatus::running;
      job = jobs_[id];
    }
    job_cv_.notify_all();
    if (options_.before_job) options_.before_job(id);

    std::string result, stage, error;
    try {
      result = retrain_run(store_, job.source_run_id, job.groups, options_.workers).info.run_id;
    } catch (const StageError& e) {
      stage = e.stage();
      error = e.what();
    } catch (const std::exception& e) {
      stage = "retrain";
      error = e.what();
    }
    {
      std::lock_guard lock(job_mutex_);
      auto& j = jobs_[id];
      if (error.empty()) {
        j.status = JobStatus::done;
        j.result_run_id = result;
      } else {
        j.status = JobStatus::failed;
        j.error_stage = stage;
        j.error = error;
      }
    }
    job_cv_.notify_all();
  }
}

Response TriageService::handle(const std::string& method, const std::string& path,
                               const std::map<std::string, std::string>& query, const std::string& body,
                               const std::map<std::string, std::string>& headers) {
  try {
    if (!options_.auth_token.empty()) {
      std::string token;
      for (const auto& [k, v] : headers) {
        std::string lower = k;
        for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (lower == "x-auth-token") token = v;
      }
      if (token != options_.auth_token) return error_response(401, "Unauthorized", "missing or wrong X-Auth-Token");
    }
    const auto p = split_path(path);
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto wrong_method = [&] { return error_response(405, "MethodNotAllowed", method + " " + path); };

    if (p.size() == 1 && p[0] == "runs") return get ? list_runs() : wrong_method();
    if (p.size() == 3 && p[0] == "runs" && p[2] == "candidates") {
      if (!get) return wrong_method();
      const auto f = query.find("filter");
      return list_candidates(p[1], parse_size(query, "page", 1), parse_size(query, "size", 50),
                             f == query.end() ? std::string() : f->second);
    }
    if (p.size() == 4 && p[0] == "runs" && p[2] == "candidates") {
      return get ? candidate_detail(p[1], p[3]) : wrong_method();
    }
    if (p.size() == 5 && p[0] == "runs" && p[2] == "candidates" && p[4] == "label") {
      return post ? post_label(p[1], p[3], body) : wrong_method();
    }
    if (p.size() == 3 && p[0] == "runs" && p[2] == "retrain") return post ? start_retrain(p[1], body) : wrong_method();
    if (p.size() == 2 && p[0] == "jobs") return get ? get_job(p[1]) : wrong_method();
    return error_response(404, "NotFound", "no route for " + path);
  } catch (const Error& e) {
    return error_response(http_status(e.kind()), to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "Internal", e.what());
  }
}

void TriageService::serve(const std::string& host, int port) {
  {
    std::lock_guard lock(server_mutex_);
    server_ = std::make_unique<httplib::Server>();
  }
  auto& svr = *server_;
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query(req.params.begin(), req.params.end());
    std::map<std::string, std::string> headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);
    const auto r = handle(req.method, req.path, query, req.body, headers);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, X-Auth-Token"}});
  svr.Get(R"(/.*)", dispatch);
  svr.Post(R"(/.*)", dispatch);
  svr.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  const int bound = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  bound_port_ = bound;
  svr.listen_after_bind();
  bound_port_ = 0;
}

void TriageService::stop() {
  std::lock_guard lock(server_mutex_);
  if (server_) server_->stop();
}

bool TriageService::wait_until_listening(std::chrono::milliseconds timeout) const {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (bound_port_.load() > 0 && server_ && server_->is_running()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return false;
}

}  // namespace rfbn
