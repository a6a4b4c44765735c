#pragma once

#include "rfbn/run_dir.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace rfbn {

// decision: "artifact:<group>", "known:<class>", "interesting" or "skip".
struct TriageLabel {
  std::string object_id;
  std::string decision;
  std::string reviewer;
  std::string timestamp;  // RFC 3339, UTC
  std::string run_id;
};

// Throws BadRequest for anything outside the four decision forms.
void validate_decision(const std::string& decision);

std::string rfc3339_now();

// One JSON object per line: {"id","label","reviewer","timestamp","run_id"}.
// Appends are serialized and flushed before returning.
class LabelLog {
 public:
  explicit LabelLog(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  void append(const TriageLabel& label);
  std::vector<TriageLabel> replay() const;

  // Newest decision per object for one run; "skip" entries leave the state
  // unchanged.
  static std::map<std::string, std::string> state(const std::vector<TriageLabel>& log, const std::string& run_id);

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

// Members of each named group: objects whose current decision is
// "artifact:<name>", in object id order.
std::vector<ArtifactGroup> groups_from_labels(const std::map<std::string, std::string>& state,
                                              const std::vector<std::string>& names);

enum class JobStatus { queued, running, done, failed };
std::string_view to_string(JobStatus status) noexcept;

struct RetrainJob {
  std::string job_id;
  std::string source_run_id;
  std::vector<ArtifactGroup> groups;
  JobStatus status = JobStatus::queued;
  std::string result_run_id;
  std::string error_stage;
  std::string error;
  int iteration = 0;  // iteration of the run the job produces
};

struct Response {
  int status = 200;
  std::string body;  // JSON
};

struct ServiceOptions {
  std::string auth_token;  // empty disables the X-Auth-Token check
  unsigned workers = 1;
  // Called on the worker thread after a job is marked running.
  std::function<void(const std::string& job_id)> before_job;
};

// Routes are plain functions over the run store and label log so they can be
// exercised without a socket; serve() binds them to HTTP.
class TriageService {
 public:
  TriageService(RunStore store, ServiceOptions options = {});
  TriageService(RunStore store, std::filesystem::path label_log, ServiceOptions options = {});
  ~TriageService();
  TriageService(const TriageService&) = delete;
  TriageService& operator=(const TriageService&) = delete;

  Response list_runs() const;
  Response list_candidates(const std::string& run_id, std::size_t page, std::size_t size,
                           const std::string& filter) const;
  Response candidate_detail(const std::string& run_id, const std::string& object_id) const;
  Response post_label(const std::string& run_id, const std::string& object_id, const std::string& body);
  Response start_retrain(const std::string& run_id, const std::string& body);
  Response get_job(const std::string& job_id) const;

  // Dispatch by method and path; `query` holds decoded query parameters.
  Response handle(const std::string& method, const std::string& path,
                  const std::map<std::string, std::string>& query, const std::string& body,
                  const std::map<std::string, std::string>& headers = {});

  // Blocks until stop() is called from another thread.
  void serve(const std::string& host, int port);
  void stop();
  // Port chosen by the OS when serve() was given port 0; 0 before binding.
  int bound_port() const { return bound_port_.load(); }
  bool wait_until_listening(std::chrono::milliseconds timeout) const;

  // Blocks until the job leaves queued/running.
  RetrainJob wait_for_job(const std::string& job_id) const;

 private:
  struct RunCache;

  std::shared_ptr<const RunCache> run(const std::string& run_id) const;
  std::map<std::string, std::string> labels_for(const std::string& run_id) const;
  void worker_loop(std::stop_token stop);

  RunStore store_;
  LabelLog log_;
  ServiceOptions options_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const RunCache>> cache_;

  mutable std::shared_mutex label_mutex_;
  std::map<std::string, std::map<std::string, std::string>> label_state_;  // run -> object -> label

  mutable std::mutex job_mutex_;
  mutable std::condition_variable_any job_cv_;
  std::map<std::string, RetrainJob> jobs_;
  std::deque<std::string> queue_;
  std::size_t job_counter_ = 0;

  std::atomic<int> bound_port_{0};
  std::mutex server_mutex_;
  std::unique_ptr<httplib::Server> server_;
  std::jthread worker_;
};

}  // namespace rfbn
