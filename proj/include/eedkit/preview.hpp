#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "eedkit/image_io.hpp"
#include "eedkit/params.hpp"

namespace httplib {
class Server;
}

namespace eedkit {

/// Error carrying the HTTP status the service maps it to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message, std::string field = {})
      : std::runtime_error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

struct PreviewConfig {
  int max_running = 1;          ///< jobs diffusing at the same time
  std::size_t max_queued = 16;  ///< queued jobs beyond this are rejected (429)
  int max_height = 512;         ///< crop size cap
  int max_width = 512;
  int default_stride = 64;
};

enum class JobState { kQueued, kRunning, kDone, kCancelled, kFailed };

const char* job_state_name(JobState s);

struct JobStatus {
  std::string id;
  JobState state = JobState::kQueued;
  int steps = 0;
  int stride = 0;
  int current_step = 0;
  std::vector<int> frames;
  std::string error;
};

/// In-memory preview job store with a fixed pool of diffusion workers. Frames
/// are PNG-encoded snapshots at every multiple of the stride and at the final
/// step (step 0 only for a zero-step job).
class PreviewService {
 public:
  explicit PreviewService(PreviewConfig config = {});
  ~PreviewService();

  PreviewService(const PreviewService&) = delete;
  PreviewService& operator=(const PreviewService&) = delete;

  /// Queues a job. stride <= 0 selects the configured default.
  std::string create_job(std::span<const std::uint8_t> image, const DiffusionParams& params,
                         int stride = 0);
  JobStatus get_status(const std::string& id) const;
  /// Shared so repeated fetches hand out the same bytes.
  std::shared_ptr<const Bytes> get_frame(const std::string& id, int step) const;
  JobState cancel_job(const std::string& id);

  const PreviewConfig& config() const { return config_; }

 private:
  struct Job;
  void worker_loop();
  void run(Job& job);
  std::shared_ptr<Job> find(const std::string& id) const;

  PreviewConfig config_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::uint64_t next_id_ = 1;
  bool stopping_ = false;
  std::vector<std::jthread> workers_;
};

/// Parses the JSON parameter object of POST /jobs. An optional "preset" key
/// selects the base; every other key is a preset field or "frame_stride".
/// Throws ServiceError(400) naming the offending field.
DiffusionParams params_from_json(const std::string& text, int* stride);

/// JSON body of GET /presets.
std::string presets_json();

/// Installs the routes:
///   POST /jobs                        multipart: "image" file, "params" JSON
///   GET  /jobs/{id}                   status JSON
///   GET  /jobs/{id}/frames/{step}     PNG bytes
///   POST /jobs/{id}/cancel            status JSON
///   GET  /presets                     builtin presets
void install_routes(httplib::Server& server, PreviewService& service);

}  // namespace eedkit
