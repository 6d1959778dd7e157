#include "eedkit/preview.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>

#include "eedkit/diffusion.hpp"

namespace eedkit {

using nlohmann::json;

struct PreviewService::Job {
  std::string id;
  Image crop;
  DiffusionParams params;
  int stride = 1;
  JobState state = JobState::kQueued;
  int current_step = 0;
  std::map<int, std::shared_ptr<const Bytes>> frames;
  std::string error;
  std::atomic<bool> cancel{false};
};

const char* job_state_name(JobState s) {
  switch (s) {
    case JobState::kQueued:
      return "queued";
    case JobState::kRunning:
      return "running";
    case JobState::kDone:
      return "done";
    case JobState::kCancelled:
      return "cancelled";
    case JobState::kFailed:
      return "failed";
  }
  return "unknown";
}

PreviewService::PreviewService(PreviewConfig config) : config_(config) {
  if (config_.max_running < 1) throw ParameterError("max_running must be >= 1");
  if (config_.default_stride < 1) throw ParameterError("default_stride must be >= 1");
  for (int i = 0; i < config_.max_running; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

PreviewService::~PreviewService() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
    for (auto& [id, job] : jobs_) job->cancel = true;
  }
  wake_.notify_all();
  workers_.clear();  // joins
}

std::string PreviewService::create_job(std::span<const std::uint8_t> image,
                                       const DiffusionParams& params, int stride) {
  try {
    params.validate();
  } catch (const FieldError& e) {
    throw ServiceError(400, e.what(), e.field());
  }
  if (stride <= 0) stride = config_.default_stride;

  Image crop;
  try {
    crop = decode_image(image);
  } catch (const IoError& e) {
    throw ServiceError(400, std::string("image: ") + e.what(), "image");
  }
  if (crop.height() > config_.max_height || crop.width() > config_.max_width) {
    throw ServiceError(413,
                       "image " + std::to_string(crop.width()) + "x" +
                           std::to_string(crop.height()) + " exceeds the size cap " +
                           std::to_string(config_.max_width) + "x" +
                           std::to_string(config_.max_height),
                       "image");
  }
  if (crop.height() < 3 || crop.width() < 3) {
    throw ServiceError(400, "image must be at least 3x3", "image");
  }

  auto job = std::make_shared<Job>();
  job->crop = std::move(crop);
  job->params = params;
  job->params.snapshots = {0};
  job->stride = stride;
  {
    std::lock_guard lock(mutex_);
    if (queue_.size() >= config_.max_queued) {
      throw ServiceError(429, "queue full (" + std::to_string(config_.max_queued) + " jobs)");
    }
    job->id = std::to_string(next_id_++);
    jobs_[job->id] = job;
    queue_.push_back(job);
  }
  wake_.notify_one();
  return job->id;
}

std::shared_ptr<PreviewService::Job> PreviewService::find(const std::string& id) const {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw ServiceError(404, "unknown job '" + id + "'");
  return it->second;
}

JobStatus PreviewService::get_status(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto job = find(id);
  JobStatus s;
  s.id = job->id;
  s.state = job->state;
  s.steps = job->params.steps;
  s.stride = job->stride;
  s.current_step = job->current_step;
  for (const auto& [step, bytes] : job->frames) s.frames.push_back(step);
  s.error = job->error;
  return s;
}

std::shared_ptr<const Bytes> PreviewService::get_frame(const std::string& id, int step) const {
  std::lock_guard lock(mutex_);
  auto job = find(id);
  auto it = job->frames.find(step);
  if (it == job->frames.end()) {
    throw ServiceError(404, "job '" + id + "' has no frame at step " + std::to_string(step));
  }
  return it->second;
}

JobState PreviewService::cancel_job(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto job = find(id);
  if (job->state == JobState::kQueued || job->state == JobState::kRunning) {
    job->state = JobState::kCancelled;
    job->cancel = true;
  }
  return job->state;
}

void PreviewService::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      if (job->state != JobState::kQueued) continue;  // cancelled while queued
      job->state = JobState::kRunning;
    }
    run(*job);
  }
}

void PreviewService::run(Job& job) {
  const int steps = job.params.steps;
  auto store = [&](int step, const Image& u) {
    auto bytes = std::make_shared<const Bytes>(encode_png(u));
    std::lock_guard lock(mutex_);
    if (job.state != JobState::kRunning) return false;
    job.frames[step] = std::move(bytes);
    return true;
  };

  try {
    if (steps == 0) {
      store(0, job.crop);
    } else {
      eed_run(job.crop, job.params, [&](int k, const Image& u) {
        if (job.cancel) return false;
        if (k % job.stride == 0 || k == steps) {
          if (!store(k, u)) return false;
        }
        std::lock_guard lock(mutex_);
        job.current_step = k;
        return !job.cancel.load();
      });
    }
    std::lock_guard lock(mutex_);
    if (job.state == JobState::kRunning) job.state = JobState::kDone;
  } catch (const std::exception& e) {
    std::lock_guard lock(mutex_);
    if (job.state == JobState::kRunning) {
      job.state = JobState::kFailed;
      job.error = e.what();
    }
  }
}

namespace {

json params_to_json(const DiffusionParams& p) {
  return {{"kappa", p.kappa},
          {"presmooth_sigma", p.presmooth_sigma},
          {"presmooth_kernel", p.presmooth_kernel},
          {"orient_sigma", p.orient_sigma},
          {"orient_kernel", p.orient_kernel},
          {"tau", p.tau},
          {"steps", p.steps},
          {"snapshots", p.snapshots}};
}

double number_field(const json& j, const char* key) {
  if (!j.is_number()) throw ServiceError(400, std::string(key) + " must be a number", key);
  return j.get<double>();
}

int int_field(const json& j, const char* key) {
  if (!j.is_number_integer()) throw ServiceError(400, std::string(key) + " must be an integer", key);
  return j.get<int>();
}

void send_error(httplib::Response& res, const ServiceError& e) {
  json body{{"error", e.what()}};
  if (!e.field().empty()) body["field"] = e.field();
  res.status = e.status();
  res.set_content(body.dump(), "application/json");
}

json status_json(const JobStatus& s) {
  json j{{"id", s.id},         {"state", job_state_name(s.state)}, {"steps", s.steps},
         {"stride", s.stride}, {"step", s.current_step},          {"frames", s.frames}};
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    send_error(res, e);
  } catch (const std::exception& e) {
    send_error(res, ServiceError(500, e.what()));
  }
}

}  // namespace

DiffusionParams params_from_json(const std::string& text, int* stride) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ServiceError(400, std::string("params: invalid JSON: ") + e.what(), "params");
  }
  if (!j.is_object()) throw ServiceError(400, "params must be a JSON object", "params");

  DiffusionParams p = find_preset("P_strong");
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ServiceError(400, "preset must be a string", "preset");
    try {
      p = find_preset(j["preset"].get<std::string>());
    } catch (const NotFoundError& e) {
      throw ServiceError(400, e.what(), "preset");
    }
  }
  bool orient_sigma_set = false;
  bool orient_kernel_set = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (key == "kappa") {
      p.kappa = number_field(value, "kappa");
    } else if (key == "presmooth_sigma") {
      p.presmooth_sigma = number_field(value, "presmooth_sigma");
    } else if (key == "presmooth_kernel") {
      p.presmooth_kernel = int_field(value, "presmooth_kernel");
    } else if (key == "orient_sigma") {
      p.orient_sigma = number_field(value, "orient_sigma");
      orient_sigma_set = true;
    } else if (key == "orient_kernel") {
      p.orient_kernel = int_field(value, "orient_kernel");
      orient_kernel_set = true;
    } else if (key == "tau") {
      p.tau = number_field(value, "tau");
    } else if (key == "steps") {
      p.steps = int_field(value, "steps");
    } else if (key == "snapshots") {
      if (!value.is_array()) throw ServiceError(400, "snapshots must be an array", "snapshots");
      p.snapshots.clear();
      for (const auto& v : value) p.snapshots.push_back(int_field(v, "snapshots"));
    } else if (key == "frame_stride") {
      const int s = int_field(value, "frame_stride");
      if (s < 1) throw ServiceError(400, "frame_stride must be >= 1", "frame_stride");
      if (stride) *stride = s;
    } else {
      throw ServiceError(400, "unknown parameter '" + key + "'", key);
    }
  }
  if (!orient_sigma_set && j.contains("presmooth_sigma")) p.orient_sigma = p.presmooth_sigma;
  if (!orient_kernel_set && j.contains("presmooth_kernel")) p.orient_kernel = p.presmooth_kernel;
  try {
    p.validate();
  } catch (const FieldError& e) {
    throw ServiceError(400, e.what(), e.field());
  }
  return p;
}

std::string presets_json() {
  json list = json::array();
  for (const auto& preset : builtin_presets()) {
    json entry = params_to_json(preset.params);
    entry["name"] = preset.name;
    entry["toml"] = preset_to_toml(preset.params);
    list.push_back(entry);
  }
  return json{{"presets", list}}.dump();
}

void install_routes(httplib::Server& server, PreviewService& service) {
  server.Post("/jobs", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data() || !req.has_file("image")) {
        throw ServiceError(400, "expected multipart form with an 'image' part", "image");
      }
      int stride = 0;
      DiffusionParams params = find_preset("P_strong");
      if (req.has_file("params")) params = params_from_json(req.get_file_value("params").content, &stride);
      const std::string& data = req.get_file_value("image").content;
      const std::string id = service.create_job(
          std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()), params,
          stride);
      res.status = 201;
      res.set_content(status_json(service.get_status(id)).dump(), "application/json");
    });
  });

  server.Get(R"(/jobs/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.set_content(status_json(service.get_status(req.matches[1])).dump(), "application/json");
    });
  });

  server.Get(R"(/jobs/([^/]+)/frames/(-?\d+))",
             [&service](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 int step = 0;
                 try {
                   step = std::stoi(req.matches[2]);
                 } catch (const std::exception&) {
                   throw ServiceError(404, "bad step index");
                 }
                 auto frame = service.get_frame(req.matches[1], step);
                 res.set_content(reinterpret_cast<const char*>(frame->data()), frame->size(),
                                 "image/png");
               });
             });

  server.Post(R"(/jobs/([^/]+)/cancel)",
              [&service](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  service.cancel_job(req.matches[1]);
                  res.set_content(status_json(service.get_status(req.matches[1])).dump(),
                                  "application/json");
                });
              });

  server.Get("/presets", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(presets_json(), "application/json");
  });
}

}  // namespace eedkit
