#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <functional>
#include <thread>

#include "eedkit/diffusion.hpp"
#include "eedkit/preview.hpp"
#include "oracles.hpp"

using namespace eedkit;
using nlohmann::json;

namespace {

bool wait_for(const std::function<bool()>& done, double seconds = 60.0) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (std::chrono::steady_clock::now() < deadline) {
    if (done()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return false;
}

Bytes crop_png(int h, int w, std::uint64_t seed = 3) {
  oracle::Rng rng(seed);
  Image img = oracle::random_image(rng, h, w, 3);
  // work on the quantized image so the service and the reference see the same input
  return encode_png(img);
}

DiffusionParams quick(int steps) {
  DiffusionParams p = find_preset("P_mild");
  p.steps = steps;
  return p;
}

bool finished(const PreviewService& s, const std::string& id) {
  const JobState st = s.get_status(id).state;
  return st != JobState::kQueued && st != JobState::kRunning;
}

int service_status(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 0;
}

}  // namespace

TEST_CASE("frames match direct snapshots bit for bit") {
  PreviewService service;
  const Bytes png = crop_png(20, 24);
  const std::string id = service.create_job(png, quick(25), 10);
  REQUIRE(wait_for([&] { return finished(service, id); }));
  const JobStatus st = service.get_status(id);
  CHECK(st.state == JobState::kDone);
  CHECK(st.steps == 25);
  CHECK(st.stride == 10);
  CHECK(st.current_step == 25);
  CHECK(st.frames == std::vector<int>{10, 20, 25});

  DiffusionParams ref = quick(25);
  ref.snapshots = {10, 20, 25};
  const auto snaps = eed_run(decode_image(png), ref);
  for (const auto& s : snaps) {
    CHECK(*service.get_frame(id, s.step) == encode_png(s.image));
  }
  CHECK(service.get_frame(id, 10) == service.get_frame(id, 10));
  CHECK(service_status([&] { service.get_frame(id, 5); }) == 404);
}

TEST_CASE("zero-step jobs publish the input as frame 0") {
  PreviewService service;
  const Bytes png = crop_png(8, 8);
  const std::string id = service.create_job(png, quick(0));
  REQUIRE(wait_for([&] { return finished(service, id); }));
  const JobStatus st = service.get_status(id);
  CHECK(st.state == JobState::kDone);
  CHECK(st.frames == std::vector<int>{0});
  CHECK(*service.get_frame(id, 0) == png);
}

TEST_CASE("default stride comes from the configuration") {
  PreviewConfig cfg;
  cfg.default_stride = 4;
  PreviewService service(cfg);
  const std::string id = service.create_job(crop_png(6, 7), quick(9));
  REQUIRE(wait_for([&] { return finished(service, id); }));
  CHECK(service.get_status(id).frames == std::vector<int>{4, 8, 9});
}

TEST_CASE("cancellation") {
  PreviewService service;  // one running job at a time
  const Bytes png = crop_png(96, 96);
  const std::string slow = service.create_job(png, find_preset("P_strong"), 1);
  const std::string queued = service.create_job(crop_png(8, 8), quick(5), 1);

  REQUIRE(wait_for([&] { return service.get_status(slow).frames.size() >= 2; }));
  CHECK(service.get_status(queued).state == JobState::kQueued);
  CHECK(service.cancel_job(queued) == JobState::kCancelled);

  CHECK(service.cancel_job(slow) == JobState::kCancelled);
  const auto frames_at_cancel = service.get_status(slow).frames;
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  CHECK(service.get_status(slow).frames == frames_at_cancel);
  CHECK(service.get_status(slow).state == JobState::kCancelled);
  CHECK(frames_at_cancel.size() < 5792);

  // the worker moves on; the cancelled queued job never runs
  const std::string after = service.create_job(crop_png(8, 8), quick(3), 1);
  REQUIRE(wait_for([&] { return finished(service, after); }));
  CHECK(service.get_status(after).state == JobState::kDone);
  CHECK(service.get_status(queued).state == JobState::kCancelled);
  CHECK(service.get_status(queued).frames.empty());
  CHECK(service.get_status(queued).current_step == 0);

  // cancelling a finished job changes nothing
  CHECK(service.cancel_job(after) == JobState::kDone);
  CHECK(service.get_status(after).frames == std::vector<int>{1, 2, 3});
  CHECK(service_status([&] { service.cancel_job("nope"); }) == 404);
}

TEST_CASE("service errors") {
  PreviewConfig cfg;
  cfg.max_height = 48;
  cfg.max_width = 64;
  cfg.max_queued = 2;
  PreviewService service(cfg);

  try {
    service.create_job(crop_png(49, 8), quick(1));
    FAIL("expected a size error");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 413);
    CHECK(std::string(e.what()).find("64x48") != std::string::npos);
  }
  CHECK(service_status([&] { service.create_job(crop_png(8, 65), quick(1)); }) == 413);
  CHECK(service_status([&] { service.create_job(crop_png(2, 8), quick(1)); }) == 400);
  CHECK(service_status([&] { service.create_job(Bytes{1, 2, 3}, quick(1)); }) == 400);
  DiffusionParams bad = quick(1);
  bad.tau = 0.3;
  try {
    service.create_job(crop_png(8, 8), bad);
    FAIL("expected a parameter error");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 400);
    CHECK(e.field() == "tau");
  }
  CHECK(service_status([&] { service.get_status("404"); }) == 404);

  // fill the queue behind a long job
  const std::string busy = service.create_job(crop_png(48, 64), find_preset("P_strong"), 1000);
  REQUIRE(wait_for([&] { return service.get_status(busy).state == JobState::kRunning; }));
  service.create_job(crop_png(8, 8), quick(1));
  service.create_job(crop_png(8, 8), quick(1));
  CHECK(service_status([&] { service.create_job(crop_png(8, 8), quick(1)); }) == 429);
  service.cancel_job(busy);
}

TEST_CASE("JSON parameters") {
  int stride = 0;
  DiffusionParams p = params_from_json("{}", &stride);
  CHECK(p == find_preset("P_strong"));
  CHECK(stride == 0);

  p = params_from_json(R"({"preset": "P_mild", "steps": 12, "frame_stride": 3})", &stride);
  CHECK(p.kappa == 1.0 / 15.0);
  CHECK(p.steps == 12);
  CHECK(stride == 3);

  p = params_from_json(R"({"presmooth_sigma": 1.5, "presmooth_kernel": 7, "kappa": 1})", nullptr);
  CHECK(p.orient_sigma == 1.5);
  CHECK(p.orient_kernel == 7);
  CHECK(p.kappa == 1.0);

  auto field_of = [](const std::string& text) -> std::string {
    try {
      params_from_json(text, nullptr);
    } catch (const ServiceError& e) {
      CHECK(e.status() == 400);
      return e.field();
    }
    return "";
  };
  CHECK(field_of(R"({"kappa": -1})") == "kappa");
  CHECK(field_of(R"({"kappa": "x"})") == "kappa");
  CHECK(field_of(R"({"steps": 1.5})") == "steps");
  CHECK(field_of(R"({"presmooth_kernel": 4})") == "presmooth_kernel");
  CHECK(field_of(R"({"tau": 0.3})") == "tau");
  CHECK(field_of(R"({"frame_stride": 0})") == "frame_stride");
  CHECK(field_of(R"({"preset": "P_x"})") == "preset");
  CHECK(field_of(R"({"colour": 1})") == "colour");
  CHECK(field_of(R"([1, 2])") == "params");
  CHECK(field_of("{") == "params");
}

TEST_CASE("presets JSON") {
  const json j = json::parse(presets_json());
  REQUIRE(j["presets"].size() == 2);
  CHECK(j["presets"][0]["name"] == "P_strong");
  CHECK(j["presets"][0]["kappa"] == 0.1);
  CHECK(j["presets"][0]["steps"] == 5792);
  CHECK(j["presets"][1]["name"] == "P_mild");
  CHECK(j["presets"][1]["presmooth_kernel"] == 5);
  CHECK(preset_from_toml(j["presets"][1]["toml"].get<std::string>()) == find_preset("P_mild"));
}

TEST_CASE("HTTP routes") {
  PreviewConfig cfg;
  cfg.max_height = 32;
  cfg.max_width = 32;
  PreviewService service(cfg);
  httplib::Server server;
  install_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  const Bytes png = crop_png(12, 14);
  const std::string png_text(png.begin(), png.end());
  httplib::MultipartFormDataItems form{
      {"image", png_text, "crop.png", "image/png"},
      {"params", R"({"preset": "P_mild", "steps": 6, "frame_stride": 2})", "", "application/json"}};
  auto res = client.Post("/jobs", form);
  REQUIRE(res);
  CHECK(res->status == 201);
  const std::string id = json::parse(res->body)["id"];

  REQUIRE(wait_for([&] {
    auto r = client.Get("/jobs/" + id);
    return r && json::parse(r->body)["state"] == "done";
  }));
  res = client.Get("/jobs/" + id);
  const json st = json::parse(res->body);
  CHECK(st["frames"] == json::array({2, 4, 6}));
  CHECK(st["steps"] == 6);
  CHECK(st["step"] == 6);

  res = client.Get("/jobs/" + id + "/frames/4");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  DiffusionParams ref = find_preset("P_mild");
  ref.steps = 6;
  ref.snapshots = {4};
  const Bytes expected = encode_png(eed_run(decode_image(png), ref).front().image);
  CHECK(res->body == std::string(expected.begin(), expected.end()));

  CHECK(client.Get("/jobs/" + id + "/frames/3")->status == 404);
  CHECK(client.Get("/jobs/999")->status == 404);

  res = client.Post("/jobs/" + id + "/cancel");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["state"] == "done");

  res = client.Get("/presets");
  REQUIRE(res);
  CHECK(json::parse(res->body)["presets"].size() == 2);

  // errors carry a JSON body
  const Bytes big = crop_png(40, 10);
  res = client.Post("/jobs", httplib::MultipartFormDataItems{
                                 {"image", std::string(big.begin(), big.end()), "big.png", "image/png"}});
  REQUIRE(res);
  CHECK(res->status == 413);
  CHECK(json::parse(res->body)["error"].get<std::string>().find("32x32") != std::string::npos);

  res = client.Post("/jobs", httplib::MultipartFormDataItems{
                                 {"image", png_text, "crop.png", "image/png"},
                                 {"params", R"({"kappa": 0})", "", "application/json"}});
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body)["field"] == "kappa");

  res = client.Post("/jobs", "{}", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  server.stop();
  listener.join();
}
