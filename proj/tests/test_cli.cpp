#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "eedkit/cli.hpp"
#include "eedkit/diffusion.hpp"
#include "eedkit/image_io.hpp"
#include "eedkit/metrics.hpp"
#include "eedkit/pipeline.hpp"
#include "eedkit/preview.hpp"
#include "oracles.hpp"

using namespace eedkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = EEDKIT_TEST_DATA;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "eedtool");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_mask(const fs::path& p, const LabelMask& m) {
  write_file_atomic(p, encode_gray_png(m.to_raster()));
}

// left half class 0, right half class 1
LabelMask halves(int h, int w) {
  LabelMask m(h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = w / 2; x < w; ++x) m.at(y, x) = 1;
  }
  return m;
}

}  // namespace

TEST_CASE("presets subcommand") {
  Run r = cli({"presets", "list"});
  CHECK(r.code == 0);
  CHECK(r.out == "P_strong\nP_mild\n");
  r = cli({"presets", "show", "P_mild"});
  CHECK(r.code == 0);
  CHECK(r.out == preset_to_toml(find_preset("P_mild")));
  r = cli({"presets", "show", "P_none"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("P_none") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"diffuse", "x.png"}).code == kExitUsage);
  CHECK(cli({"diffuse", "x.png", "-o", "/tmp/x", "--tau", "0.3"}).code == kExitUsage);
  CHECK(cli({"diffuse", "x.png", "-o", "/tmp/x", "--steps", "many"}).code == kExitUsage);
  CHECK(cli({"diffuse", "x.png", "-o", "/tmp/x", "--preset", "P_x"}).code == kExitUsage);
  CHECK(cli({"batch", "job.toml", "--workers", "0"}).code == kExitUsage);
  CHECK(cli({"analyze", "--gt", "a"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("diffuse writes snapshots and energies") {
  TempDir t("eedkit_cli_diffuse");
  const Run r = cli({"diffuse", (kData / "ramp.jpg").string(), "-o", t.path.string(), "--preset",
                     "P_mild", "--steps", "4", "--snapshots", "0,2,4"});
  REQUIRE(r.code == 0);
  const Image input = load_image(kData / "ramp.jpg");
  DiffusionParams p = find_preset("P_mild");
  p.steps = 4;
  p.snapshots = {0, 2, 4};
  const auto snaps = eed_run(input, p);
  const json energies = json::parse(slurp(t.path / "ramp_energy.json"));
  CHECK(energies["input"].get<double>() == dirichlet_energy(input));
  for (const auto& s : snaps) {
    const fs::path file = t.path / ("ramp_" + std::to_string(s.step) + ".png");
    CHECK(read_file(file) == encode_png(s.image));
    CHECK(energies["snapshots"][std::to_string(s.step)].get<double>() == dirichlet_energy(s.image));
  }
  CHECK(r.out.find("step 4 energy") != std::string::npos);

  CHECK(cli({"diffuse", (t.path / "missing.png").string(), "-o", t.path.string()}).code ==
        kExitFailure);
}

TEST_CASE("presmooth flags also set the orientation scale") {
  TempDir t("eedkit_cli_flags");
  // a preset file with explicit orientation values is overridden by flags
  std::ofstream(t.path / "p.toml") << "orient_sigma = 4.0\norient_kernel = 11\n";
  const Run a = cli({"diffuse", (kData / "ramp_gray.jpg").string(), "-o", (t.path / "a").string(),
                     "--preset_file", (t.path / "p.toml").string(), "--steps", "3",
                     "--presmooth_sigma", "1", "--presmooth_kernel", "3"});
  REQUIRE(a.code == 0);
  DiffusionParams p = find_preset("P_strong");
  p.steps = 3;
  p.presmooth_sigma = p.orient_sigma = 1.0;
  p.presmooth_kernel = p.orient_kernel = 3;
  const Image out = eed_run(load_image(kData / "ramp_gray.jpg"), p).back().image;
  CHECK(read_file(t.path / "a/ramp_gray_3.png") == encode_png(out));
}

TEST_CASE("batch runs a job file") {
  TempDir t("eedkit_cli_batch");
  oracle::Rng rng(4);
  save_png(t.path / "in/a/1.png", oracle::random_image(rng, 9, 11, 3));
  save_png(t.path / "in/b/2.png", oracle::random_image(rng, 12, 7, 1));
  std::ofstream(t.path / "job.toml")
      << "input_root = \"in\"\noutput_root = \"out\"\npreset = \"P_mild\"\nsteps = 4\n"
         "snapshots = [2, 4]\n";

  setenv(kWorkersEnv, "2", 1);
  Run r = cli({"batch", (t.path / "job.toml").string()});
  unsetenv(kWorkersEnv);
  CHECK(r.code == 0);
  CHECK(r.out == "processed 2 skipped 0 failed 0\n");
  CHECK(r.err.find("[2/2]") != std::string::npos);
  CHECK(fs::exists(t.path / "out/2/a/1.png"));
  CHECK(fs::exists(t.path / "out/4/b/2.png"));
  CHECK(fs::exists(t.path / "out/manifest.json"));

  setenv(kWorkersEnv, "not a number", 1);
  r = cli({"batch", (t.path / "job.toml").string(), "--workers", "3"});
  unsetenv(kWorkersEnv);
  CHECK(r.code == 0);
  CHECK(r.out == "processed 0 skipped 2 failed 0\n");

  std::ofstream(t.path / "in/c.png") << "broken";
  r = cli({"batch", (t.path / "job.toml").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.out == "processed 0 skipped 2 failed 1\n");
  CHECK(r.err.find("c.png failed") != std::string::npos);

  std::ofstream(t.path / "bad.toml") << "input_root = \"in\"\n";
  CHECK(cli({"batch", (t.path / "bad.toml").string()}).code == kExitUsage);
}

TEST_CASE("analyze writes reports for one and two prediction trees") {
  TempDir t("eedkit_cli_analyze");
  const LabelMask gt = halves(4, 6);
  LabelMask all_road(4, 6, 0);
  write_mask(t.path / "gt/city/x.png", gt);
  write_mask(t.path / "cs/city/x.png", gt);
  write_mask(t.path / "aa/city/x.png", all_road);
  Image img(4, 6, 1, 0.0);
  for (int y = 0; y < 4; ++y) img(y, 5) = 1.0;
  save_png(t.path / "img/city/x.png", img);

  SUBCASE("identical prediction") {
    const Run r = cli({"analyze", "--gt", (t.path / "gt").string(), "--pred",
                       (t.path / "cs").string(), "-o", (t.path / "r1").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out == "a mIoU 1\n");
    const json rep = json::parse(slurp(t.path / "r1/report.json"));
    CHECK(rep["miou"] == 1.0);
    CHECK(rep["segment_count"] == 2);
    CHECK(slurp(t.path / "r1/segments.csv") ==
          "image,segment_id,class_id,area,s_iou_a,visibility\n"
          "city/x.png,1,0,12,1,\n"
          "city/x.png,2,1,12,1,\n");
  }

  SUBCASE("two sources with images") {
    const Run r = cli({"analyze", "--gt", (t.path / "gt").string(), "--pred",
                       (t.path / "cs").string(), "--pred2", (t.path / "aa").string(), "--images",
                       (t.path / "img").string(), "--names", "cs,aa", "-o",
                       (t.path / "r2").string()});
    REQUIRE(r.code == 0);
    // class 0: TP 12, FP 12; class 1: FN 12
    CHECK(r.out == "cs mIoU 1\naa mIoU 0.25\n");
    const json rep = json::parse(slurp(t.path / "r2/report_aa.json"));
    CHECK(rep["miou"] == 0.25);
    CHECK(rep["classes"][0]["iou"] == 0.5);
    CHECK(rep["classes"][1]["iou"] == 0.0);
    CHECK(rep["metadata"]["source"] == "aa");

    const LabelMask segs_src = gt;
    const auto segs = connected_components(segs_src);
    std::ostringstream csv;
    csv << "image,segment_id,class_id,area,s_iou_cs,s_iou_aa,visibility\n";
    // visibility: mean gradient magnitude on each boundary, through the library
    const Image quant = load_image(t.path / "img/city/x.png");
    auto fmt = [](double v) {
      std::ostringstream s;
      s.precision(17);
      s << v;
      return s.str();
    };
    CHECK(slurp(t.path / "r2/segments.csv").rfind(csv.str(), 0) == 0);
    const std::string body = slurp(t.path / "r2/segments.csv");
    CHECK(body.find("city/x.png,1,0,12,1,0.5,") != std::string::npos);
    CHECK(body.find("city/x.png,2,1,12,1,0,") != std::string::npos);
    CHECK(body.find(fmt(boundary_visibility(quant, segs[0]))) != std::string::npos);

    const std::string scatter = slurp(t.path / "r2/scatter.csv");
    CHECK(scatter.rfind("image,segment_id,class_id,visibility,s_iou_diff\n", 0) == 0);
    CHECK(scatter.find(",0.5\n") != std::string::npos);
    CHECK(scatter.find(",1\n") != std::string::npos);

    const GrayRaster diff = decode_gray_png(read_file(t.path / "r2/diff/city/x.png"));
    CHECK(diff.pixels == prediction_diff(gt, all_road).pixels);
    CHECK(diff.pixels[0] == 255);
    CHECK(diff.pixels[5] == 0);
  }

  SUBCASE("misaligned trees") {
    write_mask(t.path / "cs/city/extra.png", gt);
    const Run r = cli({"analyze", "--gt", (t.path / "gt").string(), "--pred",
                       (t.path / "cs").string(), "--pred2", (t.path / "aa").string(), "-o",
                       (t.path / "r3").string()});
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("city/extra.png") != std::string::npos);
    CHECK_FALSE(fs::exists(t.path / "r3/report.json"));

    fs::remove(t.path / "cs/city/extra.png");
    fs::remove(t.path / "aa/city/x.png");
    const Run r2 = cli({"analyze", "--gt", (t.path / "gt").string(), "--pred",
                        (t.path / "cs").string(), "--pred2", (t.path / "aa").string(), "-o",
                        (t.path / "r3").string()});
    CHECK(r2.code == kExitFailure);
    CHECK(r2.err.find("missing in pred2: city/x.png") != std::string::npos);
  }

  SUBCASE("size mismatch") {
    write_mask(t.path / "cs/city/x.png", halves(4, 5));
    const Run r = cli({"analyze", "--gt", (t.path / "gt").string(), "--pred",
                       (t.path / "cs").string(), "-o", (t.path / "r4").string()});
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("size") != std::string::npos);
  }
}

TEST_CASE("mixture writes a sampling list") {
  TempDir t("eedkit_cli_mixture");
  for (const char* rel : {"city/1.png", "city/2.png", "3.png"}) {
    fs::create_directories((t.path / "cs" / rel).parent_path());
    std::ofstream(t.path / "cs" / rel) << "x";
  }
  const std::string cs = "cs=" + (t.path / "cs").string() + ":0.8";
  const std::string eed = "eed=" + (t.path / "eed").string() + ":0.2";
  Run r = cli({"mixture", "--source", cs, "--source", eed, "--seed", "11", "--epochs", "2", "-o",
               (t.path / "mix.csv").string()});
  REQUIRE(r.code == 0);
  const std::string text = slurp(t.path / "mix.csv");
  std::vector<std::string> expected{"3.png", "city/1.png", "city/2.png"};
  std::ostringstream want;
  want << "path,source,file\n";
  for (const auto& s : sample_mixture(expected,
                                      {{"cs", t.path / "cs", 0.8}, {"eed", t.path / "eed", 0.2}},
                                      11, 2)) {
    want << s.path << ',' << s.source << ',' << s.file.generic_string() << '\n';
  }
  CHECK(text == want.str());

  r = cli({"mixture", "--source", "broken", "-o", (t.path / "m.csv").string()});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("serve reports an address it cannot bind") {
  // TEST-NET-3, never a local interface
  const Run r = cli({"serve", "--host", "203.0.113.7", "--port", "0"});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("cannot bind") != std::string::npos);
}

TEST_CASE("the eedtool binary") {
  const std::string tool = EEDTOOL_PATH;
  FILE* pipe = popen((tool + " presets list").c_str(), "r");
  REQUIRE(pipe);
  char buf[256];
  std::string text;
  while (fgets(buf, sizeof buf, pipe)) text += buf;
  const int status = pclose(pipe);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(text == "P_strong\nP_mild\n");
  const int usage = std::system((tool + " diffuse >/dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(usage) == kExitUsage);
}

TEST_CASE("preview interfaces agree with the command line") {
  TempDir t("eedkit_cli_tuner");

  SUBCASE("exported preset survives a batch run") {
    const json presets = json::parse(presets_json());
    std::ofstream(t.path / "strong.toml") << presets["presets"][0]["toml"].get<std::string>();
    oracle::Rng rng(8);
    save_png(t.path / "in/a.png", oracle::random_image(rng, 6, 6, 3));
    std::ofstream(t.path / "job.toml") << "input_root = \"in\"\noutput_root = \"out\"\n"
                                          "preset_file = \"strong.toml\"\nsteps = 2\n";
    REQUIRE(cli({"batch", (t.path / "job.toml").string()}).code == 0);
    const Bytes raw = read_file(t.path / "out/manifest.json");
    const Manifest m = Manifest::from_json(std::string(raw.begin(), raw.end()));
    DiffusionParams expected = find_preset("P_strong");
    expected.steps = 2;
    CHECK(m.params == expected);
  }

  SUBCASE("frame at step k equals diffuse with snapshots {k}") {
    oracle::Rng rng(9);
    const Image crop = oracle::random_image(rng, 14, 18, 3);
    save_png(t.path / "crop.png", crop);
    const Bytes png = read_file(t.path / "crop.png");

    PreviewService service;
    DiffusionParams p = find_preset("P_mild");
    p.steps = 12;
    const std::string id = service.create_job(png, p, 4);
    for (int i = 0; i < 2000 && service.get_status(id).state != JobState::kDone; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    REQUIRE(service.get_status(id).state == JobState::kDone);

    REQUIRE(cli({"diffuse", (t.path / "crop.png").string(), "-o", (t.path / "d").string(),
                 "--preset", "P_mild", "--steps", "12", "--snapshots", "8"})
                .code == 0);
    CHECK(*service.get_frame(id, 8) == read_file(t.path / "d/crop_8.png"));
  }
}
