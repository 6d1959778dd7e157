#include "eedkit/cli.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "eedkit/diffusion.hpp"
#include "eedkit/image_io.hpp"
#include "eedkit/metrics.hpp"
#include "eedkit/params.hpp"
#include "eedkit/pipeline.hpp"
#include "eedkit/preview.hpp"

namespace eedkit {

namespace fs = std::filesystem;

namespace {

/// Flags mirroring the preset keys one-to-one.
struct ParamFlags {
  std::string preset = "P_strong";
  std::string preset_file;
  double kappa = 0, presmooth_sigma = 0, orient_sigma = 0, tau = 0;
  int presmooth_kernel = 0, orient_kernel = 0, steps = 0;
  std::vector<int> snapshots;
  CLI::Option* kappa_opt = nullptr;
  CLI::Option* presmooth_sigma_opt = nullptr;
  CLI::Option* presmooth_kernel_opt = nullptr;
  CLI::Option* orient_sigma_opt = nullptr;
  CLI::Option* orient_kernel_opt = nullptr;
  CLI::Option* tau_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* snapshots_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "builtin preset name")->capture_default_str();
    cmd->add_option("--preset_file", preset_file, "TOML preset file (applied over --preset)");
    kappa_opt = cmd->add_option("--kappa", kappa, "contrast parameter");
    presmooth_sigma_opt = cmd->add_option("--presmooth_sigma", presmooth_sigma);
    presmooth_kernel_opt = cmd->add_option("--presmooth_kernel", presmooth_kernel);
    orient_sigma_opt = cmd->add_option("--orient_sigma", orient_sigma);
    orient_kernel_opt = cmd->add_option("--orient_kernel", orient_kernel);
    tau_opt = cmd->add_option("--tau", tau, "step size, at most 0.25");
    steps_opt = cmd->add_option("--steps", steps, "iteration count");
    snapshots_opt = cmd->add_option("--snapshots", snapshots, "step indices to write")
                        ->delimiter(',');
  }

  DiffusionParams resolve() const {
    DiffusionParams p = find_preset(preset);
    if (!preset_file.empty()) p = load_preset_file(preset_file, p);
    if (*kappa_opt) p.kappa = kappa;
    if (*presmooth_sigma_opt) {
      p.presmooth_sigma = presmooth_sigma;
      if (!*orient_sigma_opt) p.orient_sigma = presmooth_sigma;
    }
    if (*presmooth_kernel_opt) {
      p.presmooth_kernel = presmooth_kernel;
      if (!*orient_kernel_opt) p.orient_kernel = presmooth_kernel;
    }
    if (*orient_sigma_opt) p.orient_sigma = orient_sigma;
    if (*orient_kernel_opt) p.orient_kernel = orient_kernel;
    if (*tau_opt) p.tau = tau;
    if (*steps_opt) p.steps = steps;
    if (*snapshots_opt) p.snapshots = snapshots;
    p.validate();
    return p;
  }
};

int env_workers() {
  if (const char* v = std::getenv(kWorkersEnv)) {
    try {
      const int n = std::stoi(v);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --- diffuse ---------------------------------------------------------------

struct DiffuseArgs {
  std::string image;
  std::string output;
  ParamFlags params;
};

int cmd_diffuse(const DiffuseArgs& args, std::ostream& out, std::ostream& err) {
  const DiffusionParams p = args.params.resolve();
  const Image img = load_image(args.image);
  const std::string stem = fs::path(args.image).stem().string();
  err << "diffusing " << args.image << " (" << img.width() << "x" << img.height() << "x"
      << img.channels() << ") for " << p.steps << " steps\n";

  nlohmann::ordered_json energies;
  energies["input"] = dirichlet_energy(img);
  out << "input energy " << energies["input"].get<double>() << "\n";
  for (const auto& snap : eed_run(img, p)) {
    const fs::path file = fs::path(args.output) / (stem + "_" + std::to_string(snap.step) + ".png");
    save_png(file, snap.image);
    const double e = dirichlet_energy(snap.image);
    energies["snapshots"][std::to_string(snap.step)] = e;
    out << "step " << snap.step << " energy " << e << " -> " << file.string() << "\n";
  }
  write_text(fs::path(args.output) / (stem + "_energy.json"), energies.dump(2) + "\n");
  return kExitOk;
}

// --- batch -----------------------------------------------------------------

struct BatchArgs {
  std::string job_file;
  int workers = 0;
  CLI::Option* workers_opt = nullptr;
};

int cmd_batch(const BatchArgs& args, std::ostream& out, std::ostream& err) {
  DatasetJob job = load_job_file(args.job_file, env_workers());
  if (*args.workers_opt) job.workers = args.workers;
  const JobResult r = run_job(job, [&err](const ManifestEntry& e, std::size_t done, std::size_t total) {
    err << "[" << done << "/" << total << "] " << e.path << " "
        << (e.status == EntryStatus::kDone ? "done" : "failed");
    if (!e.error.empty()) err << ": " << e.error;
    err << "\n";
  });
  out << "processed " << r.processed << " skipped " << r.skipped << " failed " << r.failed << "\n";
  return r.failed > 0 ? kExitFailure : kExitOk;
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
  std::string gt;
  std::string pred;
  std::string pred2;
  std::string images;
  std::string classes;
  std::string output;
  std::string pattern = "*.png";
  int ignore = kIgnoreId;
  std::vector<std::string> names{"a", "b"};
};

// Image with the same relative path, any of the usual extensions.
std::optional<fs::path> find_image(const fs::path& root, const std::string& rel) {
  fs::path p = root / rel;
  if (fs::exists(p)) return p;
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    p.replace_extension(ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
  const ClassSet classes = args.classes.empty() ? common_classes() : load_class_set(args.classes);
  const auto ignore = static_cast<ClassId>(args.ignore);
  const bool two = !args.pred2.empty();

  const auto gt_files = discover(args.gt, args.pattern);
  std::vector<std::string> mismatches;
  auto check_tree = [&](const std::string& root, const char* label) {
    const auto files = discover(root, args.pattern);
    const std::set<std::string> have(files.begin(), files.end());
    const std::set<std::string> want(gt_files.begin(), gt_files.end());
    for (const auto& f : want) {
      if (!have.count(f)) mismatches.push_back(std::string("missing in ") + label + ": " + f);
    }
    for (const auto& f : have) {
      if (!want.count(f)) mismatches.push_back(std::string("no ground truth for ") + label + ": " + f);
    }
  };
  check_tree(args.pred, "pred");
  if (two) check_tree(args.pred2, "pred2");
  if (!args.images.empty()) {
    for (const auto& f : gt_files) {
      if (!find_image(args.images, f)) mismatches.push_back("missing in images: " + f);
    }
  }
  if (!mismatches.empty()) {
    err << "analyze: trees are not aligned\n";
    for (const auto& m : mismatches) err << "  " << m << "\n";
    return kExitFailure;
  }

  std::vector<std::string> sources{args.names.at(0)};
  if (two) sources.push_back(args.names.size() > 1 ? args.names[1] : "b");

  ConfusionMatrix cm_a(classes.ids());
  ConfusionMatrix cm_b(classes.ids());
  MetricsReport report;
  std::vector<SegmentScore> scores_a, scores_b;
  const fs::path out_dir(args.output);

  for (const auto& rel : gt_files) {
    const LabelMask gt = load_mask((fs::path(args.gt) / rel).string(), ignore);
    const LabelMask pa = load_mask((fs::path(args.pred) / rel).string(), ignore);
    if (!pa.same_shape(gt)) throw IoError(rel + ": prediction size differs from ground truth");
    cm_a.accumulate(pa, gt);
    std::optional<LabelMask> pb;
    if (two) {
      pb = load_mask((fs::path(args.pred2) / rel).string(), ignore);
      if (!pb->same_shape(gt)) throw IoError(rel + ": pred2 size differs from ground truth");
      cm_b.accumulate(*pb, gt);
      write_file_atomic(out_dir / "diff" / rel, encode_gray_png(prediction_diff(pa, *pb)));
    }
    std::optional<Image> img;
    if (!args.images.empty()) {
      img = load_image(*find_image(args.images, rel));
      if (img->height() != gt.height || img->width() != gt.width) {
        throw IoError(rel + ": image size differs from ground truth");
      }
    }
    for (const auto& seg : connected_components(gt)) {
      if (!classes.contains(seg.class_id)) continue;
      SegmentRow row{rel, seg.id, seg.class_id, seg.area(), {s_iou(pa, seg)}, std::nullopt};
      if (pb) row.s_iou.push_back(s_iou(*pb, seg));
      if (img) row.visibility = boundary_visibility(*img, seg);
      const double vis = row.visibility.value_or(std::nan(""));
      scores_a.push_back({rel, seg.id, seg.class_id, vis, row.s_iou[0]});
      if (pb) scores_b.push_back({rel, seg.id, seg.class_id, vis, row.s_iou[1]});
      report.segments.push_back(std::move(row));
    }
    err << "analyzed " << rel << "\n";
  }

  MetricsReport ra = class_iou(cm_a, classes);
  ra.segments = report.segments;
  ra.metadata["source"] = sources[0];
  ra.metadata["images"] = std::to_string(gt_files.size());
  ra.metadata["ignore_id"] = std::to_string(args.ignore);
  ra.metadata["visibility_gradient"] = "central differences stacked over all channels";
  write_text(out_dir / "report.json", report_to_json(ra));
  write_text(out_dir / "segments.csv", segments_to_csv(ra, sources));
  out << sources[0] << " mIoU " << ra.miou << "\n";
  if (two) {
    MetricsReport rb = class_iou(cm_b, classes);
    rb.metadata = ra.metadata;
    rb.metadata["source"] = sources[1];
    rb.segments = report.segments;
    write_text(out_dir / ("report_" + sources[1] + ".json"), report_to_json(rb));
    write_text(out_dir / "scatter.csv", scatter_to_csv(segment_scatter(scores_a, scores_b)));
    out << sources[1] << " mIoU " << rb.miou << "\n";
  }
  return kExitOk;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  PreviewConfig config;
  int max_size = 512;
};

httplib::Server* g_server = nullptr;

extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(ServeArgs args, std::ostream& err) {
  args.config.max_height = args.config.max_width = args.max_size;
  PreviewService service(args.config);
  httplib::Server server;
  install_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  int port = args.port;
  if (port == 0) {
    port = server.bind_to_any_port(args.host);
  } else if (!server.bind_to_port(args.host, port)) {
    port = -1;
  }
  if (port < 0) {
    err << "serve: cannot bind " << args.host << ":" << args.port << "\n";
    g_server = nullptr;
    return kExitFailure;
  }
  err << "listening on http://" << args.host << ":" << port << "\n" << std::flush;
  server.listen_after_bind();
  g_server = nullptr;
  return kExitOk;
}

// --- mixture ---------------------------------------------------------------

struct MixtureArgs {
  std::vector<std::string> sources;  // name=root:weight
  std::string pattern = "*.png";
  std::uint64_t seed = 0;
  int epochs = 1;
  std::string output;
};

int cmd_mixture(const MixtureArgs& args, std::ostream& err) {
  std::vector<MixtureSource> sources;
  for (const auto& spec : args.sources) {
    const auto eq = spec.find('=');
    const auto colon = spec.rfind(':');
    if (eq == std::string::npos || colon == std::string::npos || colon < eq) {
      throw ParameterError("--source expects name=root:weight, got '" + spec + "'");
    }
    MixtureSource s;
    s.name = spec.substr(0, eq);
    s.root = spec.substr(eq + 1, colon - eq - 1);
    try {
      s.weight = std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw ParameterError("bad weight in '" + spec + "'");
    }
    sources.push_back(std::move(s));
  }
  if (sources.empty()) throw ParameterError("at least one --source is required");
  const auto paths = discover(sources.front().root, args.pattern);
  std::ostringstream csv;
  csv << "path,source,file\n";
  for (const auto& s : sample_mixture(paths, sources, args.seed, args.epochs)) {
    csv << s.path << ',' << s.source << ',' << s.file.generic_string() << '\n';
  }
  write_text(args.output, csv.str());
  err << "wrote " << paths.size() * static_cast<std::size_t>(args.epochs) << " samples to "
      << args.output << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Edge enhancing diffusion toolkit", "eedtool"};
  app.require_subcommand(1);

  DiffuseArgs diffuse;
  auto* c_diffuse = app.add_subcommand("diffuse", "diffuse one image and write snapshots");
  c_diffuse->add_option("image", diffuse.image, "input PNG or JPEG")->required();
  c_diffuse->add_option("-o,--output", diffuse.output, "output directory")->required();
  diffuse.params.attach(c_diffuse);

  BatchArgs batch;
  auto* c_batch = app.add_subcommand("batch", "run a dataset duplication job");
  c_batch->add_option("job", batch.job_file, "TOML job file")->required();
  batch.workers_opt = c_batch->add_option("--workers", batch.workers, "worker threads")
                          ->check(CLI::PositiveNumber);

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "segmentation metrics over mask trees");
  c_analyze->add_option("--gt", analyze.gt, "ground-truth mask tree")->required();
  c_analyze->add_option("--pred", analyze.pred, "prediction mask tree")->required();
  c_analyze->add_option("--pred2", analyze.pred2, "second prediction tree");
  c_analyze->add_option("--images", analyze.images, "image tree for boundary visibility");
  c_analyze->add_option("--classes", analyze.classes, "class set file (id name per line)");
  c_analyze->add_option("--pattern", analyze.pattern, "mask glob")->capture_default_str();
  c_analyze->add_option("--ignore", analyze.ignore, "ignore label id")
      ->check(CLI::Range(0, 255))
      ->capture_default_str();
  c_analyze->add_option("--names", analyze.names, "source names for pred and pred2")
      ->delimiter(',');
  c_analyze->add_option("-o,--output", analyze.output, "report directory")->required();

  auto* c_presets = app.add_subcommand("presets", "list or show builtin presets");
  c_presets->require_subcommand(1);
  auto* c_list = c_presets->add_subcommand("list", "preset names");
  std::string show_name;
  auto* c_show = c_presets->add_subcommand("show", "print a preset as TOML");
  c_show->add_option("name", show_name)->required();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "start the preview service");
  c_serve->add_option("--host", serve.host)->capture_default_str();
  c_serve->add_option("--port", serve.port, "0 picks a free port")->capture_default_str();
  c_serve->add_option("--max-running", serve.config.max_running)->capture_default_str();
  c_serve->add_option("--max-queued", serve.config.max_queued)->capture_default_str();
  c_serve->add_option("--max-size", serve.max_size, "crop size cap in pixels")
      ->capture_default_str();
  c_serve->add_option("--stride", serve.config.default_stride, "default frame stride")
      ->capture_default_str();

  MixtureArgs mixture;
  auto* c_mixture = app.add_subcommand("mixture", "write a weighted source sampling list");
  c_mixture->add_option("--source", mixture.sources, "name=root:weight")->required();
  c_mixture->add_option("--pattern", mixture.pattern)->capture_default_str();
  c_mixture->add_option("--seed", mixture.seed)->capture_default_str();
  c_mixture->add_option("--epochs", mixture.epochs)->check(CLI::PositiveNumber);
  c_mixture->add_option("-o,--output", mixture.output, "CSV file")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_diffuse) return cmd_diffuse(diffuse, out, err);
    if (*c_batch) return cmd_batch(batch, out, err);
    if (*c_analyze) return cmd_analyze(analyze, out, err);
    if (*c_list) {
      for (const auto& p : builtin_presets()) out << p.name << "\n";
      return kExitOk;
    }
    if (*c_show) {
      out << preset_to_toml(find_preset(show_name));
      return kExitOk;
    }
    if (*c_serve) return cmd_serve(serve, err);
    if (*c_mixture) return cmd_mixture(mixture, err);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace eedkit
