#include "eedkit/pipeline.hpp"

#include <fnmatch.h>
#include <openssl/evp.h>

#include <json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "eedkit/diffusion.hpp"
#include "eedkit/image.hpp"
#include "eedkit/image_io.hpp"

namespace eedkit {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const char* status_name(EntryStatus s) {
  switch (s) {
    case EntryStatus::kDone:
      return "done";
    case EntryStatus::kFailed:
      return "failed";
    case EntryStatus::kPending:
      break;
  }
  return "pending";
}

EntryStatus parse_status(const std::string& s) {
  if (s == "done") return EntryStatus::kDone;
  if (s == "failed") return EntryStatus::kFailed;
  return EntryStatus::kPending;
}

std::string output_relative(int step, const std::string& rel) {
  fs::path p(rel);
  p.replace_extension(".png");
  return (fs::path(std::to_string(step)) / p).generic_string();
}

fs::path normalized(const fs::path& p) {
  std::error_code ec;
  auto c = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p).lexically_normal() : c;
}

// Diffuses one image and writes its snapshots.
void process_image(const DatasetJob& job, ManifestEntry& entry) {
  const Image img = load_image(job.input_root / entry.path);
  entry.height = img.height();
  entry.width = img.width();
  const auto snaps = eed_run(img, job.params);
  for (const auto& s : snaps) {
    const std::string rel = output_relative(s.step, entry.path);
    save_png(job.output_root / rel, s.image);
    entry.outputs[s.step] = rel;
  }
}

}  // namespace

void DatasetJob::validate() const {
  if (!fs::is_directory(input_root)) {
    throw ParameterError("input_root '" + input_root.string() + "' is not a directory");
  }
  if (output_root.empty()) throw ParameterError("output_root is empty");
  if (normalized(input_root) == normalized(output_root)) {
    throw ParameterError("output_root must differ from input_root");
  }
  if (workers < 1) throw ParameterError("workers must be >= 1");
  params.validate();
}

DatasetJob load_job_file(const fs::path& path, int default_workers) {
  toml::table doc;
  try {
    doc = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << path.string() << ": " << e.description() << " at line " << e.source().begin.line;
    throw ParameterError(msg.str());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  auto get_string = [&](std::string_view key) -> std::optional<std::string> {
    const auto* node = doc.get(key);
    if (!node) return std::nullopt;
    if (auto s = node->value_exact<std::string>()) return *s;
    throw ParameterError("job key '" + std::string(key) + "' must be a string");
  };

  DatasetJob job;
  job.workers = default_workers;
  auto in = get_string("input_root");
  auto out = get_string("output_root");
  if (!in || !out) throw ParameterError("job file needs input_root and output_root");
  job.input_root = resolve(*in);
  job.output_root = resolve(*out);
  if (auto pattern = get_string("pattern")) job.pattern = *pattern;
  if (const auto* w = doc.get("workers")) {
    auto v = w->value_exact<int64_t>();
    if (!v) throw ParameterError("job key 'workers' must be an integer");
    job.workers = static_cast<int>(*v);
  }

  DiffusionParams base_params = find_preset("P_strong");
  job.preset_name = "P_strong";
  if (auto name = get_string("preset")) {
    base_params = find_preset(*name);
    job.preset_name = *name;
  }
  if (auto file = get_string("preset_file")) {
    base_params = load_preset_file(resolve(*file).string(), base_params);
    job.preset_name = fs::path(*file).stem().string();
  }

  toml::table overrides;
  for (const auto& [key, node] : doc) {
    const auto k = key.str();
    if (k == "input_root" || k == "output_root" || k == "pattern" || k == "workers" ||
        k == "preset" || k == "preset_file") {
      continue;
    }
    overrides.insert(key, node);
  }
  if (!overrides.empty()) {
    std::ostringstream text;
    text << overrides;
    job.params = preset_from_toml(text.str(), base_params);
    job.preset_name += "+overrides";
  } else {
    job.params = base_params;
  }
  return job;
}

std::string Manifest::to_json() const {
  ordered_json j;
  j["preset_name"] = preset_name;
  j["preset"] = preset_to_toml(params);
  ordered_json list = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json outputs = ordered_json::object();
    for (const auto& [step, rel] : e.outputs) outputs[std::to_string(step)] = rel;
    list.push_back({{"path", e.path},
                    {"outputs", outputs},
                    {"digest", e.digest},
                    {"status", status_name(e.status)},
                    {"wall_time", e.wall_time},
                    {"height", e.height},
                    {"width", e.width},
                    {"error", e.error}});
  }
  j["entries"] = list;
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.preset_name = j.at("preset_name").get<std::string>();
    m.params = preset_from_toml(j.at("preset").get<std::string>());
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.path = e.at("path").get<std::string>();
      for (const auto& [step, rel] : e.at("outputs").items()) {
        entry.outputs[std::stoi(step)] = rel.get<std::string>();
      }
      entry.digest = e.at("digest").get<std::string>();
      entry.status = parse_status(e.at("status").get<std::string>());
      entry.wall_time = e.value("wall_time", 0.0);
      entry.height = e.value("height", 0);
      entry.width = e.value("width", 0);
      entry.error = e.value("error", std::string());
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::vector<std::string> discover(const fs::path& root, const std::string& pattern,
                                  const fs::path& exclude) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("cannot read dataset root '" + root.string() + "'");
  const fs::path excluded = exclude.empty() ? fs::path() : normalized(exclude);
  std::vector<std::string> found;
  fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
  if (ec) throw IoError("cannot read dataset root '" + root.string() + "': " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw IoError("error walking '" + root.string() + "': " + ec.message());
    if (!excluded.empty() && it->is_directory() && normalized(it->path()) == excluded) {
      it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file()) continue;
    const std::string rel = it->path().lexically_relative(root).generic_string();
    if (fnmatch(pattern.c_str(), rel.c_str(), 0) == 0) found.push_back(rel);
  }
  std::sort(found.begin(), found.end());
  return found;
}

std::string input_digest(const fs::path& file, const DiffusionParams& params) {
  const Bytes data = read_file(file);
  const std::string preset = preset_to_toml(params);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw IoError("digest allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
                  EVP_DigestUpdate(ctx, preset.data(), preset.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

fs::path manifest_path(const DatasetJob& job) { return job.output_root / "manifest.json"; }

JobResult run_job(const DatasetJob& job, const JobProgress& progress) {
  job.validate();
  const std::vector<std::string> paths = discover(job.input_root, job.pattern, job.output_root);

  Manifest previous;
  if (fs::exists(manifest_path(job))) {
    const Bytes raw = read_file(manifest_path(job));
    previous = Manifest::from_json(std::string(raw.begin(), raw.end()));
  }
  std::map<std::string, const ManifestEntry*> old;
  for (const auto& e : previous.entries) old[e.path] = &e;

  JobResult result;
  Manifest& manifest = result.manifest;
  manifest.preset_name = job.preset_name;
  manifest.params = job.params;

  // Work list: entries whose digest or outputs changed.
  std::vector<std::size_t> work;
  for (const auto& rel : paths) {
    ManifestEntry entry;
    entry.path = rel;
    try {
      entry.digest = input_digest(job.input_root / rel, job.params);
    } catch (const IoError& e) {
      entry.status = EntryStatus::kFailed;
      entry.error = e.what();
      manifest.entries.push_back(std::move(entry));
      ++result.failed;
      continue;
    }
    auto it = old.find(rel);
    if (it != old.end() && it->second->status == EntryStatus::kDone &&
        it->second->digest == entry.digest) {
      const bool outputs_present =
          std::all_of(it->second->outputs.begin(), it->second->outputs.end(),
                      [&](const auto& kv) { return fs::exists(job.output_root / kv.second); });
      if (outputs_present) {
        manifest.entries.push_back(*it->second);
        ++result.skipped;
        continue;
      }
    }
    work.push_back(manifest.entries.size());
    manifest.entries.push_back(std::move(entry));
  }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> started{0};
  std::size_t finished = 0;
  std::exception_ptr write_failure;

  auto write_manifest = [&] {
    const std::string text = manifest.to_json();
    write_file_atomic(manifest_path(job),
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= work.size()) return;
      if (job.max_new_images && started.fetch_add(1) >= job.max_new_images) return;
      ManifestEntry entry;
      {
        std::lock_guard lock(writer);
        entry = manifest.entries[work[slot]];
        if (write_failure) return;
      }
      const auto t0 = std::chrono::steady_clock::now();
      try {
        process_image(job, entry);
        entry.status = EntryStatus::kDone;
        entry.error.clear();
      } catch (const std::exception& e) {
        entry.status = EntryStatus::kFailed;
        entry.error = e.what();
      }
      entry.wall_time =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      std::lock_guard lock(writer);
      manifest.entries[work[slot]] = entry;
      if (entry.status == EntryStatus::kDone) {
        ++result.processed;
      } else {
        ++result.failed;
      }
      ++finished;
      try {
        write_manifest();
      } catch (...) {
        write_failure = std::current_exception();
        return;
      }
      if (progress) progress(entry, finished, work.size());
    }
  };

  {
    const int n = std::max(1, std::min<int>(job.workers, static_cast<int>(work.size())));
    std::vector<std::jthread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  if (write_failure) std::rethrow_exception(write_failure);

  for (std::size_t idx : work) {
    if (manifest.entries[idx].status == EntryStatus::kPending) ++result.pending;
  }
  write_manifest();
  return result;
}

std::vector<MixtureSample> sample_mixture(const std::vector<std::string>& paths,
                                          const std::vector<MixtureSource>& sources,
                                          std::uint64_t seed, int epochs) {
  if (sources.empty()) throw ParameterError("sample_mixture: no sources");
  std::vector<double> weights;
  for (const auto& s : sources) {
    if (!(s.weight >= 0.0)) throw ParameterError("sample_mixture: negative weight");
    weights.push_back(s.weight);
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ParameterError("sample_mixture: weights sum to zero");

  std::mt19937_64 rng(seed);
  std::vector<MixtureSample> out;
  out.reserve(paths.size() * std::max(epochs, 0));
  for (int e = 0; e < epochs; ++e) {
    for (const auto& p : paths) {
      // inverse CDF on a 53-bit uniform; std distributions are not portable
      const double r = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double acc = 0.0;
      std::size_t pick = sources.size() - 1;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        acc += weights[i];
        if (r < acc) {
          pick = i;
          break;
        }
      }
      out.push_back({p, sources[pick].name, sources[pick].root / p});
    }
  }
  return out;
}

}  // namespace eedkit
