#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eedkit/params.hpp"

namespace eedkit {

/// One dataset duplication job: every image under input_root matching
/// `pattern` is diffused and written as output_root/<snapshot>/<path>.png.
struct DatasetJob {
  std::filesystem::path input_root;
  std::filesystem::path output_root;
  std::string preset_name = "custom";
  DiffusionParams params;
  std::string pattern = "*.png";
  int workers = 1;
  /// Stop after this many images were diffused in this run (0: no limit).
  std::size_t max_new_images = 0;

  void validate() const;
};

/// Parses a TOML job file. Keys: input_root, output_root, pattern, workers,
/// preset (builtin name), preset_file, plus any preset key overriding the
/// named preset (P_strong when neither preset nor preset_file is given).
/// Relative paths resolve against the file's directory.
DatasetJob load_job_file(const std::filesystem::path& path, int default_workers = 1);

enum class EntryStatus { kPending, kDone, kFailed };

struct ManifestEntry {
  std::string path;                     ///< relative to input_root
  std::map<int, std::string> outputs;   ///< snapshot step -> path relative to output_root
  std::string digest;                   ///< sha256 of input bytes + serialized preset
  EntryStatus status = EntryStatus::kPending;
  double wall_time = 0.0;               ///< seconds
  int height = 0;
  int width = 0;
  std::string error;
};

struct Manifest {
  std::string preset_name;
  DiffusionParams params;
  std::vector<ManifestEntry> entries;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

struct JobResult {
  Manifest manifest;
  std::size_t processed = 0;  ///< diffused in this run
  std::size_t skipped = 0;    ///< unchanged since a previous run
  std::size_t failed = 0;
  std::size_t pending = 0;    ///< left over because of max_new_images
};

/// Progress callback: (finished entry, finished count, work size). Called from the
/// manifest writer, one call at a time.
using JobProgress = std::function<void(const ManifestEntry&, std::size_t done, std::size_t total)>;

/// Matching files under root, relative, '/'-separated, lexicographically
/// sorted. The pattern is an fnmatch glob applied to the relative path and
/// `*` also matches '/'. Anything under `exclude` is skipped.
std::vector<std::string> discover(const std::filesystem::path& root, const std::string& pattern,
                                  const std::filesystem::path& exclude = {});

/// Hex sha256 of the input bytes followed by the TOML form of the preset.
std::string input_digest(const std::filesystem::path& file, const DiffusionParams& params);

/// Runs the job with a pool of job.workers threads. The manifest at
/// output_root/manifest.json is rewritten atomically after every image.
/// Entries whose digest is unchanged and whose outputs exist are skipped.
/// Per-image failures are recorded and do not stop the job; only a failing
/// manifest write throws.
JobResult run_job(const DatasetJob& job, const JobProgress& progress = {});

std::filesystem::path manifest_path(const DatasetJob& job);

/// Weighted choice of a source tree per training sample, for mixing the
/// original dataset with EED duplicates.
struct MixtureSource {
  std::string name;
  std::filesystem::path root;
  double weight = 1.0;
};

struct MixtureSample {
  std::string path;
  std::string source;
  std::filesystem::path file;
};

/// For each epoch and each relative path, draws one source according to the
/// weights. Deterministic for a given seed.
std::vector<MixtureSample> sample_mixture(const std::vector<std::string>& paths,
                                          const std::vector<MixtureSource>& sources,
                                          std::uint64_t seed, int epochs = 1);

}  // namespace eedkit
