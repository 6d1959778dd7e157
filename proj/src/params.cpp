#include "eedkit/params.hpp"

#include <toml.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "eedkit/image.hpp"

namespace eedkit {

namespace {

void check_kernel(const char* field, int size) {
  if (size < 3 || size % 2 == 0) {
    throw FieldError(field, std::string(field) + " must be odd and >= 3, got " + std::to_string(size));
  }
}

void check_positive(const char* field, double v) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw FieldError(field, std::string(field) + " must be > 0");
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double as_double(const toml::node& node, std::string_view key) {
  if (auto f = node.value_exact<double>()) return *f;
  if (auto i = node.value_exact<int64_t>()) return static_cast<double>(*i);
  throw ParameterError("preset key '" + std::string(key) + "' must be a number");
}

int as_int(const toml::node& node, std::string_view key) {
  if (auto i = node.value_exact<int64_t>()) {
    if (*i < INT32_MIN || *i > INT32_MAX) {
      throw ParameterError("preset key '" + std::string(key) + "' is out of range");
    }
    return static_cast<int>(*i);
  }
  throw ParameterError("preset key '" + std::string(key) + "' must be an integer");
}

}  // namespace

void DiffusionParams::validate() const {
  check_positive("kappa", kappa);
  check_positive("presmooth_sigma", presmooth_sigma);
  check_positive("orient_sigma", orient_sigma);
  check_kernel("presmooth_kernel", presmooth_kernel);
  check_kernel("orient_kernel", orient_kernel);
  if (!(tau > 0.0) || tau > kMaxTau) {
    throw FieldError("tau", "tau must be in (0, 0.25], got " + format_double(tau));
  }
  if (steps < 0) throw FieldError("steps", "steps must be >= 0");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i] < 0 || snapshots[i] > steps) {
      throw FieldError("snapshots",
                       "snapshot " + std::to_string(snapshots[i]) + " outside [0, steps]");
    }
    if (i > 0 && snapshots[i] <= snapshots[i - 1]) {
      throw FieldError("snapshots", "snapshots must be strictly increasing");
    }
  }
}

std::vector<int> DiffusionParams::effective_snapshots() const {
  if (snapshots.empty()) return {steps};
  return snapshots;
}

const std::vector<NamedPreset>& builtin_presets() {
  static const std::vector<NamedPreset> presets = [] {
    DiffusionParams strong;
    strong.kappa = 1.0 / 10.0;
    strong.presmooth_sigma = 3.0;
    strong.presmooth_kernel = 9;
    strong.orient_sigma = 3.0;
    strong.orient_kernel = 9;
    strong.tau = 0.2;
    strong.steps = 5792;

    DiffusionParams mild = strong;
    mild.kappa = 1.0 / 15.0;
    mild.presmooth_sigma = std::sqrt(5.0);
    mild.presmooth_kernel = 5;
    mild.orient_sigma = std::sqrt(5.0);
    mild.orient_kernel = 5;
    return std::vector<NamedPreset>{{"P_strong", strong}, {"P_mild", mild}};
  }();
  return presets;
}

const DiffusionParams& find_preset(std::string_view name) {
  for (const auto& p : builtin_presets()) {
    if (p.name == name) return p.params;
  }
  throw NotFoundError("unknown preset '" + std::string(name) + "'");
}

std::string preset_to_toml(const DiffusionParams& p) {
  std::ostringstream out;
  out << "kappa = " << format_double(p.kappa) << '\n'
      << "presmooth_sigma = " << format_double(p.presmooth_sigma) << '\n'
      << "presmooth_kernel = " << p.presmooth_kernel << '\n'
      << "orient_sigma = " << format_double(p.orient_sigma) << '\n'
      << "orient_kernel = " << p.orient_kernel << '\n'
      << "tau = " << format_double(p.tau) << '\n'
      << "steps = " << p.steps << '\n'
      << "snapshots = [";
  for (std::size_t i = 0; i < p.snapshots.size(); ++i) {
    if (i) out << ", ";
    out << p.snapshots[i];
  }
  out << "]\n";
  return out.str();
}

DiffusionParams preset_from_toml(std::string_view text, const DiffusionParams& base) {
  toml::table doc;
  try {
    doc = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "invalid preset TOML: " << e.description() << " at line " << e.source().begin.line;
    throw ParameterError(msg.str());
  }

  DiffusionParams p = base;
  bool orient_sigma_set = false;
  bool orient_kernel_set = false;
  for (const auto& [key, node] : doc) {
    const std::string_view k = key.str();
    if (k == "kappa") {
      p.kappa = as_double(node, k);
    } else if (k == "presmooth_sigma") {
      p.presmooth_sigma = as_double(node, k);
    } else if (k == "presmooth_kernel") {
      p.presmooth_kernel = as_int(node, k);
    } else if (k == "orient_sigma") {
      p.orient_sigma = as_double(node, k);
      orient_sigma_set = true;
    } else if (k == "orient_kernel") {
      p.orient_kernel = as_int(node, k);
      orient_kernel_set = true;
    } else if (k == "tau") {
      p.tau = as_double(node, k);
    } else if (k == "steps") {
      p.steps = as_int(node, k);
    } else if (k == "snapshots") {
      const auto* arr = node.as_array();
      if (!arr) throw ParameterError("preset key 'snapshots' must be an array of integers");
      p.snapshots.clear();
      for (const auto& item : *arr) p.snapshots.push_back(as_int(item, k));
    } else {
      throw ParameterError("unknown preset key '" + std::string(k) + "'");
    }
  }
  if (!orient_sigma_set && doc.contains("presmooth_sigma")) p.orient_sigma = p.presmooth_sigma;
  if (!orient_kernel_set && doc.contains("presmooth_kernel")) p.orient_kernel = p.presmooth_kernel;
  return p;
}

DiffusionParams load_preset_file(const std::string& path, const DiffusionParams& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read preset file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return preset_from_toml(buf.str(), base);
}

}  // namespace eedkit
