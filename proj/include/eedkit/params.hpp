#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "eedkit/image.hpp"

namespace eedkit {

/// ParameterError attributed to one named parameter field.
class FieldError : public ParameterError {
 public:
  FieldError(std::string field, const std::string& message)
      : ParameterError(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Spatial discretization used by the explicit update.
enum class Stencil {
  kStandard,  ///< divergence-form central stencil
};

/// Parameters of one EED run.
struct DiffusionParams {
  double kappa = 0.1;           ///< contrast parameter, on the [0,1] intensity scale
  double presmooth_sigma = 3.0; ///< Gaussian presmoothing of u, pixels
  int presmooth_kernel = 9;     ///< odd kernel size, pixels
  double orient_sigma = 3.0;    ///< Gaussian smoothing of the structure tensor
  int orient_kernel = 9;
  double tau = 0.2;             ///< explicit step size
  int steps = 0;                ///< iteration count
  std::vector<int> snapshots;   ///< sorted step indices to emit; empty means {steps}
  Stencil stencil = Stencil::kStandard;

  /// Throws FieldError naming the offending field.
  void validate() const;

  /// Snapshot list with the empty-list default resolved.
  std::vector<int> effective_snapshots() const;

  friend bool operator==(const DiffusionParams&, const DiffusionParams&) = default;
};

/// Largest accepted step size of the explicit scheme.
inline constexpr double kMaxTau = 0.25;

struct NamedPreset {
  std::string name;
  DiffusionParams params;
};

/// P_strong (kappa 1/10, 9-tap sigma 3) and P_mild (kappa 1/15, 5-tap
/// sigma sqrt(5)), both with tau 0.2 and steps 5792.
const std::vector<NamedPreset>& builtin_presets();

/// Throws NotFoundError for unknown names.
const DiffusionParams& find_preset(std::string_view name);

/// Serializes to the TOML preset format (kappa, presmooth_sigma,
/// presmooth_kernel, orient_sigma, orient_kernel, tau, steps, snapshots).
/// Doubles are written in shortest round-trip form.
std::string preset_to_toml(const DiffusionParams& p);

/// Parses a TOML preset document. Keys missing from the document keep the
/// value in `base`; orient_* fall back to the parsed presmooth_* values when
/// absent. Throws ParameterError on syntax errors, unknown keys or wrong types.
DiffusionParams preset_from_toml(std::string_view text, const DiffusionParams& base = {});

/// Reads and parses a preset file. Throws IoError if unreadable.
DiffusionParams load_preset_file(const std::string& path, const DiffusionParams& base = {});

}  // namespace eedkit
