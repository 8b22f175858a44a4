#pragma once

// Online identification of (R0, RD, CD) with forgetting-factor recursive
// least squares on the bilinear (Tustin) form of the first-order ECM:
//
//   y_k = -a1 * y_{k-1} + a2 * I_k + a3 * I_{k-1},   y = U_OC - U_t
//
// (the voltage drop, so that a2, a3 are positive for discharge-positive current).

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/series.hpp"

namespace hybrid_ecm {

struct ThetaVector {
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;

  Eigen::Vector3d vec() const { return {a1, a2, a3}; }
  static ThetaVector from(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
};

struct Regressor {
  Eigen::Vector3d phi = Eigen::Vector3d::Zero();

  /// [-y_{k-1}, I_k, I_{k-1}]
  static Regressor make(double y_prev, double i_now, double i_prev) {
    return {Eigen::Vector3d(-y_prev, i_now, i_prev)};
  }
};

struct FfrlsState {
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  Eigen::Matrix3d p = Eigen::Matrix3d::Identity();
  double lambda = 0.99;
  std::optional<EcmParams> last_valid_params;
};

struct FfrlsUpdate {
  FfrlsState state;
  bool degenerate = false;  // non-finite intermediate; state is the input state
};

FfrlsState ffrls_init(double lambda, double p0_scale, const ThetaVector& theta0);

FfrlsUpdate ffrls_step(const FfrlsState& state, double y, const Regressor& phi);

ThetaVector theta_forward(const EcmParams& params, double dt_s);

enum class InversionStatus { ok, singular, non_physical };

struct InversionResult {
  EcmParams params;
  InversionStatus status = InversionStatus::ok;
  bool ok() const { return status == InversionStatus::ok; }
};

/// Inverse of theta_forward. `params` is filled whenever a1 is not singular,
/// even if the result is non-physical.
InversionResult params_from_theta(const ThetaVector& theta, double dt_s, const TauBounds& bounds);

struct FfrlsOptions {
  double lambda = 0.99;
  double p0_scale = 1e5;
  EcmParams prior{0.05, 0.03, 1000.0};
  /// Leading samples excluded from training targets downstream. Online
  /// estimation runs on the prior over the same span.
  std::size_t warmup_skip = 200;
};

struct Identification {
  std::vector<EcmParams> params;
  std::vector<ThetaVector> thetas;
  std::vector<std::uint8_t> valid;  // 1 when the step's own inversion was physical
  std::size_t invalid_steps = 0;
  std::size_t degenerate_steps = 0;
  /// Largest 2-norm condition number of P seen over the run.
  double max_p_condition = 1.0;
  bool ill_conditioned = false;
};

/// Streaming identifier holding the FFRLS state plus the previous sample.
class StreamingIdentifier {
 public:
  StreamingIdentifier(const FfrlsOptions& opts, double dt_s, const TauBounds& bounds);

  struct Step {
    EcmParams params;       // hold-last policy applied
    ThetaVector theta;
    bool valid = false;     // this step's inversion was physical
    bool degenerate = false;
  };

  /// Feeds one sample; `ocv_volts` is U_OC at this sample.
  Step push(double current, double voltage, double ocv_volts);

  const FfrlsState& state() const { return state_; }

 private:
  FfrlsState state_;
  double dt_s_;
  TauBounds bounds_;
  bool have_prev_ = false;
  double y_prev_ = 0.0;
  double i_prev_ = 0.0;
};

Identification identify_series(const SeriesData& data, const OcvCurve& curve,
                               std::span<const double> socs, const BatteryConfig& cfg,
                               const FfrlsOptions& opts = {});

/// Per-step diagnostics CSV: step,a1,a2,a3,r0,rd,cd,valid_flag
void write_identification_csv(const std::filesystem::path& path, const Identification& id);

/// Reads the r0, rd, cd columns back (hold-last output parameters).
std::vector<EcmParams> read_params_csv(const std::filesystem::path& path);

}  // namespace hybrid_ecm
