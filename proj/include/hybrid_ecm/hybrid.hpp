#pragma once

// Hybrid model: FFRLS base parameters plus three neural corrections, pushed
// through the discretized RC recurrence and trained on terminal-voltage MSE by
// truncated backpropagation through the unrolled recurrence.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybrid_ecm/ecm.hpp"
#include "hybrid_ecm/fnn.hpp"
#include "hybrid_ecm/series.hpp"

namespace hybrid_ecm {

struct ParamGuards {
  double r0_floor = 1e-6;
  double rd_floor = 1e-6;
  double cd_floor = 1.0;
  TauBounds tau;

  static ParamGuards for_dt(double dt_s) { return {1e-6, 1e-6, 1.0, TauBounds::for_dt(dt_s)}; }
  bool operator==(const ParamGuards&) const = default;
};

struct CorrectionTriple {
  double d_r0 = 0.0;  // ohms
  double d_rd = 0.0;  // ohms
  double d_cd = 0.0;  // farads
};

/// Set when the corresponding element was projected onto its bound. A tau clamp
/// adjusts cd, so cd receives no gradient either.
struct ClampFlags {
  bool r0 = false;
  bool rd = false;
  bool cd = false;
  bool tau = false;
  bool any() const { return r0 || rd || cd || tau; }
};

struct CorrectedParams {
  EcmParams params;
  ClampFlags flags;
};

CorrectedParams correct_params(const EcmParams& base, const CorrectionTriple& corr,
                               const ParamGuards& guards);

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  double baseline_loss = 0.0;
};

enum class Net : std::size_t { r0 = 0, rd = 1, cd = 2 };

struct HybridModel {
  /// Networks in (r0, rd, cd) order.
  std::array<FnnModel, 3> nets;
  OcvCurve ocv;
  ParamGuards guards;
  double dt_s = 1.0;
  TrainingMeta meta;

  /// Zero-output networks sharing one set of input statistics.
  static HybridModel fresh(const std::array<FnnConfig, 3>& configs, const NormStats& norm,
                           const OcvCurve& ocv, double dt_s);

  FnnModel& net(Net which) { return nets[static_cast<std::size_t>(which)]; }
  const FnnModel& net(Net which) const { return nets[static_cast<std::size_t>(which)]; }

  CorrectionTriple corrections(const FnnInput& input,
                               std::array<FnnCache, 3>* caches = nullptr) const;
};

/// Default per-network configurations: hidden sizes, epochs, learning rates and
/// optimizers for the (r0, rd, cd) networks, with output scales 0.01 ohm,
/// 0.01 ohm and 100 F.
std::array<FnnConfig, 3> default_fnn_configs(std::uint64_t seed = 1);

/// Aligned slice of telemetry with its SOC trajectory and base parameters.
struct WindowInput {
  std::span<const double> current;
  std::span<const double> voltage;
  std::span<const double> temp;
  std::span<const double> soc;
  std::span<const EcmParams> base;
  /// Current of the sample just before the window, for the interval average.
  std::optional<double> prev_current;
  /// RC voltage just before the first sample (no gradient flows into it).
  double u_d0 = 0.0;

  std::size_t size() const { return current.size(); }

  /// Samples [begin, end) of a series. u_d0 must be set by the caller.
  static WindowInput of(const SeriesData& data, std::span<const double> socs,
                        std::span<const EcmParams> base, std::size_t begin, std::size_t end);
};

struct StepCache {
  std::array<FnnCache, 3> nets;
  EcmParams params;
  ClampFlags flags;
  double current = 0.0;     // i_k, multiplies r0
  double i_rc = 0.0;        // interval current driving the RC pair
  double u_prev = 0.0;      // u_d before this step
  double decay = 0.0;       // exp(-dt / tau)
};

struct WindowPass {
  std::vector<double> v_pred;
  std::vector<double> u_d;  // state after each step
  std::vector<StepCache> steps;  // empty when caching was not requested
  double dt_s = 1.0;
};

WindowPass predict_window(const HybridModel& model, const WindowInput& window,
                          bool keep_cache = true);

/// Mean squared error between predicted and measured terminal voltage.
double loss_mse(std::span<const double> pred, std::span<const double> truth);

struct HybridGradients {
  std::array<FnnGradients, 3> nets;
  double loss = 0.0;
};

/// Exact reverse-mode gradient of the window loss with respect to every weight
/// of the three networks. The RC voltage entering the window is a constant.
HybridGradients backward_window(const HybridModel& model, const WindowPass& pass,
                                std::span<const double> truth);

struct TrainingWindowing {
  std::size_t window_len = 64;
  std::size_t stride = 64;
  void validate() const;
};

struct TrainOptions {
  TrainingWindowing windowing;
  double rel_tol = 1e-6;
  std::size_t patience = 5;
  std::uint64_t shuffle_seed = 7;
  /// Loss and windows cover [begin, end); the forward pass always starts at
  /// sample 0 from a rested cell. end = 0 means the whole series.
  std::size_t begin = 0;
  std::size_t end = 0;
  /// Called after every epoch with (epoch, loss).
  std::function<void(std::size_t, double)> on_epoch;
};

struct TrainingSet {
  const SeriesData& data;
  std::span<const double> socs;
  std::span<const EcmParams> base;
};

struct TrainingResult {
  HybridModel model;  // best-so-far weights
  /// Entry 0 is the loss before any update, entry e the loss after epoch e.
  std::vector<double> loss_history;
  std::size_t best_epoch = 0;
  bool diverged = false;
  bool converged = false;
  std::string diagnostic;
};

/// Sequential hybrid prediction over a whole series from u_d0.
std::vector<double> predict_series(const HybridModel& model, const SeriesData& data,
                                   std::span<const double> socs, std::span<const EcmParams> base,
                                   double u_d0 = 0.0);

/// Input statistics of the (current, voltage, temperature) features over [begin, end).
NormStats input_stats(const SeriesData& data, std::size_t begin, std::size_t end);

TrainingResult train_offline(const TrainingSet& set, const BatteryConfig& cfg,
                             const std::array<FnnConfig, 3>& configs, const TrainOptions& opts);

/// Versioned JSON model file.
inline constexpr int kModelFormatVersion = 1;
void save_model(const HybridModel& model, const std::filesystem::path& path);
HybridModel load_model(const std::filesystem::path& path);
std::string model_to_json(const HybridModel& model);
HybridModel model_from_json(const std::string& text);

}  // namespace hybrid_ecm
