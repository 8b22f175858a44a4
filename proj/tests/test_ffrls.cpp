#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/ffrls.hpp"
#include "support.hpp"

using namespace hybrid_ecm;
using testing::rel_err;

namespace {

const EcmParams kTruth{0.05, 0.03, 1000.0};

/// Voltages whose drop y = U_OC - U_t follows the ARX recursion exactly.
testing::EcmData arx_data(const ThetaVector& th, const std::vector<double>& i,
                          const BatteryConfig& b) {
  testing::EcmData d = testing::ecm_data(kTruth, i, 0.8, b);
  double y_prev = 0.0;
  for (std::size_t k = 0; k < i.size(); ++k) {
    const double y = k == 0 ? th.a2 * i[0] : -th.a1 * y_prev + th.a2 * i[k] + th.a3 * i[k - 1];
    d.data.voltage_v[k] = b.ocv(d.socs[k]) - y;
    y_prev = y;
  }
  return d;
}

double max_rel(const EcmParams& got, const EcmParams& want) {
  return std::max({rel_err(got.r0, want.r0), rel_err(got.rd, want.rd), rel_err(got.cd, want.cd)});
}

}  // namespace

TEST_CASE("ffrls_init") {
  const FfrlsState s = ffrls_init(0.99, 1e5, {-0.9, 0.01, -0.01});
  CHECK(s.p == Eigen::Matrix3d::Identity() * 1e5);
  CHECK(s.theta == Eigen::Vector3d(-0.9, 0.01, -0.01));
  CHECK(s.lambda == 0.99);
  CHECK(ffrls_init(1.0, 1.0, {}).lambda == 1.0);
  CHECK_THROWS_AS(ffrls_init(1.5, 1e5, {}), InputError);
  CHECK_THROWS_AS(ffrls_init(0.0, 1e5, {}), InputError);
  CHECK_THROWS_AS(ffrls_init(0.99, 0.0, {}), InputError);
}

TEST_CASE("zero innovation leaves theta unchanged but updates P") {
  const FfrlsState s = ffrls_init(0.99, 1e3, {-0.9, 0.02, -0.01});
  const Regressor phi = Regressor::make(0.03, 1.2, 0.8);
  const double y = phi.phi.dot(s.theta);
  const FfrlsUpdate u = ffrls_step(s, y, phi);
  CHECK_FALSE(u.degenerate);
  CHECK(u.state.theta == s.theta);
  CHECK(u.state.p != s.p);
}

TEST_CASE("non-finite regressor is flagged and leaves the state alone") {
  const FfrlsState s = ffrls_init(0.99, 1e3, {-0.9, 0.02, -0.01});
  const FfrlsUpdate u = ffrls_step(s, 0.1, Regressor::make(NAN, 1.0, 1.0));
  CHECK(u.degenerate);
  CHECK(u.state.theta == s.theta);
  CHECK(u.state.p == s.p);
}

TEST_CASE("lambda = 1 equals regularized batch least squares") {
  Rng rng(21);
  const ThetaVector th0{-0.5, 0.1, 0.05};
  const double p0 = 10.0;
  FfrlsState s = ffrls_init(1.0, p0, th0);
  Eigen::Matrix3d ata = Eigen::Matrix3d::Identity() / p0;
  Eigen::Vector3d atb = th0.vec() / p0;
  for (int k = 0; k < 12; ++k) {
    const Regressor phi = Regressor::make(rng.uniform(-1, 1), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const double y = rng.uniform(-0.5, 0.5);
    s = ffrls_step(s, y, phi).state;
    ata += phi.phi * phi.phi.transpose();
    atb += phi.phi * y;
  }
  const Eigen::Vector3d batch = ata.ldlt().solve(atb);
  CHECK((s.theta - batch).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((s.p - ata.inverse()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("theta_forward reference values") {
  const ThetaVector t = theta_forward(kTruth, 1.0);
  CHECK(t.a1 == doctest::Approx(-59.0 / 61.0).epsilon(1e-14));
  CHECK(t.a2 == doctest::Approx(3.08 / 61.0).epsilon(1e-14));
  CHECK(t.a3 == doctest::Approx(-2.92 / 61.0).epsilon(1e-14));
  CHECK(std::abs(t.a1 + 0.9672131) < 1e-7);
  CHECK(std::abs(t.a2 - 0.0504918) < 1e-7);
  CHECK(std::abs(t.a3 + 0.0478689) < 1e-7);
}

TEST_CASE("theta_forward vanishing time constant") {
  const EcmParams p{0.05, 1e-6, 1e-3};
  const ThetaVector t = theta_forward(p, 1.0);
  CHECK(t.a1 == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(t.a2 == doctest::Approx(p.r0 + p.rd).epsilon(1e-8));
  CHECK(t.a3 == doctest::Approx(p.r0 + p.rd).epsilon(1e-8));
}

TEST_CASE("a2 - a3 equals (1 - a1) * r0") {
  Rng rng(5);
  for (int k = 0; k < 1000; ++k) {
    const EcmParams p{rng.uniform(1e-3, 0.2), rng.uniform(1e-3, 0.1), rng.uniform(100, 1e4)};
    const double dt = rng.uniform(0.5, 2.0);
    const ThetaVector t = theta_forward(p, dt);
    CHECK(std::abs((t.a2 - t.a3) - (1.0 - t.a1) * p.r0) <= 1e-15 + 1e-12 * std::abs(t.a2 - t.a3));
  }
}

TEST_CASE("params_from_theta inverts theta_forward") {
  const InversionResult r = params_from_theta(theta_forward(kTruth, 1.0), 1.0, TauBounds::for_dt(1.0));
  REQUIRE(r.ok());
  CHECK(max_rel(r.params, kTruth) < 1e-10);

  const InversionResult printed =
      params_from_theta({-59.0 / 61.0, 3.08 / 61.0, -2.92 / 61.0}, 1.0, TauBounds::for_dt(1.0));
  CHECK(max_rel(printed.params, kTruth) < 1e-10);

  Rng rng(99);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const EcmParams p{rng.uniform(1e-3, 0.2), rng.uniform(1e-3, 0.1), rng.uniform(100, 1e4)};
    const InversionResult back = params_from_theta(theta_forward(p, 1.0), 1.0, TauBounds::for_dt(1.0));
    CHECK(back.ok());
    worst = std::max(worst, max_rel(back.params, p));
    const ThetaVector t = theta_forward(p, 1.0);
    const ThetaVector t2 = theta_forward(back.params, 1.0);
    worst = std::max({worst, rel_err(t2.a1, t.a1), rel_err(t2.a2, t.a2), rel_err(t2.a3, t.a3)});
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("params_from_theta guards") {
  const TauBounds b = TauBounds::for_dt(1.0);
  CHECK(params_from_theta({-1.0 + 1e-12, 0.05, -0.04}, 1.0, b).status == InversionStatus::singular);
  CHECK(params_from_theta({1.0 - 1e-12, 0.05, 0.05}, 1.0, b).status == InversionStatus::singular);
  // a2 + a3 < 0 gives a negative rd
  const InversionResult neg = params_from_theta({-0.9, 0.01, -0.05}, 1.0, b);
  CHECK(neg.status == InversionStatus::non_physical);
  CHECK(neg.params.rd < 0.0);
}

TEST_CASE("exact ARX data gives the generating theta") {
  BatteryConfig b = testing::linear_battery();
  const ThetaVector th = theta_forward(kTruth, 1.0);
  const auto d = arx_data(th, testing::prbs(2000, 1), b);
  const Identification id = identify_series(d.data, b.ocv, d.socs, b);
  const ThetaVector& last = id.thetas.back();
  CHECK(std::abs(last.a1 - th.a1) < 1e-6);
  CHECK(std::abs(last.a2 - th.a2) < 1e-6);
  CHECK(std::abs(last.a3 - th.a3) < 1e-6);
  CHECK(max_rel(id.params.back(), kTruth) < 1e-6);
}

TEST_CASE("noiseless first-order ECM data converges within 1% after warm-up") {
  BatteryConfig b = testing::linear_battery();
  const auto d = testing::ecm_data(kTruth, testing::prbs(2000, 1), 0.8, b);
  const Identification id = identify_series(d.data, b.ocv, d.socs, b);
  for (std::size_t k = 500; k < id.params.size(); ++k) {
    CHECK(max_rel(id.params[k], kTruth) < 0.01);
  }
  const ThetaVector th = theta_forward(kTruth, 1.0);
  CHECK(std::abs(id.thetas.back().a1 - th.a1) < 1e-5);
  CHECK_FALSE(id.ill_conditioned);
  CHECK(id.invalid_steps < 50);
}

TEST_CASE("P stays symmetric and positive definite on a well-excited run") {
  BatteryConfig b = testing::linear_battery();
  const auto d = testing::ecm_data(kTruth, testing::prbs(2000, 8), 0.8, b);
  FfrlsOptions opts;
  StreamingIdentifier ident(opts, 1.0, b.tau_bounds());
  for (std::size_t k = 0; k < d.data.size(); ++k) {
    ident.push(d.data.current_a[k], d.data.voltage_v[k], b.ocv(d.socs[k]));
    const Eigen::Matrix3d& p = ident.state().p;
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(p);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("constant current is reported as ill-conditioned and stays finite") {
  BatteryConfig b = testing::linear_battery();
  const auto d = testing::ecm_data(kTruth, std::vector<double>(3000, 1.0), 0.9, b);
  const Identification id = identify_series(d.data, b.ocv, d.socs, b);
  CHECK(id.ill_conditioned);
  for (const auto& p : id.params) {
    CHECK(std::isfinite(p.r0));
    CHECK(std::isfinite(p.rd));
    CHECK(std::isfinite(p.cd));
    CHECK(is_physical(p, b.tau_bounds()));
  }
}

TEST_CASE("1 mV voltage noise keeps r0 within 5%") {
  BatteryConfig b = testing::linear_battery();
  auto d = testing::ecm_data(kTruth, testing::prbs(3000, 4), 0.8, b);
  Rng rng(2024);
  for (double& v : d.data.voltage_v) v += 1e-3 * rng.normal();
  const Identification id = identify_series(d.data, b.ocv, d.socs, b);
  CHECK(rel_err(id.params.back().r0, kTruth.r0) < 0.05);
}

TEST_CASE("hold-last keeps the previous valid parameters") {
  BatteryConfig b = testing::linear_battery();
  FfrlsOptions opts;
  StreamingIdentifier ident(opts, 1.0, b.tau_bounds());
  const auto first = ident.push(1.0, 3.5, 3.6);
  CHECK(first.params == opts.prior);
  CHECK_FALSE(first.valid);
  // A step that drives the inversion non-physical must not leak into the output.
  for (int k = 0; k < 50; ++k) {
    const auto s = ident.push(k % 2 ? 1.0 : -1.0, k % 2 ? 3.9 : 3.3, 3.6);
    CHECK(is_physical(s.params, b.tau_bounds()));
    if (s.valid) CHECK(s.params == *ident.state().last_valid_params);
  }
}

TEST_CASE("identify_series input checks and CSV round trip") {
  BatteryConfig b = testing::linear_battery();
  const auto d = testing::ecm_data(kTruth, testing::prbs(300, 2), 0.8, b);
  CHECK_THROWS_AS(identify_series(d.data.slice(0, 1), b.ocv, std::vector<double>{0.8}, b), InputError);
  CHECK_THROWS_AS(identify_series(d.data, b.ocv, std::vector<double>(5, 0.8), b), InputError);

  const Identification id = identify_series(d.data, b.ocv, d.socs, b);
  const auto dir = testing::scratch("ffrls_csv");
  write_identification_csv(dir / "params.csv", id);
  const auto back = read_params_csv(dir / "params.csv");
  REQUIRE(back.size() == id.params.size());
  for (std::size_t k = 0; k < back.size(); ++k) CHECK(back[k] == id.params[k]);
}
