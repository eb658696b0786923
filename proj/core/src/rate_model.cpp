// SPDX-License-Identifier: Apache-2.0
#include "qkdsim/rate_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <boost/math/tools/roots.hpp>

#include "qkdsim/errors.hpp"

namespace qkdsim::rate {
namespace {

void require(bool condition, const char* message) {
  if (!condition) {
    throw ValidationError(message);
  }
}

bool finite(double x) { return std::isfinite(x); }

// x log2 x with the entropy convention 0 log2 0 = 0.
double xlog2x(double x) { return x == 0.0 ? 0.0 : x * std::log2(x); }

constexpr double kMaxQber = 0.5;
constexpr double kSeriesCutoff = 1e-15;

void validate_params(const SystemParams& p, bool allow_zero_mu) {
  require(finite(p.q) && p.q > 0.0 && p.q <= 1.0, "q must lie in (0, 1]");
  require(finite(p.nu_hz) && p.nu_hz > 0.0, "repetition frequency must be positive");
  require(finite(p.mu) && (p.mu > 0.0 || (allow_zero_mu && p.mu == 0.0)),
          "mean photon number must be positive");
  require(finite(p.t_bob) && p.t_bob > 0.0 && p.t_bob <= 1.0, "t_bob must lie in (0, 1]");
  require(finite(p.eta_bob) && p.eta_bob > 0.0 && p.eta_bob <= 1.0, "eta_bob must lie in (0, 1]");
  require(finite(p.storage_len_km) && p.storage_len_km > 0.0, "storage line must be longer than 0 km");
  require(finite(p.dead_time_s) && p.dead_time_s >= 0.0 && p.dead_time_s <= 12e-6,
          "dead time must lie in [0, 12 us]");
  require(finite(p.qber_opt) && p.qber_opt >= 0.0 && p.qber_opt < kMaxQber,
          "qber_opt must lie in [0, 0.5)");
  require(finite(p.qber_stray) && p.qber_stray >= 0.0 && p.qber_stray <= kMaxQber,
          "qber_stray must lie in [0, 0.5]");
  p.fiber.validate();
}

}  // namespace

double FiberSpec::transmission() const { return transmission_from_loss(total_loss_db()); }

void FiberSpec::validate() const {
  require(finite(length_km) && length_km >= 0.0, "fiber length must be >= 0");
  require(finite(loss_coeff_db_per_km) && loss_coeff_db_per_km >= 0.0, "loss coefficient must be >= 0");
  require(finite(extra_loss_db) && extra_loss_db >= 0.0, "extra loss must be >= 0");
  require(finite(thermal_expansion_alpha) && thermal_expansion_alpha >= 0.0,
          "thermal expansion coefficient must be >= 0");
  require(group_velocity_m_per_s > 1e8 && group_velocity_m_per_s < 3e8,
          "group velocity must lie in (1e8, 3e8) m/s");
}

void SystemParams::validate() const { validate_params(*this, false); }

double AfterpulseProfile::probability_at(double delay_s) const {
  return amplitude * std::exp(-delay_s / time_const_s);
}

void AfterpulseProfile::validate() const {
  require(finite(amplitude) && amplitude >= 0.0 && amplitude < 1.0, "afterpulse amplitude must lie in [0, 1)");
  require(finite(time_const_s) && time_const_s > 0.0, "afterpulse time constant must be positive");
}

void DetectorModel::validate() const {
  require(finite(p_dark) && p_dark >= 0.0 && p_dark < 1.0, "p_dark must lie in [0, 1)");
  require(finite(gate_width_s) && gate_width_s > 0.0, "gate width must be positive");
  afterpulse.validate();
}

void EveModel::validate() const {
  require(finite(base_info) && base_info >= 0.0 && base_info <= 1.0, "eve base information must lie in [0, 1]");
  require(!i2nu_anchors.empty(), "eve model needs at least one anchor");
  for (std::size_t i = 0; i < i2nu_anchors.size(); ++i) {
    const auto& [loss, info] = i2nu_anchors[i];
    require(finite(loss) && finite(info), "eve anchors must be finite");
    require(info >= 0.0 && info <= 1.0, "eve anchor information must lie in [0, 1]");
    if (i > 0) {
      require(loss > i2nu_anchors[i - 1].first, "eve anchors must be strictly increasing in loss");
    }
  }
  if (calibrated_mu) {
    require(finite(*calibrated_mu) && *calibrated_mu > 0.0, "anchor mean photon number must be positive");
  }
}

double transmission_from_loss(double loss_db) {
  require(finite(loss_db) && loss_db >= 0.0, "loss must be a non-negative number of dB");
  return std::pow(10.0, -loss_db / 10.0);
}

double loss_from_transmission(double transmission) {
  require(finite(transmission) && transmission > 0.0 && transmission <= 1.0,
          "transmission must lie in (0, 1]");
  return -10.0 * std::log10(transmission);
}

double eta_duty(double storage_len_km, double link_len_km) {
  require(finite(storage_len_km) && storage_len_km > 0.0, "storage line must be longer than 0 km");
  require(finite(link_len_km) && link_len_km >= 0.0, "link length must be >= 0");
  return storage_len_km / (link_len_km + storage_len_km);
}

double eta_tau(double nu_hz, double p_det, double dead_time_s) {
  require(finite(nu_hz) && finite(p_det) && finite(dead_time_s), "eta_tau inputs must be finite");
  require(nu_hz >= 0.0 && p_det >= 0.0 && dead_time_s >= 0.0, "eta_tau inputs must be >= 0");
  return 1.0 / (1.0 + nu_hz * p_det * dead_time_s);
}

double qber_dark(double p_dark, double p_det) {
  require(finite(p_det) && p_det > 0.0 && p_det <= 1.0, "p_det must lie in (0, 1]");
  require(finite(p_dark) && p_dark >= 0.0, "p_dark must be >= 0");
  return std::clamp(p_dark / p_det, 0.0, kMaxQber);
}

double afterpulse_sum(const AfterpulseProfile& profile, double p_det, double nu_hz, double dead_time_s) {
  profile.validate();
  require(finite(p_det) && p_det > 0.0 && p_det <= 1.0, "p_det must lie in (0, 1]");
  require(finite(nu_hz) && nu_hz > 0.0, "repetition frequency must be positive");
  require(finite(dead_time_s) && dead_time_s >= 0.0, "dead time must be >= 0");

  const auto last = static_cast<std::int64_t>(std::ceil(1.0 / p_det));
  const double period = 1.0 / nu_hz;
  double sum = 0.0;
  for (std::int64_t n = 0; n <= last; ++n) {
    const double term = profile.probability_at(dead_time_s + static_cast<double>(n) * period);
    if (term < kSeriesCutoff) {
      break;
    }
    sum += term;
  }
  return sum;
}

double qber_after(const AfterpulseProfile& profile, double p_det, double nu_hz, double dead_time_s) {
  return std::min(0.5 * afterpulse_sum(profile, p_det, nu_hz, dead_time_s), kMaxQber);
}

AfterpulseProfile calibrate_afterpulse(AfterpulseAnchor first, AfterpulseAnchor second, double p_det,
                                       double nu_hz) {
  require(second.dead_time_s > first.dead_time_s, "anchors must have increasing dead time");
  require(first.qber_after > 0.0 && second.qber_after > 0.0 && second.qber_after < first.qber_after,
          "anchor QBERs must be positive and decrease with dead time");

  const double target_ratio = second.qber_after / first.qber_after;
  auto unit = [&](double time_const, double dead_time) {
    // unclamped; amplitude scales out of the ratio
    return afterpulse_sum(AfterpulseProfile{0.5, time_const}, p_det, nu_hz, dead_time);
  };
  auto mismatch = [&](double time_const) {
    return unit(time_const, second.dead_time_s) / unit(time_const, first.dead_time_s) - target_ratio;
  };

  boost::math::tools::eps_tolerance<double> tolerance(50);
  std::uintmax_t max_iter = 200;
  const auto [lo, hi] = boost::math::tools::toms748_solve(mismatch, 1e-10, 1e-2, tolerance, max_iter);
  const double time_const = 0.5 * (lo + hi);
  const double amplitude = first.qber_after / unit(time_const, first.dead_time_s);

  AfterpulseProfile profile{amplitude, time_const};
  profile.validate();
  return profile;
}

double qber_total(double opt, double dark, double after, double stray) {
  for (double c : {opt, dark, after, stray}) {
    require(finite(c) && c >= 0.0 && c <= kMaxQber, "QBER components must lie in [0, 0.5]");
  }
  return std::min(opt + dark + after + stray, kMaxQber);
}

RateReport raw_rate(const SystemParams& params, double p_det) {
  validate_params(params, true);
  require(finite(p_det) && p_det >= 0.0 && p_det <= 1.0, "p_det must lie in [0, 1]");

  RateReport report;
  report.p_det = p_det;
  report.transmission = params.fiber.transmission();
  report.prefactor_hz = params.q * params.nu_hz * params.t_bob * params.eta_bob;
  report.eta_duty = eta_duty(params.storage_len_km, params.fiber.length_km);
  report.eta_tau = eta_tau(params.nu_hz, p_det, params.dead_time_s);
  report.r_raw_hz =
      report.prefactor_hz * params.mu * report.transmission * report.eta_duty * report.eta_tau;
  report.visibility = params.visibility();
  report.qber_opt = params.qber_opt;
  return report;
}

MutualInformation info_ab(double disturbance) {
  require(finite(disturbance) && disturbance >= 0.0 && disturbance <= kMaxQber,
          "disturbance must lie in [0, 0.5]");
  const double d = disturbance;
  return MutualInformation{
      .i_ab = 1.0 + xlog2x(d) + xlog2x(1.0 - d),
      .i_ab_corrected = 1.0 + xlog2x(d) - 3.5 * d,
  };
}

double multiphoton_info(double loss_db, const EveModel& eve) {
  eve.validate();
  require(finite(loss_db) && loss_db >= 0.0, "loss must be >= 0 dB");
  const auto& anchors = eve.i2nu_anchors;
  if (anchors.size() == 1) {
    return anchors.front().second;
  }

  // Segment containing loss_db, or the outermost segment when extrapolating.
  std::size_t hi = 1;
  while (hi + 1 < anchors.size() && loss_db > anchors[hi].first) {
    ++hi;
  }
  const auto [x0, y0] = anchors[hi - 1];
  const auto [x1, y1] = anchors[hi];
  const double value = y0 + (y1 - y0) * (loss_db - x0) / (x1 - x0);
  return std::clamp(value, 0.0, 1.0);
}

double eve_info(double loss_db, double mu, const EveModel& eve) {
  eve.validate();
  require(finite(mu) && mu > 0.0, "mean photon number must be positive");
  if (eve.calibrated_mu && std::abs(mu - *eve.calibrated_mu) > 1e-9) {
    throw ValidationError("Eve anchors were computed for mu = " + std::to_string(*eve.calibrated_mu) +
                          "; supply anchors calibrated for mu = " + std::to_string(mu));
  }
  return eve.base_info + multiphoton_info(loss_db, eve);
}

double net_rate(double r_raw_hz, double disturbance, double i_ae) {
  require(finite(r_raw_hz) && r_raw_hz >= 0.0, "raw rate must be >= 0");
  require(finite(i_ae) && i_ae >= 0.0 && i_ae <= 1.0, "Eve information must lie in [0, 1]");
  const auto info = info_ab(disturbance);
  if (info.i_ab <= 0.0 || i_ae >= info.i_ab) {
    return 0.0;
  }
  const double distilled = (info.i_ab - i_ae) * (info.i_ab_corrected / info.i_ab);
  return std::clamp(distilled, 0.0, 1.0) * r_raw_hz;
}

VisibilityStats visibility_stats(double r_right, double r_wrong) {
  require(finite(r_right) && finite(r_wrong), "count rates must be finite");
  const double total = r_right + r_wrong;
  require(total != 0.0, "visibility needs a non-zero total count rate");
  const double v = (r_right - r_wrong) / total;
  return VisibilityStats{.visibility = v, .qber_opt = (1.0 - v) / 2.0};
}

double thermal_path_shift(double alpha_per_k, double link_len_km, double drift_rate_k_per_h,
                          double pulse_separation_s) {
  for (double x : {alpha_per_k, link_len_km, drift_rate_k_per_h, pulse_separation_s}) {
    require(finite(x) && x >= 0.0, "thermal drift inputs must be >= 0");
  }
  const double link_m = link_len_km * 1e3;
  const double drift_k_per_s = drift_rate_k_per_h / 3600.0;
  return alpha_per_k * 2.0 * link_m * drift_k_per_s * pulse_separation_s;
}

double coincidence_probability(double p_det, double p_dark, double visibility) {
  require(finite(p_det) && p_det >= 0.0, "p_det must be >= 0");
  require(finite(p_dark) && p_dark >= 0.0 && p_dark < 1.0, "p_dark must lie in [0, 1)");
  require(finite(visibility) && visibility >= 0.0 && visibility <= 1.0, "visibility must lie in [0, 1]");
  // Photon-number thinning keeps the two detector streams independent Poisson.
  auto both = [&](double route_d1) {
    const double d1 = 1.0 - std::exp(-p_det * route_d1) * (1.0 - p_dark);
    const double d2 = 1.0 - std::exp(-p_det * (1.0 - route_d1)) * (1.0 - p_dark);
    return d1 * d2;
  };
  const double compatible = both(0.5 * (1.0 + visibility));  // symmetric in the bit value
  const double incompatible = both(0.5);
  return 0.5 * compatible + 0.5 * incompatible;
}

RateReport predict(const SystemParams& params, const DetectorModel& detector, const EveModel& eve) {
  params.validate();
  detector.validate();
  eve.validate();

  const double transmission = params.fiber.transmission();
  const double p_det = params.mu * transmission * params.t_bob * params.eta_bob;
  RateReport report = raw_rate(params, p_det);

  report.qber_opt = params.qber_opt;
  report.qber_dark = qber_dark(detector.p_dark, p_det);
  report.qber_after = qber_after(detector.afterpulse, p_det, params.nu_hz, params.dead_time_s);
  report.qber_stray = params.qber_stray;
  const double unclamped = report.qber_opt + report.qber_dark + report.qber_after + report.qber_stray;
  report.qber_total = qber_total(report.qber_opt, report.qber_dark, report.qber_after, report.qber_stray);
  report.qber_clamped = unclamped > kMaxQber;

  const auto info = info_ab(report.qber_total);
  report.i_ab = info.i_ab;
  report.i_ab_corrected = info.i_ab_corrected;
  report.i_ae = std::min(eve_info(params.fiber.total_loss_db(), params.mu, eve), 1.0);
  report.r_net_hz = net_rate(report.r_raw_hz, report.qber_total, report.i_ae);
  report.eta_dist = net_rate(1.0, report.qber_total, report.i_ae);

  const double after_sum = afterpulse_sum(detector.afterpulse, p_det, params.nu_hz, params.dead_time_s);
  const double primary = 1.0 - std::exp(-p_det) * (1.0 - detector.p_dark) * (1.0 - detector.p_dark);
  const double denom = 1.0 - (1.0 - primary) * after_sum;
  report.p_click = denom > 0.0 ? std::min(primary / denom, 1.0) : 1.0;
  report.p_coincidence = coincidence_probability(p_det, detector.p_dark, params.visibility());
  return report;
}

}  // namespace qkdsim::rate
