// SPDX-License-Identifier: Apache-2.0
//
// Analytic key-rate and error budget of a plug&play BB84 link: raw rate,
// QBER decomposition, dead-time and duty-cycle factors, mutual information,
// net rate, visibility and thermal path drift.
//
// Everything here is a pure function over value types.
#pragma once

#include <optional>
#include <utility>
#include <vector>

namespace qkdsim::rate {

struct FiberSpec {
  double length_km = 0.0;
  double loss_coeff_db_per_km = 0.25;
  double extra_loss_db = 0.0;  // connectors, splices, or a measured total
  double thermal_expansion_alpha = 1e-5;  // 1/K
  double group_velocity_m_per_s = 2.0e8;

  [[nodiscard]] double total_loss_db() const {
    return length_km * loss_coeff_db_per_km + extra_loss_db;
  }
  [[nodiscard]] double transmission() const;
  void validate() const;
};

struct SystemParams {
  double q = 0.5;
  double nu_hz = 5e6;
  double mu = 0.2;
  double t_bob = 0.6;
  double eta_bob = 0.1;
  double storage_len_km = 10.0;
  double dead_time_s = 4e-6;
  double qber_opt = 0.0015;
  double qber_stray = 0.0;
  FiberSpec fiber{};

  [[nodiscard]] double visibility() const { return 1.0 - 2.0 * qber_opt; }
  void validate() const;
};

// Calibrated to 4.0 % QBER_after without dead time and 1.5 % with 4 us dead
// time at p_det = 0.15 %, nu = 5 MHz. See calibrate_afterpulse().
inline constexpr double kDefaultAfterpulseAmplitude = 3.828667954920844e-3;
inline constexpr double kDefaultAfterpulseTimeConst = 4.078181791293064e-6;

/// p_after(t) = amplitude * exp(-t / time_const_s)
struct AfterpulseProfile {
  double amplitude = kDefaultAfterpulseAmplitude;
  double time_const_s = kDefaultAfterpulseTimeConst;

  [[nodiscard]] double probability_at(double delay_s) const;
  void validate() const;
};

struct DetectorModel {
  double p_dark = 1e-5;  // per detector, per gate
  double gate_width_s = 2.5e-9;
  AfterpulseProfile afterpulse{};

  void validate() const;
};

struct EveModel {
  double base_info = 0.03;
  std::vector<std::pair<double, double>> i2nu_anchors{{5.0, 0.06}, {10.0, 0.14}, {20.0, 0.40}};
  /// Mean photon number the anchors were computed for; unset means "any".
  std::optional<double> calibrated_mu = 0.2;

  void validate() const;
};

struct RateReport {
  double p_det = 0.0;    // signal detection probability per gate, mu t_AB t_B eta_B
  double p_click = 0.0;  // any-cause click probability per gate (darks, afterpulses)
  double p_coincidence = 0.0;
  double prefactor_hz = 0.0;  // q nu t_B eta_B
  double transmission = 0.0;
  double r_raw_hz = 0.0;
  double qber_opt = 0.0;
  double qber_dark = 0.0;
  double qber_after = 0.0;
  double qber_stray = 0.0;
  double qber_total = 0.0;
  bool qber_clamped = false;
  double eta_tau = 1.0;
  double eta_duty = 1.0;
  double eta_dist = 0.0;
  double i_ab = 0.0;
  double i_ab_corrected = 0.0;
  double i_ae = 0.0;
  double visibility = 1.0;
  double r_net_hz = 0.0;
};

struct MutualInformation {
  double i_ab = 0.0;
  double i_ab_corrected = 0.0;
};

struct VisibilityStats {
  double visibility = 0.0;
  double qber_opt = 0.0;
};

double transmission_from_loss(double loss_db);
double loss_from_transmission(double transmission);

double eta_duty(double storage_len_km, double link_len_km);
double eta_tau(double nu_hz, double p_det, double dead_time_s);

double qber_dark(double p_dark, double p_det);

/// Sum of p_after(tau + n/nu) over n = 0 .. ceil(1/p_det); the expected
/// number of afterpulses between two detections.
double afterpulse_sum(const AfterpulseProfile& profile, double p_det, double nu_hz,
                      double dead_time_s);
/// Half of afterpulse_sum(): an afterpulse hits the wrong detector half the time.
double qber_after(const AfterpulseProfile& profile, double p_det, double nu_hz, double dead_time_s);

struct AfterpulseAnchor {
  double dead_time_s;
  double qber_after;
};

/// Solves the two-parameter exponential profile through two dead-time anchors.
AfterpulseProfile calibrate_afterpulse(AfterpulseAnchor first, AfterpulseAnchor second,
                                       double p_det, double nu_hz);

double qber_total(double opt, double dark, double after, double stray);

/// Raw sifted rate with duty and dead-time factors; fills p_det, prefactor, transmission,
/// eta_duty, eta_tau and r_raw_hz.
RateReport raw_rate(const SystemParams& params, double p_det);

/// 0 log2 0 is taken as 0.
MutualInformation info_ab(double disturbance);

double multiphoton_info(double loss_db, const EveModel& eve);
double eve_info(double loss_db, double mu, const EveModel& eve);

double net_rate(double r_raw_hz, double disturbance, double i_ae);

VisibilityStats visibility_stats(double r_right, double r_wrong);

/// Extra optical path seen by the second pulse of a pair when the fibre
/// warms at drift_rate_k_per_h during the pulse separation.
double thermal_path_shift(double alpha_per_k, double link_len_km, double drift_rate_k_per_h,
                          double pulse_separation_s);

/// Probability that both detectors click in one gate, averaged over the four
/// BB84 setting pairs; afterpulses and dead time are ignored.
double coincidence_probability(double p_det, double p_dark, double visibility);

RateReport predict(const SystemParams& params, const DetectorModel& detector, const EveModel& eve);

}  // namespace qkdsim::rate
