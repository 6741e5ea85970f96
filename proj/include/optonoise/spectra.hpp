#pragma once

// Closed-form noise spectra of the optomechanical cavity with and without
// electro-optic feedback of the measured current.
//
// Feedback replaces the amplitude-quadrature input by X0_in - 2 lambda J with
// lambda real. Two readings of "the measured current" J are supported:
//
//   open_record      J is the current the plant produces from the unmodulated
//                    input, alpha_in G dX0_in + I_T. This is the model behind
//                    the standard feedback-squeezing formulas and the default.
//   self_consistent  J is the current actually leaving the circuit, which is
//                    itself driven by the fed-back field. Every formula keeps
//                    its shape with lambda replaced by the complex effective
//                    gain mu = lambda / (1 + 2 lambda alpha_in G).

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>

#include "optonoise/model.hpp"

namespace optonoise {

enum class LoopClosure { open_record, self_consistent };

inline const char* to_string(LoopClosure c) {
  return c == LoopClosure::open_record ? "open_record" : "self_consistent";
}

struct FeedbackSetting {
  enum class Mode { off, fixed, optimal_per_omega, optimal_at };

  Mode mode = Mode::off;
  double value = 0.0;  // lambda for fixed, reference omega for optimal_at

  static FeedbackSetting none() { return {}; }
  static FeedbackSetting fixed(double lambda) { return {Mode::fixed, lambda}; }
  static FeedbackSetting optimal() { return {Mode::optimal_per_omega, 0.0}; }
  static FeedbackSetting optimal_at(double omega_ref) { return {Mode::optimal_at, omega_ref}; }

  double lambda_at(double omega, const DerivedParams& dp) const;
};

enum class RowSource { closed_form, oracle };

/// All spectra at one (omega, theta, lambda). Feedback-dependent entries
/// include the feedback; the two Psi correlations are the open-loop ones.
struct SpectraRow {
  RowSource source = RowSource::closed_form;
  double omega = 0;        // rad/s
  double theta = 0;        // rad
  double lambda_used = 0;  // A^-1 s^-1/2
  double S_psi = 0;        // s
  double S_X_intra = 0;    // s
  double S_X_out = 0;      // shot-noise units
  double S_X0_out = 0;     // shot-noise units, amplitude quadrature
  double S_Iout = 0;       // A^2 s
  double S_cond = 0;       // shot-noise units
  double product_46 = 0;   // S_X0_out * S_Xpi/2_out
  double product_47 = 0;   // S_cond * S_Xpi/2_out
  cplx C_psi_xin;          // s^1/2
  cplx C_psi_it;           // A s
  cplx C_x0out_iout;       // A s^1/2
};

namespace detail {

inline void spectra_pre(double omega, const DerivedParams& dp, const char* fn) {
  require_nonzero(omega, fn);
  require_qnd(dp);
}

}  // namespace detail

// --- thermal current ---------------------------------------------------------

/// Thermal current assembled from its line and mechanical contributions,
///   |(R-Z)/(R+Z)|^2 S_Iin + |zeta chi0/(R+Z)|^2 S_FT.
inline double thermal_current_psd_assembled(double omega, const DerivedParams& dp) {
  const auto& c = dp.config;
  const cplx Z = impedance_eff(omega, dp);
  const double s_iin = constants::k_B * c.electrical_temperature() / (2.0 * c.R);
  const double s_ft = 2.0 * c.m * dp.gamma_m * constants::k_B * c.mechanical_temperature();
  return std::norm((c.R - Z) / (c.R + Z)) * s_iin +
         std::norm(dp.zeta * chi0(omega, dp) / (c.R + Z)) * s_ft;
}

/// Nyquist level k_B T / (2R) of the thermal current in equilibrium.
inline double s_thermal_current(const DerivedParams& dp) {
  const auto& c = dp.config;
  if (!c.equal_temperatures()) {
    throw validity_error(
        "s_thermal_current: the Nyquist identity needs equal mechanical and electrical "
        "temperatures");
  }
  return constants::k_B * c.T / (2.0 * c.R);
}

/// Thermal-current PSD used by the spectra: the Nyquist level in equilibrium,
/// the assembled form otherwise.
inline double current_noise_psd(double omega, const DerivedParams& dp) {
  if (dp.config.equal_temperatures()) return s_thermal_current(dp);
  return thermal_current_psd_assembled(omega, dp);
}

// --- open-loop detuning statistics -------------------------------------------

/// Detuning fluctuation spectrum.
inline double s_psi(double omega, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "s_psi");
  using constants::hbar;
  using constants::k_B;
  const auto& c = dp.config;
  const double a = dp.alpha_real();
  const double k0 = dp.k0;
  const double w2 = omega * omega;
  const double radiation =
      4.0 * hbar * hbar * k0 * k0 * a * a * 2.0 * c.gamma /
      ((c.gamma * c.gamma + w2) * c.tau * c.tau);
  const double mechanical = 2.0 * c.m * dp.gamma_m * k_B * c.mechanical_temperature();
  const double electrical = (dp.zeta * dp.zeta / w2) * 2.0 * c.R /
                            std::norm(c.R + impedance_bare(omega, dp)) * k_B *
                            c.electrical_temperature();
  return 4.0 * k0 * k0 * std::norm(chi_eff(omega, dp)) * (radiation + mechanical + electrical);
}

/// Correlation of the detuning with the input quadrature X_theta^in.
inline cplx c_psi_xin(double omega, double theta, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "c_psi_xin");
  const auto& c = dp.config;
  return 4.0 * constants::hbar * dp.k0 * dp.k0 * dp.alpha_real() * chi_eff(omega, dp) *
         std::sqrt(2.0 * c.gamma) / ((c.gamma - I * omega) * c.tau) * std::polar(1.0, theta);
}

/// Correlation of the detuning with the thermal current I_T.
inline cplx c_psi_it(double omega, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "c_psi_it");
  const auto& c = dp.config;
  const double R = c.R;
  const cplx Zc = std::conj(impedance_eff(omega, dp));
  const cplx mech = dp.zeta * std::conj(chi0(omega, dp)) / (R + Zc) * 2.0 * c.m * dp.gamma_m *
                    constants::k_B * c.mechanical_temperature();
  const cplx line = I * (dp.zeta / omega) / (R + impedance_bare(omega, dp)) * (R - Zc) /
                    (R + Zc) * constants::k_B * c.electrical_temperature();
  return 2.0 * dp.k0 * chi_eff(omega, dp) * (mech + line);
}

// --- feedback-free field spectra ---------------------------------------------

inline double s_x_intra(double omega, double theta, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "s_x_intra");
  const auto& c = dp.config;
  const double a = dp.alpha_real();
  const double den = c.gamma * c.gamma + omega * omega;
  const double s = std::sin(theta);
  const double vacuum = 2.0 * c.gamma / den;
  if (s == 0.0) return vacuum;
  return 4.0 * a * a * s * s / (den * c.tau * c.tau) * s_psi(omega, dp) + vacuum +
         2.0 * std::sqrt(2.0 * c.gamma) * a * s / (den * c.tau) * 2.0 *
             std::real(c_psi_xin(omega, theta, dp));
}

inline double s_x_out(double omega, double theta, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "s_x_out");
  const auto& c = dp.config;
  const double a = dp.alpha_real();
  const double den = c.gamma * c.gamma + omega * omega;
  const double s = std::sin(theta);
  if (s == 0.0) return 1.0;
#ifdef OPTONOISE_MUTATE_OUTPUT_CROSS_SIGN
  const cplx filter = c.gamma + I * omega;
#else
  const cplx filter = c.gamma - I * omega;
#endif
  return 8.0 * c.gamma * a * a * s * s / (den * c.tau * c.tau) * s_psi(omega, dp) + 1.0 +
         2.0 * std::sqrt(2.0 * c.gamma) * a * s / (den * c.tau) * 2.0 *
             std::real(filter * c_psi_xin(omega, theta, dp));
}

// --- feedback ------------------------------------------------------------------

/// Effective gain mu applied to the record and scale kappa of the measured
/// current relative to the record (I_meas = kappa J).
struct LoopFactors {
  cplx mu;
  cplx kappa;
};

inline LoopFactors loop_factors(double omega, double lambda, const DerivedParams& dp,
                                LoopClosure closure) {
  if (closure == LoopClosure::open_record) return {cplx{lambda, 0.0}, cplx{1.0, 0.0}};
  const cplx d = 1.0 + 2.0 * lambda * dp.alpha_in * gain(omega, dp);
  if (std::abs(d) < 1e-12) {
    std::ostringstream os;
    os << "closed feedback loop is singular at omega = " << omega
       << " rad/s (|1 + 2 lambda alpha_in G| = " << std::abs(d) << ")";
    throw loop_singularity(os.str());
  }
  return {lambda / d, 1.0 / d};
}

/// PSD of the open-loop current record alpha_in G dX0_in + I_T.
inline double s_record(double omega, const DerivedParams& dp) {
  return dp.alpha_in * dp.alpha_in * std::norm(gain(omega, dp)) + current_noise_psd(omega, dp);
}

/// Correlation of the open-loop detuning with the current record.
inline cplx c_psi_record(double omega, const DerivedParams& dp) {
  return dp.alpha_in * std::conj(gain(omega, dp)) * c_psi_xin(omega, 0.0, dp) +
         c_psi_it(omega, dp);
}

/// Detuning spectrum with the fed-back amplitude quadrature included.
inline double s_psi_fb(double omega, double lambda, const DerivedParams& dp,
                       LoopClosure closure = LoopClosure::open_record) {
  const double base = s_psi(omega, dp);
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  const cplx k = c_psi_xin(omega, 0.0, dp);  // response of Psi to X0_in
  return base - 4.0 * std::real(std::conj(mu) * std::conj(k) * c_psi_record(omega, dp)) +
         4.0 * std::norm(mu) * std::norm(k) * s_record(omega, dp);
}

/// Intracavity quadrature spectrum with feedback (measured quadrature 0).
inline double s_x_intra_fb(double omega, double theta, double lambda, const DerivedParams& dp,
                           LoopClosure closure = LoopClosure::open_record) {
  const double base = s_x_intra(omega, theta, dp);
  const auto& c = dp.config;
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  const double a = dp.alpha_real();
  const double den = c.gamma * c.gamma + omega * omega;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const cplx f = f_fb(omega, dp);
  const cplx g = gain(omega, dp);

  const cplx direct = 2.0 * c.gamma / den * dp.alpha_in * std::conj(g) *
                      std::polar(1.0, -theta) * (cs + std::conj(f) * sn);
  const cplx via_psi = std::sqrt(2.0 * c.gamma) * a / (den * c.tau) *
                       (std::sin(2.0 * theta) + 2.0 * std::conj(f) * sn * sn) *
                       c_psi_record(omega, dp);
  const double fed = 2.0 * c.gamma / den * s_record(omega, dp) * std::norm(cs + f * sn);
  return base - 4.0 * std::real(std::conj(mu) * (direct + via_psi)) + 4.0 * std::norm(mu) * fed;
}

/// Output quadrature spectrum with feedback.
inline double s_x_out_fb(double omega, double theta, double lambda, const DerivedParams& dp,
                         LoopClosure closure = LoopClosure::open_record) {
  const double base = s_x_out(omega, theta, dp);
  const auto& c = dp.config;
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  const double a = dp.alpha_real();
  const double den = c.gamma * c.gamma + omega * omega;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const cplx f = f_fb(omega, dp);
  const cplx g = gain(omega, dp);
  const cplx lo = c.gamma - I * omega;
  const cplx hi = c.gamma + I * omega;

  const cplx direct = dp.alpha_in * std::conj(g) * std::polar(1.0, -theta) *
                      (cs + 2.0 * c.gamma * std::conj(f) * sn / lo);
  const cplx via_psi = std::sqrt(2.0 * c.gamma) * a / c.tau *
                       (std::sin(2.0 * theta) / hi + 4.0 * c.gamma * std::conj(f) * sn * sn / den) *
                       c_psi_record(omega, dp);
  const double fed = s_record(omega, dp) * std::norm(hi / lo * cs + 2.0 * c.gamma * f / lo * sn);
  return base - 4.0 * std::real(std::conj(mu) * (direct + via_psi)) + 4.0 * std::norm(mu) * fed;
}

/// Amplitude-quadrature output spectrum with feedback, |1 - 2 mu alpha_in G|^2 + 4|mu|^2 S_IT.
inline double s_x0_out_fb(double omega, double lambda, const DerivedParams& dp,
                          LoopClosure closure = LoopClosure::open_record) {
  detail::spectra_pre(omega, dp, "s_x0_out_fb");
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  return std::norm(1.0 - 2.0 * mu * dp.alpha_in * gain(omega, dp)) +
         4.0 * std::norm(mu) * current_noise_psd(omega, dp);
}

/// Feedback strength minimizing the amplitude-quadrature output spectrum
/// (open-record loop). Zero when Re G vanishes.
inline double lambda_opt(double omega, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "lambda_opt");
  const cplx g = gain(omega, dp);
  if (g.real() == 0.0) return 0.0;
  const double a = dp.alpha_in;
  const double thermal = dp.config.equal_temperatures()
                             ? constants::k_B * dp.config.T / dp.config.R
                             : 2.0 * current_noise_psd(omega, dp);
  return a * g.real() / (2.0 * a * a * std::norm(g) + thermal);
}

/// alpha_in |G| / sqrt(S_IT); values well above 1 mean the measurement beats
/// the thermal current and substantial squeezing is reachable.
inline double squeezing_significance(double omega, const DerivedParams& dp) {
  detail::spectra_pre(omega, dp, "squeezing_significance");
  const double signal = dp.alpha_in * std::abs(gain(omega, dp));
  const double noise = std::sqrt(current_noise_psd(omega, dp));
  if (noise == 0.0) return signal > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return signal / noise;
}

/// PSD of the measured current.
inline double s_iout(double omega, double lambda, const DerivedParams& dp,
                     LoopClosure closure = LoopClosure::open_record) {
  detail::spectra_pre(omega, dp, "s_iout");
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  return std::norm(kappa) * s_record(omega, dp);
}

/// Correlation of the amplitude output quadrature with the measured current.
inline cplx c_x0out_iout(double omega, double lambda, const DerivedParams& dp,
                         LoopClosure closure = LoopClosure::open_record) {
  detail::spectra_pre(omega, dp, "c_x0out_iout");
  const auto& c = dp.config;
  const auto [mu, kappa] = loop_factors(omega, lambda, dp, closure);
  const cplx reflect = (c.gamma + I * omega) / (c.gamma - I * omega);
  return reflect * std::conj(kappa) *
         (dp.alpha_in * std::conj(gain(omega, dp)) - 2.0 * mu * s_record(omega, dp));
}

/// Amplitude-quadrature output spectrum conditioned on the measured current.
inline double s_conditioned(double omega, double lambda, const DerivedParams& dp,
                            LoopClosure closure = LoopClosure::open_record) {
  const double s_i = s_iout(omega, lambda, dp, closure);
  if (!(s_i > 0.0)) {
    std::ostringstream os;
    os << "s_conditioned: measured current carries no noise at omega = " << omega
       << " rad/s; the conditioned spectrum is undefined";
    throw validity_error(os.str());
  }
  return s_x0_out_fb(omega, lambda, dp, closure) -
         std::norm(c_x0out_iout(omega, lambda, dp, closure)) / s_i;
}

struct UncertaintyProducts {
  double p46 = 0;  // S_X0_out * S_Xpi/2_out
  double p47 = 0;  // S_X0_out|I_out * S_Xpi/2_out
};

inline UncertaintyProducts uncertainty_products(double omega, double lambda,
                                                const DerivedParams& dp,
                                                LoopClosure closure = LoopClosure::open_record) {
  const double phase = s_x_out_fb(omega, constants::pi / 2.0, lambda, dp, closure);
  return {s_x0_out_fb(omega, lambda, dp, closure) * phase,
          s_conditioned(omega, lambda, dp, closure) * phase};
}

inline double FeedbackSetting::lambda_at(double omega, const DerivedParams& dp) const {
  switch (mode) {
    case Mode::off:
      return 0.0;
    case Mode::fixed:
      return value;
    case Mode::optimal_per_omega:
      return lambda_opt(omega, dp);
    case Mode::optimal_at:
      return lambda_opt(value, dp);
  }
  return 0.0;
}

inline SpectraRow evaluate_row(double omega, double theta, double lambda, const DerivedParams& dp,
                               LoopClosure closure = LoopClosure::open_record) {
  SpectraRow row;
  row.source = RowSource::closed_form;
  row.omega = omega;
  row.theta = theta;
  row.lambda_used = lambda;
  row.S_psi = s_psi_fb(omega, lambda, dp, closure);
  row.S_X_intra = s_x_intra_fb(omega, theta, lambda, dp, closure);
  row.S_X_out = s_x_out_fb(omega, theta, lambda, dp, closure);
  row.S_X0_out = s_x0_out_fb(omega, lambda, dp, closure);
  row.S_Iout = s_iout(omega, lambda, dp, closure);
  row.S_cond = s_conditioned(omega, lambda, dp, closure);
  const auto p = uncertainty_products(omega, lambda, dp, closure);
  row.product_46 = p.p46;
  row.product_47 = p.p47;
  row.C_psi_xin = c_psi_xin(omega, theta, dp);
  row.C_psi_it = c_psi_it(omega, dp);
  row.C_x0out_iout = c_x0out_iout(omega, lambda, dp, closure);
  return row;
}

}  // namespace optonoise
