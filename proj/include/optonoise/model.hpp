#pragma once

// Physical model of a Fabry-Perot cavity whose rear mirror is coated on a
// piezoelectric crystal read out by a resonant RLC line.
//
// Conventions used throughout the library:
//   * Fourier transform  O(omega) = int O(t) exp(+i omega t) dt, so d/dt -> -i omega
//     and the circuit current is I(omega) = -i omega Q(omega).
//   * Spectra and correlations are one-sided in the operator sense:
//     <A(omega) B(omega')> = 2 pi delta(omega + omega') C_AB(omega), S_A = C_AA.
//   * Field quadratures X_theta = a e^{-i theta} + a^dag e^{i theta}; a coherent
//     input has S_{X_theta^in} = 1 (shot-noise units).
//   * Steady-state detuning psi must vanish for every spectrum; the intracavity
//     amplitude alpha is then real and positive.

#include <cmath>
#include <complex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "optonoise/constants.hpp"
#include "optonoise/errors.hpp"

namespace optonoise {

using cplx = std::complex<double>;

inline constexpr cplx I{0.0, 1.0};

/// User-facing physical parameters, SI units. Defaults reproduce the
/// demonstration point: 1 mg mirror, omega_m = 1e6 rad/s, Q_m = 1e6,
/// cavity bandwidth 1e6 1/s, 10 ps round trip, 0.5 um light at 100 mW,
/// Omega_e = 1e3 rad/s, Q_e = 1e6 and a 50 ohm line.
struct PhysicalConfig {
  double m = 1e-6;               // kg
  double omega_m = 1e6;          // rad/s
  double Q_m = 1e6;
  double gamma = 1e6;            // 1/s, cavity amplitude damping
  double tau = 1e-11;            // s, round trip
  double wavelength0 = 0.5e-6;   // m
  double P_in = 0.1;             // W
  double Delta = 0.0;            // rad/s, bare detuning
  double T = 300.0;              // K, mechanical bath (and electrical unless T_elec set)
  std::optional<double> T_elec;  // K, split electrical temperature
  double R = 50.0;               // ohm, line characteristic resistance
  std::optional<double> omega_e; // rad/s, defaults to omega_m
  double Q_e = 1e6;
  double Omega_e = 1e3;          // rad/s, piezoelectric coupling frequency
  double lambda_fb = 0.0;        // A^-1 s^-1/2

  double electric_resonance() const { return omega_e.value_or(omega_m); }
  double mechanical_temperature() const { return T; }
  double electrical_temperature() const { return T_elec.value_or(T); }
  bool equal_temperatures() const { return !T_elec || *T_elec == T; }
};

/// Quantities fixed once per configuration.
struct DerivedParams {
  PhysicalConfig config;

  double omega0 = 0;    // rad/s, optical carrier
  double k0 = 0;        // 1/m
  double alpha_in = 0;  // s^-1/2, real positive input amplitude
  double psi = 0;       // steady-state round-trip detuning (dimensionless)
  cplx alpha{};         // s^-1/2, intracavity mean field
  double gamma_m = 0;   // 1/s
  double gamma_e = 0;   // 1/s
  double L = 0;         // H
  double C = 0;         // F
  double zeta = 0;      // V/m

  /// Intracavity amplitude as a real number; valid only on the QND point.
  double alpha_real() const { return alpha.real(); }
  bool qnd() const { return psi == 0.0; }
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw config_error(what);
}

}  // namespace detail

/// Rejects non-physical parameters. Omega_e, P_in and T may be zero to allow
/// the decoupled limits (no readout, no light, no thermal noise).
inline void check_config(const PhysicalConfig& c) {
  using detail::require;
  auto finite = [](double v) { return std::isfinite(v); };
  require(finite(c.m) && c.m > 0, "m must be positive");
  require(finite(c.omega_m) && c.omega_m > 0, "omega_m must be positive");
  require(finite(c.Q_m) && c.Q_m >= 1, "Q_m must be >= 1");
  require(finite(c.gamma) && c.gamma > 0, "gamma must be positive");
  require(finite(c.tau) && c.tau > 0, "tau must be positive");
  require(finite(c.wavelength0) && c.wavelength0 > 0, "wavelength0 must be positive");
  require(finite(c.P_in) && c.P_in >= 0, "P_in must be non-negative");
  require(finite(c.Delta), "Delta must be finite");
  require(finite(c.T) && c.T >= 0, "T must be non-negative");
  require(!c.T_elec || (finite(*c.T_elec) && *c.T_elec >= 0), "T_elec must be non-negative");
  require(finite(c.R) && c.R > 0, "R must be positive");
  require(finite(c.electric_resonance()) && c.electric_resonance() > 0,
          "omega_e must be positive");
  require(finite(c.Q_e) && c.Q_e >= 1, "Q_e must be >= 1");
  require(finite(c.Omega_e) && c.Omega_e >= 0, "Omega_e must be non-negative");
  require(finite(c.lambda_fb), "lambda_fb must be finite");
}

/// Warnings for parameters outside the classical-bath regime
/// (k_B T >= 10 hbar omega_m). Empty when everything is in range.
inline std::vector<std::string> validity_warnings(const PhysicalConfig& c) {
  std::vector<std::string> out;
  auto check = [&](double temp, const char* which) {
    if (constants::k_B * temp < 10.0 * constants::hbar * c.omega_m) {
      std::ostringstream os;
      os << which << " temperature " << temp
         << " K is below the classical-bath threshold 10*hbar*omega_m/k_B = "
         << 10.0 * constants::hbar * c.omega_m / constants::k_B << " K";
      out.push_back(os.str());
    }
  };
  check(c.mechanical_temperature(), "mechanical");
  if (!c.equal_temperatures()) check(c.electrical_temperature(), "electrical");
  return out;
}

inline DerivedParams derive_params(const PhysicalConfig& config) {
  check_config(config);
  DerivedParams dp;
  dp.config = config;
  dp.omega0 = 2.0 * constants::pi * constants::c / config.wavelength0;
  dp.k0 = dp.omega0 / constants::c;
  dp.alpha_in = std::sqrt(config.P_in / (constants::hbar * dp.omega0));
  dp.psi = config.tau * config.Delta;
  dp.alpha = std::sqrt(2.0 * config.gamma) * dp.alpha_in /
             (config.gamma - I * dp.psi / config.tau);
  if (dp.psi == 0.0) {
    // keep alpha exactly real on the QND point
    dp.alpha = cplx{std::sqrt(2.0 / config.gamma) * dp.alpha_in, 0.0};
  }
  const double omega_e = config.electric_resonance();
  dp.gamma_m = config.omega_m / config.Q_m;
  dp.gamma_e = omega_e / config.Q_e;
  dp.L = config.R / dp.gamma_e;
  dp.C = 1.0 / (dp.L * omega_e * omega_e);
  dp.zeta = config.Omega_e * std::sqrt(config.m / dp.C);
  return dp;
}

/// Throws unless the steady-state detuning vanishes (QND condition).
inline void require_qnd(const DerivedParams& dp) {
  if (!dp.qnd()) {
    std::ostringstream os;
    os << "steady-state detuning psi = " << dp.psi
       << " is nonzero; spectra are defined only at the QND point psi = 0";
    throw validity_error(os.str());
  }
}

namespace detail {

inline void require_nonzero(double omega, const char* fn) {
  if (omega == 0.0 || !std::isfinite(omega)) {
    throw frequency_domain_error(std::string(fn) + ": omega must be finite and nonzero");
  }
}

}  // namespace detail

// --- single-frequency response functions -----------------------------------

/// Mechanical susceptibility of the bare crystal, m/N.
inline cplx chi0(double omega, const DerivedParams& dp) {
  const auto& c = dp.config;
  return (1.0 / c.m) / (c.omega_m * c.omega_m - omega * omega - I * omega * dp.gamma_m);
}

/// Impedance of the uncoupled resonant circuit, i(1/(C w) - L w). Purely imaginary.
inline cplx impedance_bare(double omega, const DerivedParams& dp) {
  detail::require_nonzero(omega, "impedance_bare");
  return I * (1.0 / (dp.C * omega) - dp.L * omega);
}

/// Circuit impedance seen by the line once the crystal motion is included.
inline cplx impedance_eff(double omega, const DerivedParams& dp) {
  detail::require_nonzero(omega, "impedance_eff");
  return impedance_bare(omega, dp) - I * (dp.zeta * dp.zeta / omega) * chi0(omega, dp);
}

/// Mechanical susceptibility dressed by the loaded circuit.
inline cplx chi_eff(double omega, const DerivedParams& dp) {
  detail::require_nonzero(omega, "chi_eff");
  const double R = dp.config.R;
  const cplx inv = 1.0 / chi0(omega, dp) -
                   I * (dp.zeta * dp.zeta / omega) / (R + impedance_bare(omega, dp));
  return 1.0 / inv;
}

/// Measurement gain, A s. Normalized so that the open-loop output current is
///   dI_out = alpha_in * gain * dX0_in + I_T.
/// It chains the radiation-pressure force per intracavity amplitude quadrature
/// (2 hbar k0 alpha / tau), the cavity filter sqrt(2 gamma)/(gamma - i w) and
/// the piezoelectric transduction zeta chi0/(R + Z); on the QND point
/// alpha sqrt(2 gamma) = 2 alpha_in, hence the leading 4.
inline cplx gain(double omega, const DerivedParams& dp) {
  const auto& c = dp.config;
  const cplx cavity = 1.0 / ((c.gamma - I * omega) * c.tau);
  return 4.0 * constants::hbar * dp.k0 * cavity * dp.zeta * chi0(omega, dp) /
         (c.R + impedance_eff(omega, dp));
}

/// Feedback term from the detuning fluctuations driven by the fed-back
/// amplitude quadrature (dimensionless).
inline cplx f_fb(double omega, const DerivedParams& dp) {
  const auto& c = dp.config;
  return 8.0 * constants::hbar * dp.k0 * dp.k0 * std::norm(dp.alpha) * chi_eff(omega, dp) /
         ((c.gamma - I * omega) * c.tau * c.tau);
}

struct ResponseSet {
  double omega = 0;
  cplx chi0;
  cplx Z0;
  cplx Z;
  cplx chi;
  cplx gain;
  cplx f_fb;
};

inline ResponseSet evaluate_response(double omega, const DerivedParams& dp) {
  return ResponseSet{omega,
                     chi0(omega, dp),
                     impedance_bare(omega, dp),
                     impedance_eff(omega, dp),
                     chi_eff(omega, dp),
                     gain(omega, dp),
                     f_fb(omega, dp)};
}

}  // namespace optonoise
