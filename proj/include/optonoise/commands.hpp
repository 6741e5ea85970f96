#pragma once

// Command implementations behind the optonoise tool. Each command is a pure
// function of the RunConfig; evaluation runs on the thread pool and rows are
// written into fixed slots, so output order never depends on scheduling.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "optonoise/grid.hpp"
#include "optonoise/model.hpp"
#include "optonoise/oracle.hpp"
#include "optonoise/parallel.hpp"
#include "optonoise/run_config.hpp"
#include "optonoise/spectra.hpp"
#include "optonoise/table.hpp"

namespace optonoise {

namespace detail {

inline std::vector<double> resolve_temperatures(const RunConfig& rc, std::vector<double> fallback) {
  std::vector<double> ts = rc.temperatures.value_or(std::move(fallback));
  if (ts.empty()) throw usage_error("temperatures: the list is empty");
  return ts;
}

/// Parameters at temperature T with the CLI's strict invariants: T > 0 and
/// the QND point. Classical-bath warnings are appended to `warnings`.
inline DerivedParams params_at(const RunConfig& rc, double T, std::vector<std::string>& warnings) {
  PhysicalConfig c = rc.physical;
  c.T = T;
  if (!(std::isfinite(T) && T >= 0.0)) throw config_error("T must be non-negative");
  if (T == 0.0 || c.electrical_temperature() == 0.0) {
    throw validity_error(
        "T = 0 K: the Langevin noise model assumes a classical bath and is not valid at zero "
        "temperature");
  }
  DerivedParams dp = derive_params(c);
  require_qnd(dp);
  for (auto& w : validity_warnings(c)) {
    if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
  }
  return dp;
}

inline std::vector<DerivedParams> params_for(const RunConfig& rc, const std::vector<double>& ts,
                                             std::vector<std::string>& warnings) {
  std::vector<DerivedParams> out;
  for (double T : ts) out.push_back(params_at(rc, T, warnings));
  return out;
}

inline std::string tagged(const std::string& name, double T, const char* unit) {
  return name + "@" + format_double(T) + "K[" + unit + "]";
}

}  // namespace detail

/// Columns of cmd_spectra, in output order.
inline std::vector<std::string> spectra_columns() {
  return {"omega[rad/s]",        "theta[rad]",          "T[K]",
          "lambda[A^-1 s^-1/2]", "S_psi[s]",            "S_X_intra[s]",
          "S_X_out[SNU]",        "S_X0_out[SNU]",       "S_Iout[A^2 s]",
          "S_cond[SNU]",         "product_46[SNU^2]",   "product_47[SNU^2]",
          "Re_C_psi_xin[s^1/2]", "Im_C_psi_xin[s^1/2]", "Re_C_psi_it[A s]",
          "Im_C_psi_it[A s]",    "Re_C_x0out_iout[A s^1/2]", "Im_C_x0out_iout[A s^1/2]"};
}

/// All spectra per (omega, theta, T); omega outermost, then theta, then T.
inline Table cmd_spectra(const RunConfig& rc) {
  Table t;
  t.columns = spectra_columns();
  const auto omegas = rc.grid.points();
  const auto thetas = rc.thetas.value_or(std::vector<double>{0.0});
  if (thetas.empty()) throw usage_error("thetas: the list is empty");
  const auto temps = detail::resolve_temperatures(rc, {rc.physical.T});
  const auto params = detail::params_for(rc, temps, t.warnings);
  const FeedbackSetting fb = rc.feedback.value_or(FeedbackSetting::none());

  const std::size_t per_omega = thetas.size() * temps.size();
  t.rows.resize(omegas.size() * per_omega);
  parallel_for(omegas.size(), [&](std::size_t i) {
    const double w = omegas[i];
    std::size_t slot = i * per_omega;
    for (double th : thetas) {
      for (std::size_t k = 0; k < temps.size(); ++k) {
        const auto& dp = params[k];
        const double lam = fb.lambda_at(w, dp);
        const SpectraRow r = evaluate_row(w, th, lam, dp, rc.closure);
        t.rows[slot++] = {w,
                          th,
                          temps[k],
                          lam,
                          r.S_psi,
                          r.S_X_intra,
                          r.S_X_out,
                          r.S_X0_out,
                          r.S_Iout,
                          r.S_cond,
                          r.product_46,
                          r.product_47,
                          r.C_psi_xin.real(),
                          r.C_psi_xin.imag(),
                          r.C_psi_it.real(),
                          r.C_psi_it.imag(),
                          r.C_x0out_iout.real(),
                          r.C_x0out_iout.imag()};
      }
    }
  });
  return t;
}

/// Amplitude-quadrature output spectrum with feedback, one column per
/// temperature, hottest first.
inline Table cmd_fig1(const RunConfig& rc) {
  Table t;
  auto temps = detail::resolve_temperatures(rc, {300.0, 70.0, 4.0});
  std::stable_sort(temps.begin(), temps.end(), std::greater<>());
  const auto params = detail::params_for(rc, temps, t.warnings);
  const FeedbackSetting fb = rc.feedback.value_or(FeedbackSetting::optimal());
  const auto omegas = rc.grid.points();

  t.columns.push_back("omega[rad/s]");
  for (double T : temps) t.columns.push_back(detail::tagged("S_X0_out", T, "SNU"));
  for (double T : temps) t.columns.push_back(detail::tagged("lambda", T, "A^-1 s^-1/2"));
  t.rows.resize(omegas.size());
  parallel_for(omegas.size(), [&](std::size_t i) {
    const double w = omegas[i];
    std::vector<double> row(1 + 2 * temps.size());
    row[0] = w;
    for (std::size_t k = 0; k < temps.size(); ++k) {
      const double lam = fb.lambda_at(w, params[k]);
      row[1 + k] = s_x0_out_fb(w, lam, params[k], rc.closure);
      row[1 + temps.size() + k] = lam;
    }
    t.rows[i] = std::move(row);
  });
  return t;
}

struct SqueezingBand {
  double omega_at_min = 0;
  double s_min = 0;
  double lo = 0;  // equal to hi with zero width when min >= 1 - epsilon
  double hi = 0;
  double width() const { return hi - lo; }
};

/// Contiguous run of grid points around the global minimum with s < 1 - epsilon.
inline SqueezingBand squeezing_band(const std::vector<double>& omegas,
                                    const std::vector<double>& s, double epsilon) {
  const auto it = std::min_element(s.begin(), s.end());
  const std::size_t m = static_cast<std::size_t>(it - s.begin());
  SqueezingBand b{omegas[m], s[m], omegas[m], omegas[m]};
  if (!(s[m] < 1.0 - epsilon)) return b;
  std::size_t l = m, r = m;
  while (l > 0 && s[l - 1] < 1.0 - epsilon) --l;
  while (r + 1 < s.size() && s[r + 1] < 1.0 - epsilon) ++r;
  b.lo = omegas[l];
  b.hi = omegas[r];
  return b;
}

/// Optimal gain, the amplitude-quadrature output spectrum it reaches and the
/// significance ratio per (omega, T); the squeezing band of each temperature
/// is repeated on its rows. Uses the open-record loop, for which the gain
/// formula is the exact minimizer.
inline Table cmd_optimize(const RunConfig& rc) {
  if (!(rc.epsilon > 0.0 && rc.epsilon < 1.0)) throw usage_error("epsilon must lie in (0, 1)");
  Table t;
  t.columns = {"omega[rad/s]", "T[K]",         "lambda_opt[A^-1 s^-1/2]", "S_X0_out_min[SNU]",
               "significance[1]", "band_lo[rad/s]", "band_hi[rad/s]",  "bandwidth[rad/s]"};
  const auto omegas = rc.grid.points();
  const auto temps = detail::resolve_temperatures(rc, {rc.physical.T});
  const auto params = detail::params_for(rc, temps, t.warnings);
  const std::size_t nT = temps.size();

  std::vector<double> lam(omegas.size() * nT), smin(lam.size()), sig(lam.size());
  parallel_for(omegas.size(), [&](std::size_t i) {
    for (std::size_t k = 0; k < nT; ++k) {
      const double w = omegas[i];
      const std::size_t s = i * nT + k;
      lam[s] = lambda_opt(w, params[k]);
      smin[s] = s_x0_out_fb(w, lam[s], params[k]);
      sig[s] = squeezing_significance(w, params[k]);
    }
  });
  std::vector<SqueezingBand> bands;
  for (std::size_t k = 0; k < nT; ++k) {
    std::vector<double> curve(omegas.size());
    for (std::size_t i = 0; i < omegas.size(); ++i) curve[i] = smin[i * nT + k];
    bands.push_back(squeezing_band(omegas, curve, rc.epsilon));
  }
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    for (std::size_t k = 0; k < nT; ++k) {
      const std::size_t s = i * nT + k;
      const auto& b = bands[k];
      t.rows.push_back({omegas[i], temps[k], lam[s], smin[s], sig[s], b.lo, b.hi, b.width()});
    }
  }
  return t;
}

// --- verification ---------------------------------------------------------------

struct VerificationReport {
  struct Comparison {
    LoopClosure closure = LoopClosure::open_record;
    std::string lambda;  // "off" or the feedback mode
    oracle::ComparisonReport report;
  };
  struct Uncertainty {
    double min_p46 = std::numeric_limits<double>::infinity(), omega_p46 = 0;
    double min_p47 = std::numeric_limits<double>::infinity(), omega_p47 = 0;
    double threshold = 1.0 - 1e-9;
    bool pass = true;
  };
  struct Equilibrium {
    bool applicable = true;  // false with split bath temperatures
    double max_residual = 0;
    double omega = 0;
    double tolerance = 1e-9;
    bool pass = true;
  };
  struct Optimality {
    std::size_t n_checked = 0;
    std::size_t n_not_minimal = 0;
    std::size_t n_above_one = 0;
    double max_formula_dev = 0;
    double tolerance = 1e-12;
    bool pass = true;
  };
  struct MonteCarlo {
    std::size_t realizations = 0;
    std::size_t bins = 0;
    std::uint64_t seed = 0;
    double min_coverage = 1.0;
    double required = 0.99;
    bool pass = true;
  };

  double rel_tol = 1e-9;
  std::vector<Comparison> comparisons;
  Uncertainty uncertainty;
  Equilibrium equilibrium;
  Optimality optimality;
  std::optional<MonteCarlo> monte_carlo;
  oracle::LoopDiagnostic loop;
  std::vector<std::string> warnings;
  bool overall = true;
};

namespace detail {

inline const char* feedback_label(const FeedbackSetting& fb) {
  switch (fb.mode) {
    case FeedbackSetting::Mode::off:
      return "off";
    case FeedbackSetting::Mode::fixed:
      return "fixed";
    case FeedbackSetting::Mode::optimal_per_omega:
      return "opt";
    case FeedbackSetting::Mode::optimal_at:
      return "opt-at";
  }
  return "off";
}

}  // namespace detail

/// Closed forms against the transfer-matrix oracle for both loop closures,
/// plus the uncertainty, equilibrium, optimality, Monte Carlo and loop
/// checks. Grid defaults: thetas {0, pi/4, pi/2}, T {4, 70, 300} K,
/// lambda {off, opt}.
inline VerificationReport cmd_verify(const RunConfig& rc) {
  VerificationReport rep;
  rep.rel_tol = rc.rel_tol;
  const auto omegas = rc.grid.points();
  const auto thetas = rc.thetas.value_or(
      std::vector<double>{0.0, constants::pi / 4.0, constants::pi / 2.0});
  if (thetas.empty()) throw usage_error("thetas: the list is empty");
  const auto temps = detail::resolve_temperatures(rc, {4.0, 70.0, 300.0});
  const auto params = detail::params_for(rc, temps, rep.warnings);
  const FeedbackSetting fb = rc.feedback.value_or(FeedbackSetting::optimal());
  std::vector<FeedbackSetting> settings{FeedbackSetting::none()};
  if (fb.mode != FeedbackSetting::Mode::off) settings.push_back(fb);

  const std::size_t per_omega = thetas.size() * temps.size();
  const std::size_t n_rows = omegas.size() * per_omega;
  for (auto closure : {LoopClosure::open_record, LoopClosure::self_consistent}) {
    for (const auto& setting : settings) {
      std::vector<SpectraRow> closed(n_rows), reference(n_rows);
      parallel_for(omegas.size(), [&](std::size_t i) {
        std::size_t slot = i * per_omega;
        for (double th : thetas) {
          for (const auto& dp : params) {
            const double lam = setting.lambda_at(omegas[i], dp);
            closed[slot] = evaluate_row(omegas[i], th, lam, dp, closure);
            reference[slot] = oracle::evaluate_row(omegas[i], th, lam, dp, closure);
            ++slot;
          }
        }
      });
      rep.comparisons.push_back(
          {closure, detail::feedback_label(setting), oracle::compare(closed, reference, rc.rel_tol)});

      if (closure == rc.closure) {
        auto& u = rep.uncertainty;
        for (const auto& r : closed) {
          if (r.product_46 < u.min_p46) u.min_p46 = r.product_46, u.omega_p46 = r.omega;
          if (r.product_47 < u.min_p47) u.min_p47 = r.product_47, u.omega_p47 = r.omega;
        }
      }
    }
  }
  {
    auto& u = rep.uncertainty;
    u.pass = u.min_p46 >= u.threshold && u.min_p47 >= u.threshold;
  }

  auto& eq = rep.equilibrium;
  for (const auto& dp : params) {
    if (!dp.config.equal_temperatures()) {
      eq.applicable = false;
      continue;
    }
    const double nyquist = s_thermal_current(dp);
    for (double w : omegas) {
      const double r = std::abs(thermal_current_psd_assembled(w, dp) / nyquist - 1.0);
      if (!(r <= eq.max_residual)) eq.max_residual = r, eq.omega = w;
    }
  }
  eq.pass = !(eq.max_residual > eq.tolerance);

  auto& opt = rep.optimality;
  for (const auto& dp : params) {
    for (double w : omegas) {
      const double lo = lambda_opt(w, dp);
      const double s = s_x0_out_fb(w, lo, dp);
      const cplx g = gain(w, dp);
      const double num = dp.alpha_in * g.real();
      const double deficit =
          num * num / (dp.alpha_in * dp.alpha_in * std::norm(g) + current_noise_psd(w, dp));
      ++opt.n_checked;
      const double slack = 4.0 * std::numeric_limits<double>::epsilon();
      if (s > s_x0_out_fb(w, 0.9 * lo, dp) + slack || s > s_x0_out_fb(w, 1.1 * lo, dp) + slack) {
        ++opt.n_not_minimal;
      }
      if (s > 1.0 + 1e-12 || (g.real() != 0.0 && !(deficit > 0.0))) ++opt.n_above_one;
      opt.max_formula_dev = std::max(opt.max_formula_dev, std::abs(s - (1.0 - deficit)));
    }
  }
  opt.pass = opt.n_not_minimal == 0 && opt.n_above_one == 0 && opt.max_formula_dev <= opt.tolerance;

  if (rc.mc_realizations > 0) {
    VerificationReport::MonteCarlo mc;
    mc.realizations = rc.mc_realizations;
    mc.bins = rc.mc_bins;
    mc.seed = rc.seed;
    const double wm = rc.physical.omega_m;
    const auto band = FrequencyGrid{0.5 * wm, 1.5 * wm, rc.mc_bins, Spacing::linear}.points();
    for (const auto& dp : params) {
      const auto bins =
          oracle::monte_carlo(dp, fb, 0.0, band, rc.mc_realizations, rc.seed, rc.closure);
      std::size_t inside = 0;
      for (const auto& b : bins) {
        const double exact = s_x0_out_fb(b.omega, b.lambda, dp, rc.closure);
        if (std::abs(b.mean[oracle::X0_out] - exact) <= 3.0 * b.stderr_[oracle::X0_out]) ++inside;
      }
      mc.min_coverage = std::min(mc.min_coverage, double(inside) / double(bins.size()));
    }
    mc.pass = mc.min_coverage >= mc.required;
    rep.monte_carlo = mc;
  }

  std::vector<oracle::TransferMatrix> tms;
  for (const auto& dp : params) {
    for (double w : omegas) {
      tms.push_back(oracle::assemble(w, fb.lambda_at(w, dp), 0.0, dp, LoopClosure::self_consistent));
    }
  }
  rep.loop = oracle::summarize_loop(tms);
  if (rep.loop.warn) {
    rep.warnings.push_back("closed-loop return difference nearly vanishes at omega = " +
                           format_double(rep.loop.omega_at_min) + " rad/s");
  }

  rep.overall = rep.uncertainty.pass && rep.equilibrium.pass && rep.optimality.pass &&
                (!rep.monte_carlo || rep.monte_carlo->pass);
  for (const auto& c : rep.comparisons) rep.overall = rep.overall && c.report.pass;
  return rep;
}

inline nlohmann::ordered_json to_json(const VerificationReport& rep) {
  using json = nlohmann::ordered_json;
  json j;
  json comps = json::array();
  for (const auto& c : rep.comparisons) {
    json fields = json::object();
    for (const auto& f : c.report.fields) {
      fields[f.field] = {{"max_rel_dev", f.max_rel_dev},
                         {"omega", f.omega},
                         {"theta", f.theta},
                         {"lambda", f.lambda},
                         {"pass", f.pass}};
    }
    json entry = {{"closure", to_string(c.closure)},
                  {"lambda", c.lambda},
                  {"rows", c.report.n_rows},
                  {"fields", fields},
                  {"pass", c.report.pass}};
    if (const auto* f = c.report.first_failure()) entry["first_failure"] = f->field;
    comps.push_back(entry);
  }
  j["oracle_comparison"] = {{"rel_tol", rep.rel_tol}, {"runs", comps}};
  const auto& u = rep.uncertainty;
  j["uncertainty_scan"] = {{"min_p46", u.min_p46}, {"omega_p46", u.omega_p46},
                           {"min_p47", u.min_p47}, {"omega_p47", u.omega_p47},
                           {"threshold", u.threshold}, {"pass", u.pass}};
  const auto& e = rep.equilibrium;
  j["equilibrium_residual"] = {{"applicable", e.applicable}, {"max_residual", e.max_residual},
                               {"omega", e.omega}, {"tolerance", e.tolerance}, {"pass", e.pass}};
  const auto& o = rep.optimality;
  j["optimality_scan"] = {{"checked", o.n_checked}, {"not_minimal", o.n_not_minimal},
                          {"not_below_one", o.n_above_one}, {"max_formula_dev", o.max_formula_dev},
                          {"tolerance", o.tolerance}, {"pass", o.pass}};
  if (rep.monte_carlo) {
    const auto& m = *rep.monte_carlo;
    j["monte_carlo"] = {{"realizations", m.realizations}, {"bins", m.bins}, {"seed", m.seed},
                        {"min_coverage", m.min_coverage}, {"required", m.required},
                        {"pass", m.pass}};
  } else {
    j["monte_carlo"] = nullptr;
  }
  j["loop_diagnostic"] = {{"min_abs_return_difference", rep.loop.min_abs},
                          {"median_abs_return_difference", rep.loop.median_abs},
                          {"omega_at_min", rep.loop.omega_at_min},
                          {"warn", rep.loop.warn}};
  j["warnings"] = rep.warnings;
  j["overall"] = rep.overall;
  return j;
}

}  // namespace optonoise
