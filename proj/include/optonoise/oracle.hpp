#pragma once

// Independent verification path. Builds the coupled linear equations of the
// cavity, mirror, piezoelectric circuit and feedback modulator at one
// frequency, eliminates the internal variables by a dense solve and
// propagates the input cross-spectral density through the resulting
// transfer matrix. Nothing here calls the closed forms in spectra.hpp; only
// the parameter derivation and the row/enum types are shared.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "optonoise/model.hpp"
#include "optonoise/parallel.hpp"
#include "optonoise/spectra.hpp"

namespace optonoise::oracle {

// Channel ordering. Every matrix in this namespace is indexed by it.
enum Input : int { X0_in = 0, Xp_in, F_T, I_in, n_inputs };

enum Output : int {
  X0_out = 0,    // amplitude quadrature of the reflected field
  Xp_out,        // phase quadrature of the reflected field
  Xtheta_out,    // reflected quadrature at the assembled theta
  I_out,         // measured current
  Psi,           // detuning, feedback included
  X0_intra,
  Xp_intra,
  Xtheta_intra,
  Psi_open,      // detuning without feedback
  I_thermal,     // thermal part of the open-loop current
  n_outputs
};

inline constexpr std::array<const char*, n_outputs> output_names = {
    "X0_out", "Xp_out", "Xtheta_out", "I_out", "Psi",
    "X0_intra", "Xp_intra", "Xtheta_intra", "Psi_open", "I_thermal"};

using HMatrix = Eigen::Matrix<cplx, n_outputs, n_inputs>;
using CsdMatrix = Eigen::Matrix<cplx, n_inputs, n_inputs>;
using OutputCsd = Eigen::Matrix<cplx, n_outputs, n_outputs>;

struct TransferMatrix {
  double omega = 0;
  double theta = 0;
  double lambda = 0;
  LoopClosure closure = LoopClosure::open_record;
  HMatrix H = HMatrix::Zero();
  // det(closed-loop system) / det(open-loop system)
  cplx loop_factor{1.0, 0.0};
};

struct InputCSD {
  double omega = 0;
  CsdMatrix S = CsdMatrix::Zero();

  /// Coherent vacuum on both quadratures plus the mechanical Langevin force
  /// and the Nyquist current of the line.
  static InputCSD standard(double omega, const DerivedParams& dp) {
    const auto& c = dp.config;
    InputCSD in;
    in.omega = omega;
    in.S(X0_in, X0_in) = 1.0;
    in.S(Xp_in, Xp_in) = 1.0;
    in.S(X0_in, Xp_in) = I;   // <X0(w) Xp(-w)> from the quadrature phase e^{i(theta'-theta)}
    in.S(Xp_in, X0_in) = -I;
    in.S(F_T, F_T) = 2.0 * c.m * dp.gamma_m * constants::k_B * c.mechanical_temperature();
    in.S(I_in, I_in) = constants::k_B * c.electrical_temperature() / (2.0 * c.R);
    return in;
  }

  bool hermitian(double tol = 1e-12) const {
    const double scale = std::max(1e-300, S.cwiseAbs().maxCoeff());
    return (S - S.adjoint()).cwiseAbs().maxCoeff() <= tol * scale;
  }
};

namespace detail {

inline constexpr int n_unknowns = 7;
using System = Eigen::Matrix<cplx, n_unknowns, n_unknowns>;
using Rhs = Eigen::Matrix<cplx, n_unknowns, n_inputs>;

// Internal unknowns.
enum Unknown : int { uX0 = 0, uXp, ux, uQ, uI, uV, uXfed };

struct Plant {
  System A = System::Zero();
  Rhs B = Rhs::Zero();
};

// Linearized equations at zero steady-state detuning:
//   cavity     (gamma - i w) X0 = sqrt(2 gamma) Xfed
//              (gamma - i w) Xp = (2 alpha / tau) dPsi + sqrt(2 gamma) Xp_in,  dPsi = 2 k0 x
//   mirror     m (w_m^2 - w^2 - i w gamma_m) x = (2 hbar k0 alpha / tau) X0 + zeta Q + F_T
//   circuit    I = -i w Q,  V = R (I_in - I_out),  V = Z0 I - zeta x
//   modulator  Xfed = X0_in (open loop)
// The line current leaves through the input-output relation I_out = I - I_in,
// which is applied after the solve like the field relation X_out = sqrt(2 gamma) X - X_in;
// keeping I_out out of the unknowns avoids recovering the small branch
// current as a difference of two nearly opposite line currents.
inline Plant open_loop(double omega, const DerivedParams& dp) {
  const auto& c = dp.config;
  const double a = dp.alpha_real();
  const double root = std::sqrt(2.0 * c.gamma);
  const cplx cav = c.gamma - I * omega;
  const cplx inv_mech = c.m * (c.omega_m * c.omega_m - omega * omega - I * omega * dp.gamma_m);
  const cplx z0 = I * (1.0 / (dp.C * omega) - dp.L * omega);

  Plant p;
  auto& A = p.A;
  auto& B = p.B;
  A(0, uX0) = cav;
  A(0, uXfed) = -root;

  A(1, uXp) = cav;
  A(1, ux) = -(2.0 * a / c.tau) * 2.0 * dp.k0;
  B(1, Xp_in) = root;

  A(2, ux) = inv_mech;
  A(2, uX0) = -2.0 * constants::hbar * dp.k0 * a / c.tau;
  A(2, uQ) = -dp.zeta;
  B(2, F_T) = 1.0;

  A(3, uI) = 1.0;
  A(3, uQ) = I * omega;

  A(4, uV) = 1.0;
  A(4, uI) = c.R;
  B(4, I_in) = 2.0 * c.R;

  A(5, uV) = 1.0;
  A(5, uI) = -z0;
  A(5, ux) = dp.zeta;

  A(6, uXfed) = 1.0;
  B(6, X0_in) = 1.0;
  return p;
}

inline double nearest_pow2(double v) { return std::exp2(std::round(std::log2(v))); }

// Entries span about forty decades, so rows and columns are balanced by powers of two
// (Ruiz) and the LU solution is polished by iterative refinement.
inline Rhs solve(const Plant& p, double omega) {
  Eigen::Matrix<double, n_unknowns, 1> r = Eigen::Matrix<double, n_unknowns, 1>::Ones();
  Eigen::Matrix<double, n_unknowns, 1> c = r;
  System M = p.A;
  for (int sweep = 0; sweep < 30; ++sweep) {
    for (int i = 0; i < n_unknowns; ++i) {
      const double m = M.row(i).cwiseAbs().maxCoeff();
      if (m == 0.0) continue;
      const double f = nearest_pow2(1.0 / std::sqrt(m));
      M.row(i) *= f;
      r(i) *= f;
    }
    for (int j = 0; j < n_unknowns; ++j) {
      const double m = M.col(j).cwiseAbs().maxCoeff();
      if (m == 0.0) continue;
      const double f = nearest_pow2(1.0 / std::sqrt(m));
      M.col(j) *= f;
      c(j) *= f;
    }
  }
  Eigen::PartialPivLU<System> lu(M);
  const cplx d = lu.determinant();
  if (d == 0.0 || !std::isfinite(std::abs(d))) {
    std::ostringstream os;
    os << "oracle: singular system at omega = " << omega << " rad/s (rcond " << lu.rcond() << ")";
    throw loop_singularity(os.str());
  }
  const Rhs rhs = r.asDiagonal() * p.B;
  Rhs y = lu.solve(rhs);
  for (int it = 0; it < 3; ++it) y += lu.solve(rhs - M * y);
  Rhs u = c.asDiagonal() * y;
  if (!u.allFinite()) {
    std::ostringstream os;
    os << "oracle: non-finite solution at omega = " << omega << " rad/s";
    throw loop_singularity(os.str());
  }
  return u;
}

}  // namespace detail

/// Transfer matrix from the four noise inputs to the output channels.
inline TransferMatrix assemble(double omega, double lambda, double theta, const DerivedParams& dp,
                               LoopClosure closure = LoopClosure::open_record) {
  using namespace detail;
  optonoise::detail::require_nonzero(omega, "oracle::assemble");
  require_qnd(dp);
  if (!std::isfinite(lambda)) throw std::invalid_argument("oracle::assemble: lambda must be finite");

  const auto& c = dp.config;
  const double root = std::sqrt(2.0 * c.gamma);

  // Open plant: X0_in enters only through the modulator row, so its column of
  // the solution is the plant response to a unit fed-back amplitude.
  const Rhs u0 = solve(open_loop(omega, dp), omega);
  const Eigen::Matrix<cplx, n_unknowns, 1> per_fed = u0.col(X0_in);
  Rhs undriven = u0;
  undriven.col(X0_in).setZero();
  Eigen::Matrix<cplx, 1, n_inputs> i_in = Eigen::Matrix<cplx, 1, n_inputs>::Zero();
  i_in(I_in) = 1.0;
  const Eigen::Matrix<cplx, 1, n_inputs> record = u0.row(uI) - i_in;

  // Close the loop by eliminating Xfed (Schur complement on the modulator row):
  //   open_record      Xfed = X0_in - 2 lambda record
  //   self_consistent  Xfed = X0_in - 2 lambda Iout,  Iout = per_fed(Iout) Xfed + undriven(Iout)
  // The return difference is det(closed)/det(open) by the determinant lemma.
  Eigen::Matrix<cplx, 1, n_inputs> fed = Eigen::Matrix<cplx, 1, n_inputs>::Zero();
  fed(X0_in) = 1.0;
  cplx loop{1.0, 0.0};
  if (closure == LoopClosure::open_record) {
    fed -= 2.0 * lambda * record;
  } else {
    loop = 1.0 + 2.0 * lambda * per_fed(uI);
    if (std::abs(loop) < 1e-12) {
      std::ostringstream os;
      os << "oracle: closed loop singular at omega = " << omega << " rad/s (|det ratio| = "
         << std::abs(loop) << ")";
      throw loop_singularity(os.str());
    }
    fed -= 2.0 * lambda * (undriven.row(uI) - i_in);
    fed /= loop;
  }
  const Rhs u = undriven + per_fed * fed;

  TransferMatrix tm;
  tm.omega = omega;
  tm.theta = theta;
  tm.lambda = lambda;
  tm.closure = closure;
  tm.loop_factor = loop;

  Eigen::Matrix<cplx, 1, n_inputs> xp_in = Eigen::Matrix<cplx, 1, n_inputs>::Zero();
  xp_in(Xp_in) = 1.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);

  auto& H = tm.H;
  H.row(X0_intra) = u.row(uX0);
  H.row(Xp_intra) = u.row(uXp);
  H.row(Xtheta_intra) = cs * u.row(uX0) + sn * u.row(uXp);
  H.row(X0_out) = root * u.row(uX0) - u.row(uXfed);
  H.row(Xp_out) = root * u.row(uXp) - xp_in;
  H.row(Xtheta_out) = cs * H.row(X0_out) + sn * H.row(Xp_out);
  H.row(I_out) = closure == LoopClosure::open_record ? record : u.row(uI) - i_in;
  H.row(Psi) = 2.0 * dp.k0 * u.row(ux);
  H.row(Psi_open) = 2.0 * dp.k0 * u0.row(ux);
  H.row(I_thermal) = record;
  H(I_thermal, X0_in) = 0.0;
  return tm;
}

/// Full output cross-spectral density H S H^dagger.
inline OutputCsd output_csd(const TransferMatrix& tm, const InputCSD& in) {
  if (!in.hermitian()) throw std::invalid_argument("oracle: input CSD is not Hermitian");
  return tm.H * in.S * tm.H.adjoint();
}

/// Oracle-tagged spectra row. Conditioned spectrum via the Schur complement.
inline SpectraRow propagate(const TransferMatrix& tm, const InputCSD& in) {
  const OutputCsd S = output_csd(tm, in);
  SpectraRow row;
  row.source = RowSource::oracle;
  row.omega = tm.omega;
  row.theta = tm.theta;
  row.lambda_used = tm.lambda;
  row.S_psi = S(Psi, Psi).real();
  row.S_X_intra = S(Xtheta_intra, Xtheta_intra).real();
  row.S_X_out = S(Xtheta_out, Xtheta_out).real();
  row.S_X0_out = S(X0_out, X0_out).real();
  row.S_Iout = S(I_out, I_out).real();
  row.C_x0out_iout = S(X0_out, I_out);
  if (!(row.S_Iout > 0.0)) {
    std::ostringstream os;
    os << "oracle: measured current has zero PSD at omega = " << tm.omega
       << " rad/s; conditioned spectrum undefined";
    throw validity_error(os.str());
  }
  row.S_cond = row.S_X0_out - std::norm(row.C_x0out_iout) / row.S_Iout;
  const double phase = S(Xp_out, Xp_out).real();
  row.product_46 = row.S_X0_out * phase;
  row.product_47 = row.S_cond * phase;

  Eigen::Matrix<cplx, n_inputs, 1> quad = Eigen::Matrix<cplx, n_inputs, 1>::Zero();
  quad(X0_in) = std::cos(tm.theta);
  quad(Xp_in) = std::sin(tm.theta);
  row.C_psi_xin = (tm.H.row(Psi_open) * in.S * quad.conjugate())(0, 0);
  row.C_psi_it = S(Psi_open, I_thermal);
  return row;
}

inline SpectraRow evaluate_row(double omega, double theta, double lambda, const DerivedParams& dp,
                               LoopClosure closure = LoopClosure::open_record) {
  return propagate(assemble(omega, lambda, theta, dp, closure), InputCSD::standard(omega, dp));
}

// --- Monte Carlo ---------------------------------------------------------------

/// Factor S = F F^dagger for a Hermitian positive-semidefinite CSD. The matrix
/// is Jacobi-scaled first so that channels of very different magnitude keep
/// full relative precision; the rank-deficient vacuum block is handled by the
/// eigendecomposition (Xp_in comes out as -i X0_in).
inline CsdMatrix psd_factor(const CsdMatrix& S) {
  if ((S - S.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1e-300, S.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("psd_factor: matrix is not Hermitian");
  }
  Eigen::Matrix<double, n_inputs, 1> scale;
  for (int k = 0; k < n_inputs; ++k) {
    const double d = S(k, k).real();
    if (d < 0.0) throw std::invalid_argument("psd_factor: negative diagonal entry");
    scale(k) = d > 0.0 ? std::sqrt(d) : 0.0;
    if (d == 0.0) {
      for (int j = 0; j < n_inputs; ++j) {
        if (S(k, j) != 0.0) throw std::invalid_argument("psd_factor: matrix is not PSD");
      }
    }
  }
  CsdMatrix unit = CsdMatrix::Zero();
  for (int i = 0; i < n_inputs; ++i) {
    for (int j = 0; j < n_inputs; ++j) {
      if (scale(i) > 0.0 && scale(j) > 0.0) unit(i, j) = S(i, j) / (scale(i) * scale(j));
    }
  }
  Eigen::SelfAdjointEigenSolver<CsdMatrix> eig(unit);
  if (eig.info() != Eigen::Success) throw std::invalid_argument("psd_factor: eigensolver failed");
  const auto& values = eig.eigenvalues();
  if (values.minCoeff() < -1e-12) throw std::invalid_argument("psd_factor: matrix is not PSD");
  CsdMatrix F = eig.eigenvectors();
  for (int k = 0; k < n_inputs; ++k) F.col(k) *= std::sqrt(std::max(0.0, values(k)));
  for (int i = 0; i < n_inputs; ++i) F.row(i) *= scale(i);
  return F;
}

struct MonteCarloBin {
  double omega = 0;
  double lambda = 0;
  std::array<double, n_outputs> mean{};    // sampled |output|^2
  std::array<double, n_outputs> stderr_{};  // standard error of the mean
};

inline std::vector<MonteCarloBin> monte_carlo(const DerivedParams& dp, const FeedbackSetting& fb,
                                              double theta, std::span<const double> grid,
                                              std::size_t n_realizations, std::uint64_t seed,
                                              LoopClosure closure = LoopClosure::open_record) {
  if (n_realizations < 2) throw std::invalid_argument("monte_carlo: need at least 2 realizations");
  std::vector<MonteCarloBin> bins(grid.size());
  parallel_for(grid.size(), [&](std::size_t b) {
    const double omega = grid[b];
    const double lambda = fb.lambda_at(omega, dp);
    const TransferMatrix tm = assemble(omega, lambda, theta, dp, closure);
    const CsdMatrix F = psd_factor(InputCSD::standard(omega, dp).S);
    const HMatrix HF = tm.H * F;

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));

    std::array<double, n_outputs> sum{};
    std::array<double, n_outputs> sum_sq{};
    Eigen::Matrix<cplx, n_inputs, 1> z;
    for (std::size_t r = 0; r < n_realizations; ++r) {
      for (int k = 0; k < n_inputs; ++k) z(k) = cplx{normal(rng), normal(rng)};
      const Eigen::Matrix<cplx, n_outputs, 1> out = HF * z;
      for (int k = 0; k < n_outputs; ++k) {
        const double p = std::norm(out(k));
        sum[k] += p;
        sum_sq[k] += p * p;
      }
    }
    const double n = static_cast<double>(n_realizations);
    MonteCarloBin& bin = bins[b];
    bin.omega = omega;
    bin.lambda = lambda;
    for (int k = 0; k < n_outputs; ++k) {
      const double mean = sum[k] / n;
      const double var = std::max(0.0, (sum_sq[k] - n * mean * mean) / (n - 1.0));
      bin.mean[k] = mean;
      bin.stderr_[k] = std::sqrt(var / n);
    }
  });
  return bins;
}

// --- comparison ----------------------------------------------------------------

struct FieldDeviation {
  std::string field;
  double max_rel_dev = 0;
  double omega = 0;  // where the maximum occurs
  double theta = 0;
  double lambda = 0;
  bool pass = true;
};

struct ComparisonReport {
  double rel_tol = 0;
  std::size_t n_rows = 0;
  std::vector<FieldDeviation> fields;
  bool pass = true;

  /// First failing field, or nullptr.
  const FieldDeviation* first_failure() const {
    for (const auto& f : fields) {
      if (!f.pass) return &f;
    }
    return nullptr;
  }
};

struct RowField {
  const char* name;
  cplx (*get)(const SpectraRow&);
};

inline constexpr std::array<RowField, 12> row_fields = {{
    {"S_psi", [](const SpectraRow& r) { return cplx{r.S_psi}; }},
    {"S_X_intra", [](const SpectraRow& r) { return cplx{r.S_X_intra}; }},
    {"S_X_out", [](const SpectraRow& r) { return cplx{r.S_X_out}; }},
    {"S_X0_out", [](const SpectraRow& r) { return cplx{r.S_X0_out}; }},
    {"S_Iout", [](const SpectraRow& r) { return cplx{r.S_Iout}; }},
    {"S_cond", [](const SpectraRow& r) { return cplx{r.S_cond}; }},
    {"product_46", [](const SpectraRow& r) { return cplx{r.product_46}; }},
    {"product_47", [](const SpectraRow& r) { return cplx{r.product_47}; }},
    {"C_psi_xin", [](const SpectraRow& r) { return r.C_psi_xin; }},
    {"C_psi_it", [](const SpectraRow& r) { return r.C_psi_it; }},
    {"C_x0out_iout", [](const SpectraRow& r) { return r.C_x0out_iout; }},
    {"lambda_used", [](const SpectraRow& r) { return cplx{r.lambda_used}; }},
}};

inline double relative_deviation(cplx value, cplx reference) {
  return std::abs(value - reference) / std::max(std::abs(reference), 1e-30);
}

/// Per-field maximum relative deviation of closed-form rows against oracle rows.
inline ComparisonReport compare(std::span<const SpectraRow> closed_form,
                                std::span<const SpectraRow> reference, double rel_tol) {
  if (closed_form.size() != reference.size()) {
    throw std::invalid_argument("compare: row counts differ");
  }
  ComparisonReport report;
  report.rel_tol = rel_tol;
  report.n_rows = closed_form.size();
  for (const auto& field : row_fields) report.fields.push_back({field.name});

  for (std::size_t i = 0; i < closed_form.size(); ++i) {
    const auto& a = closed_form[i];
    const auto& b = reference[i];
    if (a.omega != b.omega || a.theta != b.theta) {
      std::ostringstream os;
      os << "compare: grids differ at row " << i << " (omega " << a.omega << " vs " << b.omega
         << ", theta " << a.theta << " vs " << b.theta << ")";
      throw std::invalid_argument(os.str());
    }
    for (std::size_t k = 0; k < row_fields.size(); ++k) {
      const double dev = relative_deviation(row_fields[k].get(a), row_fields[k].get(b));
      auto& fd = report.fields[k];
      if (!(dev <= fd.max_rel_dev)) {  // NaN propagates as a failure
        fd.max_rel_dev = std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
        fd.omega = a.omega;
        fd.theta = a.theta;
        fd.lambda = a.lambda_used;
      }
    }
  }
  for (auto& fd : report.fields) {
    fd.pass = fd.max_rel_dev <= rel_tol;
    report.pass = report.pass && fd.pass;
  }
  return report;
}

struct LoopDiagnostic {
  double min_abs = 0;
  double median_abs = 0;
  double omega_at_min = 0;
  bool warn = false;  // min below 1e-12 of the median
};

inline LoopDiagnostic summarize_loop(std::span<const TransferMatrix> tms) {
  LoopDiagnostic d;
  if (tms.empty()) return d;
  std::vector<double> mags;
  mags.reserve(tms.size());
  d.min_abs = std::numeric_limits<double>::infinity();
  for (const auto& tm : tms) {
    const double v = std::abs(tm.loop_factor);
    mags.push_back(v);
    if (v < d.min_abs) {
      d.min_abs = v;
      d.omega_at_min = tm.omega;
    }
  }
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  d.median_abs = mags[mags.size() / 2];
  d.warn = d.min_abs < 1e-12 * d.median_abs;
  return d;
}

}  // namespace optonoise::oracle
