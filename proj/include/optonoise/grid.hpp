#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "optonoise/errors.hpp"

namespace optonoise {

enum class Spacing { linear, log };

struct FrequencyGrid {
  double omega_min = 1e4;  // rad/s
  double omega_max = 1e8;  // rad/s
  std::size_t n_points = 2000;
  Spacing spacing = Spacing::log;

  void validate() const {
    if (!(std::isfinite(omega_min) && omega_min > 0.0)) {
      throw usage_error("grid: omega_min must be positive (omega = 0 is excluded)");
    }
    if (!(std::isfinite(omega_max) && omega_max > omega_min)) {
      throw usage_error("grid: omega_max must exceed omega_min");
    }
    if (n_points < 2) throw usage_error("grid: n_points must be at least 2");
  }

  /// Grid points, ascending, with exact endpoints.
  std::vector<double> points() const {
    validate();
    std::vector<double> out(n_points);
    const double last = static_cast<double>(n_points - 1);
    if (spacing == Spacing::log) {
      const double lo = std::log(omega_min);
      const double hi = std::log(omega_max);
      for (std::size_t i = 0; i < n_points; ++i) {
        out[i] = std::exp(lo + (hi - lo) * (static_cast<double>(i) / last));
      }
    } else {
      for (std::size_t i = 0; i < n_points; ++i) {
        out[i] = omega_min + (omega_max - omega_min) * (static_cast<double>(i) / last);
      }
    }
    out.front() = omega_min;
    out.back() = omega_max;
    return out;
  }
};

inline const char* to_string(Spacing s) { return s == Spacing::log ? "log" : "linear"; }

}  // namespace optonoise
