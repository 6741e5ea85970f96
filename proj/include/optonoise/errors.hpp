#pragma once

#include <stdexcept>
#include <string>

namespace optonoise {

// Invalid physical parameters (non-positive mass, Q < 1, ...).
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad command-line usage or malformed run configuration.
class usage_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A request the linearized model cannot answer: nonzero steady-state
// detuning, temperatures outside the classical-bath regime, split bath
// temperatures where equilibrium is required.
class validity_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Frequency outside the domain of a response function (omega = 0).
class frequency_domain_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Closed feedback loop with a vanishing return difference.
class loop_singularity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace optonoise
