#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shooting {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a reverse sweep is asked for the gradient of something that
// never entered the tape as a differentiable leaf.
struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  std::size_t step_index;
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_index(step) {}
};

struct DegenerateEnsembleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace shooting
