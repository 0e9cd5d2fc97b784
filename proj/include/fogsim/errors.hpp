#pragma once

#include <stdexcept>
#include <string>

namespace fogsim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateFeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedScoreError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateBoundaryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fogsim
