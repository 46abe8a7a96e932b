#pragma once

#include <stdexcept>

namespace stpt {

// Shape or configuration disagreement (CLI exit code 3).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data files (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stpt
