#pragma once

#include <stdexcept>
#include <string>

namespace stimpute {

// Malformed or inconsistent input data (files, shapes, node sets).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Dimension disagreement between separately supplied inputs (model vs data,
// graph vs matrix). Split out so tools can report the category precisely.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

// Non-finite values or diverging computations.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stimpute
