#include "glyphspot/tensor.hpp"

namespace glyphspot {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void throw_shape_error(const std::string& op, const std::vector<int>& a, const std::vector<int>& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

}  // namespace glyphspot
