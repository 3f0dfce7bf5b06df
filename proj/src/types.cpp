#include "gwgrid/types.hpp"

#include <string>

namespace gwgrid {

void ProblemDims::validate() const {
  if (n < 1) throw DimensionError("n must be >= 1, got " + std::to_string(n));
  if (p < 1) throw DimensionError("p must be >= 1, got " + std::to_string(p));
  if (p > n) {
    throw DimensionError("p (" + std::to_string(p) + ") must not exceed n (" +
                         std::to_string(n) +
                         "): each cell system is p x p built from n samples");
  }
  if (m < 1) throw DimensionError("m must be >= 1, got " + std::to_string(m));
  if (t < 1) throw DimensionError("t must be >= 1, got " + std::to_string(t));
}

}  // namespace gwgrid
