#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>

namespace lesact {

using Index = std::ptrdiff_t;

/// Extent of a 3D voxel grid. Linear indices are x-fastest.
struct Shape3 {
  Index x = 1;
  Index y = 1;
  Index z = 1;

  constexpr Index voxels() const { return x * y * z; }
  constexpr Index operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  constexpr Index& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  constexpr Index linear(Index i, Index j, Index k) const { return i + x * (j + y * k); }
  constexpr bool contains(Index i, Index j, Index k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < x && j < y && k < z;
  }
  constexpr std::array<Index, 3> coords(Index linear_index) const {
    return {linear_index % x, (linear_index / x) % y, linear_index / (x * y)};
  }
  constexpr bool divisible_by(Index n) const { return x % n == 0 && y % n == 0 && z % n == 0; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape3& s) {
  return os << '(' << s.x << ',' << s.y << ',' << s.z << ')';
}

}  // namespace lesact
