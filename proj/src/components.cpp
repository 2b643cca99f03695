#include "lesact/components.hpp"

#include <algorithm>
#include <vector>

namespace lesact {

LesionSet connected_components(const Volume& mask) {
  require_binary(mask, "connected_components input");
  const Shape3 s = mask.shape();
  LesionSet out;
  out.shape = s;
  out.spacing = mask.spacing();
  out.labels.assign(static_cast<std::size_t>(s.voxels()), 0);

  std::vector<Index> stack;
  std::int32_t next_id = 0;
  const auto& data = mask.data();
  for (Index seed = 0; seed < s.voxels(); ++seed) {
    if (data[seed] == 0.0f || out.labels[seed] != 0) continue;
    ++next_id;
    std::vector<Index> voxels;
    stack.push_back(seed);
    out.labels[seed] = next_id;
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      voxels.push_back(v);
      const auto [x, y, z] = s.coords(v);
      for (Index dz = -1; dz <= 1; ++dz)
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index nx = x + dx, ny = y + dy, nz = z + dz;
            if (!s.contains(nx, ny, nz)) continue;
            const Index n = s.linear(nx, ny, nz);
            if (data[n] != 0.0f && out.labels[n] == 0) {
              out.labels[n] = next_id;
              stack.push_back(n);
            }
          }
    }
    std::sort(voxels.begin(), voxels.end());
    out.components.push_back(std::move(voxels));
  }
  return out;
}

}  // namespace lesact
