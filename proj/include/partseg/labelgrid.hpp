#pragma once

#include <cstdint>
#include <vector>

#include "partseg/common.hpp"

namespace partseg {

// Integer class-id grid; 0 means background / uncategory.
struct LabelGrid {
  int h = 0, w = 0;
  std::vector<std::int32_t> v;

  LabelGrid() = default;
  LabelGrid(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

  std::int32_t& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
  std::int32_t at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  bool same_shape(const LabelGrid& o) const { return h == o.h && w == o.w; }
};

}  // namespace partseg
