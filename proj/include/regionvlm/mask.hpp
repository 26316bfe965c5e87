#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "regionvlm/error.hpp"

namespace regionvlm {

// Binary mask over the patch grid, row-major.
class GridMask {
 public:
  GridMask() = default;
  GridMask(int rows, int cols) : rows_(rows), cols_(cols), cells_(checked_size(rows, cols), 0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return cells_.size(); }

  bool at(int r, int c) const { return cells_[index(r, c)] != 0; }
  void set(int r, int c, bool on = true) { cells_[index(r, c)] = on ? 1 : 0; }
  bool operator[](std::size_t i) const { return cells_[i] != 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }
  bool same_grid(const GridMask& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  // Flat indices of set cells in raster order.
  std::vector<std::size_t> set_cells() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cells_.size(); ++i)
      if (cells_[i]) out.push_back(i);
    return out;
  }

  bool operator==(const GridMask&) const = default;

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw ShapeError("mask grid dims must be positive");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  std::size_t index(int r, int c) const {
    if (r < 0 || r >= rows_ || c < 0 || c >= cols_) throw DomainError("mask cell out of range");
    return static_cast<std::size_t>(r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct MaskProposal {
  std::string image_id;
  GridMask mask;
  std::string provenance;
};

// Alternating run lengths over the raster order, starting with a run of zeros
// (which may be 0).
inline std::vector<std::uint32_t> rle_encode(const GridMask& m) {
  std::vector<std::uint32_t> runs;
  bool current = false;
  std::uint32_t len = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != current) {
      runs.push_back(len);
      current = m[i];
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

inline GridMask rle_decode(const std::vector<std::uint32_t>& runs, int rows, int cols) {
  GridMask m(rows, cols);
  std::size_t pos = 0;
  bool on = false;
  for (std::uint32_t len : runs) {
    if (pos + len > m.size()) throw ParseError("RLE runs exceed grid size", pos);
    for (std::uint32_t k = 0; k < len; ++k, ++pos)
      if (on) m.set(static_cast<int>(pos / cols), static_cast<int>(pos % cols));
    on = !on;
  }
  if (pos != m.size()) throw ParseError("RLE runs do not cover grid", pos);
  return m;
}

// Square structuring element of half-width `radius` (Chebyshev ball).
inline GridMask dilate_mask(const GridMask& m, int radius) {
  if (radius < 0) throw DomainError("dilation radius must be non-negative");
  if (radius == 0) return m;
  GridMask out(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      if (!m.at(r, c)) continue;
      for (int rr = std::max(0, r - radius); rr <= std::min(m.rows() - 1, r + radius); ++rr)
        for (int cc = std::max(0, c - radius); cc <= std::min(m.cols() - 1, c + radius); ++cc)
          out.set(rr, cc);
    }
  return out;
}

// Intersection over union; two empty masks count as a perfect match.
inline double mask_iou(const GridMask& a, const GridMask& b) {
  if (!a.same_grid(b)) throw ShapeError("IoU of masks on different grids");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double compute_miou(const std::vector<GridMask>& predictions, const std::vector<GridMask>& truths) {
  if (predictions.size() != truths.size()) throw ShapeError("mIoU needs equal-length mask lists");
  if (predictions.empty()) throw DomainError("mIoU of zero instances");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) total += mask_iou(predictions[i], truths[i]);
  return total / static_cast<double>(predictions.size());
}

}  // namespace regionvlm
