#pragma once

// Region indications as text: normalized points are quantized to integers in
// [0, 100] and written as "[x y] [x y] ...", which is then split into atomic
// point tokens for the query transformer.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/mask.hpp"
#include "regionvlm/rng.hpp"

namespace regionvlm {

inline constexpr int kQuantLevels = 100;

class Point2D {
 public:
  Point2D(double x, double y) : x_(x), y_(y) {
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
      throw DomainError("point coordinates must lie in [0,1]");
  }
  double x() const { return x_; }
  double y() const { return y_; }
  bool operator==(const Point2D&) const = default;

 private:
  double x_;
  double y_;
};

struct QuantizedPoint {
  int xq = 0;
  int yq = 0;
  bool operator==(const QuantizedPoint&) const = default;
};

// An ordered trajectory. Empty means "the whole image".
class Scribble {
 public:
  Scribble() = default;
  explicit Scribble(std::vector<Point2D> points) : points_(std::move(points)) {}
  Scribble(std::vector<Point2D> points, std::vector<double> timestamps)
      : points_(std::move(points)), timestamps_(std::move(timestamps)) {
    if (timestamps_->size() != points_.size())
      throw DomainError("scribble timestamps must match points in length");
    if (!std::is_sorted(timestamps_->begin(), timestamps_->end()))
      throw DomainError("scribble timestamps must be non-decreasing");
  }

  const std::vector<Point2D>& points() const { return points_; }
  const std::optional<std::vector<double>>& timestamps() const { return timestamps_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Point2D> points_;
  std::optional<std::vector<double>> timestamps_;
};

// Normalized axis-aligned rectangle.
struct Box {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

inline int quantize_coord(double c) {
  if (!(c >= 0.0 && c <= 1.0)) throw DomainError("coordinate must lie in [0,1]");
  // std::round rounds halfway cases away from zero.
  return static_cast<int>(std::round(c * kQuantLevels));
}

inline QuantizedPoint quantize(const Point2D& p) { return {quantize_coord(p.x()), quantize_coord(p.y())}; }

inline std::string encode_points(const std::vector<Point2D>& points) {
  std::string out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) out += ' ';
    const QuantizedPoint q = quantize(points[i]);
    out += '[';
    out += std::to_string(q.xq);
    out += ' ';
    out += std::to_string(q.yq);
    out += ']';
  }
  return out;
}

namespace detail {

class PointStringReader {
 public:
  explicit PointStringReader(std::string_view s) : s_(s) {}

  bool done() const { return pos_ == s_.size(); }
  std::size_t pos() const { return pos_; }

  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c)
      throw ParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  int integer() {
    const std::size_t start = pos_;
    int value = 0;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9' && pos_ - start < 4) {
      value = value * 10 + (s_[pos_] - '0');
      ++pos_;
    }
    const std::size_t len = pos_ - start;
    if (len == 0) throw ParseError("expected coordinate digits", start);
    if (len > 3) throw ParseError("coordinate has more than 3 digits", start);
    if (len > 1 && s_[start] == '0') throw ParseError("coordinate has a leading zero", start);
    if (value > kQuantLevels) throw ParseError("coordinate out of range", start);
    return value;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<QuantizedPoint> decode_point_string(std::string_view s) {
  std::vector<QuantizedPoint> out;
  detail::PointStringReader rd(s);
  while (!rd.done()) {
    if (!out.empty()) rd.expect(' ');
    rd.expect('[');
    const int x = rd.integer();
    rd.expect(' ');
    const int y = rd.integer();
    rd.expect(']');
    out.push_back({x, y});
  }
  return out;
}

// Token ids for the point grammar. The first four ids are the specials shared
// with the caption vocabulary, which extends this table.
class PointTokenVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kOpen = 4;
  static constexpr int kClose = 5;
  static constexpr int kFirstLiteral = 6;
  static constexpr int kSize = kFirstLiteral + kQuantLevels + 1;

  static constexpr int literal_id(int value) { return kFirstLiteral + value; }
  static constexpr bool is_point_token(int id) { return id >= kOpen && id < kSize; }

  static std::string token_text(int id) {
    switch (id) {
      case kPad: return "<pad>";
      case kBos: return "<bos>";
      case kEos: return "<eos>";
      case kUnk: return "<unk>";
      case kOpen: return "[";
      case kClose: return "]";
      default:
        if (id >= kFirstLiteral && id < kSize) return std::to_string(id - kFirstLiteral);
        throw DomainError("not a point-vocabulary id: " + std::to_string(id));
    }
  }

  static std::optional<int> lookup(std::string_view text) {
    static const std::array<std::string_view, 4> specials = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (int i = 0; i < 4; ++i)
      if (text == specials[i]) return i;
    if (text == "[") return kOpen;
    if (text == "]") return kClose;
    if (text.empty() || text.size() > 3) return std::nullopt;
    if (text.size() > 1 && text[0] == '0') return std::nullopt;
    int v = 0;
    for (char c : text) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + (c - '0');
    }
    if (v > kQuantLevels) return std::nullopt;
    return literal_id(v);
  }
};

inline std::vector<int> tokenize_points(std::string_view s) {
  std::vector<int> ids;
  for (const QuantizedPoint& q : decode_point_string(s)) {
    ids.push_back(PointTokenVocab::kOpen);
    ids.push_back(PointTokenVocab::literal_id(q.xq));
    ids.push_back(PointTokenVocab::literal_id(q.yq));
    ids.push_back(PointTokenVocab::kClose);
  }
  return ids;
}

inline std::string detokenize_points(const std::vector<int>& ids) {
  std::string out;
  int prev = -1;
  for (int id : ids) {
    if (!PointTokenVocab::is_point_token(id)) throw DomainError("not a point token: " + std::to_string(id));
    const bool literal = id >= PointTokenVocab::kFirstLiteral;
    if (prev >= 0 && (id == PointTokenVocab::kOpen || (literal && prev >= PointTokenVocab::kFirstLiteral)))
      out += ' ';
    out += PointTokenVocab::token_text(id);
    prev = id;
  }
  return out;
}

inline std::vector<Point2D> sample_points(const Scribble& scribble, int k, Rng& rng) {
  if (scribble.empty()) throw DomainError("cannot sample points from an empty scribble");
  if (k < 1) throw DomainError("K must be positive");
  const std::size_t n = scribble.size();
  const auto count = static_cast<std::size_t>(k);
  std::vector<std::size_t> picked;
  if (n >= count) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    picked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    for (std::size_t i = 0; i < count; ++i) picked.push_back(uniform_index(rng, n));
  }
  std::sort(picked.begin(), picked.end());
  std::vector<Point2D> out;
  out.reserve(count);
  for (std::size_t i : picked) out.push_back(scribble.points()[i]);
  return out;
}

inline Point2D cell_center(std::size_t flat, int rows, int cols) {
  const auto r = static_cast<int>(flat / static_cast<std::size_t>(cols));
  const auto c = static_cast<int>(flat % static_cast<std::size_t>(cols));
  return {(c + 0.5) / cols, (r + 0.5) / rows};
}

inline std::vector<Point2D> sample_points_in_mask(const GridMask& mask, int k, Rng& rng) {
  if (k < 1) throw DomainError("K must be positive");
  const auto cells = mask.set_cells();
  if (cells.empty()) throw DomainError("cannot sample points in an empty mask");
  std::vector<Point2D> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(cell_center(cells[uniform_index(rng, cells.size())], mask.rows(), mask.cols()));
  return out;
}

inline std::vector<Point2D> sample_points_in_bbox(const Box& box, int k, Rng& rng) {
  if (k < 1) throw DomainError("K must be positive");
  if (!(box.x0 >= 0 && box.y0 >= 0 && box.x1 <= 1 && box.y1 <= 1))
    throw DomainError("box must lie within the unit square");
  if (!(box.x1 > box.x0 && box.y1 > box.y0)) throw DomainError("box has zero area");
  std::vector<Point2D> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double x = uniform(rng, box.x0, box.x1);
    const double y = uniform(rng, box.y0, box.y1);
    out.emplace_back(x, y);
  }
  return out;
}

}  // namespace regionvlm
