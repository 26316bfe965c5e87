#pragma once

// Frozen stand-in for the pretrained image backbone. Each grid cell becomes one
// patch: a color one-hot, a shape one-hot and sinusoidal position features,
// pushed through a fixed seeded orthonormal projection. Nothing here is ever
// trained.

#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "regionvlm/checksum.hpp"
#include "regionvlm/error.hpp"
#include "regionvlm/nn.hpp"
#include "regionvlm/rng.hpp"
#include "regionvlm/synthetic.hpp"

namespace regionvlm {

template <class S>
struct ImageFeatures {
  nn::Mat<S> grid;  // (rows*cols) x d_v, raster order
  int rows = 0;
  int cols = 0;

  int patches() const { return rows * cols; }
};

struct VisualEncoderConfig {
  int d_v = 16;
  std::vector<std::string> colors;
  std::vector<std::string> shapes;
  std::uint64_t seed = 7;
};

class VisualEncoder {
 public:
  static constexpr int kPositionFeatures = 8;

  VisualEncoder() = default;
  explicit VisualEncoder(VisualEncoderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.d_v < 1) throw ConfigError("visual feature width must be positive");
    const int raw = raw_width();
    const int n = std::max(raw, cfg_.d_v);
    Rng rng(cfg_.seed);
    const nn::Mat<double> g = nn::randn<double>(n, n, 1.0, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    projection_ = q.topLeftCorner(raw, cfg_.d_v);
  }

  const VisualEncoderConfig& config() const { return cfg_; }
  int raw_width() const { return static_cast<int>(cfg_.colors.size() + cfg_.shapes.size()) + kPositionFeatures; }
  const nn::Mat<double>& projection() const { return projection_; }

  std::uint64_t checksum() const { return fnv1a_doubles(projection_.data(), static_cast<std::size_t>(projection_.size())); }

  template <class S = float>
  ImageFeatures<S> encode(const SyntheticImage& img) const {
    const int g = img.grid;
    nn::Mat<double> raw = nn::Mat<double>::Zero(g * g, raw_width());
    const int nc = static_cast<int>(cfg_.colors.size());
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        const int row = r * g + c;
        const int k = img.object_at(r, c);
        if (k >= 0) {
          const auto& o = img.objects[static_cast<std::size_t>(k)];
          raw(row, index_of(cfg_.colors, o.color, "color")) = 1.0;
          raw(row, nc + index_of(cfg_.shapes, o.shape, "shape")) = 1.0;
        }
        const double x = (c + 0.5) / g, y = (r + 0.5) / g;
        const double pi = std::numbers::pi;
        const int base = nc + static_cast<int>(cfg_.shapes.size());
        const double pos[kPositionFeatures] = {std::cos(pi * x),     std::sin(pi * x),     std::cos(pi * y),
                                               std::sin(pi * y),     std::cos(2 * pi * x), std::sin(2 * pi * x),
                                               std::cos(2 * pi * y), std::sin(2 * pi * y)};
        for (int i = 0; i < kPositionFeatures; ++i) raw(row, base + i) = pos[i];
      }
    return {(raw * projection_).cast<S>(), g, g};
  }

 private:
  static int index_of(const std::vector<std::string>& inv, const std::string& name, const char* what) {
    for (std::size_t i = 0; i < inv.size(); ++i)
      if (inv[i] == name) return static_cast<int>(i);
    throw DomainError(std::string("unknown ") + what + ": " + name);
  }

  VisualEncoderConfig cfg_;
  nn::Mat<double> projection_;
};

}  // namespace regionvlm
