// Scribble -> K sampled points -> "[x y] ..." -> point-token ids.
#include <iostream>

#include "regionvlm/scribble_codec.hpp"

int main() {
  using namespace regionvlm;
  const std::vector<Point2D> stroke = {{0.10, 0.20}, {0.15, 0.24}, {0.21, 0.30}, {0.28, 0.33},
                                       {0.33, 0.41}, {0.40, 0.45}, {0.46, 0.52}, {0.52, 0.55}};
  Rng rng(kDefaultSeed);
  const auto points = sample_points(Scribble(stroke), 4, rng);
  const std::string text = encode_points(points);
  std::cout << text << "\n";
  for (int id : tokenize_points(text)) std::cout << PointTokenVocab::token_text(id) << "=" << id << " ";
  std::cout << "\n";
  for (const auto& q : decode_point_string(text)) std::cout << "(" << q.xq << ", " << q.yq << ") ";
  std::cout << "\n";
}
