#pragma once

// Desk-scale stand-in for narrative + web-caption data: G x G grids holding a
// few (color, shape) objects. Region captions are "<color> <shape>", the
// global caption lists every object in raster order joined by "and".

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "regionvlm/error.hpp"
#include "regionvlm/mask.hpp"
#include "regionvlm/narratives.hpp"
#include "regionvlm/rng.hpp"
#include "regionvlm/scribble_codec.hpp"

namespace regionvlm {

struct SyntheticConfig {
  int grid = 6;
  std::vector<std::string> colors = {"red", "green", "blue", "yellow", "purple"};
  std::vector<std::string> shapes = {"circle", "square", "triangle", "star", "cross"};
  int num_images = 2000;
  int min_objects = 2;
  int max_objects = 4;
  int max_extent = 2;  // objects are h x w cell blocks with h, w in [1, max_extent]
  int min_scribble_points = 12;
  int max_scribble_points = 24;
  std::uint64_t seed = 1;

  void validate() const {
    if (grid < 2) throw ConfigError("synthetic grid must be at least 2");
    if (colors.empty() || shapes.empty()) throw ConfigError("synthetic inventories must be non-empty");
    if (min_objects < 1 || max_objects < min_objects) throw ConfigError("bad synthetic object count range");
    if (max_extent < 1 || max_extent > grid) throw ConfigError("bad synthetic object extent");
    if (min_scribble_points < 1 || max_scribble_points < min_scribble_points)
      throw ConfigError("bad synthetic scribble length range");
  }
};

struct SyntheticObject {
  std::string color;
  std::string shape;
  int row = 0, col = 0, h = 1, w = 1;

  bool covers(int r, int c) const { return r >= row && r < row + h && c >= col && c < col + w; }
  std::string caption() const { return color + " " + shape; }
  bool operator==(const SyntheticObject&) const = default;
};

struct SyntheticImage {
  std::string id;
  int grid = 0;
  std::vector<SyntheticObject> objects;  // raster order of top-left cell

  GridMask object_mask(std::size_t k) const {
    GridMask m(grid, grid);
    const auto& o = objects.at(k);
    for (int r = o.row; r < o.row + o.h; ++r)
      for (int c = o.col; c < o.col + o.w; ++c) m.set(r, c);
    return m;
  }

  // Index of the object covering the cell, or -1.
  int object_at(int r, int c) const {
    for (std::size_t k = 0; k < objects.size(); ++k)
      if (objects[k].covers(r, c)) return static_cast<int>(k);
    return -1;
  }

  std::string global_caption() const {
    std::string s;
    for (const auto& o : objects) {
      if (!s.empty()) s += " and ";
      s += o.caption();
    }
    return s;
  }

  bool operator==(const SyntheticImage&) const = default;
};

inline nlohmann::json image_to_json(const SyntheticImage& img) {
  nlohmann::json j{{"id", img.id}, {"grid", img.grid}, {"objects", nlohmann::json::array()}};
  for (const auto& o : img.objects)
    j["objects"].push_back({{"color", o.color}, {"shape", o.shape}, {"row", o.row}, {"col", o.col}, {"h", o.h}, {"w", o.w}});
  return j;
}

inline SyntheticImage image_from_json(const nlohmann::json& j) {
  SyntheticImage img;
  img.id = j.value("id", std::string{});
  img.grid = j.at("grid").get<int>();
  if (img.grid < 1) throw DomainError("image grid must be positive");
  for (const auto& o : j.at("objects")) {
    SyntheticObject so{o.at("color").get<std::string>(), o.at("shape").get<std::string>(), o.at("row").get<int>(),
                       o.at("col").get<int>(), o.value("h", 1), o.value("w", 1)};
    if (so.row < 0 || so.col < 0 || so.h < 1 || so.w < 1 || so.row + so.h > img.grid || so.col + so.w > img.grid)
      throw DomainError("object does not fit in the image grid");
    for (const auto& other : img.objects)
      for (int r = so.row; r < so.row + so.h; ++r)
        for (int c = so.col; c < so.col + so.w; ++c)
          if (other.covers(r, c)) throw DomainError("objects overlap");
    img.objects.push_back(std::move(so));
  }
  return img;
}

// Regional pair k of an image: `image` indexes SyntheticDataset::images.
struct SyntheticPair {
  std::size_t image = 0;
  int object = -1;  // -1 for global pairs
  RegionCaptionPair pair;
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::vector<SyntheticImage> images;
  std::vector<SyntheticPair> regional;
  std::vector<SyntheticPair> global;
};

inline Scribble scribble_in_object(const SyntheticObject& o, int grid, int npoints, Rng& rng) {
  std::vector<Point2D> pts;
  std::vector<double> ts;
  const double g = grid;
  for (int i = 0; i < npoints; ++i) {
    const double x = uniform(rng, o.col / g, (o.col + o.w) / g);
    const double y = uniform(rng, o.row / g, (o.row + o.h) / g);
    pts.emplace_back(x, y);
    ts.push_back(0.05 * i);
  }
  return Scribble(std::move(pts), std::move(ts));
}

inline SyntheticImage random_image(const SyntheticConfig& cfg, const std::string& id, Rng& rng) {
  const int inventory = static_cast<int>(std::min(cfg.colors.size(), cfg.shapes.size()));
  const int lo = std::min(cfg.min_objects, inventory);
  const int hi = std::min(cfg.max_objects, inventory);
  const int n = lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));

  std::vector<std::size_t> color_order(cfg.colors.size()), shape_order(cfg.shapes.size());
  for (std::size_t i = 0; i < color_order.size(); ++i) color_order[i] = i;
  for (std::size_t i = 0; i < shape_order.size(); ++i) shape_order[i] = i;
  shuffle(color_order, rng);
  shuffle(shape_order, rng);

  SyntheticImage img{id, cfg.grid, {}};
  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      SyntheticObject o;
      o.color = cfg.colors[color_order[static_cast<std::size_t>(k)]];
      o.shape = cfg.shapes[shape_order[static_cast<std::size_t>(k)]];
      o.h = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_extent)));
      o.w = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_extent)));
      o.row = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.grid - o.h + 1)));
      o.col = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.grid - o.w + 1)));
      bool clash = false;
      for (const auto& other : img.objects)
        for (int r = o.row; r < o.row + o.h && !clash; ++r)
          for (int c = o.col; c < o.col + o.w && !clash; ++c) clash = other.covers(r, c);
      if (!clash) {
        img.objects.push_back(std::move(o));
        break;
      }
    }
  }
  std::sort(img.objects.begin(), img.objects.end(), [](const auto& a, const auto& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return img;
}

inline SyntheticDataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.num_images; ++i) {
    const std::size_t idx = ds.images.size();
    ds.images.push_back(random_image(cfg, "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(i), rng));
    const auto& img = ds.images.back();
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      const int npts = cfg.min_scribble_points +
                       static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_scribble_points - cfg.min_scribble_points + 1)));
      ds.regional.push_back({idx, static_cast<int>(k),
                             {img.id, scribble_in_object(img.objects[k], img.grid, npts, rng), img.objects[k].caption()}});
    }
    ds.global.push_back({idx, -1, {img.id, Scribble{}, img.global_caption()}});
  }
  return ds;
}

inline nlohmann::json synthetic_manifest(const SyntheticConfig& cfg) {
  return {{"kind", "synthetic_dataset"}, {"version", 1},       {"seed", cfg.seed},
          {"grid", cfg.grid},           {"colors", cfg.colors}, {"shapes", cfg.shapes},
          {"num_images", cfg.num_images}, {"min_objects", cfg.min_objects}, {"max_objects", cfg.max_objects},
          {"max_extent", cfg.max_extent}, {"min_scribble_points", cfg.min_scribble_points},
          {"max_scribble_points", cfg.max_scribble_points}};
}

inline SyntheticConfig synthetic_config_from_manifest(const nlohmann::json& j) {
  SyntheticConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.grid = j.at("grid").get<int>();
  cfg.colors = j.at("colors").get<std::vector<std::string>>();
  cfg.shapes = j.at("shapes").get<std::vector<std::string>>();
  cfg.num_images = j.at("num_images").get<int>();
  cfg.min_objects = j.at("min_objects").get<int>();
  cfg.max_objects = j.at("max_objects").get<int>();
  cfg.max_extent = j.at("max_extent").get<int>();
  cfg.min_scribble_points = j.at("min_scribble_points").get<int>();
  cfg.max_scribble_points = j.at("max_scribble_points").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace regionvlm
