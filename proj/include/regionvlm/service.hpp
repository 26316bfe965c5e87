#pragma once

// JSON request handling for the interactive front end. `Service::handle` is a
// pure function of (endpoint, body); the HTTP layer only moves bytes.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

// Eigen first: httplib pulls in <resolv.h>, whose `_res` macro clashes with
// Eigen parameter names.
#include "regionvlm/downstream.hpp"
#include "regionvlm/instances.hpp"
#include "httplib.h"
#include "json.hpp"

namespace regionvlm {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;  // {"result": ...} or {"error": {"code", "message"}}
};

// Stable error codes.
namespace api_error {
inline constexpr const char* kMalformedBody = "malformed_body";
inline constexpr const char* kUnknownEndpoint = "unknown_endpoint";
inline constexpr const char* kMissingField = "missing_field";
inline constexpr const char* kInvalidPoints = "invalid_points";
inline constexpr const char* kInvalidArgument = "invalid_argument";
inline constexpr const char* kUnknownImage = "unknown_image";
inline constexpr const char* kContextOverflow = "context_overflow";
inline constexpr const char* kInternal = "internal_error";
}  // namespace api_error

namespace detail {

struct ApiFailure {
  int status;
  std::string code;
  std::string message;
};

inline std::vector<Point2D> request_points(const nlohmann::json& j, const char* field = "points") {
  if (!j.contains(field)) return {};
  const auto& arr = j.at(field);
  if (!arr.is_array()) throw ApiFailure{400, api_error::kInvalidPoints, std::string(field) + " must be a list"};
  std::vector<Point2D> pts;
  for (const auto& p : arr) {
    if (!p.is_object() || !p.contains("x") || !p.contains("y") || !p.at("x").is_number() || !p.at("y").is_number())
      throw ApiFailure{400, api_error::kInvalidPoints, "each point needs numeric x and y"};
    try {
      pts.emplace_back(p.at("x").get<double>(), p.at("y").get<double>());
    } catch (const DomainError& e) {
      throw ApiFailure{400, api_error::kInvalidPoints, e.what()};
    }
  }
  return pts;
}

inline nlohmann::json points_json(const std::vector<Point2D>& pts) {
  auto out = nlohmann::json::array();
  for (const auto& p : pts) out.push_back({{"x", p.x()}, {"y", p.y()}});
  return out;
}

template <class T>
T option(const nlohmann::json& req, const char* key, T fallback) {
  if (!req.contains("options") || !req.at("options").contains(key)) return fallback;
  try {
    return req.at("options").at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ApiFailure{400, api_error::kInvalidArgument, std::string("bad option ") + key};
  }
}

inline std::optional<int> optional_option(const nlohmann::json& req, const char* key) {
  if (!req.contains("options") || !req.at("options").contains(key) || req.at("options").at(key).is_null()) return std::nullopt;
  return option<int>(req, key, 0);
}

}  // namespace detail

class Service {
 public:
  // `catalog` backs image references ("image_id") and the image endpoint.
  Service(std::shared_ptr<const RegionModel> model, std::vector<SyntheticImage> catalog)
      : model_(std::move(model)) {
    for (auto& img : catalog) {
      order_.push_back(img.id);
      catalog_.emplace(img.id, std::move(img));
    }
  }

  // Demo images drawn from the model's own synthetic world.
  static std::vector<SyntheticImage> demo_catalog(const RegionModel& m, int count, std::uint64_t seed = kDefaultSeed) {
    SyntheticConfig cfg = model_data_config(m);
    Rng rng(derive_seed(seed, 0xda7a));
    std::vector<SyntheticImage> out;
    for (int i = 0; i < count; ++i) out.push_back(random_image(cfg, "demo-" + std::to_string(i), rng));
    return out;
  }

  ServiceResponse handle(const std::string& endpoint, const nlohmann::json& req) const {
    try {
      if (!req.is_object()) throw detail::ApiFailure{400, api_error::kMalformedBody, "request body must be a JSON object"};
      nlohmann::json result;
      if (endpoint == "encode") result = encode(req);
      else if (endpoint == "caption") result = caption(req);
      else if (endpoint == "attention") result = attention(req);
      else if (endpoint == "dialogue") result = dialogue(req);
      else if (endpoint == "image") result = image(req);
      else if (endpoint == "images") result = {{"ids", order_}};
      else throw detail::ApiFailure{404, api_error::kUnknownEndpoint, "no endpoint named '" + endpoint + "'"};
      return {200, {{"result", std::move(result)}}};
    } catch (const detail::ApiFailure& f) {
      return failure(f.status, f.code, f.message);
    } catch (const ContextOverflow& e) {
      return failure(422, api_error::kContextOverflow, e.what());
    } catch (const DomainError& e) {
      return failure(400, api_error::kInvalidArgument, e.what());
    } catch (const nlohmann::json::exception& e) {
      return failure(400, api_error::kMalformedBody, e.what());
    } catch (const std::exception&) {
      return failure(500, api_error::kInternal, "internal error");
    }
  }

  // Raw-body entry point: parse failures become structured errors too.
  ServiceResponse handle_text(const std::string& endpoint, const std::string& body) const {
    nlohmann::json req;
    try {
      req = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return failure(400, api_error::kMalformedBody, e.what());
    }
    return handle(endpoint, req);
  }

  const RegionModel& model() const { return *model_; }

 private:
  static ServiceResponse failure(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", {{"code", code}, {"message", message}}}}};
  }

  static std::uint64_t seed_of(const nlohmann::json& req) {
    if (!req.contains("seed")) return kDefaultSeed;
    if (!req.at("seed").is_number_unsigned()) throw detail::ApiFailure{400, api_error::kInvalidArgument, "seed must be a non-negative integer"};
    return req.at("seed").get<std::uint64_t>();
  }

  SyntheticImage resolve_image(const nlohmann::json& req) const {
    if (req.contains("image")) {
      try {
        return image_from_json(req.at("image"));
      } catch (const DomainError& e) {
        throw detail::ApiFailure{400, api_error::kInvalidArgument, std::string("image: ") + e.what()};
      }
    }
    if (req.contains("image_id")) {
      const auto id = req.at("image_id").get<std::string>();
      auto it = catalog_.find(id);
      if (it == catalog_.end()) throw detail::ApiFailure{404, api_error::kUnknownImage, "no image '" + id + "'"};
      return it->second;
    }
    throw detail::ApiFailure{400, api_error::kMissingField, "request needs 'image' or 'image_id'"};
  }

  int k_of(const nlohmann::json& req) const {
    const int k = detail::option<int>(req, "k", model_->k);
    if (k < 1) throw detail::ApiFailure{400, api_error::kInvalidArgument, "k must be at least 1"};
    return k;
  }

  // K points actually fed to the model, seeded per request.
  std::vector<Point2D> model_points(const nlohmann::json& req) const {
    Rng rng(seed_of(req));
    return scribble_points(*model_, Scribble(detail::request_points(req)), rng, k_of(req));
  }

  nlohmann::json encode(const nlohmann::json& req) const {
    if (!req.contains("points")) throw detail::ApiFailure{400, api_error::kMissingField, "encode needs 'points'"};
    return {{"tokens", encode_points(detail::request_points(req))}};
  }

  nlohmann::json caption(const nlohmann::json& req) const {
    const auto img = resolve_image(req);
    const auto pts = model_points(req);
    const int max_tokens = detail::option<int>(req, "max_tokens", kDefaultMaxCaptionTokens);
    return {{"caption", caption_points(*model_, img, pts, max_tokens)},
            {"tokens", encode_points(pts)},
            {"diagnostics", {{"points_used", pts.size()}, {"seed", seed_of(req)}}}};
  }

  nlohmann::json attention(const nlohmann::json& req) const {
    const auto img = resolve_image(req);
    const auto pts = model_points(req);
    const auto out = model_->encode_region(img, RegionModel::point_tokens(pts));
    const auto map = cross_attention_map(out, detail::optional_option(req, "layer"), detail::optional_option(req, "head"));
    std::vector<double> flat(map.weights.data(), map.weights.data() + map.weights.size());
    std::vector<double> mean(static_cast<std::size_t>(map.weights.cols()));
    for (Eigen::Index c = 0; c < map.weights.cols(); ++c) mean[static_cast<std::size_t>(c)] = map.weights.col(c).mean();
    return {{"attention", {{"queries", map.weights.rows()}, {"patches", map.weights.cols()}, {"grid_rows", map.grid_rows},
                           {"grid_cols", map.grid_cols}, {"weights", flat}, {"mean", mean}}},
            {"tokens", encode_points(pts)}};
  }

  nlohmann::json dialogue(const nlohmann::json& req) const {
    const auto img = resolve_image(req);
    if (!req.contains("query") || !req.at("query").is_string())
      throw detail::ApiFailure{400, api_error::kMissingField, "dialogue needs a string 'query'"};
    DialogueState state;
    for (const auto& t : req.value("history", nlohmann::json::array())) {
      DialogueTurn turn{t.at("role").get<std::string>(), t.at("text").get<std::string>(), std::nullopt};
      if (t.contains("points")) turn.scribble = detail::request_points(t);
      state.turns.push_back(std::move(turn));
    }
    std::optional<std::vector<Point2D>> scribble;
    if (req.contains("points")) scribble = detail::request_points(req);
    const int max_tokens = detail::option<int>(req, "max_tokens", kDefaultMaxCaptionTokens);
    const auto r = dialogue_step(*model_, img, state, req.at("query").get<std::string>(), scribble, seed_of(req), max_tokens);
    auto history = nlohmann::json::array();
    for (const auto& t : r.state.turns) {
      nlohmann::json jt{{"role", t.role}, {"text", t.text}};
      if (t.scribble) jt["points"] = detail::points_json(*t.scribble);
      history.push_back(std::move(jt));
    }
    return {{"reply", r.reply}, {"history", history}, {"diagnostics", {{"truncated", r.truncated}}}};
  }

  nlohmann::json image(const nlohmann::json& req) const {
    const auto img = resolve_image(req);
    static const std::map<std::string, std::array<int, 3>> palette = {
        {"red", {220, 50, 47}},   {"green", {60, 170, 60}},   {"blue", {38, 110, 210}},
        {"yellow", {235, 200, 40}}, {"purple", {140, 80, 180}}};
    std::vector<int> cells;
    std::vector<int> rgb;
    for (int r = 0; r < img.grid; ++r)
      for (int c = 0; c < img.grid; ++c) {
        const int k = img.object_at(r, c);
        cells.push_back(k);
        std::array<int, 3> px{245, 245, 245};
        if (k >= 0)
          if (auto it = palette.find(img.objects[static_cast<std::size_t>(k)].color); it != palette.end()) px = it->second;
        rgb.insert(rgb.end(), px.begin(), px.end());
      }
    return {{"image", image_to_json(img)}, {"rows", img.grid}, {"cols", img.grid}, {"cells", cells}, {"rgb", rgb}};
  }

  std::shared_ptr<const RegionModel> model_;
  std::map<std::string, SyntheticImage> catalog_;
  std::vector<std::string> order_;
};

// POST /api/<endpoint> with a JSON body. Handlers only read the model, so
// httplib's worker threads can serve requests concurrently.
inline void mount_service(httplib::Server& server, const Service& service) {
  server.Post(R"(/api/([a-z]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle_text(req.matches[1].str(), req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  });
  server.Get(R"(/api/images)", [&service](const httplib::Request&, httplib::Response& res) {
    const auto r = service.handle("images", nlohmann::json::object());
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
}

}  // namespace regionvlm
