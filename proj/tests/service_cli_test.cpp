#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "regionvlm/commands.hpp"
#include "regionvlm/service.hpp"
#include "support.hpp"

using namespace regionvlm;
using namespace regionvlm::testing;
using nlohmann::json;

namespace {

const Service& service() {
  static const Service s(std::make_shared<const RegionModel>(trained_model()), Service::demo_catalog(trained_model(), 4));
  return s;
}

// Every response carries exactly one of result / error.
void expect_shape(const ServiceResponse& r) {
  ASSERT_TRUE(r.body.is_object());
  EXPECT_EQ(r.body.size(), 1u) << r.body.dump();
  if (r.status == 200) {
    EXPECT_TRUE(r.body.contains("result"));
  } else {
    ASSERT_TRUE(r.body.contains("error")) << r.body.dump();
    EXPECT_TRUE(r.body["error"]["code"].is_string());
    EXPECT_TRUE(r.body["error"]["message"].is_string());
  }
}

std::string error_code(const ServiceResponse& r) { return r.body.at("error").at("code").get<std::string>(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& args) {
  const int rc = std::system((std::string(REGIONVLM_CLI) + " " + args).c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const std::string kSmoke = std::string(REGIONVLM_SOURCE_DIR) + "/configs/smoke.cfg";

json points_body() { return {{"image_id", "demo-0"}, {"points", json::array({{{"x", 0.3}, {"y", 0.4}}, {{"x", 0.35}, {"y", 0.45}}})}}; }

}  // namespace

// ---------------------------------------------------------------- service handlers

TEST(Service, Encode) {
  const auto r = service().handle("encode", {{"points", json::array({{{"x", 0.32}, {"y", 0.64}}, {{"x", 0.1}, {"y", 0.2}}})}});
  expect_shape(r);
  EXPECT_EQ(r.body["result"]["tokens"], "[32 64] [10 20]");
  EXPECT_EQ(r.body["result"]["tokens"], commands::encode_args({"0.32,0.64", "0.1,0.2"}));
  const auto bad = service().handle("encode", {{"points", json::array({{{"x", 1.5}, {"y", 0.2}}})}});
  expect_shape(bad);
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(error_code(bad), api_error::kInvalidPoints);
  const auto missing = service().handle("encode", json::object());
  expect_shape(missing);
  EXPECT_EQ(error_code(missing), api_error::kMissingField);
}

TEST(Service, CaptionIsDeterministic) {
  const auto a = service().handle("caption", points_body());
  expect_shape(a);
  ASSERT_EQ(a.status, 200);
  const auto& res = a.body["result"];
  EXPECT_TRUE(res["caption"].is_string());
  EXPECT_EQ(res["diagnostics"]["points_used"], trained_model().k);
  EXPECT_EQ(res["diagnostics"]["seed"], kDefaultSeed);
  EXPECT_EQ(service().handle("caption", points_body()).body, a.body);

  // no points: whole-image caption
  const auto whole = service().handle("caption", {{"image_id", "demo-0"}});
  expect_shape(whole);
  EXPECT_EQ(whole.body["result"]["diagnostics"]["points_used"], 0);
  EXPECT_EQ(whole.body["result"]["tokens"], "");
}

TEST(Service, AttentionRowsSumToOne) {
  auto req = points_body();
  req["options"] = {{"layer", 0}};
  const auto r = service().handle("attention", req);
  expect_shape(r);
  ASSERT_EQ(r.status, 200);
  const auto& a = r.body["result"]["attention"];
  const int q = a["queries"], p = a["patches"];
  EXPECT_EQ(p, a["grid_rows"].get<int>() * a["grid_cols"].get<int>());
  const auto w = a["weights"].get<std::vector<double>>();
  ASSERT_EQ(w.size(), static_cast<std::size_t>(q * p));
  for (int i = 0; i < q; ++i) {
    double s = 0;
    for (int j = 0; j < p; ++j) s += w[static_cast<std::size_t>(i * p + j)];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  req["options"] = {{"layer", 99}};
  const auto bad = service().handle("attention", req);
  expect_shape(bad);
  EXPECT_EQ(error_code(bad), api_error::kInvalidArgument);
}

TEST(Service, DialogueAddsTwoTurns) {
  auto req = points_body();
  req["query"] = "";
  const auto first = service().handle("dialogue", req);
  expect_shape(first);
  ASSERT_EQ(first.status, 200);
  const auto history = first.body["result"]["history"];
  ASSERT_EQ(history.size(), 2u);
  EXPECT_EQ(history[0]["role"], "user");
  EXPECT_EQ(history[1]["text"], first.body["result"]["reply"]);
  EXPECT_FALSE(first.body["result"]["diagnostics"]["truncated"].get<bool>());

  json next{{"image_id", "demo-0"}, {"history", history}, {"query", "what color is the star"}};
  const auto second = service().handle("dialogue", next);
  expect_shape(second);
  EXPECT_EQ(second.body["result"]["history"].size(), 4u);

  json bad{{"image_id", "demo-0"}, {"history", json::array({{{"role", "model"}, {"text", "x"}}})}, {"query", "q"}};
  EXPECT_EQ(error_code(service().handle("dialogue", bad)), api_error::kInvalidArgument);
  EXPECT_EQ(error_code(service().handle("dialogue", {{"image_id", "demo-0"}})), api_error::kMissingField);
}

TEST(Service, ImagesAndErrors) {
  const auto ids = service().handle("images", json::object());
  expect_shape(ids);
  EXPECT_EQ(ids.body["result"]["ids"], json::array({"demo-0", "demo-1", "demo-2", "demo-3"}));
  const auto img = service().handle("image", {{"image_id", "demo-1"}});
  expect_shape(img);
  const int rows = img.body["result"]["rows"];
  EXPECT_EQ(img.body["result"]["cells"].size(), static_cast<std::size_t>(rows * rows));
  EXPECT_EQ(img.body["result"]["rgb"].size(), static_cast<std::size_t>(3 * rows * rows));

  const auto unknown = service().handle("image", {{"image_id", "nope"}});
  expect_shape(unknown);
  EXPECT_EQ(unknown.status, 404);
  EXPECT_EQ(error_code(unknown), api_error::kUnknownImage);
  EXPECT_EQ(error_code(service().handle("frobnicate", json::object())), api_error::kUnknownEndpoint);
  EXPECT_EQ(error_code(service().handle_text("caption", "{not json")), api_error::kMalformedBody);
  EXPECT_EQ(error_code(service().handle("caption", json::array())), api_error::kMalformedBody);
  EXPECT_EQ(error_code(service().handle("caption", {{"image_id", "demo-0"}, {"seed", -3}})), api_error::kInvalidArgument);
  auto bad_image = json{{"image", {{"grid", 2}, {"objects", json::array({{{"color", "red"}, {"shape", "star"}, {"row", 5}, {"col", 0}}})}}}};
  EXPECT_EQ(error_code(service().handle("caption", bad_image)), api_error::kInvalidArgument);
}

TEST(Service, LiveServer) {
  httplib::Server server;
  mount_service(server, service());
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto enc = client.Post("/api/encode", R"({"points":[{"x":0.32,"y":0.64}]})", "application/json");
  ASSERT_TRUE(enc);
  EXPECT_EQ(enc->status, 200);
  EXPECT_EQ(json::parse(enc->body)["result"]["tokens"], "[32 64]");
  EXPECT_EQ(enc->get_header_value("Access-Control-Allow-Origin"), "*");

  const auto cap = client.Post("/api/caption", points_body().dump(), "application/json");
  ASSERT_TRUE(cap);
  EXPECT_EQ(json::parse(cap->body), service().handle("caption", points_body()).body);

  const auto ids = client.Get("/api/images");
  ASSERT_TRUE(ids);
  EXPECT_EQ(json::parse(ids->body)["result"]["ids"].size(), 4u);

  const auto bad = client.Post("/api/caption", "{oops", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"]["code"], api_error::kMalformedBody);

  const auto pre = client.Options("/api/caption");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);

  server.stop();
  t.join();
}

// ---------------------------------------------------------------- command layer

TEST(Commands, ArgumentParsing) {
  EXPECT_EQ(commands::parse_radii("15,0,3"), (std::vector<int>{15, 0, 3}));
  EXPECT_THROW(commands::parse_radii("1,-2"), DomainError);
  EXPECT_THROW(commands::parse_point_arg("0.1"), DomainError);
  EXPECT_THROW(commands::parse_point_arg("a,b"), DomainError);
  EXPECT_THROW(commands::load_train_config("/nonexistent/x.cfg", std::nullopt), std::runtime_error);
  EXPECT_EQ(commands::load_train_config(kSmoke, 99).seed, 99u);
}

TEST(Commands, RobustnessTable) {
  const std::string t = commands::robustness_table({{0, 0.5}, {3, 0.25}});
  EXPECT_EQ(t, "radius  mIoU\n     0  0.5000\n     3  0.2500\n");
}

// ---------------------------------------------------------------- binary

TEST(Cli, EncodeAndExitCodes) {
  const std::string out = temp_path("encode.txt");
  ASSERT_EQ(run("encode 0.32,0.64 0.1,0.2 > " + out), 0);
  EXPECT_EQ(slurp(out), "[32 64] [10 20]\n");
  EXPECT_EQ(run("encode 1.5,0.2 2> /dev/null"), 1);
  EXPECT_NE(run("no-such-command > /dev/null 2>&1"), 0);
  EXPECT_NE(run("eval bogus --model x --data y > /dev/null 2>&1"), 0);
  EXPECT_EQ(run("eval ris --model /nonexistent.ckpt --data /nonexistent.jsonl 2> /dev/null"), 1);
  EXPECT_EQ(run("--help > /dev/null"), 0);
}

TEST(Cli, RunsAreReproducible) {
  std::string ckpt[2], report[2], summary[2], data[2], ris[2], evals[2], robust[2];
  for (int i = 0; i < 2; ++i) {
    const std::string dir = temp_path("run" + std::to_string(i));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    ASSERT_EQ(run("make-data --config " + kSmoke + " --out " + dir + "/data"), 0);
    ASSERT_EQ(run("train --config " + kSmoke + " --out " + dir + "/m.ckpt --report " + dir + "/r.jsonl > " + dir +
                  "/summary.json 2> /dev/null"),
              0);
    ASSERT_EQ(run("make-eval ris --model " + dir + "/m.ckpt --count 6 --out " + dir + "/ris.jsonl --proposals-out " + dir +
                  "/props.jsonl"),
              0);
    ASSERT_EQ(run("eval ris --model " + dir + "/m.ckpt --data " + dir + "/ris.jsonl --proposals " + dir + "/props.jsonl --out " +
                  dir + "/ris_eval.jsonl 2> /dev/null"),
              0);
    ASSERT_EQ(run("eval robustness --table --radii 0,3 --model " + dir + "/m.ckpt --data " + dir + "/ris.jsonl --proposals " +
                  dir + "/props.jsonl > " + dir + "/robust.txt 2> /dev/null"),
              0);
    ckpt[i] = slurp(dir + "/m.ckpt");
    report[i] = slurp(dir + "/r.jsonl");
    summary[i] = slurp(dir + "/summary.json");
    data[i] = slurp(dir + "/data/images.jsonl") + slurp(dir + "/data/pairs.jsonl") + slurp(dir + "/data/manifest.json");
    ris[i] = slurp(dir + "/ris.jsonl") + slurp(dir + "/props.jsonl");
    evals[i] = slurp(dir + "/ris_eval.jsonl");
    robust[i] = slurp(dir + "/robust.txt");
    EXPECT_TRUE(std::filesystem::exists(dir + "/m.ckpt.best"));
  }
  EXPECT_FALSE(ckpt[0].empty());
  EXPECT_EQ(ckpt[0], ckpt[1]);
  EXPECT_EQ(report[0], report[1]);
  EXPECT_EQ(data[0], data[1]);
  EXPECT_EQ(ris[0], ris[1]);
  EXPECT_EQ(evals[0], evals[1]);
  EXPECT_EQ(robust[0], robust[1]);

  // smoke config: 20 steps, one report line each
  EXPECT_EQ(std::count(report[0].begin(), report[0].end(), '\n'), 20);
  const auto s = json::parse(summary[0]);
  EXPECT_EQ(s["steps"], 20);
  EXPECT_EQ(s["lm_checksum_before"], s["lm_checksum_after"]);
  EXPECT_EQ(std::count(evals[0].begin(), evals[0].end(), '\n'), 7);  // 6 instances + summary
  EXPECT_EQ(robust[0].substr(0, 12), "radius  mIoU");
}
