// regionvlm: command-line front end. See docs/API.md for every flag.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "regionvlm/commands.hpp"
#include "regionvlm/service.hpp"

namespace rv = regionvlm;
namespace cmd = regionvlm::commands;

namespace {

// Writes to `path`, or stdout when the path is empty or "-".
template <class F>
void with_output(const std::string& path, F&& f) {
  if (path.empty() || path == "-") {
    f(std::cout);
    std::cout.flush();
  } else {
    auto out = cmd::open_out(path);
    f(out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-conditioned vision-language toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = rv::kDefaultSeed;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s; seed_given = true; },
                                            "random seed (default " + std::to_string(rv::kDefaultSeed) + ")");
  };

  // encode
  auto* encode = app.add_subcommand("encode", "print the token string for points given as x,y");
  std::vector<std::string> point_args;
  encode->add_option("points", point_args, "points, each as x,y in [0,1]");
  add_seed(encode);

  // make-data
  auto* make_data = app.add_subcommand("make-data", "write a synthetic dataset (manifest, images, pairs)");
  std::string config_path, out_path;
  bool held_out = false;
  make_data->add_option("--config", config_path, "training config file")->required();
  make_data->add_option("--out", out_path, "output directory")->required();
  make_data->add_flag("--held-out", held_out, "write the held-out split instead of the training split");
  add_seed(make_data);

  // warm-lm
  auto* warm = app.add_subcommand("warm-lm", "warm up and seal the frozen language model");
  warm->add_option("--config", config_path, "training config file")->required();
  warm->add_option("--out", out_path, "sealed model file")->required();
  add_seed(warm);

  // train
  auto* train = app.add_subcommand("train", "train the Q-Former against the frozen language model");
  cmd::TrainPaths paths;
  bool no_epoch_ckpt = false;
  train->add_option("--config", config_path, "training config file")->required();
  train->add_option("--out", paths.checkpoint, "checkpoint path")->required();
  train->add_option("--report", paths.report, "per-step report (JSON lines)");
  train->add_option("--lm", paths.lm, "reuse a sealed language model from warm-lm");
  train->add_flag("--no-epoch-checkpoints", no_epoch_ckpt, "skip the per-epoch and best checkpoints");
  add_seed(train);

  // eval
  auto* eval = app.add_subcommand("eval", "run a downstream task over an instance file");
  cmd::EvalOptions eo;
  std::string model_path, radii = "0,3,7,15";
  eval->add_option("task", eo.task, "ris | vcr | vqa | caption | robustness")->required()->check(CLI::IsMember(cmd::kEvalTasks));
  eval->add_option("--model", model_path, "checkpoint")->required();
  eval->add_option("--data", eo.data, "instance file (JSON lines)")->required();
  eval->add_option("--proposals", eo.proposals, "proposal file for RIS instances without inline proposals");
  eval->add_option("--radii", radii, "dilation radii for robustness, comma separated");
  eval->add_option("--max-tokens", eo.max_tokens, "generation budget");
  eval->add_flag("--table", eo.table, "robustness: print a plain-text table");
  eval->add_option("--out", out_path, "report file (default stdout)");
  add_seed(eval);

  // make-eval
  auto* make_eval = app.add_subcommand("make-eval", "generate synthetic evaluation instances");
  std::string task, proposals_out;
  int count = 100;
  make_eval->add_option("task", task, "ris | vcr | vqa | caption | robustness")->required()->check(CLI::IsMember(cmd::kEvalTasks));
  auto* me_model = make_eval->add_option("--model", model_path, "take the synthetic world from this checkpoint");
  auto* me_config = make_eval->add_option("--config", config_path, "take the synthetic world from this config");
  me_model->excludes(me_config);
  make_eval->add_option("--count", count, "number of instances")->check(CLI::PositiveNumber);
  make_eval->add_option("--out", out_path, "instance file (default stdout)");
  make_eval->add_option("--proposals-out", proposals_out, "write RIS proposals to this file instead of inline");
  add_seed(make_eval);

  // stats
  auto* stats = app.add_subcommand("stats", "summarize a checkpoint and/or a training report");
  std::string report_path, narratives_path;
  stats->add_option("--model", model_path, "checkpoint");
  stats->add_option("--report", report_path, "training report");
  stats->add_option("--narratives", narratives_path, "narrative record file");
  add_seed(stats);

  // serve
  auto* serve = app.add_subcommand("serve", "JSON-over-HTTP service for the scribble front end");
  std::string host = "127.0.0.1", static_dir, catalog_path;
  int port = 8080, demo_images = 16;
  serve->add_option("--model", model_path, "checkpoint")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");
  serve->add_option("--demo-images", demo_images, "number of generated demo images");
  serve->add_option("--images", catalog_path, "extra images (JSON lines) served by id");
  serve->add_option("--static", static_dir, "directory served at / (the browser client)");
  add_seed(serve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*encode) {
      std::cout << cmd::encode_args(point_args) << "\n";
    } else if (*make_data) {
      cmd::make_data(cmd::load_train_config(config_path, seed_given ? std::optional(seed) : std::nullopt), out_path, held_out);
    } else if (*warm) {
      cmd::warm_lm(cmd::load_train_config(config_path, seed_given ? std::optional(seed) : std::nullopt), out_path, std::cerr);
    } else if (*train) {
      paths.epoch_checkpoints = !no_epoch_ckpt;
      cmd::train_command(cmd::load_train_config(config_path, seed_given ? std::optional(seed) : std::nullopt), paths,
                         std::cout, std::cerr);
    } else if (*eval) {
      eo.seed = seed;
      eo.radii = cmd::parse_radii(radii);
      const auto t0 = std::chrono::steady_clock::now();
      const rv::RegionModel m = rv::load_model(model_path);
      with_output(out_path, [&](std::ostream& o) { cmd::eval_command(m, eo, o); });
      std::cerr << "eval " << eo.task << " " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                << " s\n";
    } else if (*make_eval) {
      rv::SyntheticConfig dc;
      if (!model_path.empty()) dc = rv::model_data_config(rv::load_model(model_path));
      else if (!config_path.empty()) dc = cmd::load_train_config(config_path, std::nullopt).data_config(true);
      else dc = rv::TrainConfig{}.data_config(true);
      std::unique_ptr<std::ofstream> props;
      if (!proposals_out.empty()) props = std::make_unique<std::ofstream>(cmd::open_out(proposals_out));
      with_output(out_path, [&](std::ostream& o) { cmd::make_eval(task, dc, count, seed, o, props.get()); });
    } else if (*stats) {
      if (model_path.empty() && report_path.empty() && narratives_path.empty())
        throw CLI::ValidationError("stats needs --model, --report or --narratives");
      nlohmann::json j = nlohmann::json::object();
      if (!model_path.empty()) j["model"] = cmd::model_stats(rv::load_model(model_path));
      if (!report_path.empty()) {
        auto in = cmd::open_in(report_path);
        j["report"] = cmd::report_stats(in);
      }
      if (!narratives_path.empty()) {
        auto in = cmd::open_in(narratives_path);
        j["narratives"] = cmd::narrative_stats(in);
      }
      std::cout << j.dump(2) << "\n";
    } else if (*serve) {
      auto model = std::make_shared<const rv::RegionModel>(rv::load_model(model_path));
      auto catalog = rv::Service::demo_catalog(*model, demo_images, seed);
      if (!catalog_path.empty()) {
        auto in = cmd::open_in(catalog_path);
        rv::for_each_json_line(in, "image", [&](const nlohmann::json& j) { catalog.push_back(rv::image_from_json(j)); });
      }
      const rv::Service service(model, std::move(catalog));
      httplib::Server server;
      rv::mount_service(server, service);
      if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
        throw std::runtime_error("cannot serve static directory " + static_dir);
      std::cerr << "listening on http://" << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
