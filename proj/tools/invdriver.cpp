// invdriver command-line tool: data generation, training, evaluation,
// ablation, gradient checks and plotting.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure,
// 3 failed acceptance check (gradcheck).

#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "invdriver/checks.hpp"
#include "invdriver/dataset.hpp"
#include "invdriver/errors.hpp"
#include "invdriver/eval.hpp"
#include "invdriver/json_io.hpp"
#include "invdriver/plot.hpp"
#include "invdriver/training.hpp"

namespace fs = std::filesystem;
using namespace invd;

namespace {

constexpr int kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitCheck = 3;

// Optional "model", "train" and "scene" sections, each mirroring its struct.
struct ConfigFile {
  ModelConfig model;
  train::TrainConfig train;
  scene::SceneGenConfig scene;
};

ConfigFile load_config(const std::optional<std::string>& path) {
  ConfigFile c;
  if (!path) return c;
  std::ifstream in(*path);
  if (!in) throw InputError("cannot open config " + *path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    for (const auto& [key, _] : j.items())
      if (key != "model" && key != "train" && key != "scene")
        throw InputError("config " + *path + ": unknown section '" + key + "'");
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("scene")) j.at("scene").get_to(c.scene);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config " + *path + ": " + e.what());
  }
  c.model.validate();
  c.train.validate();
  c.scene.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

void print_epoch(const train::EpochRecord& r) {
  std::printf("epoch %3zu  total %.4f  map %.3f/%.3f/%.3f  pred %.3f/%.3f/%.3f  plan %.3f/%.3f/%.3f\n", r.epoch, r.total,
              r.map_pts, r.map_cls, r.map_dir, r.pred_pts, r.pred_cls, r.pred_exist, r.plan_pts, r.plan_dir,
              r.plan_cls);
  std::fflush(stdout);
}

int cmd_gen_data(std::uint64_t seed, std::size_t count, const std::string& out, const std::optional<std::string>& cfg) {
  const auto c = load_config(cfg);
  const auto scenes = scene::generate_scenes(seed, count, c.scene);
  scene::write_dataset(scenes, c.scene, out);
  std::printf("wrote %zu scenes to %s (sha256 %s)\n", scenes.size(), out.c_str(), scene::file_sha256(out).c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string data, out;
  std::optional<std::string> config, history;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  const auto data = scene::read_dataset(a.data);
  std::optional<train::TrainState> state;
  if (a.resume && fs::exists(a.out)) {
    state.emplace(train::load_checkpoint(a.out));
    if (a.epochs) state->train_config.epochs = *a.epochs;
    std::printf("resuming %s at epoch %zu\n", a.out.c_str(), state->epochs_done);
  } else {
    auto c = load_config(a.config);
    if (a.epochs) c.train.epochs = *a.epochs;
    if (a.lr) c.train.lr = *a.lr;
    if (a.seed) c.train.seed = *a.seed;
    c.train.validate();
    state.emplace(c.model, c.train, data.config);
  }
  train::TrainOptions opts;
  opts.checkpoint_path = a.out;
  if (a.history) opts.history_csv = *a.history;
  opts.on_epoch = print_epoch;
  train::train(*state, data.scenes, opts);
  std::printf("checkpoint %s\n", a.out.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::optional<std::string>& report,
             const std::optional<std::string>& plots) {
  const auto r = eval::evaluate(ckpt, data_path);
  std::cout << eval::format_report(r.report);
  std::printf("throughput: %.2f scenes/s (single CPU process, not comparable to GPU FPS)\n",
              r.manifest.scenes_per_second);
  if (report) {
    const fs::path p(*report);
    write_text(p, eval::report_json(r.report) + "\n");
    write_text(fs::path(p).replace_extension(".txt"), eval::format_report(r.report));
    write_text(fs::path(p).replace_extension(".manifest.json"), eval::manifest_json(r.manifest) + "\n");
  }
  if (plots) {
    const auto state = train::load_checkpoint(ckpt);
    const auto data = scene::read_dataset(data_path);
    fs::create_directories(*plots);
    ad::NoGradGuard ng;
    const auto vp = plot::Viewport::for_scene(data.config);
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
      const auto& s = data.scenes[i];
      const auto out = state.model.forward(model::prepare_inputs(s, data.config, state.model_config));
      plot::emit_plot(s, out, state.model_config, vp, fs::path(*plots) / ("scene_" + std::to_string(i) + ".svg"));
    }
  }
  return kExitOk;
}

int cmd_plot(const std::string& ckpt, const std::string& data_path, const std::string& out_dir, std::size_t k) {
  const auto state = train::load_checkpoint(ckpt);
  const auto data = scene::read_dataset(data_path);
  train::check_compatible(state.model_config, data.config);
  fs::create_directories(out_dir);
  ad::NoGradGuard ng;
  const auto vp = plot::Viewport::for_scene(data.config);
  const std::size_t n = std::min(k, data.scenes.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.scenes[i];
    const auto out = state.model.forward(model::prepare_inputs(s, data.config, state.model_config));
    const auto path = fs::path(out_dir) / ("scene_" + std::to_string(i) + ".svg");
    plot::emit_plot(s, out, state.model_config, vp, path);
    std::printf("%s\n", path.c_str());
  }
  return kExitOk;
}

// Matrix file: {"model": {...}, "train": {...}, "rows": "standard" | [{toggles}, ...],
//               "eval_data": optional dataset path (defaults to the training data)}
int cmd_ablate(const std::string& data_path, const std::string& matrix_path, const std::string& out_dir) {
  const auto data = scene::read_dataset(data_path);
  std::ifstream in(matrix_path);
  if (!in) throw InputError("cannot open matrix " + matrix_path);
  ModelConfig mc;
  train::TrainConfig tc;
  std::vector<eval::AblationSpec> specs;
  std::optional<scene::Dataset> eval_data;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [key, _] : j.items())
      if (key != "model" && key != "train" && key != "rows" && key != "eval_data")
        throw InputError("matrix: unknown key '" + key + "'");
    if (j.contains("model")) j.at("model").get_to(mc);
    if (j.contains("train")) j.at("train").get_to(tc);
    const auto rows = j.value("rows", nlohmann::json("standard"));
    if (rows.is_string()) {
      if (rows.get<std::string>() != "standard") throw InputError("matrix: rows must be \"standard\" or a list");
      specs = eval::standard_ablation_matrix();
    } else {
      for (const auto& r : rows) {
        eval::AblationSpec s;
        for (const auto& [key, _] : r.items())
          if (key != "perception_intra" && key != "prediction_intra" && key != "planning_intra" &&
              key != "masked_self_attention")
            throw InputError("matrix row: unknown key '" + key + "'");
        s.perception_intra = r.value("perception_intra", true);
        s.prediction_intra = r.value("prediction_intra", true);
        s.planning_intra = r.value("planning_intra", true);
        s.masked_self_attention = r.value("masked_self_attention", true);
        specs.push_back(s);
      }
    }
    if (j.contains("eval_data")) eval_data = scene::read_dataset(j.at("eval_data").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError("matrix " + matrix_path + ": " + e.what());
  }
  mc.validate();
  tc.validate();
  if (specs.empty()) throw ValidationError("ablation matrix has no rows");
  train::check_compatible(mc, data.config);

  eval::AblationOptions opts;
  opts.checkpoint_dir = fs::path(out_dir) / "checkpoints";
  opts.on_row = [&](std::size_t k, const eval::AblationRow& r) {
    std::printf("row %zu/%zu %s\n", k + 1, specs.size(),
                r.report ? ("avg DE " + std::to_string(r.report->de.avg)).c_str() : ("failed: " + r.error).c_str());
    std::fflush(stdout);
  };
  const auto rows = eval::run_ablation(specs, mc, tc, data.config, data.scenes,
                                       eval_data ? eval_data->scenes : data.scenes, opts);
  const auto table = eval::format_ablation(rows);
  write_text(fs::path(out_dir) / "ablation.txt", table);
  write_text(fs::path(out_dir) / "ablation.json", eval::ablation_json(rows) + "\n");
  std::cout << table;
  return kExitOk;
}

int cmd_gradcheck(double tolerance, double model_tolerance) {
  bool ok = true;
  for (const auto& r : checks::op_gradient_checks(tolerance)) {
    std::printf("%-22s max rel error %.3e  %s\n", r.name.c_str(), r.report.max_rel_error(),
                r.report.passed() ? "ok" : "FAIL");
    ok = ok && r.report.passed();
  }
  const auto layer = checks::decoder_layer_gradient_check(tolerance);
  std::printf("%-22s max rel error %.3e  %s\n", "decoder_layer", layer.max_rel_error(), layer.passed() ? "ok" : "FAIL");
  const auto full = checks::full_model_gradient_check(model_tolerance);
  std::printf("%-22s max rel error %.3e  %s\n", "toy_model_loss", full.max_rel_error(), full.passed() ? "ok" : "FAIL");
  ok = ok && layer.passed() && full.passed();
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  // The autodiff graph allocates and frees many mid-sized buffers per step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Vectorized query-based driving model with intra-instance masked self-attention"};
  app.set_version_flag("--version", INVD_VERSION);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string out, data, ckpt, matrix;
  std::optional<std::string> config, report, plots;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  gen->add_option("--seed", seed, "First scene seed")->required();
  gen->add_option("--count", count, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "Output dataset (JSON Lines)")->required();
  gen->add_option("--config", config, "JSON config file");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--data", ta.data, "Training dataset")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--config", ta.config, "JSON config file");
  tr->add_option("--epochs", ta.epochs, "Override epoch count");
  tr->add_option("--lr", ta.lr, "Override learning rate");
  tr->add_option("--seed", ta.seed, "Override seed");
  tr->add_option("--history", ta.history, "Write per-epoch losses as CSV");
  tr->add_flag("--resume", ta.resume, "Continue from --out if it exists");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset")->required()->check(CLI::ExistingFile);
  ev->add_option("--report", report, "Write the JSON report here (plus .txt and .manifest.json)");
  ev->add_option("--plots", plots, "Write one SVG per scene into this directory");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate every row of an ablation matrix");
  ab->add_option("--data", data, "Training dataset")->required()->check(CLI::ExistingFile);
  ab->add_option("--matrix", matrix, "Matrix JSON file")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out, "Output directory")->required();

  double tolerance = 1e-4, model_tolerance = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--tolerance", tolerance, "Tolerance for operations and the decoder layer");
  gc->add_option("--model-tolerance", model_tolerance, "Tolerance for the full toy model loss");

  std::size_t n_scenes = 4;
  auto* pl = app.add_subcommand("plot", "Render scenes with model output as SVG");
  pl->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pl->add_option("--data", data, "Dataset")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", out, "Output directory")->required();
  pl->add_option("--scenes", n_scenes, "Number of scenes")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_data(seed, count, out, config);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ckpt, data, report, plots);
    if (*ab) return cmd_ablate(data, matrix, out);
    if (*gc) return cmd_gradcheck(tolerance, model_tolerance);
    if (*pl) return cmd_plot(ckpt, data, out, n_scenes);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
