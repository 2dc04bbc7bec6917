// Copyright 2026 The EchoQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line entry points for every pipeline stage.

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "echoqa/data/dataset.hpp"
#include "echoqa/model/train.hpp"
#include "echoqa/phantom/phantom.hpp"
#include "echoqa/service/server.hpp"

namespace fs = std::filesystem;
using namespace echoqa;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

service::HttpServer* g_server = nullptr;

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<phantom::CineClip> select(const data::Dataset& ds, const std::string& split) {
  if (split == "all") return ds.clips;
  return ds.subset(data::parse_split(split));
}

/// Reads frame_*.pgm from a clip directory in name order.
phantom::CineClip read_clip_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .pgm frames in " + dir.string());
  phantom::CineClip clip;
  clip.clip_id = dir.filename().string();
  for (const auto& f : files) {
    auto frame = data::read_pgm(f);
    if (frame.width() != phantom::kFrameSize || frame.height() != phantom::kFrameSize) frame = data::resize_to_input(frame);
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

void print_scores(const std::vector<std::string>& ids, const std::vector<rubric::AttributeScores>& scores) {
  std::cout << std::left << std::setw(10) << "clip";
  for (auto a : kAttributes) std::cout << std::right << std::setw(17) << attribute_label(a);
  std::cout << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::cout << std::left << std::setw(10) << ids[i];
    for (auto a : kAttributes) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << scores[i][a].normalized << " (" << std::setprecision(2)
           << scores[i][a].raw << ")";
      std::cout << std::right << std::setw(17) << cell.str();
    }
    std::cout << '\n';
  }
}

void print_report(const model::EvalReport& r) {
  std::cout << std::left << std::setw(10) << "";
  for (auto a : kAttributes) std::cout << std::right << std::setw(17) << attribute_label(a);
  std::cout << std::setw(18) << "Average Accuracy" << '\n';
  std::cout << std::left << std::setw(10) << "MAE" << std::fixed << std::setprecision(4);
  for (const auto& a : r.attributes) std::cout << std::right << std::setw(17) << a.mae;
  std::cout << '\n' << std::left << std::setw(10) << "Accuracy" << std::setprecision(2);
  for (const auto& a : r.attributes) std::cout << std::right << std::setw(16) << a.accuracy << "%";
  std::cout << std::setw(17) << r.average_accuracy << "%\n";
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large tensor buffers on the heap between batches instead of
  // returning them to the kernel after every pass.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Echocardiogram cine quality assessment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a phantom dataset");
  std::size_t gen_count = 200;
  std::uint64_t gen_seed = 7;
  fs::path gen_out;
  std::vector<double> gen_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  gen->add_option("--count", gen_count, "Number of clips")->capture_default_str()->check(CLI::Range(5, 100000));
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--mix", gen_mix, "Poor,average,optimum fractions per attribute")->expected(3)->delimiter(',');

  // split
  auto* split = app.add_subcommand("split", "Assign train/val/test splits (60:20:20)");
  fs::path split_data;
  std::uint64_t split_seed = 7;
  split->add_option("--data", split_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  split->add_option("--seed", split_seed, "Split seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train the four-stream model");
  fs::path tr_data, tr_out, tr_log, tr_config;
  model::TrainConfig tc;
  std::uint64_t model_seed = 0;
  tr->add_option("--data", tr_data, "Split dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--log", tr_log, "JSON-lines training log (default: <out>.log.jsonl)");
  tr->add_option("--config", tr_config, "Training config JSON; flags override it")->check(CLI::ExistingFile);
  tr->add_option("--epochs", tc.max_epochs, "Maximum epochs")->capture_default_str();
  tr->add_option("--lr", tc.base_lr, "Base learning rate")->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size, "Batch size (8 or 12)")->capture_default_str();
  tr->add_option("--patience", tc.patience, "Early-stopping patience in epochs")->capture_default_str();
  tr->add_option("--seed", tc.seed, "Training seed (batch order, dropout)")->capture_default_str();
  tr->add_option("--model-seed", model_seed, "Weight initialisation seed")->capture_default_str();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a split and write an evaluation report");
  fs::path ev_data, ev_model, ev_out;
  std::string ev_split = "test";
  ev->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--model", ev_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "train, val, test or all")->capture_default_str();
  ev->add_option("--out", ev_out, "Report JSON to write")->required();

  // score
  auto* sc = app.add_subcommand("score", "Print the four scores for clips");
  fs::path sc_model, sc_clip, sc_data;
  std::string sc_split = "all";
  bool sc_json = false;
  sc->add_option("--model", sc_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* sc_clip_opt = sc->add_option("--clip", sc_clip, "Clip directory of frame_*.pgm files");
  auto* sc_data_opt = sc->add_option("--data", sc_data, "Dataset directory (scores a split)");
  sc->add_option("--split", sc_split, "Split to score with --data")->capture_default_str();
  sc->add_flag("--json", sc_json, "Emit JSON instead of a table");
  sc_clip_opt->excludes(sc_data_opt);

  // bench
  auto* be = app.add_subcommand("bench", "Measure inference latency");
  fs::path be_model, be_out;
  std::size_t be_clips = 4, be_reps = 10, be_batch = 1;
  be->add_option("--model", be_model, "Checkpoint (default: untrained standard model)")->check(CLI::ExistingFile);
  be->add_option("--clips", be_clips, "Phantom clips per repetition")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--repetitions", be_reps, "Timed repetitions")->capture_default_str();
  be->add_option("--batch-size", be_batch, "Clips per forward pass")->capture_default_str();
  be->add_option("--out", be_out, "Write the stats as JSON");

  // cv
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation over a dataset");
  fs::path cv_data, cv_out, cv_log;
  model::TrainConfig cvc;
  cv->add_option("--data", cv_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  cv->add_option("--out", cv_out, "Report JSON to write")->required();
  cv->add_option("--log", cv_log, "JSON-lines training log");
  cv->add_option("--folds", cvc.folds, "Number of folds")->capture_default_str();
  cv->add_option("--epochs", cvc.max_epochs, "Maximum epochs per fold")->capture_default_str();
  cv->add_option("--lr", cvc.base_lr, "Base learning rate")->capture_default_str();
  cv->add_option("--seed", cvc.seed, "Seed")->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "Serve clips, scores and annotations over HTTP");
  service::ServiceConfig svc;
  std::string sv_data, sv_model, sv_annotations, sv_rubric;
  sv->add_option("--data", sv_data, "Dataset directory (default: $ECHOQA_DATA)");
  sv->add_option("--model", sv_model, "Checkpoint for the scores endpoint");
  sv->add_option("--annotations", sv_annotations, "Annotation log (default: <data>/annotations.jsonl)");
  sv->add_option("--rubric", sv_rubric, "Rubric JSON (default: built-in table)");
  sv->add_option("--host", svc.host, "Bind address")->capture_default_str();
  int sv_port = -1;
  sv->add_option("--port", sv_port, "Port (default: $ECHOQA_PORT or 8080)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const phantom::LevelMix mix{gen_mix.at(0), gen_mix.at(1), gen_mix.at(2)};
      const auto clips = phantom::generate_dataset(gen_count, gen_seed, mix);
      const auto manifest = data::save_dataset(clips, gen_out);
      std::cout << "wrote " << manifest.clips.size() << " clips to " << gen_out.string() << '\n';
    } else if (*split) {
      const auto m = data::assign_splits(split_data, split_seed);
      const auto c = m.split_counts();
      std::cout << "train " << c.train << ", val " << c.val << ", test " << c.test << '\n';
    } else if (*tr) {
      model::TrainConfig cfg = tc;
      if (!tr_config.empty()) {
        json j = read_json(tr_config);
        // Explicit flags win over the file.
        for (const auto& [flag, key] : std::vector<std::pair<std::string, std::string>>{
                 {"--epochs", "max_epochs"}, {"--lr", "base_lr"}, {"--batch-size", "batch_size"},
                 {"--patience", "patience"}, {"--seed", "seed"}}) {
          if (tr->count(flag)) j[key] = tc.to_json().at(key);
        }
        cfg = model::TrainConfig::from_json(j);
      }
      cfg.validate();
      const auto ds = data::load_dataset(tr_data);
      const auto train_set = ds.subset(data::Split::train);
      const auto val_set = ds.subset(data::Split::val);
      model::MultiStreamModel<float> net(model::ModelConfig::standard(), model_seed);
      const fs::path log_path = tr_log.empty() ? fs::path(tr_out.string() + ".log.jsonl") : tr_log;
      if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
      std::ofstream log(log_path);
      if (!log) throw IoError("cannot write " + log_path.string());
      const auto result = model::train(net, train_set, val_set, cfg, &log);
      if (tr_out.has_parent_path()) fs::create_directories(tr_out.parent_path());
      model::save_model(tr_out, net,
                        {{"train_config", cfg.to_json()},
                         {"best_epoch", result.best_epoch},
                         {"best_val_mae", result.best_val_mae},
                         {"epochs_run", result.epochs.size()}});
      std::cout << "trained " << result.epochs.size() << " epochs, best epoch " << result.best_epoch
                << ", validation MAE " << result.best_val_mae << '\n';
    } else if (*ev) {
      auto net = model::load_model(ev_model);
      const auto ds = data::load_dataset(ev_data);
      const auto clips = select(ds, ev_split);
      const auto report = model::evaluate(net, clips);
      write_json(ev_out, report.to_json());
      print_report(report);
    } else if (*sc) {
      if (sc_clip.empty() && sc_data.empty()) throw ValidationError("score needs --clip or --data");
      auto net = model::load_model(sc_model);
      std::vector<phantom::CineClip> clips;
      if (!sc_clip.empty()) {
        clips.push_back(read_clip_dir(sc_clip));
      } else {
        clips = select(data::load_dataset(sc_data), sc_split);
      }
      std::vector<std::string> ids;
      std::vector<rubric::AttributeScores> scores;
      for (const auto& c : clips) {
        ids.push_back(c.clip_id);
        scores.push_back(model::forward_score(net, c));
      }
      if (sc_json) {
        json out = json::array();
        for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({{"clip_id", ids[i]}, {"scores", scores[i].to_json()}});
        std::cout << out.dump(2) << '\n';
      } else {
        print_scores(ids, scores);
      }
    } else if (*be) {
      auto net = be_model.empty() ? model::MultiStreamModel<float>(model::ModelConfig::standard(), 0)
                                  : model::load_model(be_model);
      std::vector<phantom::CineClip> clips;
      for (std::size_t i = 0; i < be_clips; ++i) {
        phantom::PhantomParams p;
        p.seed = i;
        clips.push_back(phantom::generate_clip(p, "bench"));
      }
      const auto stats = model::benchmark_inference(net, clips, be_reps, be_batch);
      if (!be_out.empty()) write_json(be_out, stats.to_json());
      std::cout << stats.to_json().dump(2) << '\n';
    } else if (*cv) {
      cvc.validate();
      const auto ds = data::load_dataset(cv_data);
      std::ofstream log;
      if (!cv_log.empty()) {
        log.open(cv_log);
        if (!log) throw IoError("cannot write " + cv_log.string());
      }
      const auto report = model::cross_validate(ds.clips, model::ModelConfig::standard(), cvc,
                                                cv_log.empty() ? nullptr : &log);
      write_json(cv_out, report.to_json());
      std::cout << std::fixed << std::setprecision(4);
      for (auto a : kAttributes) {
        std::cout << std::left << std::setw(17) << attribute_label(a) << report.mean_mae[index_of(a)] << " +/- "
                  << report.std_mae[index_of(a)] << '\n';
      }
    } else if (*sv) {
      svc = [&] {
        auto env = service::ServiceConfig::from_env();
        env.host = svc.host;
        return env;
      }();
      if (!sv_data.empty()) svc.data_root = sv_data;
      if (sv_port >= 0) svc.port = sv_port;
      if (!sv_model.empty()) svc.model_path = sv_model;
      if (!sv_annotations.empty()) svc.annotations_path = sv_annotations;
      if (!sv_rubric.empty()) svc.rubric_path = sv_rubric;
      service::Service service(svc);
      service::HttpServer server(service);
      const int port = server.bind(svc.host, svc.port);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::cout << "serving " << svc.data_root.string() << " on http://" << svc.host << ":" << port
                << (service.has_model() ? "" : " (no model loaded)") << std::endl;
      server.listen();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "echoqa: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
