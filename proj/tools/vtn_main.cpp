// Command-line surface: data generation, training, evaluation, analytic
// FLOPs reports, attention inspection, gradient checking, and the ablation
// sweeps, all driven by the flat key=value run configuration.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "vtn/attention_export.hpp"
#include "vtn/checkpoint.hpp"
#include "vtn/flops.hpp"
#include "vtn/gradcheck_suite.hpp"
#include "vtn/training.hpp"

namespace {

using namespace vtn;

std::string default_out_dir() {
  const char* env = std::getenv("VTN_OUT_DIR");
  return env && *env ? env : ".";
}

RunConfig make_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  RunConfig rc = config_path.empty() ? RunConfig() : RunConfig::load_file(config_path);
  for (const auto& kv : overrides) rc.apply_override(kv);
  return rc;
}

struct Dataset {
  std::vector<Video<float>> train;
  std::vector<Video<float>> val;
};

Dataset obtain_dataset(const RunConfig& rc, const std::string& data_dir) {
  Dataset ds;
  if (!data_dir.empty()) {
    ds.train = load_dataset<float>(data_dir + "/train");
    ds.val = load_dataset<float>(data_dir + "/val");
  } else {
    auto generated = generate_synth_dataset<float>(synth_spec_from_config(rc));
    ds.train = std::move(generated.first);
    ds.val = std::move(generated.second);
  }
  return ds;
}

VtnModel<float> fresh_model(const RunConfig& rc) {
  VtnModel<float> model;
  Rng init_rng = Rng::stream(static_cast<uint64_t>(rc.get_int("train.seed")), 0);
  model.init(rc.model_config(), init_rng);
  return model;
}

struct TrainOutcome {
  TrainLog log;
  EvalResult plain;
  EvalResult shuffled;
};

TrainOutcome run_training(const RunConfig& rc, VtnModel<float>& model, Dataset& ds,
                          bool eval_shuffled = false) {
  TrainOutcome out;
  auto cfg = train_config_from_run(rc);
  out.log = train(model, ds.train, ds.val, cfg);
  out.plain = evaluate(model, ds.val, cfg.eval_protocol, false);
  if (eval_shuffled) out.shuffled = evaluate(model, ds.val, cfg.eval_protocol, true);
  return out;
}

// Deterministic fan-out: results land in fixed slots regardless of worker
// interleaving; each run owns its rng streams through its own config seed.
void run_jobs(std::vector<std::function<void()>>& jobs, int64_t workers) {
  if (workers <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (int64_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
        jobs[i]();
    });
  for (auto& t : pool) t.join();
}

int cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
  auto spec = synth_spec_from_config(rc);
  auto [train_videos, val_videos] = generate_synth_dataset<float>(spec);
  save_dataset(out_dir + "/train", train_videos);
  save_dataset(out_dir + "/val", val_videos);
  std::cout << "wrote " << train_videos.size() << " train / " << val_videos.size()
            << " val videos (" << to_string(spec.task) << ") to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_dir,
              const std::string& out_dir) {
  auto ds = obtain_dataset(rc, data_dir);
  auto model = fresh_model(rc);
  auto cfg = train_config_from_run(rc);
  auto log = train(model, ds.train, ds.val, cfg);

  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/trainlog.csv", log.to_csv());
  write_text_file(out_dir + "/config.txt", rc.serialize());
  save_checkpoint(model, out_dir + "/checkpoint.vtn");
  const auto& last = log.rows.back();
  std::cout << "trained " << cfg.epochs << " epochs; final val top-1 "
            << format_fixed(last.val_top1, 3) << " top-5 "
            << format_fixed(last.val_top5, 3) << "; best val top-1 "
            << format_fixed(log.best_val_top1(), 3) << "\n"
            << "wrote " << out_dir << "/checkpoint.vtn and trainlog.csv\n";
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& probs_out,
             const std::string& save_features_dir) {
  auto model = load_checkpoint<float>(checkpoint_path);
  auto ds = obtain_dataset(rc, data_dir);
  auto proto = protocol_from_config(rc);
  if (!save_features_dir.empty()) {
    for (const auto& video : ds.val) {
      auto [features, positions] = extract_video_features(video, model, proto);
      save_features(save_features_dir + "/" + video.id, features, positions);
    }
    std::cout << "wrote features for " << ds.val.size() << " videos to "
              << save_features_dir << "\n";
    proto.feature_source = save_features_dir;
    proto.kind = InferenceProtocol::Kind::PrecomputedFeatures;
  }
  const bool shuffle = rc.get_bool("eval.shuffle");
  auto result = evaluate(model, ds.val, proto, shuffle);
  const char* names[] = {"full", "multiview", "chunked", "features"};
  std::cout << "protocol " << names[static_cast<int>(proto.kind)]
            << (shuffle ? " (shuffled)" : "") << ": top-1 " << format_fixed(result.top1, 4)
            << " top-5 " << format_fixed(result.top5, 4) << " over " << ds.val.size()
            << " videos\n";
  if (!probs_out.empty()) {
    std::string csv = "id,label";
    const int64_t classes = rc.get_int("model.num_classes");
    for (int64_t c = 0; c < classes; ++c) csv += ",p" + std::to_string(c);
    csv += "\n";
    for (size_t i = 0; i < ds.val.size(); ++i) {
      csv += ds.val[i].id + "," + std::to_string(ds.val[i].label);
      for (double p : result.probs[i]) csv += "," + format_double(p);
      csv += "\n";
    }
    write_text_file(probs_out, csv);
    std::cout << "wrote per-video probabilities to " << probs_out << "\n";
  }
  return 0;
}

int cmd_flops(const RunConfig& rc, const std::string& protocol,
              const std::string& csv_path) {
  const auto cfg = rc.model_config();
  std::vector<FlopsReport> reports;
  if (!protocol.empty()) {
    auto proto = protocol_from_config(rc);
    proto.kind = InferenceProtocol::kind_from_string(protocol);
    reports.push_back(count_flops(cfg, proto));
  } else {
    auto full = protocol_from_config(rc);
    full.kind = InferenceProtocol::Kind::FullVideo;
    auto views = protocol_from_config(rc);
    views.kind = InferenceProtocol::Kind::MultiView;
    reports.push_back(count_flops(cfg, full));
    reports.push_back(count_flops(cfg, views));
  }
  for (const auto& report : reports) std::cout << report.describe() << "\n";
  if (reports.size() == 2) {
    const double ratio = static_cast<double>(reports[1].grand_total) /
                         static_cast<double>(reports[0].grand_total);
    std::cout << "multi-view / full-video cost ratio: " << format_fixed(ratio, 3) << "\n";
  }
  if (!csv_path.empty()) {
    std::string csv = FlopsReport::csv_header();
    for (const auto& report : reports) csv += report.csv_row();
    write_text_file(csv_path, csv);
  }
  return 0;
}

int cmd_bench_attn(const std::vector<int64_t>& n_list, int64_t window, int64_t d,
                   const std::string& csv_path) {
  auto table = attention_scaling_table(n_list, window, d);
  std::string csv = "n,windowed_madds,dense_madds,dense_over_windowed\n";
  std::cout << "attention score+value multiply-adds, window " << window << ", d " << d
            << "\n";
  for (size_t i = 0; i < table.size(); ++i) {
    const auto& row = table[i];
    const double over = static_cast<double>(row.dense) / row.windowed;
    std::cout << "n " << row.n << ": windowed " << row.windowed << "  dense " << row.dense
              << "  dense/windowed " << format_fixed(over, 2);
    if (i > 0 && table[i].n == 2 * table[i - 1].n) {
      std::cout << "  windowed growth "
                << format_fixed(double(row.windowed) / table[i - 1].windowed, 2)
                << "  dense growth "
                << format_fixed(double(row.dense) / table[i - 1].dense, 2);
    }
    std::cout << "\n";
    csv += std::to_string(row.n) + "," + std::to_string(row.windowed) + "," +
           std::to_string(row.dense) + "," + format_double(over) + "\n";
  }
  if (!csv_path.empty()) write_text_file(csv_path, csv);
  return 0;
}

int cmd_inspect_attn(const RunConfig& rc, const std::string& checkpoint_path,
                     const std::string& data_dir, const std::string& video_id,
                     int64_t full_frames, const std::string& out_path) {
  auto model = load_checkpoint<float>(checkpoint_path);
  auto ds = obtain_dataset(rc, data_dir);
  const Video<float>* video = nullptr;
  for (const auto& v : ds.val)
    if (v.id == video_id) video = &v;
  for (const auto& v : ds.train)
    if (v.id == video_id) video = &v;
  if (!video) throw std::runtime_error("no video with id '" + video_id + "'");

  auto proto = protocol_from_config(rc);
  if (full_frames > 0) proto.full_frames = full_frames;
  auto out = full_video_inference(*video, model, proto);
  export_attention(out.attention, out_path);
  std::cout << "wrote cls attention rows for " << video_id << " ("
            << out.attention.layers << " layers x " << out.attention.heads
            << " heads x " << out.attention.tokens << " tokens) to " << out_path << "\n";
  return 0;
}

int cmd_gradcheck() {
  auto rows = gradcheck_suite();
  bool ok = true;
  for (const auto& row : rows) {
    const bool pass = row.max_rel_err <= 1e-4;
    ok = ok && pass;
    std::cout << (pass ? "pass  " : "FAIL  ") << row.module << "  max rel err "
              << format_double(row.max_rel_err) << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const RunConfig& base, const std::string& sweep,
               const std::string& out_dir, int64_t jobs) {
  std::filesystem::create_directories(out_dir);

  if (sweep == "depth") {
    const std::vector<int64_t> depths{1, 2, 3};
    std::vector<TrainOutcome> results(depths.size());
    std::vector<std::function<void()>> tasks;
    for (size_t i = 0; i < depths.size(); ++i)
      tasks.push_back([&, i] {
        RunConfig rc = base;
        rc.set("model.layers", std::to_string(depths[i]));
        auto ds = obtain_dataset(rc, "");
        auto model = fresh_model(rc);
        results[i] = run_training(rc, model, ds);
      });
    run_jobs(tasks, jobs);
    std::string csv = "layers,best_val_top1,final_val_top1,final_val_top5\n";
    for (size_t i = 0; i < depths.size(); ++i)
      csv += std::to_string(depths[i]) + "," +
             format_fixed(results[i].log.best_val_top1(), 4) + "," +
             format_fixed(results[i].log.rows.back().val_top1, 4) + "," +
             format_fixed(results[i].log.rows.back().val_top5, 4) + "\n";
    write_text_file(out_dir + "/depth.csv", csv);
    std::cout << csv;
    return 0;
  }

  if (sweep == "pe_shuffle") {
    const std::vector<std::string> modes{"learned", "sinusoidal", "none"};
    std::vector<TrainOutcome> results(modes.size());
    std::vector<std::function<void()>> tasks;
    for (size_t i = 0; i < modes.size(); ++i)
      tasks.push_back([&, i] {
        RunConfig rc = base;
        rc.set("model.pe_mode", modes[i]);
        auto ds = obtain_dataset(rc, "");
        auto model = fresh_model(rc);
        results[i] = run_training(rc, model, ds, /*eval_shuffled=*/true);
      });
    run_jobs(tasks, jobs);
    std::string csv = "pe,shuffle,top1,top5\n";
    for (size_t i = 0; i < modes.size(); ++i) {
      csv += modes[i] + ",no," + format_fixed(results[i].plain.top1, 4) + "," +
             format_fixed(results[i].plain.top5, 4) + "\n";
      csv += modes[i] + ",yes," + format_fixed(results[i].shuffled.top1, 4) + "," +
             format_fixed(results[i].shuffled.top5, 4) + "\n";
    }
    write_text_file(out_dir + "/pe_shuffle.csv", csv);
    std::cout << csv;
    return 0;
  }

  if (sweep == "footprint") {
    // longer source videos so the footprints actually differ
    const std::vector<std::pair<double, int64_t>> grid{
        {2.56, 8}, {2.56, 16}, {5.12, 8}, {5.12, 16}, {10.0, 8}, {10.0, 16}};
    std::vector<TrainOutcome> results(grid.size());
    std::vector<std::function<void()>> tasks;
    for (size_t i = 0; i < grid.size(); ++i)
      tasks.push_back([&, i] {
        RunConfig rc = base;
        rc.set("data.frames_per_video", "64");
        rc.set("train.footprint_seconds", format_double(grid[i].first));
        rc.set("train.frames_per_clip", std::to_string(grid[i].second));
        auto ds = obtain_dataset(rc, "");
        auto model = fresh_model(rc);
        results[i] = run_training(rc, model, ds);
      });
    run_jobs(tasks, jobs);
    std::string csv = "footprint_seconds,frames_per_clip,best_val_top1,final_val_top1\n";
    for (size_t i = 0; i < grid.size(); ++i)
      csv += format_double(grid[i].first) + "," + std::to_string(grid[i].second) + "," +
             format_fixed(results[i].log.best_val_top1(), 4) + "," +
             format_fixed(results[i].log.rows.back().val_top1, 4) + "\n";
    write_text_file(out_dir + "/footprint.csv", csv);
    std::cout << csv;
    return 0;
  }

  if (sweep == "frozen") {
    const std::vector<bool> frozen{false, true};
    std::vector<TrainOutcome> results(frozen.size());
    std::vector<std::function<void()>> tasks;
    for (size_t i = 0; i < frozen.size(); ++i)
      tasks.push_back([&, i] {
        RunConfig rc = base;
        rc.set("train.frozen_backbone", frozen[i] ? "true" : "false");
        auto ds = obtain_dataset(rc, "");
        auto model = fresh_model(rc);
        results[i] = run_training(rc, model, ds);
      });
    run_jobs(tasks, jobs);
    std::string csv = "frozen_backbone,best_val_top1,final_val_top1,final_val_top5\n";
    for (size_t i = 0; i < frozen.size(); ++i)
      csv += std::string(frozen[i] ? "yes" : "no") + "," +
             format_fixed(results[i].log.best_val_top1(), 4) + "," +
             format_fixed(results[i].log.rows.back().val_top1, 4) + "," +
             format_fixed(results[i].log.rows.back().val_top5, 4) + "\n";
    write_text_file(out_dir + "/frozen.csv", csv);
    std::cout << csv;
    return 0;
  }

  if (sweep == "attention") {
    const std::vector<std::string> modes{"learned", "uniform"};
    std::vector<TrainOutcome> results(modes.size());
    std::vector<std::function<void()>> tasks;
    for (size_t i = 0; i < modes.size(); ++i)
      tasks.push_back([&, i] {
        RunConfig rc = base;
        rc.set("model.attention_mode", modes[i]);
        auto ds = obtain_dataset(rc, "");
        auto model = fresh_model(rc);
        results[i] = run_training(rc, model, ds);
      });
    run_jobs(tasks, jobs);
    std::string csv = "epoch,learned_train_top1,learned_val_top1,uniform_train_top1,"
                      "uniform_val_top1\n";
    for (size_t e = 0; e < results[0].log.rows.size(); ++e)
      csv += std::to_string(e) + "," +
             format_fixed(results[0].log.rows[e].train_top1, 4) + "," +
             format_fixed(results[0].log.rows[e].val_top1, 4) + "," +
             format_fixed(results[1].log.rows[e].train_top1, 4) + "," +
             format_fixed(results[1].log.rows[e].val_top1, 4) + "\n";
    write_text_file(out_dir + "/attention_curves.csv", csv);
    std::cout << csv;
    return 0;
  }

  throw std::invalid_argument(
      "unknown sweep '" + sweep +
      "' (expected depth|pe_shuffle|footprint|frozen|attention)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video transformer network: desk-scale training and analysis"};
  app.require_subcommand(1);
  app.fallthrough();  // --config / --set may follow the subcommand name

  std::string config_path, data_dir, out_dir = default_out_dir();
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file")->capture_default_str();
  app.add_option("--set", overrides, "config override key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset to disk");
  gen->add_option("--out", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", data_dir, "dataset directory (generated if omitted)");
  tr->add_option("--out", out_dir, "output directory");

  std::string checkpoint_path, probs_out, protocol_flag, video_id, features_dir;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory (generated if omitted)");
  ev->add_option("--protocol", protocol_flag, "full|multiview|chunked|features");
  int64_t chunk_size = 0;
  ev->add_option("--chunk-size", chunk_size, "chunk size for the chunked protocol");
  ev->add_option("--features", features_dir, "precomputed feature directory");
  bool shuffle_flag = false;
  ev->add_flag("--shuffle", shuffle_flag, "shuffle frames at evaluation time");
  ev->add_option("--probs-out", probs_out, "write per-video probabilities CSV");
  std::string save_features_dir;
  ev->add_option("--save-features", save_features_dir,
                 "extract full-video features to this directory, then evaluate from them");

  auto* fl = app.add_subcommand("flops", "analytic multiply-add report");
  std::string flops_protocol, csv_path;
  fl->add_option("--protocol", flops_protocol, "full|multiview|chunked|features");
  fl->add_option("--csv", csv_path, "also write a CSV");

  auto* ba = app.add_subcommand("bench-attn", "windowed vs dense attention cost table");
  std::vector<int64_t> n_list{64, 128, 256};
  int64_t bench_window = 8, bench_d = 64;
  ba->add_option("--n-list", n_list, "sequence lengths");
  ba->add_option("--window", bench_window, "attention window (total span)");
  ba->add_option("--d", bench_d, "hidden size");
  ba->add_option("--csv", csv_path, "also write a CSV");

  auto* ia = app.add_subcommand("inspect-attn", "export cls attention rows for one video");
  int64_t inspect_frames = 0;
  std::string attn_out = "attention.csv";
  ia->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  ia->add_option("--data", data_dir, "dataset directory (generated if omitted)");
  ia->add_option("--video-id", video_id, "video id, e.g. val_00003")->required();
  ia->add_option("--full-frames", inspect_frames, "alignment target (default from config)");
  ia->add_option("--out", attn_out, "output CSV path");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every module");

  auto* ab = app.add_subcommand("ablate", "run a named experiment sweep");
  std::string sweep;
  int64_t jobs = 1;
  ab->add_option("--sweep", sweep, "depth|pe_shuffle|footprint|frozen|attention")
      ->required();
  ab->add_option("--out", out_dir, "output directory");
  ab->add_option("--jobs", jobs, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = make_config(config_path, overrides);
    if (gen->parsed()) return cmd_gen_data(rc, out_dir);
    if (tr->parsed()) return cmd_train(rc, data_dir, out_dir);
    if (ev->parsed()) {
      if (!protocol_flag.empty()) rc.set("eval.protocol", protocol_flag);
      if (chunk_size > 0) rc.set("eval.chunk_size", std::to_string(chunk_size));
      if (shuffle_flag) rc.set("eval.shuffle", "true");
      if (!features_dir.empty()) {
        rc.set("eval.protocol", "features");
        // feature_source flows through the protocol below
        auto proto = protocol_from_config(rc);
        proto.feature_source = features_dir;
        auto model = load_checkpoint<float>(checkpoint_path);
        auto ds = obtain_dataset(rc, data_dir);
        auto result = evaluate(model, ds.val, proto, rc.get_bool("eval.shuffle"));
        std::cout << "protocol features: top-1 " << format_fixed(result.top1, 4)
                  << " top-5 " << format_fixed(result.top5, 4) << "\n";
        return 0;
      }
      return cmd_eval(rc, checkpoint_path, data_dir, probs_out, save_features_dir);
    }
    if (fl->parsed()) return cmd_flops(rc, flops_protocol, csv_path);
    if (ba->parsed()) return cmd_bench_attn(n_list, bench_window, bench_d, csv_path);
    if (ia->parsed())
      return cmd_inspect_attn(rc, checkpoint_path, data_dir, video_id, inspect_frames,
                              attn_out);
    if (gc->parsed()) return cmd_gradcheck();
    if (ab->parsed()) return cmd_ablate(rc, sweep, out_dir, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
