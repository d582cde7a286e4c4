#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtn/csv.hpp"
#include "vtn/data.hpp"
#include "vtn/inference.hpp"
#include "vtn/model.hpp"

namespace vtn {

enum class LrSchedule { StepDecay, Cosine };

inline LrSchedule schedule_from_string(const std::string& s) {
  if (s == "step") return LrSchedule::StepDecay;
  if (s == "cosine") return LrSchedule::Cosine;
  throw std::invalid_argument("unknown schedule: " + s);
}
inline std::string to_string(LrSchedule s) {
  return s == LrSchedule::StepDecay ? "step" : "cosine";
}

struct TrainConfig {
  double lr = 1e-3;
  LrSchedule schedule = LrSchedule::Cosine;
  int64_t step_size = 10;   // StepDecay: epochs between decays
  double step_gamma = 0.1;  // StepDecay: decay factor
  double momentum = 0.0;
  double weight_decay = 0.0;
  int64_t batch_size = 8;
  int64_t epochs = 30;
  uint64_t seed = 1;
  bool frozen_backbone = false;
  double footprint_seconds = 2.56;
  int64_t frames_per_clip = 16;
  AugmentParams augment;
  InferenceProtocol eval_protocol;  // validation accuracy during training

  void validate() const {
    // lr = 0 is allowed: it must leave parameters bit-unchanged
    if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  }
};

inline TrainConfig train_config_from_run(const RunConfig& rc) {
  TrainConfig cfg;
  cfg.lr = rc.get_double("train.lr");
  cfg.schedule = schedule_from_string(rc.get("train.schedule"));
  cfg.step_size = rc.get_int("train.step_size");
  cfg.step_gamma = rc.get_double("train.step_gamma");
  cfg.momentum = rc.get_double("train.momentum");
  cfg.weight_decay = rc.get_double("train.weight_decay");
  cfg.batch_size = rc.get_int("train.batch_size");
  cfg.epochs = rc.get_int("train.epochs");
  cfg.seed = static_cast<uint64_t>(rc.get_int("train.seed"));
  cfg.frozen_backbone = rc.get_bool("train.frozen_backbone");
  cfg.footprint_seconds = rc.get_double("train.footprint_seconds");
  cfg.frames_per_clip = rc.get_int("train.frames_per_clip");
  cfg.augment.scale_min = rc.get_int("train.scale_min");
  cfg.augment.scale_max = rc.get_int("train.scale_max");
  cfg.augment.crop = rc.get_int("model.frame_size");
  cfg.augment.hflip_prob = rc.get_double("train.hflip_prob");
  cfg.eval_protocol = protocol_from_config(rc);
  return cfg;
}

inline double lr_at_epoch(const TrainConfig& cfg, int64_t epoch) {
  if (cfg.schedule == LrSchedule::StepDecay)
    return cfg.lr * std::pow(cfg.step_gamma, static_cast<double>(epoch / cfg.step_size));
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs));
}

struct TrainLogRow {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string to_csv() const {
    std::string out = "epoch,train_loss,train_top1,val_top1,val_top5\n";
    for (const auto& r : rows)
      out += std::to_string(r.epoch) + "," + format_fixed(r.train_loss, 6) + "," +
             format_fixed(r.train_top1, 6) + "," + format_fixed(r.val_top1, 6) + "," +
             format_fixed(r.val_top5, 6) + "\n";
    return out;
  }

  double best_val_top1() const {
    double best = 0.0;
    for (const auto& r : rows) best = std::max(best, r.val_top1);
    return best;
  }
};

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<std::vector<double>> probs;  // per video
};

namespace detail {

// argmax with ties broken toward the lowest class id
inline int argmax_class(const std::vector<double>& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

inline bool in_top_k(const std::vector<double>& probs, int label, int k) {
  // classes strictly better than the label, ties resolved by class id
  int better = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > probs[label]) ++better;
    if (probs[i] == probs[label] && static_cast<int>(i) < label) ++better;
  }
  return better < k;
}

}  // namespace detail

// Top-1/top-5 over a split under the given protocol; shuffle applies the
// shuffle evaluation transform per video (deterministic per-video streams).
template <class S>
EvalResult evaluate(const VtnModel<S>& model, const std::vector<Video<S>>& videos,
                    const InferenceProtocol& proto, bool shuffle = false,
                    uint64_t shuffle_seed = 104729) {
  EvalResult result;
  result.probs.reserve(videos.size());
  int64_t hits1 = 0, hits5 = 0;
  for (size_t i = 0; i < videos.size(); ++i) {
    const auto& video = videos[i];
    Rng shuffle_rng = Rng::stream(shuffle_seed, i);
    Rng* sr = shuffle ? &shuffle_rng : nullptr;
    std::vector<double> probs;
    switch (proto.kind) {
      case InferenceProtocol::Kind::FullVideo:
        probs = full_video_inference(video, model, proto, false, sr).probs;
        break;
      case InferenceProtocol::Kind::MultiView:
        probs = multi_view_inference(video, model, proto, sr).probs;
        break;
      case InferenceProtocol::Kind::Chunked:
        probs = chunked_inference(video, model, proto, sr).probs;
        break;
      case InferenceProtocol::Kind::PrecomputedFeatures: {
        Tensor<S> features;
        std::vector<int64_t> positions;
        if (!proto.feature_source.empty()) {
          auto loaded = load_features<S>(proto.feature_source + "/" + video.id);
          features = loaded.first;
          positions = loaded.second;
        } else {
          auto extracted = extract_video_features(video, model, proto);
          features = extracted.first;
          positions = extracted.second;
        }
        probs = precomputed_feature_inference(features, positions, model, sr).probs;
        break;
      }
    }
    hits1 += detail::argmax_class(probs) == video.label;
    hits5 += detail::in_top_k(probs, video.label, 5);
    result.probs.push_back(std::move(probs));
  }
  if (!videos.empty()) {
    result.top1 = static_cast<double>(hits1) / videos.size();
    result.top5 = static_cast<double>(hits5) / videos.size();
  }
  return result;
}

// Plain SGD with optional momentum and weight decay over every parameter
// that received a gradient.
template <class S>
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(VtnModel<S>& model, double lr) {
    model.visit_params([&](const std::string& name, Tensor<S>& p) {
      if (!p.requires_grad() || p.grad().empty()) return;
      auto& g = p.grad();
      if (momentum_ > 0.0) {
        auto& buf = velocity_[name];
        if (buf.empty()) buf.assign(g.size(), S(0));
        for (size_t i = 0; i < g.size(); ++i) {
          S grad_i = g[i] + static_cast<S>(weight_decay_) * p.data()[i];
          buf[i] = static_cast<S>(momentum_) * buf[i] + grad_i;
          p.data()[i] -= static_cast<S>(lr) * buf[i];
        }
      } else {
        for (size_t i = 0; i < g.size(); ++i) {
          S grad_i = g[i] + static_cast<S>(weight_decay_) * p.data()[i];
          p.data()[i] -= static_cast<S>(lr) * grad_i;
        }
      }
    });
  }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<S>> velocity_;
};

// End-to-end SGD training: per step, one random clip per video in the batch,
// augmented, stacked into a single frame batch, cross-entropy on the cls
// logits. Deterministic under cfg.seed. A non-finite loss aborts with a
// diagnostic rather than training onward on garbage.
template <class S>
TrainLog train(VtnModel<S>& model, const std::vector<Video<S>>& train_videos,
               const std::vector<Video<S>>& val_videos, const TrainConfig& cfg) {
  cfg.validate();
  if (train_videos.empty()) throw std::invalid_argument("train: empty training set");
  model.set_backbone_frozen(cfg.frozen_backbone);

  Rng rng = Rng::stream(cfg.seed, 1);
  SgdOptimizer<S> optimizer(cfg.momentum, cfg.weight_decay);
  const int64_t C = model.cfg.frame_channels;
  const int64_t crop = model.cfg.frame_size;
  const int64_t T = cfg.frames_per_clip;

  std::vector<size_t> order(train_videos.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    int64_t steps = 0, clip_hits = 0, clip_count = 0;
    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const int64_t B =
          std::min<size_t>(cfg.batch_size, order.size() - at);
      auto clips = Tensor<S>::zeros({B, C, T, crop, crop});
      std::vector<std::vector<int64_t>> positions(B);
      auto labels = std::make_shared<std::vector<int>>(B);
      for (int64_t b = 0; b < B; ++b) {
        const auto& video = train_videos[order[at + b]];
        auto clip = sample_training_clip(video, cfg.footprint_seconds, T, rng);
        clip = augment_clip(clip, cfg.augment, rng);
        positions[b] = clip.frame_positions;
        (*labels)[b] = clip.label;
        // clip.frames is [T, C, h, w]; the batch wants [B, C, T, h, w]
        for (int64_t t = 0; t < T; ++t)
          for (int64_t c = 0; c < C; ++c)
            std::copy(clip.frames.data().begin() + (t * C + c) * crop * crop,
                      clip.frames.data().begin() + (t * C + c + 1) * crop * crop,
                      clips.data().begin() + (((b * C + c) * T + t) * crop * crop));
      }

      model.zero_grad();
      double loss_value = 0.0;
      {
        Tape<S> tape;
        auto logits = model.forward_batch(clips, positions, Mode::Train, rng);
        auto loss = cross_entropy_mean(logits, labels);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw std::runtime_error("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " +
                                   std::to_string(steps));
        for (int64_t b = 0; b < B; ++b) {
          int best = 0;
          for (int64_t j = 1; j < logits.cols(); ++j)
            if (logits.at(b, j) > logits.at(b, best)) best = static_cast<int>(j);
          clip_hits += best == (*labels)[b];
          ++clip_count;
        }
        tape.backward(loss.node());
      }
      optimizer.step(model, lr);
      loss_sum += loss_value;
      ++steps;
    }

    auto val = evaluate(model, val_videos, cfg.eval_protocol, false);
    TrainLogRow row;
    row.epoch = epoch;
    row.train_loss = steps ? loss_sum / steps : 0.0;
    row.train_top1 = clip_count ? static_cast<double>(clip_hits) / clip_count : 0.0;
    row.val_top1 = val.top1;
    row.val_top5 = val.top5;
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace vtn
