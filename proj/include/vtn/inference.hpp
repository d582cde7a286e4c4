#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vtn/data.hpp"
#include "vtn/model.hpp"
#include "vtn/runconfig.hpp"

namespace vtn {

// Tagged choice of inference mode plus its parameters. eval_resize is the
// shorter-side resize applied before cropping in every mode.
struct InferenceProtocol {
  enum class Kind { FullVideo, MultiView, Chunked, PrecomputedFeatures };

  Kind kind = Kind::FullVideo;
  int64_t full_frames = 250;  // FullVideo / Chunked alignment target
  int64_t num_clips = 10;     // MultiView
  int64_t num_crops = 3;      // MultiView: 1 = center, 3 = left/center/right
  int64_t frames_per_view = 16;
  double footprint_seconds = 2.56;
  int64_t chunk_size = 64;  // Chunked
  int64_t eval_resize = 36;
  std::string feature_source;  // PrecomputedFeatures directory

  static InferenceProtocol::Kind kind_from_string(const std::string& s) {
    if (s == "full") return Kind::FullVideo;
    if (s == "multiview") return Kind::MultiView;
    if (s == "chunked") return Kind::Chunked;
    if (s == "features") return Kind::PrecomputedFeatures;
    throw std::invalid_argument("unknown protocol: " + s);
  }
};

inline InferenceProtocol protocol_from_config(const RunConfig& rc) {
  InferenceProtocol proto;
  proto.kind = InferenceProtocol::kind_from_string(rc.get("eval.protocol"));
  proto.full_frames = rc.get_int("eval.full_frames");
  proto.num_clips = rc.get_int("eval.clips");
  proto.num_crops = rc.get_int("eval.crops");
  proto.frames_per_view = rc.get_int("train.frames_per_clip");
  proto.footprint_seconds = rc.get_double("train.footprint_seconds");
  proto.chunk_size = rc.get_int("eval.chunk_size");
  proto.eval_resize = rc.get_int("eval.resize");
  return proto;
}

template <class S>
struct InferenceOutput {
  std::vector<double> probs;
  AttentionRecord attention;
};

namespace detail {

template <class S>
std::vector<double> softmax_row(const Tensor<S>& logits) {
  auto p = softmax(logits, 1);
  std::vector<double> out(p.numel());
  for (int64_t i = 0; i < p.numel(); ++i) out[i] = static_cast<double>(p.data()[i]);
  return out;
}

// Optional shuffle of the slot -> source-frame assignment; the position list
// itself stays in slot order so positional embeddings land after the shuffle.
inline void maybe_shuffle_slots(std::vector<int64_t>& slot_to_frame, Rng* shuffle_rng) {
  if (shuffle_rng) shuffle_rng->shuffle(slot_to_frame.begin(), slot_to_frame.end());
}

}  // namespace detail

// Whole-video pass: align to `full_frames` via the endpoint-inclusive uniform
// formula (duplicating frames when upsampling), center crop, single forward.
// The backbone runs once per distinct source frame; duplicated slots reuse
// the same feature row, which per-frame purity makes exact.
template <class S>
InferenceOutput<S> full_video_inference(const Video<S>& video, const VtnModel<S>& model,
                                        const InferenceProtocol& proto,
                                        bool record_full = false,
                                        Rng* shuffle_rng = nullptr) {
  const int64_t total = video.frames.dim(0);
  if (total < 1) throw std::invalid_argument("full_video_inference: empty video");
  const std::vector<int64_t> aligned = uniform_indices(total, proto.full_frames);

  std::vector<int64_t> positions = aligned;  // original-video indices per slot
  std::vector<int64_t> slot_to_frame = aligned;
  detail::maybe_shuffle_slots(slot_to_frame, shuffle_rng);

  // distinct source frames, in first-use order
  std::vector<int64_t> unique;
  std::vector<int64_t> slot_to_unique(slot_to_frame.size());
  {
    std::vector<int64_t> where(total, -1);
    for (size_t s = 0; s < slot_to_frame.size(); ++s) {
      const int64_t f = slot_to_frame[s];
      if (where[f] < 0) {
        where[f] = static_cast<int64_t>(unique.size());
        unique.push_back(f);
      }
      slot_to_unique[s] = where[f];
    }
  }

  auto frames = center_crop_resize(select_frames(video.frames, unique),
                                   proto.eval_resize, model.cfg.frame_size);
  FrameBatch<S> batch{frames, static_cast<int64_t>(unique.size()), 1};
  auto features = model.backbone.extract_features(batch, Mode::Eval);

  const int64_t d = features.cols();
  auto map = std::make_shared<std::vector<int64_t>>(slot_to_unique.size() * d);
  for (size_t s = 0; s < slot_to_unique.size(); ++s)
    for (int64_t j = 0; j < d; ++j) (*map)[s * d + j] = slot_to_unique[s] * d + j;
  auto sequence_features =
      gather(features, map, {static_cast<int64_t>(slot_to_unique.size()), d});

  InferenceOutput<S> out;
  Rng unused(0);
  auto logits = model.forward_features(sequence_features, positions, Mode::Eval, unused,
                                       &out.attention, record_full);
  out.probs = detail::softmax_row(logits);
  return out;
}

// Same alignment as full-video, but the backbone runs over the aligned frame
// list in chunks; the concatenated features then make one encoder pass.
template <class S>
InferenceOutput<S> chunked_inference(const Video<S>& video, const VtnModel<S>& model,
                                     const InferenceProtocol& proto,
                                     Rng* shuffle_rng = nullptr) {
  if (proto.chunk_size < 1) throw std::invalid_argument("chunked_inference: chunk_size < 1");
  const int64_t total = video.frames.dim(0);
  if (total < 1) throw std::invalid_argument("chunked_inference: empty video");
  const std::vector<int64_t> aligned = uniform_indices(total, proto.full_frames);

  std::vector<int64_t> positions = aligned;
  std::vector<int64_t> slot_to_frame = aligned;
  detail::maybe_shuffle_slots(slot_to_frame, shuffle_rng);

  auto frames = center_crop_resize(select_frames(video.frames, slot_to_frame),
                                   proto.eval_resize, model.cfg.frame_size);
  const int64_t n = frames.dim(0);
  std::vector<Tensor<S>> chunks;
  for (int64_t at = 0; at < n; at += proto.chunk_size) {
    const int64_t len = std::min(proto.chunk_size, n - at);
    auto chunk = select_frames(frames, [&] {
      std::vector<int64_t> idx(len);
      for (int64_t i = 0; i < len; ++i) idx[i] = at + i;
      return idx;
    }());
    FrameBatch<S> batch{chunk, len, 1};
    chunks.push_back(model.backbone.extract_features(batch, Mode::Eval));
  }

  InferenceOutput<S> out;
  Rng unused(0);
  auto logits = model.forward_features(concat_rows(chunks), positions, Mode::Eval, unused,
                                       &out.attention);
  out.probs = detail::softmax_row(logits);
  return out;
}

// Encoder + head over features extracted in advance.
template <class S>
InferenceOutput<S> precomputed_feature_inference(const Tensor<S>& features,
                                                 const std::vector<int64_t>& positions,
                                                 const VtnModel<S>& model,
                                                 Rng* shuffle_rng = nullptr) {
  if (features.dims() != 2 || features.dim(0) < 1)
    throw std::invalid_argument("precomputed_feature_inference: empty features");
  if (features.cols() != model.cfg.encoder.hidden_size)
    throw std::invalid_argument(
        "precomputed_feature_inference: feature width does not match the encoder");

  Tensor<S> rows = features;
  if (shuffle_rng) {
    std::vector<int64_t> perm(features.rows());
    for (int64_t i = 0; i < features.rows(); ++i) perm[i] = i;
    shuffle_rng->shuffle(perm.begin(), perm.end());
    rows = Tensor<S>::zeros(features.shape());
    const int64_t d = features.cols();
    for (int64_t i = 0; i < features.rows(); ++i)
      std::copy(features.data().begin() + perm[i] * d,
                features.data().begin() + (perm[i] + 1) * d, rows.data().begin() + i * d);
  }

  InferenceOutput<S> out;
  Rng unused(0);
  auto logits =
      model.forward_features(rows, positions, Mode::Eval, unused, &out.attention);
  out.probs = detail::softmax_row(logits);
  return out;
}

// Clips centered at fractions (c + 0.5) / num_clips of the video; per clip a
// footprint window and uniform subsample; one or three crops along the longer
// spatial axis. The prediction is the arithmetic mean of all view softmaxes.
template <class S>
InferenceOutput<S> multi_view_inference(const Video<S>& video, const VtnModel<S>& model,
                                        const InferenceProtocol& proto,
                                        Rng* shuffle_rng = nullptr) {
  const int64_t total = video.frames.dim(0);
  if (total < 1) throw std::invalid_argument("multi_view_inference: empty video");
  if (proto.num_crops != 1 && proto.num_crops != 3)
    throw std::invalid_argument("multi_view_inference: num_crops must be 1 or 3");

  const int64_t window =
      std::min(total, round_index(proto.footprint_seconds * video.fps));
  std::vector<double> mean_probs;
  int64_t views = 0;
  Rng unused(0);

  for (int64_t c = 0; c < proto.num_clips; ++c) {
    const double frac = (c + 0.5) / static_cast<double>(proto.num_clips);
    const int64_t center = round_index(frac * (total - 1));
    const int64_t start = std::clamp<int64_t>(center - window / 2, 0, total - window);

    std::vector<int64_t> positions = uniform_indices(window, proto.frames_per_view);
    for (int64_t& p : positions) p += start;
    std::vector<int64_t> slot_to_frame = positions;
    detail::maybe_shuffle_slots(slot_to_frame, shuffle_rng);

    auto resized = resize_shorter_side(select_frames(video.frames, slot_to_frame),
                                       proto.eval_resize);
    const int64_t H = resized.dim(2), W = resized.dim(3);
    const int64_t crop = model.cfg.frame_size;
    if (crop > H || crop > W)
      throw std::invalid_argument("multi_view_inference: crop larger than resized frame");

    std::vector<std::pair<int64_t, int64_t>> offsets;  // (y, x)
    if (proto.num_crops == 1) {
      offsets.push_back({(H - crop) / 2, (W - crop) / 2});
    } else if (W >= H) {
      offsets.push_back({(H - crop) / 2, 0});
      offsets.push_back({(H - crop) / 2, (W - crop) / 2});
      offsets.push_back({(H - crop) / 2, W - crop});
    } else {
      offsets.push_back({0, (W - crop) / 2});
      offsets.push_back({(H - crop) / 2, (W - crop) / 2});
      offsets.push_back({H - crop, (W - crop) / 2});
    }

    for (auto [y0, x0] : offsets) {
      auto cropped = crop_frames(resized, y0, x0, crop);
      auto logits = model.forward_clip(cropped, positions, Mode::Eval, unused);
      auto probs = detail::softmax_row(logits);
      if (mean_probs.empty()) mean_probs.assign(probs.size(), 0.0);
      for (size_t i = 0; i < probs.size(); ++i) mean_probs[i] += probs[i];
      ++views;
    }
  }
  for (double& p : mean_probs) p /= static_cast<double>(views);

  InferenceOutput<S> out;
  out.probs = std::move(mean_probs);
  return out;
}

// ---------------------------------------------------------------------------
// Precomputed feature files: binary record plus a positions.csv sidecar.
// ---------------------------------------------------------------------------

template <class S>
void save_features(const std::string& dir, const Tensor<S>& features,
                   const std::vector<int64_t>& positions) {
  std::filesystem::create_directories(dir);
  TensorFile file;
  file.records.push_back(to_record("features", features));
  write_tensor_file(dir + "/features.bin", file);
  std::string csv = "slot,frame_position\n";
  for (size_t i = 0; i < positions.size(); ++i)
    csv += std::to_string(i) + "," + std::to_string(positions[i]) + "\n";
  write_text_file(dir + "/positions.csv", csv);
}

template <class S>
std::pair<Tensor<S>, std::vector<int64_t>> load_features(const std::string& dir) {
  const TensorFile file = read_tensor_file(dir + "/features.bin");
  if (file.records.size() != 1 || file.records[0].name != "features")
    throw std::runtime_error("features: unexpected records in " + dir);
  Tensor<S> features = from_record<S>(file.records[0]);

  std::istringstream csv(read_text_file(dir + "/positions.csv"));
  std::string line;
  if (!std::getline(csv, line) || line.rfind("slot,frame_position", 0) != 0)
    throw std::runtime_error("features: bad positions.csv header in " + dir);
  std::vector<int64_t> positions;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("features: malformed positions row: " + line);
    positions.push_back(std::stoll(line.substr(comma + 1)));
  }
  if (static_cast<int64_t>(positions.size()) != features.rows())
    throw std::runtime_error("features: positions.csv does not match features.bin");
  return {features, positions};
}

// The features the full-video path would feed the encoder, for the
// precomputed-features protocol.
template <class S>
std::pair<Tensor<S>, std::vector<int64_t>> extract_video_features(
    const Video<S>& video, const VtnModel<S>& model, const InferenceProtocol& proto) {
  const std::vector<int64_t> aligned =
      uniform_indices(video.frames.dim(0), proto.full_frames);
  auto frames = center_crop_resize(select_frames(video.frames, aligned),
                                   proto.eval_resize, model.cfg.frame_size);
  FrameBatch<S> batch{frames, static_cast<int64_t>(aligned.size()), 1};
  return {model.backbone.extract_features(batch, Mode::Eval), aligned};
}

}  // namespace vtn
