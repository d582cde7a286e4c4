#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vtn/csv.hpp"
#include "vtn/rng.hpp"
#include "vtn/runconfig.hpp"
#include "vtn/tensor.hpp"
#include "vtn/tensor_io.hpp"

namespace vtn {

template <class S>
struct Video {
  Tensor<S> frames;  // [T x C x H x W]
  double fps = 8.0;
  int label = 0;
  std::string id;
  // Synthetic-task metadata: frame indices carrying a marker glyph. Not
  // persisted to disk; empty for loaded datasets.
  std::vector<int64_t> marker_frames;
};

template <class S>
struct VideoClip {
  Tensor<S> frames;  // [N x C x H' x W']
  std::vector<int64_t> frame_positions;  // original indices, non-decreasing
  int label = 0;
};

inline int64_t round_index(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

// Endpoint-inclusive uniform subsample: i -> round(i * (len-1) / (n-1)),
// with the n=1 case pinned to index 0.
inline std::vector<int64_t> uniform_indices(int64_t len, int64_t n) {
  if (len < 1 || n < 1) throw std::invalid_argument("uniform_indices: empty range");
  std::vector<int64_t> out(n);
  if (n == 1) {
    out[0] = 0;
    return out;
  }
  const double step = static_cast<double>(len - 1) / static_cast<double>(n - 1);
  for (int64_t i = 0; i < n; ++i) out[i] = round_index(i * step);
  return out;
}

// ---------------------------------------------------------------------------
// Frame transforms (plain buffer functions; inputs carry no gradient)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> select_frames(const Tensor<S>& frames, const std::vector<int64_t>& indices) {
  const int64_t C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  const int64_t stride = C * H * W;
  Tensor<S> out = Tensor<S>::zeros({static_cast<int64_t>(indices.size()), C, H, W});
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(frames.data().begin() + indices[i] * stride,
              frames.data().begin() + (indices[i] + 1) * stride,
              out.data().begin() + i * stride);
  return out;
}

template <class S>
Tensor<S> resize_bilinear(const Tensor<S>& frames, int64_t out_h, int64_t out_w) {
  const int64_t N = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  Tensor<S> out = Tensor<S>::zeros({N, C, out_h, out_w});
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const S* src = frames.data().data() + (n * C + c) * H * W;
      S* dst = out.data().data() + (n * C + c) * out_h * out_w;
      for (int64_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(H - 1));
        const int64_t y0 = static_cast<int64_t>(fy);
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int64_t x = 0; x < out_w; ++x) {
          const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(W - 1));
          const int64_t x0 = static_cast<int64_t>(fx);
          const int64_t x1 = std::min(x0 + 1, W - 1);
          const double wx = fx - x0;
          const double top = (1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1];
          const double bot = (1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1];
          dst[y * out_w + x] = static_cast<S>((1 - wy) * top + wy * bot);
        }
      }
    }
  return out;
}

// Scale so the shorter spatial side becomes `target`, preserving aspect.
template <class S>
Tensor<S> resize_shorter_side(const Tensor<S>& frames, int64_t target) {
  const int64_t H = frames.dim(2), W = frames.dim(3);
  if (H <= W)
    return resize_bilinear(frames, target, round_index(double(W) * target / H));
  return resize_bilinear(frames, round_index(double(H) * target / W), target);
}

template <class S>
Tensor<S> crop_frames(const Tensor<S>& frames, int64_t y0, int64_t x0, int64_t size) {
  const int64_t N = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  if (y0 < 0 || x0 < 0 || y0 + size > H || x0 + size > W)
    throw std::invalid_argument("crop_frames: crop larger than frame");
  Tensor<S> out = Tensor<S>::zeros({N, C, size, size});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < size; ++y)
        std::copy(frames.data().begin() + ((n * C + c) * H + y0 + y) * W + x0,
                  frames.data().begin() + ((n * C + c) * H + y0 + y) * W + x0 + size,
                  out.data().begin() + ((n * C + c) * size + y) * size);
  return out;
}

template <class S>
Tensor<S> hflip_frames(const Tensor<S>& frames) {
  const int64_t N = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  Tensor<S> out = Tensor<S>::zeros(frames.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          out.data()[((n * C + c) * H + y) * W + x] =
              frames.data()[((n * C + c) * H + y) * W + (W - 1 - x)];
  return out;
}

// Deterministic evaluation path: shorter side to `resize_to`, center crop.
template <class S>
Tensor<S> center_crop_resize(const Tensor<S>& frames, int64_t resize_to, int64_t crop) {
  auto resized = resize_shorter_side(frames, resize_to);
  const int64_t H = resized.dim(2), W = resized.dim(3);
  if (crop > H || crop > W)
    throw std::invalid_argument("center_crop_resize: crop larger than resized frame");
  return crop_frames(resized, (H - crop) / 2, (W - crop) / 2, crop);
}

// ---------------------------------------------------------------------------
// Clip sampling and augmentation
// ---------------------------------------------------------------------------

// Random temporal window of round(footprint * fps) frames, then an
// endpoint-inclusive uniform subsample of N frames. Videos shorter than the
// footprint use the whole video as the window.
template <class S>
VideoClip<S> sample_training_clip(const Video<S>& video, double footprint_seconds,
                                  int64_t n_frames, Rng& rng) {
  const int64_t total = video.frames.dim(0);
  if (total < 1) throw std::invalid_argument("sample_training_clip: empty video");
  if (footprint_seconds * video.fps < 1.0)
    throw std::invalid_argument("sample_training_clip: footprint shorter than one frame");
  if (n_frames < 1) throw std::invalid_argument("sample_training_clip: need n >= 1");

  const int64_t window = std::min(total, round_index(footprint_seconds * video.fps));
  const int64_t start = window < total ? rng.uniform_int(0, total - window) : 0;

  VideoClip<S> clip;
  clip.frame_positions = uniform_indices(window, n_frames);
  for (int64_t& p : clip.frame_positions) p += start;
  clip.frames = select_frames(video.frames, clip.frame_positions);
  clip.label = video.label;
  return clip;
}

struct AugmentParams {
  int64_t scale_min = 36;
  int64_t scale_max = 45;
  int64_t crop = 32;
  double hflip_prob = 0.5;
};

// One scale, one crop offset, and one flip decision per clip, applied to
// every frame identically.
template <class S>
VideoClip<S> augment_clip(const VideoClip<S>& clip, const AugmentParams& params, Rng& rng) {
  if (params.scale_max < params.scale_min || params.scale_min < params.crop)
    throw std::invalid_argument("augment_clip: scale range must be >= crop size");
  const int64_t scale = rng.uniform_int(params.scale_min, params.scale_max);
  auto resized = resize_shorter_side(clip.frames, scale);
  const int64_t H = resized.dim(2), W = resized.dim(3);
  const int64_t y0 = rng.uniform_int(0, H - params.crop);
  const int64_t x0 = rng.uniform_int(0, W - params.crop);
  auto cropped = crop_frames(resized, y0, x0, params.crop);

  VideoClip<S> out;
  out.frames = rng.bernoulli(params.hflip_prob) ? hflip_frames(cropped) : cropped;
  out.frame_positions = clip.frame_positions;
  out.label = clip.label;
  return out;
}

// Shuffle evaluation: permute the frame order but keep the slot-wise
// position sequence, so positional embeddings are added after the shuffle.
template <class S>
VideoClip<S> shuffle_eval_transform(const VideoClip<S>& clip, Rng& rng) {
  const int64_t n = clip.frames.dim(0);
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());

  VideoClip<S> out;
  out.frames = select_frames(clip.frames, perm);
  out.frame_positions = clip.frame_positions;  // unchanged by construction
  out.label = clip.label;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic video tasks
// ---------------------------------------------------------------------------

enum class SynthTask { OrderSensitive, PresenceOnly };

inline SynthTask synth_task_from_string(const std::string& s) {
  if (s == "order_sensitive") return SynthTask::OrderSensitive;
  if (s == "presence_only") return SynthTask::PresenceOnly;
  throw std::invalid_argument("unknown task: " + s);
}
inline std::string to_string(SynthTask t) {
  return t == SynthTask::OrderSensitive ? "order_sensitive" : "presence_only";
}

inline constexpr int64_t kGlyphSize = 8;
inline constexpr int kGlyphInventory = 6;

// Mirror-symmetric 8x8 patterns, so horizontal flips never change glyph
// identity: center block, corner blocks, X, plus, h-stripes, v-stripes.
// The first two are the order-task markers: equal pixel mass (16 each) so
// neither marker is more salient, and disjoint support so they stay
// orthogonal in pixel space.
inline std::array<uint8_t, 64> glyph_template(int glyph) {
  if (glyph < 0 || glyph >= kGlyphInventory)
    throw std::invalid_argument("glyph_template: no such glyph");
  std::array<uint8_t, 64> g{};
  auto at = [&g](int y, int x) -> uint8_t& { return g[y * 8 + x]; };
  switch (glyph) {
    case 0:
      for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) at(y, x) = 1;
      break;
    case 1:
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
          at(y, x) = at(y, 6 + x) = at(6 + y, x) = at(6 + y, 6 + x) = 1;
      break;
    case 2:
      for (int y = 0; y < 8; ++y) {
        at(y, y) = 1;
        at(y, 7 - y) = 1;
      }
      break;
    case 3:
      for (int i = 0; i < 8; ++i) {
        at(3, i) = at(4, i) = 1;
        at(i, 3) = at(i, 4) = 1;
      }
      break;
    case 4:
      for (int y = 0; y < 8; y += 2)
        for (int x = 0; x < 8; ++x) at(y, x) = 1;
      break;
    default:
      for (int x = 0; x < 8; x += 2)
        for (int y = 0; y < 8; ++y) at(y, x) = 1;
      break;
  }
  return g;
}

// OrderSensitive: two distinct marker glyphs at distinct random frames;
// label 0 iff marker A appears before marker B. PresenceOnly: the label is
// the identity of the single marker glyph present. Distractor content is
// uniform pixel noise scaled by `noise`.
struct SynthTaskSpec {
  SynthTask task = SynthTask::OrderSensitive;
  int num_classes = 2;
  int64_t frames_per_video = 16;
  int64_t frame_size = 32;
  int64_t channels = 1;
  double noise = 0.1;
  double fps = 8.0;
  int64_t num_train = 500;
  int64_t num_val = 200;
  uint64_t seed = 7;

  void validate() const {
    if (task == SynthTask::OrderSensitive && num_classes != 2)
      throw std::invalid_argument("synth: order_sensitive is a 2-class task");
    if (task == SynthTask::PresenceOnly &&
        (num_classes < 2 || num_classes > kGlyphInventory))
      throw std::invalid_argument("synth: presence_only supports 2.." +
                                  std::to_string(kGlyphInventory) + " classes");
    if (frames_per_video < 2) throw std::invalid_argument("synth: need >= 2 frames");
    if (frame_size < kGlyphSize + 4)
      throw std::invalid_argument("synth: frame too small for glyphs");
    if (noise < 0.0 || noise > 1.0)
      throw std::invalid_argument("synth: noise must be in [0, 1]");
    if (channels < 1) throw std::invalid_argument("synth: channels must be >= 1");
  }
};

inline SynthTaskSpec synth_spec_from_config(const RunConfig& rc) {
  SynthTaskSpec spec;
  spec.task = synth_task_from_string(rc.get("data.task"));
  spec.num_classes = static_cast<int>(rc.get_int("model.num_classes"));
  spec.frames_per_video = rc.get_int("data.frames_per_video");
  spec.frame_size = rc.get_int("data.frame_size");
  spec.channels = rc.get_int("model.frame_channels");
  spec.noise = rc.get_double("data.noise");
  spec.fps = rc.get_double("data.fps");
  spec.num_train = rc.get_int("data.num_train");
  spec.num_val = rc.get_int("data.num_val");
  spec.seed = static_cast<uint64_t>(rc.get_int("data.seed"));
  spec.validate();
  return spec;
}

namespace detail {

template <class S>
void paint_glyph(Tensor<S>& frames, int64_t frame, int glyph, int64_t y0, int64_t x0) {
  const int64_t C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  const auto pattern = glyph_template(glyph);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < kGlyphSize; ++y)
      for (int64_t x = 0; x < kGlyphSize; ++x)
        if (pattern[y * 8 + x])
          frames.data()[((frame * C + c) * H + y0 + y) * W + x0 + x] = S(1);
}

template <class S>
Video<S> make_synth_video(const SynthTaskSpec& spec, const std::string& id, Rng& rng) {
  Video<S> video;
  video.id = id;
  video.fps = spec.fps;
  video.frames = Tensor<S>::zeros(
      {spec.frames_per_video, spec.channels, spec.frame_size, spec.frame_size});
  for (S& v : video.frames.data()) v = static_cast<S>(spec.noise * rng.uniform());

  const int64_t lo = (spec.frame_size - kGlyphSize) / 3;
  const int64_t hi = spec.frame_size - kGlyphSize - lo;
  auto place = [&](int64_t frame, int glyph) {
    paint_glyph(video.frames, frame, glyph, rng.uniform_int(lo, hi),
                rng.uniform_int(lo, hi));
    video.marker_frames.push_back(frame);
  };

  if (spec.task == SynthTask::OrderSensitive) {
    // Balanced pair sampling: gap and window position uniform, direction a
    // fair coin. Either marker's time alone is (near the borders aside)
    // uninformative, so the label is decided by the order and nothing else.
    const int64_t gap = rng.uniform_int(1, spec.frames_per_video - 1);
    const int64_t first = rng.uniform_int(0, spec.frames_per_video - 1 - gap);
    const bool a_first = rng.bernoulli(0.5);
    const int64_t t_a = a_first ? first : first + gap;
    const int64_t t_b = a_first ? first + gap : first;
    place(t_a, 0);
    place(t_b, 1);
    video.label = t_a < t_b ? 0 : 1;
  } else {
    const int glyph = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
    place(rng.uniform_int(0, spec.frames_per_video - 1), glyph);
    video.label = glyph;
  }
  return video;
}

}  // namespace detail

// Deterministic: the dataset is a pure function of the spec.
template <class S>
std::pair<std::vector<Video<S>>, std::vector<Video<S>>> generate_synth_dataset(
    const SynthTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::pair<std::vector<Video<S>>, std::vector<Video<S>>> out;
  out.first.reserve(spec.num_train);
  out.second.reserve(spec.num_val);
  char id[32];
  for (int64_t i = 0; i < spec.num_train; ++i) {
    std::snprintf(id, sizeof(id), "train_%05lld", static_cast<long long>(i));
    out.first.push_back(detail::make_synth_video<S>(spec, id, rng));
  }
  for (int64_t i = 0; i < spec.num_val; ++i) {
    std::snprintf(id, sizeof(id), "val_%05lld", static_cast<long long>(i));
    out.second.push_back(detail::make_synth_video<S>(spec, id, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout: <dir>/index.csv with id,label,fps,T_orig lines and
// one binary tensor file per video (checkpoint record format).
// ---------------------------------------------------------------------------

template <class S>
void save_dataset(const std::string& dir, const std::vector<Video<S>>& videos) {
  std::filesystem::create_directories(dir);
  std::string index = "id,label,fps,T_orig\n";
  for (const auto& video : videos) {
    TensorFile file;
    file.records.push_back(to_record("frames", video.frames));
    write_tensor_file(dir + "/" + video.id + ".bin", file);
    index += video.id + "," + std::to_string(video.label) + "," +
             format_double(video.fps) + "," + std::to_string(video.frames.dim(0)) + "\n";
  }
  write_text_file(dir + "/index.csv", index);
}

template <class S>
std::vector<Video<S>> load_dataset(const std::string& dir) {
  std::istringstream index(read_text_file(dir + "/index.csv"));
  std::string line;
  if (!std::getline(index, line) || line.rfind("id,label,fps,T_orig", 0) != 0)
    throw std::runtime_error("dataset: bad index.csv header in " + dir);
  std::vector<Video<S>> videos;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, label, fps, t_orig;
    if (!std::getline(row, id, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, fps, ',') || !std::getline(row, t_orig, ','))
      throw std::runtime_error("dataset: malformed index row: " + line);
    Video<S> video;
    video.id = id;
    video.label = std::stoi(label);
    video.fps = std::stod(fps);
    const TensorFile file = read_tensor_file(dir + "/" + id + ".bin");
    if (file.records.size() != 1 || file.records[0].name != "frames")
      throw std::runtime_error("dataset: unexpected records in " + id + ".bin");
    video.frames = from_record<S>(file.records[0]);
    if (video.frames.dim(0) != std::stoll(t_orig))
      throw std::runtime_error("dataset: frame count mismatch for " + id);
    videos.push_back(std::move(video));
  }
  return videos;
}

}  // namespace vtn
