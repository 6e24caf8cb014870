#pragma once

// Deterministic image augmentation: color, noise and transformation methods
// plus the per-mode plans that expand a source set by a fixed multiplier.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pldc/errors.hpp"
#include "pldc/image.hpp"
#include "pldc/manifest.hpp"
#include "pldc/random.hpp"
#include "pldc/text.hpp"

namespace pldc::augment {

// ---------------------------------------------------------------------------
// HSV (hexcone model). h in degrees [0, 360), s and v in [0, 1].

struct Hsv {
  double h = 0, s = 0, v = 0;
};

inline Hsv rgb_to_hsv(Rgb p) {
  const double r = p.r / 255.0, g = p.g / 255.0, b = p.b / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      out.h = 60.0 * ((g - b) / delta);
    } else if (mx == g) {
      out.h = 60.0 * ((b - r) / delta + 2.0);
    } else {
      out.h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (out.h < 0.0) out.h += 360.0;
    if (out.h >= 360.0) out.h -= 360.0;
  }
  return out;
}

struct UnitRgb {
  double r = 0, g = 0, b = 0;
};

inline UnitRgb hsv_to_unit_rgb(Hsv in) {
  const double c = in.v * in.s;
  const double hp = in.h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  const double m = in.v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

/// Clamp to [0, 1], scale to 0..255, round half up.
inline std::uint8_t to_byte(double unit) {
  const double c = std::clamp(unit, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

inline double to_unit(std::uint8_t b) { return b / 255.0; }

inline Rgb hsv_to_rgb(Hsv in) {
  const auto u = hsv_to_unit_rgb(in);
  return {to_byte(u.r), to_byte(u.g), to_byte(u.b)};
}

// Scalar forms of the color methods, in normalized [0, 1] space (unclamped).
inline double brightness_value(double x, double delta) { return x + delta; }
inline double contrast_value(double x, double delta) { return 0.5 + (1.0 + delta) * (x - 0.5); }

// ---------------------------------------------------------------------------
// Operations

enum class AugKind { identity, brightness, hue_shift, contrast, channel_shift, gaussian_noise, rotate, flip };
enum class FlipAxis { horizontal, vertical };

struct AugOp {
  AugKind kind = AugKind::identity;
  double p0 = 0.0;  // delta / degrees / amplitude / mean
  double p1 = 0.0;  // stddev (gaussian_noise only)
  int quarter_turns = 0;
  FlipAxis axis = FlipAxis::horizontal;

  static AugOp identity() { return {}; }
  static AugOp brightness(double d) { return {AugKind::brightness, d}; }
  static AugOp hue_shift(double deg) { return {AugKind::hue_shift, deg}; }
  static AugOp contrast(double d) { return {AugKind::contrast, d}; }
  static AugOp channel_shift(double amplitude) { return {AugKind::channel_shift, amplitude}; }
  static AugOp gaussian_noise(double mean, double stddev) { return {AugKind::gaussian_noise, mean, stddev}; }
  static AugOp rotate(int q) {
    AugOp op{AugKind::rotate};
    op.quarter_turns = q;
    return op;
  }
  static AugOp flip(FlipAxis a) {
    AugOp op{AugKind::flip};
    op.axis = a;
    return op;
  }

  bool geometric() const { return kind == AugKind::rotate || kind == AugKind::flip; }
  friend bool operator==(const AugOp&, const AugOp&) = default;
};

/// Stable text form used in manifests: "brightness(-0.75)", "rotate(1)", "flip(h)", ...
inline std::string to_string(const AugOp& op) {
  using text::fmt_real;
  switch (op.kind) {
    case AugKind::identity: return "identity";
    case AugKind::brightness: return "brightness(" + fmt_real(op.p0) + ")";
    case AugKind::hue_shift: return "hue_shift(" + fmt_real(op.p0) + ")";
    case AugKind::contrast: return "contrast(" + fmt_real(op.p0) + ")";
    case AugKind::channel_shift: return "channel_shift(" + fmt_real(op.p0) + ")";
    case AugKind::gaussian_noise: return "gaussian_noise(" + fmt_real(op.p0) + "," + fmt_real(op.p1) + ")";
    case AugKind::rotate: return "rotate(" + std::to_string(op.quarter_turns) + ")";
    case AugKind::flip: return op.axis == FlipAxis::horizontal ? "flip(h)" : "flip(v)";
  }
  return "?";
}

inline AugOp parse_aug_op(std::string_view s) {
  if (s == "identity") return AugOp::identity();
  const auto open = s.find('(');
  if (open == std::string_view::npos || s.back() != ')') {
    throw ParseError("bad augmentation descriptor '" + std::string(s) + "'");
  }
  const auto name = s.substr(0, open);
  const auto args = s.substr(open + 1, s.size() - open - 2);
  using text::parse_real;
  if (name == "brightness") return AugOp::brightness(parse_real(args));
  if (name == "hue_shift") return AugOp::hue_shift(parse_real(args));
  if (name == "contrast") return AugOp::contrast(parse_real(args));
  if (name == "channel_shift") return AugOp::channel_shift(parse_real(args));
  if (name == "gaussian_noise") {
    const auto comma = args.find(',');
    if (comma == std::string_view::npos) throw ParseError("gaussian_noise needs mean,stddev");
    return AugOp::gaussian_noise(parse_real(args.substr(0, comma)), parse_real(args.substr(comma + 1)));
  }
  if (name == "rotate") {
    const int q = static_cast<int>(parse_real(args));
    if (q < 1 || q > 3) throw ParseError("rotate takes 1, 2 or 3 quarter turns");
    return AugOp::rotate(q);
  }
  if (name == "flip") {
    if (args == "h") return AugOp::flip(FlipAxis::horizontal);
    if (args == "v") return AugOp::flip(FlipAxis::vertical);
  }
  throw ParseError("bad augmentation descriptor '" + std::string(s) + "'");
}

struct AugConfig {
  // Gaussian noise parameters are in normalized [0, 1] units; when false they
  // are read on the 0..255 scale instead.
  bool noise_in_unit_space = true;
};

namespace detail {

template <typename F>
Image map_unit(const Image& img, F&& f) {
  Image out = img;
  for (auto& p : out.pixels()) {
    p = {to_byte(f(to_unit(p.r), 0)), to_byte(f(to_unit(p.g), 1)), to_byte(f(to_unit(p.b), 2))};
  }
  return out;
}

inline Image rotate_cw(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  Image out(h, w);  // width h, height w
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      out.at(c, h - 1 - r) = img.at(r, c);
    }
  }
  return out;
}

}  // namespace detail

/// Applies one operation. Same (img, op, stream_seed) always yields the same bytes.
inline Image apply_aug_op(const Image& img, const AugOp& op, std::uint64_t stream_seed, const AugConfig& cfg = {}) {
  require_valid(img, "apply_aug_op");
  if (!std::isfinite(op.p0) || !std::isfinite(op.p1)) {
    throw InvalidArgument("apply_aug_op: non-finite parameters in " + to_string(op));
  }
  switch (op.kind) {
    case AugKind::identity:
      return img;
    case AugKind::brightness:
      return detail::map_unit(img, [&](double x, int) { return brightness_value(x, op.p0); });
    case AugKind::contrast:
      return detail::map_unit(img, [&](double x, int) { return contrast_value(x, op.p0); });
    case AugKind::hue_shift: {
      Image out = img;
      for (auto& p : out.pixels()) {
        Hsv hsv = rgb_to_hsv(p);
        hsv.h = std::fmod(hsv.h + op.p0, 360.0);
        if (hsv.h < 0.0) hsv.h += 360.0;
        p = hsv_to_rgb(hsv);
      }
      return out;
    }
    case AugKind::channel_shift: {
      Rng rng(stream_seed);
      double offset[3];
      for (double& o : offset) o = rng.uniform(-op.p0, op.p0) / 255.0;
      return detail::map_unit(img, [&](double x, int c) { return x + offset[c]; });
    }
    case AugKind::gaussian_noise: {
      Rng rng(stream_seed);
      const double scale = cfg.noise_in_unit_space ? 1.0 : 1.0 / 255.0;
      return detail::map_unit(img, [&](double x, int) { return x + scale * rng.normal(op.p0, op.p1); });
    }
    case AugKind::rotate: {
      if (op.quarter_turns < 1 || op.quarter_turns > 3) {
        throw InvalidArgument("apply_aug_op: rotate takes 1..3 quarter turns");
      }
      Image out = img;
      for (int i = 0; i < op.quarter_turns; ++i) out = detail::rotate_cw(out);
      return out;
    }
    case AugKind::flip: {
      Image out = img;
      const std::size_t h = img.height(), w = img.width();
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          out.at(r, c) = op.axis == FlipAxis::horizontal ? img.at(r, w - 1 - c) : img.at(h - 1 - r, c);
        }
      }
      return out;
    }
  }
  throw InvalidArgument("apply_aug_op: unknown op");
}

// ---------------------------------------------------------------------------
// Modes and plans

enum class AugmentationMode { none, color, noise, transform, combined };

inline const char* to_string(AugmentationMode m) {
  switch (m) {
    case AugmentationMode::none: return "none";
    case AugmentationMode::color: return "color";
    case AugmentationMode::noise: return "noise";
    case AugmentationMode::transform: return "transform";
    case AugmentationMode::combined: return "combined";
  }
  return "?";
}

inline AugmentationMode parse_mode(std::string_view s) {
  for (auto m : {AugmentationMode::none, AugmentationMode::color, AugmentationMode::noise, AugmentationMode::transform,
                 AugmentationMode::combined}) {
    if (s == to_string(m)) return m;
  }
  throw InvalidArgument("unknown augmentation mode '" + std::string(s) + "'");
}

inline std::vector<AugOp> color_ops() {
  return {AugOp::brightness(-0.75), AugOp::brightness(0.75), AugOp::hue_shift(-20), AugOp::hue_shift(20),
          AugOp::contrast(-0.25),   AugOp::contrast(0.25),   AugOp::channel_shift(75)};
}

inline std::vector<AugOp> transform_ops() {
  return {AugOp::rotate(1), AugOp::rotate(2), AugOp::rotate(3), AugOp::flip(FlipAxis::horizontal),
          AugOp::flip(FlipAxis::vertical)};
}

/// Operations generated per source image; the first is always identity.
/// Combined mode carries two independent noise draws, giving 1 + 7 + 5 + 2 = 15.
inline std::vector<AugOp> ops_for_mode(AugmentationMode mode) {
  std::vector<AugOp> ops{AugOp::identity()};
  const auto append = [&ops](const std::vector<AugOp>& more) { ops.insert(ops.end(), more.begin(), more.end()); };
  const AugOp noise = AugOp::gaussian_noise(0.0, 1.0);
  switch (mode) {
    case AugmentationMode::none: break;
    case AugmentationMode::color: append(color_ops()); break;
    case AugmentationMode::transform: append(transform_ops()); break;
    case AugmentationMode::noise: ops.push_back(noise); break;
    case AugmentationMode::combined:
      append(color_ops());
      append(transform_ops());
      ops.push_back(noise);
      ops.push_back(noise);
      break;
  }
  return ops;
}

inline std::size_t multiplier(AugmentationMode mode) { return ops_for_mode(mode).size(); }

struct PlanEntry {
  std::string source_id;
  std::size_t op_index = 0;
  AugOp op;
  std::uint64_t stream_seed = 0;

  /// Identifier of the produced image: "<source_id>@<op_index>".
  std::string output_id() const { return source_id + "@" + std::to_string(op_index); }
  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct AugPlan {
  std::vector<PlanEntry> entries;
  std::size_t size() const { return entries.size(); }
};

/// Entries are grouped per source in source order; stream seeds come from
/// derive_seed(global_seed, source_id, op_index).
inline AugPlan build_plan(AugmentationMode mode, const std::vector<std::string>& source_ids, std::uint64_t global_seed) {
  std::set<std::string_view> seen;
  for (const auto& id : source_ids) {
    if (!seen.insert(id).second) throw InvalidArgument("build_plan: duplicate source id '" + id + "'");
  }
  const auto ops = ops_for_mode(mode);
  AugPlan plan;
  plan.entries.reserve(ops.size() * source_ids.size());
  for (const auto& id : source_ids) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
      plan.entries.push_back({id, i, ops[i], derive_seed(global_seed, id, i)});
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image load(const std::string& id) const = 0;
  /// Base record for outputs derived from `id` (dataset/class fields).
  virtual ImageRecord describe(const std::string& id) const {
    ImageRecord r;
    r.id = id;
    return r;
  }
};

class ImageSink {
 public:
  virtual ~ImageSink() = default;
  /// Stores the image and returns its path. Must be safe to call concurrently.
  virtual std::string store(const std::string& output_id, const Image& img) = 0;
};

/// Maps ids to relative paths: characters outside [A-Za-z0-9._-/@] become '_',
/// and ".." components are neutralized.
inline std::string sanitize_id(std::string_view id) {
  std::string out;
  out.reserve(id.size());
  for (char ch : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-' ||
                    ch == '/' || ch == '@';
    out.push_back(ok ? ch : '_');
  }
  std::size_t pos;
  while ((pos = out.find("..")) != std::string::npos) out.replace(pos, 2, "__");
  while (!out.empty() && out.front() == '/') out.erase(out.begin());
  return out;
}

/// Reads images below a root directory. Ids are root-relative generic paths;
/// the first path component is taken as the class.
class DirectorySource : public ImageSource {
 public:
  explicit DirectorySource(std::filesystem::path root) : root_(std::move(root)) {
    if (!std::filesystem::is_directory(root_)) throw IoError("not a directory: " + root_.string());
  }

  std::vector<std::string> list_ids() const {
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root_)) {
      if (e.is_regular_file() && has_image_extension(e.path())) {
        ids.push_back(std::filesystem::relative(e.path(), root_).generic_string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  Image load(const std::string& id) const override {
    const auto p = root_ / id;
    if (!std::filesystem::is_regular_file(p)) throw IoError("source image not found: " + id);
    return load_image(p);
  }

  ImageRecord describe(const std::string& id) const override {
    ImageRecord r;
    r.id = id;
    r.source_dataset = root_.filename().string();
    const auto slash = id.find('/');
    r.original_class = slash == std::string::npos ? "" : id.substr(0, slash);
    r.final_class = r.original_class;
    r.path = (root_ / id).generic_string();
    return r;
  }

 private:
  std::filesystem::path root_;
};

class DirectorySink : public ImageSink {
 public:
  DirectorySink(std::filesystem::path root, ImageFormat fmt) : root_(std::move(root)), fmt_(fmt) {}

  std::string store(const std::string& output_id, const Image& img) override {
    const auto path = root_ / (sanitize_id(output_id) + extension(fmt_));
    save_image(path, img, fmt_);
    return path.generic_string();
  }

 private:
  std::filesystem::path root_;
  ImageFormat fmt_;
};

struct ExecOptions {
  unsigned jobs = 1;
  AugConfig aug;
};

/// Runs every plan entry and returns one manifest row per entry, in plan order
/// regardless of completion order. Each row carries lineage
/// {source_id, op descriptor, stream_seed}.
inline std::vector<ImageRecord> execute_plan(const AugPlan& plan, const ImageSource& source, ImageSink& sink,
                                             const ExecOptions& opts = {}) {
  std::vector<ImageRecord> rows(plan.size());
  std::vector<std::exception_ptr> errors(plan.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < plan.size(); i = next++) {
      const auto& e = plan.entries[i];
      try {
        const Image src = source.load(e.source_id);
        const Image out = apply_aug_op(src, e.op, e.stream_seed, opts.aug);
        ImageRecord r = source.describe(e.source_id);
        r.id = e.output_id();
        r.split = Split::unassigned;
        r.lineage = Lineage{e.source_id, to_string(e.op), e.stream_seed};
        r.path = sink.store(r.id, out);
        r.width = static_cast<std::int64_t>(out.width());
        r.height = static_cast<std::int64_t>(out.height());
        rows[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(opts.jobs, static_cast<unsigned>(plan.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return rows;
}

}  // namespace pldc::augment
