#pragma once

// Numerical kernels for the PLDC-Net head: SiLU, global pooling, channel
// attention, and parameter accounting.
//
// Tensor layout is fixed: row-major (h, w, c) with channels innermost, i.e.
// element (h, w, c) lives at index (h * width + w) * channels + c.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pldc/errors.hpp"

namespace pldc::tensorkit {

namespace detail {

inline void require_finite(double x, const char* who) {
  if (!std::isfinite(x)) {
    throw InvalidArgument(std::string(who) + ": non-finite input");
  }
}

}  // namespace detail

/// Logistic sigmoid 1 / (1 + e^-x), evaluated without overflow for large |x|.
inline double sigmoid(double x) {
  detail::require_finite(x, "sigmoid");
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// SiLU / Swish-1: x * sigmoid(x).
inline double silu(double x) {
  detail::require_finite(x, "silu");
  return x * sigmoid(x);
}

/// d/dx silu(x) = s(x) * (1 + x * (1 - s(x))).
inline double silu_grad(double x) {
  detail::require_finite(x, "silu_grad");
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

enum class ActivationKind { relu, silu };

inline double activate(ActivationKind kind, double x) {
  return kind == ActivationKind::relu ? relu(x) : silu(x);
}

inline const char* to_string(ActivationKind kind) {
  return kind == ActivationKind::relu ? "relu" : "silu";
}

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height == 0 || width == 0 || channels == 0) {
      throw InvalidArgument("Tensor: dimensions must be positive");
    }
    if (data_.size() != height * width * channels) {
      throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(height * width * channels));
    }
  }

  static Tensor filled(std::size_t height, std::size_t width, std::size_t channels, double value) {
    return Tensor(height, width, channels, std::vector<double>(height * width * channels, value));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t spatial() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t h, std::size_t w, std::size_t c) const {
    return (h * width_ + w) * channels_ + c;
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const { return data_[index(h, w, c)]; }
  double& at(std::size_t h, std::size_t w, std::size_t c) { return data_[index(h, w, c)]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

struct ChannelVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  friend bool operator==(const ChannelVector&, const ChannelVector&) = default;
};

namespace detail {

inline void require_pool_input(const Tensor& t, const char* who) {
  if (t.empty()) {
    throw InvalidArgument(std::string(who) + ": empty tensor");
  }
  if (!t.all_finite()) {
    throw InvalidArgument(std::string(who) + ": non-finite tensor values");
  }
}

}  // namespace detail

inline ChannelVector global_avg_pool(const Tensor& t) {
  detail::require_pool_input(t, "global_avg_pool");
  std::vector<double> sums(t.channels(), 0.0);
  const auto data = t.data();
  for (std::size_t p = 0; p < t.spatial(); ++p) {
    for (std::size_t c = 0; c < t.channels(); ++c) {
      sums[c] += data[p * t.channels() + c];
    }
  }
  const double n = static_cast<double>(t.spatial());
  for (auto& s : sums) s /= n;
  return {std::move(sums)};
}

inline ChannelVector global_max_pool(const Tensor& t) {
  detail::require_pool_input(t, "global_max_pool");
  std::vector<double> best(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(t.channels()));
  const auto data = t.data();
  for (std::size_t p = 1; p < t.spatial(); ++p) {
    for (std::size_t c = 0; c < t.channels(); ++c) {
      best[c] = std::max(best[c], data[p * t.channels() + c]);
    }
  }
  return {std::move(best)};
}

// Dense row-major matrix, rows x cols.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  static Matrix zeros(std::size_t rows, std::size_t cols) {
    return {rows, cols, std::vector<double>(rows * cols, 0.0)};
  }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

// Encoder/decoder MLP without biases: m(v) = decoderᵀ · act(encoderᵀ · v).
// encoder is C x (C/r), decoder is (C/r) x C.
struct AttentionMlp {
  Matrix encoder;
  Matrix decoder;
};

struct AttentionParams {
  std::size_t channels = 0;
  std::size_t ratio = 8;
  AttentionMlp mlp;
  // Present only for the unshared configuration: applied to the max-pooled branch.
  std::optional<AttentionMlp> max_branch_mlp;
  ActivationKind hidden_activation = ActivationKind::relu;

  bool shared() const { return !max_branch_mlp.has_value(); }
  std::size_t hidden() const { return ratio == 0 ? 0 : channels / ratio; }

  static AttentionParams zeros(std::size_t channels, std::size_t ratio, bool shared = true) {
    if (ratio == 0 || channels == 0 || channels % ratio != 0) {
      throw InvalidArgument("AttentionParams: ratio must divide channels");
    }
    const std::size_t h = channels / ratio;
    AttentionParams p;
    p.channels = channels;
    p.ratio = ratio;
    p.mlp = {Matrix::zeros(channels, h), Matrix::zeros(h, channels)};
    if (!shared) {
      p.max_branch_mlp = AttentionMlp{Matrix::zeros(channels, h), Matrix::zeros(h, channels)};
    }
    return p;
  }
};

namespace detail {

inline void validate_mlp(const AttentionMlp& m, std::size_t c, std::size_t h) {
  if (m.encoder.rows != c || m.encoder.cols != h || m.encoder.data.size() != c * h ||
      m.decoder.rows != h || m.decoder.cols != c || m.decoder.data.size() != h * c) {
    throw DimensionError("AttentionParams: MLP shape does not match channels/ratio");
  }
  auto finite = [](const Matrix& mat) {
    return std::all_of(mat.data.begin(), mat.data.end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(m.encoder) || !finite(m.decoder)) {
    throw InvalidArgument("AttentionParams: non-finite weights");
  }
}

inline std::vector<double> apply_mlp(const AttentionMlp& m, const ChannelVector& v, ActivationKind act) {
  const std::size_t c = m.encoder.rows;
  const std::size_t h = m.encoder.cols;
  std::vector<double> hidden(h, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      hidden[j] += m.encoder.at(i, j) * v[i];
    }
  }
  for (auto& x : hidden) x = activate(act, x);
  std::vector<double> out(c, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < c; ++i) {
      out[i] += m.decoder.at(j, i) * hidden[j];
    }
  }
  return out;
}

}  // namespace detail

inline void validate(const AttentionParams& p) {
  if (p.channels == 0 || p.ratio == 0 || p.channels % p.ratio != 0) {
    throw InvalidArgument("AttentionParams: ratio " + std::to_string(p.ratio) +
                          " must divide channels " + std::to_string(p.channels));
  }
  detail::validate_mlp(p.mlp, p.channels, p.hidden());
  if (p.max_branch_mlp) detail::validate_mlp(*p.max_branch_mlp, p.channels, p.hidden());
}

struct AttentionResult {
  ChannelVector weights;
  Tensor out;
};

/// Channel attention: weights = sigmoid(m(gap(t)) + m(gmp(t))), out = t scaled per channel.
/// Weights are kept strictly inside (0, 1) even where the sigmoid saturates in double.
inline AttentionResult channel_attention_forward(const Tensor& t, const AttentionParams& p) {
  validate(p);
  if (t.channels() != p.channels) {
    throw DimensionError("channel_attention_forward: tensor has " + std::to_string(t.channels()) +
                         " channels, params expect " + std::to_string(p.channels));
  }
  const ChannelVector avg = global_avg_pool(t);
  const ChannelVector max = global_max_pool(t);
  const auto a = detail::apply_mlp(p.mlp, avg, p.hidden_activation);
  const auto b = detail::apply_mlp(p.max_branch_mlp ? *p.max_branch_mlp : p.mlp, max, p.hidden_activation);

  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  ChannelVector weights{std::vector<double>(p.channels)};
  for (std::size_t c = 0; c < p.channels; ++c) {
    weights.values[c] = std::clamp(sigmoid(a[c] + b[c]), lo, hi);
  }

  std::vector<double> out(t.data().begin(), t.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= weights.values[i % p.channels];
  }
  return {std::move(weights), Tensor(t.height(), t.width(), t.channels(), std::move(out))};
}

/// Weights + optional bias of a fully connected layer.
inline std::uint64_t dense_param_count(std::uint64_t inputs, std::uint64_t outputs, bool bias) {
  if (inputs == 0 || outputs == 0) {
    throw InvalidArgument("dense_param_count: sizes must be >= 1");
  }
  return inputs * outputs + (bias ? outputs : 0);
}

/// Parameters of the attention MLP(s). Shared and bias-free gives 2·C²/r.
inline std::uint64_t ca_param_count(std::uint64_t channels, std::uint64_t ratio, bool shared, bool bias) {
  if (channels == 0 || ratio == 0 || channels % ratio != 0) {
    throw InvalidArgument("ca_param_count: ratio " + std::to_string(ratio) + " does not divide channels " +
                          std::to_string(channels));
  }
  const std::uint64_t hidden = channels / ratio;
  const std::uint64_t per_mlp = dense_param_count(channels, hidden, bias) + dense_param_count(hidden, channels, bias);
  return shared ? per_mlp : 2 * per_mlp;
}

// ---------------------------------------------------------------------------
// Layer plan

enum class StageKind { preamble, dense_block, postamble, channel_attention, global_avg_pool, classifier };

inline const char* to_string(StageKind k) {
  switch (k) {
    case StageKind::preamble: return "preamble";
    case StageKind::dense_block: return "dense_block";
    case StageKind::postamble: return "postamble";
    case StageKind::channel_attention: return "channel_attention";
    case StageKind::global_avg_pool: return "global_avg_pool";
    case StageKind::classifier: return "classifier";
  }
  return "?";
}

struct Stage {
  std::string name;
  StageKind kind;
  // Nonlinearity used inside the stage; pooling and the head carry none.
  std::optional<ActivationKind> activation;
};

struct LayerPlan {
  std::vector<Stage> stages;

  /// Index of the channel-attention stage, if any.
  std::optional<std::size_t> attention_index() const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (stages[i].kind == StageKind::channel_attention) return i;
    }
    return std::nullopt;
  }
};

struct PlanOptions {
  // Permits SiLU inside the attention MLP (the variant that scored worse).
  bool allow_silu_in_attention = false;
};

/// Throws ValidationError unless the attention stage appears exactly once,
/// directly after the postamble and directly before global average pooling,
/// with ReLU inside the block and SiLU in the convolutional stages.
inline void validate(const LayerPlan& plan, PlanOptions opts = {}) {
  std::size_t count = 0;
  for (const auto& s : plan.stages) count += s.kind == StageKind::channel_attention;
  if (count != 1) {
    throw ValidationError("LayerPlan: expected exactly one channel_attention stage, found " + std::to_string(count));
  }
  const std::size_t i = *plan.attention_index();
  if (i == 0 || plan.stages[i - 1].kind != StageKind::postamble) {
    throw ValidationError("LayerPlan: channel_attention must follow the postamble stage directly");
  }
  if (i + 1 >= plan.stages.size() || plan.stages[i + 1].kind != StageKind::global_avg_pool) {
    throw ValidationError("LayerPlan: channel_attention must precede global_avg_pool directly");
  }
  const auto& ca = plan.stages[i];
  if (!ca.activation) {
    throw ValidationError("LayerPlan: channel_attention needs a hidden activation");
  }
  if (*ca.activation == ActivationKind::silu && !opts.allow_silu_in_attention) {
    throw ValidationError("LayerPlan: channel_attention uses relu internally (silu requires override)");
  }
  for (const auto& s : plan.stages) {
    const bool conv = s.kind == StageKind::preamble || s.kind == StageKind::dense_block ||
                      s.kind == StageKind::postamble;
    if (conv && s.activation != ActivationKind::silu) {
      throw ValidationError("LayerPlan: stage '" + s.name + "' must use silu");
    }
  }
}

/// DenseNet201-shaped plan with SiLU everywhere and one attention block before GAP.
inline LayerPlan pldc_net_plan() {
  LayerPlan p;
  p.stages.push_back({"preamble", StageKind::preamble, ActivationKind::silu});
  for (int b = 1; b <= 4; ++b) {
    p.stages.push_back({"dense_block_" + std::to_string(b), StageKind::dense_block, ActivationKind::silu});
  }
  p.stages.push_back({"postamble", StageKind::postamble, ActivationKind::silu});
  p.stages.push_back({"channel_attention", StageKind::channel_attention, ActivationKind::relu});
  p.stages.push_back({"global_avg_pool", StageKind::global_avg_pool, std::nullopt});
  p.stages.push_back({"classifier", StageKind::classifier, std::nullopt});
  return p;
}

// ---------------------------------------------------------------------------
// Text format: "H W C" then H*W lines of C space-separated values.

inline void write_tensor_text(std::ostream& os, const Tensor& t) {
  os << t.height() << ' ' << t.width() << ' ' << t.channels() << '\n';
  std::ostringstream line;
  line << std::setprecision(17);
  const auto data = t.data();
  for (std::size_t p = 0; p < t.spatial(); ++p) {
    line.str("");
    for (std::size_t c = 0; c < t.channels(); ++c) {
      if (c) line << ' ';
      line << data[p * t.channels() + c];
    }
    os << line.str() << '\n';
  }
}

inline Tensor read_tensor_text(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("tensor text: missing header");
  std::istringstream hs(line);
  long long h = 0, w = 0, c = 0;
  if (!(hs >> h >> w >> c) || h <= 0 || w <= 0 || c <= 0) {
    throw ParseError("tensor text: header must be three positive integers", lineno);
  }
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(h * w * c));
  for (long long p = 0; p < h * w; ++p) {
    if (!next_line()) throw ParseError("tensor text: expected " + std::to_string(h * w) + " rows", lineno + 1);
    std::istringstream ls(line);
    double v;
    long long n = 0;
    while (ls >> v) {
      data.push_back(v);
      ++n;
    }
    if (!ls.eof() || n != c) {
      throw ParseError("tensor text: expected " + std::to_string(c) + " values", lineno);
    }
  }
  return Tensor(static_cast<std::size_t>(h), static_cast<std::size_t>(w), static_cast<std::size_t>(c),
                std::move(data));
}

}  // namespace pldc::tensorkit
