#include "adrn/model.hpp"

#include "adrn/config.hpp"
#include "adrn/hsi.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace adrn {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ParameterError(std::string("model config: ") + what + " must be >= 1");
  };
  positive(width, "width");
  positive(path_width, "path_width");
  positive(depth, "depth");
  positive(spectral_bands, "spectral_bands");
  positive(reduction, "reduction");
}

template <typename T>
FeatureExtractionBlock<T>::FeatureExtractionBlock(int in_channels, int path_width) {
  for (int field : kFields) {
    FeaturePath<T> path;
    path.field = field;
    if (field == 1) {
      path.conv = ConvKernel<T>(path_width, in_channels, 1);
    } else {
      path.bottleneck = ConvKernel<T>(path_width, in_channels, 1);
      path.conv = ConvKernel<T>(path_width, path_width, field);
    }
    paths.push_back(std::move(path));
  }
}

template <typename T>
int FeatureExtractionBlock<T>::in_channels() const {
  const auto& p = paths.front();
  return p.has_bottleneck() ? p.bottleneck.in_channels : p.conv.in_channels;
}

template <typename T>
int FeatureExtractionBlock<T>::out_channels() const {
  int c = 0;
  for (const auto& p : paths) c += p.conv.out_channels;
  return c;
}

template <typename T>
ChannelAttentionBlock<T>::ChannelAttentionBlock(int width, int reduction)
    : conv1(width, width, 3),
      conv2(width, width, 3),
      squeeze((width + reduction - 1) / reduction, width, 1),
      excite(width, (width + reduction - 1) / reduction, 1) {}

template <typename T>
AdrnModel<T>::AdrnModel(const ModelConfig& cfg)
    : config(cfg),
      spatial(1, cfg.path_width),
      spectral(cfg.spectral_bands, cfg.path_width),
      fuse(cfg.width, 8 * cfg.path_width, 3),
      head(1, cfg.width, 3) {
  cfg.validate();
  blocks.reserve(static_cast<std::size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i) blocks.emplace_back(cfg.width, cfg.reduction);
}

template <typename T>
std::size_t AdrnModel<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_kernel([&](const ConvKernel<T>& k) { n += k.parameter_count(); });
  return n;
}

template <typename T>
Tensor4<T> feature_extraction_forward(const FeatureExtractionBlock<T>& block, const Tensor4<T>& x,
                                      FeatureTrace<T>* trace) {
  if (x.c() != block.in_channels()) {
    throw ShapeError("feature extraction: input has " + std::to_string(x.c()) + " channels, block expects " +
                     std::to_string(block.in_channels()));
  }
  std::vector<Tensor4<T>> outputs;
  outputs.reserve(block.paths.size());
  if (trace) {
    trace->input = x;
    trace->bottleneck.clear();
    trace->activated.clear();
  }
  for (const auto& path : block.paths) {
    Tensor4<T> reduced;
    if (path.has_bottleneck()) reduced = conv2d_same(x, path.bottleneck);
    Tensor4<T> act = relu(conv2d_same(path.has_bottleneck() ? reduced : x, path.conv));
    if (trace) {
      trace->bottleneck.push_back(reduced);
      trace->activated.push_back(act);
    }
    outputs.push_back(std::move(act));
  }
  return concat_channels<T>(std::span<const Tensor4<T>>(outputs));
}

template <typename T>
Tensor4<T> feature_extraction_backward(const FeatureExtractionBlock<T>& block, const FeatureTrace<T>& trace,
                                       const Tensor4<T>& grad_out, FeatureExtractionBlock<T>& grads,
                                       bool input_grad) {
  Tensor4<T> dx;
  if (input_grad) dx = Tensor4<T>(trace.input.shape());
  int offset = 0;
  for (std::size_t p = 0; p < block.paths.size(); ++p) {
    const auto& path = block.paths[p];
    auto& gpath = grads.paths[p];
    const int width = path.conv.out_channels;
    const Tensor4<T> dz = relu_backward(trace.activated[p], slice_channels(grad_out, offset, width));
    offset += width;
    if (path.has_bottleneck()) {
      const Tensor4<T> dreduced = conv2d_same_backward(trace.bottleneck[p], path.conv, dz, gpath.conv);
      const Tensor4<T> d = conv2d_same_backward(trace.input, path.bottleneck, dreduced, gpath.bottleneck, input_grad);
      if (input_grad) add_inplace(dx, d);
    } else {
      const Tensor4<T> d = conv2d_same_backward(trace.input, path.conv, dz, gpath.conv, input_grad);
      if (input_grad) add_inplace(dx, d);
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> channel_attention_weights(const ChannelAttentionBlock<T>& block, const Tensor4<T>& residual) {
  if (residual.c() != block.width()) throw ShapeError("channel attention: channel mismatch");
  return sigmoid(conv2d_same(relu(conv2d_same(global_avg_pool(residual), block.squeeze)), block.excite));
}

template <typename T>
Tensor4<T> cab_forward(const ChannelAttentionBlock<T>& block, const Tensor4<T>& input, Attention mode,
                       CabTrace<T>* trace) {
  if (input.c() != block.width()) {
    throw ShapeError("cab_forward: input has " + std::to_string(input.c()) + " channels, block expects " +
                     std::to_string(block.width()));
  }
  Tensor4<T> hidden = relu(conv2d_same(input, block.conv1));
  Tensor4<T> residual = conv2d_same(hidden, block.conv2);

  Tensor4<T> out = input;
  Tensor4<T> pooled, squeezed, attention;
  if (mode == Attention::learned) {
    pooled = global_avg_pool(residual);
    squeezed = relu(conv2d_same(pooled, block.squeeze));
    attention = sigmoid(conv2d_same(squeezed, block.excite));
    for (int n = 0; n < out.n(); ++n) {
      for (int c = 0; c < out.c(); ++c) {
        const T a = attention(n, c, 0, 0);
        auto dst = out.plane(n, c);
        const auto src = residual.plane(n, c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
      }
    }
  } else {
    add_inplace(out, residual);
  }
  if (trace) {
    trace->input = input;
    trace->hidden = std::move(hidden);
    trace->residual = std::move(residual);
    trace->pooled = std::move(pooled);
    trace->squeezed = std::move(squeezed);
    trace->attention = std::move(attention);
  }
  return out;
}

template <typename T>
Tensor4<T> cab_backward(const ChannelAttentionBlock<T>& block, const CabTrace<T>& trace, const Tensor4<T>& grad_out,
                        ChannelAttentionBlock<T>& grads, Attention mode) {
  const Tensor4<T>& residual = trace.residual;
  Tensor4<T> dresidual = grad_out;
  if (mode == Attention::learned) {
    Tensor4<T> dattention(trace.attention.shape());
    for (int n = 0; n < residual.n(); ++n) {
      for (int c = 0; c < residual.c(); ++c) {
        const T a = trace.attention(n, c, 0, 0);
        const auto g = grad_out.plane(n, c);
        const auto x = residual.plane(n, c);
        auto d = dresidual.plane(n, c);
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * x[i];
          d[i] = g[i] * a;
        }
        dattention(n, c, 0, 0) = acc;
      }
    }
    const Tensor4<T> dexcite = sigmoid_backward(trace.attention, dattention);
    const Tensor4<T> dsqueezed = conv2d_same_backward(trace.squeezed, block.excite, dexcite, grads.excite);
    const Tensor4<T> dsqueeze_pre = relu_backward(trace.squeezed, dsqueezed);
    const Tensor4<T> dpooled = conv2d_same_backward(trace.pooled, block.squeeze, dsqueeze_pre, grads.squeeze);
    add_inplace(dresidual, global_avg_pool_backward(dpooled, residual.shape()));
  }
  const Tensor4<T> dhidden = conv2d_same_backward(trace.hidden, block.conv2, dresidual, grads.conv2);
  const Tensor4<T> dhidden_pre = relu_backward(trace.hidden, dhidden);
  Tensor4<T> dinput = conv2d_same_backward(trace.input, block.conv1, dhidden_pre, grads.conv1);
  add_inplace(dinput, grad_out);
  return dinput;
}

template <typename T>
Tensor4<T> adrn_forward(const AdrnModel<T>& model, const Tensor4<T>& y_spatial, const Tensor4<T>& y_spectral,
                        Attention mode, AdrnTrace<T>* trace) {
  const int k = model.config.spectral_bands;
  if (y_spatial.c() != 1) throw ShapeError("adrn_forward: Y_spatial must have one channel, got " + y_spatial.shape().str());
  if (y_spectral.shape() != Shape4{y_spatial.n(), k, y_spatial.h(), y_spatial.w()}) {
    throw ShapeError("adrn_forward: Y_spectral shape " + y_spectral.shape().str() + " incompatible with Y_spatial " +
                     y_spatial.shape().str() + " and K=" + std::to_string(k));
  }
  Tensor4<T> spatial = feature_extraction_forward(model.spatial, y_spatial, trace ? &trace->spatial : nullptr);
  Tensor4<T> spectral = feature_extraction_forward(model.spectral, y_spectral, trace ? &trace->spectral : nullptr);
  Tensor4<T> fuse_input = concat_channels(spatial, spectral);
  Tensor4<T> features = relu(conv2d_same(fuse_input, model.fuse));
  if (trace) {
    trace->fuse_input = std::move(fuse_input);
    trace->fused = features;
    trace->blocks.assign(model.blocks.size(), CabTrace<T>{});
  }
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    features = cab_forward(model.blocks[i], features, mode, trace ? &trace->blocks[i] : nullptr);
  }
  Tensor4<T> residual = conv2d_same(features, model.head);
  if (trace) trace->head_input = std::move(features);
  return residual;
}

template <typename T>
void adrn_backward(const AdrnModel<T>& model, const AdrnTrace<T>& trace, const Tensor4<T>& grad_residual,
                   AdrnModel<T>& grads, Attention mode) {
  Tensor4<T> d = conv2d_same_backward(trace.head_input, model.head, grad_residual, grads.head);
  for (std::size_t i = model.blocks.size(); i-- > 0;) {
    d = cab_backward(model.blocks[i], trace.blocks[i], d, grads.blocks[i], mode);
  }
  const Tensor4<T> dfuse = relu_backward(trace.fused, d);
  const Tensor4<T> dconcat = conv2d_same_backward(trace.fuse_input, model.fuse, dfuse, grads.fuse);
  const int split = model.spatial.out_channels();
  feature_extraction_backward(model.spatial, trace.spatial, slice_channels(dconcat, 0, split), grads.spatial, false);
  feature_extraction_backward(model.spectral, trace.spectral, slice_channels(dconcat, split, dconcat.c() - split),
                              grads.spectral, false);
}

template <typename T>
Tensor4<T> reconstruct(const Tensor4<T>& y_spatial, const Tensor4<T>& residual) {
  if (y_spatial.shape() != residual.shape()) {
    throw ShapeError("reconstruct: shape " + y_spatial.shape().str() + " vs " + residual.shape().str());
  }
  Tensor4<T> out = y_spatial;
  auto o = out.values();
  auto r = residual.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= r[i];
  return out;
}

double truncated_normal(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> normal(0.0, sigma);
  for (;;) {
    const double v = normal(rng);
    if (std::abs(v) <= 2.0 * sigma) return v;
  }
}

double default_init_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

template <typename T>
void init_params(AdrnModel<T>& model, std::uint64_t seed, double init_std) {
  std::mt19937_64 rng(seed);
  model.for_each_kernel([&](ConvKernel<T>& k) {
    const double sigma = init_std > 0.0 ? init_std : default_init_std(k.fan_in());
    for (T& w : k.weights) w = static_cast<T>(truncated_normal(rng, sigma));
    std::fill(k.bias.begin(), k.bias.end(), T(0));
  });
}

namespace {

constexpr char kMagic[8] = {'A', 'D', 'R', 'N', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename U>
  void le(U v) {
    if constexpr (std::endian::native == std::endian::big) {
      auto raw = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
      std::reverse(raw.begin(), raw.end());
      bytes(raw.data(), raw.size());
    } else {
      bytes(&v, sizeof(U));
    }
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("short write to checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open checkpoint " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("truncated checkpoint " + path_.string());
  }
  template <typename U>
  U le() {
    std::array<unsigned char, sizeof(U)> raw;
    bytes(raw.data(), raw.size());
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<U>(raw);
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

std::string describe(const ModelConfig& c) {
  return "width=" + std::to_string(c.width) + " path_width=" + std::to_string(c.path_width) +
         " depth=" + std::to_string(c.depth) + " K=" + std::to_string(c.spectral_bands) +
         " r=" + std::to_string(c.reduction);
}

}  // namespace

// Layout: magic, u32 version, i32 × 5 config, u32 kernel count, then per
// kernel i32 out/in/k + f64 weights + f64 bias; u8 optimizer flag, and when
// set i64 step, u64 count, f64 first moments, f64 second moments.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const AdrnModel<T>& model, const OptimizerState* optimizer) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.le<std::uint32_t>(kCheckpointVersion);
  const auto& c = model.config;
  for (int v : {c.width, c.path_width, c.depth, c.spectral_bands, c.reduction}) w.le<std::int32_t>(v);
  std::uint32_t count = 0;
  model.for_each_kernel([&](const ConvKernel<T>&) { ++count; });
  w.le<std::uint32_t>(count);
  model.for_each_kernel([&](const ConvKernel<T>& k) {
    w.le<std::int32_t>(k.out_channels);
    w.le<std::int32_t>(k.in_channels);
    w.le<std::int32_t>(k.size);
    for (T v : k.weights) w.le<double>(static_cast<double>(v));
    for (T v : k.bias) w.le<double>(static_cast<double>(v));
  });
  w.le<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    if (optimizer->first_moment.size() != model.parameter_count() ||
        optimizer->second_moment.size() != model.parameter_count()) {
      throw std::invalid_argument("save_checkpoint: optimizer state size does not match the model");
    }
    w.le<std::int64_t>(optimizer->step);
    w.le<std::uint64_t>(optimizer->first_moment.size());
    for (double v : optimizer->first_moment) w.le<double>(v);
    for (double v : optimizer->second_moment) w.le<double>(v);
  }
  w.finish();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  Reader r(path);
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + ": not an ADRN checkpoint");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.width = r.le<std::int32_t>();
  cfg.path_width = r.le<std::int32_t>();
  cfg.depth = r.le<std::int32_t>();
  cfg.spectral_bands = r.le<std::int32_t>();
  cfg.reduction = r.le<std::int32_t>();
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw FormatError(path.string() + ": checkpoint config (" + describe(cfg) + ") does not match expected (" +
                      describe(*expected) + ")");
  }
  Checkpoint<T> ckpt{AdrnModel<T>(cfg), std::nullopt};
  std::uint32_t count = 0;
  ckpt.model.for_each_kernel([&](const ConvKernel<T>&) { ++count; });
  if (r.le<std::uint32_t>() != count) throw FormatError(path.string() + ": kernel count mismatch");
  ckpt.model.for_each_kernel([&](ConvKernel<T>& k) {
    const int out = r.le<std::int32_t>();
    const int in = r.le<std::int32_t>();
    const int size = r.le<std::int32_t>();
    if (out != k.out_channels || in != k.in_channels || size != k.size) {
      throw FormatError(path.string() + ": kernel shape mismatch");
    }
    for (T& v : k.weights) v = static_cast<T>(r.le<double>());
    for (T& v : k.bias) v = static_cast<T>(r.le<double>());
  });
  if (r.le<std::uint8_t>() != 0) {
    OptimizerState state;
    state.step = r.le<std::int64_t>();
    const auto n = r.le<std::uint64_t>();
    if (n != ckpt.model.parameter_count()) throw FormatError(path.string() + ": optimizer state size mismatch");
    state.first_moment.resize(n);
    state.second_moment.resize(n);
    for (double& v : state.first_moment) v = r.le<double>();
    for (double& v : state.second_moment) v = r.le<double>();
    ckpt.optimizer = std::move(state);
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return ckpt;
}

#define ADRN_INSTANTIATE_MODEL(T)                                                                                   \
  template struct FeatureExtractionBlock<T>;                                                                        \
  template struct ChannelAttentionBlock<T>;                                                                         \
  template struct AdrnModel<T>;                                                                                     \
  template Tensor4<T> feature_extraction_forward(const FeatureExtractionBlock<T>&, const Tensor4<T>&,               \
                                                 FeatureTrace<T>*);                                                 \
  template Tensor4<T> feature_extraction_backward(const FeatureExtractionBlock<T>&, const FeatureTrace<T>&,         \
                                                  const Tensor4<T>&, FeatureExtractionBlock<T>&, bool);             \
  template Tensor4<T> channel_attention_weights(const ChannelAttentionBlock<T>&, const Tensor4<T>&);                \
  template Tensor4<T> cab_forward(const ChannelAttentionBlock<T>&, const Tensor4<T>&, Attention, CabTrace<T>*);     \
  template Tensor4<T> cab_backward(const ChannelAttentionBlock<T>&, const CabTrace<T>&, const Tensor4<T>&,          \
                                   ChannelAttentionBlock<T>&, Attention);                                           \
  template Tensor4<T> adrn_forward(const AdrnModel<T>&, const Tensor4<T>&, const Tensor4<T>&, Attention,            \
                                   AdrnTrace<T>*);                                                                  \
  template void adrn_backward(const AdrnModel<T>&, const AdrnTrace<T>&, const Tensor4<T>&, AdrnModel<T>&,           \
                              Attention);                                                                           \
  template Tensor4<T> reconstruct(const Tensor4<T>&, const Tensor4<T>&);                                            \
  template void init_params(AdrnModel<T>&, std::uint64_t, double);                                                  \
  template void save_checkpoint(const std::filesystem::path&, const AdrnModel<T>&, const OptimizerState*);          \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&, const ModelConfig*);

ADRN_INSTANTIATE_MODEL(float)
ADRN_INSTANTIATE_MODEL(double)

}  // namespace adrn
