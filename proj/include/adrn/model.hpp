#pragma once

#include "adrn/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

namespace adrn {

/// Network widths. Defaults are the full-size configuration.
struct ModelConfig {
  int width = 64;           // feature maps inside the CAB stack
  int path_width = 16;      // output channels of each multi-scale path
  int depth = 9;            // number of channel-attention blocks
  int spectral_bands = 64;  // K adjacent bands fed to the spectral branch
  int reduction = 10;       // channel squeeze ratio r of the attention branch

  /// ceil(width / reduction), never zero.
  [[nodiscard]] int squeeze_width() const { return (width + reduction - 1) / reduction; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One reception-field path: optional 1×1 bottleneck, then a k×k conv + ReLU.
template <typename T>
struct FeaturePath {
  int field = 1;
  ConvKernel<T> bottleneck;  // empty for the 1×1 path
  ConvKernel<T> conv;

  [[nodiscard]] bool has_bottleneck() const { return field > 1; }
};

/// Four parallel paths with reception fields 1, 3, 5, 7, concatenated.
template <typename T>
struct FeatureExtractionBlock {
  static constexpr std::array<int, 4> kFields{1, 3, 5, 7};

  std::vector<FeaturePath<T>> paths;

  FeatureExtractionBlock() = default;
  FeatureExtractionBlock(int in_channels, int path_width);

  [[nodiscard]] int in_channels() const;
  [[nodiscard]] int out_channels() const;
};

/// F_i = F_{i-1} + W_CA ⊙ X_i with X_i = W2 * relu(W1 * F_{i-1}) and
/// W_CA = sigmoid(W4 * relu(W3 * GP(X_i))).
template <typename T>
struct ChannelAttentionBlock {
  ConvKernel<T> conv1;    // 3×3, C -> C
  ConvKernel<T> conv2;    // 3×3, C -> C
  ConvKernel<T> squeeze;  // 1×1, C -> ceil(C/r)
  ConvKernel<T> excite;   // 1×1, ceil(C/r) -> C

  ChannelAttentionBlock() = default;
  ChannelAttentionBlock(int width, int reduction);

  [[nodiscard]] int width() const { return conv1.out_channels; }
};

template <typename T>
struct AdrnModel {
  ModelConfig config;
  FeatureExtractionBlock<T> spatial;   // 1 input channel
  FeatureExtractionBlock<T> spectral;  // K input channels
  ConvKernel<T> fuse;                  // 3×3, 8·path_width -> width
  std::vector<ChannelAttentionBlock<T>> blocks;
  ConvKernel<T> head;                  // 3×3, width -> 1

  AdrnModel() = default;
  /// All parameters zero.
  explicit AdrnModel(const ModelConfig& cfg);

  /// Visits every kernel in a fixed order (used by init, optimizer and checkpoints).
  template <typename Fn>
  void for_each_kernel(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each_kernel(Fn&& fn) const {
    visit(*this, fn);
  }

  [[nodiscard]] std::size_t parameter_count() const;

  /// Same parameters converted to another scalar type.
  template <typename U>
  [[nodiscard]] AdrnModel<U> cast() const;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    for (auto* block : {&self.spatial, &self.spectral}) {
      for (auto& path : block->paths) {
        if (path.has_bottleneck()) fn(path.bottleneck);
        fn(path.conv);
      }
    }
    fn(self.fuse);
    for (auto& b : self.blocks) {
      fn(b.conv1);
      fn(b.conv2);
      fn(b.squeeze);
      fn(b.excite);
    }
    fn(self.head);
  }
};

template <typename T>
template <typename U>
AdrnModel<U> AdrnModel<T>::cast() const {
  AdrnModel<U> out(config);
  std::vector<const ConvKernel<T>*> src;
  for_each_kernel([&](const ConvKernel<T>& k) { src.push_back(&k); });
  std::size_t i = 0;
  out.for_each_kernel([&](ConvKernel<U>& dst) {
    const ConvKernel<T>& s = *src[i++];
    dst.weights.assign(s.weights.begin(), s.weights.end());
    dst.bias.assign(s.bias.begin(), s.bias.end());
  });
  return out;
}

// Intermediate activations kept for the backward pass.

template <typename T>
struct FeatureTrace {
  Tensor4<T> input;
  std::vector<Tensor4<T>> bottleneck;  // per path; empty tensor for the 1×1 path
  std::vector<Tensor4<T>> activated;   // per path, post-ReLU
};

template <typename T>
struct CabTrace {
  Tensor4<T> input;      // F_{i-1}
  Tensor4<T> hidden;     // relu(W1 * F_{i-1})
  Tensor4<T> residual;   // X_i
  Tensor4<T> pooled;     // GP(X_i)
  Tensor4<T> squeezed;   // relu(W3 * GP(X_i))
  Tensor4<T> attention;  // W_CA
};

template <typename T>
struct AdrnTrace {
  FeatureTrace<T> spatial;
  FeatureTrace<T> spectral;
  Tensor4<T> fuse_input;
  Tensor4<T> fused;  // post-ReLU
  std::vector<CabTrace<T>> blocks;
  Tensor4<T> head_input;
};

enum class Attention {
  learned,
  /// W_CA pinned to 1: each block degenerates to a plain residual block.
  bypass,
};

template <typename T>
Tensor4<T> feature_extraction_forward(const FeatureExtractionBlock<T>& block, const Tensor4<T>& x,
                                      FeatureTrace<T>* trace = nullptr);

/// Accumulates parameter gradients into `grads`; returns dL/dx when `input_grad`.
template <typename T>
Tensor4<T> feature_extraction_backward(const FeatureExtractionBlock<T>& block, const FeatureTrace<T>& trace,
                                       const Tensor4<T>& grad_out, FeatureExtractionBlock<T>& grads,
                                       bool input_grad = true);

/// (N, C, 1, 1) attention weights, each in (0, 1).
template <typename T>
Tensor4<T> channel_attention_weights(const ChannelAttentionBlock<T>& block, const Tensor4<T>& residual);

template <typename T>
Tensor4<T> cab_forward(const ChannelAttentionBlock<T>& block, const Tensor4<T>& input,
                       Attention mode = Attention::learned, CabTrace<T>* trace = nullptr);

template <typename T>
Tensor4<T> cab_backward(const ChannelAttentionBlock<T>& block, const CabTrace<T>& trace, const Tensor4<T>& grad_out,
                        ChannelAttentionBlock<T>& grads, Attention mode = Attention::learned);

/// Predicted residual noise R, shape (N, 1, p, p).
template <typename T>
Tensor4<T> adrn_forward(const AdrnModel<T>& model, const Tensor4<T>& y_spatial, const Tensor4<T>& y_spectral,
                        Attention mode = Attention::learned, AdrnTrace<T>* trace = nullptr);

/// Accumulates dL/dθ for every kernel into `grads` given dL/dR.
template <typename T>
void adrn_backward(const AdrnModel<T>& model, const AdrnTrace<T>& trace, const Tensor4<T>& grad_residual,
                   AdrnModel<T>& grads, Attention mode = Attention::learned);

/// X̂ = Y_spatial - R.
template <typename T>
Tensor4<T> reconstruct(const Tensor4<T>& y_spatial, const Tensor4<T>& residual);

/// N(0, sigma²) truncated to ±2·sigma by rejection.
double truncated_normal(std::mt19937_64& rng, double sigma);

/// Fan-in scaled deviation sqrt(2 / fan_in) used when no explicit init std is given.
double default_init_std(int fan_in);

/// Truncated-normal weights, zero biases. `init_std <= 0` selects
/// default_init_std per kernel.
template <typename T>
void init_params(AdrnModel<T>& model, std::uint64_t seed, double init_std = 0.0);

// Checkpoints.

/// Adam moments flattened in for_each_kernel order (weights then bias per kernel).
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

template <typename T>
struct Checkpoint {
  AdrnModel<T> model;
  std::optional<OptimizerState> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const AdrnModel<T>& model,
                     const OptimizerState* optimizer = nullptr);

/// Throws FormatError on a bad file or when `expected` is given and differs
/// from the stored configuration.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace adrn
