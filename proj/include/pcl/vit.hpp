// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small pre-norm vision transformer. At each prompt layer the [CLS] row of
// the layer input is handed to a prompt provider; the returned prompt is
// appended as one extra token for that encoder block and removed from the
// block's output, so every layer sees the same token count.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pcl/rng.hpp"
#include "pcl/tensor.hpp"

namespace pcl {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t dim = 64;
  std::size_t depth = 6;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 3;
  std::vector<std::size_t> prompt_layers = {0, 1, 2, 3, 4};

  /// Throws InputError when the geometry is inconsistent.
  void validate() const;
  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  /// Token count including [CLS].
  std::size_t tokens() const { return 1 + num_patches(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  bool is_prompt_layer(std::size_t layer) const;

  bool operator==(const ViTConfig&) const = default;
};

/// Height x width x channels, row-major, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct EncoderLayer {
  BasicTensor<T> ln1_gamma, ln1_beta;
  BasicTensor<T> qkv_weight, qkv_bias;
  BasicTensor<T> proj_weight, proj_bias;
  BasicTensor<T> ln2_gamma, ln2_beta;
  BasicTensor<T> fc1_weight, fc1_bias;
  BasicTensor<T> fc2_weight, fc2_bias;
};

/// Per-layer observations captured during a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<std::size_t> input_tokens;     // rows per sequence entering each layer
  std::vector<std::size_t> block_tokens;     // rows per sequence inside each block
  std::vector<std::vector<T>> attention;     // post-softmax weights per layer
};

template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t dim, std::size_t num_classes, Rng& rng);
  ClassifierHead(BasicTensor<T> weight, BasicTensor<T> bias);

  /// [B x D] -> [B x C].
  BasicTensor<T> forward(const BasicTensor<T>& cls) const;
  BasicTensor<T>& weight() { return weight_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& weight() const { return weight_; }
  const BasicTensor<T>& bias() const { return bias_; }
  std::vector<NamedTensor<T>> parameters() const;
  void set_trainable(bool trainable);
  ClassifierHead clone() const;
  template <typename U>
  ClassifierHead<U> cast() const {
    return ClassifierHead<U>(weight_.template cast<U>(), bias_.template cast<U>());
  }

 private:
  BasicTensor<T> weight_;
  BasicTensor<T> bias_;
};

/// Row-wise argmax; ties resolve to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits);

template <typename T>
class VitBackbone {
 public:
  /// Receives (layer, queries [B x D]) and returns prompts [B x D].
  using PromptProvider =
      std::function<BasicTensor<T>(std::size_t layer, const BasicTensor<T>& query)>;

  VitBackbone() = default;
  VitBackbone(ViTConfig config, Rng& rng);

  const ViTConfig& config() const { return config_; }

  /// [H x W x ch] image -> [N x D] tokens, row 0 is [CLS].
  BasicTensor<T> embed(const Image& image) const;
  /// Stacks the token sequences of several images: [B*N x D].
  BasicTensor<T> embed_batch(const std::vector<const Image*>& images) const;

  /// [CLS] rows of a layer input; contract error if `layer` is not a prompt layer.
  BasicTensor<T> query_at(std::size_t layer, const BasicTensor<T>& x, std::size_t batch = 1) const;

  /// Final-layer [CLS] features [B x D] after the closing layernorm.
  BasicTensor<T> encode(const BasicTensor<T>& x0, std::size_t batch,
                        const PromptProvider& provider, ForwardTrace<T>* trace = nullptr) const;
  /// Without any prompt injection.
  BasicTensor<T> encode(const BasicTensor<T>& x0, std::size_t batch) const;

  BasicTensor<T> forward_with_prompts(const BasicTensor<T>& x0, std::size_t batch,
                                      const PromptProvider& provider,
                                      const ClassifierHead<T>& head,
                                      ForwardTrace<T>* trace = nullptr) const;

  std::vector<NamedTensor<T>> parameters() const;
  /// Frozen parameters never join a gradient tape.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }
  VitBackbone clone() const;
  template <typename U>
  VitBackbone<U> cast() const;

  // Exposed for checkpointing and tests.
  BasicTensor<T> patch_weight, patch_bias, cls_token, pos_embed;
  std::vector<EncoderLayer<T>> layers;
  BasicTensor<T> norm_gamma, norm_beta;

 private:
  template <typename U>
  friend class VitBackbone;

  BasicTensor<T> block(const EncoderLayer<T>& layer, const BasicTensor<T>& x, std::size_t batch,
                       std::size_t seq, std::vector<T>* probs) const;

  ViTConfig config_;
  bool frozen_ = false;
};

/// Flattens an image into [num_patches x patch_dim] rows (patch-major,
/// each patch stored row by row, channels innermost).
std::vector<float> patchify(const Image& image, const ViTConfig& config);

template <typename T>
template <typename U>
VitBackbone<U> VitBackbone<T>::cast() const {
  VitBackbone<U> out;
  out.config_ = config_;
  out.frozen_ = frozen_;
  out.patch_weight = patch_weight.template cast<U>();
  out.patch_bias = patch_bias.template cast<U>();
  out.cls_token = cls_token.template cast<U>();
  out.pos_embed = pos_embed.template cast<U>();
  for (const auto& l : layers) {
    EncoderLayer<U> c;
    c.ln1_gamma = l.ln1_gamma.template cast<U>();
    c.ln1_beta = l.ln1_beta.template cast<U>();
    c.qkv_weight = l.qkv_weight.template cast<U>();
    c.qkv_bias = l.qkv_bias.template cast<U>();
    c.proj_weight = l.proj_weight.template cast<U>();
    c.proj_bias = l.proj_bias.template cast<U>();
    c.ln2_gamma = l.ln2_gamma.template cast<U>();
    c.ln2_beta = l.ln2_beta.template cast<U>();
    c.fc1_weight = l.fc1_weight.template cast<U>();
    c.fc1_bias = l.fc1_bias.template cast<U>();
    c.fc2_weight = l.fc2_weight.template cast<U>();
    c.fc2_bias = l.fc2_bias.template cast<U>();
    out.layers.push_back(std::move(c));
  }
  out.norm_gamma = norm_gamma.template cast<U>();
  out.norm_beta = norm_beta.template cast<U>();
  return out;
}

}  // namespace pcl
