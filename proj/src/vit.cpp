// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/vit.hpp"

#include <algorithm>
#include <cmath>

#include "pcl/error.hpp"

namespace pcl {

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw InputError("vit: image_size " + std::to_string(image_size) +
                     " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (heads == 0 || dim % heads != 0) {
    throw InputError("vit: dim " + std::to_string(dim) + " is not divisible by heads " +
                     std::to_string(heads));
  }
  if (channels == 0 || depth == 0 || num_classes == 0 || mlp_ratio == 0) {
    throw InputError("vit: channels, depth, num_classes and mlp_ratio must be positive");
  }
  for (auto l : prompt_layers) {
    if (l >= depth) {
      throw InputError("vit: prompt layer " + std::to_string(l) + " outside depth " +
                       std::to_string(depth));
    }
  }
}

bool ViTConfig::is_prompt_layer(std::size_t layer) const {
  return std::find(prompt_layers.begin(), prompt_layers.end(), layer) != prompt_layers.end();
}

std::vector<float> patchify(const Image& image, const ViTConfig& config) {
  if (image.height != config.image_size || image.width != config.image_size ||
      image.channels != config.channels) {
    throw InputError("vit: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels) +
                     " does not match configured " + std::to_string(config.image_size) + "x" +
                     std::to_string(config.image_size) + "x" + std::to_string(config.channels));
  }
  const std::size_t ps = config.patch_size, side = config.patches_per_side(), ch = config.channels;
  std::vector<float> out;
  out.reserve(config.num_patches() * config.patch_dim());
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px)
      for (std::size_t y = 0; y < ps; ++y)
        for (std::size_t x = 0; x < ps; ++x)
          for (std::size_t c = 0; c < ch; ++c) out.push_back(image.at(py * ps + y, px * ps + x, c));
  return out;
}

namespace {

template <typename T>
BasicTensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> v(fan_in * fan_out);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return BasicTensor<T>({fan_in, fan_out}, std::move(v));
}

template <typename T>
BasicTensor<T> small_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(0.02 * rng.normal());
  return BasicTensor<T>({rows, cols}, std::move(v));
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return add_row(matmul(x, w), b);
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassifierHead

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t dim, std::size_t num_classes, Rng& rng)
    : weight_(xavier<T>(dim, num_classes, rng)),
      bias_(BasicTensor<T>::zeros({1, num_classes})) {}

template <typename T>
ClassifierHead<T>::ClassifierHead(BasicTensor<T> weight, BasicTensor<T> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.numel() != weight_.dim(1)) {
    throw DimensionError("classifier head: weight " + shape_str(weight_.shape()) +
                         " and bias " + shape_str(bias_.shape()) + " disagree");
  }
}

template <typename T>
BasicTensor<T> ClassifierHead<T>::forward(const BasicTensor<T>& cls) const {
  return linear(cls, weight_, bias_);
}

template <typename T>
std::vector<NamedTensor<T>> ClassifierHead<T>::parameters() const {
  return {{"head.weight", weight_}, {"head.bias", bias_}};
}

template <typename T>
void ClassifierHead<T>::set_trainable(bool trainable) {
  weight_.set_requires_grad(trainable);
  bias_.set_requires_grad(trainable);
}

template <typename T>
ClassifierHead<T> ClassifierHead<T>::clone() const {
  auto w = weight_.detach();
  auto b = bias_.detach();
  w.set_requires_grad(weight_.requires_grad());
  b.set_requires_grad(bias_.requires_grad());
  return ClassifierHead(std::move(w), std::move(b));
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (logits.data()[i * cols + j] > logits.data()[i * cols + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// VitBackbone

template <typename T>
VitBackbone<T>::VitBackbone(ViTConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.dim, hidden = config_.dim * config_.mlp_ratio;
  patch_weight = xavier<T>(config_.patch_dim(), d, rng);
  patch_bias = BasicTensor<T>::zeros({1, d});
  cls_token = small_normal<T>(1, d, rng);
  pos_embed = small_normal<T>(config_.tokens(), d, rng);
  for (std::size_t l = 0; l < config_.depth; ++l) {
    EncoderLayer<T> layer;
    layer.ln1_gamma = BasicTensor<T>::full({1, d}, T(1));
    layer.ln1_beta = BasicTensor<T>::zeros({1, d});
    layer.qkv_weight = xavier<T>(d, 3 * d, rng);
    layer.qkv_bias = BasicTensor<T>::zeros({1, 3 * d});
    layer.proj_weight = xavier<T>(d, d, rng);
    layer.proj_bias = BasicTensor<T>::zeros({1, d});
    layer.ln2_gamma = BasicTensor<T>::full({1, d}, T(1));
    layer.ln2_beta = BasicTensor<T>::zeros({1, d});
    layer.fc1_weight = xavier<T>(d, hidden, rng);
    layer.fc1_bias = BasicTensor<T>::zeros({1, hidden});
    layer.fc2_weight = xavier<T>(hidden, d, rng);
    layer.fc2_bias = BasicTensor<T>::zeros({1, d});
    layers.push_back(std::move(layer));
  }
  norm_gamma = BasicTensor<T>::full({1, d}, T(1));
  norm_beta = BasicTensor<T>::zeros({1, d});
  set_frozen(false);
}

template <typename T>
BasicTensor<T> VitBackbone<T>::embed(const Image& image) const {
  return embed_batch({&image});
}

template <typename T>
BasicTensor<T> VitBackbone<T>::embed_batch(const std::vector<const Image*>& images) const {
  const std::size_t batch = images.size();
  if (batch == 0) throw InputError("vit: empty image batch");
  const std::size_t np = config_.num_patches(), n = config_.tokens();
  std::vector<T> raw;
  raw.reserve(batch * np * config_.patch_dim());
  for (const Image* img : images) {
    const auto p = patchify(*img, config_);
    raw.insert(raw.end(), p.begin(), p.end());
  }
  const BasicTensor<T> patches({batch * np, config_.patch_dim()}, std::move(raw));
  const auto projected = linear(patches, patch_weight, patch_bias);
  const auto stacked = concat<T>({cls_token, projected});
  std::vector<std::size_t> order(batch * n), pos_rows(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    order[b * n] = 0;
    for (std::size_t p = 0; p < np; ++p) order[b * n + 1 + p] = 1 + b * np + p;
    for (std::size_t t = 0; t < n; ++t) pos_rows[b * n + t] = t;
  }
  const auto tokens = gather_rows(stacked, std::span<const std::size_t>(order));
  if (batch == 1) return add(tokens, pos_embed);
  return add(tokens, gather_rows(pos_embed, std::span<const std::size_t>(pos_rows)));
}

template <typename T>
BasicTensor<T> VitBackbone<T>::query_at(std::size_t layer, const BasicTensor<T>& x,
                                        std::size_t batch) const {
  if (!config_.is_prompt_layer(layer)) {
    throw ContractError("vit: layer " + std::to_string(layer) + " is not a prompt layer");
  }
  if (x.rank() != 2 || batch == 0 || x.dim(0) % batch != 0) {
    throw DimensionError("vit: layer input " + shape_str(x.shape()) + " does not hold " +
                         std::to_string(batch) + " sequences");
  }
  const std::size_t n = x.dim(0) / batch;
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * n;
  return gather_rows(x, std::span<const std::size_t>(rows));
}

template <typename T>
BasicTensor<T> VitBackbone<T>::block(const EncoderLayer<T>& layer, const BasicTensor<T>& x,
                                     std::size_t batch, std::size_t seq,
                                     std::vector<T>* probs) const {
  const auto h = layernorm(x, layer.ln1_gamma, layer.ln1_beta);
  const auto qkv = linear(h, layer.qkv_weight, layer.qkv_bias);
  const auto attn = self_attention(qkv, batch, seq, config_.heads, probs);
  const auto x1 = add(x, linear(attn, layer.proj_weight, layer.proj_bias));
  const auto h2 = layernorm(x1, layer.ln2_gamma, layer.ln2_beta);
  const auto mlp = linear(gelu(linear(h2, layer.fc1_weight, layer.fc1_bias)), layer.fc2_weight,
                          layer.fc2_bias);
  return add(x1, mlp);
}

template <typename T>
BasicTensor<T> VitBackbone<T>::encode(const BasicTensor<T>& x0, std::size_t batch,
                                      const PromptProvider& provider,
                                      ForwardTrace<T>* trace) const {
  const std::size_t n = config_.tokens(), d = config_.dim;
  if (x0.rank() != 2 || x0.dim(0) != batch * n || x0.dim(1) != d) {
    throw DimensionError("vit: expected tokens [" + std::to_string(batch * n) + "x" +
                         std::to_string(d) + "], got " + shape_str(x0.shape()));
  }
  std::vector<std::size_t> inject(batch * (n + 1)), strip(batch * n), cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      inject[b * (n + 1) + t] = b * n + t;
      strip[b * n + t] = b * (n + 1) + t;
    }
    inject[b * (n + 1) + n] = batch * n + b;
    cls_rows[b] = b * n;
  }

  BasicTensor<T> x = x0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<T>* probs = nullptr;
    if (trace) {
      trace->input_tokens.push_back(x.dim(0) / batch);
      trace->attention.emplace_back();
      probs = &trace->attention.back();
    }
    if (provider && config_.is_prompt_layer(l)) {
      const auto query = query_at(l, x, batch);
      const auto prompt = provider(l, query);
      if (!prompt.defined() || prompt.rank() != 2 || prompt.dim(0) != batch ||
          prompt.dim(1) != d) {
        throw ContractError("vit: prompt provider for layer " + std::to_string(l) +
                            " returned " +
                            (prompt.defined() ? shape_str(prompt.shape()) : std::string("nothing")) +
                            ", expected [" + std::to_string(batch) + "x" + std::to_string(d) + "]");
      }
      const auto with_prompt =
          gather_rows(concat<T>({x, prompt}), std::span<const std::size_t>(inject));
      if (trace) trace->block_tokens.push_back(n + 1);
      const auto y = block(layers[l], with_prompt, batch, n + 1, probs);
      x = gather_rows(y, std::span<const std::size_t>(strip));
    } else {
      if (trace) trace->block_tokens.push_back(n);
      x = block(layers[l], x, batch, n, probs);
    }
  }
  const auto cls = gather_rows(x, std::span<const std::size_t>(cls_rows));
  return layernorm(cls, norm_gamma, norm_beta);
}

template <typename T>
BasicTensor<T> VitBackbone<T>::encode(const BasicTensor<T>& x0, std::size_t batch) const {
  return encode(x0, batch, PromptProvider{});
}

template <typename T>
BasicTensor<T> VitBackbone<T>::forward_with_prompts(const BasicTensor<T>& x0, std::size_t batch,
                                                    const PromptProvider& provider,
                                                    const ClassifierHead<T>& head,
                                                    ForwardTrace<T>* trace) const {
  return head.forward(encode(x0, batch, provider, trace));
}

template <typename T>
std::vector<NamedTensor<T>> VitBackbone<T>::parameters() const {
  std::vector<NamedTensor<T>> out = {{"patch.weight", patch_weight},
                                     {"patch.bias", patch_bias},
                                     {"cls_token", cls_token},
                                     {"pos_embed", pos_embed}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto p = "layer" + std::to_string(l) + ".";
    const auto& L = layers[l];
    out.push_back({p + "ln1.gamma", L.ln1_gamma});
    out.push_back({p + "ln1.beta", L.ln1_beta});
    out.push_back({p + "qkv.weight", L.qkv_weight});
    out.push_back({p + "qkv.bias", L.qkv_bias});
    out.push_back({p + "proj.weight", L.proj_weight});
    out.push_back({p + "proj.bias", L.proj_bias});
    out.push_back({p + "ln2.gamma", L.ln2_gamma});
    out.push_back({p + "ln2.beta", L.ln2_beta});
    out.push_back({p + "fc1.weight", L.fc1_weight});
    out.push_back({p + "fc1.bias", L.fc1_bias});
    out.push_back({p + "fc2.weight", L.fc2_weight});
    out.push_back({p + "fc2.bias", L.fc2_bias});
  }
  out.push_back({"norm.gamma", norm_gamma});
  out.push_back({"norm.beta", norm_beta});
  return out;
}

template <typename T>
void VitBackbone<T>::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : parameters()) p.tensor.set_requires_grad(!frozen);
}

template <typename T>
VitBackbone<T> VitBackbone<T>::clone() const {
  VitBackbone<T> out = cast<T>();
  // cast() copies values; restore the trainable flags it produced.
  out.set_frozen(frozen_);
  return out;
}

template class ClassifierHead<float>;
template class ClassifierHead<double>;
template class VitBackbone<float>;
template class VitBackbone<double>;
template std::vector<int> argmax_rows(const BasicTensor<float>&);
template std::vector<int> argmax_rows(const BasicTensor<double>&);

}  // namespace pcl
