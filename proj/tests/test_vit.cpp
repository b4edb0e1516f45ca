// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>
#include <numeric>

#include "oracles.hpp"
#include "pcl/error.hpp"
#include "pcl/vit.hpp"

using namespace pcl;

namespace {

ViTConfig tiny(std::size_t image = 16, std::size_t dim = 32, std::size_t depth = 2) {
  ViTConfig c;
  c.image_size = image;
  c.patch_size = 8;
  c.channels = 3;
  c.dim = dim;
  c.depth = depth;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  c.prompt_layers = {};
  for (std::size_t l = 0; l < depth; ++l) c.prompt_layers.push_back(l);
  return c;
}

Image random_image(const ViTConfig& c, Rng& rng) {
  Image img{c.image_size, c.image_size, c.channels, {}};
  img.pixels.resize(c.image_size * c.image_size * c.channels);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny();
  CHECK_NOTHROW(c.validate());
  c.image_size = 20;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = tiny();
  c.prompt_layers = {0, 2};
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("embedding shapes") {
  Rng rng(1);
  const VitBackbone<float> small(tiny(16, 32), rng);
  CHECK(small.embed(random_image(small.config(), rng)).shape() == Shape{5, 32});

  const VitBackbone<float> desk(tiny(32, 32), rng);
  CHECK(desk.config().tokens() == 17);
  CHECK(desk.embed(random_image(desk.config(), rng)).rows() == 17);

  auto wrong = tiny(32, 32);
  Image img = random_image(wrong, rng);
  CHECK_THROWS_AS(small.embed(img), InputError);
}

TEST_CASE("zero image puts cls plus position 0 in row 0") {
  Rng rng(2);
  const VitBackbone<float> vit(tiny(), rng);
  const auto& c = vit.config();
  const Image zero{c.image_size, c.image_size, c.channels,
                   std::vector<float>(c.image_size * c.image_size * c.channels, 0.0f)};
  const auto x = vit.embed(zero);
  for (std::size_t d = 0; d < c.dim; ++d) {
    CHECK(x.at(0, d) == vit.cls_token.at(0, d) + vit.pos_embed.at(0, d));
  }
  // every patch row reduces to bias + position
  for (std::size_t t = 1; t < c.tokens(); ++t) {
    CHECK(x.at(t, 3) == vit.patch_bias.at(0, 3) + vit.pos_embed.at(t, 3));
  }
}

TEST_CASE("batched embedding stacks single embeddings") {
  Rng rng(3);
  const VitBackbone<float> vit(tiny(), rng);
  const auto a = random_image(vit.config(), rng), b = random_image(vit.config(), rng);
  const auto both = vit.embed_batch({&a, &b});
  const auto ea = vit.embed(a), eb = vit.embed(b);
  const std::size_t n = vit.config().tokens(), d = vit.config().dim;
  REQUIRE(both.rows() == 2 * n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(both.at(t, j) == ea.at(t, j));
      CHECK(both.at(n + t, j) == eb.at(t, j));
    }
}

TEST_CASE("query_at returns the cls row") {
  Rng rng(4);
  const VitBackbone<float> vit(tiny(), rng);
  const std::size_t n = vit.config().tokens(), d = vit.config().dim;
  std::vector<float> v(n * d);
  std::iota(v.begin(), v.end(), 1.0f);
  const Tensor x({n, d}, v);
  const auto q = vit.query_at(0, x);
  REQUIRE(q.shape() == Shape{1, d});
  for (std::size_t j = 0; j < d; ++j) CHECK(q.at(0, j) == static_cast<float>(j + 1));

  // only row 0 is read
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin() + 1, perm.end());
  const auto shuffled = gather_rows(x, std::span<const std::size_t>(perm));
  CHECK(bitwise_equal(vit.query_at(1, shuffled), q));

  auto c = tiny();
  c.prompt_layers = {1};
  const VitBackbone<float> partial(c, rng);
  CHECK_THROWS_AS(partial.query_at(0, x), ContractError);
}

TEST_CASE("empty prompt layers equal the plain forward bitwise") {
  Rng rng(5);
  auto c = tiny();
  c.prompt_layers = {};
  const VitBackbone<float> vit(c, rng);
  const ClassifierHead<float> head(c.dim, c.num_classes, rng);
  const auto img = random_image(c, rng);
  const auto x0 = vit.embed(img);
  int calls = 0;
  const auto with = vit.forward_with_prompts(
      x0, 1,
      [&](std::size_t, const Tensor& q) {
        ++calls;
        return q;
      },
      head);
  const auto plain = head.forward(vit.encode(x0, 1));
  CHECK(calls == 0);
  CHECK(bitwise_equal(with, plain));
}

TEST_CASE("provider is called once per prompt layer in order") {
  Rng rng(6);
  const VitBackbone<float> vit(tiny(16, 32, 2), rng);
  const ClassifierHead<float> head(32, 3, rng);
  const auto img = random_image(vit.config(), rng);
  std::vector<std::size_t> order;
  vit.forward_with_prompts(
      vit.embed(img), 1,
      [&](std::size_t l, const Tensor& q) {
        order.push_back(l);
        return Tensor::zeros(q.shape());
      },
      head);
  CHECK(order == std::vector<std::size_t>{0, 1});
}

TEST_CASE("wrong prompt shape names the layer") {
  Rng rng(7);
  const VitBackbone<float> vit(tiny(16, 32, 2), rng);
  const auto img = random_image(vit.config(), rng);
  const auto bad = [](std::size_t l, const Tensor& q) {
    return l == 1 ? Tensor::zeros({1, q.cols() + 1}) : Tensor::zeros(q.shape());
  };
  try {
    (void)vit.encode(vit.embed(img), 1, bad);
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("layer 1"));
  }
}

TEST_CASE("token count is invariant and attention rows sum to one") {
  Rng rng(8);
  auto c = tiny(16, 32, 3);
  c.prompt_layers = {0, 2};
  const VitBackbone<float> vit(c, rng);
  const auto a = random_image(c, rng), b = random_image(c, rng);
  ForwardTrace<float> trace;
  Rng prompts(9);
  vit.encode(
      vit.embed_batch({&a, &b}), 2,
      [&](std::size_t, const Tensor& q) {
        std::vector<float> v(q.numel());
        for (auto& x : v) x = static_cast<float>(prompts.uniform(-1, 1));
        return Tensor(q.shape(), v);
      },
      &trace);
  const std::size_t n = c.tokens();
  CHECK(trace.input_tokens == std::vector<std::size_t>(3, n));
  CHECK(trace.block_tokens == std::vector<std::size_t>{n + 1, n, n + 1});
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t seq = trace.block_tokens[l];
    const auto& p = trace.attention[l];
    REQUIRE(p.size() == 2 * c.heads * seq * seq);
    for (std::size_t row = 0; row < p.size() / seq; ++row) {
      double s = 0;
      for (std::size_t k = 0; k < seq; ++k) s += p[row * seq + k];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("batched encode matches per-image encode") {
  Rng rng(10);
  const VitBackbone<float> vit(tiny(), rng);
  const auto a = random_image(vit.config(), rng), b = random_image(vit.config(), rng);
  const auto provider = [](std::size_t, const Tensor& q) { return scale(q, 0.5); };
  const auto both = vit.encode(vit.embed_batch({&a, &b}), 2, provider);
  const auto ea = vit.encode(vit.embed(a), 1, provider);
  const auto eb = vit.encode(vit.embed(b), 1, provider);
  for (std::size_t j = 0; j < vit.config().dim; ++j) {
    CHECK(std::abs(both.at(0, j) - ea.at(0, j)) < 1e-5f);
    CHECK(std::abs(both.at(1, j) - eb.at(0, j)) < 1e-5f);
  }
}

TEST_CASE("frozen backbone receives no gradient while prompts and queries do") {
  Rng rng(12);
  const auto c = tiny();
  VitBackbone<float> vit(c, rng);
  vit.set_frozen(true);
  ClassifierHead<float> head(c.dim, c.num_classes, rng);
  head.set_trainable(true);
  const auto img = random_image(c, rng);
  auto key = Tensor::full({1, c.dim}, 0.3f, true);
  auto value = Tensor::full({1, c.dim}, 0.1f, true);
  {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto logits = vit.forward_with_prompts(
        vit.embed(img), 1,
        [&](std::size_t, const Tensor& q) { return matmul(cosine_matrix(q, key), value); }, head);
    const int labels[] = {1};
    tape.backward(cross_entropy(logits, std::span<const int>(labels)));
  }
  for (const auto& p : vit.parameters()) {
    INFO(p.name);
    CHECK_FALSE(p.tensor.requires_grad());
    CHECK_FALSE(p.tensor.has_grad());
  }
  CHECK(key.has_grad());
  CHECK(value.has_grad());
  CHECK(head.weight().has_grad());
}

TEST_CASE("classifier head examples") {
  const std::size_t d = 3;
  const ClassifierHead<float> zero(Tensor::zeros({d, d}), Tensor::zeros({1, d}));
  const auto cls = Tensor::row({0.5f, -2.0f, 7.0f});
  const auto z = zero.forward(cls);
  for (std::size_t j = 0; j < d; ++j) CHECK(z.at(0, j) == 0.0f);

  const ClassifierHead<float> eye(Tensor({d, d}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::zeros({1, d}));
  CHECK(bitwise_equal(eye.forward(cls), cls));

  CHECK_THROWS_AS(ClassifierHead<float>(Tensor::zeros({d, d}), Tensor::zeros({1, 2})),
                  DimensionError);
}

TEST_CASE("argmax ties go to the lowest class") {
  const Tensor logits({3, 3}, {1, 1, 1, 0, 2, 2, 5, 1, 5});
  CHECK(argmax_rows(logits) == std::vector<int>{0, 1, 0});
}

TEST_CASE("float and double backbones agree") {
  Rng rng(13);
  const VitBackbone<float> vit(tiny(), rng);
  const auto vd = vit.cast<double>();
  const auto img = random_image(vit.config(), rng);
  const auto f = vit.encode(vit.embed(img), 1);
  const auto d = vd.encode(vd.embed(img), 1);
  for (std::size_t j = 0; j < vit.config().dim; ++j) CHECK(std::abs(f.at(0, j) - d.at(0, j)) < 1e-4);
}

TEST_CASE("clone does not share storage") {
  Rng rng(14);
  const VitBackbone<float> vit(tiny(), rng);
  auto copy = vit.clone();
  copy.cls_token.mutable_data()[0] += 1.0f;
  CHECK(copy.cls_token.at(0, 0) != vit.cls_token.at(0, 0));
}
