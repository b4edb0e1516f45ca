// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pcl/data.hpp"
#include "pcl/error.hpp"
#include "pcl/optim.hpp"

using namespace pcl;
namespace fs = std::filesystem;

namespace {

SynthConfig small(std::size_t n = 120) {
  SynthConfig c;
  c.samples_per_domain = n;
  c.pretrain_samples = 90;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pcl_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Image solid(std::size_t size, float v) {
  return Image{size, size, 3, std::vector<float>(size * size * 3, v)};
}

// Softmax regression on raw pixels, full batch.
double probe_accuracy(const std::vector<Sample>& train, const std::vector<Sample>& test) {
  const std::size_t d = train[0].image.pixels.size();
  const auto features = [d](const std::vector<Sample>& s) {
    std::vector<float> v;
    v.reserve(s.size() * d);
    for (const auto& x : s) v.insert(v.end(), x.image.pixels.begin(), x.image.pixels.end());
    return Tensor({s.size(), d}, std::move(v));
  };
  const auto labels = [](const std::vector<Sample>& s) {
    std::vector<int> y;
    for (const auto& x : s) y.push_back(x.label);
    return y;
  };
  auto w = Tensor::zeros({d, 3}, true);
  auto b = Tensor::zeros({1, 3}, true);
  const auto xtr = features(train);
  const auto ytr = labels(train);
  AdamW opt({w, b}, {1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int step = 0; step < 150; ++step) {
    opt.zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    tape.backward(cross_entropy(add_row(matmul(xtr, w), b), std::span<const int>(ytr)));
    opt.step(1e-2);
  }
  const auto pred = argmax_rows(add_row(matmul(features(test), w), b));
  const auto yte = labels(test);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < yte.size(); ++i) hit += pred[i] == yte[i];
  return static_cast<double>(hit) / static_cast<double>(yte.size());
}

}  // namespace

TEST_CASE("synthetic stream is deterministic") {
  const auto a = synth_stream(5, small());
  const auto b = synth_stream(5, small());
  REQUIRE(a.stages() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(a.domains()[t].train == b.domains()[t].train);
    CHECK(a.domains()[t].val == b.domains()[t].val);
    CHECK(a.domains()[t].test == b.domains()[t].test);
  }
  const auto c = synth_stream(6, small());
  CHECK_FALSE(a.domains()[0].train == c.domains()[0].train);
}

TEST_CASE("class proportions from raw counts") {
  const std::vector<double> counts = {1805, 1562, 295};
  const auto p = class_proportions(counts);
  CHECK(p[0] == Catch::Approx(0.493).margin(5e-4));
  CHECK(p[1] == Catch::Approx(0.427).margin(5e-4));
  CHECK(p[2] == Catch::Approx(0.081).margin(5e-4));
}

TEST_CASE("stream layout follows the configuration") {
  const auto s = synth_stream(7, small(200));
  for (std::size_t t = 0; t < s.stages(); ++t) {
    const auto& d = s.domains()[t];
    CHECK(d.size() == 200);
    CHECK(d.train.size() == 120);
    CHECK(d.val.size() == 40);
    std::vector<std::size_t> per_class(3, 0);
    for (const auto* split : {&d.train, &d.val, &d.test}) {
      std::set<int> seen;
      for (const auto& x : *split) {
        CHECK(x.domain == static_cast<int>(t));
        CHECK(x.image.height == 32);
        seen.insert(x.label);
        ++per_class[x.label];
      }
      CHECK(seen.size() == 3);
    }
    // long tail: the minority class is the rarest
    CHECK(per_class[2] < per_class[0]);
    CHECK(per_class[2] < per_class[1]);
  }
}

TEST_CASE("stream preconditions") {
  auto c = small(59);
  CHECK_THROWS_AS(synth_stream(1, c), InputError);
  c = small();
  c.domains = 1;
  CHECK_THROWS_AS(synth_stream(1, c), InputError);
}

TEST_CASE("pretraining split is disjoint from the stream") {
  const auto cfg = small();
  const auto s = synth_stream(8, cfg);
  const auto pre = synth_pretrain_split(8, cfg);
  CHECK(pre.size() == 90);
  for (const auto& p : pre.train)
    for (const auto& d : s.domains())
      for (const auto& x : d.train) CHECK_FALSE(p.image == x.image);
}

TEST_CASE("domain shift is visible to a linear probe") {
  auto cfg = small(300);
  const auto s = synth_stream(0, cfg);
  const auto& d0 = s.domains()[0];
  const double same = probe_accuracy(d0.train, d0.test);
  for (std::size_t t = 1; t < s.stages(); ++t) {
    const double other = probe_accuracy(d0.train, s.domains()[t].test);
    INFO("domain " << t << ": " << other << " vs " << same);
    CHECK(other < same);
  }
}

TEST_CASE("stage stream hides every other stage from training") {
  auto s = synth_stream(9, small());
  CHECK(s.current_stage() == 0);
  const auto v0 = s.open(0);
  CHECK(v0.stage == 0);
  for (const auto& x : v0.train) CHECK(x.domain == 0);
  CHECK_THROWS_AS(s.open(1), ContractError);
  s.advance();
  CHECK_THROWS_AS(s.open(0), ContractError);
  const auto v1 = s.open(1);
  for (const auto& x : v1.train) CHECK(x.domain == 1);
  for (const auto& x : v1.val) CHECK(x.domain == 1);
  // evaluation still reaches every task
  CHECK(s.test_set(0).size() > 0);
  CHECK(s.test_set(2).size() > 0);
  s.advance();
  CHECK_THROWS_AS(s.advance(), ContractError);

  // a dataset that claims the wrong domain is rejected up front
  auto domains = synth_stream(9, small()).domains();
  domains[1].train[0].domain = 0;
  CHECK_THROWS_AS(StageStream(domains), InputError);
}

TEST_CASE("augmentation keeps the pixel multiset") {
  Rng rng(10);
  Image img{4, 4, 3, {}};
  for (std::size_t i = 0; i < 48; ++i) img.pixels.push_back(static_cast<float>(i));
  bool changed = false;
  for (int k = 0; k < 20; ++k) {
    const auto out = augment(img, rng);
    auto a = img.pixels, b = out.pixels;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    changed = changed || !(out == img);
  }
  CHECK(changed);
}

TEST_CASE("netpbm round trip and resize") {
  TempDir dir("pbm");
  Rng rng(11);
  const auto img = render_canonical(1, 16, 3, rng);
  write_netpbm(img, dir.path / "a.ppm");
  Image back;
  REQUIRE(read_image(dir.path / "a.ppm", 3, back));
  REQUIRE(back.height == 16);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5f / 255.0f + 1e-6f);

  const auto grey = solid(8, 0.25f);
  const auto big = resize_bilinear(grey, 16, 16);
  CHECK(big.height == 16);
  for (float v : big.pixels) CHECK(v == Catch::Approx(0.25f));

  std::ofstream(dir.path / "junk.ppm") << "not an image";
  Image junk;
  CHECK_FALSE(read_image(dir.path / "junk.ppm", 3, junk));
}

TEST_CASE("folder ingestion") {
  TempDir dir("ingest");
  for (int c = 0; c < 3; ++c) {
    fs::create_directories(dir.path / std::to_string(c));
    for (int i = 0; i < 3; ++i) {
      write_netpbm(solid(8, 0.1f * static_cast<float>(c * 3 + i)),
                   dir.path / std::to_string(c) / ("img" + std::to_string(i) + ".ppm"));
    }
  }
  const auto a = ingest_folder(dir.path, 16, 3, 3, {0.34, 0.33}, 4);
  CHECK(a.dataset.size() == 9);
  CHECK(a.skipped == 0);
  for (const auto* split : {&a.dataset.train, &a.dataset.val, &a.dataset.test}) {
    for (const auto& x : *split) {
      CHECK(x.image.height == 16);
      // labels come from the directory names
      const int expected = static_cast<int>(std::lround(x.image.pixels[0] * 10.0f)) / 3;
      CHECK(x.label == expected);
    }
  }
  const auto b = ingest_folder(dir.path, 16, 3, 3, {0.34, 0.33}, 4);
  CHECK(a.dataset.train == b.dataset.train);
  CHECK(a.dataset.val == b.dataset.val);
  CHECK(a.dataset.test == b.dataset.test);

  std::ofstream(dir.path / "1" / "broken.ppm") << "P6 garbage";
  CHECK(ingest_folder(dir.path, 16, 3, 3, {0.34, 0.33}, 4).skipped == 1);

  fs::create_directories(dir.path / "severe");
  CHECK_THROWS_AS(ingest_folder(dir.path, 16, 3, 3, {0.34, 0.33}, 4), InputError);
  fs::remove_all(dir.path / "severe");
  fs::create_directories(dir.path / "7");
  CHECK_THROWS_AS(ingest_folder(dir.path, 16, 3, 3, {0.34, 0.33}, 4), InputError);

  TempDir empty("empty");
  CHECK_THROWS_AS(ingest_folder(empty.path, 16, 3, 3, {0.34, 0.33}, 4), InputError);
}
