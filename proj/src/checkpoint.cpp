// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "pcl/error.hpp"

namespace pcl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order");

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& is, const std::string& what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw InputError("checkpoint: truncated " + what);
  }
  return v;
}

struct Directory {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<const Tensor*> tensors;
  std::uint64_t offset = 0;

  void add(const std::string& name, const Tensor& t) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    tensors.push_back(&t);
    offset += t.numel();
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::vector<NamedTensor<float>> named = ck.backbone.parameters();
  for (auto& p : named) p.name = "backbone." + p.name;
  named.push_back({"head.weight", ck.head.weight()});
  named.push_back({"head.bias", ck.head.bias()});
  nlohmann::json pool_entries = nlohmann::json::array();
  const auto& entries = ck.pool.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    named.push_back({"pool." + std::to_string(i) + ".key", entries[i].key});
    named.push_back({"pool." + std::to_string(i) + ".value", entries[i].value});
    pool_entries.push_back({{"stage_id", entries[i].stage_id}, {"frozen", entries[i].frozen}});
  }
  Directory dir;
  for (const auto& n : named) dir.add(n.name, n.tensor);

  const nlohmann::json header = {
      {"config", to_json(ck.config)},
      {"completed_stage", ck.completed_stage},
      {"rng", {{"key", ck.rng.key}, {"counter", ck.rng.counter}}},
      {"backbone_frozen", ck.backbone.frozen()},
      {"head_trainable", ck.head.weight().requires_grad()},
      {"pool",
       {{"base_count", ck.pool.base_count()},
        {"dim", ck.pool.dim()},
        {"expansion_ratio", ck.pool.expansion_ratio()},
        {"current_stage", ck.pool.current_stage()},
        {"entries", pool_entries}}},
      {"tensors", dir.entries},
      {"payload_floats", dir.offset},
  };
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw InputError("checkpoint: cannot write " + path.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : dir.tensors) {
      os.write(reinterpret_cast<const char*>(t->data().data()),
               static_cast<std::streamsize>(t->numel() * sizeof(float)));
    }
    if (!os) throw InputError("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw InputError("checkpoint: " + path.string() + " is not a checkpoint file");
  }
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw InputError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto length = take<std::uint64_t>(is, "header length");
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) {
    throw InputError("checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  const auto total = header.at("payload_floats").get<std::uint64_t>();
  std::vector<float> payload(total);
  if (!is.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(total * sizeof(float)))) {
    throw InputError("checkpoint: truncated payload");
  }
  std::map<std::string, std::pair<Shape, std::uint64_t>> directory;
  for (const auto& e : header.at("tensors")) {
    directory[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(),
                                                  e.at("offset").get<std::uint64_t>()};
  }
  auto fetch = [&](const std::string& name) {
    const auto it = directory.find(name);
    if (it == directory.end()) throw InputError("checkpoint: missing tensor '" + name + "'");
    const auto& [shape, offset] = it->second;
    const std::size_t n = shape_numel(shape);
    if (offset + n > payload.size()) throw InputError("checkpoint: tensor '" + name + "' overruns payload");
    return Tensor(shape, std::vector<float>(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                            payload.begin() + static_cast<std::ptrdiff_t>(offset + n)));
  };

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  ck.completed_stage = header.at("completed_stage").get<int>();
  ck.rng.key = header.at("rng").at("key").get<std::uint64_t>();
  ck.rng.counter = header.at("rng").at("counter").get<std::uint64_t>();

  Rng scratch(0);
  ck.backbone = VitBackbone<float>(ck.config.vit, scratch);
  for (auto& p : ck.backbone.parameters()) {
    const Tensor stored = fetch("backbone." + p.name);
    if (stored.shape() != p.tensor.shape()) {
      throw InputError("checkpoint: tensor '" + p.name + "' has shape " + shape_str(stored.shape()) +
                       ", config expects " + shape_str(p.tensor.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), p.tensor.mutable_data().begin());
  }
  ck.backbone.set_frozen(header.at("backbone_frozen").get<bool>());

  ck.head = ClassifierHead<float>(fetch("head.weight"), fetch("head.bias"));
  ck.head.set_trainable(header.at("head_trainable").get<bool>());

  const auto& pool = header.at("pool");
  std::vector<PromptEntry<float>> entries;
  const auto& tags = pool.at("entries");
  entries.reserve(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    entries.push_back({fetch("pool." + std::to_string(i) + ".key"),
                       fetch("pool." + std::to_string(i) + ".value"),
                       tags[i].at("stage_id").get<int>(), tags[i].at("frozen").get<bool>()});
  }
  ck.pool = PromptPool<float>::restore(pool.at("base_count").get<std::size_t>(),
                                       pool.at("dim").get<std::size_t>(),
                                       pool.at("expansion_ratio").get<double>(),
                                       pool.at("current_stage").get<int>(), std::move(entries));
  return ck;
}

}  // namespace pcl
