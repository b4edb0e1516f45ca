// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "pcl/error.hpp"

namespace pcl {

using nlohmann::json;

std::string to_string(QueryMode mode) { return mode == QueryMode::cls ? "cls" : "refined"; }

QueryMode parse_query_mode(const std::string& text) {
  if (text == "cls") return QueryMode::cls;
  if (text == "refined") return QueryMode::refined;
  throw InputError("unknown query_mode '" + text + "'");
}

void RunConfig::validate() const {
  vit.validate();
  if (batch_size == 0) throw InputError("config: batch_size must be positive");
  if (epochs == 0) throw InputError("config: epochs must be positive");
  if (lambda < 0.0) throw InputError("config: lambda must be non-negative");
  if (expansion_ratio < 0.0) throw InputError("config: expansion_ratio must be non-negative");
  if (base_prompts == 0) throw InputError("config: base_prompts must be positive");
  if (optimizer.lr < 0.0) throw InputError("config: optimizer.lr must be non-negative");
  if (data.train_fraction <= 0.0 || data.val_fraction <= 0.0 ||
      data.train_fraction + data.val_fraction >= 1.0) {
    throw InputError("config: split fractions must leave room for a test split");
  }
  const std::size_t domains = data.source == "folders" ? data.folders.size() : data.domains;
  if (data.source != "synthetic" && data.source != "folders") {
    throw InputError("config: data.source must be 'synthetic' or 'folders'");
  }
  if (stage_order.size() != domains) {
    throw InputError("config: stage_order lists " + std::to_string(stage_order.size()) +
                     " stages for " + std::to_string(domains) + " domains");
  }
  std::set<std::size_t> seen(stage_order.begin(), stage_order.end());
  if (seen.size() != stage_order.size() || (!seen.empty() && *seen.rbegin() >= domains)) {
    throw InputError("config: stage_order must be a permutation of the domain indices");
  }
  for (double r : sweep_ratios) {
    if (r < 0.0) throw InputError("config: sweep ratios must be non-negative");
  }
}

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InputError("config: '" + path_ + "' must be an object");
  }
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw InputError("config: unknown key '" + where(key) + "'");
    }
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw InputError("config: bad value for '" + where(key) + "': " + e.what());
    }
  }

  /// Nested object, or nullptr when absent.
  const json* object(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vit_json(const ViTConfig& v) {
  return {{"image_size", v.image_size}, {"patch_size", v.patch_size}, {"channels", v.channels},
          {"dim", v.dim},               {"depth", v.depth},           {"heads", v.heads},
          {"mlp_ratio", v.mlp_ratio},   {"num_classes", v.num_classes},
          {"prompt_layers", v.prompt_layers}};
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& o = c.optimizer;
  return {
      {"seed", c.seed},
      {"run_dir", c.run_dir},
      {"optimizer",
       {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
        {"weight_decay", o.weight_decay}}},
      {"epochs", c.epochs},
      {"patience", c.patience},
      {"batch_size", c.batch_size},
      {"lambda", c.lambda},
      {"expansion_ratio", c.expansion_ratio},
      {"base_prompts", c.base_prompts},
      {"ls_mode", to_string(c.ls_mode)},
      {"p_star_source", to_string(c.p_star_source)},
      {"query_mode", to_string(c.query_mode)},
      {"augment", c.augment},
      {"vit", vit_json(c.vit)},
      {"stage_order", c.stage_order},
      {"data",
       {{"source", c.data.source},
        {"domains", c.data.domains},
        {"samples_per_domain", c.data.samples_per_domain},
        {"shift_scale", c.data.shift_scale},
        {"train_fraction", c.data.train_fraction},
        {"val_fraction", c.data.val_fraction},
        {"class_counts", c.data.class_counts},
        {"folders", c.data.folders}}},
      {"pretrain",
       {{"samples", c.pretrain.samples},
        {"epochs", c.pretrain.epochs},
        {"patience", c.pretrain.patience},
        {"accuracy_floor", c.pretrain.accuracy_floor},
        {"lr", c.pretrain.lr}}},
      {"sweep_ratios", c.sweep_ratios},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  {
    Reader r(j, "");
    r.get("seed", c.seed);
    r.get("run_dir", c.run_dir);
    if (const json* o = r.object("optimizer")) {
      Reader ro(*o, "optimizer");
      ro.get("lr", c.optimizer.lr);
      ro.get("beta1", c.optimizer.beta1);
      ro.get("beta2", c.optimizer.beta2);
      ro.get("eps", c.optimizer.eps);
      ro.get("weight_decay", c.optimizer.weight_decay);
      ro.finish();
    }
    r.get("epochs", c.epochs);
    r.get("patience", c.patience);
    r.get("batch_size", c.batch_size);
    r.get("lambda", c.lambda);
    r.get("expansion_ratio", c.expansion_ratio);
    r.get("base_prompts", c.base_prompts);
    std::string text = to_string(c.ls_mode);
    r.get("ls_mode", text);
    c.ls_mode = parse_ls_mode(text);
    text = to_string(c.p_star_source);
    r.get("p_star_source", text);
    c.p_star_source = parse_p_star_source(text);
    text = to_string(c.query_mode);
    r.get("query_mode", text);
    c.query_mode = parse_query_mode(text);
    r.get("augment", c.augment);
    if (const json* v = r.object("vit")) {
      Reader rv(*v, "vit");
      rv.get("image_size", c.vit.image_size);
      rv.get("patch_size", c.vit.patch_size);
      rv.get("channels", c.vit.channels);
      rv.get("dim", c.vit.dim);
      rv.get("depth", c.vit.depth);
      rv.get("heads", c.vit.heads);
      rv.get("mlp_ratio", c.vit.mlp_ratio);
      rv.get("num_classes", c.vit.num_classes);
      rv.get("prompt_layers", c.vit.prompt_layers);
      rv.finish();
    }
    const bool explicit_order = j.is_object() && j.contains("stage_order");
    r.get("stage_order", c.stage_order);
    if (const json* d = r.object("data")) {
      Reader rd(*d, "data");
      rd.get("source", c.data.source);
      rd.get("domains", c.data.domains);
      rd.get("samples_per_domain", c.data.samples_per_domain);
      rd.get("shift_scale", c.data.shift_scale);
      rd.get("train_fraction", c.data.train_fraction);
      rd.get("val_fraction", c.data.val_fraction);
      rd.get("class_counts", c.data.class_counts);
      rd.get("folders", c.data.folders);
      rd.finish();
    }
    if (!explicit_order) {
      const std::size_t n = c.data.source == "folders" ? c.data.folders.size() : c.data.domains;
      c.stage_order.resize(n);
      for (std::size_t i = 0; i < n; ++i) c.stage_order[i] = i;
    }
    if (const json* p = r.object("pretrain")) {
      Reader rp(*p, "pretrain");
      rp.get("samples", c.pretrain.samples);
      rp.get("epochs", c.pretrain.epochs);
      rp.get("patience", c.pretrain.patience);
      rp.get("accuracy_floor", c.pretrain.accuracy_floor);
      rp.get("lr", c.pretrain.lr);
      rp.finish();
    }
    r.get("sweep_ratios", c.sweep_ratios);
    r.finish();
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw InputError("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("config: cannot write " + path.string());
  os << to_json(config).dump(2) << '\n';
}

std::filesystem::path resolve_run_dir(const RunConfig& config) {
  if (const char* env = std::getenv("PCL_RUN_DIR"); env && *env) return env;
  return config.run_dir;
}

}  // namespace pcl
