// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pcl/error.hpp"
#include "pcl/losses.hpp"
#include "pcl/optim.hpp"

namespace pcl {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPretrainTag = 0x5052'4554ULL;
constexpr std::uint64_t kRunTag = 0x5255'4E00ULL;

SynthConfig synth_config(const RunConfig& c) {
  SynthConfig s;
  s.domains = c.data.domains;
  s.samples_per_domain = c.data.samples_per_domain;
  s.pretrain_samples = c.pretrain.samples;
  s.image_size = c.vit.image_size;
  s.channels = c.vit.channels;
  s.num_classes = c.vit.num_classes;
  s.fractions = {c.data.train_fraction, c.data.val_fraction};
  s.shift_scale = c.data.shift_scale;
  s.class_proportions = c.data.class_counts;
  return s;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct Batch {
  std::vector<Image> storage;
  std::vector<const Image*> images;
  std::vector<int> labels;
};

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> order,
                 std::size_t begin, std::size_t end, bool augment_images, Rng& rng) {
  Batch b;
  b.storage.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& s = samples[order[i]];
    b.labels.push_back(s.label);
    if (augment_images) {
      Rng r = rng.split(i);
      b.storage.push_back(augment(s.image, r));
    } else {
      b.storage.push_back(s.image);
    }
  }
  for (const auto& img : b.storage) b.images.push_back(&img);
  return b;
}

std::vector<int> labels_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

constexpr std::size_t kEvalBatch = 64;

template <typename Logits>
std::vector<int> predict_with(std::span<const Sample> samples, Logits&& logits_of) {
  std::vector<int> preds;
  preds.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(samples.size(), begin + kEvalBatch);
    std::vector<const Image*> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&samples[i].image);
    const auto p = argmax_rows(logits_of(images));
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return preds;
}

struct Snapshot {
  std::vector<std::vector<float>> values;

  static Snapshot of(const std::vector<Tensor>& params) {
    Snapshot s;
    for (const auto& p : params) s.values.emplace_back(p.data().begin(), p.data().end());
    return s;
  }
  void restore(std::vector<Tensor>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
    }
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

StageStream build_stream(const RunConfig& config) {
  config.validate();
  std::vector<DomainDataset> source;
  if (config.data.source == "folders") {
    for (std::size_t i = 0; i < config.data.folders.size(); ++i) {
      auto report = ingest_folder(config.data.folders[i], config.vit.image_size,
                                  config.vit.channels, config.vit.num_classes,
                                  {config.data.train_fraction, config.data.val_fraction},
                                  config.seed, static_cast<int>(i));
      if (report.skipped > 0) {
        std::fprintf(stderr, "warning: skipped %zu undecodable files in %s\n", report.skipped,
                     config.data.folders[i].c_str());
      }
      source.push_back(std::move(report.dataset));
    }
  } else {
    source = synth_stream(config.seed, synth_config(config)).domains();
  }
  std::vector<DomainDataset> ordered;
  for (std::size_t stage = 0; stage < config.stage_order.size(); ++stage) {
    DomainDataset d = source.at(config.stage_order[stage]);
    d.domain = static_cast<int>(stage);
    for (auto* split : {&d.train, &d.val, &d.test})
      for (auto& s : *split) s.domain = static_cast<int>(stage);
    ordered.push_back(std::move(d));
  }
  return StageStream(std::move(ordered));
}

DomainDataset build_pretrain_split(const RunConfig& config) {
  return synth_pretrain_split(config.seed, synth_config(config));
}

// ---------------------------------------------------------------------------
// Pretraining

Pretrained pretrain_backbone(const DomainDataset& split, const RunConfig& config) {
  if (split.train.empty() || split.val.empty()) {
    throw InputError("pretrain: split needs train and validation samples");
  }
  Rng rng = Rng(config.seed).split(kPretrainTag);
  Rng init = rng.split(0);
  VitBackbone<float> backbone(config.vit, init);
  ClassifierHead<float> head(config.vit.dim, config.vit.num_classes, init);

  std::vector<Tensor> params;
  for (const auto& p : backbone.parameters()) params.push_back(p.tensor);
  for (const auto& p : head.parameters()) params.push_back(p.tensor);
  AdamWConfig opt_cfg = config.optimizer;
  opt_cfg.lr = config.pretrain.lr;
  AdamW opt(params, opt_cfg);

  const std::size_t n = split.train.size(), bs = config.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total = steps_per_epoch * config.pretrain.epochs;
  auto logits_of = [&](const std::vector<const Image*>& images) {
    return backbone.forward_with_prompts(backbone.embed_batch(images), images.size(), {}, head);
  };
  const auto val_labels = labels_of(split.val);

  double best = -1.0;
  std::size_t since_best = 0, epochs = 0;
  Snapshot best_params = Snapshot::of(params);
  for (std::size_t epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    Rng erng = rng.split(1 + epoch);
    const auto order = permutation(n, erng);
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      const Batch batch = make_batch(split.train, order, begin, end, config.augment, erng);
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const auto loss = cross_entropy(logits_of(batch.images), batch.labels);
      tape.backward(loss);
      opt.step(cosine_lr(opt_cfg.lr, opt.steps(), total));
      opt.zero_grad();
    }
    ++epochs;
    const double acc = accuracy(predict_with(split.val, logits_of), val_labels);
    if (acc > best) {
      best = acc;
      best_params = Snapshot::of(params);
      since_best = 0;
    } else if (++since_best >= config.pretrain.patience) {
      break;
    }
  }
  best_params.restore(params);
  if (best < config.pretrain.accuracy_floor) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "pretrain: best validation accuracy %.4f after %zu epochs is below the floor %.4f",
                  best, epochs, config.pretrain.accuracy_floor);
    throw PretrainError(msg, best);
  }
  backbone.set_frozen(true);
  for (auto& p : params) p.zero_grad();
  return {std::move(backbone), std::move(head), best, epochs};
}

// ---------------------------------------------------------------------------
// Prompted forward, evaluation

Tensor forward_batch(const Model& model, const std::vector<const Image*>& images,
                     const RunConfig& config, Tensor* p_star) {
  const std::size_t batch = images.size();
  const auto x0 = model.backbone.embed_batch(images);
  std::vector<Tensor> prompts;
  VitBackbone<float>::PromptProvider provider;
  if (config.query_mode == QueryMode::refined) {
    const auto reference = model.backbone.encode(x0, batch).detach();
    const auto weights = refined_weights(reference, model.pool.key_matrix());
    prompts.push_back(refined_select(weights, model.pool));
    provider = [&](std::size_t, const Tensor&) { return prompts.front(); };
  } else {
    provider = [&](std::size_t, const Tensor& query) {
      prompts.push_back(model.pool.select(query));
      return prompts.back();
    };
  }
  auto logits = model.backbone.forward_with_prompts(x0, batch, provider, model.head);
  if (p_star) {
    if (config.p_star_source == PStarSource::new_prompt_values) {
      const auto values = model.pool.stage_values(model.pool.current_stage());
      const auto ones = Tensor::full({1, values.rows()}, 1.0f);
      *p_star = scale(matmul(ones, values), 1.0 / static_cast<double>(values.rows()));
    } else {
      Tensor acc;
      for (const auto& p : prompts) {
        const auto unit = l2_normalize_rows(p);
        acc = acc.defined() ? add(acc, unit) : unit;
      }
      *p_star = scale(acc, 1.0 / static_cast<double>(prompts.size()));
    }
  }
  return logits;
}

std::vector<int> predict(const Model& model, std::span<const Sample> samples,
                         const RunConfig& config) {
  return predict_with(samples, [&](const std::vector<const Image*>& images) {
    return forward_batch(model, images, config);
  });
}

EvalResult evaluate(const Model& model, std::span<const Sample> samples, const RunConfig& config) {
  const auto preds = predict(model, samples, config);
  const auto truth = labels_of(samples);
  return {accuracy(preds, truth), macro_f1(preds, truth, config.vit.num_classes)};
}

// ---------------------------------------------------------------------------
// Stage training

std::vector<EpochRecord> train_stage(int stage, const StageView& view, Model& model,
                                     const RunConfig& config, Rng& rng) {
  if (view.stage != stage) {
    throw ContractError("train_stage: handle for stage " + std::to_string(view.stage) +
                        " used to train stage " + std::to_string(stage));
  }
  for (auto split : {view.train, view.val}) {
    for (const auto& s : split) {
      if (s.domain != stage) {
        throw ContractError("train_stage: stage " + std::to_string(stage) +
                            " handle produced a sample of stage " + std::to_string(s.domain));
      }
    }
  }
  if (view.train.empty() || view.val.empty()) {
    throw InputError("train_stage: stage " + std::to_string(stage) + " has no train or val data");
  }

  model.head.set_trainable(true);
  std::vector<Tensor> params = {model.head.weight(), model.head.bias()};
  for (const auto& e : model.pool.entries()) {
    if (!e.frozen) {
      params.push_back(e.key);
      params.push_back(e.value);
    }
  }
  AdamW opt(params, config.optimizer);

  const std::size_t n = view.train.size(), bs = config.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total = steps_per_epoch * config.epochs;
  const auto val_labels = labels_of(view.val);
  const bool regularize = config.lambda > 0.0;

  std::vector<EpochRecord> log;
  double best = -1.0;
  std::size_t since_best = 0;
  Snapshot best_params = Snapshot::of(params);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng erng = rng.split(epoch);
    const auto order = permutation(n, erng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      const Batch batch = make_batch(view.train, order, begin, end, config.augment, erng);
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Tensor p_star;
      const auto logits = forward_batch(model, batch.images, config, regularize ? &p_star : nullptr);
      auto loss = cross_entropy(logits, batch.labels);
      if (regularize) {
        const auto ls = loss_similarity(p_star, model.pool.key_matrix(), batch.images.size(),
                                        config.ls_mode);
        loss = loss_total(loss, ls, config.lambda);
      }
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
      tape.backward(loss);
      opt.step(cosine_lr(config.optimizer.lr, opt.steps(), total));
      opt.zero_grad();
    }
    const double val_acc = accuracy(predict(model, view.val, config), val_labels);
    log.push_back({stage, static_cast<int>(epoch), loss_sum / static_cast<double>(n), val_acc});
    if (val_acc > best) {
      best = val_acc;
      best_params = Snapshot::of(params);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  best_params.restore(params);
  for (auto& p : params) p.zero_grad();
  return log;
}

// ---------------------------------------------------------------------------
// Experiments

void write_epoch_log(std::span<const EpochRecord> log, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os.precision(17);
  os << "stage,epoch,train_loss,val_acc\n";
  for (const auto& r : log) os << r.stage << ',' << r.epoch << ',' << r.train_loss << ',' << r.val_acc << '\n';
}

ExperimentResult run_experiment(const RunConfig& config, const fs::path& run_dir,
                                const Pretrained* pretrained, const ExperimentHooks& hooks) {
  config.validate();
  fs::create_directories(run_dir);
  save_config(config, run_dir / "config_echo.json");
  int completed = -1;
  auto status = [&](const std::string& state, const std::string& error) {
    nlohmann::json j = {{"state", state}, {"completed_stages", completed + 1}};
    if (!error.empty()) j["error"] = error;
    write_text(run_dir / "status.json", j.dump(2) + "\n");
  };
  status("running", "");

  ExperimentResult result;
  try {
    StageStream stream = build_stream(config);
    if (pretrained) {
      result.pretrained = {pretrained->backbone.clone(), pretrained->head.clone(),
                           pretrained->val_accuracy, pretrained->epochs};
    } else {
      result.pretrained = pretrain_backbone(build_pretrain_split(config), config);
    }
    if (result.pretrained.backbone.config() != config.vit) {
      throw ContractError("run_experiment: pretrained backbone does not match the vit config");
    }

    const Rng rng = Rng(config.seed).split(kRunTag);
    Rng pool_rng = rng.split(0);
    Model& model = result.model;
    model.backbone = result.pretrained.backbone.clone();
    model.backbone.set_frozen(true);
    model.pool = PromptPool<float>(config.base_prompts, config.vit.dim, config.expansion_ratio, pool_rng);
    model.head = result.pretrained.head.clone();

    const std::size_t t = stream.stages();
    result.accuracy = AccuracyMatrix(t);
    result.macro_f1 = AccuracyMatrix(t);
    for (std::size_t i = 0; i < t; ++i) {
      const int stage = static_cast<int>(i);
      if (i > 0) {
        stream.advance();
        if (config.expansion_ratio > 0.0) model.pool.expand(stage, pool_rng);
      }
      if (hooks.before_stage) hooks.before_stage(stage, model);
      Rng stage_rng = rng.split(1 + i);
      const auto log = train_stage(stage, stream.open(stage), model, config, stage_rng);
      result.log.insert(result.log.end(), log.begin(), log.end());
      for (std::size_t j = 0; j < t; ++j) {
        const auto r = evaluate(model, stream.test_set(j), config);
        result.accuracy.set(i, j, r.accuracy);
        result.macro_f1.set(i, j, r.macro_f1);
      }
      save_checkpoint({config, model.backbone, model.pool, model.head, stage, stage_rng.state()},
                      run_dir / ("checkpoint_stage_" + std::to_string(i) + ".bin"));
      write_epoch_log(result.log, run_dir / "epoch_log.csv");
      completed = stage;
      status("running", "");
      if (hooks.after_stage) hooks.after_stage(stage, model);
    }

    result.metrics = compute_metrics(result.accuracy);
    result.similarity = stage_similarity(model.pool);
    {
      std::ofstream os(run_dir / "accuracy_matrix.csv");
      result.accuracy.write_csv(os);
    }
    {
      std::ofstream os(run_dir / "f1_matrix.csv");
      result.macro_f1.write_csv(os);
    }
    {
      std::ofstream os(run_dir / "stage_similarity.csv");
      result.similarity.write_csv(os);
    }
    nlohmann::json metrics = to_json(result.metrics);
    metrics["avg_acc_diagonal"] = avg_acc(result.accuracy, AvgAccForm::diagonal);
    metrics["config"] = to_json(config);
    std::ofstream(run_dir / "metrics.json") << metrics.dump(2) << '\n';
    status("complete", "");
  } catch (const std::exception& e) {
    status("failed", e.what());
    throw;
  }
  return result;
}

std::vector<SweepRow> run_sweep(const RunConfig& config, const fs::path& run_dir) {
  config.validate();
  if (config.sweep_ratios.empty()) throw InputError("sweep: no ratios configured");
  fs::create_directories(run_dir);
  save_config(config, run_dir / "config_echo.json");
  const Pretrained pre = pretrain_backbone(build_pretrain_split(config), config);
  std::vector<SweepRow> rows;
  for (double ratio : config.sweep_ratios) {
    RunConfig c = config;
    c.expansion_ratio = ratio;
    char name[32];
    std::snprintf(name, sizeof name, "ratio_%.2f", ratio);
    const auto r = run_experiment(c, run_dir / name, &pre);
    SweepRow row;
    row.ratio = ratio;
    row.added_per_stage = ratio > 0.0 ? PromptPool<float>::expansion_count(c.base_prompts, ratio) : 0;
    row.final_pool_size = r.model.pool.size();
    row.metrics = r.metrics;
    rows.push_back(row);
  }
  std::ofstream os(run_dir / "expansion_sweep.csv");
  os.precision(17);
  os << "ratio,base_prompts,added_per_stage,final_pool_size,avg_acc,faa,bwt,avg_f\n";
  for (const auto& r : rows) {
    os << r.ratio << ',' << config.base_prompts << ',' << r.added_per_stage << ','
       << r.final_pool_size << ',' << r.metrics.avg_acc << ',' << r.metrics.faa << ','
       << r.metrics.bwt << ',' << r.metrics.avg_f << '\n';
  }
  return rows;
}

}  // namespace pcl
