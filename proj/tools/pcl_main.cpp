// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// pcl: command-line front end for the continual-learning harness.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "pcl/checkpoint.hpp"
#include "pcl/config.hpp"
#include "pcl/data.hpp"
#include "pcl/error.hpp"
#include "pcl/harness.hpp"
#include "pcl/metrics.hpp"

namespace fs = std::filesystem;
using namespace pcl;

namespace {

RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  if (seed) c.seed = *seed;
  c.validate();
  return c;
}

void print_summary(const ExperimentResult& r) {
  const auto& m = r.metrics;
  std::printf("avg_acc %.4f  faa %.4f  bwt %.4f  avg_f %.4f\n", m.avg_acc, m.faa, m.bwt, m.avg_f);
}

int run(int argc, char** argv) {
  CLI::App app{"Prompt-pool domain-incremental learning harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the configured seed");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and freeze the backbone");
  add_common(pretrain);
  std::string pretrain_out;
  pretrain->add_option("--out", pretrain_out, "Checkpoint path (default <run_dir>/pretrained.bin)");

  auto* train = app.add_subcommand("train", "Run the full stage sequence");
  add_common(train);

  auto* sweep = app.add_subcommand("sweep", "Run every configured expansion ratio");
  add_common(sweep);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string checkpoint_path, dataset;
  eval->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset,
                   "Stage index of the checkpoint's stream (test split) or an image folder")
      ->required();

  auto* metrics = app.add_subcommand("metrics", "Continual-learning metrics of an accuracy matrix");
  std::string matrix_path, form = "seen_tasks";
  metrics->add_option("--matrix", matrix_path)->required()->check(CLI::ExistingFile);
  metrics->add_option("--avg-acc-form", form, "seen_tasks or diagonal")
      ->check(CLI::IsMember({"seen_tasks", "diagonal"}));

  auto* similarity = app.add_subcommand("export-similarity", "Stage similarity of a checkpoint's pool");
  std::string sim_out;
  similarity->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  similarity->add_option("--out", sim_out, "CSV path (default stdout)");

  auto* synth = app.add_subcommand("synth", "Write the synthetic stream as image files");
  std::string synth_out;
  add_common(synth);
  synth->add_option("--out", synth_out)->required();

  auto* defaults = app.add_subcommand("print-config", "Print the effective configuration");
  add_common(defaults);

  CLI11_PARSE(app, argc, argv);

  if (*pretrain) {
    const auto c = resolve_config(config_path, seed);
    const auto pre = pretrain_backbone(build_pretrain_split(c), c);
    const fs::path out = pretrain_out.empty() ? resolve_run_dir(c) / "pretrained.bin" : fs::path(pretrain_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    Rng scratch(c.seed);
    save_checkpoint({c, pre.backbone, PromptPool<float>(c.base_prompts, c.vit.dim, c.expansion_ratio, scratch),
                     pre.head, -1, scratch.state()},
                    out);
    std::printf("pretrained: val accuracy %.4f after %zu epochs -> %s\n", pre.val_accuracy, pre.epochs,
                out.c_str());
  } else if (*train) {
    const auto c = resolve_config(config_path, seed);
    const auto dir = resolve_run_dir(c);
    print_summary(run_experiment(c, dir));
    std::printf("artifacts in %s\n", dir.c_str());
  } else if (*sweep) {
    const auto c = resolve_config(config_path, seed);
    const auto dir = resolve_run_dir(c);
    for (const auto& r : run_sweep(c, dir)) {
      std::printf("ratio %.2f: +%zu prompts/stage, pool %zu, avg_f %.4f, faa %.4f\n", r.ratio,
                  r.added_per_stage, r.final_pool_size, r.metrics.avg_f, r.metrics.faa);
    }
    std::printf("comparison in %s\n", (dir / "expansion_sweep.csv").c_str());
  } else if (*eval) {
    const auto ck = load_checkpoint(checkpoint_path);
    const Model model{ck.backbone, ck.pool, ck.head};
    std::vector<Sample> samples;
    if (fs::is_directory(dataset)) {
      auto report = ingest_folder(dataset, ck.config.vit.image_size, ck.config.vit.channels,
                                  ck.config.vit.num_classes,
                                  {ck.config.data.train_fraction, ck.config.data.val_fraction},
                                  ck.config.seed);
      const auto& d = report.dataset;
      for (const auto* split : {&d.train, &d.val, &d.test}) samples.insert(samples.end(), split->begin(), split->end());
      if (report.skipped) std::fprintf(stderr, "warning: skipped %zu undecodable files\n", report.skipped);
    } else {
      std::size_t used = 0;
      const auto task = std::stoul(dataset, &used);
      if (used != dataset.size()) throw InputError("eval: --dataset must be a stage index or a folder");
      const auto stream = build_stream(ck.config);
      const auto test = stream.test_set(task);
      samples.assign(test.begin(), test.end());
    }
    const auto r = evaluate(model, samples, ck.config);
    const nlohmann::json j = {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"samples", samples.size()}};
    std::cout << j.dump(2) << '\n';
  } else if (*metrics) {
    std::ifstream is(matrix_path);
    const auto a = AccuracyMatrix::read_csv(is);
    const auto m = compute_metrics(a, form == "diagonal" ? AvgAccForm::diagonal : AvgAccForm::seen_tasks);
    std::cout << to_json(m).dump(2) << '\n';
  } else if (*similarity) {
    const auto ck = load_checkpoint(checkpoint_path);
    const auto s = stage_similarity(ck.pool);
    if (sim_out.empty()) {
      s.write_csv(std::cout);
    } else {
      std::ofstream os(sim_out);
      s.write_csv(os);
    }
  } else if (*synth) {
    const auto c = resolve_config(config_path, seed);
    const auto stream = build_stream(c);
    fs::create_directories(synth_out);
    std::ofstream manifest(fs::path(synth_out) / "manifest.csv");
    manifest << "stage,domain,split,label,file\n";
    for (std::size_t t = 0; t < stream.stages(); ++t) {
      const auto& d = stream.domains()[t];
      const std::pair<const char*, const std::vector<Sample>*> splits[] = {
          {"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
      for (const auto& [name, samples] : splits) {
        for (std::size_t i = 0; i < samples->size(); ++i) {
          const auto& s = (*samples)[i];
          const fs::path rel = fs::path(d.name) / std::to_string(s.label) /
                               (std::string(name) + "_" + std::to_string(i) + (s.image.channels == 1 ? ".pgm" : ".ppm"));
          fs::create_directories((fs::path(synth_out) / rel).parent_path());
          write_netpbm(s.image, fs::path(synth_out) / rel);
          manifest << t << ',' << d.name << ',' << name << ',' << s.label << ',' << rel.string() << '\n';
        }
      }
    }
    std::printf("wrote %zu stages to %s\n", stream.stages(), synth_out.c_str());
  } else if (*defaults) {
    std::cout << to_json(resolve_config(config_path, seed)).dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const PretrainError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
