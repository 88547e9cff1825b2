// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// File-based pipeline stages. The CLI subcommands and the benchmark
// harness both run these, so a fixed seed yields byte-identical artifacts
// either way.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxlm/pipeline.hpp"

namespace ctxlm {

// synth: writes train/dev/test.jsonl, embeddings.txt, entities.txt.
inline void stage_synth(const SynthConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  save_synth_dataset(generate_synthetic(cfg), out_dir);
}

// train-lms: one ARPA per component label plus manifest and EM-tuned
// static weights.
inline void stage_train_lms(const std::string& data_dir,
                            const std::string& models_dir,
                            const LmTrainOptions& opt,
                            std::ostream* log = &std::cerr) {
  auto train = load_interactions_file(data_dir + "/train.jsonl");
  auto dev = load_interactions_file(data_dir + "/dev.jsonl");
  auto lms = train_component_lms(train, dev, opt, log);
  save_trained_lms(lms, models_dir);
}

struct AdapterStageOptions {
  std::string name = "adapter";
  FeatureConfig features;
  LossKind loss = LossKind::ppl;
  TrainConfig train;
  ContextWindowPolicy window = ContextWindowPolicy::WholeConversation();
  size_t max_examples = 0;      // train-set cap, 0 = all
  size_t max_dev_examples = 0;  // dev-set cap, 0 = all
  int hidden = 200;
  int hidden_layers = 2;
};

inline nlohmann::json adapter_meta_json(const AdapterStageOptions& opt) {
  nlohmann::json meta;
  meta["name"] = opt.name;
  meta["loss"] = opt.loss == LossKind::ppl ? "ppl" : "xent";
  meta["features"] = opt.features.describe();
  meta["decay"] = opt.features.decay;
  meta["passes"] = opt.features.cur ? 2 : 1;
  return meta;
}

// train-adapter: writes <name>.ckpt, <name>.meta.json, <name>.trace.csv.
inline TrainResult stage_train_adapter(const std::string& data_dir,
                                       const std::string& models_dir,
                                       const std::string& out_dir,
                                       const AdapterStageOptions& opt) {
  std::filesystem::create_directories(out_dir);
  auto train_convs = load_interactions_file(data_dir + "/train.jsonl");
  auto dev_convs = load_interactions_file(data_dir + "/dev.jsonl");
  auto table = EmbeddingTable::load_file(data_dir + "/embeddings.txt");
  auto lms = load_trained_lms(models_dir);
  MixtureLM mix(lms.models);

  AdapterDataOptions data_opt;
  data_opt.features = opt.features;
  data_opt.window = opt.window;
  data_opt.with_probs = opt.loss == LossKind::ppl;
  data_opt.with_targets = opt.loss == LossKind::xent;
  data_opt.max_examples = opt.max_examples;
  auto train_set =
      build_adapter_dataset(train_convs, mix, lms.labels, table, data_opt);
  data_opt.max_examples = opt.max_dev_examples;
  auto dev_set =
      build_adapter_dataset(dev_convs, mix, lms.labels, table, data_opt);

  const int dim = opt.features.dim(table.dim());
  AdapterNet net(dim, static_cast<int>(lms.labels.size()), opt.hidden,
                 opt.hidden_layers);
  std::mt19937_64 rng(opt.train.seed);
  net.init(rng);
  TrainConfig cfg = opt.train;
  cfg.loss = opt.loss;
  auto result = train(net, train_set, dev_set, cfg);

  net.save_file(out_dir + "/" + opt.name + ".ckpt");
  write_file(out_dir + "/" + opt.name + ".meta.json",
             adapter_meta_json(opt).dump(2) + "\n");
  save_trace_csv(result, out_dir + "/" + opt.name + ".trace.csv");
  return result;
}

// train-topic: naive-Bayes classifier over (utterance, label) pairs.
inline void stage_train_topic(const std::string& data_dir,
                              const std::string& out_path) {
  auto convs = load_interactions_file(data_dir + "/train.jsonl");
  std::vector<std::pair<std::vector<std::string>, std::string>> labeled;
  for (const auto& c : convs)
    for (const auto& t : c.turns)
      if (t.speaker == Speaker::user && t.has_label())
        labeled.emplace_back(t.text, t.component_label);
  train_classifier(labeled).save_file(out_path);
}

struct EvalStageOptions {
  std::vector<std::string> adapter_names;  // in <adapters_dir>
  bool include_topic = true;
  double lm_scale = 1.0;
  ContextWindowPolicy window = ContextWindowPolicy::WholeConversation();
};

// eval: one row per system; returns the rows and writes the CSV report.
inline std::vector<ReportRow> stage_eval(const std::string& data_dir,
                                         const std::string& models_dir,
                                         const std::string& adapters_dir,
                                         const std::string& report_path,
                                         const EvalStageOptions& opt) {
  auto test = load_interactions_file(data_dir + "/test.jsonl");
  auto tags = load_entity_tags(data_dir + "/entities.txt");
  auto table = EmbeddingTable::load_file(data_dir + "/embeddings.txt");
  auto lms = load_trained_lms(models_dir);
  MixtureLM mix(lms.models);

  EvalOptions base;
  base.window = opt.window;
  base.lm_scale = opt.lm_scale;
  base.first_pass_weights = lms.static_weights;

  std::vector<ReportRow> rows;
  {
    ReportRow r{"no_adapt", "", 1, {}};
    r.metrics =
        run_1pass(test, mix, static_policy(lms.static_weights), base, tags);
    rows.push_back(std::move(r));
  }
  // Keep adapters alive for the duration of the closures below.
  std::vector<std::unique_ptr<AdapterNet>> nets;
  std::vector<FeatureConfig> configs;
  nets.reserve(opt.adapter_names.size());
  configs.reserve(opt.adapter_names.size());
  for (const auto& name : opt.adapter_names) {
    nlohmann::json meta = nlohmann::json::parse(
        read_file(adapters_dir + "/" + name + ".meta.json"));
    nets.push_back(std::make_unique<AdapterNet>(
        AdapterNet::load_file(adapters_dir + "/" + name + ".ckpt")));
    // describe() emits '+' separators; parse expects commas
    std::string feats = meta.at("features").get<std::string>();
    for (char& ch : feats)
      if (ch == '+') ch = ',';
    configs.push_back(FeatureConfig::parse(feats, meta.value("decay", 0.7)));
    const bool two_pass = meta.at("passes").get<int>() == 2;
    std::string system =
        meta.at("loss").get<std::string>() == "ppl" ? "dnn_ppl" : "dnn_xent";
    ReportRow r{system, meta.at("features").get<std::string>(),
                two_pass ? 2 : 1, {}};
    auto policy = adapter_policy(*nets.back(), configs.back(), table);
    r.metrics = two_pass ? run_2pass(test, mix, policy, base, tags)
                         : run_1pass(test, mix, policy, base, tags);
    rows.push_back(std::move(r));
  }
  std::unique_ptr<TopicClassifier> clf;
  if (opt.include_topic) {
    clf = std::make_unique<TopicClassifier>(
        TopicClassifier::load_file(adapters_dir + "/topic.ckpt"));
    if (clf->labels() != lms.labels)
      throw std::runtime_error("topic classifier labels do not match mixture");
    ReportRow r{"topic_model", "cur", 2, {}};
    r.metrics = run_2pass(test, mix, topic_policy(*clf), base, tags);
    rows.push_back(std::move(r));
  }
  write_file(report_path, metrics_csv(rows));
  return rows;
}

// --- the pinned synthetic benchmark ------------------------------------------

struct BenchmarkResult {
  std::vector<ReportRow> rows;
  std::string csv;
  TrainedLms lms;            // reloaded from disk (post ARPA round trip)
  std::string work_dir;
};

inline const ReportRow& find_row(const std::vector<ReportRow>& rows,
                                 const std::string& system,
                                 const std::string& features) {
  for (const auto& r : rows)
    if (r.system == system && r.features == features) return r;
  throw std::runtime_error("missing report row: " + system + "/" + features);
}

// Runs the full file-based pipeline for one seed under work_dir: synth,
// component LM training, four adapters, the topic classifier, and the
// evaluation report.
inline BenchmarkResult run_benchmark(uint64_t seed, const std::string& work_dir,
                                     std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(work_dir);
  const std::string data_dir = work_dir + "/data";
  const std::string models_dir = work_dir + "/models";
  const std::string adapters_dir = work_dir + "/adapters";

  SynthConfig synth;
  synth.seed = seed;
  stage_synth(synth, data_dir);

  LmTrainOptions lm_opt;
  lm_opt.per_source_merge = true;  // chatbot-style benchmark
  std::ostringstream devnull;
  stage_train_lms(data_dir, models_dir, lm_opt, log ? log : &devnull);

  auto adapter_opt = [&](const std::string& name, const std::string& feats,
                         LossKind loss) {
    AdapterStageOptions o;
    o.name = name;
    o.features = FeatureConfig::parse(feats);
    o.loss = loss;
    o.train.seed = seed;
    o.train.max_epochs = 15;
    o.train.patience = 3;
    o.max_examples = 6000;
    o.max_dev_examples = 1500;
    return o;
  };
  stage_train_adapter(data_dir, models_dir, adapters_dir,
                      adapter_opt("xent_prev_meta", "prev,meta", LossKind::xent));
  stage_train_adapter(data_dir, models_dir, adapters_dir,
                      adapter_opt("ppl_prev_meta", "prev,meta", LossKind::ppl));
  stage_train_adapter(data_dir, models_dir, adapters_dir,
                      adapter_opt("ppl_prevd_meta", "prev-d,meta", LossKind::ppl));
  stage_train_adapter(
      data_dir, models_dir, adapters_dir,
      adapter_opt("ppl_prev_meta_cur", "prev,meta,cur", LossKind::ppl));
  stage_train_topic(data_dir, adapters_dir + "/topic.ckpt");

  EvalStageOptions eval_opt;
  eval_opt.adapter_names = {"xent_prev_meta", "ppl_prev_meta",
                            "ppl_prevd_meta", "ppl_prev_meta_cur"};
  BenchmarkResult result;
  result.rows = stage_eval(data_dir, models_dir, adapters_dir,
                           work_dir + "/metrics.csv", eval_opt);
  result.csv = read_file(work_dir + "/metrics.csv");
  result.lms = load_trained_lms(models_dir);
  result.work_dir = work_dir;
  return result;
}

}  // namespace ctxlm
