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
// End-to-end orchestration shared by the CLI and the acceptance suite:
// component LM training (with optional per-source static merging),
// adapter dataset assembly, and the multi-system evaluation report.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ctxlm/adapter.hpp"
#include "ctxlm/corpus.hpp"
#include "ctxlm/eval.hpp"
#include "ctxlm/features.hpp"
#include "ctxlm/mixture.hpp"
#include "ctxlm/ngram.hpp"
#include "ctxlm/synth.hpp"
#include "ctxlm/topic.hpp"

namespace ctxlm {

inline std::vector<Interaction> all_turns(
    const std::vector<Conversation>& convs) {
  std::vector<Interaction> out;
  for (const auto& c : convs)
    out.insert(out.end(), c.turns.begin(), c.turns.end());
  return out;
}

inline std::vector<std::vector<std::string>> all_texts(
    const std::vector<Conversation>& convs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : convs)
    for (const auto& t : c.turns) out.push_back(t.text);
  return out;
}

struct TrainedLms {
  std::vector<std::string> labels;
  std::vector<std::shared_ptr<const NGramModel>> models;
  std::shared_ptr<const Vocabulary> vocab;
  WeightVector static_weights;  // EM-tuned on the dev set
};

struct LmTrainOptions {
  int order = 4;
  int discount_cutoff = 5;
  int min_count = 2;
  bool per_source_merge = false;  // chatbot mode, per-source LMs EM-merged
  int em_max_iters = 100;
  double em_tol = 1e-6;
};

// One Katz model per component label over a shared vocabulary; static
// baseline weights tuned by EM on the dev set. In per-source mode each
// component is first built per data source and statically merged with
// weights EM-tuned on that component's dev utterances.
inline TrainedLms train_component_lms(const std::vector<Conversation>& train,
                                      const std::vector<Conversation>& dev,
                                      const LmTrainOptions& opt,
                                      std::ostream* log = &std::cerr) {
  auto turns = all_turns(train);
  auto partitions = partition_by_label(turns);
  if (partitions.empty())
    throw std::runtime_error("no labeled training data");
  auto vocab = std::make_shared<Vocabulary>(
      build_vocabulary(all_texts(train), opt.min_count));

  TrainedLms result;
  result.vocab = vocab;
  for (const auto& part : partitions) {
    result.labels.push_back(part.component_label);
    if (part.utterances.empty()) {
      if (log)
        *log << "warning: empty partition '" << part.component_label
             << "'; emitting unigram fallback\n";
      result.models.push_back(std::make_shared<NGramModel>(
          train_katz(all_texts(train), vocab, 1, opt.discount_cutoff, log)));
      continue;
    }
    bool merged = false;
    if (opt.per_source_merge) {
      // Group this component's utterances by source tag.
      std::map<std::string, std::vector<std::vector<std::string>>> by_source;
      for (const auto& c : train)
        for (const auto& t : c.turns)
          if (t.component_label == part.component_label && !t.source.empty())
            by_source[t.source].push_back(t.text);
      if (by_source.size() > 1) {
        std::vector<std::shared_ptr<const NGramModel>> sources;
        for (const auto& [src, utts] : by_source)
          sources.push_back(std::make_shared<NGramModel>(
              train_katz(utts, vocab, opt.order, opt.discount_cutoff, log)));
        std::vector<std::vector<std::string>> dev_texts;
        for (const auto& c : dev)
          for (const auto& t : c.turns)
            if (t.component_label == part.component_label)
              dev_texts.push_back(t.text);
        WeightVector w;
        if (dev_texts.empty()) {
          w = uniform_weights(sources.size());
        } else {
          MixtureLM source_mix(sources);
          std::vector<std::vector<int>> dev_ids;
          for (const auto& u : dev_texts) dev_ids.push_back(vocab->ids(u));
          w = em_static_weights(source_mix, dev_ids, opt.em_max_iters,
                                opt.em_tol);
        }
        std::vector<std::shared_ptr<const NGramModel>> srcs(sources.begin(),
                                                            sources.end());
        result.models.push_back(
            std::make_shared<NGramModel>(interpolate_static(srcs, w)));
        merged = true;
      }
    }
    if (!merged)
      result.models.push_back(std::make_shared<NGramModel>(train_katz(
          part.utterances, vocab, opt.order, opt.discount_cutoff, log)));
  }

  MixtureLM mix(result.models);
  std::vector<std::vector<int>> dev_ids;
  for (const auto& u : all_texts(dev)) dev_ids.push_back(vocab->ids(u));
  result.static_weights =
      em_static_weights(mix, dev_ids, opt.em_max_iters, opt.em_tol);
  return result;
}

inline void save_trained_lms(const TrainedLms& lms, const std::string& dir) {
  std::filesystem::create_directories(dir);
  MixtureManifest manifest;
  for (size_t k = 0; k < lms.labels.size(); ++k) {
    std::string name = lms.labels[k] + ".arpa";
    write_arpa_file(*lms.models[k], dir + "/" + name);
    manifest.labels.push_back(lms.labels[k]);
    manifest.arpa_paths.push_back(name);
  }
  manifest.static_weights = lms.static_weights;
  save_manifest(manifest, dir + "/manifest.json");
  save_weights_file(dir + "/weights.txt", lms.labels, lms.static_weights);
}

inline TrainedLms load_trained_lms(const std::string& dir) {
  auto manifest = load_manifest(dir + "/manifest.json");
  TrainedLms lms;
  lms.labels = manifest.labels;
  lms.static_weights = manifest.static_weights;
  for (const auto& rel : manifest.arpa_paths)
    lms.models.push_back(
        std::make_shared<NGramModel>(read_arpa_file(dir + "/" + rel)));
  if (lms.models.empty()) throw std::runtime_error("manifest lists no models");
  lms.vocab = lms.models[0]->vocab_ptr();
  return lms;
}

// --- adapter dataset ---------------------------------------------------------

struct AdapterDataOptions {
  FeatureConfig features;
  ContextWindowPolicy window = ContextWindowPolicy::WholeConversation();
  bool with_probs = true;    // ppl loss needs the precomputed matrices
  bool with_targets = true;  // xent loss needs component labels
  size_t max_examples = 0;   // 0 = no cap; otherwise strided subsample
};

// One example per user turn: features from the pre-utterance window (plus
// the reference text standing in for the 1-best when cur is configured),
// the per-component probability matrix, and the component label index.
inline std::vector<TrainExample> build_adapter_dataset(
    const std::vector<Conversation>& convs, const MixtureLM& mix,
    const std::vector<std::string>& labels, const EmbeddingTable& table,
    const AdapterDataOptions& opt) {
  opt.features.validate();
  std::map<std::string, int> label_index;
  for (size_t k = 0; k < labels.size(); ++k)
    label_index[labels[k]] = static_cast<int>(k);

  // Collect candidate (conversation, turn) pairs first so capping can be a
  // deterministic stride over the whole set.
  std::vector<std::pair<const Conversation*, size_t>> sites;
  for (const auto& c : convs)
    for (size_t i = 0; i < c.turns.size(); ++i)
      if (c.turns[i].speaker == Speaker::user) sites.emplace_back(&c, i);
  size_t stride = 1;
  if (opt.max_examples > 0 && sites.size() > opt.max_examples)
    stride = (sites.size() + opt.max_examples - 1) / opt.max_examples;

  std::vector<TrainExample> out;
  for (size_t s = 0; s < sites.size(); s += stride) {
    const Conversation& conv = *sites[s].first;
    size_t i = sites[s].second;
    const Interaction& turn = conv.turns[i];
    auto window = context_window(conv, i, opt.window);
    TrainExample ex;
    const std::vector<std::string>* cur =
        opt.features.cur ? &turn.text : nullptr;
    ex.features =
        build_features(window, cur, turn.timestamp, opt.features, table)
            .flat();
    if (opt.with_probs)
      ex.probs = precompute_probs(mix, mix.vocab().ids(turn.text));
    if (opt.with_targets) {
      auto it = label_index.find(turn.component_label);
      if (it == label_index.end())
        throw std::runtime_error("turn label '" + turn.component_label +
                                 "' not among component labels");
      ex.target = it->second;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// --- evaluation report -------------------------------------------------------

struct ReportRow {
  std::string system;
  std::string features;  // empty for the static baseline
  int passes = 1;
  EvalMetrics metrics;
};

// One CSV row per evaluated system; the relative (WERR) columns compare
// against the first (baseline) row and stay empty on the baseline itself.
inline std::string metrics_csv(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("no report rows");
  std::ostringstream out;
  out << "system,features,pass,PPL,WER,WERR_vs_baseline,entity_ER,"
         "entity_ER_global,entity_WERR\n";
  const double base_wer = rows[0].metrics.wer;
  const double base_entity = rows[0].metrics.entities.rate();
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.system << "," << r.features << "," << r.passes << ","
        << detail::fmt6(r.metrics.ppl) << "," << detail::fmt6(r.metrics.wer)
        << ",";
    if (i > 0) out << detail::fmt6(werr(base_wer, r.metrics.wer));
    out << "," << detail::fmt6(r.metrics.entities.rate()) << ","
        << detail::fmt6(r.metrics.entities.global_rate()) << ",";
    if (i > 0 && base_entity > 0.0)
      out << detail::fmt6(werr(base_entity, r.metrics.entities.rate()));
    out << "\n";
  }
  return out.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ctxlm
