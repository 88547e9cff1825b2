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
// Seeded synthetic benchmark: topic-conditioned vocabularies, multi-turn
// conversations with topic coherence and drift, timestamps, embeddings
// aligned with topics, topic-specific entity tokens, and noisy-channel
// N-best lists for the test partition.

#pragma once

#include <array>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ctxlm/corpus.hpp"
#include "ctxlm/eval.hpp"
#include "ctxlm/features.hpp"

namespace ctxlm {

struct SynthConfig {
  uint64_t seed = 1;
  int n_topics = 5;
  int train_conversations = 2400;
  int dev_conversations = 150;
  int test_conversations = 260;
  bool chatbot = true;  // long drifting conversations vs short goal-oriented
  int min_user_turns = 6;
  int max_user_turns = 10;
  double drift_prob = 0.35;  // chance a conversation changes topic once
  int topic_words = 50;
  int entity_words = 12;
  int embedding_dim = 50;
  int nbest_size = 4;
  double corrupt_entity_prob = 0.40;
  double corrupt_topic_prob = 0.15;
  double corrupt_common_prob = 0.04;
  double channel_error_penalty = 1.0;
  double channel_noise = 1.3;
};

struct SynthDataset {
  std::vector<Conversation> train, dev, test;
  EmbeddingTable embeddings{1};
  std::map<std::string, EntityTagSet> entity_tags;  // test references only
  std::vector<std::string> topics;
};

namespace detail {

inline const std::vector<std::string>& synth_common_words() {
  static const std::vector<std::string> words = {
      "the", "a",    "i",   "you",  "to",  "it",   "is",   "of",  "in", "that",
      "what", "do",  "me",  "my",   "on",  "for",  "with", "can", "so", "now"};
  return words;
}

inline const std::vector<std::string>& synth_topic_names() {
  static const std::vector<std::string> names = {
      "music", "weather", "news", "food", "travel", "sports", "movies",
      "science"};
  return names;
}

}  // namespace detail

// Fully seeded; the same configuration always yields the same dataset.
inline SynthDataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_topics < 2 ||
      cfg.n_topics > static_cast<int>(detail::synth_topic_names().size()))
    throw std::invalid_argument("n_topics out of supported range");
  std::mt19937_64 rng(cfg.seed);
  SynthDataset data;
  for (int k = 0; k < cfg.n_topics; ++k)
    data.topics.push_back(detail::synth_topic_names()[static_cast<size_t>(k)]);

  // Vocabulary: shared common words plus disjoint per-topic content and
  // entity words. Disjoint topic mass keeps the per-topic unigram
  // distributions far apart (total variation well above 0.3).
  std::vector<std::vector<std::string>> topic_vocab(
      static_cast<size_t>(cfg.n_topics));
  std::vector<std::vector<std::string>> entity_vocab(
      static_cast<size_t>(cfg.n_topics));
  for (int k = 0; k < cfg.n_topics; ++k) {
    for (int j = 0; j < cfg.topic_words; ++j)
      topic_vocab[static_cast<size_t>(k)].push_back(
          data.topics[static_cast<size_t>(k)] + "w" + std::to_string(j));
    for (int j = 0; j < cfg.entity_words; ++j)
      entity_vocab[static_cast<size_t>(k)].push_back(
          data.topics[static_cast<size_t>(k)] + "e" + std::to_string(j));
  }

  // Embeddings: topic and entity words cluster around a per-topic centroid;
  // common words sit near the origin.
  {
    EmbeddingTable table(cfg.embedding_dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> centroids;
    for (int k = 0; k < cfg.n_topics; ++k) {
      std::vector<double> c(static_cast<size_t>(cfg.embedding_dim));
      double norm = 0.0;
      for (double& x : c) {
        x = gauss(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : c) x = 1.2 * x / norm;
      centroids.push_back(std::move(c));
    }
    auto near = [&](const std::vector<double>& c, double spread) {
      std::vector<double> v(c.size());
      for (size_t i = 0; i < v.size(); ++i) v[i] = c[i] + spread * gauss(rng);
      return v;
    };
    const std::vector<double> origin(static_cast<size_t>(cfg.embedding_dim),
                                     0.0);
    for (const auto& w : detail::synth_common_words())
      table.set(w, near(origin, 0.15));
    for (int k = 0; k < cfg.n_topics; ++k) {
      for (const auto& w : topic_vocab[static_cast<size_t>(k)])
        table.set(w, near(centroids[static_cast<size_t>(k)], 0.25));
      for (const auto& w : entity_vocab[static_cast<size_t>(k)])
        table.set(w, near(centroids[static_cast<size_t>(k)], 0.25));
    }
    data.embeddings = std::move(table);
  }

  // Zipf-ish weights over common words.
  std::vector<double> common_w;
  for (size_t i = 0; i < detail::synth_common_words().size(); ++i)
    common_w.push_back(1.0 / static_cast<double>(i + 1));
  std::discrete_distribution<int> pick_common(common_w.begin(), common_w.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Sampling one token of the given topic; entity picks are reported so
  // reference entity positions can be tagged.
  auto sample_token = [&](int topic, bool* is_entity) {
    double r = unit(rng);
    *is_entity = false;
    if (r < 0.35) return detail::synth_common_words()[static_cast<size_t>(
        pick_common(rng))];
    if (r < 0.85) {
      std::uniform_int_distribution<int> d(0, cfg.topic_words - 1);
      return topic_vocab[static_cast<size_t>(topic)][static_cast<size_t>(d(rng))];
    }
    *is_entity = true;
    std::uniform_int_distribution<int> d(0, cfg.entity_words - 1);
    return entity_vocab[static_cast<size_t>(topic)][static_cast<size_t>(d(rng))];
  };

  auto sample_utterance = [&](int topic, int min_len, int max_len,
                              EntityTagSet* entities) {
    std::uniform_int_distribution<int> len_d(min_len, max_len);
    int len = len_d(rng);
    std::vector<std::string> toks;
    for (int i = 0; i < len; ++i) {
      bool is_entity = false;
      toks.push_back(sample_token(topic, &is_entity));
      if (is_entity && entities) entities->insert(static_cast<size_t>(i));
    }
    return toks;
  };

  // Noisy-channel corruption: entities swap with entities of another topic,
  // topic words with another topic's words, common words rarely.
  auto corrupt = [&](const std::vector<std::string>& ref, int topic) {
    std::vector<std::string> hyp = ref;
    std::uniform_int_distribution<int> other_d(0, cfg.n_topics - 2);
    int errors = 0;
    for (auto& tok : hyp) {
      bool entity = false, topical = false;
      for (int k = 0; k < cfg.n_topics; ++k) {
        if (tok.rfind(data.topics[static_cast<size_t>(k)] + "e", 0) == 0)
          entity = true;
        else if (tok.rfind(data.topics[static_cast<size_t>(k)] + "w", 0) == 0)
          topical = true;
      }
      double p = entity ? cfg.corrupt_entity_prob
                        : topical ? cfg.corrupt_topic_prob
                                  : cfg.corrupt_common_prob;
      if (unit(rng) >= p) continue;
      ++errors;
      if (entity || topical) {
        int other = other_d(rng);
        if (other >= topic) ++other;
        const auto& pool = entity ? entity_vocab[static_cast<size_t>(other)]
                                  : topic_vocab[static_cast<size_t>(other)];
        std::uniform_int_distribution<int> d(0,
                                             static_cast<int>(pool.size()) - 1);
        tok = pool[static_cast<size_t>(d(rng))];
      } else {
        tok = detail::synth_common_words()[static_cast<size_t>(
            pick_common(rng))];
      }
    }
    return std::make_pair(hyp, errors);
  };

  std::uniform_int_distribution<int> topic_d(0, cfg.n_topics - 1);
  std::uniform_real_distribution<double> start_d(0.0, 14.0 * 86400.0);
  std::uniform_real_distribution<double> gap_d(8.0, 25.0);
  std::normal_distribution<double> channel_noise(0.0, cfg.channel_noise);

  auto make_split = [&](const std::string& prefix, int n_convs, bool is_test) {
    std::vector<Conversation> convs;
    for (int c = 0; c < n_convs; ++c) {
      Conversation conv;
      conv.id = prefix + std::to_string(c);
      int topic = topic_d(rng);
      int user_turns;
      if (cfg.chatbot) {
        std::uniform_int_distribution<int> ut(cfg.min_user_turns,
                                              cfg.max_user_turns);
        user_turns = ut(rng);
      } else {
        std::uniform_int_distribution<int> ut(1, 3);
        user_turns = ut(rng);
      }
      int drift_at = -1;
      if (cfg.chatbot && user_turns >= 4 && unit(rng) < cfg.drift_prob) {
        std::uniform_int_distribution<int> d(2, user_turns - 2);
        drift_at = d(rng);
      }
      double t = start_d(rng);
      int turn_index = 0;
      for (int u = 0; u < user_turns; ++u) {
        if (u == drift_at) {
          std::uniform_int_distribution<int> other_d(0, cfg.n_topics - 2);
          int other = other_d(rng);
          if (other >= topic) ++other;
          topic = other;
        }
        Interaction user;
        user.conversation_id = conv.id;
        user.turn_index = turn_index++;
        user.timestamp = t;
        user.speaker = Speaker::user;
        user.component_label = data.topics[static_cast<size_t>(topic)];
        user.source = unit(rng) < 0.5 ? "live" : "external";
        EntityTagSet entities;
        user.text = sample_utterance(topic, 5, 10, &entities);
        if (is_test) {
          data.entity_tags[utterance_id(user)] = entities;
          // N-best: the reference plus corrupted variants, with channel
          // scores noisy enough that the channel alone is sometimes wrong.
          std::vector<NBestHypothesis> nbest;
          nbest.push_back(
              {user.text, channel_noise(rng), 0.0});
          for (int h = 1; h < cfg.nbest_size; ++h) {
            auto [hyp, errors] = corrupt(user.text, topic);
            nbest.push_back(
                {hyp,
                 -cfg.channel_error_penalty * errors + channel_noise(rng),
                 0.0});
          }
          std::stable_sort(nbest.begin(), nbest.end(),
                           [](const NBestHypothesis& a,
                              const NBestHypothesis& b) {
                             return a.channel_score > b.channel_score;
                           });
          user.nbest = std::move(nbest);
        }
        conv.turns.push_back(std::move(user));
        t += gap_d(rng);

        Interaction agent;
        agent.conversation_id = conv.id;
        agent.turn_index = turn_index++;
        agent.timestamp = t;
        agent.speaker = Speaker::agent;
        agent.component_label = data.topics[static_cast<size_t>(topic)];
        agent.text = sample_utterance(topic, 4, 8, nullptr);
        conv.turns.push_back(std::move(agent));
        t += gap_d(rng);
      }
      convs.push_back(std::move(conv));
    }
    return convs;
  };

  data.train = make_split("train", cfg.train_conversations, false);
  data.dev = make_split("dev", cfg.dev_conversations, false);
  data.test = make_split("test", cfg.test_conversations, true);
  return data;
}

inline void save_synth_dataset(const SynthDataset& data,
                               const std::string& dir) {
  save_interactions_file(dir + "/train.jsonl", data.train);
  save_interactions_file(dir + "/dev.jsonl", data.dev);
  save_interactions_file(dir + "/test.jsonl", data.test);
  data.embeddings.save_file(dir + "/embeddings.txt");
  save_entity_tags(dir + "/entities.txt", data.entity_tags);
}

}  // namespace ctxlm
