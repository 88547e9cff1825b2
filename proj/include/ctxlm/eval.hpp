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
// Scoring and the decoding harness: Levenshtein alignment, WER/WERR,
// entity error rates, N-best rescoring, and 1-pass / 2-pass evaluation of
// per-utterance adapted mixtures.

#pragma once

#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxlm/adapter.hpp"
#include "ctxlm/features.hpp"
#include "ctxlm/mixture.hpp"
#include "ctxlm/topic.hpp"

namespace ctxlm {

enum class AlignOp { correct, substitution, deletion };

struct AlignmentResult {
  std::vector<AlignOp> ref_ops;  // one per reference token
  size_t substitutions = 0;
  size_t deletions = 0;
  size_t insertions = 0;
  size_t n_ref = 0;

  size_t edit_distance() const { return substitutions + deletions + insertions; }
};

// Minimal edit distance with unit costs; among minimal alignments the
// backtrace prefers match > substitution > deletion > insertion.
inline AlignmentResult align(const std::vector<std::string>& ref,
                             const std::vector<std::string>& hyp) {
  const size_t r = ref.size(), h = hyp.size();
  std::vector<std::vector<int>> d(r + 1, std::vector<int>(h + 1, 0));
  for (size_t i = 0; i <= r; ++i) d[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= h; ++j) d[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= r; ++i)
    for (size_t j = 1; j <= h; ++j) {
      int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int del = d[i - 1][j] + 1;
      int ins = d[i][j - 1] + 1;
      d[i][j] = std::min({sub, del, ins});
    }
  AlignmentResult res;
  res.n_ref = r;
  res.ref_ops.assign(r, AlignOp::correct);
  size_t i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] &&
        d[i][j] == d[i - 1][j - 1]) {
      res.ref_ops[i - 1] = AlignOp::correct;
      --i, --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      res.ref_ops[i - 1] = AlignOp::substitution;
      ++res.substitutions;
      --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      res.ref_ops[i - 1] = AlignOp::deletion;
      ++res.deletions;
      --i;
    } else {
      ++res.insertions;
      --j;
    }
  }
  return res;
}

inline double wer(const std::vector<AlignmentResult>& results) {
  if (results.empty()) throw std::invalid_argument("wer: empty corpus");
  size_t errors = 0, n_ref = 0;
  for (const auto& a : results) {
    errors += a.edit_distance();
    n_ref += a.n_ref;
  }
  if (n_ref == 0) throw std::invalid_argument("wer: empty references");
  return static_cast<double>(errors) / static_cast<double>(n_ref);
}

// Relative change: negative means the system improved over the baseline.
inline double werr(double baseline_wer, double system_wer) {
  if (baseline_wer <= 0.0)
    throw std::invalid_argument("werr: baseline WER must be positive");
  return (system_wer - baseline_wer) / baseline_wer;
}

// Reference token indices tagged as named entities, per utterance.
using EntityTagSet = std::set<size_t>;

struct EntityErrorCounts {
  size_t entity_errors = 0;   // substituted or deleted entity tokens
  size_t entity_tokens = 0;   // tagged reference tokens
  size_t ref_tokens = 0;      // all reference tokens

  // Entity-conditional rate, in [0, 1].
  double rate() const {
    return entity_tokens == 0
               ? 0.0
               : static_cast<double>(entity_errors) /
                     static_cast<double>(entity_tokens);
  }
  // Global-denominator variant (errors over all reference words).
  double global_rate() const {
    return ref_tokens == 0 ? 0.0
                           : static_cast<double>(entity_errors) /
                                 static_cast<double>(ref_tokens);
  }
};

inline EntityErrorCounts entity_error_counts(
    const std::vector<AlignmentResult>& alignments,
    const std::vector<EntityTagSet>& tags) {
  if (alignments.size() != tags.size())
    throw std::invalid_argument("alignment/tag count mismatch");
  EntityErrorCounts c;
  for (size_t u = 0; u < alignments.size(); ++u) {
    const auto& a = alignments[u];
    c.ref_tokens += a.n_ref;
    for (size_t idx : tags[u]) {
      if (idx >= a.n_ref)
        throw std::invalid_argument("entity index beyond reference length");
      ++c.entity_tokens;
      if (a.ref_ops[idx] != AlignOp::correct) ++c.entity_errors;
    }
  }
  return c;
}

inline double entity_error_rate(const std::vector<AlignmentResult>& alignments,
                                const std::vector<EntityTagSet>& tags) {
  return entity_error_counts(alignments, tags).rate();
}

// score(h) = channel_score + lm_scale * mixture utterance log prob; ties go
// to the lower original rank. Returns the winning index.
inline size_t rescore_nbest(const std::vector<NBestHypothesis>& nbest,
                            const MixtureLM& mix, const WeightVector& lambda,
                            const Vocabulary& vocab, double lm_scale) {
  if (nbest.empty()) throw std::invalid_argument("rescore_nbest: empty list");
  if (lm_scale < 0.0) throw std::invalid_argument("lm scale must be >= 0");
  size_t best = 0;
  double best_score = 0.0;
  for (size_t i = 0; i < nbest.size(); ++i) {
    double score = nbest[i].channel_score;
    if (lm_scale > 0.0)
      score += lm_scale *
               mix.utterance_logprob(lambda, vocab.ids(nbest[i].text));
    if (i == 0 || score > best_score) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

// --- entity tag file: per line "utterance_id idx1,idx2,..." ----------------

inline std::string utterance_id(const Interaction& t) {
  return t.conversation_id + ":" + std::to_string(t.turn_index);
}

inline void save_entity_tags(const std::string& path,
                             const std::map<std::string, EntityTagSet>& tags) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write entity tags: " + path);
  for (const auto& [id, set] : tags) {
    out << id << " ";
    bool first = true;
    for (size_t idx : set) {
      if (!first) out << ",";
      out << idx;
      first = false;
    }
    out << "\n";
  }
}

inline std::map<std::string, EntityTagSet> load_entity_tags(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open entity tags: " + path);
  std::map<std::string, EntityTagSet> tags;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, idxs;
    ls >> id >> idxs;
    EntityTagSet set;
    std::istringstream is(idxs);
    std::string item;
    while (std::getline(is, item, ','))
      if (!item.empty()) set.insert(std::stoul(item));
    tags[id] = set;
  }
  return tags;
}

// --- 1-pass / 2-pass evaluation ---------------------------------------------

// Produces the interpolation weights for one utterance. The first-pass
// hypothesis pointer is null in 1-pass mode; references are never passed
// here, so cur features cannot leak the answer.
using WeightPolicy = std::function<WeightVector(
    const std::vector<Interaction>& window, double clock,
    const std::vector<std::string>* first_pass_hyp)>;

inline WeightPolicy static_policy(WeightVector lambda) {
  return [lambda = std::move(lambda)](const std::vector<Interaction>&, double,
                                      const std::vector<std::string>*) {
    return lambda;
  };
}

inline WeightPolicy adapter_policy(const AdapterNet& net,
                                   const FeatureConfig& config,
                                   const EmbeddingTable& table) {
  config.validate();
  return [&net, config, &table](const std::vector<Interaction>& window,
                                double clock,
                                const std::vector<std::string>* hyp) {
    return net.forward(build_features(window, hyp, clock, config, table).flat());
  };
}

// Topic posteriors over the first-pass 1-best, used directly as weights.
inline WeightPolicy topic_policy(const TopicClassifier& clf) {
  return [&clf](const std::vector<Interaction>&, double,
                const std::vector<std::string>* hyp) {
    if (hyp == nullptr)
      throw std::invalid_argument("topic policy requires a 1-best hypothesis");
    return WeightVector(floor_weights(clf.posterior(*hyp)));
  };
}

struct EvalOptions {
  ContextWindowPolicy window = ContextWindowPolicy::WholeConversation();
  double lm_scale = 1.0;
  bool uses_cur = false;                  // 2-pass only
  WeightVector first_pass_weights;        // static weights for pass 1
};

struct EvalMetrics {
  double ppl = 0.0;
  double wer = 0.0;
  EntityErrorCounts entities;
  size_t utterances = 0;
  std::vector<WeightVector> lambdas;  // per evaluated utterance
};

namespace detail {

inline EvalMetrics run_passes(const std::vector<Conversation>& test,
                              const MixtureLM& mix, const WeightPolicy& policy,
                              const EvalOptions& opt,
                              const std::map<std::string, EntityTagSet>& tags,
                              int passes) {
  const Vocabulary& vocab = mix.vocab();
  EvalMetrics m;
  std::vector<AlignmentResult> alignments;
  std::vector<EntityTagSet> align_tags;
  double logprob = 0.0;
  size_t tokens = 0;
  for (const auto& conv : test) {
    for (size_t i = 0; i < conv.turns.size(); ++i) {
      const Interaction& turn = conv.turns[i];
      if (turn.speaker != Speaker::user || turn.nbest.empty()) continue;
      auto window = context_window(conv, i, opt.window);

      const std::vector<std::string>* cur_hyp = nullptr;
      std::vector<std::string> first_best;
      if (passes == 2) {
        if (opt.first_pass_weights.empty())
          throw std::invalid_argument("2-pass requires first-pass weights");
        size_t win = rescore_nbest(turn.nbest, mix, opt.first_pass_weights,
                                   vocab, opt.lm_scale);
        first_best = turn.nbest[win].text;
        cur_hyp = &first_best;
      }
      WeightVector lambda =
          floor_weights(policy(window, turn.timestamp, cur_hyp));

      size_t win = rescore_nbest(turn.nbest, mix, lambda, vocab, opt.lm_scale);
      alignments.push_back(align(turn.text, turn.nbest[win].text));
      auto it = tags.find(utterance_id(turn));
      align_tags.push_back(it == tags.end() ? EntityTagSet{} : it->second);

      logprob += mix.utterance_logprob(lambda, vocab.ids(turn.text));
      tokens += turn.text.size() + 1;
      m.lambdas.push_back(std::move(lambda));
      ++m.utterances;
    }
  }
  if (m.utterances == 0)
    throw std::invalid_argument("no evaluable utterances in test set");
  m.ppl = std::exp(-logprob / static_cast<double>(tokens));
  m.wer = wer(alignments);
  m.entities = entity_error_counts(alignments, align_tags);
  return m;
}

}  // namespace detail

// 1-pass: weights from pre-utterance context only; cur features are
// rejected by construction (no hypothesis is supplied to the policy).
inline EvalMetrics run_1pass(const std::vector<Conversation>& test,
                             const MixtureLM& mix, const WeightPolicy& policy,
                             const EvalOptions& opt,
                             const std::map<std::string, EntityTagSet>& tags = {}) {
  if (opt.uses_cur)
    throw std::invalid_argument("cur features are not available in 1-pass mode");
  return detail::run_passes(test, mix, policy, opt, tags, 1);
}

// 2-pass: a static-weight first pass picks the 1-best, whose text (never
// the reference) feeds the cur features for the adapted second pass.
inline EvalMetrics run_2pass(const std::vector<Conversation>& test,
                             const MixtureLM& mix, const WeightPolicy& policy,
                             const EvalOptions& opt,
                             const std::map<std::string, EntityTagSet>& tags = {}) {
  return detail::run_passes(test, mix, policy, opt, tags, 2);
}

}  // namespace ctxlm
