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
// Lazy interpolated n-gram mixture: per-component probabilities are kept
// separate and combined with the current weight vector at query time, so
// weights can change per utterance without touching the components.
// Interpolation happens in the linear probability domain.

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ctxlm/ngram.hpp"

namespace ctxlm {

using WeightVector = std::vector<double>;

constexpr double kWeightFloor = 1e-8;

inline void validate_weights(const WeightVector& w) {
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw std::invalid_argument("negative mixture weight");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights do not sum to 1");
}

// Applies the 1e-8 floor and renormalizes; keeps dead components out of
// the -inf log regime.
inline WeightVector floor_weights(WeightVector w, double floor = kWeightFloor) {
  double sum = 0.0;
  for (double& x : w) {
    if (x < floor) x = floor;
    sum += x;
  }
  for (double& x : w) x /= sum;
  return w;
}

inline WeightVector uniform_weights(size_t c) {
  return WeightVector(c, 1.0 / static_cast<double>(c));
}

class MixtureLM {
 public:
  explicit MixtureLM(std::vector<std::shared_ptr<const NGramModel>> components)
      : components_(std::move(components)) {
    if (components_.empty())
      throw std::invalid_argument("mixture needs at least one component");
    max_order_ = 1;
    const auto& toks = components_[0]->vocab().tokens();
    for (const auto& m : components_) {
      max_order_ = std::max(max_order_, m->order());
      if (m->vocab().tokens() != toks)
        throw std::invalid_argument(
            "mixture components must share one vocabulary");
    }
  }

  size_t size() const { return components_.size(); }
  int order() const { return max_order_; }
  const NGramModel& component(size_t k) const { return *components_[k]; }
  const Vocabulary& vocab() const { return components_[0]->vocab(); }

  // Per-component linear probabilities, memoized by the tuple of
  // per-component context states plus the word.
  std::vector<double> component_probs(std::span<const int> hist, int w) const {
    Gram key;
    key.reserve(components_.size() + 1);
    for (const auto& m : components_) key.push_back(m->context_state(hist));
    key.push_back(w);
    {
      std::lock_guard<std::mutex> lock(memo_mutex_);
      auto it = memo_.find(key);
      if (it != memo_.end()) return it->second;
    }
    std::vector<double> probs(components_.size());
    for (size_t k = 0; k < components_.size(); ++k)
      probs[k] = components_[k]->prob(hist, w);
    {
      std::lock_guard<std::mutex> lock(memo_mutex_);
      memo_.emplace(std::move(key), probs);
    }
    return probs;
  }

  // P_mix(w|h) = sum_k lambda_k P_k(w|h), linear domain.
  double mix_prob(const WeightVector& lambda, std::span<const int> hist,
                  int w) const {
    if (lambda.size() != components_.size())
      throw std::invalid_argument("weight/component count mismatch");
    auto probs = component_probs(hist, w);
    double p = 0.0;
    for (size_t k = 0; k < probs.size(); ++k) p += lambda[k] * probs[k];
    return p;
  }

  // Per-position component probabilities for an utterance, one row per
  // predicted token including </s>.
  std::vector<std::vector<double>> utterance_component_probs(
      const std::vector<int>& utt) const {
    std::vector<int> padded;
    padded.reserve(utt.size() + static_cast<size_t>(max_order_));
    for (int i = 0; i + 1 < max_order_; ++i)
      padded.push_back(Vocabulary::kBosId);
    padded.insert(padded.end(), utt.begin(), utt.end());
    padded.push_back(Vocabulary::kEosId);
    const size_t ctx = static_cast<size_t>(max_order_ - 1);
    std::vector<std::vector<double>> rows;
    rows.reserve(utt.size() + 1);
    for (size_t j = ctx; j < padded.size(); ++j) {
      std::span<const int> hist(padded.data(), j);
      rows.push_back(component_probs(hist, padded[j]));
    }
    return rows;
  }

  // Natural-log utterance probability, all positions including </s>.
  double utterance_logprob(const WeightVector& lambda,
                           const std::vector<int>& utt) const {
    if (lambda.size() != components_.size())
      throw std::invalid_argument("weight/component count mismatch");
    double lp = 0.0;
    for (const auto& row : utterance_component_probs(utt)) {
      double p = 0.0;
      for (size_t k = 0; k < row.size(); ++k) p += lambda[k] * row[k];
      lp += std::log(p);
    }
    return lp;
  }

  void clear_cache() const {
    std::lock_guard<std::mutex> lock(memo_mutex_);
    memo_.clear();
  }

 private:
  std::vector<std::shared_ptr<const NGramModel>> components_;
  int max_order_ = 1;
  mutable std::unordered_map<Gram, std::vector<double>, GramHash> memo_;
  mutable std::mutex memo_mutex_;
};

// exp of the mean negative log probability per predicted token (incl </s>).
inline double perplexity(const MixtureLM& mix, const WeightVector& lambda,
                         const std::vector<std::vector<int>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  double lp = 0.0;
  size_t tokens = 0;
  for (const auto& utt : corpus) {
    lp += mix.utterance_logprob(lambda, utt);
    tokens += utt.size() + 1;
  }
  return std::exp(-lp / static_cast<double>(tokens));
}

// Per-utterance weights variant.
inline double perplexity(const MixtureLM& mix,
                         const std::vector<WeightVector>& lambdas,
                         const std::vector<std::vector<int>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  if (lambdas.size() != corpus.size())
    throw std::invalid_argument("one weight vector per utterance required");
  double lp = 0.0;
  size_t tokens = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    lp += mix.utterance_logprob(lambdas[i], corpus[i]);
    tokens += corpus[i].size() + 1;
  }
  return std::exp(-lp / static_cast<double>(tokens));
}

struct EmResult {
  WeightVector weights;
  std::vector<double> mean_loglik_trace;  // one entry per iteration
};

// Standard mixture-weight EM over token positions, uniform initialization.
// Stops when the mean log-likelihood improves by less than tol.
inline EmResult em_static_weights_traced(const MixtureLM& mix,
                                         const std::vector<std::vector<int>>& dev,
                                         int max_iters = 100,
                                         double tol = 1e-6) {
  if (dev.empty()) throw std::invalid_argument("em: empty dev corpus");
  const size_t c = mix.size();
  std::vector<std::vector<double>> rows;
  for (const auto& utt : dev)
    for (auto& row : mix.utterance_component_probs(utt))
      rows.push_back(std::move(row));
  const double n = static_cast<double>(rows.size());

  EmResult res;
  res.weights = uniform_weights(c);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<double> resp(c, 0.0);
    double ll = 0.0;
    for (const auto& row : rows) {
      double m = 0.0;
      for (size_t k = 0; k < c; ++k) m += res.weights[k] * row[k];
      ll += std::log(m);
      for (size_t k = 0; k < c; ++k) resp[k] += res.weights[k] * row[k] / m;
    }
    ll /= n;
    res.mean_loglik_trace.push_back(ll);
    for (size_t k = 0; k < c; ++k) res.weights[k] = resp[k] / n;
    if (ll - prev_ll < tol && iter > 0) break;
    prev_ll = ll;
  }
  res.weights = floor_weights(std::move(res.weights));
  return res;
}

inline WeightVector em_static_weights(const MixtureLM& mix,
                                      const std::vector<std::vector<int>>& dev,
                                      int max_iters = 100, double tol = 1e-6) {
  return em_static_weights_traced(mix, dev, max_iters, tol).weights;
}

// --- static model interpolation ---------------------------------------------
// Merges several backoff models sharing a vocabulary into one model whose
// conditional probabilities equal the weighted sum at every stored n-gram,
// with backoff weights recomputed so each history normalizes. Used for
// per-source merging of component LMs.
inline NGramModel interpolate_static(
    const std::vector<std::shared_ptr<const NGramModel>>& models,
    const WeightVector& weights) {
  if (models.empty()) throw std::invalid_argument("no models to interpolate");
  if (models.size() != weights.size())
    throw std::invalid_argument("weight/model count mismatch");
  validate_weights(weights);
  int n = 1;
  const auto& toks = models[0]->vocab().tokens();
  for (const auto& m : models) {
    n = std::max(n, m->order());
    if (m->vocab().tokens() != toks)
      throw std::invalid_argument("models must share one vocabulary");
  }
  NGramModel out(n, models[0]->vocab_ptr());

  // Union of stored grams per level; merged probability by full backoff
  // evaluation in each source.
  for (int len = 1; len <= n; ++len) {
    std::unordered_map<Gram, bool, GramHash> grams;  // value: ends in <s>
    for (const auto& m : models) {
      if (len > m->order()) continue;
      for (const auto& [g, e] : m->level(len))
        grams.emplace(g, g.back() == Vocabulary::kBosId);
    }
    for (const auto& [g, is_bos] : grams) {
      if (is_bos) {
        out.set_entry(g, kDummyLog10Prob);
        continue;
      }
      std::span<const int> hist(g.data(), g.size() - 1);
      double p = 0.0;
      for (size_t s = 0; s < models.size(); ++s)
        p += weights[s] * models[s]->prob(hist, g.back());
      out.set_entry(g, std::log10(p));
    }
  }
  // Backoff weights bottom-up: histories of stored grams at each level.
  for (int len = 2; len <= n; ++len) {
    std::unordered_map<Gram, std::vector<int>, GramHash> by_hist;
    for (const auto& [g, e] : out.level(len))
      by_hist[Gram(g.begin(), g.end() - 1)].push_back(g.back());
    for (const auto& [h, exts] : by_hist) {
      std::span<const int> back(h.data() + 1, h.size() - 1);
      std::span<const int> full(h.data(), h.size());
      double seen = 0.0, lower = 0.0;
      for (int w : exts) {
        if (w == Vocabulary::kBosId) continue;
        Gram g = h;
        g.push_back(w);
        seen += std::pow(10.0, out.find(g)->logp);
        lower += out.prob(back, w);
      }
      double num = 1.0 - seen, den = 1.0 - lower;
      double bow;
      if (num <= 1e-10) {
        bow = kZeroBackoffLog10;
      } else if (den <= 1e-10) {
        // No lower-order mass left for unseen continuations: renormalize
        // the stored probabilities so the history still sums to one.
        double scale = -std::log10(seen);
        for (int w : exts) {
          if (w == Vocabulary::kBosId) continue;
          Gram g = h;
          g.push_back(w);
          out.set_entry(g, out.find(g)->logp + scale);
        }
        bow = kZeroBackoffLog10;
      } else {
        bow = std::log10(num / den);
      }
      out.set_backoff(h, bow);
    }
  }
  out.finalize();
  return out;
}

// --- manifest and weights files ---------------------------------------------

struct MixtureManifest {
  std::vector<std::string> labels;
  std::vector<std::string> arpa_paths;
  WeightVector static_weights;  // empty when absent
};

inline void save_manifest(const MixtureManifest& m, const std::string& path) {
  nlohmann::json j;
  j["components"] = nlohmann::json::array();
  for (size_t i = 0; i < m.labels.size(); ++i)
    j["components"].push_back({{"label", m.labels[i]},
                               {"arpa", m.arpa_paths[i]}});
  if (!m.static_weights.empty()) j["static_weights"] = m.static_weights;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

inline MixtureManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  MixtureManifest m;
  for (const auto& c : j.at("components")) {
    m.labels.push_back(c.at("label").get<std::string>());
    m.arpa_paths.push_back(c.at("arpa").get<std::string>());
  }
  if (j.contains("static_weights"))
    m.static_weights = j["static_weights"].get<WeightVector>();
  return m;
}

inline void save_weights_file(const std::string& path,
                              const std::vector<std::string>& labels,
                              const WeightVector& w) {
  if (labels.size() != w.size())
    throw std::invalid_argument("label/weight count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write weights file: " + path);
  for (size_t i = 0; i < labels.size(); ++i)
    out << labels[i] << " " << detail::fmt6(w[i]) << "\n";
}

inline std::pair<std::vector<std::string>, WeightVector> load_weights_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open weights file: " + path);
  std::vector<std::string> labels;
  WeightVector w;
  std::string label;
  double x;
  while (in >> label >> x) {
    labels.push_back(label);
    w.push_back(x);
  }
  return {labels, w};
}

}  // namespace ctxlm
