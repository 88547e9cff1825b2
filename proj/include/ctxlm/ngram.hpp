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
// Katz-smoothed backoff n-gram models: counting, Good-Turing discounting,
// backoff probability queries, and ARPA serialization.
//
// Conventions: probabilities are stored in log10 (ARPA convention).
// <s> is never a prediction target; entries whose final token is <s> are
// kept with a -99 placeholder probability so they can carry backoff
// weights. No stored history contains </s>.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxlm/corpus.hpp"

namespace ctxlm {

using Gram = std::vector<int>;

struct GramHash {
  size_t operator()(const Gram& g) const {
    uint64_t h = 1469598103934665603ull;
    for (int id : g) {
      h ^= static_cast<uint64_t>(static_cast<uint32_t>(id));
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

constexpr double kDummyLog10Prob = -99.0;  // placeholder for <s>-final grams
constexpr double kZeroBackoffLog10 = -99.0;  // backoff carrying no mass

// Raised-count table for orders 1..n with count-of-counts support.
class CountTable {
 public:
  explicit CountTable(int order = 1) : order_(order), counts_(order) {
    if (order < 1) throw std::invalid_argument("order must be >= 1");
  }

  int order() const { return order_; }

  void add(const Gram& g, int64_t by = 1) {
    if (g.empty() || static_cast<int>(g.size()) > order_)
      throw std::invalid_argument("gram length out of range");
    counts_[g.size() - 1][g] += by;
  }

  int64_t count(const Gram& g) const {
    if (g.empty() || static_cast<int>(g.size()) > order_) return 0;
    const auto& m = counts_[g.size() - 1];
    auto it = m.find(g);
    return it == m.end() ? 0 : it->second;
  }

  const std::unordered_map<Gram, int64_t, GramHash>& level(int len) const {
    return counts_[len - 1];
  }

  // N_r for grams of the given length.
  int64_t count_of_counts(int len, int64_t r) const {
    int64_t n = 0;
    for (const auto& [g, c] : counts_[len - 1])
      if (c == r) ++n;
    return n;
  }

  bool empty() const {
    for (const auto& m : counts_)
      if (!m.empty()) return false;
    return true;
  }

 private:
  int order_;
  std::vector<std::unordered_map<Gram, int64_t, GramHash>> counts_;
};

// Pads each utterance with (n-1) leading <s> and one trailing </s>, then
// counts every k-gram for k <= n.
inline CountTable count_ngrams(const std::vector<std::vector<int>>& corpus,
                               int n) {
  if (n < 1) throw std::invalid_argument("order must be >= 1");
  CountTable table(n);
  for (const auto& utt : corpus) {
    std::vector<int> padded;
    padded.reserve(utt.size() + static_cast<size_t>(n));
    for (int i = 0; i + 1 < n; ++i) padded.push_back(Vocabulary::kBosId);
    padded.insert(padded.end(), utt.begin(), utt.end());
    padded.push_back(Vocabulary::kEosId);
    for (size_t i = 0; i < padded.size(); ++i)
      for (int k = 1; k <= n && i + k <= padded.size(); ++k)
        table.add(Gram(padded.begin() + i, padded.begin() + i + k));
  }
  return table;
}

inline CountTable count_ngrams(
    const std::vector<std::vector<std::string>>& corpus,
    const Vocabulary& vocab, int n) {
  std::vector<std::vector<int>> ids;
  ids.reserve(corpus.size());
  for (const auto& utt : corpus) ids.push_back(vocab.ids(utt));
  return count_ngrams(ids, n);
}

struct ProbEntry {
  double logp = kDummyLog10Prob;  // log10 P(w|h)
  double bow = 0.0;               // log10 backoff weight, valid if has_bow
  bool has_bow = false;
};

// Immutable after training/load; prob() is safe for concurrent readers.
class NGramModel {
 public:
  NGramModel(int order, std::shared_ptr<const Vocabulary> vocab)
      : order_(order), vocab_(std::move(vocab)), levels_(order) {
    if (order < 1) throw std::invalid_argument("order must be >= 1");
    if (!vocab_) throw std::invalid_argument("null vocabulary");
  }

  int order() const { return order_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }

  void set_entry(const Gram& g, double logp) {
    levels_[g.size() - 1][g].logp = logp;
  }
  void set_backoff(const Gram& g, double bow) {
    auto& e = levels_[g.size() - 1][g];
    e.bow = bow;
    e.has_bow = true;
  }

  const ProbEntry* find(const Gram& g) const {
    if (g.empty() || static_cast<int>(g.size()) > order_) return nullptr;
    const auto& m = levels_[g.size() - 1];
    auto it = m.find(g);
    return it == m.end() ? nullptr : &it->second;
  }

  size_t level_size(int len) const { return levels_[len - 1].size(); }
  const std::unordered_map<Gram, ProbEntry, GramHash>& level(int len) const {
    return levels_[len - 1];
  }

  // log10 P(w|h) via the standard backoff recursion. Unknown words map to
  // <unk>; always defined.
  double log10_prob(std::span<const int> hist, int w) const {
    if (w < 0 || w >= vocab_->size()) w = Vocabulary::kUnkId;
    if (static_cast<int>(hist.size()) > order_ - 1)
      hist = hist.subspan(hist.size() - static_cast<size_t>(order_ - 1));
    double bow_acc = 0.0;
    for (size_t len = hist.size();; --len) {
      Gram g(hist.end() - static_cast<ptrdiff_t>(len), hist.end());
      g.push_back(w);
      if (const ProbEntry* e = find(g)) return bow_acc + e->logp;
      if (len == 0) {
        // word absent from the model entirely: fall back to <unk>
        Gram unk{Vocabulary::kUnkId};
        const ProbEntry* e = find(unk);
        if (!e)
          throw std::logic_error("model has no <unk> unigram");
        return bow_acc + e->logp;
      }
      Gram ctx(hist.end() - static_cast<ptrdiff_t>(len), hist.end());
      if (const ProbEntry* c = find(ctx); c && c->has_bow) bow_acc += c->bow;
    }
  }

  double prob(std::span<const int> hist, int w) const {
    return std::pow(10.0, log10_prob(hist, w));
  }

  // --- context states -----------------------------------------------------
  // P(w|h) depends only on the longest suffix of h that is a stored
  // context; these states mirror the on-the-fly WFST view and key the
  // mixture memo cache.

  void finalize() {
    context_ids_.clear();
    // Contexts are histories of stored grams, in deterministic order.
    std::map<Gram, int> ordered;
    for (int len = 2; len <= order_; ++len)
      for (const auto& [g, e] : levels_[len - 1])
        ordered.emplace(Gram(g.begin(), g.end() - 1), 0);
    int next = 0;
    for (auto& [g, id] : ordered) id = next++;
    context_ids_.insert(ordered.begin(), ordered.end());
  }

  // Dense id of the longest stored-context suffix of h, or -1 (unigram
  // state). Histories longer than order-1 are truncated first.
  int context_state(std::span<const int> hist) const {
    if (static_cast<int>(hist.size()) > order_ - 1)
      hist = hist.subspan(hist.size() - static_cast<size_t>(order_ - 1));
    for (size_t len = hist.size(); len >= 1; --len) {
      Gram g(hist.end() - static_cast<ptrdiff_t>(len), hist.end());
      auto it = context_ids_.find(g);
      if (it != context_ids_.end()) return it->second;
    }
    return -1;
  }

 private:
  int order_;
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<std::unordered_map<Gram, ProbEntry, GramHash>> levels_;
  std::unordered_map<Gram, int, GramHash> context_ids_;
};

namespace detail {

// Good-Turing discount ratios d[r] for r = 1..cutoff; d = 1 means no
// discount. Degenerate count-of-counts fall back to 1 with a warning.
inline std::vector<double> katz_discounts(const CountTable& counts, int len,
                                          int cutoff, std::ostream* log) {
  std::vector<double> d(static_cast<size_t>(cutoff) + 1, 1.0);
  std::vector<int64_t> nr(static_cast<size_t>(cutoff) + 2, 0);
  for (int64_t r = 1; r <= cutoff + 1; ++r)
    nr[static_cast<size_t>(r)] = counts.count_of_counts(len, r);
  const double n1 = static_cast<double>(nr[1]);
  double a = 0.0;
  if (n1 > 0)
    a = (cutoff + 1) * static_cast<double>(nr[static_cast<size_t>(cutoff + 1)]) / n1;
  for (int r = 1; r <= cutoff; ++r) {
    bool ok = false;
    if (n1 > 0 && a < 1.0 && nr[static_cast<size_t>(r)] > 0 &&
        nr[static_cast<size_t>(r + 1)] > 0) {
      double rstar = (r + 1) * static_cast<double>(nr[static_cast<size_t>(r + 1)]) /
                     static_cast<double>(nr[static_cast<size_t>(r)]);
      double dr = (rstar / r - a) / (1.0 - a);
      if (dr > 0.0 && dr <= 1.0) {
        d[static_cast<size_t>(r)] = dr;
        ok = true;
      }
    }
    if (!ok && log)
      *log << "warning: degenerate count-of-counts at order " << len
           << " count " << r << "; no discount applied\n";
  }
  return d;
}

}  // namespace detail

// Katz smoothing with Good-Turing discounting of counts <= discount_cutoff.
// Backoff weights are set so every history distribution normalizes over the
// vocabulary (with <s> excluded as a prediction target).
inline NGramModel train_katz(const CountTable& counts,
                             std::shared_ptr<const Vocabulary> vocab,
                             int discount_cutoff = 5,
                             std::ostream* log = &std::cerr) {
  if (counts.empty()) throw std::invalid_argument("train_katz: empty counts");
  if (discount_cutoff < 1)
    throw std::invalid_argument("discount_cutoff must be >= 1");
  const int n = counts.order();
  NGramModel model(n, vocab);
  const Vocabulary& v = *vocab;

  // Unigrams: discounted relative frequencies; leftover mass spread over
  // unseen vocabulary words (<unk> in particular).
  {
    auto d = detail::katz_discounts(counts, 1, discount_cutoff, log);
    int64_t total = 0;
    for (const auto& [g, c] : counts.level(1))
      if (g[0] != Vocabulary::kBosId) total += c;
    if (total == 0) throw std::invalid_argument("train_katz: no tokens");
    double seen_mass = 0.0;
    std::vector<int> unseen;
    for (int w = 0; w < v.size(); ++w) {
      if (w == Vocabulary::kBosId) continue;
      int64_t c = counts.count({w});
      if (c > 0) {
        double disc = c <= discount_cutoff ? d[static_cast<size_t>(c)] : 1.0;
        double p = disc * static_cast<double>(c) / static_cast<double>(total);
        model.set_entry({w}, std::log10(p));
        seen_mass += p;
      } else {
        unseen.push_back(w);
      }
    }
    double leftover = 1.0 - seen_mass;
    if (!unseen.empty()) {
      double share = leftover / static_cast<double>(unseen.size());
      double logp = share > 1e-30 ? std::log10(share) : kDummyLog10Prob;
      for (int w : unseen) model.set_entry({w}, logp);
    } else if (leftover > 1e-9 && log) {
      *log << "warning: unigram leftover mass " << leftover
           << " with no unseen words; distribution renormalized on query\n";
    }
    // <s> placeholder so it can carry a backoff weight.
    if (counts.count({Vocabulary::kBosId}) > 0 || n > 1)
      model.set_entry({Vocabulary::kBosId}, kDummyLog10Prob);
  }

  // Higher orders, bottom up.
  for (int len = 2; len <= n; ++len) {
    auto d = detail::katz_discounts(counts, len, discount_cutoff, log);
    // Group grams by history.
    std::unordered_map<Gram, std::vector<std::pair<int, int64_t>>, GramHash>
        by_hist;
    for (const auto& [g, c] : counts.level(len)) {
      Gram h(g.begin(), g.end() - 1);
      by_hist[h].emplace_back(g.back(), c);
    }
    for (const auto& [h, exts] : by_hist) {
      int64_t hist_total = 0;
      for (const auto& [w, c] : exts)
        if (w != Vocabulary::kBosId) hist_total += c;
      double seen_mass = 0.0;     // sum of discounted P(w|h) over seen w
      double lower_mass = 0.0;    // sum of P(w|backoff(h)) over the same w
      std::span<const int> back(h.data() + 1, h.size() - 1);
      for (const auto& [w, c] : exts) {
        Gram g = h;
        g.push_back(w);
        if (w == Vocabulary::kBosId) {
          model.set_entry(g, kDummyLog10Prob);
          continue;
        }
        double disc = c <= discount_cutoff ? d[static_cast<size_t>(c)] : 1.0;
        double p = disc * static_cast<double>(c) /
                   static_cast<double>(hist_total);
        model.set_entry(g, std::log10(p));
        seen_mass += p;
        lower_mass += model.prob(back, w);
      }
      // Backoff weight: leftover mass divided by lower-order leftover.
      double num = 1.0 - seen_mass;
      double den = 1.0 - lower_mass;
      double bow;
      if (num <= 1e-10) {
        bow = kZeroBackoffLog10;  // no mass left for unseen words
      } else if (den <= 1e-10) {
        // The lower order has no mass left for unseen continuations, so the
        // discounted leftover cannot be redistributed through backoff.
        // Undo the discount by renormalizing the seen probabilities so the
        // history still sums to one.
        if (log)
          *log << "warning: history covers full lower-order mass; "
                  "renormalizing its seen probabilities\n";
        double scale = -std::log10(seen_mass);
        for (const auto& [w, c] : exts) {
          if (w == Vocabulary::kBosId) continue;
          Gram g = h;
          g.push_back(w);
          model.set_entry(g, model.find(g)->logp + scale);
        }
        bow = kZeroBackoffLog10;
      } else {
        bow = std::log10(num / den);
      }
      model.set_backoff(h, bow);
    }
  }
  model.finalize();
  return model;
}

inline NGramModel train_katz(const std::vector<std::vector<std::string>>& corpus,
                             std::shared_ptr<const Vocabulary> vocab, int n,
                             int discount_cutoff = 5,
                             std::ostream* log = &std::cerr) {
  auto counts = count_ngrams(corpus, *vocab, n);
  return train_katz(counts, std::move(vocab), discount_cutoff, log);
}

// --- ARPA serialization ----------------------------------------------------

namespace detail {
inline std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}
}  // namespace detail

inline void write_arpa(const NGramModel& model, std::ostream& out) {
  const Vocabulary& v = model.vocab();
  out << "\\data\\\n";
  for (int len = 1; len <= model.order(); ++len)
    out << "ngram " << len << "=" << model.level_size(len) << "\n";
  for (int len = 1; len <= model.order(); ++len) {
    out << "\n\\" << len << "-grams:\n";
    std::map<Gram, const ProbEntry*> ordered;
    for (const auto& [g, e] : model.level(len)) ordered.emplace(g, &e);
    for (const auto& [g, e] : ordered) {
      out << detail::fmt6(e->logp) << "\t";
      for (size_t i = 0; i < g.size(); ++i) {
        if (i) out << " ";
        out << v.token(g[i]);
      }
      if (e->has_bow) out << "\t" << detail::fmt6(e->bow);
      out << "\n";
    }
  }
  out << "\n\\end\\\n";
}

inline std::string write_arpa_string(const NGramModel& model) {
  std::ostringstream os;
  write_arpa(model, os);
  return os.str();
}

inline void write_arpa_file(const NGramModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ARPA file: " + path);
  write_arpa(model, out);
}

inline NGramModel read_arpa(std::istream& in) {
  std::string line;
  // Find \data\ header.
  bool found = false;
  while (std::getline(in, line)) {
    if (line == "\\data\\") {
      found = true;
      break;
    }
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
      throw std::runtime_error("ARPA: expected \\data\\ header");
  }
  if (!found) throw std::runtime_error("ARPA: missing \\data\\ header");
  std::vector<size_t> declared;  // per-order gram counts
  while (std::getline(in, line)) {
    if (line.empty()) break;
    if (line.rfind("ngram ", 0) != 0)
      throw std::runtime_error("ARPA: bad count line: " + line);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("ARPA: bad count line: " + line);
    int order = std::stoi(line.substr(6, eq - 6));
    size_t count = static_cast<size_t>(std::stoull(line.substr(eq + 1)));
    if (order != static_cast<int>(declared.size()) + 1)
      throw std::runtime_error("ARPA: non-consecutive ngram orders");
    declared.push_back(count);
  }
  if (declared.empty()) throw std::runtime_error("ARPA: no ngram counts");
  const int n = static_cast<int>(declared.size());

  auto vocab = std::make_shared<Vocabulary>();
  // Entries are collected as token strings first, ids assigned from the
  // 1-gram section order.
  struct RawEntry {
    double logp;
    std::vector<std::string> toks;
    double bow;
    bool has_bow;
  };
  std::vector<std::vector<RawEntry>> raw(static_cast<size_t>(n));
  int cur = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "\\end\\") {
      cur = -1;
      break;
    }
    if (line[0] == '\\') {
      auto dash = line.find("-grams:");
      if (dash == std::string::npos)
        throw std::runtime_error("ARPA: bad section header: " + line);
      cur = std::stoi(line.substr(1, dash - 1));
      if (cur < 1 || cur > n)
        throw std::runtime_error("ARPA: section order out of range");
      continue;
    }
    if (cur == 0) throw std::runtime_error("ARPA: entry before any section");
    std::istringstream ls(line);
    RawEntry e;
    if (!(ls >> e.logp)) throw std::runtime_error("ARPA: bad entry: " + line);
    e.toks.resize(static_cast<size_t>(cur));
    for (auto& t : e.toks)
      if (!(ls >> t)) throw std::runtime_error("ARPA: short entry: " + line);
    e.has_bow = static_cast<bool>(ls >> e.bow);
    raw[static_cast<size_t>(cur - 1)].push_back(std::move(e));
  }
  if (cur != -1) throw std::runtime_error("ARPA: missing \\end\\");
  for (int len = 1; len <= n; ++len)
    if (raw[static_cast<size_t>(len - 1)].size() != declared[static_cast<size_t>(len - 1)])
      throw std::runtime_error("ARPA: ngram " + std::to_string(len) +
                               " count mismatch");
  for (const auto& e : raw[0]) vocab->add(e.toks[0]);

  NGramModel model(n, vocab);
  for (int len = 1; len <= n; ++len) {
    for (const auto& e : raw[static_cast<size_t>(len - 1)]) {
      Gram g;
      g.reserve(e.toks.size());
      for (const auto& t : e.toks) {
        if (!vocab->contains(t))
          throw std::runtime_error("ARPA: token outside 1-gram section: " + t);
        g.push_back(vocab->id(t));
      }
      model.set_entry(g, e.logp);
      if (e.has_bow) model.set_backoff(g, e.bow);
    }
  }
  model.finalize();
  return model;
}

inline NGramModel read_arpa_string(const std::string& text) {
  std::istringstream is(text);
  return read_arpa(is);
}

inline NGramModel read_arpa_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ARPA file: " + path);
  return read_arpa(in);
}

}  // namespace ctxlm
