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
// Contextual feature assembly: pooled word embeddings of past user and
// agent turns (flat or exponentially decayed), day-of-week / time-of-day
// metadata, and optionally the current 1-best hypothesis embedding.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxlm/corpus.hpp"

namespace ctxlm {

// Lookup is total: out-of-vocabulary tokens resolve to the zero vector.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim) : dim_(dim), zero_(static_cast<size_t>(dim), 0.0) {
    if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  }

  int dim() const { return dim_; }

  void set(const std::string& token, std::vector<double> v) {
    if (static_cast<int>(v.size()) != dim_)
      throw std::invalid_argument("embedding dimension mismatch");
    table_[token] = std::move(v);
  }

  const std::vector<double>& lookup(const std::string& token) const {
    auto it = table_.find(token);
    return it == table_.end() ? zero_ : it->second;
  }

  size_t size() const { return table_.size(); }

  bool contains(const std::string& token) const {
    return table_.count(token) > 0;
  }

  // Text format: one line "token v1 ... vd".
  static EmbeddingTable load(std::istream& in) {
    std::string line;
    EmbeddingTable* table = nullptr;
    EmbeddingTable result(1);
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string token;
      ls >> token;
      std::vector<double> v;
      double x;
      while (ls >> x) v.push_back(x);
      if (v.empty())
        throw std::runtime_error("embedding line with no values: " + line);
      if (first) {
        result = EmbeddingTable(static_cast<int>(v.size()));
        table = &result;
        first = false;
      }
      table->set(token, std::move(v));
    }
    if (first) throw std::runtime_error("empty embedding file");
    return result;
  }

  static EmbeddingTable load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    return load(in);
  }

  void save(std::ostream& out) const {
    // Deterministic order.
    std::map<std::string, const std::vector<double>*> ordered;
    for (const auto& [t, v] : table_) ordered.emplace(t, &v);
    for (const auto& [t, v] : ordered) {
      out << t;
      for (double x : *v) out << " " << x;
      out << "\n";
    }
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    save(out);
  }

 private:
  int dim_;
  std::vector<double> zero_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

// Mean over all token vectors across all turns (token-level pooling);
// empty input gives the zero vector.
inline std::vector<double> avg_embedding(
    const std::vector<std::vector<std::string>>& turns,
    const EmbeddingTable& table) {
  std::vector<double> sum(static_cast<size_t>(table.dim()), 0.0);
  size_t count = 0;
  for (const auto& turn : turns)
    for (const auto& tok : turn) {
      const auto& v = table.lookup(tok);
      for (size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
      ++count;
    }
  if (count == 0) return sum;
  for (double& x : sum) x /= static_cast<double>(count);
  return sum;
}

// Normalized exponential weighting over per-turn mean vectors, most recent
// turn last and weighted highest. Turns with no tokens are skipped.
inline std::vector<double> decayed_embedding(
    const std::vector<std::vector<std::string>>& turns,
    const EmbeddingTable& table, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("decay must be in (0, 1]");
  std::vector<std::vector<double>> means;
  for (const auto& turn : turns) {
    if (turn.empty()) continue;
    std::vector<double> m(static_cast<size_t>(table.dim()), 0.0);
    for (const auto& tok : turn) {
      const auto& v = table.lookup(tok);
      for (size_t i = 0; i < m.size(); ++i) m[i] += v[i];
    }
    for (double& x : m) x /= static_cast<double>(turn.size());
    means.push_back(std::move(m));
  }
  std::vector<double> out(static_cast<size_t>(table.dim()), 0.0);
  if (means.empty()) return out;
  double norm = 0.0;
  for (size_t i = 0; i < means.size(); ++i) {
    double w = std::pow(gamma, static_cast<double>(means.size() - 1 - i));
    norm += w;
    for (size_t j = 0; j < out.size(); ++j) out[j] += w * means[i][j];
  }
  for (double& x : out) x /= norm;
  return out;
}

// Day-of-week and time-of-day one-hots from a UTC epoch timestamp.
// Morning 05:00-11:59, afternoon 12:00-17:59, evening otherwise.
inline std::vector<double> meta_features(double timestamp) {
  int64_t secs = static_cast<int64_t>(std::floor(timestamp));
  int64_t days = secs / 86400;
  int64_t rem = secs % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  // Epoch day 0 (1970-01-01) was a Thursday; index 0 = Monday.
  int dow = static_cast<int>(((days % 7) + 7 + 3) % 7);
  int hour = static_cast<int>(rem / 3600);
  int tod = (hour >= 5 && hour < 12) ? 0 : (hour >= 12 && hour < 18) ? 1 : 2;
  std::vector<double> f(10, 0.0);
  f[static_cast<size_t>(dow)] = 1.0;
  f[static_cast<size_t>(7 + tod)] = 1.0;
  return f;
}

struct FeatureConfig {
  bool prev = false;    // flat pooled past-turn embeddings
  bool prev_d = false;  // decayed variant (mutually exclusive with prev)
  bool meta = false;
  bool cur = false;
  double decay = 0.7;

  void validate() const {
    if (prev && prev_d)
      throw std::invalid_argument("prev and prev-d are mutually exclusive");
    if (!prev && !prev_d && !meta && !cur)
      throw std::invalid_argument("no feature blocks configured");
    if (prev_d && !(decay > 0.0 && decay <= 1.0))
      throw std::invalid_argument("decay must be in (0, 1]");
  }

  int dim(int embedding_dim) const {
    int d = 0;
    if (prev || prev_d) d += 2 * embedding_dim;
    if (meta) d += 10;
    if (cur) d += embedding_dim;
    return d;
  }

  std::string describe() const {
    std::string s;
    auto add = [&](const char* name) {
      if (!s.empty()) s += "+";
      s += name;
    };
    if (prev) add("prev");
    if (prev_d) add("prev-d");
    if (meta) add("meta");
    if (cur) add("cur");
    return s;
  }

  static FeatureConfig parse(const std::string& spec, double decay = 0.7) {
    FeatureConfig c;
    c.decay = decay;
    std::istringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "prev")
        c.prev = true;
      else if (item == "prev-d")
        c.prev_d = true;
      else if (item == "meta")
        c.meta = true;
      else if (item == "cur")
        c.cur = true;
      else if (!item.empty())
        throw std::invalid_argument("unknown feature block: " + item);
    }
    c.validate();
    return c;
  }
};

struct ContextFeatures {
  std::vector<double> prev_user;
  std::vector<double> prev_agent;
  std::vector<double> meta;
  std::vector<double> cur;

  // Fixed layout: (prev_user, prev_agent, meta[, cur]).
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(prev_user.size() + prev_agent.size() + meta.size() +
                cur.size());
    out.insert(out.end(), prev_user.begin(), prev_user.end());
    out.insert(out.end(), prev_agent.begin(), prev_agent.end());
    out.insert(out.end(), meta.begin(), meta.end());
    out.insert(out.end(), cur.begin(), cur.end());
    return out;
  }
};

// Assembles the configured blocks. User and agent turns in the window are
// pooled separately; cur must be supplied iff configured. Never reads the
// current turn's reference text.
inline ContextFeatures build_features(
    const std::vector<Interaction>& window,
    const std::vector<std::string>* current_hypothesis, double clock,
    const FeatureConfig& config, const EmbeddingTable& table) {
  config.validate();
  if (config.cur && current_hypothesis == nullptr)
    throw std::invalid_argument("cur block configured but no hypothesis given");
  ContextFeatures f;
  if (config.prev || config.prev_d) {
    std::vector<std::vector<std::string>> user, agent;
    for (const auto& t : window)
      (t.speaker == Speaker::user ? user : agent).push_back(t.text);
    if (config.prev_d) {
      f.prev_user = decayed_embedding(user, table, config.decay);
      f.prev_agent = decayed_embedding(agent, table, config.decay);
    } else {
      f.prev_user = avg_embedding(user, table);
      f.prev_agent = avg_embedding(agent, table);
    }
  }
  if (config.meta) f.meta = meta_features(clock);
  if (config.cur) f.cur = avg_embedding({*current_hypothesis}, table);
  return f;
}

}  // namespace ctxlm
