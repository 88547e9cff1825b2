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
// Multinomial naive-Bayes topic classifier. Supplies topic labels for
// corpus partitioning and a baseline whose posteriors serve directly as
// interpolation weights.
//
// Smoothing is add-one over frequency-normalized counts (relative
// frequency times a fixed pseudo sample size), which keeps posteriors
// invariant under duplicating the training set.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxlm/corpus.hpp"

namespace ctxlm {

class TopicClassifier {
 public:
  TopicClassifier() = default;

  static TopicClassifier train(
      const std::vector<std::pair<std::vector<std::string>, std::string>>&
          labeled) {
    if (labeled.empty())
      throw std::invalid_argument("train_classifier: no examples");
    TopicClassifier clf;
    std::map<std::string, int> label_index;
    for (const auto& [utt, label] : labeled) {
      if (label.empty())
        throw std::invalid_argument("train_classifier: empty label");
      label_index.emplace(label, 0);
    }
    for (auto& [label, idx] : label_index) {
      idx = static_cast<int>(clf.labels_.size());
      clf.labels_.push_back(label);
    }
    std::vector<std::vector<std::string>> texts;
    texts.reserve(labeled.size());
    for (const auto& [utt, label] : labeled) texts.push_back(utt);
    clf.vocab_ = build_vocabulary(texts, 1);

    const size_t c = clf.labels_.size();
    const size_t vsize = static_cast<size_t>(clf.vocab_.size());
    std::vector<double> class_docs(c, 0.0);
    std::vector<std::vector<double>> word_counts(
        c, std::vector<double>(vsize, 0.0));
    std::vector<double> class_tokens(c, 0.0);
    for (const auto& [utt, label] : labeled) {
      size_t k = static_cast<size_t>(label_index[label]);
      class_docs[k] += 1.0;
      for (const auto& tok : utt) {
        word_counts[k][static_cast<size_t>(clf.vocab_.id(tok))] += 1.0;
        class_tokens[k] += 1.0;
      }
    }
    clf.log_priors_.resize(c);
    for (size_t k = 0; k < c; ++k)
      clf.log_priors_[k] =
          std::log(class_docs[k] / static_cast<double>(labeled.size()));
    // p(w|k) = (f * M + 1) / (M + V) with f the relative frequency and
    // M = V a fixed pseudo sample size.
    const double pseudo = static_cast<double>(vsize);
    clf.log_likelihoods_.assign(c, std::vector<double>(vsize, 0.0));
    for (size_t k = 0; k < c; ++k) {
      double total = class_tokens[k];
      for (size_t w = 0; w < vsize; ++w) {
        double f = total > 0.0 ? word_counts[k][w] / total : 0.0;
        clf.log_likelihoods_[k][w] =
            std::log((f * pseudo + 1.0) / (pseudo + static_cast<double>(vsize)));
      }
    }
    return clf;
  }

  const std::vector<std::string>& labels() const { return labels_; }

  // Normalized posterior over topics; usable directly as a WeightVector.
  // Empty utterances return the priors. OOV tokens map to <unk>.
  std::vector<double> posterior(const std::vector<std::string>& utt) const {
    std::vector<double> logp = log_priors_;
    for (const auto& tok : utt) {
      size_t w = static_cast<size_t>(vocab_.id(tok));
      for (size_t k = 0; k < logp.size(); ++k)
        logp[k] += log_likelihoods_[k][w];
    }
    double mx = *std::max_element(logp.begin(), logp.end());
    double sum = 0.0;
    for (double& x : logp) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : logp) x /= sum;
    return logp;
  }

  // Argmax posterior; ties break to the lexicographically first label
  // (labels are stored sorted).
  std::string classify(const std::vector<std::string>& utt) const {
    auto post = posterior(utt);
    size_t best = 0;
    for (size_t k = 1; k < post.size(); ++k)
      if (post[k] > post[best]) best = k;
    return labels_[best];
  }

  std::vector<std::string> label_corpus(
      const std::vector<std::vector<std::string>>& corpus) const {
    std::vector<std::string> out;
    out.reserve(corpus.size());
    for (const auto& utt : corpus) out.push_back(classify(utt));
    return out;
  }

  // --- checkpoint -----------------------------------------------------------

  void save(std::ostream& out) const {
    out << "ctxlm_topic 1\n";
    out << labels_.size() << " " << vocab_.size() << "\n";
    for (size_t k = 0; k < labels_.size(); ++k)
      out << labels_[k] << " " << detail_fmt(log_priors_[k]) << "\n";
    for (const auto& tok : vocab_.tokens()) out << tok << "\n";
    for (const auto& row : log_likelihoods_) {
      for (size_t w = 0; w < row.size(); ++w)
        out << (w ? " " : "") << detail_fmt(row[w]);
      out << "\n";
    }
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write classifier: " + path);
    save(out);
  }

  static TopicClassifier load(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "ctxlm_topic" || version != 1)
      throw std::runtime_error("bad classifier checkpoint header");
    size_t c = 0, vsize = 0;
    in >> c >> vsize;
    TopicClassifier clf;
    clf.labels_.resize(c);
    clf.log_priors_.resize(c);
    for (size_t k = 0; k < c; ++k) in >> clf.labels_[k] >> clf.log_priors_[k];
    for (size_t w = 0; w < vsize; ++w) {
      std::string tok;
      in >> tok;
      clf.vocab_.add(tok);
    }
    clf.log_likelihoods_.assign(c, std::vector<double>(vsize, 0.0));
    for (auto& row : clf.log_likelihoods_)
      for (double& x : row)
        if (!(in >> x)) throw std::runtime_error("truncated classifier file");
    return clf;
  }

  static TopicClassifier load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open classifier: " + path);
    return load(in);
  }

 private:
  static std::string detail_fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }

  std::vector<std::string> labels_;  // sorted
  std::vector<double> log_priors_;
  std::vector<std::vector<double>> log_likelihoods_;  // [class][word id]
  Vocabulary vocab_;
};

inline TopicClassifier train_classifier(
    const std::vector<std::pair<std::vector<std::string>, std::string>>&
        labeled) {
  return TopicClassifier::train(labeled);
}

}  // namespace ctxlm
