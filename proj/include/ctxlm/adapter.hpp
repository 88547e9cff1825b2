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
// Contextual adaptation network: a two-hidden-layer rectifier MLP mapping
// context features to softmax interpolation weights, trained with either
// the mixture-perplexity loss or cross-entropy on component labels using
// Adam with global-norm gradient clipping and early stopping.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxlm/mixture.hpp"

namespace ctxlm {

// Per-utterance matrix of linear component probabilities, one row per
// predicted token including </s>.
struct ProbMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;  // row-major

  double at(size_t j, size_t k) const { return data[j * cols + k]; }

  static ProbMatrix from_rows(const std::vector<std::vector<double>>& r) {
    ProbMatrix p;
    p.rows = r.size();
    p.cols = r.empty() ? 0 : r[0].size();
    p.data.reserve(p.rows * p.cols);
    for (const auto& row : r) {
      if (row.size() != p.cols)
        throw std::invalid_argument("ragged probability rows");
      p.data.insert(p.data.end(), row.begin(), row.end());
    }
    p.validate();
    return p;
  }

  void validate() const {
    for (double x : data)
      if (!(x > 0.0) || !(x <= 1.0) || !std::isfinite(x))
        throw std::invalid_argument("ProbMatrix entries must be in (0, 1]");
  }
};

// P[j][k] = component-k backoff probability at position j. Stacked -99
// backoff weights can underflow a cross-component probability to exactly 0,
// and ARPA quantization can nudge one marginally past 1; clamp to the
// 10^-99 convention so the matrix stays in (0, 1].
inline ProbMatrix precompute_probs(const MixtureLM& mix,
                                   const std::vector<int>& utt) {
  auto rows = mix.utterance_component_probs(utt);
  for (auto& row : rows)
    for (double& p : row) p = std::clamp(p, 1e-99, 1.0);
  return ProbMatrix::from_rows(rows);
}

// -sum_j ln(sum_k lambda_k P[j,k]); the 1e-8 weight floor keeps dead
// components finite, a zero mixture row means the matrix is corrupt.
inline double ppl_loss(const WeightVector& lambda, const ProbMatrix& P,
                       size_t* floored = nullptr) {
  if (lambda.size() != P.cols)
    throw std::invalid_argument("weight/column count mismatch");
  WeightVector lf = floor_weights(lambda);
  double loss = 0.0;
  for (size_t j = 0; j < P.rows; ++j) {
    double m = 0.0;
    for (size_t k = 0; k < P.cols; ++k) m += lf[k] * P.at(j, k);
    if (!(m > 0.0))
      throw std::invalid_argument("zero mixture probability: corrupt ProbMatrix");
    if (m < 1e-12) {
      m = 1e-12;
      if (floored) ++*floored;
    }
    loss -= std::log(m);
  }
  return loss;
}

// dLoss/dlambda_k = -sum_j P[j,k] / (sum_l lambda_l P[j,l]).
inline std::vector<double> ppl_loss_grad(const WeightVector& lambda,
                                         const ProbMatrix& P) {
  std::vector<double> g(lambda.size(), 0.0);
  for (size_t j = 0; j < P.rows; ++j) {
    double m = 0.0;
    for (size_t k = 0; k < P.cols; ++k) m += lambda[k] * P.at(j, k);
    for (size_t k = 0; k < P.cols; ++k) g[k] -= P.at(j, k) / m;
  }
  return g;
}

inline double xent_loss(const WeightVector& lambda, size_t target) {
  if (target >= lambda.size())
    throw std::invalid_argument("target component out of range");
  return -std::log(std::max(lambda[target], kWeightFloor));
}

inline std::vector<double> xent_loss_grad(const WeightVector& lambda,
                                          size_t target) {
  std::vector<double> g(lambda.size(), 0.0);
  g[target] = -1.0 / std::max(lambda[target], kWeightFloor);
  return g;
}

inline std::vector<double> softmax(std::vector<double> z) {
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& x : z) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : z) x /= sum;
  return z;
}

class AdapterNet {
 public:
  AdapterNet(int input_dim, int n_components, int hidden = 200,
             int hidden_layers = 2)
      : input_dim_(input_dim),
        hidden_(hidden),
        out_(n_components),
        hidden_layers_(hidden_layers) {
    if (input_dim < 1 || n_components < 1 || hidden < 1)
      throw std::invalid_argument("bad adapter dimensions");
    if (hidden_layers < 1 || hidden_layers > 2)
      throw std::invalid_argument("hidden_layers must be 1 or 2");
    w1_.assign(static_cast<size_t>(hidden) * input_dim, 0.0);
    b1_.assign(static_cast<size_t>(hidden), 0.0);
    if (hidden_layers == 2) {
      w2_.assign(static_cast<size_t>(hidden) * hidden, 0.0);
      b2_.assign(static_cast<size_t>(hidden), 0.0);
    }
    wo_.assign(static_cast<size_t>(n_components) * hidden, 0.0);
    bo_.assign(static_cast<size_t>(n_components), 0.0);
  }

  int input_dim() const { return input_dim_; }
  int n_components() const { return out_; }
  int hidden() const { return hidden_; }
  int hidden_layers() const { return hidden_layers_; }

  void init(std::mt19937_64& rng) {
    auto fill = [&rng](std::vector<double>& w, int fan_in) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (double& x : w) x = dist(rng);
    };
    fill(w1_, input_dim_);
    if (hidden_layers_ == 2) fill(w2_, hidden_);
    fill(wo_, hidden_);
    // biases stay zero
  }

  struct Cache {
    std::vector<double> x;
    std::vector<double> h1;  // post-activation
    std::vector<double> h2;  // post-activation (empty for 1 hidden layer)
    std::vector<double> lambda;
  };

  WeightVector forward(const std::vector<double>& x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != input_dim_)
      throw std::invalid_argument("feature dimension mismatch");
    std::vector<double> h1(static_cast<size_t>(hidden_));
    for (int i = 0; i < hidden_; ++i) {
      double s = b1_[static_cast<size_t>(i)];
      const double* row = &w1_[static_cast<size_t>(i) * input_dim_];
      for (int j = 0; j < input_dim_; ++j) s += row[j] * x[static_cast<size_t>(j)];
      h1[static_cast<size_t>(i)] = s > 0.0 ? s : 0.0;
    }
    const std::vector<double>* top = &h1;
    std::vector<double> h2;
    if (hidden_layers_ == 2) {
      h2.resize(static_cast<size_t>(hidden_));
      for (int i = 0; i < hidden_; ++i) {
        double s = b2_[static_cast<size_t>(i)];
        const double* row = &w2_[static_cast<size_t>(i) * hidden_];
        for (int j = 0; j < hidden_; ++j) s += row[j] * h1[static_cast<size_t>(j)];
        h2[static_cast<size_t>(i)] = s > 0.0 ? s : 0.0;
      }
      top = &h2;
    }
    std::vector<double> z(static_cast<size_t>(out_));
    for (int i = 0; i < out_; ++i) {
      double s = bo_[static_cast<size_t>(i)];
      const double* row = &wo_[static_cast<size_t>(i) * hidden_];
      for (int j = 0; j < hidden_; ++j) s += row[j] * (*top)[static_cast<size_t>(j)];
      z[static_cast<size_t>(i)] = s;
    }
    auto lambda = softmax(std::move(z));
    if (cache) {
      cache->x = x;
      cache->h1 = h1;
      cache->h2 = std::move(h2);
      cache->lambda = lambda;
    }
    return lambda;
  }

  struct Gradients {
    std::vector<double> w1, b1, w2, b2, wo, bo;
    explicit Gradients(const AdapterNet& net)
        : w1(net.w1_.size(), 0.0),
          b1(net.b1_.size(), 0.0),
          w2(net.w2_.size(), 0.0),
          b2(net.b2_.size(), 0.0),
          wo(net.wo_.size(), 0.0),
          bo(net.bo_.size(), 0.0) {}
  };

  // Accumulates parameter gradients for one example, given dLoss/dlambda.
  void backward(const Cache& cache, const std::vector<double>& dlambda,
                Gradients& g) const {
    // Softmax Jacobian: dz_k = lambda_k * (g_k - sum_l g_l lambda_l).
    double dot = 0.0;
    for (int k = 0; k < out_; ++k)
      dot += dlambda[static_cast<size_t>(k)] * cache.lambda[static_cast<size_t>(k)];
    std::vector<double> dz(static_cast<size_t>(out_));
    for (int k = 0; k < out_; ++k)
      dz[static_cast<size_t>(k)] =
          cache.lambda[static_cast<size_t>(k)] *
          (dlambda[static_cast<size_t>(k)] - dot);

    const std::vector<double>& top =
        hidden_layers_ == 2 ? cache.h2 : cache.h1;
    std::vector<double> dtop(static_cast<size_t>(hidden_), 0.0);
    for (int i = 0; i < out_; ++i) {
      double d = dz[static_cast<size_t>(i)];
      g.bo[static_cast<size_t>(i)] += d;
      double* grow = &g.wo[static_cast<size_t>(i) * hidden_];
      const double* wrow = &wo_[static_cast<size_t>(i) * hidden_];
      for (int j = 0; j < hidden_; ++j) {
        grow[j] += d * top[static_cast<size_t>(j)];
        dtop[static_cast<size_t>(j)] += d * wrow[j];
      }
    }
    if (hidden_layers_ == 2) {
      std::vector<double> dh1(static_cast<size_t>(hidden_), 0.0);
      for (int i = 0; i < hidden_; ++i) {
        if (cache.h2[static_cast<size_t>(i)] <= 0.0) continue;  // relu gate
        double d = dtop[static_cast<size_t>(i)];
        g.b2[static_cast<size_t>(i)] += d;
        double* grow = &g.w2[static_cast<size_t>(i) * hidden_];
        const double* wrow = &w2_[static_cast<size_t>(i) * hidden_];
        for (int j = 0; j < hidden_; ++j) {
          grow[j] += d * cache.h1[static_cast<size_t>(j)];
          dh1[static_cast<size_t>(j)] += d * wrow[j];
        }
      }
      dtop = std::move(dh1);
    }
    for (int i = 0; i < hidden_; ++i) {
      if (cache.h1[static_cast<size_t>(i)] <= 0.0) continue;
      double d = dtop[static_cast<size_t>(i)];
      g.b1[static_cast<size_t>(i)] += d;
      double* grow = &g.w1[static_cast<size_t>(i) * input_dim_];
      for (int j = 0; j < input_dim_; ++j)
        grow[j] += d * cache.x[static_cast<size_t>(j)];
    }
  }

  std::vector<std::vector<double>*> param_blocks() {
    if (hidden_layers_ == 2) return {&w1_, &b1_, &w2_, &b2_, &wo_, &bo_};
    return {&w1_, &b1_, &wo_, &bo_};
  }
  std::vector<std::vector<double>*> grad_blocks(Gradients& g) const {
    if (hidden_layers_ == 2)
      return {&g.w1, &g.b1, &g.w2, &g.b2, &g.wo, &g.bo};
    return {&g.w1, &g.b1, &g.wo, &g.bo};
  }

  // --- checkpoint I/O -------------------------------------------------------

  void save(std::ostream& out) const {
    out << "ctxlm_adapter 1\n";
    out << input_dim_ << " " << hidden_ << " " << out_ << " "
        << hidden_layers_ << "\n";
    out << "relu\n";
    auto dump = [&out](const char* name, const std::vector<double>& v) {
      out << name << " " << v.size() << "\n";
      char buf[40];
      for (size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        out << buf << (((i + 1) % 8 == 0 || i + 1 == v.size()) ? "\n" : " ");
      }
    };
    dump("w1", w1_);
    dump("b1", b1_);
    if (hidden_layers_ == 2) {
      dump("w2", w2_);
      dump("b2", b2_);
    }
    dump("wo", wo_);
    dump("bo", bo_);
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    save(out);
  }

  static AdapterNet load(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "ctxlm_adapter" || version != 1)
      throw std::runtime_error("bad adapter checkpoint header");
    int d = 0, h = 0, c = 0, layers = 0;
    in >> d >> h >> c >> layers;
    std::string act;
    in >> act;
    if (act != "relu") throw std::runtime_error("unknown activation: " + act);
    AdapterNet net(d, c, h, layers);
    auto read = [&in](const char* name, std::vector<double>& v) {
      std::string tag;
      size_t count = 0;
      in >> tag >> count;
      if (tag != name || count != v.size())
        throw std::runtime_error("checkpoint block mismatch: " + tag);
      for (double& x : v)
        if (!(in >> x)) throw std::runtime_error("truncated checkpoint");
    };
    read("w1", net.w1_);
    read("b1", net.b1_);
    if (layers == 2) {
      read("w2", net.w2_);
      read("b2", net.b2_);
    }
    read("wo", net.wo_);
    read("bo", net.bo_);
    return net;
  }

  static AdapterNet load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return load(in);
  }

 private:
  int input_dim_, hidden_, out_, hidden_layers_;
  std::vector<double> w1_, b1_, w2_, b2_, wo_, bo_;
};

enum class LossKind { ppl, xent };

struct TrainConfig {
  LossKind loss = LossKind::ppl;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  uint64_t seed = 1;

  void validate() const {
    if (learning_rate <= 0 || clip_norm <= 0 || batch_size < 1 ||
        max_epochs < 1 || patience < 1)
      throw std::invalid_argument("invalid training configuration");
  }
};

// Either probs (ppl loss) or target (xent loss) is used, per TrainConfig.
struct TrainExample {
  std::vector<double> features;
  ProbMatrix probs;
  int target = -1;
};

struct EpochStat {
  int epoch;
  double train_loss;
  double dev_loss;
};

struct TrainResult {
  std::vector<EpochStat> trace;
  int best_epoch = -1;
  double best_dev_loss = 0.0;
  size_t floor_hits = 0;  // positions where the mixture prob was floored
};

namespace detail {

inline double example_loss(const AdapterNet& net, const TrainExample& ex,
                           LossKind loss, AdapterNet::Cache* cache,
                           std::vector<double>* dlambda,
                           size_t* floor_hits = nullptr) {
  WeightVector lambda = net.forward(ex.features, cache);
  if (loss == LossKind::xent) {
    if (ex.target < 0) throw std::invalid_argument("xent example without label");
    if (dlambda) *dlambda = xent_loss_grad(lambda, static_cast<size_t>(ex.target));
    return xent_loss(lambda, static_cast<size_t>(ex.target));
  }
  if (ex.probs.rows == 0)
    throw std::invalid_argument("ppl example without probabilities");
  if (dlambda) *dlambda = ppl_loss_grad(lambda, ex.probs);
  return ppl_loss(lambda, ex.probs, floor_hits);
}

}  // namespace detail

inline double dataset_loss(const AdapterNet& net,
                           const std::vector<TrainExample>& data,
                           LossKind loss) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  double total = 0.0;
  for (const auto& ex : data)
    total += detail::example_loss(net, ex, loss, nullptr, nullptr);
  return total / static_cast<double>(data.size());
}

// Adam with global-norm clipping; restores best-dev parameters at stop.
// Deterministic given the seed.
inline TrainResult train(AdapterNet& net,
                         const std::vector<TrainExample>& train_set,
                         const std::vector<TrainExample>& dev_set,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || dev_set.empty())
    throw std::invalid_argument("train: empty dataset");
  for (const auto& ex : train_set)
    if (static_cast<int>(ex.features.size()) != net.input_dim())
      throw std::invalid_argument("train: feature dimension mismatch");

  std::mt19937_64 rng(cfg.seed);
  auto params = net.param_blocks();
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i]->size(), 0.0);
    v[i].assign(params[i]->size(), 0.0);
  }
  int64_t step = 0;

  TrainResult result;
  std::vector<std::vector<double>> best(params.size());
  double best_dev = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(cfg.batch_size));
      AdapterNet::Gradients grads(net);
      AdapterNet::Cache cache;
      std::vector<double> dlambda;
      for (size_t i = start; i < end; ++i) {
        const TrainExample& ex = train_set[order[i]];
        double loss = detail::example_loss(net, ex, cfg.loss, &cache, &dlambda,
                                           &result.floor_hits);
        if (!std::isfinite(loss))
          throw std::runtime_error(
              "non-finite training loss at epoch " + std::to_string(epoch) +
              " example " + std::to_string(order[i]));
        epoch_loss += loss;
        net.backward(cache, dlambda, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      auto gblocks = net.grad_blocks(grads);
      double norm2 = 0.0;
      for (auto* g : gblocks)
        for (double& x : *g) {
          x *= scale;
          norm2 += x * x;
        }
      double norm = std::sqrt(norm2);
      double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (size_t b = 0; b < params.size(); ++b) {
        auto& p = *params[b];
        auto& g = *gblocks[b];
        for (size_t i = 0; i < p.size(); ++i) {
          double gi = g[i] * clip;
          m[b][i] = cfg.beta1 * m[b][i] + (1.0 - cfg.beta1) * gi;
          v[b][i] = cfg.beta2 * v[b][i] + (1.0 - cfg.beta2) * gi * gi;
          p[i] -= cfg.learning_rate * (m[b][i] / bc1) /
                  (std::sqrt(v[b][i] / bc2) + cfg.adam_eps);
        }
      }
    }
    epoch_loss /= static_cast<double>(train_set.size());
    double dev_loss = dataset_loss(net, dev_set, cfg.loss);
    result.trace.push_back(EpochStat{epoch, epoch_loss, dev_loss});
    if (dev_loss < best_dev) {
      best_dev = dev_loss;
      result.best_epoch = epoch;
      since_best = 0;
      for (size_t b = 0; b < params.size(); ++b) best[b] = *params[b];
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (size_t b = 0; b < params.size(); ++b)
    if (!best[b].empty()) *params[b] = best[b];
  result.best_dev_loss = best_dev;
  return result;
}

inline void save_trace_csv(const TrainResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << "epoch,train_loss,dev_loss\n";
  for (const auto& e : r.trace)
    out << e.epoch << "," << detail::fmt6(e.train_loss) << ","
        << detail::fmt6(e.dev_loss) << "\n";
}

}  // namespace ctxlm
