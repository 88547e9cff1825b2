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
// Acceptance suite: one pass/fail line per criterion. Exact property
// checks (mixture arithmetic, normalization, gradients, EM, the entity
// metric, file round trips) plus directional checks on the seeded
// synthetic benchmark. Exits nonzero if any criterion fails.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctxlm/stages.hpp"

namespace fs = std::filesystem;
using namespace ctxlm;

namespace {

int g_failures = 0;

void report(int num, const std::string& name, bool ok,
            const std::string& detail) {
  std::cout << "criterion " << num << " (" << name << "): "
            << (ok ? "PASS" : "FAIL");
  if (!detail.empty()) std::cout << " [" << detail << "]";
  std::cout << std::endl;
  if (!ok) ++g_failures;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

double median3(double a, double b, double c) {
  std::vector<double> v = {a, b, c};
  std::sort(v.begin(), v.end());
  return v[1];
}

// ---------------------------------------------------------------------------
// Independent ARPA evaluator: parses the serialized text itself and applies
// the backoff recursion over token strings, sharing no code with NGramModel.
// ---------------------------------------------------------------------------
struct ArpaOracle {
  struct Entry {
    double logp = 0.0;
    double bow = 0.0;
    bool has_bow = false;
  };
  std::map<std::vector<std::string>, Entry> grams;
  int order = 0;

  static ArpaOracle parse(const std::string& text) {
    ArpaOracle o;
    std::istringstream in(text);
    std::string line;
    int level = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\\data\\" || line == "\\end\\") continue;
      if (line.rfind("ngram ", 0) == 0) continue;
      if (line.size() > 1 && line[0] == '\\') {  // "\N-grams:"
        level = std::stoi(line.substr(1));
        o.order = std::max(o.order, level);
        continue;
      }
      std::istringstream ls(line);
      Entry e;
      ls >> e.logp;
      std::vector<std::string> g(static_cast<size_t>(level));
      for (auto& t : g) ls >> t;
      double bow;
      if (ls >> bow) {
        e.bow = bow;
        e.has_bow = true;
      }
      o.grams[g] = e;
    }
    return o;
  }

  double log10_prob(std::vector<std::string> hist, const std::string& w) const {
    if (static_cast<int>(hist.size()) > order - 1)
      hist.erase(hist.begin(),
                 hist.end() - static_cast<ptrdiff_t>(order - 1));
    double acc = 0.0;
    for (size_t len = hist.size();; --len) {
      std::vector<std::string> g(hist.end() - static_cast<ptrdiff_t>(len),
                                 hist.end());
      g.push_back(w);
      auto it = grams.find(g);
      if (it != grams.end()) return acc + it->second.logp;
      if (len == 0) {
        auto unk = grams.find({"<unk>"});
        return acc + unk->second.logp;
      }
      std::vector<std::string> ctx(hist.end() - static_cast<ptrdiff_t>(len),
                                   hist.end());
      auto c = grams.find(ctx);
      if (c != grams.end() && c->second.has_bow) acc += c->second.bow;
    }
  }

  double prob(const std::vector<std::string>& hist, const std::string& w) const {
    return std::pow(10.0, log10_prob(hist, w));
  }
};

std::vector<std::vector<std::string>> random_corpus(std::mt19937_64& rng,
                                                    int n_utts,
                                                    int vocab_words) {
  std::vector<std::string> words;
  for (int i = 0; i < vocab_words; ++i)
    words.push_back("w" + std::to_string(i));
  std::uniform_int_distribution<size_t> wd(0, words.size() - 1);
  std::uniform_int_distribution<int> ld(3, 10);
  std::vector<std::vector<std::string>> corpus;
  for (int u = 0; u < n_utts; ++u) {
    std::vector<std::string> utt;
    for (int i = ld(rng); i > 0; --i) utt.push_back(words[wd(rng)]);
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

WeightVector random_simplex(std::mt19937_64& rng, size_t c) {
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  WeightVector w(c);
  double s = 0.0;
  for (double& x : w) {
    x = ud(rng);
    s += x;
  }
  for (double& x : w) x /= s;
  return w;
}

// --- criterion 1 ------------------------------------------------------------
void criterion_1() {
  std::mt19937_64 rng(11);
  auto vocab = std::make_shared<Vocabulary>();
  for (int i = 0; i < 12; ++i) vocab->add("w" + std::to_string(i));

  // The mixture is built from the serialized models so both sides of the
  // comparison see the exact same (quantized) ARPA numbers.
  std::vector<std::shared_ptr<const NGramModel>> models;
  std::vector<ArpaOracle> oracles;
  for (int k = 0; k < 3; ++k) {
    auto trained = train_katz(random_corpus(rng, 120, 12), vocab, 4, 5, nullptr);
    std::string arpa = write_arpa_string(trained);
    oracles.push_back(ArpaOracle::parse(arpa));
    models.push_back(std::make_shared<NGramModel>(read_arpa_string(arpa)));
  }
  MixtureLM mix(models);

  const auto& toks = models[0]->vocab().tokens();
  std::uniform_int_distribution<int> word_d(0, vocab->size() - 1);
  std::uniform_int_distribution<int> len_d(0, 5);
  double max_err = 0.0;
  for (int q = 0; q < 10000; ++q) {
    std::vector<int> hist;
    std::vector<std::string> hist_s;
    for (int i = len_d(rng); i > 0; --i) {
      int h = word_d(rng);
      hist.push_back(h);
      hist_s.push_back(toks[static_cast<size_t>(h)]);
    }
    int w = word_d(rng);
    auto lambda = random_simplex(rng, 3);
    double expected = 0.0;
    for (size_t k = 0; k < 3; ++k)
      expected += lambda[k] * oracles[k].prob(hist_s, toks[static_cast<size_t>(w)]);
    double got = mix.mix_prob(lambda, hist, w);
    max_err = std::max(max_err, std::abs(got - expected));
  }
  report(1, "mixture matches independent ARPA oracle", max_err < 1e-9,
         "max |err| = " + fmt(max_err) + " over 10000 queries");
}

// --- criterion 2 ------------------------------------------------------------
// Checks the in-memory training output; the 6-decimal ARPA files quantize
// each probability at the same order of magnitude as the tolerance.
void criterion_2(const std::string& data_dir) {
  auto train = load_interactions_file(data_dir + "/train.jsonl");
  auto dev = load_interactions_file(data_dir + "/dev.jsonl");
  LmTrainOptions opt;
  opt.per_source_merge = true;
  std::ostringstream devnull;
  auto lms = train_component_lms(train, dev, opt, &devnull);

  std::mt19937_64 rng(22);
  const auto& vocab = *lms.vocab;
  std::uniform_int_distribution<int> word_d(0, vocab.size() - 1);
  std::uniform_int_distribution<int> len_d(0, 3);
  double worst = 0.0;
  auto check_dist = [&](auto&& prob_fn) {
    for (int s = 0; s < 100; ++s) {
      std::vector<int> hist;
      for (int i = len_d(rng); i > 0; --i) hist.push_back(word_d(rng));
      double sum = 0.0;
      for (int w = 0; w < vocab.size(); ++w) {
        if (w == Vocabulary::kBosId) continue;
        sum += prob_fn(hist, w);
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  };
  for (const auto& m : lms.models)
    check_dist([&](const std::vector<int>& h, int w) { return m->prob(h, w); });
  MixtureLM mix(lms.models);
  auto lambda = random_simplex(rng, lms.models.size());
  check_dist([&](const std::vector<int>& h, int w) {
    return mix.mix_prob(lambda, h, w);
  });
  check_dist([&](const std::vector<int>& h, int w) {
    return mix.mix_prob(lms.static_weights, h, w);
  });
  report(2, "trained models and mixtures normalize", worst < 1e-6,
         "max |sum-1| = " + fmt(worst) + " over 100 histories each");
}

// --- criterion 3 ------------------------------------------------------------
void criterion_3() {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> fd(-1.0, 1.0);
  std::uniform_real_distribution<double> pd(0.01, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dims(3, 8);
    const int in = dims(rng), hid = dims(rng);
    std::uniform_int_distribution<int> comp_d(2, 5);
    const int c = comp_d(rng);
    const int layers = 1 + trial % 2;
    AdapterNet net(in, c, hid, layers);
    net.init(rng);

    TrainExample ex;
    ex.features.resize(static_cast<size_t>(in));
    for (double& x : ex.features) x = fd(rng);
    LossKind loss = trial < 10 ? LossKind::ppl : LossKind::xent;
    if (loss == LossKind::ppl) {
      std::uniform_int_distribution<size_t> rows_d(1, 6);
      std::vector<std::vector<double>> rows(
          rows_d(rng), std::vector<double>(static_cast<size_t>(c)));
      for (auto& row : rows)
        for (double& x : row) x = pd(rng);
      ex.probs = ProbMatrix::from_rows(rows);
    } else {
      std::uniform_int_distribution<int> td(0, c - 1);
      ex.target = td(rng);
    }

    // analytic
    AdapterNet::Cache cache;
    std::vector<double> dlambda;
    detail::example_loss(net, ex, loss, &cache, &dlambda);
    AdapterNet::Gradients g(net);
    net.backward(cache, dlambda, g);
    std::vector<double> analytic;
    for (auto* blk : net.grad_blocks(g))
      analytic.insert(analytic.end(), blk->begin(), blk->end());

    // central finite differences
    std::vector<double> numeric;
    const double eps = 1e-5;
    for (auto* blk : net.param_blocks())
      for (double& p : *blk) {
        double orig = p;
        p = orig + eps;
        double up = detail::example_loss(net, ex, loss, nullptr, nullptr);
        p = orig - eps;
        double dn = detail::example_loss(net, ex, loss, nullptr, nullptr);
        p = orig;
        numeric.push_back((up - dn) / (2 * eps));
      }

    for (size_t i = 0; i < analytic.size(); ++i) {
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
  }
  report(3, "analytic gradients match finite differences", worst < 1e-4,
         "max relative error = " + fmt(worst) + " over 20 instances");
}

// --- criterion 4 ------------------------------------------------------------
void criterion_4(const TrainedLms& lms, const std::string& data_dir) {
  auto dev = load_interactions_file(data_dir + "/dev.jsonl");
  std::vector<std::vector<int>> dev_ids;
  for (const auto& c : dev)
    for (const auto& t : c.turns) dev_ids.push_back(lms.vocab->ids(t.text));
  MixtureLM mix(lms.models);
  auto em = em_static_weights_traced(mix, dev_ids);
  bool monotone = true;
  for (size_t i = 1; i < em.mean_loglik_trace.size(); ++i)
    if (em.mean_loglik_trace[i] < em.mean_loglik_trace[i - 1] - 1e-12)
      monotone = false;
  double em_ppl = perplexity(mix, em.weights, dev_ids);
  double uni_ppl = perplexity(mix, uniform_weights(mix.size()), dev_ids);
  report(4, "EM is monotone and beats uniform weights",
         monotone && em_ppl <= uni_ppl,
         "monotone=" + std::string(monotone ? "yes" : "no") + ", EM ppl " +
             fmt(em_ppl) + " vs uniform " + fmt(uni_ppl));
}

// --- criterion 10 golden set --------------------------------------------------
bool entity_golden_set(std::string* detail) {
  struct Case {
    std::vector<std::string> ref, hyp;
    EntityTagSet tags;
    size_t expected_errors;
  };
  // hand-worked alignments; E* mark entity tokens
  std::vector<Case> cases = {
      {{"a", "E", "b"}, {"a", "E", "b"}, {1}, 0},       // exact match
      {{"a", "E", "b"}, {"a", "X", "b"}, {1}, 1},       // entity substituted
      {{"E", "c", "F"}, {"E", "c"}, {0, 2}, 1},         // one entity deleted
      {{"E"}, {}, {0}, 1},                              // everything deleted
      {{"a", "b"}, {"x", "y"}, {}, 0},                  // no entities tagged
      {{"E", "a"}, {"E", "a", "z"}, {0}, 0},            // insertion only
      {{"a", "E", "b", "F"}, {"a", "E", "y", "F"}, {1, 3}, 0},  // sub off-entity
      {{"E", "F"}, {"X", "F"}, {0, 1}, 1},              // first of two wrong
      {{"a", "E"}, {"E"}, {1}, 0},                      // deletion off-entity
      {{"E", "b", "c"}, {"b", "c"}, {0}, 1}};           // leading entity lost
  std::vector<AlignmentResult> aligns;
  std::vector<EntityTagSet> tags;
  size_t expected_total = 0, expected_tagged = 0, expected_ref = 0;
  for (const auto& c : cases) {
    aligns.push_back(align(c.ref, c.hyp));
    tags.push_back(c.tags);
    auto one = entity_error_counts({aligns.back()}, {c.tags});
    if (one.entity_errors != c.expected_errors) {
      *detail = "per-utterance mismatch on ref starting '" +
                (c.ref.empty() ? std::string("<empty>") : c.ref[0]) + "'";
      return false;
    }
    expected_total += c.expected_errors;
    expected_tagged += c.tags.size();
    expected_ref += c.ref.size();
  }
  auto agg = entity_error_counts(aligns, tags);
  bool ok = agg.entity_errors == expected_total &&
            agg.entity_tokens == expected_tagged &&
            agg.ref_tokens == expected_ref &&
            agg.rate() == static_cast<double>(expected_total) /
                              static_cast<double>(expected_tagged) &&
            agg.global_rate() == static_cast<double>(expected_total) /
                                     static_cast<double>(expected_ref);
  *detail = "golden rate " + fmt(agg.rate()) + " (expected " +
            fmt(static_cast<double>(expected_total) /
                static_cast<double>(expected_tagged)) +
            ")";
  return ok;
}

}  // namespace

int main() {
  const std::string work_root = "acceptance_work";

  // Property criteria that need no benchmark artifacts.
  criterion_1();
  criterion_3();

  // Pinned benchmark runs, seeds 1..3 (seed 1 is the golden seed).
  std::vector<BenchmarkResult> bench;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    std::string dir = work_root + "/seed" + std::to_string(seed);
    fs::remove_all(dir);
    std::cerr << "[acceptance] running benchmark seed " << seed << "...\n";
    bench.push_back(run_benchmark(seed, dir));
  }
  const auto& pinned = bench[0];

  criterion_2(pinned.work_dir + "/data");
  criterion_4(pinned.lms, pinned.work_dir + "/data");

  auto row = [&](size_t s, const std::string& system,
                 const std::string& features) -> const ReportRow& {
    return find_row(bench[s].rows, system, features);
  };

  // 5: DNN(ppl) prev+meta beats the static EM baseline by >= 5% PPL.
  {
    std::vector<double> rel;
    for (size_t s = 0; s < 3; ++s) {
      double base = row(s, "no_adapt", "").metrics.ppl;
      double dnn = row(s, "dnn_ppl", "prev+meta").metrics.ppl;
      rel.push_back((base - dnn) / base);
    }
    double med = median3(rel[0], rel[1], rel[2]);
    report(5, "adaptation beats static baseline by >= 5% PPL", med >= 0.05,
           "median relative reduction = " + fmt(med) + " (per-seed " +
               fmt(rel[0]) + ", " + fmt(rel[1]) + ", " + fmt(rel[2]) + ")");
  }

  // 6: ppl-trained adapter's PPL <= xent-trained adapter's PPL (median).
  {
    std::vector<double> diff;
    for (size_t s = 0; s < 3; ++s)
      diff.push_back(row(s, "dnn_ppl", "prev+meta").metrics.ppl -
                     row(s, "dnn_xent", "prev+meta").metrics.ppl);
    double med = median3(diff[0], diff[1], diff[2]);
    report(6, "ppl loss at least as good as xent loss", med <= 0.0,
           "median PPL(ppl) - PPL(xent) = " + fmt(med));
  }

  // 7: 2-pass cur features dominate 1-pass on PPL and never hurt WER.
  {
    std::vector<double> dppl, dwer;
    for (size_t s = 0; s < 3; ++s) {
      const auto& one = row(s, "dnn_ppl", "prev+meta").metrics;
      const auto& two = row(s, "dnn_ppl", "prev+meta+cur").metrics;
      dppl.push_back(two.ppl - one.ppl);
      dwer.push_back(two.wer - one.wer);
    }
    double mp = median3(dppl[0], dppl[1], dppl[2]);
    double mw = median3(dwer[0], dwer[1], dwer[2]);
    report(7, "cur features improve PPL and do not hurt WER",
           mp < 0.0 && mw <= 0.0,
           "median dPPL = " + fmt(mp) + ", median dWER = " + fmt(mw));
  }

  // 8: decayed history embeddings beat flat ones under topic drift.
  {
    std::vector<double> diff;
    for (size_t s = 0; s < 3; ++s)
      diff.push_back(row(s, "dnn_ppl", "prev-d+meta").metrics.ppl -
                     row(s, "dnn_ppl", "prev+meta").metrics.ppl);
    double med = median3(diff[0], diff[1], diff[2]);
    report(8, "decayed context features beat flat ones", med < 0.0,
           "median PPL(prev-d) - PPL(prev) = " + fmt(med));
  }

  // 9: topic-posterior weights within 10% relative PPL of DNN(ppl) 2-pass.
  {
    double dnn = row(0, "dnn_ppl", "prev+meta+cur").metrics.ppl;
    double topic = row(0, "topic_model", "cur").metrics.ppl;
    double rel = (topic - dnn) / dnn;
    report(9, "topic-posterior baseline is competitive", rel <= 0.10,
           "relative PPL gap = " + fmt(rel));
  }

  // 10: entity golden set exact; best adapted system reduces entity errors
  // at least as much as overall WER.
  {
    std::string detail;
    bool golden = entity_golden_set(&detail);

    const auto& base = row(0, "no_adapt", "").metrics;
    const ReportRow* best = nullptr;
    for (const auto& r : pinned.rows) {
      if (r.system == "no_adapt") continue;
      if (!best || r.metrics.wer < best->metrics.wer) best = &r;
    }
    double wer_red = (base.wer - best->metrics.wer) / base.wer;
    double ent_red = (base.entities.rate() - best->metrics.entities.rate()) /
                     base.entities.rate();
    bool trend = base.entities.rate() > 0.0 && ent_red >= wer_red;
    report(10, "entity metric exact and entity reduction >= WER reduction",
           golden && trend,
           detail + "; best system " + best->system + "/" + best->features +
               ": entity reduction " + fmt(ent_red) + " vs WER reduction " +
               fmt(wer_red));
  }

  // 11: the pinned seed reproduces the stored golden CSV byte-for-byte.
  {
    const std::string golden_path =
        std::string(CTXLM_TEST_DATA_DIR) + "/golden_metrics.csv";
    bool ok = false;
    std::string detail;
    try {
      std::string golden = read_file(golden_path);
      ok = golden == pinned.csv;
      detail = ok ? "byte-identical to " + golden_path
                  : "report differs from " + golden_path;
    } catch (const std::exception& e) {
      detail = e.what();
    }
    report(11, "pinned-seed report matches golden CSV", ok, detail);
  }

  // 12: write -> read -> write is byte-identical for every trained ARPA.
  {
    bool ok = true;
    int checked = 0;
    std::string detail;
    for (const auto& entry :
         fs::directory_iterator(pinned.work_dir + "/models")) {
      if (entry.path().extension() != ".arpa") continue;
      ++checked;
      std::string original = read_file(entry.path().string());
      std::string rewritten =
          write_arpa_string(read_arpa_string(original));
      if (rewritten != original) {
        ok = false;
        detail = "mismatch: " + entry.path().filename().string();
      }
    }
    if (ok) detail = std::to_string(checked) + " models round-tripped";
    report(12, "ARPA write/read/write is byte-identical", ok && checked > 0,
           detail);
  }

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED"
                                : std::to_string(g_failures) +
                                      " CRITERIA FAILED")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
