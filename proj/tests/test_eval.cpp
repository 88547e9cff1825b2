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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "ctxlm/eval.hpp"

using namespace ctxlm;

namespace {

// Independent brute-force Levenshtein distance (no backtrace).
size_t brute_distance(const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1),
                         prev[j] + 1, cur[j - 1] + 1});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::shared_ptr<Vocabulary> topic_vocab() {
  auto v = std::make_shared<Vocabulary>();
  for (const char* w : {"guitar", "drums", "rain", "sunny", "the"}) v->add(w);
  return v;
}

// Unigram model concentrated on the given words.
std::shared_ptr<NGramModel> concentrated(const std::shared_ptr<Vocabulary>& v,
                                         std::vector<std::string> words) {
  auto m = std::make_shared<NGramModel>(1, v);
  double hi = 0.8 / static_cast<double>(words.size());
  std::set<int> strong;
  for (const auto& w : words) strong.insert(v->id(w));
  int weak = 0;
  for (int w = 0; w < v->size(); ++w)
    if (w != Vocabulary::kBosId && !strong.count(w)) ++weak;
  for (int w = 0; w < v->size(); ++w) {
    if (w == Vocabulary::kBosId) continue;
    m->set_entry({w}, std::log10(strong.count(w)
                                     ? hi
                                     : 0.2 / static_cast<double>(weak)));
  }
  m->finalize();
  return m;
}

Interaction user_turn(const std::string& conv, int idx, double t,
                      std::vector<std::string> text,
                      std::vector<NBestHypothesis> nbest) {
  Interaction turn;
  turn.conversation_id = conv;
  turn.turn_index = idx;
  turn.timestamp = t;
  turn.speaker = Speaker::user;
  turn.text = std::move(text);
  turn.nbest = std::move(nbest);
  return turn;
}

}  // namespace

TEST_CASE("align forced cases") {
  auto r = align({"play", "the", "beatles"}, {"play", "beatles"});
  CHECK(r.deletions == 1);
  CHECK(r.substitutions == 0);
  CHECK(r.insertions == 0);
  CHECK(wer({r}) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  auto same = align({"a", "b"}, {"a", "b"});
  CHECK(same.edit_distance() == 0);

  auto sub = align({"play", "the", "beatles"}, {"play", "the", "beetles"});
  CHECK(sub.substitutions == 1);
  CHECK(sub.ref_ops[2] == AlignOp::substitution);
}

TEST_CASE("align matches a brute-force distance oracle") {
  std::mt19937_64 rng(13);
  std::vector<std::string> alphabet = {"a", "b", "c"};
  std::uniform_int_distribution<size_t> wd(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> ld(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ref, hyp;
    for (int i = ld(rng); i > 0; --i) ref.push_back(alphabet[wd(rng)]);
    for (int i = ld(rng); i > 0; --i) hyp.push_back(alphabet[wd(rng)]);
    auto r = align(ref, hyp);
    CHECK(r.edit_distance() == brute_distance(ref, hyp));
    CHECK(r.substitutions + r.deletions <= ref.size());
    size_t correct = 0;
    for (auto op : r.ref_ops)
      if (op == AlignOp::correct) ++correct;
    CHECK(correct + r.substitutions + r.deletions == ref.size());
  }
}

TEST_CASE("wer and werr arithmetic") {
  CHECK(werr(0.10, 0.097) == Catch::Approx(-0.03).epsilon(1e-9));
  CHECK(werr(0.25, 0.25) == 0.0);
  CHECK_THROWS_AS(werr(0.0, 0.1), std::invalid_argument);

  // hand-tallied 3-utterance corpus: 1 sub + 1 del + 1 ins over 8 ref words
  std::vector<AlignmentResult> rs = {
      align({"a", "b", "c"}, {"a", "x", "c"}),   // 1 sub
      align({"a", "b"}, {"a"}),                  // 1 del
      align({"a", "b", "c"}, {"a", "b", "y", "c"})};  // 1 ins
  CHECK(wer(rs) == Catch::Approx(3.0 / 8.0).epsilon(1e-12));
  CHECK_THROWS_AS(wer({}), std::invalid_argument);
}

TEST_CASE("entity error rates") {
  // entity at index 2 substituted -> conditional rate 1/1
  auto sub = align({"play", "the", "beatles"}, {"play", "the", "beetles"});
  CHECK(entity_error_rate({sub}, {EntityTagSet{2}}) == 1.0);
  auto c = entity_error_counts({sub}, {EntityTagSet{2}});
  CHECK(c.global_rate() == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  // no errors
  auto ok = align({"play", "the", "beatles"}, {"play", "the", "beatles"});
  CHECK(entity_error_rate({ok}, {EntityTagSet{2}}) == 0.0);

  // everything deleted -> saturation
  auto del = align({"e1", "e2"}, {});
  CHECK(entity_error_rate({del}, {EntityTagSet{0, 1}}) == 1.0);

  CHECK_THROWS_AS(entity_error_counts({ok}, {EntityTagSet{7}}),
                  std::invalid_argument);
}

TEST_CASE("rescore_nbest contract") {
  auto v = topic_vocab();
  auto music = concentrated(v, {"guitar", "drums"});
  auto weather = concentrated(v, {"rain", "sunny"});
  MixtureLM mix({music, weather});

  std::vector<NBestHypothesis> nbest = {{{"rain", "sunny"}, -1.0, 0.0},
                                        {{"guitar", "drums"}, -1.2, 0.0}};
  // alpha = 0 keeps the original 1-best
  CHECK(rescore_nbest(nbest, mix, {0.5, 0.5}, *v, 0.0) == 0);
  // one-hot music weights flip the decision: hand-computed scores
  // score0 = -1.0 + ln(P_music(rain) P_music(sunny) P_music(</s>))
  // score1 = -1.2 + ln(P_music(guitar) P_music(drums) P_music(</s>))
  WeightVector music_only = {1.0, 0.0};
  double s0 = -1.0 + mix.utterance_logprob(music_only, v->ids({"rain", "sunny"}));
  double s1 = -1.2 + mix.utterance_logprob(music_only,
                                           v->ids({"guitar", "drums"}));
  REQUIRE(s1 > s0);
  CHECK(rescore_nbest(nbest, mix, music_only, *v, 1.0) == 1);

  // exact ties go to the lower original rank
  std::vector<NBestHypothesis> tied = {{{"guitar"}, -1.0, 0.0},
                                       {{"guitar"}, -1.0, 0.0}};
  CHECK(rescore_nbest(tied, mix, {0.5, 0.5}, *v, 1.0) == 0);

  CHECK_THROWS_AS(rescore_nbest({}, mix, {0.5, 0.5}, *v, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(rescore_nbest(nbest, mix, {0.5, 0.5}, *v, -1.0),
                  std::invalid_argument);
}

TEST_CASE("entity tag files round-trip") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "ctxlm_tags.txt";
  std::map<std::string, EntityTagSet> tags = {
      {"c1:0", {0, 2}}, {"c1:2", {}}, {"c2:1", {1}}};
  save_entity_tags(path.string(), tags);
  auto back = load_entity_tags(path.string());
  CHECK(back == tags);
}

TEST_CASE("run_1pass rejects cur features and matches the static baseline") {
  auto v = topic_vocab();
  auto music = concentrated(v, {"guitar", "drums"});
  auto weather = concentrated(v, {"rain", "sunny"});
  MixtureLM mix({music, weather});

  Conversation conv;
  conv.id = "c";
  conv.turns = {
      user_turn("c", 0, 0.0, {"guitar", "drums"},
                {{{"rain", "drums"}, -0.2, 0.0}, {{"guitar", "drums"}, -0.5, 0.0}}),
      user_turn("c", 1, 10.0, {"rain", "sunny"},
                {{{"rain", "sunny"}, -0.1, 0.0}, {{"rain", "drums"}, -0.4, 0.0}})};
  std::vector<Conversation> test = {conv};

  EvalOptions opt;
  opt.uses_cur = true;
  CHECK_THROWS_AS(run_1pass(test, mix, static_policy({0.5, 0.5}), opt),
                  std::invalid_argument);

  opt.uses_cur = false;
  auto stat = run_1pass(test, mix, static_policy({0.5, 0.5}), opt);
  CHECK(stat.utterances == 2);
  CHECK(stat.lambdas.size() == 2);

  // a zero adapter network outputs uniform weights -> identical metrics
  EmbeddingTable table(2);
  AdapterNet zero(4 + 10, 2);  // prev (2x2) + meta (10)
  auto cfg = FeatureConfig::parse("prev,meta");
  auto adapted = run_1pass(test, mix, adapter_policy(zero, cfg, table), opt);
  CHECK(adapted.ppl == stat.ppl);
  CHECK(adapted.wer == stat.wer);
  CHECK(adapted.lambdas == stat.lambdas);
}

TEST_CASE("2-pass uses the first-pass 1-best and never the reference") {
  auto v = topic_vocab();
  auto music = concentrated(v, {"guitar", "drums"});
  auto weather = concentrated(v, {"rain", "sunny"});
  MixtureLM mix({music, weather});

  Conversation conv;
  conv.id = "c";
  conv.turns = {user_turn(
      "c", 0, 0.0, {"guitar", "drums"},
      {{{"guitar", "drums"}, -0.1, 0.0}, {{"rain", "sunny"}, -0.3, 0.0}})};
  std::vector<Conversation> test = {conv};

  EvalOptions opt;
  opt.first_pass_weights = {0.5, 0.5};

  // the policy records the hypothesis it saw
  std::vector<std::string> seen;
  WeightPolicy probe = [&](const std::vector<Interaction>&, double,
                           const std::vector<std::string>* hyp) {
    REQUIRE(hyp != nullptr);
    seen = *hyp;
    return WeightVector{0.5, 0.5};
  };
  run_2pass(test, mix, probe, opt);
  size_t first = rescore_nbest(conv.turns[0].nbest, mix, {0.5, 0.5}, *v, 1.0);
  CHECK(seen == conv.turns[0].nbest[first].text);

  // corrupting the reference leaves the chosen weights unchanged
  auto clf_like = [&](const std::vector<Interaction>&, double,
                      const std::vector<std::string>* hyp) {
    double music_mass = 0.0;
    for (const auto& tok : *hyp)
      if (tok == "guitar" || tok == "drums") music_mass += 1.0;
    double w = (1.0 + music_mass) / (2.0 + hyp->size());
    return WeightVector{w, 1.0 - w};
  };
  auto before = run_2pass(test, mix, clf_like, opt);
  auto corrupted = test;
  corrupted[0].turns[0].text = {"the", "the", "the"};
  auto after = run_2pass(corrupted, mix, clf_like, opt);
  CHECK(before.lambdas == after.lambdas);

  // without cur features 2-pass reduces to 1-pass
  auto cur_free = static_policy({0.7, 0.3});
  auto one = run_1pass(test, mix, cur_free, opt);
  auto two = run_2pass(test, mix, cur_free, opt);
  CHECK(one.ppl == two.ppl);
  CHECK(one.wer == two.wer);
  CHECK(one.lambdas == two.lambdas);

  // 2-pass without first-pass weights is an error
  EvalOptions bare;
  CHECK_THROWS_AS(run_2pass(test, mix, probe, bare), std::invalid_argument);
}

TEST_CASE("topic policy turns posteriors into weights") {
  auto clf = train_classifier({{{"guitar", "drums"}, "music"},
                               {{"rain", "sunny"}, "weather"}});
  auto policy = topic_policy(clf);
  std::vector<std::string> hyp = {"guitar"};
  auto w = policy({}, 0.0, &hyp);
  REQUIRE(w.size() == 2);
  CHECK(w[0] > 0.5);
  CHECK(w[0] + w[1] == Catch::Approx(1.0).margin(1e-9));
  CHECK_THROWS_AS(policy({}, 0.0, nullptr), std::invalid_argument);
}
