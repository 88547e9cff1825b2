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
#include <sstream>

#include "ctxlm/features.hpp"

using namespace ctxlm;

namespace {

EmbeddingTable two_d_table() {
  EmbeddingTable t(2);
  t.set("a", {1.0, 0.0});
  t.set("b", {0.0, 1.0});
  t.set("c", {2.0, 2.0});
  return t;
}

Interaction turn_with(Speaker spk, std::vector<std::string> text,
                      double t = 0.0) {
  Interaction x;
  x.speaker = spk;
  x.text = std::move(text);
  x.timestamp = t;
  return x;
}

}  // namespace

TEST_CASE("avg_embedding pools token vectors") {
  auto t = two_d_table();
  CHECK(avg_embedding({}, t) == std::vector<double>{0.0, 0.0});
  CHECK(avg_embedding({{"a"}}, t) == std::vector<double>{1.0, 0.0});
  auto v = avg_embedding({{"a"}, {"b"}}, t);
  CHECK(v[0] == Catch::Approx(0.5));
  CHECK(v[1] == Catch::Approx(0.5));
  // OOV tokens contribute the zero vector but still count
  auto w = avg_embedding({{"a", "zzz"}}, t);
  CHECK(w[0] == Catch::Approx(0.5));
}

TEST_CASE("decayed_embedding formula and limits") {
  auto t = two_d_table();
  // gamma = 1 equals the mean of per-turn means
  auto flat = decayed_embedding({{"a"}, {"b"}}, t, 1.0);
  CHECK(flat[0] == Catch::Approx(0.5));
  CHECK(flat[1] == Catch::Approx(0.5));

  // v1=(1,0), v2=(0,1), gamma=0.5 -> (1/3, 2/3)
  auto d = decayed_embedding({{"a"}, {"b"}}, t, 0.5);
  CHECK(d[0] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(d[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));

  // gamma -> 0+ keeps only the most recent turn
  auto lim = decayed_embedding({{"a"}, {"b"}}, t, 1e-6);
  CHECK(std::abs(lim[0] - 0.0) < 1e-5);
  CHECK(std::abs(lim[1] - 1.0) < 1e-5);

  // empty turns are skipped
  auto skip = decayed_embedding({{"a"}, {}, {"b"}}, t, 0.5);
  CHECK(skip[0] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  CHECK(decayed_embedding({}, t, 0.5) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(decayed_embedding({{"a"}}, t, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(decayed_embedding({{"a"}}, t, 1.5), std::invalid_argument);
}

TEST_CASE("meta_features one-hots") {
  // 1970-01-05 (epoch day 4) was a Monday; 09:00 UTC is morning.
  auto monday_morning = meta_features(4 * 86400.0 + 9 * 3600.0);
  REQUIRE(monday_morning.size() == 10);
  CHECK(monday_morning[0] == 1.0);  // Monday
  CHECK(monday_morning[7] == 1.0);  // morning
  double dow_sum = 0, tod_sum = 0;
  for (int i = 0; i < 7; ++i) dow_sum += monday_morning[i];
  for (int i = 7; i < 10; ++i) tod_sum += monday_morning[i];
  CHECK(dow_sum == 1.0);
  CHECK(tod_sum == 1.0);

  // boundaries: 12:00 afternoon, 18:00 evening, 04:59 evening
  CHECK(meta_features(4 * 86400.0 + 12 * 3600.0)[8] == 1.0);
  CHECK(meta_features(4 * 86400.0 + 18 * 3600.0)[9] == 1.0);
  CHECK(meta_features(4 * 86400.0 + 4 * 3600.0 + 59 * 60.0)[9] == 1.0);
  // Sunday (epoch day 3)
  CHECK(meta_features(3 * 86400.0)[6] == 1.0);
}

TEST_CASE("feature config parsing and dimensions") {
  auto c = FeatureConfig::parse("prev,meta");
  CHECK(c.prev);
  CHECK(c.meta);
  CHECK_FALSE(c.cur);
  CHECK(c.dim(50) == 110);
  CHECK(c.describe() == "prev+meta");

  auto d = FeatureConfig::parse("prev-d,meta,cur", 0.5);
  CHECK(d.prev_d);
  CHECK(d.decay == 0.5);
  CHECK(d.dim(50) == 160);
  CHECK(d.describe() == "prev-d+meta+cur");

  CHECK_THROWS_AS(FeatureConfig::parse("prev,prev-d"), std::invalid_argument);
  CHECK_THROWS_AS(FeatureConfig::parse(""), std::invalid_argument);
  CHECK_THROWS_AS(FeatureConfig::parse("bogus"), std::invalid_argument);
}

TEST_CASE("build_features assembles configured blocks") {
  auto table = two_d_table();
  double monday_9 = 4 * 86400.0 + 9 * 3600.0;

  // meta-only, empty window
  auto meta_only = build_features({}, nullptr, monday_9,
                                  FeatureConfig::parse("meta"), table);
  CHECK(meta_only.prev_user.empty());
  CHECK(meta_only.meta[0] == 1.0);
  CHECK(meta_only.meta[7] == 1.0);
  CHECK(meta_only.flat().size() == 10);

  // agent-only window leaves prev_user at zero
  std::vector<Interaction> agents = {turn_with(Speaker::agent, {"a"})};
  auto f = build_features(agents, nullptr, 0.0, FeatureConfig::parse("prev"),
                          table);
  CHECK(f.prev_user == std::vector<double>{0.0, 0.0});
  CHECK(f.prev_agent == std::vector<double>{1.0, 0.0});

  // prev-d block equals the standalone decayed embedding
  std::vector<Interaction> window = {turn_with(Speaker::user, {"a"}),
                                     turn_with(Speaker::agent, {"c"}),
                                     turn_with(Speaker::user, {"b"})};
  auto cfg = FeatureConfig::parse("prev-d", 0.5);
  auto g = build_features(window, nullptr, 0.0, cfg, table);
  CHECK(g.prev_user == decayed_embedding({{"a"}, {"b"}}, table, 0.5));
  CHECK(g.prev_agent == decayed_embedding({{"c"}}, table, 0.5));

  // cur must be supplied iff configured
  CHECK_THROWS_AS(build_features(window, nullptr, 0.0,
                                 FeatureConfig::parse("cur"), table),
                  std::invalid_argument);
  std::vector<std::string> hyp = {"a", "b"};
  auto h = build_features(window, &hyp, 0.0, FeatureConfig::parse("cur"), table);
  CHECK(h.cur[0] == Catch::Approx(0.5));
  CHECK(h.cur[1] == Catch::Approx(0.5));
}

TEST_CASE("pooling is bag-of-words within a turn") {
  auto table = two_d_table();
  std::vector<Interaction> w1 = {turn_with(Speaker::user, {"a", "b", "c"})};
  std::vector<Interaction> w2 = {turn_with(Speaker::user, {"c", "a", "b"})};
  auto cfg = FeatureConfig::parse("prev");
  CHECK(build_features(w1, nullptr, 0.0, cfg, table).flat() ==
        build_features(w2, nullptr, 0.0, cfg, table).flat());
}

TEST_CASE("feature vectors are finite") {
  auto table = two_d_table();
  std::vector<Interaction> window = {
      turn_with(Speaker::user, {"zzz", "a"}),
      turn_with(Speaker::agent, {})};
  auto cfg = FeatureConfig::parse("prev-d,meta", 0.7);
  for (double x :
       build_features(window, nullptr, -12345.6, cfg, table).flat())
    CHECK(std::isfinite(x));
}

TEST_CASE("embedding table I/O") {
  auto table = two_d_table();
  std::ostringstream os;
  table.save(os);
  std::istringstream is(os.str());
  auto back = EmbeddingTable::load(is);
  CHECK(back.dim() == 2);
  CHECK(back.size() == 3);
  CHECK(back.lookup("a") == table.lookup("a"));
  CHECK(back.lookup("missing") == std::vector<double>{0.0, 0.0});

  std::istringstream empty("");
  CHECK_THROWS(EmbeddingTable::load(empty));
  std::istringstream ragged("a 1 2\nb 1\n");
  CHECK_THROWS(EmbeddingTable::load(ragged));
}
