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
// Conversation-structured corpus handling: tokenization, vocabulary,
// partitioning by component label, and context windows over past turns.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace ctxlm {

enum class Speaker { user, agent };

struct NBestHypothesis {
  std::vector<std::string> text;
  double channel_score = 0.0;  // log domain
  double lm_score = 0.0;       // log domain, score under the original LM
};

struct Interaction {
  std::string conversation_id;
  int turn_index = 0;
  double timestamp = 0.0;  // seconds since epoch
  Speaker speaker = Speaker::user;
  std::vector<std::string> text;
  std::string component_label;  // empty means unset
  std::string source;           // optional data-source tag, empty means unset
  std::vector<NBestHypothesis> nbest;

  bool has_label() const { return !component_label.empty(); }
};

struct Conversation {
  std::string id;
  std::vector<Interaction> turns;
};

// Lowercased, whitespace-split tokens; punctuation stripped except
// apostrophes. Total function: never throws, empty input gives [].
inline std::vector<std::string> tokenize(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
    // other punctuation is dropped
  }
  flush();
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

// Token <-> dense id map with reserved <s>, </s>, <unk>.
class Vocabulary {
 public:
  static constexpr int kBosId = 0;
  static constexpr int kEosId = 1;
  static constexpr int kUnkId = 2;
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  Vocabulary() {
    add(kBos);
    add(kEos);
    add(kUnk);
  }

  int add(const std::string& token) {
    auto it = to_id_.find(token);
    if (it != to_id_.end()) return it->second;
    int id = static_cast<int>(to_token_.size());
    to_id_.emplace(token, id);
    to_token_.push_back(token);
    return id;
  }

  // Unknown tokens map to <unk>.
  int id(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const {
    return to_id_.count(token) != 0;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(to_token_.size()))
      throw std::out_of_range("Vocabulary: id out of range");
    return to_token_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(to_token_.size()); }

  std::vector<int> ids(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  const std::vector<std::string>& tokens() const { return to_token_; }

 private:
  std::unordered_map<std::string, int> to_id_;
  std::vector<std::string> to_token_;
};

// Tokens with count >= min_count get ids, in lexicographic order after the
// reserved entries; everything else maps to <unk>.
inline Vocabulary build_vocabulary(
    const std::vector<std::vector<std::string>>& corpus, int min_count = 2) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::map<std::string, int64_t> counts;
  for (const auto& utt : corpus)
    for (const auto& tok : utt) ++counts[tok];
  Vocabulary vocab;
  for (const auto& [tok, c] : counts)
    if (c >= min_count && tok != Vocabulary::kBos &&
        tok != Vocabulary::kEos && tok != Vocabulary::kUnk)
      vocab.add(tok);
  return vocab;
}

struct CorpusPartition {
  std::string component_label;
  std::vector<std::vector<std::string>> utterances;
};

// One partition per distinct label, lexicographic label order.
// Rejects unlabeled interactions, naming the offending turn.
inline std::vector<CorpusPartition> partition_by_label(
    const std::vector<Interaction>& data) {
  std::map<std::string, std::vector<std::vector<std::string>>> groups;
  for (const auto& turn : data) {
    if (!turn.has_label())
      throw std::invalid_argument(
          "partition_by_label: missing component_label at conversation " +
          turn.conversation_id + " turn " + std::to_string(turn.turn_index));
    groups[turn.component_label].push_back(turn.text);
  }
  std::vector<CorpusPartition> out;
  out.reserve(groups.size());
  for (auto& [label, utts] : groups)
    out.push_back(CorpusPartition{label, std::move(utts)});
  return out;
}

struct ContextWindowPolicy {
  enum class Mode { seconds, conversation };
  Mode mode = Mode::conversation;
  double window_seconds = 300.0;  // used in seconds mode

  static ContextWindowPolicy Seconds(double t) {
    if (t <= 0) throw std::invalid_argument("window_seconds must be > 0");
    return ContextWindowPolicy{Mode::seconds, t};
  }
  static ContextWindowPolicy WholeConversation() {
    return ContextWindowPolicy{Mode::conversation, 0.0};
  }
};

// Turns strictly before current_index; in seconds mode only those with
// timestamp >= current.timestamp - T. Order preserved.
inline std::vector<Interaction> context_window(const Conversation& conv,
                                               size_t current_index,
                                               const ContextWindowPolicy& p) {
  if (current_index >= conv.turns.size())
    throw std::out_of_range("context_window: index out of range");
  const Interaction& cur = conv.turns[current_index];
  std::vector<Interaction> out;
  for (size_t i = 0; i < current_index; ++i) {
    const Interaction& t = conv.turns[i];
    if (p.mode == ContextWindowPolicy::Mode::seconds &&
        t.timestamp < cur.timestamp - p.window_seconds)
      continue;
    out.push_back(t);
  }
  return out;
}

inline std::vector<std::vector<std::string>> texts_of(
    const std::vector<Interaction>& turns) {
  std::vector<std::vector<std::string>> out;
  out.reserve(turns.size());
  for (const auto& t : turns) out.push_back(t.text);
  return out;
}

// --- Interaction file I/O -------------------------------------------------
//
// Line-delimited JSON records with keys conversation_id, turn_index,
// timestamp, speaker, text, label (optional), source (optional),
// nbest (optional list of [text, score]). Unknown keys are ignored.

inline Interaction parse_interaction_json(const nlohmann::json& j) {
  Interaction t;
  t.conversation_id = j.at("conversation_id").get<std::string>();
  t.turn_index = j.at("turn_index").get<int>();
  t.timestamp = j.at("timestamp").get<double>();
  std::string spk = j.at("speaker").get<std::string>();
  if (spk == "user")
    t.speaker = Speaker::user;
  else if (spk == "agent")
    t.speaker = Speaker::agent;
  else
    throw std::runtime_error("bad speaker value: " + spk);
  t.text = tokenize(j.at("text").get<std::string>());
  if (j.contains("label")) t.component_label = j["label"].get<std::string>();
  if (j.contains("source")) t.source = j["source"].get<std::string>();
  if (j.contains("nbest")) {
    for (const auto& h : j["nbest"]) {
      NBestHypothesis hyp;
      hyp.text = tokenize(h.at(0).get<std::string>());
      hyp.channel_score = h.at(1).get<double>();
      t.nbest.push_back(std::move(hyp));
    }
    if (t.nbest.empty())
      throw std::runtime_error("nbest present but empty at conversation " +
                               t.conversation_id);
    for (size_t i = 1; i < t.nbest.size(); ++i)
      if (t.nbest[i].channel_score > t.nbest[i - 1].channel_score)
        throw std::runtime_error("nbest not sorted by channel score");
  }
  return t;
}

inline std::vector<Conversation> group_conversations(
    std::vector<Interaction> turns) {
  // Stable grouping in first-appearance order of conversation ids.
  std::vector<Conversation> convs;
  std::unordered_map<std::string, size_t> index;
  for (auto& t : turns) {
    auto [it, fresh] = index.emplace(t.conversation_id, convs.size());
    if (fresh) convs.push_back(Conversation{t.conversation_id, {}});
    Conversation& c = convs[it->second];
    if (!c.turns.empty()) {
      if (t.turn_index <= c.turns.back().turn_index)
        throw std::runtime_error("turn_index not strictly increasing in " +
                                 t.conversation_id);
      if (t.timestamp < c.turns.back().timestamp)
        throw std::runtime_error("timestamps decrease in " +
                                 t.conversation_id);
    }
    c.turns.push_back(std::move(t));
  }
  return convs;
}

inline std::vector<Conversation> load_interactions(std::istream& in) {
  std::vector<Interaction> turns;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      turns.push_back(parse_interaction_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("interactions line " + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  return group_conversations(std::move(turns));
}

inline std::vector<Conversation> load_interactions_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interactions file: " + path);
  return load_interactions(in);
}

inline nlohmann::json interaction_to_json(const Interaction& t) {
  nlohmann::json j;
  j["conversation_id"] = t.conversation_id;
  j["turn_index"] = t.turn_index;
  j["timestamp"] = t.timestamp;
  j["speaker"] = t.speaker == Speaker::user ? "user" : "agent";
  j["text"] = join_tokens(t.text);
  if (t.has_label()) j["label"] = t.component_label;
  if (!t.source.empty()) j["source"] = t.source;
  if (!t.nbest.empty()) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& h : t.nbest)
      arr.push_back({join_tokens(h.text), h.channel_score});
    j["nbest"] = arr;
  }
  return j;
}

inline void save_interactions_file(const std::string& path,
                                   const std::vector<Conversation>& convs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write interactions file: " + path);
  for (const auto& c : convs)
    for (const auto& t : c.turns) out << interaction_to_json(t).dump() << "\n";
}

// Plain-text corpus: one utterance per line.
inline std::vector<std::vector<std::string>> load_text_corpus(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open text corpus: " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

}  // namespace ctxlm
