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
// ctxlm: batch pipeline for contextually adapted n-gram mixtures.
// Subcommands: synth, train-lms, train-adapter, train-topic, eval.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxlm/stages.hpp"

namespace {

using nlohmann::json;

// --config supplies defaults; explicitly passed flags win.
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(ctxlm::read_file(path));
}

template <typename T>
void apply_config(const CLI::App* cmd, const json& cfg, const std::string& key,
                  const std::string& flag, T& value) {
  if (cfg.contains(key) && cmd->count(flag) == 0) value = cfg[key].get<T>();
}

ctxlm::ContextWindowPolicy window_for(const std::string& system,
                                      double window_seconds) {
  if (system == "goal")
    return ctxlm::ContextWindowPolicy::Seconds(window_seconds);
  if (system == "chatbot")
    return ctxlm::ContextWindowPolicy::WholeConversation();
  throw std::invalid_argument("unknown system kind: " + system);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual interpolation-weight adaptation for n-gram mixtures"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file with defaults")
      ->configurable(false);

  uint64_t seed = 1;
  std::string system = "chatbot";
  double lm_scale = 1.0;
  double decay = 0.7;
  double window_seconds = 300.0;
  app.add_option("--seed", seed, "random seed");
  app.add_option("--system", system, "system kind: goal|chatbot")
      ->check(CLI::IsMember({"goal", "chatbot"}));
  app.add_option("--lm-scale", lm_scale, "LM weight in rescoring");
  app.add_option("--decay", decay, "prev-d decay factor");
  app.add_option("--window-seconds", window_seconds,
                 "context window T for goal-oriented systems");

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "data";
  int conversations = 2400, dev_conversations = 150, test_conversations = 260;
  int topics = 5;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--conversations", conversations, "training conversations");
  synth->add_option("--dev-conversations", dev_conversations, "dev conversations");
  synth->add_option("--test-conversations", test_conversations, "test conversations");
  synth->add_option("--topics", topics, "number of topics");

  // train-lms -----------------------------------------------------------
  auto* train_lms = app.add_subcommand(
      "train-lms", "train component Katz LMs and static EM weights");
  std::string data_dir = "data", models_dir = "models";
  int order = 4, cutoff = 5, min_count = 2;
  train_lms->add_option("--data", data_dir, "dataset directory");
  train_lms->add_option("--out", models_dir, "output model directory");
  train_lms->add_option("--order", order, "n-gram order");
  train_lms->add_option("--cutoff", cutoff, "Good-Turing discount cutoff");
  train_lms->add_option("--min-count", min_count, "vocabulary count threshold");

  // train-adapter ---------------------------------------------------------
  auto* train_adapter =
      app.add_subcommand("train-adapter", "train the contextual weight adapter");
  std::string ta_data = "data", ta_models = "models", ta_out = "adapters";
  std::string loss = "ppl", features = "prev,meta", name;
  int max_epochs = 50, patience = 5, batch_size = 32, hidden = 200;
  double learning_rate = 1e-3, clip_norm = 5.0;
  size_t max_examples = 0;
  train_adapter->add_option("--data", ta_data, "dataset directory");
  train_adapter->add_option("--models", ta_models, "component LM directory");
  train_adapter->add_option("--out", ta_out, "output directory");
  train_adapter->add_option("--loss", loss, "training loss: ppl|xent")
      ->check(CLI::IsMember({"ppl", "xent"}));
  train_adapter->add_option("--features", features,
                            "comma list of prev,prev-d,meta,cur");
  train_adapter->add_option("--name", name, "checkpoint name (default from loss+features)");
  train_adapter->add_option("--max-epochs", max_epochs, "epoch cap");
  train_adapter->add_option("--patience", patience, "early-stop patience");
  train_adapter->add_option("--batch-size", batch_size, "minibatch size");
  train_adapter->add_option("--hidden", hidden, "hidden units per layer");
  train_adapter->add_option("--learning-rate", learning_rate, "Adam step size");
  train_adapter->add_option("--clip-norm", clip_norm, "global gradient norm cap");
  train_adapter->add_option("--max-examples", max_examples,
                            "training example cap (0 = all)");

  // train-topic -----------------------------------------------------------
  auto* train_topic =
      app.add_subcommand("train-topic", "train the naive-Bayes topic classifier");
  std::string tt_data = "data", tt_out = "adapters/topic.ckpt";
  train_topic->add_option("--data", tt_data, "dataset directory");
  train_topic->add_option("--out", tt_out, "classifier checkpoint path");

  // eval ------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate configured systems");
  std::string ev_data = "data", ev_models = "models", ev_adapters = "adapters";
  std::string report = "metrics.csv", passes = "1,2";
  std::vector<std::string> adapter_names;
  bool no_topic = false;
  eval->add_option("--data", ev_data, "dataset directory");
  eval->add_option("--models", ev_models, "component LM directory");
  eval->add_option("--adapters", ev_adapters, "adapter checkpoint directory");
  eval->add_option("--adapter", adapter_names,
                   "adapter checkpoint name (repeatable)");
  eval->add_option("--passes", passes, "which decoding passes to report: 1,2");
  eval->add_option("--out", report, "metrics CSV path");
  eval->add_flag("--no-topic", no_topic, "skip the topic-posterior baseline");

  try {
    app.parse(argc, argv);
    json cfg = load_config(config_path);
    apply_config(&app, cfg, "seed", "--seed", seed);
    apply_config(&app, cfg, "system", "--system", system);
    apply_config(&app, cfg, "lm_scale", "--lm-scale", lm_scale);
    apply_config(&app, cfg, "decay", "--decay", decay);
    apply_config(&app, cfg, "window_seconds", "--window-seconds", window_seconds);

    if (synth->parsed()) {
      apply_config(synth, cfg, "topics", "--topics", topics);
      apply_config(synth, cfg, "conversations", "--conversations", conversations);
      ctxlm::SynthConfig sc;
      sc.seed = seed;
      sc.n_topics = topics;
      sc.train_conversations = conversations;
      sc.dev_conversations = dev_conversations;
      sc.test_conversations = test_conversations;
      sc.chatbot = system == "chatbot";
      ctxlm::stage_synth(sc, synth_out);
      std::cout << "wrote dataset to " << synth_out << "\n";
    } else if (train_lms->parsed()) {
      ctxlm::LmTrainOptions opt;
      opt.order = order;
      opt.discount_cutoff = cutoff;
      opt.min_count = min_count;
      opt.per_source_merge = system == "chatbot";
      ctxlm::stage_train_lms(data_dir, models_dir, opt);
      std::cout << "wrote component LMs to " << models_dir << "\n";
    } else if (train_adapter->parsed()) {
      ctxlm::AdapterStageOptions opt;
      opt.features = ctxlm::FeatureConfig::parse(features, decay);
      opt.loss = loss == "ppl" ? ctxlm::LossKind::ppl : ctxlm::LossKind::xent;
      opt.name = name.empty()
                     ? loss + "_" + opt.features.describe()
                     : name;
      for (char& c : opt.name)
        if (c == '+' || c == '-') c = '_';
      opt.train.seed = seed;
      opt.train.max_epochs = max_epochs;
      opt.train.patience = patience;
      opt.train.batch_size = batch_size;
      opt.train.learning_rate = learning_rate;
      opt.train.clip_norm = clip_norm;
      opt.hidden = hidden;
      opt.max_examples = max_examples;
      opt.window = window_for(system, window_seconds);
      auto result =
          ctxlm::stage_train_adapter(ta_data, ta_models, ta_out, opt);
      std::cout << "trained " << opt.name << ": best dev loss "
                << result.best_dev_loss << " at epoch " << result.best_epoch
                << "\n";
    } else if (train_topic->parsed()) {
      ctxlm::stage_train_topic(tt_data, tt_out);
      std::cout << "wrote topic classifier to " << tt_out << "\n";
    } else if (eval->parsed()) {
      ctxlm::EvalStageOptions opt;
      opt.adapter_names = adapter_names;
      opt.include_topic = !no_topic && passes.find('2') != std::string::npos;
      opt.lm_scale = lm_scale;
      opt.window = window_for(system, window_seconds);
      auto rows = ctxlm::stage_eval(ev_data, ev_models, ev_adapters, report, opt);
      // --passes filters the report after evaluation of requested systems.
      if (passes != "1,2" && passes != "2,1") {
        std::vector<ctxlm::ReportRow> kept;
        for (auto& r : rows)
          if (r.system == "no_adapt" ||
              passes.find(std::to_string(r.passes)) != std::string::npos)
            kept.push_back(std::move(r));
        ctxlm::write_file(report, ctxlm::metrics_csv(kept));
      }
      std::cout << "wrote report to " << report << "\n";
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::invalid_argument& e) {
    std::cerr << "ERROR:invalid-argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR:runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
