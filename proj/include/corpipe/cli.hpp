#pragma once

// corpipe command-line tool.
//
//   convert   normalize a CorefUD file; surface or restore empty nodes
//   tags      encode | decode | vocab  stack-instruction tags
//   train     train a model, writing best/final checkpoints and a manifest
//   predict   annotate documents with a trained model
//   score     MUC / B3 / CEAF-e / CoNLL with head-based partial matching
//   mix       dataset sampling ratios and draws
//   synth     generate a synthetic corpus
//   selftest  brute-force oracle checks
//
// Exit codes: 0 success, 1 data error, 2 usage error.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "corpipe/corefud_io.hpp"
#include "corpipe/crf.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/mention_codec.hpp"
#include "corpipe/model.hpp"
#include "corpipe/oracles.hpp"
#include "corpipe/sampling.hpp"
#include "corpipe/scorer.hpp"
#include "corpipe/synth.hpp"

namespace corpipe::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

// Runs f(i) for i in [0, n) on up to `jobs` threads. Results must be stored
// by index so the outcome does not depend on the job count.
template <class F>
void parallel_for(std::size_t n, int jobs, F f) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  return io::read_text_file(path);
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path == "-")
    out << text;
  else
    io::write_text_file(path, text);
}

inline std::string stem_of(const std::string& path) { return path == "-" ? "stdin" : fs::path(path).stem().string(); }

// "ID=PATH" or "PATH" (corpus id = file stem).
inline std::pair<std::string, std::string> split_source(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos) return {stem_of(spec), spec};
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

inline json read_json_file(const std::string& path) {
  try {
    return json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_manifest(const std::string& path, json manifest) {
  manifest["tool"] = "corpipe";
  manifest["version"] = kVersion;
  io::write_text_file(path, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Presets

inline json preset(const std::string& name) {
  if (name == "toy-overfit")
    return {{"model", {{"dim", 64}, {"layers", 2}, {"heads", 4}}},
            {"train",
             {{"peak_lr", 1e-3}, {"epochs", 200}, {"batches_per_epoch", 100}, {"batch_size", 8},
              {"stop_at_dev_score", 99.0}}}};
  if (name == "base")
    return {{"model", {{"dim", 128}, {"layers", 4}, {"heads", 8}}},
            {"train", {{"peak_lr", 3e-4}, {"epochs", 30}, {"batches_per_epoch", 300}}}};
  if (name == "large")
    return {{"model", {{"dim", 256}, {"layers", 6}, {"heads", 8}}},
            {"train", {{"peak_lr", 1e-4}, {"epochs", 30}, {"batches_per_epoch", 600}}}};
  if (name == "default" || name.empty()) return json::object();
  throw ConfigError("unknown preset '" + name + "' (toy-overfit, base, large)");
}

// Option values that were given on the command line, keyed by config field.
class Overrides {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& flags, const std::string& section, const std::string& key,
                      const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(flags, *value, help);
    entries_.push_back({opt, section, key, [value] { return json(*value); }});
    return opt;
  }
  CLI::Option* flag(CLI::App* app, const std::string& flags, const std::string& section, const std::string& key,
                    const std::string& help) {
    auto value = std::make_shared<bool>();
    auto* opt = app->add_flag(flags, *value, help);
    entries_.push_back({opt, section, key, [value] { return json(*value); }});
    return opt;
  }
  void apply(json& config) const {
    for (const auto& e : entries_)
      if (e.opt->count()) config[e.section][e.key] = e.get();
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::string section, key;
    std::function<json()> get;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// tags: CoNLL-U with the Entity attribute replaced by
//   Tag=<depth>:<instructions>  and, where mentions open,  Push=<eid>,<eid>...
// in push order.

namespace detail {

inline std::string misc_with(const std::string& misc, const std::vector<std::string>& extra) {
  std::vector<std::string> parts;
  if (!misc.empty() && misc != "_") parts.push_back(misc);
  parts.insert(parts.end(), extra.begin(), extra.end());
  return parts.empty() ? "_" : io::detail::join(parts, '|');
}

inline std::string take_attribute(std::string& misc, const std::string& name) {
  if (misc == "_") return {};
  auto parts = io::detail::split(misc, '|');
  std::vector<std::string> kept;
  std::string value;
  bool found = false;
  for (auto p : parts) {
    if (p.substr(0, name.size() + 1) == name + "=") {
      value = std::string(p.substr(name.size() + 1));
      found = true;
    } else {
      kept.emplace_back(p);
    }
  }
  if (!found) return {};
  misc = kept.empty() ? "_" : io::detail::join(kept, '|');
  return value;
}

}  // namespace detail

inline Document encode_tags_document(const Document& doc, int& warnings) {
  auto gold = model::gold_mentions(doc);
  warnings += gold.duplicates + gold.cross_sentence;
  auto tags = model::gold_tags(doc);
  const auto starts = sentence_starts(doc);
  // push order at a token = starting spans by decreasing end
  std::map<int, std::vector<std::pair<int, int>>> opening;  // start -> (end, entity)
  for (const auto& g : gold.mentions) opening[g.start].push_back({g.end, g.entity});
  Document out = doc;
  out.entities.clear();
  for (std::size_t s = 0; s < out.sentences.size(); ++s)
    for (std::size_t i = 0; i < out.sentences[s].tokens.size(); ++i) {
      auto& t = out.sentences[s].tokens[i];
      std::vector<std::string> extra{"Tag=" + tags[s][i].str()};
      auto it = opening.find(starts[s] + static_cast<int>(i));
      if (it != opening.end()) {
        auto spans = it->second;
        std::stable_sort(spans.begin(), spans.end(), [](auto& a, auto& b) { return a.first > b.first; });
        std::vector<std::string> ids;
        for (auto [end, e] : spans) {
          const auto& ent = doc.entities[e];
          ids.push_back(ent.entity_type.empty() ? ent.entity_id : ent.entity_id + "-" + ent.entity_type);
        }
        extra.push_back("Push=" + io::detail::join(ids, ','));
      }
      t.misc = detail::misc_with(t.misc, extra);
      t.entity_slot = -1;
    }
  return out;
}

inline Document decode_tags_document(const Document& doc) {
  Document out = doc;
  out.entities.clear();
  const auto parents = parent_positions(doc);
  std::map<std::string, int> entity_index;
  int base = 0;
  for (auto& s : out.sentences) {
    std::vector<std::pair<int, std::string>> stack;  // start, entity label
    auto emit = [&](int start, int end, const std::string& label) {
      auto dash = label.find('-');
      std::string id = label.substr(0, dash), type = dash == std::string::npos ? "" : label.substr(dash + 1);
      auto [it, inserted] = entity_index.emplace(id, static_cast<int>(out.entities.size()));
      if (inserted) out.entities.push_back(Entity{id, type, {}});
      Mention m;
      for (int p = start; p <= end; ++p) m.token_positions.push_back(base + p);
      m.head_position = scorer::head_of_span(m.token_positions, parents);
      out.entities[it->second].mentions.push_back(std::move(m));
    };
    for (int i = 0; i < static_cast<int>(s.tokens.size()); ++i) {
      auto& t = s.tokens[i];
      std::string tag_text = detail::take_attribute(t.misc, "Tag");
      std::string push_text = detail::take_attribute(t.misc, "Push");
      if (tag_text.empty()) throw FormatError("sentence " + s.sentence_id + ", token " + std::to_string(i + 1) + ": no Tag attribute");
      auto tag = codec::Tag::parse(tag_text);
      std::vector<std::string> labels;
      if (!push_text.empty())
        for (auto p : io::detail::split(push_text, ',')) labels.emplace_back(p);
      if (tag.depth_before != static_cast<int>(stack.size()))
        throw CodecError(base + i, "tag " + tag.str() + " does not match the open mentions");
      std::size_t next_label = 0;
      for (const auto& ins : tag.instructions) {
        if (!ins.is_pop()) {
          if (next_label >= labels.size()) throw FormatError("sentence " + s.sentence_id + ": PUSH without an entity");
          stack.push_back({i, labels[next_label++]});
          continue;
        }
        if (ins.pop_index > static_cast<int>(stack.size())) throw CodecError(base + i, "pop beyond the stack");
        auto it = stack.end() - ins.pop_index;
        emit(it->first, i, it->second);
        stack.erase(it);
      }
      if (next_label != labels.size()) throw FormatError("sentence " + s.sentence_id + ": unused Push entries");
    }
    if (!stack.empty()) throw FormatError("sentence " + s.sentence_id + ": mentions left open");
    base += static_cast<int>(s.tokens.size());
  }
  io::canonicalize(out);
  return out;
}

// ---------------------------------------------------------------------------
// selftest

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::vector<CheckResult> run_selftest(std::uint64_t seed, int scale) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  {
    int bad = 0;
    double worst = 0;
    for (int k = 0; k < 100 * scale; ++k) {
      int T = std::uniform_int_distribution<int>(1, 5)(rng), V = std::uniform_int_distribution<int>(1, 6)(rng);
      auto p = oracle::random_crf(V, rng);
      auto e = oracle::random_emissions(T, V, rng, 0.3);
      double brute = oracle::brute_log_partition(e, p);
      if (brute == crf::kNegInf) continue;
      worst = std::max(worst, std::abs(brute - crf::log_partition(e, p)));
      if (crf::viterbi_decode(e, p) != oracle::brute_viterbi(e, p)) ++bad;
    }
    out.push_back({"crf log-partition and Viterbi vs. enumeration", bad == 0 && worst <= 1e-9,
                   "max |dlogZ| " + std::to_string(worst) + ", Viterbi mismatches " + std::to_string(bad)});
  }
  {
    int bad = 0;
    for (int k = 0; k < 1000 * scale; ++k) {
      int n = std::uniform_int_distribution<int>(1, 30)(rng);
      auto spans = oracle::random_spans(n, 4, rng);
      if (codec::decode_tags(codec::encode_mentions(n, spans)).spans != spans) ++bad;
    }
    out.push_back({"tag codec round trip", bad == 0, std::to_string(bad) + " failures"});
  }
  {
    int bad = 0;
    for (int k = 0; k < 100 * scale; ++k) {
      int m = std::uniform_int_distribution<int>(1, 20)(rng);
      if (!oracle::cluster_invariant(oracle::random_entities(m, rng), 20, rng)) ++bad;
    }
    out.push_back({"antecedent choice cluster invariance", bad == 0, std::to_string(bad) + " failures"});
  }
  {
    double worst = 0;
    for (int k = 0; k < 10 * scale; ++k) {
      int T = std::uniform_int_distribution<int>(1, 5)(rng), V = std::uniform_int_distribution<int>(2, 6)(rng);
      auto p = crf::CrfParams::unconstrained(V);
      std::normal_distribution<double> normal;
      for (long i = 0; i < p.transitions.size(); ++i) p.transitions.data()[i] = normal(rng);
      oracle::Matrix e = oracle::random_emissions(T, V, rng);
      std::vector<int> gold;
      for (int t = 0; t < T; ++t) gold.push_back(std::uniform_int_distribution<int>(0, V - 1)(rng));
      auto g = crf::crf_nll_with_gradient(e, gold, p);
      auto ne = oracle::numeric_gradient([&] { return crf::crf_nll(e, gold, p); }, e);
      auto nt = oracle::numeric_gradient([&] { return crf::crf_nll(e, gold, p); }, p.transitions);
      worst = std::max({worst, oracle::max_relative_error(g.d_emissions, ne), oracle::max_relative_error(g.d_transitions, nt)});
    }
    out.push_back({"crf NLL gradient vs. finite differences", worst <= 1e-4, "max rel. error " + std::to_string(worst)});
  }
  return out;
}

// ---------------------------------------------------------------------------

inline std::vector<model::Dataset> load_datasets(const std::vector<std::string>& specs) {
  std::vector<model::Dataset> out;
  for (const auto& s : specs) {
    auto [id, path] = split_source(s);
    out.push_back({id, io::read_corpus_file(path, id)});
  }
  return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"corpipe: joint mention detection and coreference linking for CorefUD data", "corpipe"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string marker(io::kDefaultEmptyMarker);
  int jobs = 1;

  // convert
  auto* convert = app.add_subcommand("convert", "Normalize a CorefUD file; optionally surface or restore empty nodes");
  std::string conv_in, conv_out = "-";
  bool surface = false, restore = false;
  convert->add_option("-i,--input", conv_in, "Input CoNLL-U file ('-' for stdin)")->required();
  convert->add_option("-o,--output", conv_out, "Output file ('-' for stdout)");
  auto* surface_opt = convert->add_flag("--surface-empty", surface, "Turn empty nodes into marked ordinary tokens");
  convert->add_flag("--restore-empty", restore, "Turn marked tokens back into empty nodes")->excludes(surface_opt);
  convert->add_option("--marker", marker, "Empty-node marker (default U+2205 EMPTY SET)");
  convert->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // tags
  auto* tags = app.add_subcommand("tags", "Stack-instruction tags");
  tags->require_subcommand(1);
  std::string tags_in, tags_out = "-";
  auto* tags_encode = tags->add_subcommand("encode", "Replace Entity annotation by Tag/Push attributes");
  auto* tags_decode = tags->add_subcommand("decode", "Rebuild Entity annotation from Tag/Push attributes");
  auto* tags_vocab = tags->add_subcommand("vocab", "Print the tag vocabulary of a corpus");
  for (auto* sub : {tags_encode, tags_decode, tags_vocab}) {
    sub->add_option("-i,--input", tags_in, "Input file ('-' for stdin)")->required();
    sub->add_option("-o,--output", tags_out, "Output file ('-' for stdout)");
  }

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::vector<std::string> train_files, dev_files;
  std::string preset_name = "default", config_file, train_dir;
  Overrides ov;
  train->add_option("--train", train_files, "Training corpus, [ID=]PATH (repeatable)")->required();
  train->add_option("--dev", dev_files, "Development corpus, [ID=]PATH (repeatable); defaults to the training data");
  train->add_option("--preset", preset_name, "toy-overfit | base | large");
  train->add_option("--config", config_file, "JSON config with \"model\" and \"train\" sections");
  train->add_option("-o,--output", train_dir, "Output directory")->required();
  ov.option<int>(train, "--dim", "model", "dim", "Encoder dimension D");
  ov.option<int>(train, "--layers", "model", "layers", "Encoder layers");
  ov.option<int>(train, "--heads", "model", "heads", "Attention heads");
  ov.option<int>(train, "--window", "model", "window_size", "Window size in encoder positions");
  ov.option<int>(train, "--right-context", "model", "right_context", "Right context budget (0, 50, 100, ...)");
  ov.flag(train, "--corpus-id,!--no-corpus-id", "model", "use_corpus_id", "Prepend a corpus id token");
  ov.flag(train, "--scale-scores,!--no-scale-scores", "model", "scale_antecedent_scores", "Divide antecedent scores by sqrt(D)");
  ov.flag(train, "--learn-transitions,!--mask-only-transitions", "model", "learn_transitions", "Learn CRF transition scores");
  ov.option<std::string>(train, "--marker", "model", "empty_marker", "Empty-node marker");
  ov.option<std::uint64_t>(train, "--init-seed", "model", "init_seed", "Parameter initialization seed");
  ov.option<int>(train, "--batch-size", "train", "batch_size", "Windows per batch");
  ov.option<double>(train, "--lr", "train", "peak_lr", "Peak learning rate");
  ov.option<double>(train, "--warmup", "train", "warmup", "Warmup fraction");
  ov.option<double>(train, "--beta2", "train", "beta2", "Adam beta2 (0.999 or 0.99)");
  ov.flag(train, "--lazy-adam", "train", "lazy_adam", "Update embedding rows only when they receive gradient");
  ov.option<int>(train, "--epochs", "train", "epochs", "Epochs");
  ov.option<int>(train, "--batches-per-epoch", "train", "batches_per_epoch", "Batches per epoch");
  ov.option<double>(train, "--detection-weight", "train", "detection_weight", "Detection loss weight");
  ov.option<double>(train, "--linking-weight", "train", "linking_weight", "Linking loss weight");
  ov.option<int>(train, "--at-most-k-links", "train", "at_most_k_links", "Train on at most k most recent antecedents (0 = all)");
  ov.option<std::string>(train, "--link-loss", "train", "link_loss", "uniform_target | marginal_likelihood");
  ov.option<std::string>(train, "--mixing", "train", "mixing", "logarithmic | uniform | linear | half_focus");
  ov.option<std::string>(train, "--focus", "train", "focus_dataset", "Target dataset of half_focus");
  ov.option<std::vector<std::string>>(train, "--exclude", "train", "exclude", "Corpus id left out of training");
  ov.option<std::uint64_t>(train, "--seed", "train", "seed", "Sampling seed");
  ov.option<double>(train, "--stop-at", "train", "stop_at_dev_score", "Stop once dev CoNLL reaches this value (0 = never)");
  ov.flag(train, "--eval-singletons,!--eval-no-singletons", "train", "eval_with_singletons", "Dev scoring includes singletons");
  ov.flag(train, "--head-reduction,!--full-mentions", "train", "head_reduction", "Reduce predicted mentions to heads for dev scoring");

  // predict
  auto* predict = app.add_subcommand("predict", "Annotate documents with a trained model");
  std::string pred_model, pred_in, pred_out = "-", pred_corpus;
  bool full_mentions = false;
  predict->add_option("-m,--model", pred_model, "Checkpoint file")->required();
  predict->add_option("-i,--input", pred_in, "Input CoNLL-U ('-' for stdin)")->required();
  predict->add_option("-o,--output", pred_out, "Output CoNLL-U ('-' for stdout)");
  predict->add_option("--corpus-id", pred_corpus, "Corpus id of the input (default: file stem)");
  predict->add_flag("--full-mentions", full_mentions, "Keep full predicted spans instead of their heads");
  predict->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // score
  auto* score = app.add_subcommand("score", "Score responses against keys");
  std::vector<std::string> keys, responses;
  bool with_singletons = false, as_json = false;
  score->add_option("-k,--key", keys, "Key file (repeatable)")->required();
  score->add_option("-r,--response", responses, "Response file, paired with --key (repeatable)")->required();
  score->add_flag("--with-singletons", with_singletons, "Keep singleton entities");
  score->add_flag("--json", as_json, "Print JSON instead of a table");
  score->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // mix
  auto* mix = app.add_subcommand("mix", "Dataset sampling ratios and draws");
  std::string mix_config, strategy_name, focus;
  std::vector<std::string> mix_sets, mix_files, mix_exclude;
  bool mix_corpus_id = false;
  std::uint64_t mix_seed = 0;
  long draws = 0;
  auto* mix_config_opt = mix->add_option("--config", mix_config, "JSON mix settings");
  auto* strategy_opt = mix->add_option("--strategy", strategy_name, "logarithmic | uniform | linear | half_focus");
  auto* focus_opt = mix->add_option("--focus", focus, "Target dataset of half_focus");
  auto* sets_opt = mix->add_option("--dataset", mix_sets, "ID=SENTENCES (repeatable)");
  auto* files_opt = mix->add_option("--dataset-file", mix_files, "[ID=]PATH; size = number of sentences (repeatable)");
  auto* exclude_opt = mix->add_option("--exclude", mix_exclude, "Corpus id to leave out (repeatable)");
  auto* cid_opt = mix->add_flag("--corpus-id", mix_corpus_id, "Tag draws with their corpus id");
  auto* seed_opt = mix->add_option("--seed", mix_seed, "Seed");
  mix->add_option("--draws", draws, "Print this many draws")->check(CLI::NonNegativeNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic CorefUD corpus");
  synth::SynthSpec spec;
  std::string synth_out = "-";
  synth->add_option("--documents", spec.documents, "Number of documents");
  synth->add_option("--sentences", spec.sentences_per_doc, "Sentences per document");
  synth->add_option("--min-length", spec.min_sentence_length, "Minimum words per sentence");
  synth->add_option("--max-length", spec.max_sentence_length, "Maximum words per sentence");
  synth->add_option("--vocab", spec.vocabulary_size, "Vocabulary size");
  synth->add_option("--max-depth", spec.max_depth, "Maximum mention nesting depth");
  synth->add_option("--crossing", spec.crossing_probability, "Crossing probability");
  synth->add_option("--empty", spec.empty_node_probability, "Empty-node probability");
  synth->add_option("--min-entities", spec.min_entities, "Minimum entities per document");
  synth->add_option("--max-entities", spec.max_entities, "Maximum entities per document");
  synth->add_option("--max-mention-length", spec.max_mention_length, "Maximum tokens per mention");
  synth->add_option("--mention-attempts", spec.mention_attempts_per_sentence, "Mention draws per sentence");
  synth->add_option("--corpus-id", spec.corpus_id, "Corpus id and document-name prefix");
  synth->add_option("--seed", spec.seed, "Seed");
  synth->add_option("-o,--output", synth_out, "Output file ('-' for stdout)");

  // selftest
  auto* selftest = app.add_subcommand("selftest", "Run the brute-force oracle checks");
  std::uint64_t self_seed = 1;
  int self_scale = 1;
  selftest->add_option("--seed", self_seed);
  selftest->add_option("--scale", self_scale, "Instance count multiplier")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (convert->parsed()) {
      auto docs = io::parse_corpus(read_input(conv_in), stem_of(conv_in));
      std::vector<std::string> parts(docs.size());
      parallel_for(docs.size(), jobs, [&](std::size_t i) {
        Document d = surface ? io::surface_empty_nodes(docs[i], marker)
                             : restore ? io::restore_empty_nodes(docs[i], marker) : docs[i];
        parts[i] = io::serialize_document(d);
      });
      std::string text;
      for (auto& p : parts) text += p;
      write_output(conv_out, text, out);
      return 0;
    }

    if (tags->parsed()) {
      auto docs = io::parse_corpus(read_input(tags_in), stem_of(tags_in));
      if (tags_vocab->parsed()) {
        std::vector<std::vector<codec::Tag>> corpus;
        std::map<std::string, long> counts;
        for (const auto& d : docs)
          for (auto& seq : model::gold_tags(d)) {
            for (const auto& t : seq) ++counts[t.str()];
            corpus.push_back(std::move(seq));
          }
        auto vocab = codec::TagVocabulary::build(corpus);
        std::ostringstream ss;
        for (int i = 0; i < vocab.size(); ++i) ss << i << '\t' << vocab.tag(i).str() << '\t' << counts[vocab.tag(i).str()] << '\n';
        write_output(tags_out, ss.str(), out);
        return 0;
      }
      std::vector<Document> result;
      int warnings = 0;
      for (const auto& d : docs)
        result.push_back(tags_encode->parsed() ? encode_tags_document(d, warnings) : decode_tags_document(d));
      if (warnings) err << "warning: " << warnings << " duplicate or cross-sentence mentions were not encoded\n";
      write_output(tags_out, io::serialize_corpus(result), out);
      return 0;
    }

    if (train->parsed()) {
      json config = {{"model", model::to_json(model::ModelConfig{})}, {"train", model::to_json(model::TrainConfig{})}};
      config.merge_patch(preset(preset_name));
      if (!config_file.empty()) config.merge_patch(read_json_file(config_file));
      ov.apply(config);
      auto mcfg = model::model_config_from_json(config["model"]);
      auto tcfg = model::train_config_from_json(config["train"]);
      mcfg.validate();
      tcfg.validate();

      auto train_sets = load_datasets(train_files);
      auto dev_sets = dev_files.empty() ? train_sets : load_datasets(dev_files);
      if (dev_files.empty()) err << "note: no --dev given; evaluating on the training data\n";
      auto vocab = model::build_vocabularies(train_sets, mcfg, tcfg.exclude);
      auto m = model::CorefModel::create(mcfg, vocab.tokens, vocab.tags);
      err << "parameters: " << m.params.element_count() << ", tags: " << m.tags.size()
          << ", token vocabulary: " << m.tokens.size() << "\n";
      auto result = model::train(std::move(m), train_sets, dev_sets, tcfg, [&](const std::string& s) { err << s << "\n"; });

      fs::create_directories(train_dir);
      json resolved = {{"model", model::to_json(result.final_model.config)}, {"train", model::to_json(tcfg)}};
      model::save_checkpoint((fs::path(train_dir) / "final.ckpt").string(), result.final_model, resolved["train"]);
      model::save_checkpoint((fs::path(train_dir) / "best.ckpt").string(), result.best_model, resolved["train"]);
      json history = json::array();
      for (const auto& h : result.history)
        history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"dev_conll", h.dev_conll}, {"seconds", h.seconds}});
      json inputs = {{"train", train_files}, {"dev", dev_files}};
      write_manifest((fs::path(train_dir) / "manifest.json").string(),
                     {{"command", "train"},
                      {"preset", preset_name},
                      {"config_file", config_file},
                      {"config", resolved},
                      {"inputs", inputs},
                      {"history", history},
                      {"best_epoch", result.best_epoch},
                      {"steps", result.steps},
                      {"parameters", result.final_model.params.element_count()},
                      {"outputs", {"final.ckpt", "best.ckpt"}}});
      out << "best epoch " << result.best_epoch << ", dev CoNLL "
          << (result.history.empty() ? 0.0 : result.history[result.best_epoch - 1].dev_conll) << "\n";
      return 0;
    }

    if (predict->parsed()) {
      auto ckpt = model::load_checkpoint(pred_model);
      std::string corpus = pred_corpus.empty() ? stem_of(pred_in) : pred_corpus;
      auto docs = io::parse_corpus(read_input(pred_in), corpus);
      std::vector<std::string> parts(docs.size());
      model::PredictConfig pc{!full_mentions};
      parallel_for(docs.size(), jobs, [&](std::size_t i) {
        parts[i] = io::serialize_document(model::predict(ckpt.model, docs[i], pc));
      });
      std::string text;
      for (auto& p : parts) text += p;
      write_output(pred_out, text, out);
      if (pred_out != "-")
        write_manifest(pred_out + ".manifest.json", {{"command", "predict"},
                                                     {"model", pred_model},
                                                     {"input", pred_in},
                                                     {"corpus_id", corpus},
                                                     {"head_reduction", !full_mentions},
                                                     {"documents", docs.size()}});
      return 0;
    }

    if (score->parsed()) {
      if (keys.size() != responses.size()) throw ConfigError("--key and --response must be given the same number of times");
      std::vector<scorer::ScoreReport> reports;
      json all = json::array();
      for (std::size_t k = 0; k < keys.size(); ++k) {
        auto key_docs = io::parse_corpus(read_input(keys[k]), stem_of(keys[k]));
        auto resp_docs = io::parse_corpus(read_input(responses[k]), stem_of(keys[k]));
        if (key_docs.size() != resp_docs.size())
          throw FormatError(keys[k] + " has " + std::to_string(key_docs.size()) + " documents, " + responses[k] +
                            " has " + std::to_string(resp_docs.size()));
        std::vector<scorer::DocumentCounts> counts(key_docs.size());
        parallel_for(key_docs.size(), jobs, [&](std::size_t i) {
          if (key_docs[i].token_count() != resp_docs[i].token_count())
            throw FormatError("document " + key_docs[i].doc_id + ": key and response tokens differ");
          counts[i] = scorer::count_document(key_docs[i].entities, resp_docs[i].entities, with_singletons);
        });
        scorer::DocumentCounts total;
        for (const auto& c : counts) total += c;
        auto report = scorer::make_report(total, with_singletons);
        reports.push_back(report);
        if (as_json) {
          auto j = scorer::to_json(report);
          j["key"] = keys[k];
          j["response"] = responses[k];
          all.push_back(j);
        } else {
          out << keys[k] << "\n" << scorer::format_table(report);
        }
      }
      if (as_json) {
        json j = {{"datasets", all}};
        if (reports.size() > 1) j["macro_conll"] = scorer::macro_average(reports);
        out << j.dump(2) << "\n";
      } else if (reports.size() > 1) {
        out << "macro-average CoNLL " << scorer::macro_average(reports) << "\n";
      }
      return 0;
    }

    if (mix->parsed()) {
      sampling::MixSpec ms;
      if (mix_config_opt->count()) {
        auto j = read_json_file(mix_config);
        for (const auto& d : j.value("datasets", json::array())) ms.datasets.push_back({d.at("corpus_id"), d.at("size")});
        ms.strategy = sampling::strategy_from_string(j.value("strategy", std::string("logarithmic")));
        ms.focus = j.value("focus", std::string());
        ms.exclude = j.value("exclude", std::set<std::string>{});
        ms.use_corpus_id = j.value("use_corpus_id", false);
        ms.seed = j.value("seed", std::uint64_t{0});
      }
      if (sets_opt->count() || files_opt->count()) ms.datasets.clear();
      for (const auto& s : mix_sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--dataset expects ID=SENTENCES, got '" + s + "'");
        ms.datasets.push_back({s.substr(0, eq), std::stol(s.substr(eq + 1))});
      }
      for (const auto& s : mix_files) {
        auto [id, path] = split_source(s);
        long n = 0;
        for (const auto& d : io::read_corpus_file(path, id)) n += static_cast<long>(d.sentences.size());
        ms.datasets.push_back({id, n});
      }
      if (strategy_opt->count()) ms.strategy = sampling::strategy_from_string(strategy_name);
      if (focus_opt->count()) ms.focus = focus;
      if (exclude_opt->count()) ms.exclude = std::set<std::string>(mix_exclude.begin(), mix_exclude.end());
      if (cid_opt->count()) ms.use_corpus_id = mix_corpus_id;
      if (seed_opt->count()) ms.seed = mix_seed;
      auto ratios = sampling::compute_ratios(ms);
      out << "strategy " << sampling::to_string(ms.strategy) << "\n";
      for (std::size_t i = 0; i < ratios.corpus_ids.size(); ++i)
        out << ratios.corpus_ids[i] << "\tsize " << ms.datasets[ratios.dataset_index[i]].size << "\tweight "
            << ratios.weights[i] << "\tp " << ratios.probabilities[i] << "\n";
      if (draws > 0) {
        std::vector<std::size_t> pools;
        for (const auto& d : ms.datasets) pools.push_back(static_cast<std::size_t>(d.size));
        sampling::MixedStream stream(ms, pools);
        for (long i = 0; i < draws; ++i) {
          auto d = stream.next();
          out << ms.datasets[d.dataset].corpus_id << '\t' << d.example
              << (d.corpus_id.empty() ? "" : "\t<corpus:" + d.corpus_id + ">") << "\n";
        }
      }
      return 0;
    }

    if (synth->parsed()) {
      write_output(synth_out, io::serialize_corpus(synth::generate(spec)), out);
      if (synth_out != "-")
        write_manifest(synth_out + ".manifest.json",
                       {{"command", "synth"},
                        {"spec",
                         {{"documents", spec.documents},
                          {"sentences_per_doc", spec.sentences_per_doc},
                          {"min_sentence_length", spec.min_sentence_length},
                          {"max_sentence_length", spec.max_sentence_length},
                          {"vocabulary_size", spec.vocabulary_size},
                          {"max_depth", spec.max_depth},
                          {"crossing_probability", spec.crossing_probability},
                          {"empty_node_probability", spec.empty_node_probability},
                          {"min_entities", spec.min_entities},
                          {"max_entities", spec.max_entities},
                          {"max_mention_length", spec.max_mention_length},
                          {"mention_attempts_per_sentence", spec.mention_attempts_per_sentence},
                          {"corpus_id", spec.corpus_id},
                          {"seed", spec.seed}}}});
      return 0;
    }

    if (selftest->parsed()) {
      bool ok = true;
      for (const auto& r : run_selftest(self_seed, self_scale)) {
        out << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  (" << r.detail << ")\n";
        ok &= r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace corpipe::cli
