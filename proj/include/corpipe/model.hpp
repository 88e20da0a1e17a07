#pragma once

// The joint network. One encoder feeds two heads:
//  - mention detection: D -> 4D (ReLU) -> V tag logits -> linear-chain CRF
//  - linking: antecedent scores between [first; last] token representations
//
// The encoder is pluggable; CompactEncoder is a small post-LN transformer
// trained from scratch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <tuple>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpipe/autograd.hpp"
#include "corpipe/corefud_io.hpp"
#include "corpipe/crf.hpp"
#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/linker.hpp"
#include "corpipe/mention_codec.hpp"
#include "corpipe/sampling.hpp"
#include "corpipe/scorer.hpp"
#include "corpipe/windowing.hpp"

namespace corpipe::model {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using json = nlohmann::json;
using Logger = std::function<void(const std::string&)>;

struct ModelConfig {
  std::string encoder = "compact";
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_multiplier = 4;
  bool scale_antecedent_scores = false;
  bool learn_transitions = true;
  bool use_corpus_id = false;
  std::string empty_marker = std::string(io::kDefaultEmptyMarker);
  windowing::WindowConfig window;
  std::uint64_t init_seed = 42;

  void validate() const {
    if (dim < 1 || layers < 0 || heads < 1 || dim % heads != 0 || ffn_multiplier < 1)
      throw ConfigError("model dimension must be positive and divisible by the number of heads");
    if (window.window_size < 2 || window.right_context < 0) throw ConfigError("invalid window configuration");
    if (empty_marker.empty()) throw ConfigError("empty-node marker must not be empty");
  }

  windowing::WindowConfig window_config() const {
    auto w = window;
    w.reserved_prefix = use_corpus_id ? 1 : 0;
    return w;
  }
};

struct TrainConfig {
  int batch_size = 8;
  double peak_lr = 2e-5;
  double warmup = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool lazy_adam = false;
  int epochs = 10;
  int batches_per_epoch = 100;
  double detection_weight = 1.0;
  double linking_weight = 1.0;
  int at_most_k_links = 0;  // 0 = every earlier mention of the entity
  linker::LinkLoss link_loss = linker::LinkLoss::kUniformTarget;
  sampling::Strategy mixing = sampling::Strategy::kLogarithmic;
  std::string focus_dataset;
  std::set<std::string> exclude;
  std::uint64_t seed = 0;
  double stop_at_dev_score = 0;  // > 0: stop after the first epoch reaching it
  bool eval_with_singletons = false;
  bool head_reduction = true;

  void validate() const {
    if (batch_size < 1 || epochs < 1 || batches_per_epoch < 1) throw ConfigError("batch size and epochs must be positive");
    if (!(warmup > 0 && warmup < 1)) throw ConfigError("warmup fraction must lie in (0, 1)");
    if (!(peak_lr > 0)) throw ConfigError("peak learning rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
    if (detection_weight < 0 || linking_weight < 0) throw ConfigError("loss weights must be non-negative");
    if (at_most_k_links < 0) throw ConfigError("at_most_k_links must be non-negative");
  }
};

struct PredictConfig {
  bool head_reduction = true;
};

inline const std::string& model_form(const Token& t) { return t.surfaced_form.empty() ? t.form : t.surfaced_form; }

class TokenVocabulary {
 public:
  static constexpr int kPad = 0, kUnk = 1, kEmpty = 2;

  TokenVocabulary() { items_ = {"<pad>", "<unk>", "<empty>"}; reindex(); }

  static TokenVocabulary from_strings(const std::vector<std::string>& items) {
    if (items.size() < 3 || items[0] != "<pad>" || items[1] != "<unk>" || items[2] != "<empty>")
      throw FormatError("token vocabulary lacks the reserved entries");
    TokenVocabulary v;
    v.items_ = items;
    v.reindex();
    return v;
  }

  // `docs` must already have their empty nodes surfaced.
  static TokenVocabulary build(const std::vector<const Document*>& docs, const std::vector<std::string>& corpus_ids) {
    std::set<std::string> forms;
    for (const auto* d : docs)
      for (const auto& s : d->sentences)
        for (const auto& t : s.tokens) forms.insert(model_form(t));
    TokenVocabulary v;
    for (const auto& id : std::set<std::string>(corpus_ids.begin(), corpus_ids.end()))
      v.items_.push_back(corpus_token(id));
    v.items_.insert(v.items_.end(), forms.begin(), forms.end());
    v.reindex();
    return v;
  }

  static std::string corpus_token(const std::string& corpus_id) { return "<corpus:" + corpus_id + ">"; }

  int lookup(const std::string& form, const std::string& marker) const {
    auto it = index_.find(form);
    if (it != index_.end()) return it->second;
    return form.compare(0, marker.size(), marker) == 0 ? kEmpty : kUnk;
  }
  int corpus(const std::string& corpus_id) const {
    auto it = index_.find(corpus_token(corpus_id));
    return it == index_.end() ? kUnk : it->second;
  }
  int size() const { return static_cast<int>(items_.size()); }
  const std::vector<std::string>& strings() const { return items_; }

 private:
  void reindex() {
    index_.clear();
    for (int i = 0; i < static_cast<int>(items_.size()); ++i)
      if (!index_.emplace(items_[i], i).second) throw FormatError("duplicate vocabulary entry '" + items_[i] + "'");
  }
  std::vector<std::string> items_;
  std::map<std::string, int> index_;
};

// Encoder input for one window: token ids with `prefix` marker positions
// first, then one id per word-level token.
struct WindowInput {
  std::vector<int> ids;
  int prefix = 0;
  int focus_begin = 0, focus_end = 0;  // word-level, relative to the window

  int tokens() const { return static_cast<int>(ids.size()) - prefix; }
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string type() const = 0;
  virtual int dim() const = 0;
  // tokens() x dim() representations, one per word-level token.
  virtual Var encode(Tape& t, const WindowInput& input) const = 0;
};

inline Matrix sinusoidal_positions(int length, int dim) {
  Matrix pe(length, dim);
  for (int p = 0; p < length; ++p)
    for (int i = 0; i < dim; ++i) {
      double angle = p / std::pow(10000.0, 2.0 * (i / 2) / dim);
      pe(p, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

class CompactEncoder : public Encoder {
 public:
  CompactEncoder(ad::ParameterSet& params, const ModelConfig& cfg, int vocab_size, std::mt19937_64& rng)
      : dim_(cfg.dim), heads_(cfg.heads) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix emb(vocab_size, dim_);
    for (long i = 0; i < emb.size(); ++i) emb.data()[i] = normal(rng);
    emb.row(TokenVocabulary::kPad).setZero();
    embedding_ = params.add("encoder.embedding", emb, true);
    const int hidden = cfg.ffn_multiplier * dim_;
    for (int l = 0; l < cfg.layers; ++l) {
      std::string p = "encoder.layer" + std::to_string(l) + ".";
      Layer L;
      for (auto [w, b, name] : {std::tuple{&L.wq, &L.bq, "q"}, {&L.wk, &L.bk, "k"}, {&L.wv, &L.bv, "v"},
                                {&L.wo, &L.bo, "o"}}) {
        *w = params.add(p + "attn." + name + ".w", linker::glorot(dim_, dim_, rng));
        *b = params.add(p + "attn." + name + ".b", Matrix::Zero(1, dim_));
      }
      L.ln1_gain = params.add(p + "ln1.gain", Matrix::Ones(1, dim_));
      L.ln1_bias = params.add(p + "ln1.bias", Matrix::Zero(1, dim_));
      L.w1 = params.add(p + "ffn.w1", linker::glorot(dim_, hidden, rng));
      L.b1 = params.add(p + "ffn.b1", Matrix::Zero(1, hidden));
      L.w2 = params.add(p + "ffn.w2", linker::glorot(hidden, dim_, rng));
      L.b2 = params.add(p + "ffn.b2", Matrix::Zero(1, dim_));
      L.ln2_gain = params.add(p + "ln2.gain", Matrix::Ones(1, dim_));
      L.ln2_bias = params.add(p + "ln2.bias", Matrix::Zero(1, dim_));
      layers_.push_back(L);
    }
  }

  std::string type() const override { return "compact"; }
  int dim() const override { return dim_; }

  Var encode(Tape& t, const WindowInput& in) const override {
    const int n = static_cast<int>(in.ids.size());
    Var x = ad::gather_rows(t, t.param(embedding_), in.ids);
    x = ad::add(t, x, t.constant(sinusoidal_positions(n, dim_)));
    const int dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& L : layers_) {
      Var q = ad::add_row(t, ad::matmul(t, x, t.param(L.wq)), t.param(L.bq));
      Var k = ad::add_row(t, ad::matmul(t, x, t.param(L.wk)), t.param(L.bk));
      Var v = ad::add_row(t, ad::matmul(t, x, t.param(L.wv)), t.param(L.bv));
      std::vector<Var> outs;
      for (int h = 0; h < heads_; ++h) {
        Var qh = ad::slice_cols(t, q, h * dh, dh);
        Var kh = ad::slice_cols(t, k, h * dh, dh);
        Var vh = ad::slice_cols(t, v, h * dh, dh);
        Var att = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, qh, kh), scale));
        outs.push_back(ad::matmul(t, att, vh));
      }
      Var o = ad::add_row(t, ad::matmul(t, ad::concat_cols(t, outs), t.param(L.wo)), t.param(L.bo));
      x = ad::layer_norm(t, ad::add(t, x, o), t.param(L.ln1_gain), t.param(L.ln1_bias));
      Var f = ad::relu(t, ad::add_row(t, ad::matmul(t, x, t.param(L.w1)), t.param(L.b1)));
      f = ad::add_row(t, ad::matmul(t, f, t.param(L.w2)), t.param(L.b2));
      x = ad::layer_norm(t, ad::add(t, x, f), t.param(L.ln2_gain), t.param(L.ln2_bias));
    }
    return ad::slice_rows(t, x, in.prefix, n - in.prefix);
  }

 private:
  struct Layer {
    int wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias;
  };
  int dim_, heads_;
  int embedding_ = -1;
  std::vector<Layer> layers_;
};

inline std::shared_ptr<const Encoder> make_encoder(ad::ParameterSet& params, const ModelConfig& cfg, int vocab_size,
                                                   std::mt19937_64& rng) {
  if (cfg.encoder == "compact") return std::make_shared<CompactEncoder>(params, cfg, vocab_size, rng);
  throw ConfigError("unknown encoder '" + cfg.encoder + "'");
}

struct DetectionHead {
  int hidden_weight = -1, hidden_bias = -1;  // D x 4D, 1 x 4D
  int output_weight = -1, output_bias = -1;  // 4D x V, 1 x V
  int transitions = -1;                      // V x V
};

struct CorefModel {
  ModelConfig config;
  TokenVocabulary tokens;
  codec::TagVocabulary tags;
  ad::ParameterSet params;
  std::shared_ptr<const Encoder> encoder;
  DetectionHead detection;
  linker::LinkerParams linking;
  crf::CrfParams crf_masks;

  static CorefModel create(ModelConfig cfg, TokenVocabulary tokens, codec::TagVocabulary tags) {
    cfg.validate();
    CorefModel m;
    m.config = std::move(cfg);
    m.tokens = std::move(tokens);
    m.tags = std::move(tags);
    std::mt19937_64 rng(m.config.init_seed);
    m.encoder = make_encoder(m.params, m.config, m.tokens.size(), rng);
    const int d = m.encoder->dim(), v = m.tags.size();
    m.detection.hidden_weight = m.params.add("detection.hidden.w", linker::glorot(d, 4 * d, rng));
    m.detection.hidden_bias = m.params.add("detection.hidden.b", Matrix::Zero(1, 4 * d));
    m.detection.output_weight = m.params.add("detection.out.w", linker::glorot(4 * d, v, rng));
    m.detection.output_bias = m.params.add("detection.out.b", Matrix::Zero(1, v));
    m.detection.transitions = m.params.add("detection.crf.transitions", Matrix::Zero(v, v));
    m.linking = linker::add_linker_params(m.params, d, rng);
    m.crf_masks = crf::CrfParams::from_vocabulary(m.tags);
    return m;
  }

  crf::CrfParams crf_params() const {
    auto p = crf_masks;
    p.transitions = params[detection.transitions].value;
    return p;
  }
};

// ---------------------------------------------------------------------------
// Gold annotations and training examples

// A mention in document coordinates with its entity; discontinuous
// mentions are limited to their largest continuous part holding the head.
struct GoldMention {
  int start = 0, end = 0;
  int entity = 0;
};

struct GoldSummary {
  std::vector<GoldMention> mentions;  // sorted by (start, end), no duplicate spans
  int duplicates = 0;
  int cross_sentence = 0;
};

inline GoldSummary gold_mentions(const Document& doc) {
  GoldSummary out;
  const auto starts = sentence_starts(doc);
  std::set<std::pair<int, int>> seen;
  std::vector<GoldMention> all;
  for (int e = 0; e < static_cast<int>(doc.entities.size()); ++e)
    for (const auto& m : doc.entities[e].mentions) {
      if (m.token_positions.empty()) continue;
      auto r = m.is_continuous() ? m : codec::reduce_discontinuous(m);
      all.push_back({r.first(), r.last(), e});
    }
  std::stable_sort(all.begin(), all.end(), [](const GoldMention& a, const GoldMention& b) {
    return std::pair(a.start, a.end) < std::pair(b.start, b.end);
  });
  for (const auto& g : all) {
    if (sentence_of(starts, g.start) != sentence_of(starts, g.end)) {
      ++out.cross_sentence;
      continue;
    }
    if (!seen.insert({g.start, g.end}).second) {
      ++out.duplicates;
      continue;
    }
    out.mentions.push_back(g);
  }
  return out;
}

// Gold stack-instruction tags of every sentence.
inline std::vector<std::vector<codec::Tag>> gold_tags(const Document& doc) {
  const auto starts = sentence_starts(doc);
  const auto gold = gold_mentions(doc);
  std::vector<std::vector<codec::Span>> per_sentence(doc.sentences.size());
  for (const auto& g : gold.mentions) {
    int s = sentence_of(starts, g.start);
    per_sentence[s].push_back({g.start - starts[s], g.end - starts[s]});
  }
  std::vector<std::vector<codec::Tag>> out;
  for (std::size_t s = 0; s < doc.sentences.size(); ++s)
    out.push_back(codec::encode_mentions(starts[s + 1] - starts[s], per_sentence[s]));
  return out;
}

struct WindowExample {
  WindowInput input;
  std::vector<int> gold_tags;             // focus tokens
  std::vector<codec::Span> mentions;      // window-relative, sorted
  std::vector<int> entity;                // per mention
  int first_focus_mention = 0;            // linking loss covers mentions from here on
};

struct DocumentView {
  Document surfaced;
  std::vector<windowing::Window> windows;
  std::vector<int> ids;  // per document token
  int prefix_id = -1;
};

inline DocumentView view_document(const CorefModel& model, const Document& doc) {
  DocumentView v;
  v.surfaced = io::surface_empty_nodes(doc, model.config.empty_marker);
  v.windows = windowing::build_windows(v.surfaced, model.config.window_config());
  for (const auto& s : v.surfaced.sentences)
    for (const auto& t : s.tokens) v.ids.push_back(model.tokens.lookup(model_form(t), model.config.empty_marker));
  if (model.config.use_corpus_id) v.prefix_id = model.tokens.corpus(doc.corpus_id);
  return v;
}

inline WindowInput window_input(const DocumentView& v, const windowing::Window& w) {
  WindowInput in;
  if (v.prefix_id >= 0) in.ids.push_back(v.prefix_id);
  in.prefix = static_cast<int>(in.ids.size());
  in.ids.insert(in.ids.end(), v.ids.begin() + w.start, v.ids.begin() + w.end);
  in.focus_begin = w.focus_begin - w.start;
  in.focus_end = w.focus_end - w.start;
  return in;
}

inline std::vector<WindowExample> make_examples(const CorefModel& model, const Document& doc) {
  const auto view = view_document(model, doc);
  const auto gold = gold_mentions(doc);
  const auto tags = gold_tags(doc);
  std::vector<WindowExample> out;
  for (const auto& w : view.windows) {
    WindowExample ex;
    ex.input = window_input(view, w);
    for (const auto& tag : tags[w.sentence]) {
      auto idx = model.tags.index_of(tag);
      if (!idx) throw ModelError("tag '" + tag.str() + "' of document " + doc.doc_id + " is not in the tag vocabulary");
      ex.gold_tags.push_back(*idx);
    }
    for (const auto& g : gold.mentions) {
      if (g.start < w.start || g.end >= w.focus_end) continue;
      if (g.start < w.focus_begin) ++ex.first_focus_mention;
      ex.mentions.push_back({g.start - w.start, g.end - w.start});
      ex.entity.push_back(g.entity);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass and loss

inline Var crf_loss(Tape& t, Var emissions, Var transitions, const std::vector<int>& gold, const crf::CrfParams& masks) {
  auto p = masks;
  p.transitions = t.value(transitions);
  auto g = crf::crf_nll_with_gradient(t.value(emissions), gold, p);
  return t.record(Matrix::Constant(1, 1, g.nll), {emissions, transitions},
                  [emissions, transitions, d_e = std::move(g.d_emissions), d_t = std::move(g.d_transitions)](
                      Tape& t, const Tape::Node& n) {
                    ad::accumulate(t, emissions, d_e * n.grad(0, 0));
                    ad::accumulate(t, transitions, d_t * n.grad(0, 0));
                  });
}

inline Var tag_logits(Tape& t, const CorefModel& m, Var encoded, const WindowInput& in) {
  Var focus = ad::slice_rows(t, encoded, in.focus_begin, in.focus_end - in.focus_begin);
  Var h = ad::relu(t, ad::add_row(t, ad::matmul(t, focus, t.param(m.detection.hidden_weight)),
                                  t.param(m.detection.hidden_bias)));
  return ad::add_row(t, ad::matmul(t, h, t.param(m.detection.output_weight)), t.param(m.detection.output_bias));
}

inline Var mention_representations(Tape& t, Var encoded, const std::vector<codec::Span>& mentions) {
  std::vector<int> first, last;
  for (const auto& s : mentions) {
    first.push_back(s.start);
    last.push_back(s.end);
  }
  return ad::concat_cols(t, {ad::gather_rows(t, encoded, first), ad::gather_rows(t, encoded, last)});
}

struct LossParts {
  Var total;
  double detection = 0, linking = 0;
};

inline LossParts window_loss(Tape& t, const CorefModel& m, const WindowExample& ex, const TrainConfig& cfg) {
  Var enc = m.encoder->encode(t, ex.input);
  LossParts parts;
  Var total = t.constant(Matrix::Zero(1, 1));
  if (ex.input.focus_end > ex.input.focus_begin) {
    Var logits = tag_logits(t, m, enc, ex.input);
    Var nll = crf_loss(t, logits, t.param(m.detection.transitions, m.config.learn_transitions), ex.gold_tags,
                       m.crf_masks);
    parts.detection = t.scalar(nll);
    total = ad::add(t, total, ad::scale(t, nll, cfg.detection_weight));
  }
  if (static_cast<int>(ex.mentions.size()) > ex.first_focus_mention) {
    Var reprs = mention_representations(t, enc, ex.mentions);
    Var scores = linker::antecedent_scores(t, reprs, m.linking, m.config.scale_antecedent_scores);
    Var link = linker::antecedent_loss(t, scores, linker::make_targets(ex.entity, cfg.at_most_k_links), cfg.link_loss,
                                       ex.first_focus_mention);
    parts.linking = t.scalar(link);
    total = ad::add(t, total, ad::scale(t, link, cfg.linking_weight));
  }
  parts.total = total;
  return parts;
}

struct BatchLoss {
  Var total;
  double detection = 0, linking = 0;
};

// Mean over the batch of w_det * crf_nll + w_link * antecedent_loss.
inline BatchLoss batch_loss(Tape& t, const CorefModel& m, const std::vector<const WindowExample*>& batch,
                            const TrainConfig& cfg) {
  if (batch.empty()) throw ModelError("empty batch");
  BatchLoss out;
  Var sum = t.constant(Matrix::Zero(1, 1));
  for (const auto* ex : batch) {
    auto p = window_loss(t, m, *ex, cfg);
    sum = ad::add(t, sum, p.total);
    out.detection += p.detection / batch.size();
    out.linking += p.linking / batch.size();
  }
  out.total = ad::scale(t, sum, 1.0 / static_cast<double>(batch.size()));
  return out;
}

inline double loss(const CorefModel& m, const std::vector<const WindowExample*>& batch, const TrainConfig& cfg) {
  Tape t(const_cast<ad::ParameterSet*>(&m.params), false);
  return t.scalar(batch_loss(t, m, batch, cfg).total);
}

struct ForwardResult {
  Matrix tag_logits;                  // focus tokens x V
  std::vector<codec::Span> mentions;  // window-relative, sorted
  Matrix mention_reprs;               // M x 2D
  Matrix antecedent_logits;           // M x M, -inf above the diagonal
};

// With `detect`, mentions are decoded from the focus sentence's tags and
// merged with `mentions`; otherwise `mentions` are used as given.
inline ForwardResult forward(const CorefModel& m, const WindowInput& in, std::vector<codec::Span> mentions, bool detect) {
  Tape t(const_cast<ad::ParameterSet*>(&m.params), false);
  Var enc = m.encoder->encode(t, in);
  ForwardResult r;
  const int focus = in.focus_end - in.focus_begin;
  if (focus > 0) {
    r.tag_logits = t.value(tag_logits(t, m, enc, in));
    if (detect) {
      auto path = crf::viterbi_decode(r.tag_logits, m.crf_params());
      std::vector<codec::Tag> tags;
      for (int i : path) tags.push_back(m.tags.tag(i));
      for (const auto& s : codec::decode_tags(tags).spans)
        mentions.push_back({s.start + in.focus_begin, s.end + in.focus_begin});
    }
  } else {
    r.tag_logits = Matrix::Zero(0, m.tags.size());
  }
  std::sort(mentions.begin(), mentions.end());
  mentions.erase(std::unique(mentions.begin(), mentions.end()), mentions.end());
  for (const auto& s : mentions)
    if (s.start < 0 || s.end >= in.tokens() || s.start > s.end) throw ModelError("mention outside the window");
  r.mentions = std::move(mentions);
  if (!r.mentions.empty()) {
    Var reprs = mention_representations(t, enc, r.mentions);
    r.mention_reprs = t.value(reprs);
    r.antecedent_logits = linker::mask_future(
        t.value(linker::antecedent_scores(t, reprs, m.linking, m.config.scale_antecedent_scores)));
  } else {
    r.mention_reprs = Matrix::Zero(0, 2 * m.encoder->dim());
    r.antecedent_logits = Matrix::Zero(0, 0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Prediction

inline Document predict(const CorefModel& m, const Document& doc, const PredictConfig& cfg = {}) {
  Document out = doc;
  out.entities.clear();
  if (doc.token_count() == 0) return out;
  const auto view = view_document(m, doc);
  std::set<windowing::DocSpan> predicted;
  std::vector<windowing::WindowPrediction> windows;
  for (const auto& w : view.windows) {
    auto in = window_input(view, w);
    std::vector<codec::Span> context;
    for (const auto& s : predicted)
      if (s.start >= w.start && s.end < w.focus_begin) context.push_back({s.start - w.start, s.end - w.start});
    auto r = forward(m, in, context, true);
    auto links = linker::decode_links(r.antecedent_logits);
    windowing::WindowPrediction wp;
    for (std::size_t i = 0; i < r.mentions.size(); ++i) {
      windowing::DocSpan span{r.mentions[i].start + w.start, r.mentions[i].end + w.start};
      wp.mentions.push_back(span);
      bool in_focus = r.mentions[i].start >= in.focus_begin;
      wp.antecedent.push_back(in_focus ? links[i] : -1);
      if (in_focus) predicted.insert(span);
    }
    windows.push_back(std::move(wp));
  }
  auto stitched = windowing::stitch_predictions(windows);

  const auto parents = parent_positions(doc);
  std::set<std::vector<int>> emitted;
  for (const auto& cluster : stitched.clusters) {
    Entity e;
    for (const auto& s : cluster) {
      Mention mention;
      for (int p = s.start; p <= s.end; ++p) mention.token_positions.push_back(p);
      mention.head_position = scorer::head_of_span(mention.token_positions, parents);
      if (cfg.head_reduction) mention = codec::reduce_to_head(mention);
      if (!emitted.insert(mention.token_positions).second) continue;
      e.mentions.push_back(std::move(mention));
    }
    if (!e.mentions.empty()) out.entities.push_back(std::move(e));
  }
  io::canonicalize(out);
  for (std::size_t i = 0; i < out.entities.size(); ++i) out.entities[i].entity_id = "e" + std::to_string(i + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

// Slanted triangular: 0 -> peak over the first ceil(warmup * total) steps,
// then linearly back to 0 at `total`.
inline double lr_at(long step, long total, double peak, double warmup = 0.1) {
  if (total <= 0) return 0.0;
  step = std::clamp(step, 0L, total);
  long warm = std::max(1L, static_cast<long>(std::ceil(warmup * static_cast<double>(total))));
  warm = std::min(warm, total);
  if (step <= warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon = 1e-8, bool lazy = false)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), lazy_(lazy) {}

  void step(ad::ParameterSet& params, double lr) {
    if (m_.empty())
      for (const auto& p : params) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (int i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.grad.size() != p.value.size()) continue;
      if (lazy_ && p.sparse_rows) {
        for (long r = 0; r < p.value.rows(); ++r) {
          if (p.grad.row(r).isZero(0.0)) continue;
          update(m_[i].row(r), v_[i].row(r), p.value.row(r), p.grad.row(r), lr, c1, c2);
        }
      } else {
        update(m_[i], v_[i], p.value, p.grad, lr, c1, c2);
      }
    }
  }

  long steps() const { return t_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  template <class M, class V, class P, class G>
  void update(M&& m, V&& v, P&& value, const G& grad, double lr, double c1, double c2) {
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
  }

  double beta1_, beta2_, epsilon_;
  bool lazy_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// Training

struct Dataset {
  std::string corpus_id;
  std::vector<Document> documents;
};

struct Vocabularies {
  TokenVocabulary tokens;
  codec::TagVocabulary tags;
};

inline Vocabularies build_vocabularies(const std::vector<Dataset>& train, const ModelConfig& cfg,
                                       const std::set<std::string>& exclude = {}) {
  std::vector<Document> surfaced;
  std::vector<std::vector<codec::Tag>> tag_corpus;
  std::vector<std::string> corpus_ids;
  for (const auto& d : train) {
    corpus_ids.push_back(d.corpus_id);
    if (exclude.count(d.corpus_id)) continue;
    for (const auto& doc : d.documents) {
      surfaced.push_back(io::surface_empty_nodes(doc, cfg.empty_marker));
      for (auto& seq : gold_tags(doc)) tag_corpus.push_back(std::move(seq));
    }
  }
  std::vector<const Document*> ptrs;
  for (const auto& d : surfaced) ptrs.push_back(&d);
  return {TokenVocabulary::build(ptrs, cfg.use_corpus_id ? corpus_ids : std::vector<std::string>{}),
          codec::TagVocabulary::build(tag_corpus)};
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double dev_conll = 0;
  double seconds = 0;
};

struct TrainResult {
  CorefModel final_model;
  CorefModel best_model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  long steps = 0;
};

inline double evaluate(const CorefModel& m, const std::vector<Dataset>& dev, bool with_singletons, bool head_reduction) {
  std::vector<scorer::ScoreReport> reports;
  for (const auto& d : dev) {
    std::vector<Document> predicted;
    for (const auto& doc : d.documents) predicted.push_back(predict(m, doc, {head_reduction}));
    reports.push_back(scorer::score_corpus(d.documents, predicted, with_singletons));
  }
  return scorer::macro_average(reports);
}

inline TrainResult train(CorefModel model, const std::vector<Dataset>& train_sets, const std::vector<Dataset>& dev,
                         const TrainConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  if (train_sets.empty()) throw ConfigError("no training data");
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  std::vector<std::vector<WindowExample>> pools;
  sampling::MixSpec mix;
  mix.strategy = cfg.mixing;
  mix.focus = cfg.focus_dataset;
  mix.exclude = cfg.exclude;
  mix.use_corpus_id = model.config.use_corpus_id;
  mix.seed = cfg.seed;
  std::vector<std::size_t> pool_sizes;
  for (const auto& d : train_sets) {
    std::vector<WindowExample> pool;
    if (!cfg.exclude.count(d.corpus_id))
      for (const auto& doc : d.documents) {
        auto g = gold_mentions(doc);
        if (g.duplicates) say("warning: " + doc.doc_id + ": dropped " + std::to_string(g.duplicates) + " duplicate mention spans");
        if (g.cross_sentence)
          say("warning: " + doc.doc_id + ": skipped " + std::to_string(g.cross_sentence) + " cross-sentence mentions");
        for (auto& ex : make_examples(model, doc)) pool.push_back(std::move(ex));
      }
    mix.datasets.push_back({d.corpus_id, std::max<long>(1, static_cast<long>(pool.size()))});
    pool_sizes.push_back(pool.size());
    pools.push_back(std::move(pool));
  }
  for (std::size_t i = 0; i < train_sets.size(); ++i)
    if (pools[i].empty() && !cfg.exclude.count(train_sets[i].corpus_id))
      throw ConfigError("training dataset '" + train_sets[i].corpus_id + "' has no sentences");
  sampling::MixedStream stream(mix, pool_sizes);

  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_epsilon, cfg.lazy_adam);
  const long total = static_cast<long>(cfg.epochs) * cfg.batches_per_epoch;
  TrainResult result{model, model, {}, 0, 0};
  double best = -1;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      std::vector<const WindowExample*> batch;
      for (int i = 0; i < cfg.batch_size; ++i) {
        auto draw = stream.next();
        batch.push_back(&pools[draw.dataset][draw.example]);
      }
      Tape t(&model.params);
      auto l = batch_loss(t, model, batch, cfg);
      double value = t.scalar(l.total);
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", step " << result.steps + 1 << " (detection "
            << l.detection << ", linking " << l.linking << ")";
        throw ModelError(msg.str());
      }
      model.params.zero_grad();
      t.backward(l.total);
      ++result.steps;
      adam.step(model.params, lr_at(result.steps, total, cfg.peak_lr, cfg.warmup));
      epoch_loss += value / cfg.batches_per_epoch;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss;
    rec.dev_conll = dev.empty() ? 0.0 : evaluate(model, dev, cfg.eval_with_singletons, cfg.head_reduction);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(rec);
    std::ostringstream line;
    line << "epoch " << epoch << " loss " << rec.train_loss << " dev CoNLL " << rec.dev_conll << " (" << rec.seconds
         << "s)";
    say(line.str());
    if (rec.dev_conll > best) {
      best = rec.dev_conll;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    if (cfg.stop_at_dev_score > 0 && rec.dev_conll >= cfg.stop_at_dev_score) break;
  }
  result.final_model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Configuration (de)serialization

inline json to_json(const ModelConfig& c) {
  return {{"encoder", c.encoder},
          {"dim", c.dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_multiplier", c.ffn_multiplier},
          {"scale_antecedent_scores", c.scale_antecedent_scores},
          {"learn_transitions", c.learn_transitions},
          {"use_corpus_id", c.use_corpus_id},
          {"empty_marker", c.empty_marker},
          {"window_size", c.window.window_size},
          {"right_context", c.window.right_context},
          {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.encoder = j.value("encoder", c.encoder);
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.scale_antecedent_scores = j.value("scale_antecedent_scores", c.scale_antecedent_scores);
  c.learn_transitions = j.value("learn_transitions", c.learn_transitions);
  c.use_corpus_id = j.value("use_corpus_id", c.use_corpus_id);
  c.empty_marker = j.value("empty_marker", c.empty_marker);
  c.window.window_size = j.value("window_size", c.window.window_size);
  c.window.right_context = j.value("right_context", c.window.right_context);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

inline std::string to_string(linker::LinkLoss l) {
  return l == linker::LinkLoss::kUniformTarget ? "uniform_target" : "marginal_likelihood";
}

inline linker::LinkLoss link_loss_from_string(const std::string& s) {
  if (s == "uniform_target") return linker::LinkLoss::kUniformTarget;
  if (s == "marginal_likelihood") return linker::LinkLoss::kMarginalLikelihood;
  throw ConfigError("unknown linking loss '" + s + "'");
}

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"warmup", c.warmup},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"lazy_adam", c.lazy_adam},
          {"epochs", c.epochs},
          {"batches_per_epoch", c.batches_per_epoch},
          {"detection_weight", c.detection_weight},
          {"linking_weight", c.linking_weight},
          {"at_most_k_links", c.at_most_k_links},
          {"link_loss", to_string(c.link_loss)},
          {"mixing", sampling::to_string(c.mixing)},
          {"focus_dataset", c.focus_dataset},
          {"exclude", c.exclude},
          {"seed", c.seed},
          {"stop_at_dev_score", c.stop_at_dev_score},
          {"eval_with_singletons", c.eval_with_singletons},
          {"head_reduction", c.head_reduction}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.warmup = j.value("warmup", c.warmup);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.lazy_adam = j.value("lazy_adam", c.lazy_adam);
  c.epochs = j.value("epochs", c.epochs);
  c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
  c.detection_weight = j.value("detection_weight", c.detection_weight);
  c.linking_weight = j.value("linking_weight", c.linking_weight);
  c.at_most_k_links = j.value("at_most_k_links", c.at_most_k_links);
  c.link_loss = link_loss_from_string(j.value("link_loss", to_string(c.link_loss)));
  c.mixing = sampling::strategy_from_string(j.value("mixing", sampling::to_string(c.mixing)));
  c.focus_dataset = j.value("focus_dataset", c.focus_dataset);
  if (j.contains("exclude")) c.exclude = j.at("exclude").get<std::set<std::string>>();
  c.seed = j.value("seed", c.seed);
  c.stop_at_dev_score = j.value("stop_at_dev_score", c.stop_at_dev_score);
  c.eval_with_singletons = j.value("eval_with_singletons", c.eval_with_singletons);
  c.head_reduction = j.value("head_reduction", c.head_reduction);
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CORPIPE\0"  u32 version  u64 n  n bytes of JSON metadata  u32 tensors
//   per tensor:  u32 n  name  u32 rows  u32 cols  rows*cols f64 (row-major)
// All integers and doubles little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  put_u64(out, v);
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  std::uint64_t uint(int bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return v;
  }
  double f64() {
    std::uint64_t v = uint(8);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) {
    if (n > data_.size() - pos_) throw FormatError("checkpoint is truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const CorefModel& m, const json& train_config = json::object()) {
  json meta = {{"model", to_json(m.config)},
               {"encoder_type", m.encoder->type()},
               {"train_config", train_config},
               {"tokens", m.tokens.strings()},
               {"tags", m.tags.strings()}};
  std::string text = meta.dump();
  std::string out("CORPIPE\0", 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, text.size());
  out += text;
  detail::put_u32(out, static_cast<std::uint32_t>(m.params.size()));
  for (const auto& p : m.params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (long r = 0; r < p.value.rows(); ++r)
      for (long c = 0; c < p.value.cols(); ++c) detail::put_f64(out, p.value(r, c));
  }
  return out;
}

struct Checkpoint {
  CorefModel model;
  json train_config;
};

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::Reader in(data);
  if (in.bytes(8) != std::string("CORPIPE\0", 8)) throw FormatError("not a checkpoint file");
  auto version = in.uint(4);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  json meta;
  try {
    meta = json::parse(in.bytes(in.uint(8)));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  auto cfg = model_config_from_json(meta.at("model"));
  auto model = CorefModel::create(cfg, TokenVocabulary::from_strings(meta.at("tokens").get<std::vector<std::string>>()),
                                  codec::TagVocabulary::from_strings(meta.at("tags").get<std::vector<std::string>>()));
  if (meta.value("encoder_type", "") != model.encoder->type()) throw FormatError("checkpoint encoder type mismatch");
  auto count = in.uint(4);
  if (static_cast<int>(count) != model.params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, the model has " +
                      std::to_string(model.params.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.bytes(in.uint(4));
    if (!model.params.contains(name)) throw FormatError("unknown tensor '" + name + "'");
    auto& p = model.params[model.params.index_of(name)];
    long rows = static_cast<long>(in.uint(4)), cols = static_cast<long>(in.uint(4));
    if (rows != p.value.rows() || cols != p.value.cols()) throw FormatError("tensor '" + name + "' has the wrong shape");
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) p.value(r, c) = in.f64();
  }
  if (!in.done()) throw FormatError("trailing bytes after the last tensor");
  return {std::move(model), meta.value("train_config", json::object())};
}

inline void save_checkpoint(const std::string& path, const CorefModel& m, const json& train_config = json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  auto data = serialize_checkpoint(m, train_config);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("cannot write " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(data);
}

}  // namespace corpipe::model
