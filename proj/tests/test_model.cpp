#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "corpipe/corefud_io.hpp"
#include "corpipe/model.hpp"
#include "corpipe/oracles.hpp"
#include "corpipe/synth.hpp"

using namespace corpipe;
using model::CorefModel;
using model::TrainConfig;
using model::WindowExample;
using Matrix = Eigen::MatrixXd;

namespace {

// "John said he saw himself ." with one three-mention entity
const char* kChain =
    "# newdoc id = chain\n"
    "# sent_id = chain-s1\n"
    "1\tJohn\tJohn\tPROPN\t_\t_\t2\tnsubj\t_\tEntity=(e1-person-1)\n"
    "2\tsaid\tsay\tVERB\t_\t_\t0\troot\t_\t_\n"
    "3\the\the\tPRON\t_\t_\t4\tnsubj\t_\tEntity=(e1-person-1)\n"
    "4\tsaw\tsee\tVERB\t_\t_\t2\tccomp\t_\t_\n"
    "5\thimself\thimself\tPRON\t_\t_\t4\tobj\t_\tEntity=(e1-person-1)\n"
    "6\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_\n"
    "\n"
    "# sent_id = chain-s2\n"
    "1\tIt\tit\tPRON\t_\t_\t2\tnsubj\t_\tEntity=(e2-thing-1)\n"
    "2\trained\train\tVERB\t_\t_\t0\troot\t_\t_\n"
    "\n"
    "# sent_id = chain-s3\n"
    "1\tNothing\tnothing\tPRON\t_\t_\t2\tnsubj\t_\t_\n"
    "2\thappened\thappen\tVERB\t_\t_\t0\troot\t_\t_\n"
    "\n";

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.dim = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.init_seed = 7;
  return cfg;
}

CorefModel make_model(const std::vector<Document>& docs, model::ModelConfig cfg = tiny_config()) {
  std::vector<model::Dataset> data{{"toy", docs}};
  auto v = model::build_vocabularies(data, cfg);
  return CorefModel::create(cfg, v.tokens, v.tags);
}

std::vector<Document> chain_docs() { return {io::parse_document(kChain, "toy")}; }

std::vector<Document> synth_docs(int documents, std::uint64_t seed) {
  synth::SynthSpec spec;
  spec.documents = documents;
  spec.sentences_per_doc = 3;
  spec.vocabulary_size = 40;
  spec.max_depth = 2;
  spec.seed = seed;
  return synth::generate(spec);
}

std::vector<const WindowExample*> pointers(const std::vector<WindowExample>& ex) {
  std::vector<const WindowExample*> out;
  for (const auto& e : ex) out.push_back(&e);
  return out;
}

double analytic_loss_and_grads(CorefModel& m, const std::vector<const WindowExample*>& batch, const TrainConfig& cfg) {
  ad::Tape t(&m.params);
  auto l = model::batch_loss(t, m, batch, cfg);
  m.params.zero_grad();
  t.backward(l.total);
  return t.scalar(l.total);
}

}  // namespace

TEST(Model, DetectionHeadShapes) {
  auto m = make_model(chain_docs());
  const int d = 8, v = m.tags.size();
  EXPECT_EQ(m.params[m.detection.hidden_weight].value.rows(), d);
  EXPECT_EQ(m.params[m.detection.hidden_weight].value.cols(), 4 * d);
  EXPECT_EQ(m.params[m.detection.output_weight].value.rows(), 4 * d);
  EXPECT_EQ(m.params[m.detection.output_weight].value.cols(), v);
  EXPECT_EQ(m.params[m.detection.transitions].value.rows(), v);
}

TEST(Model, FullGradientMatchesFiniteDifferences) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  ASSERT_LE(m.tags.size(), 10);
  auto examples = model::make_examples(m, docs[0]);
  auto batch = pointers(examples);
  for (auto mode : {linker::LinkLoss::kUniformTarget, linker::LinkLoss::kMarginalLikelihood}) {
    TrainConfig cfg;
    cfg.link_loss = mode;
    cfg.detection_weight = 0.7;
    analytic_loss_and_grads(m, batch, cfg);
    auto f = [&] { return model::loss(m, batch, cfg); };
    for (auto& p : m.params) {
      Matrix analytic = p.grad;
      auto numeric = oracle::numeric_gradient(f, p.value, 1e-4);
      EXPECT_LE(oracle::max_relative_error(analytic, numeric), 1e-4) << p.name;
    }
  }
}

TEST(Model, WindowWithoutMentionsHasNoLinkingLoss) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  auto examples = model::make_examples(m, docs[0]);
  ASSERT_EQ(examples.size(), 3u);
  ad::Tape t(&m.params, false);
  auto parts = model::window_loss(t, m, examples[2], TrainConfig{});
  EXPECT_EQ(parts.linking, 0.0);
  EXPECT_TRUE(std::isfinite(parts.detection));
  EXPECT_GT(parts.detection, 0.0);
}

TEST(Model, ZeroWeightsGiveZeroLoss) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  auto examples = model::make_examples(m, docs[0]);
  TrainConfig cfg;
  cfg.detection_weight = 0;
  cfg.linking_weight = 0;
  EXPECT_EQ(model::loss(m, pointers(examples), cfg), 0.0);
}

TEST(Model, SingleMentionLossIsDetectionOnly) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  auto examples = model::make_examples(m, docs[0]);
  // the second sentence's window also sees the three earlier mentions as context
  const auto& ex = examples[1];
  ASSERT_EQ(static_cast<int>(ex.mentions.size()) - ex.first_focus_mention, 1);
  WindowExample alone = ex;
  alone.mentions = {ex.mentions.back()};
  alone.entity = {0};
  alone.first_focus_mention = 0;
  ad::Tape t(&m.params, false);
  auto parts = model::window_loss(t, m, alone, TrainConfig{});
  EXPECT_NEAR(parts.linking, 0.0, 1e-15);
  EXPECT_NEAR(t.scalar(parts.total), parts.detection, 1e-12);
}

TEST(Model, LinkCapChangesOnlyTheLinkingTerm) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  auto examples = model::make_examples(m, docs[0]);
  ASSERT_EQ(examples[0].mentions.size(), 3u);
  TrainConfig all, capped;
  capped.at_most_k_links = 1;
  ad::Tape t1(&m.params, false), t2(&m.params, false);
  auto a = model::window_loss(t1, m, examples[0], all);
  auto b = model::window_loss(t2, m, examples[0], capped);
  EXPECT_EQ(a.detection, b.detection);
  EXPECT_NE(a.linking, b.linking);
}

TEST(Model, BothHeadsTrainTheSharedEncoder) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  auto examples = model::make_examples(m, docs[0]);
  std::vector<const WindowExample*> batch{&examples[0]};
  for (int which = 0; which < 2; ++which) {
    TrainConfig cfg;
    (which == 0 ? cfg.detection_weight : cfg.linking_weight) = 0;
    analytic_loss_and_grads(m, batch, cfg);
    double encoder_grad = 0;
    for (const auto& p : m.params)
      if (p.name.rfind("encoder.", 0) == 0) encoder_grad += p.grad.squaredNorm();
    EXPECT_GT(encoder_grad, 0.0) << (which == 0 ? "linking only" : "detection only");
    EXPECT_EQ(m.params[m.detection.output_weight].grad.isZero(0.0), which == 0);
    EXPECT_EQ(m.params[m.linking.query.hidden_weight].grad.isZero(0.0), which == 1);
  }
}

TEST(Model, LearningRateSchedule) {
  EXPECT_EQ(model::lr_at(0, 100, 1.0), 0.0);
  EXPECT_EQ(model::lr_at(10, 100, 1.0), 1.0);
  EXPECT_EQ(model::lr_at(100, 100, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(model::lr_at(5, 100, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(model::lr_at(55, 100, 1.0), 0.5);
  // ceil(0.1 * 15) = 2 warmup steps
  EXPECT_EQ(model::lr_at(2, 15, 2e-5), 2e-5);
  double top = 0;
  for (long s = 0; s <= 37; ++s) {
    double v = model::lr_at(s, 37, 3.0);
    top = std::max(top, v);
    if (s > 0) EXPECT_LE(std::abs(v - model::lr_at(s - 1, 37, 3.0)), 3.0 / 4 + 1e-12);
  }
  EXPECT_EQ(top, 3.0);
}

TEST(Model, AdamMatchesHandSteppedValues) {
  const double expected[2][2] = {{-0.0999999995, -0.12666994223885766}, {-0.0999999995, -0.12663370329756846}};
  const double beta2[2] = {0.99, 0.999};
  for (int k = 0; k < 2; ++k) {
    ad::ParameterSet params;
    params.add("x", Matrix::Zero(1, 1));
    model::Adam adam(0.9, beta2[k]);
    params[0].grad(0, 0) = 2.0;
    adam.step(params, 0.1);
    EXPECT_NEAR(params[0].value(0, 0), expected[k][0], 1e-12);
    params[0].grad(0, 0) = -1.0;
    adam.step(params, 0.1);
    EXPECT_NEAR(params[0].value(0, 0), expected[k][1], 1e-12);
    EXPECT_NEAR(adam.second_moments()[0](0, 0), k == 0 ? 0.0496 : 0.004996, 1e-15);
    EXPECT_EQ(adam.steps(), 2);
  }
}

TEST(Model, LazyAdamSkipsUntouchedEmbeddingRows) {
  ad::ParameterSet params;
  params.add("emb", Matrix::Ones(3, 2), true);
  model::Adam lazy(0.9, 0.999, 1e-8, true), dense(0.9, 0.999, 1e-8, false);
  auto copy = params;
  params[0].grad.row(1).setConstant(1.0);
  copy[0].grad.row(1).setConstant(1.0);
  lazy.step(params, 0.1);
  dense.step(copy, 0.1);
  EXPECT_EQ(params[0].value, copy[0].value);
  params[0].grad.setZero();
  copy[0].grad.setZero();
  lazy.step(params, 0.1);
  dense.step(copy, 0.1);
  EXPECT_EQ(params[0].value.row(0), Matrix::Ones(1, 2));
  EXPECT_NE(params[0].value.row(1), copy[0].value.row(1));
}

TEST(Model, FixedBatchLossDecreases) {
  auto docs = synth_docs(2, 3);
  auto m = make_model(docs);
  std::vector<WindowExample> examples;
  for (const auto& d : docs)
    for (auto& e : model::make_examples(m, d)) examples.push_back(std::move(e));
  examples.resize(8);
  auto batch = pointers(examples);
  TrainConfig cfg;
  cfg.seed = 0;
  model::Adam adam(cfg.beta1, cfg.beta2);
  double previous = model::loss(m, batch, cfg);
  for (int step = 0; step < 10; ++step) {
    analytic_loss_and_grads(m, batch, cfg);
    adam.step(m.params, 1e-3);
    double now = model::loss(m, batch, cfg);
    EXPECT_LT(now, previous) << "step " << step;
    previous = now;
  }
}

TEST(Model, UntrainedPredictionIsWellFormed) {
  auto docs = synth_docs(3, 5);
  auto m = make_model(docs);
  for (const auto& doc : docs)
    for (bool heads : {true, false}) {
      auto out = model::predict(m, doc, {heads});
      auto text = io::serialize_document(out);
      EXPECT_EQ(io::parse_document(text, doc.corpus_id), out);
      std::set<std::vector<int>> seen;
      for (const auto& e : out.entities)
        for (const auto& mention : e.mentions) {
          EXPECT_TRUE(seen.insert(mention.token_positions).second);
          if (heads) EXPECT_EQ(mention.token_positions.size(), 1u);
        }
    }
}

TEST(Model, EmptyDocumentPredictsNothing) {
  auto m = make_model(chain_docs());
  Document empty;
  empty.doc_id = "empty";
  EXPECT_TRUE(model::predict(m, empty).entities.empty());
}

TEST(Model, GoldMentionsOfDiscontinuousAndDuplicateSpans) {
  const char* text =
      "# newdoc id = d\n"
      "# sent_id = d-s1\n"
      "1\ta\ta\tX\t_\t_\t0\troot\t_\tEntity=(e1[1/2]-x-3\n"
      "2\tb\tb\tX\t_\t_\t1\tdep\t_\tEntity=e1[1/2])\n"
      "3\tc\tc\tX\t_\t_\t1\tdep\t_\tEntity=(e2-y-1)\n"
      "4\td\td\tX\t_\t_\t1\tdep\t_\tEntity=(e1[2/2])(e3-z-1)\n"
      "\n";
  auto doc = io::parse_document(text);
  auto g = model::gold_mentions(doc);
  EXPECT_EQ(g.duplicates, 1);
  ASSERT_EQ(g.mentions.size(), 2u);
  // e1 keeps only its head part, which repeats e3's span
  EXPECT_EQ(g.mentions[0].start, 2);
  EXPECT_EQ(g.mentions[1].start, 3);
  EXPECT_EQ(g.mentions[1].end, 3);
  EXPECT_EQ(g.mentions[1].entity, 0);
}

TEST(Model, CheckpointRoundTrip) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  TrainConfig cfg;
  cfg.beta2 = 0.99;
  auto bytes = model::serialize_checkpoint(m, model::to_json(cfg));
  auto back = model::deserialize_checkpoint(bytes);
  ASSERT_EQ(back.model.params.size(), m.params.size());
  for (int i = 0; i < m.params.size(); ++i) EXPECT_EQ(back.model.params[i].value, m.params[i].value);
  EXPECT_EQ(model::train_config_from_json(back.train_config).beta2, 0.99);
  EXPECT_EQ(model::serialize_checkpoint(back.model, back.train_config), bytes);
  EXPECT_EQ(model::predict(back.model, docs[0]), model::predict(m, docs[0]));
  EXPECT_THROW(model::deserialize_checkpoint(bytes + "x"), FormatError);
  EXPECT_THROW(model::deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  auto wrong = bytes;
  wrong[0] = 'X';
  EXPECT_THROW(model::deserialize_checkpoint(wrong), FormatError);
}

TEST(Model, ConfigJsonRoundTrip) {
  auto cfg = tiny_config();
  cfg.use_corpus_id = true;
  cfg.window.right_context = 17;
  auto back = model::model_config_from_json(model::to_json(cfg));
  EXPECT_EQ(model::to_json(back), model::to_json(cfg));
  TrainConfig t;
  t.exclude = {"a", "b"};
  t.link_loss = linker::LinkLoss::kMarginalLikelihood;
  EXPECT_EQ(model::to_json(model::train_config_from_json(model::to_json(t))), model::to_json(t));
  t.warmup = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Model, CorpusIdTokenIsPrepended) {
  auto cfg = tiny_config();
  cfg.use_corpus_id = true;
  auto docs = chain_docs();
  auto m = make_model(docs, cfg);
  auto examples = model::make_examples(m, docs[0]);
  EXPECT_EQ(examples[0].input.prefix, 1);
  EXPECT_EQ(examples[0].input.ids[0], m.tokens.corpus("toy"));
}

TEST(Model, TrainingIsDeterministicAndKeepsBestEpoch) {
  auto docs = synth_docs(2, 9);
  auto m = make_model(docs);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batches_per_epoch = 5;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  cfg.seed = 3;
  std::vector<model::Dataset> data{{"toy", docs}};
  auto a = model::train(m, data, data, cfg);
  auto b = model::train(m, data, data, cfg);
  ASSERT_EQ(a.history.size(), 4u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].dev_conll, b.history[i].dev_conll);
  }
  int argmax = 0;
  for (std::size_t i = 1; i < a.history.size(); ++i)
    if (a.history[i].dev_conll > a.history[argmax].dev_conll) argmax = static_cast<int>(i);
  EXPECT_EQ(a.best_epoch, argmax + 1);
  EXPECT_EQ(model::evaluate(a.best_model, data, false, true), a.history[argmax].dev_conll);
  EXPECT_EQ(a.steps, 20);
}

TEST(Model, UnknownTrainingDatasetIsRejected) {
  auto docs = chain_docs();
  auto m = make_model(docs);
  TrainConfig cfg;
  cfg.epochs = 1;
  std::vector<model::Dataset> none;
  EXPECT_THROW(model::train(m, none, none, cfg), ConfigError);
}
