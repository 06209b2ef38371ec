#include <sstream>

#include <gtest/gtest.h>

#include "irbridge/checkpoint.hpp"
#include "irbridge/corpus_synth.hpp"
#include "irbridge/error.hpp"

namespace irbridge {
namespace {

struct Trained {
  Vocabulary vocab;
  ModelBundle bundle;
};

const Trained& trained() {
  static const Trained t = [] {
    SynthSpec spec;
    spec.contracts = 20;
    spec.re_rate = 0.4;
    const auto corpus = generate_corpus(spec);
    Trained out;
    out.vocab = build_vocabulary(corpus_sequences(corpus.a));
    EncoderConfig enc = EncoderConfig::desk();
    enc.seq_layers = 1;
    enc.hie_layers = 1;
    TrainConfig cfg;
    cfg.max_epochs_classifier = 5;
    const auto a = prepare_corpus(corpus.a, out.vocab, enc);
    out.bundle = train_classifier(a, init_bundle(enc, cfg, out.vocab.size(), out.vocab.content_hash()), Task::kRE);
    out.bundle.metadata["note"] = "checkpoint test";
    return out;
  }();
  return t;
}

std::string serialize(const ModelBundle& b) {
  std::ostringstream out;
  save_checkpoint(out, b);
  return out.str();
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  const std::string bytes = serialize(trained().bundle);
  EXPECT_EQ(bytes.substr(0, 4), "S2VY");
  std::istringstream in(bytes);
  const ModelBundle back = load_checkpoint(in, trained().vocab.content_hash());
  EXPECT_EQ(back.encoder_config, trained().bundle.encoder_config);
  EXPECT_EQ(back.encoder_digest(), trained().bundle.encoder_digest());
  EXPECT_EQ(back.vocab_hash, trained().bundle.vocab_hash);
  ASSERT_EQ(back.classifiers.size(), 1u);
  std::vector<Matrix<float>> x, y;
  back.classifiers.at(Task::kRE).params.visit([&](const std::string&, const Matrix<float>& m) { x.push_back(m); });
  trained().bundle.classifiers.at(Task::kRE).params.visit([&](const std::string&, const Matrix<float>& m) { y.push_back(m); });
  EXPECT_EQ(x, y);
  EXPECT_EQ(back.classifiers.at(Task::kRE).input_mean, trained().bundle.classifiers.at(Task::kRE).input_mean);
  EXPECT_EQ(back.metadata, trained().bundle.metadata);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(model_hash(back), model_hash(trained().bundle));
  const auto p1 = predict_contract(prepare_contract(generate_corpus(SynthSpec{}).b[0], trained().vocab, back.encoder_config), back, Task::kRE);
  const auto p2 = predict_contract(prepare_contract(generate_corpus(SynthSpec{}).b[0], trained().vocab, back.encoder_config), trained().bundle, Task::kRE);
  EXPECT_EQ(p1.probability, p2.probability);
}

TEST(Checkpoint, VocabularyMismatchRejected) {
  std::istringstream in(serialize(trained().bundle));
  try {
    load_checkpoint(in, std::string("not-the-hash"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabMismatch);
  }
}

TEST(Checkpoint, CorruptInputRejected) {
  std::string bytes = serialize(trained().bundle);
  for (const std::string& bad : {std::string("XXXX") + bytes.substr(4), bytes.substr(0, bytes.size() / 2), std::string()}) {
    std::istringstream in(bad);
    try {
      load_checkpoint(in);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCheckpointFormat);
    }
  }
}

}  // namespace
}  // namespace irbridge
