#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "irbridge/corpus_synth.hpp"
#include "irbridge/error.hpp"
#include "irbridge/preprocess.hpp"
#include "irbridge/training.hpp"

namespace irbridge {
namespace {

std::vector<std::string> texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

TokenSequence seq_of(std::vector<std::pair<std::string, TokenClass>> items) {
  TokenSequence s;
  for (auto& [text, klass] : items) s.tokens.push_back({text, klass});
  return s;
}

IrOperand var(std::string text, std::optional<std::string> type = std::nullopt,
              OperandKind kind = OperandKind::kLocalVar) {
  return {kind, std::move(text), std::move(type)};
}

constexpr auto kOp = TokenClass::kOperation;
constexpr auto kVar = TokenClass::kVariable;
constexpr auto kLit = TokenClass::kLiteral;
constexpr auto kMark = TokenClass::kMarker;

TEST(Tokenize, AssignEmitsTypeAsSeparateToken) {
  IrInstruction in;
  in.opcode = Opcode::kAssign;
  in.lhs = var("TMP_0", "bool", OperandKind::kTempVar);
  in.operands = {var("amount"), {OperandKind::kOperator, ">", std::nullopt}, {OperandKind::kConstant, "0", std::nullopt}};
  const auto tokens = tokenize_instruction(in);
  EXPECT_EQ(texts(tokens), (std::vector<std::string>{"ASSIGN", "TMP_0", "bool", "amount", ">", "0", "<SEP>"}));
  EXPECT_EQ(tokens[0].klass, TokenClass::kOperation);
  EXPECT_EQ(tokens[2].klass, TokenClass::kTypeAnno);
  EXPECT_EQ(tokens.back().klass, TokenClass::kMarker);
}

TEST(Tokenize, RequireKeepsMessageUntilNormalization) {
  IrInstruction in;
  in.opcode = Opcode::kRequire;
  in.operands = {var("TMP_0", std::nullopt, OperandKind::kTempVar), {OperandKind::kStringLit, "\"Error msg\"", std::nullopt}};
  EXPECT_EQ(texts(tokenize_instruction(in)), (std::vector<std::string>{"REQUIRE", "TMP_0", "\"Error msg\"", "<SEP>"}));
}

TEST(Tokenize, ReturnWithoutOperands) {
  IrInstruction in;
  in.opcode = Opcode::kReturn;
  EXPECT_EQ(texts(tokenize_instruction(in)), (std::vector<std::string>{"RETURN", "<SEP>"}));
}

TEST(Normalize, RequireMessageRemoved) {
  const auto s = seq_of({{"REQUIRE", kOp}, {"TMP_0", kVar}, {"\"Amount > 0\"", kLit}, {"<SEP>", kMark}});
  EXPECT_EQ(texts(normalize_tokens(s).tokens), (std::vector<std::string>{"REQUIRE", "<TMP>", "<SEP>"}));
}

TEST(Normalize, CustomizedSuffixesStripped) {
  const auto s = seq_of({{"ASSIGN", kOp}, {"TMP_1", kVar}, {"amount_1", kVar}, {"*", kOp}, {"rate_2", kVar}, {"<SEP>", kMark}});
  EXPECT_EQ(texts(normalize_tokens(s).tokens),
            (std::vector<std::string>{"ASSIGN", "<TMP>", "amount", "*", "rate", "<SEP>"}));
}

TEST(Normalize, MarkersForReferencesTuplesAndStrings) {
  const auto s = seq_of({{"ASSIGN", kOp}, {"REF_3", kVar}, {"TUP_2", kVar}, {"\"hi\"", kLit}, {"<SEP>", kMark}});
  EXPECT_EQ(texts(normalize_tokens(s).tokens),
            (std::vector<std::string>{"ASSIGN", "<REF>", "<TUP>", "<STR>", "<SEP>"}));
}

TEST(Normalize, IdempotentOnNormalizedSequence) {
  const auto s = seq_of({{"ASSIGN", kOp}, {"<TMP>", kMark}, {"amount", kVar}, {"<SEP>", kMark}});
  EXPECT_EQ(normalize_tokens(s), s);
}

TEST(Normalize, IdempotentAndLengthRulesOverSyntheticCorpus) {
  SynthSpec spec;
  spec.contracts = 30;
  const SynthCorpus corpus = generate_corpus(spec);
  for (const auto* side : {&corpus.a, &corpus.b}) {
    for (const auto& c : *side) {
      for (const auto& f : c.functions) {
        const TokenSequence raw = tokenize_function(f);
        const TokenSequence once = normalize_tokens(raw);
        EXPECT_EQ(normalize_tokens(once), once);
        std::size_t messages = 0;
        bool in_require = false;
        for (const auto& t : raw.tokens) {
          if (t.klass == TokenClass::kOperation && t.text == "REQUIRE") in_require = true;
          if (t.text == "<SEP>") in_require = false;
          if (in_require && t.klass == TokenClass::kLiteral && t.text.front() == '"') ++messages;
        }
        EXPECT_EQ(once.tokens.size() + messages, raw.tokens.size());
      }
    }
  }
}

TEST(Normalize, StripNumericSuffix) {
  EXPECT_EQ(strip_numeric_suffix("amount_1"), "amount");
  EXPECT_EQ(strip_numeric_suffix("a_1_2"), "a");
  EXPECT_EQ(strip_numeric_suffix("_1"), "_1");
  EXPECT_EQ(strip_numeric_suffix("plain"), "plain");
}

TEST(Vocabulary, SingleSequenceLayout) {
  const TokenSequence s = seq_of({{"ASSIGN", kOp}, {"<TMP>", kMark}, {"<SEP>", kMark}});
  const Vocabulary v = build_vocabulary(std::vector<TokenSequence>{s});
  std::vector<std::string> expected = {"<PAD>", "<UNK>"};
  for (auto m : marker::kAll) expected.emplace_back(m);
  expected.emplace_back("ASSIGN");
  EXPECT_EQ(v.tokens(), expected);
  EXPECT_EQ(v.id("<PAD>"), Vocabulary::kPad);
  EXPECT_EQ(v.id("<UNK>"), Vocabulary::kUnk);
  EXPECT_EQ(v.id("missing"), Vocabulary::kUnk);
}

TEST(Vocabulary, OrderedByFrequencyThenText) {
  const TokenSequence s = seq_of({{"b", kVar}, {"a", kVar}, {"c", kVar}, {"c", kVar}, {"b", kVar}, {"c", kVar}});
  const Vocabulary v = build_vocabulary(std::vector<TokenSequence>{s});
  const std::size_t base = 2 + std::size(marker::kAll);
  ASSERT_EQ(v.size(), base + 3);
  EXPECT_EQ(v.token(static_cast<int>(base)), "c");
  EXPECT_EQ(v.token(static_cast<int>(base + 1)), "b");
  EXPECT_EQ(v.token(static_cast<int>(base + 2)), "a");
}

TEST(Vocabulary, DeterministicHashAndJsonRoundTrip) {
  SynthSpec spec;
  spec.contracts = 10;
  const auto corpus = generate_corpus(spec);
  const Vocabulary v1 = build_vocabulary(corpus_sequences(corpus.a));
  const Vocabulary v2 = build_vocabulary(corpus_sequences(corpus.a));
  EXPECT_EQ(v1.content_hash(), v2.content_hash());
  const Vocabulary back = Vocabulary::from_json(v1.to_json());
  EXPECT_EQ(back.tokens(), v1.tokens());
  EXPECT_EQ(back.content_hash(), v1.content_hash());
  EXPECT_EQ(v1.to_json()["version"], 1);
}

TEST(Vocabulary, EmptyCorpusRejected) {
  try {
    build_vocabulary(std::vector<TokenSequence>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCorpus);
  }
}

TEST(Vocabulary, NormalizationShrinksVocabulary) {
  SynthSpec spec;
  spec.contracts = 20;
  const auto corpus = generate_corpus(spec);
  std::vector<TokenSequence> raw, norm;
  for (const auto& c : corpus.a) {
    for (const auto& f : c.functions) {
      raw.push_back(tokenize_function(f));
      norm.push_back(normalize_tokens(raw.back()));
    }
  }
  EXPECT_LT(build_vocabulary(norm).size(), build_vocabulary(raw).size());
}

TEST(Encode, PadsTruncatesAndMapsUnknown) {
  const TokenSequence s = seq_of({{"a", kVar}, {"b", kVar}, {"a", kVar}, {"b", kVar}, {"a", kVar}});
  const Vocabulary v = build_vocabulary(std::vector<TokenSequence>{s});
  const IdSequence padded = encode_sequence(s, v, 8);
  ASSERT_EQ(padded.ids.size(), 8u);
  EXPECT_EQ(padded.length, 5u);
  EXPECT_FALSE(padded.truncated);
  for (std::size_t k = 5; k < 8; ++k) EXPECT_EQ(padded.ids[k], Vocabulary::kPad);
  EXPECT_EQ(padded.ids[0], v.id("a"));

  const TokenSequence unknown = seq_of({{"zzz", kVar}});
  EXPECT_EQ(encode_sequence(unknown, v, 4).ids[0], Vocabulary::kUnk);

  TokenSequence ten;
  for (int k = 0; k < 10; ++k) ten.tokens.push_back({k % 2 ? "a" : "b", kVar});
  const IdSequence cut = encode_sequence(ten, v, 8);
  EXPECT_TRUE(cut.truncated);
  EXPECT_EQ(cut.length, 8u);
  ASSERT_EQ(cut.ids.size(), 8u);
  for (int k = 0; k < 8; ++k) EXPECT_EQ(cut.ids[static_cast<std::size_t>(k)], v.id(ten.tokens[static_cast<std::size_t>(k)].text));
}

TEST(Complexity, IdenticalContractsScoreZero) {
  SynthSpec spec;
  spec.contracts = 1;
  const std::vector<Contract> corpus(4, generate_corpus(spec).a.front());
  for (double s : complexity_scores(corpus)) EXPECT_EQ(s, 0.0);
}

TEST(Complexity, LargerOnEveryMeasureScoresHigher) {
  SynthSpec spec;
  spec.contracts = 30;
  const auto corpus = generate_corpus(spec).a;
  const auto scores = complexity_scores(corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      const auto a = complexity_measures(corpus[i]);
      const auto b = complexity_measures(corpus[j]);
      if (a.max_ast_depth > b.max_ast_depth && a.distinct_opcodes > b.distinct_opcodes &&
          a.instruction_count > b.instruction_count) {
        EXPECT_GT(scores[i], scores[j]);
      }
    }
  }
}

TEST(Complexity, MatchesHandComputedZMean) {
  SynthSpec spec;
  spec.contracts = 12;
  const auto corpus = generate_corpus(spec).a;
  std::vector<ComplexityMeasures> m;
  for (const auto& c : corpus) m.push_back(complexity_measures(c));
  auto z = [&](auto get, std::size_t k) {
    double mean = 0, ss = 0;
    for (const auto& x : m) mean += get(x);
    mean /= static_cast<double>(m.size());
    for (const auto& x : m) ss += (get(x) - mean) * (get(x) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(m.size()));
    return sd == 0 ? 0.0 : (get(m[k]) - mean) / sd;
  };
  const auto scores = complexity_scores(corpus);
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const double expected = (z([](const ComplexityMeasures& x) { return x.max_ast_depth; }, k) +
                             z([](const ComplexityMeasures& x) { return x.distinct_opcodes; }, k) +
                             z([](const ComplexityMeasures& x) { return x.instruction_count; }, k)) /
                            3.0;
    EXPECT_NEAR(scores[k], expected, 1e-12);
  }
}

TEST(Complexity, MeasuresOfHandBuiltFunction) {
  IrFunction f;
  f.contract_id = "k";
  f.name = "f";
  for (int i = 0; i < 4; ++i) {
    IrInstruction in;
    in.index = i;
    in.opcode = i < 2 ? Opcode::kAssign : Opcode::kReturn;
    if (in.opcode == Opcode::kAssign) in.lhs = var("x");
    f.instructions.push_back(in);
  }
  f.blocks = {{0, {0, 1, 2, 3}, {}}};
  f.ast = {{0, AstKind::kFunction, std::nullopt, std::nullopt},
           {1, AstKind::kBlock, 0, std::nullopt},
           {2, AstKind::kExprStmt, 1, 0},
           {3, AstKind::kIdentifier, 2, std::nullopt}};
  Contract c;
  c.contract_id = "k";
  c.functions = {f};
  const auto m = complexity_measures(c);
  EXPECT_EQ(m.instruction_count, 4);
  EXPECT_EQ(m.distinct_opcodes, 2);
  // Function, Block, ExprStmt, Identifier: four levels counting the root.
  EXPECT_EQ(m.max_ast_depth, 4);
}

}  // namespace
}  // namespace irbridge
