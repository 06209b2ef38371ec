#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "irbridge/corpus_synth.hpp"
#include "irbridge/error.hpp"
#include "irbridge/evaluation.hpp"

namespace irbridge {
namespace {

using namespace irbridge::testing;

std::string dump(const std::vector<Contract>& side) {
  std::ostringstream out;
  write_ir_dump(out, side);
  return out.str();
}

std::set<int> reachable_instructions(const IrFunction& f) {
  std::map<int, const BasicBlock*> by_id;
  for (const auto& b : f.blocks) by_id[b.id] = &b;
  std::set<int> seen_blocks, out;
  std::queue<int> q;
  q.push(f.blocks.front().id);
  while (!q.empty()) {
    const int id = q.front();
    q.pop();
    if (!seen_blocks.insert(id).second) continue;
    for (int i : by_id.at(id)->instr_indices) out.insert(i);
    for (int s : by_id.at(id)->successors) q.push(s);
  }
  return out;
}

TEST(Generate, ZeroRatesGiveAllSafe) {
  SynthSpec spec;
  spec.contracts = 30;
  spec.re_rate = spec.wr_rate = spec.ut_rate = 0.0;
  const auto corpus = generate_corpus(spec);
  for (const auto& [id, label] : corpus.labels) EXPECT_EQ(label, Label::kSafe) << id;
  for (const auto& c : corpus.a) EXPECT_EQ(c.label, Label::kSafe);
}

TEST(Generate, ByteIdenticalAcrossRuns) {
  SynthSpec spec;
  spec.contracts = 25;
  const auto one = generate_corpus(spec);
  const auto two = generate_corpus(spec);
  EXPECT_EQ(dump(one.a), dump(two.a));
  EXPECT_EQ(dump(one.b), dump(two.b));
  EXPECT_EQ(one.sidecar().dump(), two.sidecar().dump());
  spec.seed = 8;
  EXPECT_NE(dump(generate_corpus(spec).a), dump(one.a));
}

TEST(Generate, SeededReentrancyCount) {
  SynthSpec spec;
  spec.contracts = 60;
  spec.re_rate = 0.3;
  const auto corpus = generate_corpus(spec);
  int re = 0;
  for (const auto& [id, label] : corpus.labels) re += label == Label::kRE;
  // Seed 7 draws 17 of the expected 18.
  EXPECT_EQ(re, 17);
  int re_a = 0;
  for (const auto& c : corpus.a) re_a += c.label == Label::kRE;
  EXPECT_EQ(re_a, re);
}

TEST(Generate, EveryFunctionValidAndReachable) {
  SynthSpec spec;
  spec.contracts = 40;
  spec.template_mix = {1, 1, 1, 1, 1, 1};
  const auto corpus = generate_corpus(spec);
  for (const auto* side : {&corpus.a, &corpus.b}) {
    for (const auto& c : *side) {
      for (const auto& f : c.functions) {
        EXPECT_TRUE(validate_function(f).empty()) << c.contract_id << "::" << f.name;
        EXPECT_EQ(reachable_instructions(f).size(), f.instructions.size()) << c.contract_id << "::" << f.name;
      }
    }
  }
}

TEST(Generate, PairsFormBijectionPerContract) {
  SynthSpec spec;
  spec.contracts = 30;
  const auto corpus = generate_corpus(spec);
  std::set<std::pair<std::string, std::string>> fa, fb, pa, pb;
  for (const auto& c : corpus.a)
    for (const auto& f : c.functions) fa.insert({c.contract_id, f.name});
  for (const auto& c : corpus.b)
    for (const auto& f : c.functions) fb.insert({c.contract_id, f.name});
  for (const auto& [a, b] : corpus.pairs) {
    EXPECT_TRUE(pa.insert({a.contract_id, a.function}).second);
    EXPECT_TRUE(pb.insert({b.contract_id, b.function}).second);
    EXPECT_EQ(a.contract_id.substr(0, a.contract_id.rfind('.')), b.contract_id.substr(0, b.contract_id.rfind('.')));
  }
  EXPECT_EQ(pa, fa);
  EXPECT_EQ(pb, fb);
}

TEST(Generate, DialectsDivergeAndNoneAgrees) {
  SynthSpec spec;
  const auto corpus = generate_corpus(spec);
  std::vector<Contract> both = corpus.a;
  both.insert(both.end(), corpus.b.begin(), corpus.b.end());
  const Vocabulary vocab = build_vocabulary(corpus_sequences(both));
  std::vector<Language> langs;
  for (const auto& c : both) langs.push_back(c.language);
  EXPECT_GE(language_probe(token_histograms(both, vocab), langs, 7), 0.85);

  spec.contracts = 10;
  spec.divergence = DialectDivergence::none();
  const auto same = generate_corpus(spec);
  for (std::size_t k = 0; k < same.a.size(); ++k) {
    ASSERT_EQ(same.a[k].functions.size(), same.b[k].functions.size());
    for (std::size_t i = 0; i < same.a[k].functions.size(); ++i)
      EXPECT_EQ(same.a[k].functions[i].instructions, same.b[k].functions[i].instructions);
  }
}

TEST(Generate, InvalidSpecRejected) {
  SynthSpec spec;
  spec.re_rate = 1.5;
  try {
    generate_corpus(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidSpec);
  }
  spec = SynthSpec{};
  EXPECT_EQ(SynthSpec::from_json(spec.to_json()).to_json(), spec.to_json());
}

TEST(Inject, ReentrancyCallPrecedesStateWrite) {
  const IrFunction f = straight_function({instr(Opcode::kAssign, local("amount"), {constant("1")}),
                                          instr(Opcode::kAssign, state("balance"), {local("amount")}),
                                          instr(Opcode::kReturn, std::nullopt, {})});
  const IrFunction out = inject_vulnerability(f, Task::kRE, 1);
  ASSERT_EQ(out.instructions.size(), 4u);
  EXPECT_EQ(out.instructions[1].opcode, Opcode::kHighLevelCall);
  EXPECT_EQ(out.instructions[2].lhs->text, "balance");
  for (std::size_t i = 0; i < out.instructions.size(); ++i) EXPECT_EQ(out.instructions[i].index, static_cast<int>(i));
  EXPECT_EQ(out.blocks[0].instr_indices, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_TRUE(validate_function(out).empty());
  EXPECT_EQ(reachable_instructions(out).count(1), 1u);
}

TEST(Inject, NoStateWriteHasNoSite) {
  const IrFunction f = straight_function({instr(Opcode::kAssign, local("x"), {constant("1")})});
  try {
    inject_vulnerability(f, Task::kRE, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoInjectionSite);
  }
}

TEST(Inject, UncheckedTransferResultIsNeverRead) {
  const IrFunction f = straight_function({instr(Opcode::kAssign, local("amount"), {state("balance")}),
                                          instr(Opcode::kRequire, std::nullopt, {local("amount")}),
                                          instr(Opcode::kReturn, std::nullopt, {})});
  const IrFunction out = inject_vulnerability(f, Task::kUT, 1);
  ASSERT_EQ(out.instructions.size(), 4u);
  EXPECT_TRUE(validate_function(out).empty());
  int found = 0;
  for (const auto& in : out.instructions) {
    if (in.opcode != Opcode::kTransfer || !in.lhs) continue;
    ++found;
    for (std::size_t j = static_cast<std::size_t>(in.index) + 1; j < out.instructions.size(); ++j)
      for (const auto& o : out.instructions[j].operands) EXPECT_NE(o.text, in.lhs->text);
    EXPECT_EQ(reachable_instructions(out).count(in.index), 1u);
  }
  EXPECT_EQ(found, 1);
}

TEST(Inject, WeakRandomnessConditionReadsBlockData) {
  const IrFunction f = straight_function({instr(Opcode::kBinary, local("c"), {state("seed"), constant(">"), constant("3")}),
                                          instr(Opcode::kCondition, std::nullopt, {local("c")})});
  const IrFunction out = inject_vulnerability(f, Task::kWR, 1);
  EXPECT_EQ(out.instructions.size(), 2u);
  EXPECT_EQ(out.instructions[0].operands[0].text, "block.timestamp");
  EXPECT_TRUE(validate_function(out).empty());
}

TEST(Patterns, EveryCategoryPaired) {
  const auto pairs = pattern_pairs(SynthSpec{}, 3, 1);
  std::map<PatternCategory, int> n;
  for (const auto& p : pairs) {
    ++n[p.category];
    EXPECT_TRUE(validate_function(p.a).empty());
    EXPECT_TRUE(validate_function(p.b).empty());
    EXPECT_EQ(p.a.language, Language::kA);
    EXPECT_EQ(p.b.language, Language::kB);
  }
  for (auto c : kAllCategories) EXPECT_EQ(n[c], 3);
}

}  // namespace
}  // namespace irbridge
