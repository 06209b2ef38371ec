#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "irbridge/corpus_synth.hpp"
#include "irbridge/error.hpp"
#include "irbridge/ir_model.hpp"

namespace irbridge {
namespace {

using nlohmann::json;

json straight_line(int n_instr) {
  json instrs = json::array();
  json ast = json::array({{{"id", 0}, {"kind", "Function"}, {"parent", nullptr}, {"instr", nullptr}}});
  json block_instrs = json::array();
  for (int i = 0; i < n_instr; ++i) {
    instrs.push_back({{"i", i}, {"op", "ASSIGN"}, {"lhs", "x_" + std::to_string(i) + "(uint256)"},
                      {"operands", {std::to_string(i)}}, {"raw", "x = " + std::to_string(i)}});
    ast.push_back({{"id", i + 1}, {"kind", "ExprStmt"}, {"parent", 0}, {"instr", i}});
    block_instrs.push_back(i);
  }
  return {{"contract_id", "k1"},
          {"language", "A"},
          {"function", "f"},
          {"instructions", instrs},
          {"blocks", json::array({{{"id", 0}, {"instrs", block_instrs}, {"succ", json::array()}}})},
          {"ast", ast},
          {"state_vars", json::array()},
          {"label", "safe"}};
}

std::vector<Contract> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_ir_dump(in);
}

ErrorCode parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for " << text;
  return ErrorCode::kIo;
}

TEST(IrModel, AssignWithTypedTemporaryLhs) {
  json line = straight_line(1);
  line["instructions"][0] = {{"i", 0}, {"op", "ASSIGN"}, {"lhs", "TMP_0(bool)"},
                             {"operands", {"amount", ">", "0"}}, {"raw", "TMP_0(bool) = amount > 0"}};
  const auto contracts = parse(line.dump() + "\n");
  ASSERT_EQ(contracts.size(), 1u);
  const IrInstruction& in = contracts[0].functions[0].instructions[0];
  EXPECT_EQ(in.opcode, Opcode::kAssign);
  ASSERT_TRUE(in.lhs.has_value());
  EXPECT_EQ(in.lhs->kind, OperandKind::kTempVar);
  EXPECT_EQ(in.lhs->text, "TMP_0");
  EXPECT_EQ(in.lhs->decl_type, "bool");
  ASSERT_EQ(in.operands.size(), 3u);
  EXPECT_EQ(in.operands[0].text, "amount");
  EXPECT_EQ(in.operands[2].kind, OperandKind::kConstant);
}

TEST(IrModel, EmptyStreamYieldsNoContracts) { EXPECT_TRUE(parse("").empty()); }

TEST(IrModel, BlocksOmittingAnInstructionAreDangling) {
  json line = straight_line(5);
  line["blocks"][0]["instrs"] = {0, 1, 2, 4};
  EXPECT_EQ(parse_error(line.dump()), ErrorCode::kDanglingReference);
}

TEST(IrModel, UnknownOpcodeRejected) {
  json line = straight_line(1);
  line["instructions"][0]["op"] = "TELEPORT";
  EXPECT_EQ(parse_error(line.dump()), ErrorCode::kUnknownOpcode);
}

TEST(IrModel, ExtraFieldsAndBadJsonRejected) {
  json line = straight_line(1);
  line["extra"] = 1;
  EXPECT_EQ(parse_error(line.dump()), ErrorCode::kMalformedLine);
  EXPECT_EQ(parse_error("{not json"), ErrorCode::kMalformedLine);
}

TEST(IrModel, FunctionsGroupByContractInOrder) {
  json f1 = straight_line(2);
  json f2 = straight_line(3);
  f2["function"] = "g";
  json other = straight_line(1);
  other["contract_id"] = "k2";
  const auto contracts = parse(f1.dump() + "\n" + other.dump() + "\n\n" + f2.dump() + "\n");
  ASSERT_EQ(contracts.size(), 2u);
  EXPECT_EQ(contracts[0].contract_id, "k1");
  ASSERT_EQ(contracts[0].functions.size(), 2u);
  EXPECT_EQ(contracts[0].functions[0].name, "f");
  EXPECT_EQ(contracts[0].functions[1].name, "g");
  EXPECT_EQ(contracts[0].label, Label::kSafe);
}

TEST(IrModel, WellFormedFunctionHasNoViolations) {
  const auto contracts = parse(straight_line(3).dump());
  EXPECT_TRUE(validate_function(contracts[0].functions[0]).empty());
}

TEST(IrModel, TwoParentlessNodesAreMultipleRoots) {
  IrFunction f = parse(straight_line(3).dump())[0].functions[0];
  f.ast[2].parent.reset();
  const auto v = validate_function(f);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, ViolationKind::kMultipleRoots);
}

TEST(IrModel, SuccessorOutsideBlockSetIsDangling) {
  IrFunction f = parse(straight_line(4).dump())[0].functions[0];
  f.blocks = {{0, {0, 1}, {1}}, {1, {2, 3}, {99}}};
  const auto v = validate_function(f);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, ViolationKind::kDanglingSuccessor);
  EXPECT_EQ(v[0].id, 99);
}

TEST(IrModel, ConditionWithLhsViolates) {
  IrFunction f = parse(straight_line(2).dump())[0].functions[0];
  f.instructions[1].opcode = Opcode::kCondition;
  const auto v = validate_function(f);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, ViolationKind::kUnexpectedLhs);
}

TEST(IrModel, DumpRoundTripOnSyntheticCorpus) {
  SynthSpec spec;
  spec.contracts = 20;
  const SynthCorpus corpus = generate_corpus(spec);
  for (const auto* side : {&corpus.a, &corpus.b}) {
    std::ostringstream out;
    write_ir_dump(out, *side);
    std::istringstream in(out.str());
    const auto back = parse_ir_dump(in);
    EXPECT_EQ(back, *side);
    for (const auto& c : back) {
      for (const auto& f : c.functions) EXPECT_TRUE(validate_function(f).empty()) << c.contract_id;
    }
  }
}

}  // namespace
}  // namespace irbridge
