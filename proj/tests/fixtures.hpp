#pragma once

#include <optional>
#include <string>
#include <vector>

#include "irbridge/ir_model.hpp"

namespace irbridge::testing {

inline IrOperand local(std::string name) { return {OperandKind::kLocalVar, std::move(name), std::nullopt}; }
inline IrOperand state(std::string name) { return {OperandKind::kStateVar, std::move(name), std::nullopt}; }
inline IrOperand constant(std::string text) { return {OperandKind::kConstant, std::move(text), std::nullopt}; }

inline IrInstruction instr(Opcode op, std::optional<IrOperand> lhs, std::vector<IrOperand> operands) {
  IrInstruction in;
  in.opcode = op;
  in.lhs = std::move(lhs);
  in.operands = std::move(operands);
  return in;
}

// One block, a Function root, a Block node and one ExprStmt per instruction.
inline IrFunction straight_function(std::vector<IrInstruction> instrs, std::string name = "f") {
  IrFunction f;
  f.contract_id = "k";
  f.name = std::move(name);
  BasicBlock b;
  f.ast = {{0, AstKind::kFunction, std::nullopt, std::nullopt}, {1, AstKind::kBlock, 0, std::nullopt}};
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    instrs[i].index = static_cast<int>(i);
    instrs[i].raw = std::string(to_string(instrs[i].opcode));
    b.instr_indices.push_back(static_cast<int>(i));
    f.ast.push_back({static_cast<int>(i) + 2, AstKind::kExprStmt, 1, static_cast<int>(i)});
  }
  f.instructions = std::move(instrs);
  f.blocks = {b};
  return f;
}

}  // namespace irbridge::testing
