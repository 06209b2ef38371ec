#pragma once

// Canonical in-memory form of function-level three-address IR, plus the JSONL
// dump reader/writer that every other module consumes.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace irbridge {

enum class OperandKind {
  kStateVar,
  kLocalVar,
  kTempVar,
  kRefVar,
  kTupleVar,
  kConstant,
  kStringLit,
  kTypeName,
  kFunctionName,
  kOperator,  // infix symbols such as ">", "*", "=="
};

struct IrOperand {
  OperandKind kind = OperandKind::kLocalVar;
  std::string text;
  std::optional<std::string> decl_type;

  bool is_variable() const;
  // Spelling in the dump grammar: NAME, NAME(TYPE), "literal" or integer.
  std::string spelling() const;

  friend bool operator==(const IrOperand&, const IrOperand&) = default;
};

enum class Opcode {
  kAssign,
  kBinary,
  kCondition,
  kInternalCall,
  kHighLevelCall,
  kLowLevelCall,
  kModifierCall,
  kEventEmit,
  kTransfer,
  kRequire,
  kReturn,
  kIndexRef,
  kNewVar,
  kUnary,
  kPush,
};
inline constexpr std::size_t kOpcodeCount = 15;

std::string_view to_string(Opcode op);
std::optional<Opcode> parse_opcode(std::string_view text);

struct IrInstruction {
  int index = 0;
  Opcode opcode = Opcode::kAssign;
  std::optional<IrOperand> lhs;
  std::vector<IrOperand> operands;
  std::string raw;

  friend bool operator==(const IrInstruction&, const IrInstruction&) = default;
};

struct BasicBlock {
  int id = 0;
  std::vector<int> instr_indices;
  std::vector<int> successors;

  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

enum class AstKind {
  kFunction,
  kBlock,
  kIf,
  kLoop,
  kExprStmt,
  kCall,
  kVarDecl,
  kBinaryExpr,
  kUnaryExpr,
  kLiteral,
  kIdentifier,
};
inline constexpr std::size_t kAstKindCount = 11;

std::string_view to_string(AstKind kind);
std::optional<AstKind> parse_ast_kind(std::string_view text);

struct AstNode {
  int id = 0;
  AstKind kind = AstKind::kFunction;
  std::optional<int> parent;
  std::optional<int> instr_index;

  friend bool operator==(const AstNode&, const AstNode&) = default;
};

enum class Language { kA, kB };
std::string_view to_string(Language lang);

enum class Label { kSafe, kRE, kWR, kUT };
std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

using StateVar = std::pair<std::string, std::string>;  // (name, type)

struct IrFunction {
  std::string contract_id;
  Language language = Language::kA;
  std::string name;
  std::vector<IrInstruction> instructions;
  std::vector<BasicBlock> blocks;
  std::vector<AstNode> ast;
  std::vector<StateVar> state_vars;

  friend bool operator==(const IrFunction&, const IrFunction&) = default;
};

struct Contract {
  std::string contract_id;
  Language language = Language::kA;
  std::vector<IrFunction> functions;
  std::optional<Label> label;

  friend bool operator==(const Contract&, const Contract&) = default;
};

enum class ViolationKind {
  kEmptyInstructions,
  kNonContiguousIndex,
  kMissingLhs,
  kUnexpectedLhs,
  kInstrNotInBlock,
  kInstrInMultipleBlocks,
  kDanglingBlockInstr,
  kDuplicateBlockId,
  kDanglingSuccessor,
  kDuplicateAstId,
  kNoRoot,
  kMultipleRoots,
  kRootNotFunction,
  kDanglingParent,
  kAstCycle,
  kDanglingAstInstr,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  int id = -1;  // offending instruction/block/AST id, -1 when not applicable

  friend bool operator==(const Violation&, const Violation&) = default;
};

// True for violations caused by an id that points at nothing.
bool is_reference_violation(ViolationKind kind);

std::vector<Violation> validate_function(const IrFunction& f);

// Operand classification for one position of an instruction. Exposed so the
// synthetic generator and tests share the same grammar as the reader.
IrOperand parse_operand(std::string_view text, Opcode op, std::size_t position,
                        const std::vector<StateVar>& state_vars);
IrOperand parse_lhs(std::string_view text,
                    const std::vector<StateVar>& state_vars);

// Reads a JSONL corpus dump. Blank lines are skipped. Throws Error with
// kMalformedLine, kUnknownOpcode or kDanglingReference.
std::vector<Contract> parse_ir_dump(std::istream& in);

// One JSON line per function; labels are repeated on every line of a
// contract. parse_ir_dump(write_ir_dump(c)) == c.
void write_ir_dump(std::ostream& out, const std::vector<Contract>& contracts);
std::string function_to_json_line(const IrFunction& f,
                                  const std::optional<Label>& label);

}  // namespace irbridge
