#include "irbridge/ir_model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, kOpcodeCount> kOpcodeNames = {
    "ASSIGN",        "BINARY",        "CONDITION",  "INTERNAL_CALL",
    "HIGH_LEVEL_CALL", "LOW_LEVEL_CALL", "MODIFIER_CALL", "EVENT_EMIT",
    "TRANSFER",      "REQUIRE",       "RETURN",     "INDEX_REF",
    "NEW_VAR",       "UNARY",         "PUSH"};

constexpr std::array<std::string_view, kAstKindCount> kAstKindNames = {
    "Function", "Block",      "If",        "Loop",    "ExprStmt",  "Call",
    "VarDecl",  "BinaryExpr", "UnaryExpr", "Literal", "Identifier"};

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$' ||
         c == '.';
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front())) return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

bool has_numbered_prefix(std::string_view s, std::string_view prefix) {
  return s.size() > prefix.size() && s.substr(0, prefix.size()) == prefix &&
         all_digits(s.substr(prefix.size()));
}

bool is_constant(std::string_view s) {
  if (s == "true" || s == "false") return true;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    return std::all_of(s.begin() + 2, s.end(), [](char c) {
      return std::isxdigit(static_cast<unsigned char>(c));
    });
  }
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  return all_digits(s);
}

bool is_operator(std::string_view s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
           c == '"' || std::isspace(static_cast<unsigned char>(c));
  });
}

bool is_elementary_type(std::string_view s) {
  if (s == "bool" || s == "address" || s == "string" || s == "bytes") {
    return true;
  }
  for (std::string_view p : {"uint", "int", "bytes"}) {
    if (s.size() >= p.size() && s.substr(0, p.size()) == p &&
        (s.size() == p.size() || all_digits(s.substr(p.size())))) {
      return true;
    }
  }
  return false;
}

bool is_env_or_storage(std::string_view s) {
  for (std::string_view p : {"self.", "block.", "msg.", "tx."}) {
    if (s.size() > p.size() && s.substr(0, p.size()) == p) return true;
  }
  return false;
}

// Position of the callee name among the operands, if the opcode has one.
std::optional<std::size_t> callee_position(Opcode op) {
  switch (op) {
    case Opcode::kInternalCall:
    case Opcode::kModifierCall:
    case Opcode::kEventEmit:
      return 0;
    case Opcode::kHighLevelCall:
    case Opcode::kLowLevelCall:
      return 1;
    default:
      return std::nullopt;
  }
}

struct SplitName {
  std::string_view name;
  std::optional<std::string> type;
};

std::optional<SplitName> split_typed_name(std::string_view text) {
  SplitName out;
  if (!text.empty() && text.back() == ')') {
    auto open = text.find('(');
    if (open == std::string_view::npos || open == 0) return std::nullopt;
    std::string_view type = text.substr(open + 1, text.size() - open - 2);
    if (type.empty()) return std::nullopt;
    out.name = text.substr(0, open);
    out.type = std::string(type);
  } else {
    out.name = text;
  }
  if (!is_identifier(out.name)) return std::nullopt;
  return out;
}

OperandKind classify_name(std::string_view name,
                          const std::vector<StateVar>& state_vars) {
  if (has_numbered_prefix(name, "TMP_")) return OperandKind::kTempVar;
  if (has_numbered_prefix(name, "REF_")) return OperandKind::kRefVar;
  if (has_numbered_prefix(name, "TUP_") || has_numbered_prefix(name, "TUPLE_")) {
    return OperandKind::kTupleVar;
  }
  if (is_env_or_storage(name)) return OperandKind::kStateVar;
  for (const auto& sv : state_vars) {
    if (sv.first == name) return OperandKind::kStateVar;
  }
  return OperandKind::kLocalVar;
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& what) {
  throw Error(ErrorCode::kMalformedLine,
              "line " + std::to_string(line_no) + ": " + what);
}

void require_keys(const json& obj, std::initializer_list<std::string_view> required,
                  std::initializer_list<std::string_view> optional,
                  std::size_t line_no, std::string_view where) {
  if (!obj.is_object()) malformed(line_no, std::string(where) + " is not an object");
  for (auto key : required) {
    if (!obj.contains(std::string(key))) {
      malformed(line_no, std::string(where) + " missing field '" +
                             std::string(key) + "'");
    }
  }
  for (const auto& item : obj.items()) {
    bool known = std::find(required.begin(), required.end(), item.key()) !=
                     required.end() ||
                 std::find(optional.begin(), optional.end(), item.key()) !=
                     optional.end();
    if (!known) {
      malformed(line_no, std::string(where) + " has unexpected field '" +
                             item.key() + "'");
    }
  }
}

int get_int(const json& v, std::size_t line_no, std::string_view what) {
  if (!v.is_number_integer()) {
    malformed(line_no, std::string(what) + " must be an integer");
  }
  return v.get<int>();
}

std::optional<int> get_opt_int(const json& obj, const char* key,
                               std::size_t line_no) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return get_int(obj.at(key), line_no, key);
}

const std::string& get_string(const json& v, std::size_t line_no,
                              std::string_view what) {
  if (!v.is_string()) malformed(line_no, std::string(what) + " must be a string");
  return v.get_ref<const std::string&>();
}

std::vector<int> get_int_list(const json& v, std::size_t line_no,
                              std::string_view what) {
  if (!v.is_array()) malformed(line_no, std::string(what) + " must be an array");
  std::vector<int> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(get_int(x, line_no, what));
  return out;
}

struct ParsedLine {
  IrFunction function;
  std::optional<Label> label;
};

ParsedLine parse_line(const std::string& line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(line_no, std::string("invalid JSON: ") + e.what());
  }
  require_keys(obj,
               {"contract_id", "language", "function", "instructions", "blocks",
                "ast", "state_vars"},
               {"label"}, line_no, "function object");

  ParsedLine out;
  IrFunction& f = out.function;
  f.contract_id = get_string(obj["contract_id"], line_no, "contract_id");
  const auto& lang = get_string(obj["language"], line_no, "language");
  if (lang == "A") {
    f.language = Language::kA;
  } else if (lang == "B") {
    f.language = Language::kB;
  } else {
    malformed(line_no, "language must be \"A\" or \"B\"");
  }
  f.name = get_string(obj["function"], line_no, "function");

  const json& svs = obj["state_vars"];
  if (!svs.is_array()) malformed(line_no, "state_vars must be an array");
  for (const auto& sv : svs) {
    if (!sv.is_array() || sv.size() != 2 || !sv[0].is_string() ||
        !sv[1].is_string()) {
      malformed(line_no, "state_vars entries must be [name, type]");
    }
    f.state_vars.emplace_back(sv[0].get<std::string>(), sv[1].get<std::string>());
  }

  if (obj.contains("label") && !obj["label"].is_null()) {
    const auto& text = get_string(obj["label"], line_no, "label");
    out.label = parse_label(text);
    if (!out.label) malformed(line_no, "unknown label '" + text + "'");
  }

  const json& instrs = obj["instructions"];
  if (!instrs.is_array()) malformed(line_no, "instructions must be an array");
  for (const auto& ji : instrs) {
    require_keys(ji, {"i", "op", "operands"}, {"lhs", "raw"}, line_no,
                 "instruction");
    IrInstruction instr;
    instr.index = get_int(ji["i"], line_no, "i");
    const auto& op_text = get_string(ji["op"], line_no, "op");
    auto op = parse_opcode(op_text);
    if (!op) throw Error(ErrorCode::kUnknownOpcode, op_text);
    instr.opcode = *op;
    try {
      if (ji.contains("lhs") && !ji["lhs"].is_null()) {
        instr.lhs = parse_lhs(get_string(ji["lhs"], line_no, "lhs"), f.state_vars);
      }
      const json& ops = ji["operands"];
      if (!ops.is_array()) malformed(line_no, "operands must be an array");
      for (std::size_t k = 0; k < ops.size(); ++k) {
        instr.operands.push_back(parse_operand(
            get_string(ops[k], line_no, "operand"), instr.opcode, k, f.state_vars));
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kMalformedLine &&
          e.detail().rfind("line ", 0) != 0) {
        malformed(line_no, e.detail());
      }
      throw;
    }
    if (ji.contains("raw")) instr.raw = get_string(ji["raw"], line_no, "raw");
    f.instructions.push_back(std::move(instr));
  }

  const json& blocks = obj["blocks"];
  if (!blocks.is_array()) malformed(line_no, "blocks must be an array");
  for (const auto& jb : blocks) {
    require_keys(jb, {"id", "instrs", "succ"}, {}, line_no, "block");
    BasicBlock b;
    b.id = get_int(jb["id"], line_no, "block id");
    b.instr_indices = get_int_list(jb["instrs"], line_no, "instrs");
    b.successors = get_int_list(jb["succ"], line_no, "succ");
    f.blocks.push_back(std::move(b));
  }

  const json& ast = obj["ast"];
  if (!ast.is_array()) malformed(line_no, "ast must be an array");
  for (const auto& ja : ast) {
    require_keys(ja, {"id", "kind"}, {"parent", "instr"}, line_no, "ast node");
    AstNode n;
    n.id = get_int(ja["id"], line_no, "ast id");
    const auto& kind_text = get_string(ja["kind"], line_no, "kind");
    auto kind = parse_ast_kind(kind_text);
    if (!kind) malformed(line_no, "unknown AST kind '" + kind_text + "'");
    n.kind = *kind;
    n.parent = get_opt_int(ja, "parent", line_no);
    n.instr_index = get_opt_int(ja, "instr", line_no);
    f.ast.push_back(n);
  }
  return out;
}

}  // namespace

bool IrOperand::is_variable() const {
  switch (kind) {
    case OperandKind::kStateVar:
    case OperandKind::kLocalVar:
    case OperandKind::kTempVar:
    case OperandKind::kRefVar:
    case OperandKind::kTupleVar:
      return true;
    default:
      return false;
  }
}

std::string IrOperand::spelling() const {
  if (decl_type) return text + "(" + *decl_type + ")";
  return text;
}

std::string_view to_string(Opcode op) {
  return kOpcodeNames[static_cast<std::size_t>(op)];
}

std::optional<Opcode> parse_opcode(std::string_view text) {
  for (std::size_t k = 0; k < kOpcodeNames.size(); ++k) {
    if (kOpcodeNames[k] == text) return static_cast<Opcode>(k);
  }
  return std::nullopt;
}

std::string_view to_string(AstKind kind) {
  return kAstKindNames[static_cast<std::size_t>(kind)];
}

std::optional<AstKind> parse_ast_kind(std::string_view text) {
  for (std::size_t k = 0; k < kAstKindNames.size(); ++k) {
    if (kAstKindNames[k] == text) return static_cast<AstKind>(k);
  }
  return std::nullopt;
}

std::string_view to_string(Language lang) {
  return lang == Language::kA ? "A" : "B";
}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::kSafe: return "safe";
    case Label::kRE: return "re";
    case Label::kWR: return "wr";
    case Label::kUT: return "ut";
  }
  return "safe";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "safe") return Label::kSafe;
  if (text == "re") return Label::kRE;
  if (text == "wr") return Label::kWR;
  if (text == "ut") return Label::kUT;
  return std::nullopt;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kEmptyInstructions: return "EmptyInstructions";
    case ViolationKind::kNonContiguousIndex: return "NonContiguousIndex";
    case ViolationKind::kMissingLhs: return "MissingLhs";
    case ViolationKind::kUnexpectedLhs: return "UnexpectedLhs";
    case ViolationKind::kInstrNotInBlock: return "InstrNotInBlock";
    case ViolationKind::kInstrInMultipleBlocks: return "InstrInMultipleBlocks";
    case ViolationKind::kDanglingBlockInstr: return "DanglingBlockInstr";
    case ViolationKind::kDuplicateBlockId: return "DuplicateBlockId";
    case ViolationKind::kDanglingSuccessor: return "DanglingSuccessor";
    case ViolationKind::kDuplicateAstId: return "DuplicateAstId";
    case ViolationKind::kNoRoot: return "NoRoot";
    case ViolationKind::kMultipleRoots: return "MultipleRoots";
    case ViolationKind::kRootNotFunction: return "RootNotFunction";
    case ViolationKind::kDanglingParent: return "DanglingParent";
    case ViolationKind::kAstCycle: return "AstCycle";
    case ViolationKind::kDanglingAstInstr: return "DanglingAstInstr";
  }
  return "Unknown";
}

bool is_reference_violation(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kInstrNotInBlock:
    case ViolationKind::kDanglingBlockInstr:
    case ViolationKind::kDanglingSuccessor:
    case ViolationKind::kDanglingParent:
    case ViolationKind::kDanglingAstInstr:
      return true;
    default:
      return false;
  }
}

std::vector<Violation> validate_function(const IrFunction& f) {
  std::vector<Violation> out;
  const int n = static_cast<int>(f.instructions.size());
  if (n == 0) out.push_back({ViolationKind::kEmptyInstructions, -1});

  for (int k = 0; k < n; ++k) {
    const auto& instr = f.instructions[k];
    if (instr.index != k) {
      out.push_back({ViolationKind::kNonContiguousIndex, instr.index});
    }
    if (instr.opcode == Opcode::kAssign && !instr.lhs) {
      out.push_back({ViolationKind::kMissingLhs, instr.index});
    }
    if ((instr.opcode == Opcode::kCondition || instr.opcode == Opcode::kRequire) &&
        instr.lhs) {
      out.push_back({ViolationKind::kUnexpectedLhs, instr.index});
    }
  }

  std::set<int> block_ids;
  std::vector<int> coverage(static_cast<std::size_t>(n), 0);
  for (const auto& b : f.blocks) {
    if (!block_ids.insert(b.id).second) {
      out.push_back({ViolationKind::kDuplicateBlockId, b.id});
    }
    for (int idx : b.instr_indices) {
      if (idx < 0 || idx >= n) {
        out.push_back({ViolationKind::kDanglingBlockInstr, idx});
      } else {
        ++coverage[static_cast<std::size_t>(idx)];
      }
    }
  }
  for (int k = 0; k < n; ++k) {
    if (coverage[k] == 0) out.push_back({ViolationKind::kInstrNotInBlock, k});
    if (coverage[k] > 1) out.push_back({ViolationKind::kInstrInMultipleBlocks, k});
  }
  for (const auto& b : f.blocks) {
    for (int s : b.successors) {
      if (!block_ids.count(s)) out.push_back({ViolationKind::kDanglingSuccessor, s});
    }
  }

  std::unordered_map<int, const AstNode*> by_id;
  for (const auto& node : f.ast) {
    if (!by_id.emplace(node.id, &node).second) {
      out.push_back({ViolationKind::kDuplicateAstId, node.id});
    }
  }
  std::vector<const AstNode*> roots;
  for (const auto& node : f.ast) {
    if (!node.parent) {
      roots.push_back(&node);
    } else if (!by_id.count(*node.parent)) {
      out.push_back({ViolationKind::kDanglingParent, node.id});
    }
    if (node.instr_index && (*node.instr_index < 0 || *node.instr_index >= n)) {
      out.push_back({ViolationKind::kDanglingAstInstr, node.id});
    }
  }
  if (roots.empty()) {
    out.push_back({ViolationKind::kNoRoot, -1});
  } else if (roots.size() > 1) {
    out.push_back({ViolationKind::kMultipleRoots, roots[1]->id});
  } else if (roots.front()->kind != AstKind::kFunction) {
    out.push_back({ViolationKind::kRootNotFunction, roots.front()->id});
  }

  // A parent chain longer than the node count can only be a cycle.
  for (const auto& node : f.ast) {
    const AstNode* cur = &node;
    std::size_t steps = 0;
    while (cur->parent && steps <= f.ast.size()) {
      auto it = by_id.find(*cur->parent);
      if (it == by_id.end()) break;
      cur = it->second;
      ++steps;
    }
    if (steps > f.ast.size()) {
      out.push_back({ViolationKind::kAstCycle, node.id});
      break;
    }
  }
  return out;
}

IrOperand parse_operand(std::string_view text, Opcode op, std::size_t position,
                        const std::vector<StateVar>& state_vars) {
  IrOperand out;
  if (text.empty()) throw Error(ErrorCode::kMalformedLine, "empty operand");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') {
      throw Error(ErrorCode::kMalformedLine,
                  "unterminated string literal " + std::string(text));
    }
    out.kind = OperandKind::kStringLit;
    out.text = std::string(text);
    return out;
  }
  if (is_constant(text)) {
    out.kind = OperandKind::kConstant;
    out.text = std::string(text);
    return out;
  }
  if (is_operator(text)) {
    out.kind = OperandKind::kOperator;
    out.text = std::string(text);
    return out;
  }
  auto split = split_typed_name(text);
  if (!split) {
    throw Error(ErrorCode::kMalformedLine, "bad operand '" + std::string(text) + "'");
  }
  out.text = std::string(split->name);
  out.decl_type = split->type;
  auto callee = callee_position(op);
  if (callee && *callee == position) {
    out.kind = OperandKind::kFunctionName;
  } else if ((op == Opcode::kNewVar && position == 0) ||
             is_elementary_type(split->name)) {
    out.kind = OperandKind::kTypeName;
  } else {
    out.kind = classify_name(split->name, state_vars);
  }
  return out;
}

IrOperand parse_lhs(std::string_view text, const std::vector<StateVar>& state_vars) {
  auto split = split_typed_name(text);
  if (!split) {
    throw Error(ErrorCode::kMalformedLine, "bad lhs '" + std::string(text) + "'");
  }
  IrOperand out;
  out.text = std::string(split->name);
  out.decl_type = split->type;
  out.kind = classify_name(split->name, state_vars);
  return out;
}

std::vector<Contract> parse_ir_dump(std::istream& in) {
  std::vector<Contract> contracts;
  std::map<std::string, std::size_t> index_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(),
                    [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      continue;
    }
    ParsedLine parsed = parse_line(line, line_no);
    IrFunction& f = parsed.function;
    for (const auto& v : validate_function(f)) {
      if (is_reference_violation(v.kind)) {
        throw Error(ErrorCode::kDanglingReference,
                    "line " + std::to_string(line_no) + ": " +
                        std::string(to_string(v.kind)) + " id=" + std::to_string(v.id));
      }
      malformed(line_no, std::string(to_string(v.kind)) + " id=" + std::to_string(v.id));
    }

    auto [it, inserted] = index_of.emplace(f.contract_id, contracts.size());
    if (inserted) {
      Contract c;
      c.contract_id = f.contract_id;
      c.language = f.language;
      c.label = parsed.label;
      contracts.push_back(std::move(c));
    }
    Contract& c = contracts[it->second];
    if (c.language != f.language) {
      malformed(line_no, "contract '" + c.contract_id + "' mixes languages");
    }
    if (c.label != parsed.label) {
      malformed(line_no, "contract '" + c.contract_id + "' has conflicting labels");
    }
    c.functions.push_back(std::move(f));
  }
  return contracts;
}

std::string function_to_json_line(const IrFunction& f,
                                  const std::optional<Label>& label) {
  json obj;
  obj["contract_id"] = f.contract_id;
  obj["language"] = std::string(to_string(f.language));
  obj["function"] = f.name;
  json instrs = json::array();
  for (const auto& instr : f.instructions) {
    json ji;
    ji["i"] = instr.index;
    ji["op"] = std::string(to_string(instr.opcode));
    ji["lhs"] = instr.lhs ? json(instr.lhs->spelling()) : json(nullptr);
    json ops = json::array();
    for (const auto& o : instr.operands) ops.push_back(o.spelling());
    ji["operands"] = std::move(ops);
    ji["raw"] = instr.raw;
    instrs.push_back(std::move(ji));
  }
  obj["instructions"] = std::move(instrs);
  json blocks = json::array();
  for (const auto& b : f.blocks) {
    blocks.push_back({{"id", b.id}, {"instrs", b.instr_indices}, {"succ", b.successors}});
  }
  obj["blocks"] = std::move(blocks);
  json ast = json::array();
  for (const auto& n : f.ast) {
    ast.push_back({{"id", n.id},
                   {"kind", std::string(to_string(n.kind))},
                   {"parent", n.parent ? json(*n.parent) : json(nullptr)},
                   {"instr", n.instr_index ? json(*n.instr_index) : json(nullptr)}});
  }
  obj["ast"] = std::move(ast);
  json svs = json::array();
  for (const auto& [name, type] : f.state_vars) svs.push_back({name, type});
  obj["state_vars"] = std::move(svs);
  obj["label"] = label ? json(std::string(to_string(*label))) : json(nullptr);
  return obj.dump();
}

void write_ir_dump(std::ostream& out, const std::vector<Contract>& contracts) {
  for (const auto& c : contracts) {
    for (const auto& f : c.functions) {
      out << function_to_json_line(f, c.label) << '\n';
    }
  }
}

}  // namespace irbridge
