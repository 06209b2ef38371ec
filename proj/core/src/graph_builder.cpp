#include "irbridge/graph_builder.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

ScopeKind instruction_scope(const IrInstruction& instr) {
  if (instr.lhs) return scope_of(instr.lhs->kind);
  for (const auto& o : instr.operands) {
    if (o.is_variable()) return scope_of(o.kind);
  }
  return ScopeKind::kNone;
}

}  // namespace

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::kAst: return "ast";
    case EdgeKind::kData: return "data";
    case EdgeKind::kCtrl: return "ctrl";
  }
  return "ast";
}

ScopeKind scope_of(OperandKind kind) {
  switch (kind) {
    case OperandKind::kStateVar: return ScopeKind::kState;
    case OperandKind::kLocalVar: return ScopeKind::kLocal;
    case OperandKind::kTempVar:
    case OperandKind::kRefVar:
    case OperandKind::kTupleVar:
      return ScopeKind::kTemporary;
    default:
      return ScopeKind::kNone;
  }
}

std::size_t IrGraph::count(EdgeKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      edges.begin(), edges.end(), [kind](const GraphEdge& e) { return e.kind == kind; }));
}

std::vector<DefUse> derive_def_use_edges(const IrFunction& f) {
  std::vector<DefUse> out;
  std::map<std::string, int> last_def;
  for (const auto& instr : f.instructions) {
    for (const auto& o : instr.operands) {
      if (!o.is_variable()) continue;
      auto it = last_def.find(o.text);
      if (it != last_def.end()) {
        out.push_back({it->second, instr.index, o.text});
      } else if (o.kind == OperandKind::kStateVar) {
        out.push_back({kEntryDefinition, instr.index, o.text});
      }
    }
    if (instr.lhs && instr.lhs->is_variable()) last_def[instr.lhs->text] = instr.index;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

IrGraph build_graph(const IrFunction& f) {
  auto violations = validate_function(f);
  if (!violations.empty()) {
    std::string detail = f.contract_id + "::" + f.name + ":";
    for (const auto& v : violations) {
      detail += " " + std::string(to_string(v.kind)) + "(" + std::to_string(v.id) + ")";
    }
    throw Error(ErrorCode::kInvalidFunction, detail);
  }

  IrGraph g;
  g.function_ref = {f.contract_id, f.name};
  std::unordered_map<int, int> graph_id_of_ast;
  std::unordered_map<int, int> node_of_instr;
  int root = 0;
  for (const auto& a : f.ast) {
    GraphNode n;
    n.id = static_cast<int>(g.nodes.size());
    n.node_kind = static_cast<int>(a.kind);
    n.source_id = a.id;
    n.instr_index = a.instr_index;
    if (a.instr_index) {
      const auto& instr = f.instructions[static_cast<std::size_t>(*a.instr_index)];
      n.op_kind = instr.opcode;
      n.scope_kind = instruction_scope(instr);
      node_of_instr.emplace(*a.instr_index, n.id);
    }
    if (!a.parent) root = n.id;
    graph_id_of_ast.emplace(a.id, n.id);
    g.nodes.push_back(n);
  }

  std::unordered_map<int, int> head_of_block;
  for (const auto& b : f.blocks) {
    GraphNode n;
    n.id = static_cast<int>(g.nodes.size());
    n.node_kind = kBlockHeadKind;
    n.source_id = b.id;
    if (!b.instr_indices.empty()) {
      int first = *std::min_element(b.instr_indices.begin(), b.instr_indices.end());
      n.op_kind = f.instructions[static_cast<std::size_t>(first)].opcode;
    }
    head_of_block.emplace(b.id, n.id);
    g.nodes.push_back(n);
  }

  for (const auto& a : f.ast) {
    if (a.parent) {
      g.edges.push_back(
          {graph_id_of_ast.at(*a.parent), graph_id_of_ast.at(a.id), EdgeKind::kAst});
    }
  }
  for (const auto& du : derive_def_use_edges(f)) {
    auto use_it = node_of_instr.find(du.use);
    if (use_it == node_of_instr.end()) continue;
    int src = root;
    if (du.def != kEntryDefinition) {
      auto def_it = node_of_instr.find(du.def);
      if (def_it == node_of_instr.end()) continue;
      src = def_it->second;
    }
    if (src != use_it->second) g.edges.push_back({src, use_it->second, EdgeKind::kData});
  }
  for (const auto& b : f.blocks) {
    for (int s : b.successors) {
      g.edges.push_back({head_of_block.at(b.id), head_of_block.at(s), EdgeKind::kCtrl});
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

NodeFeatureIndex node_feature_index(const IrGraph& g) {
  NodeFeatureIndex idx;
  for (const auto& n : g.nodes) {
    idx.node_kind.push_back(n.node_kind);
    idx.op_kind.push_back(n.op_kind ? static_cast<int>(*n.op_kind) : kNoOp);
    idx.scope_kind.push_back(static_cast<int>(n.scope_kind));
  }
  return idx;
}

std::string to_dot(const IrGraph& g) {
  std::ostringstream os;
  os << "digraph \"" << g.function_ref.contract_id << "::" << g.function_ref.function
     << "\" {\n";
  for (const auto& n : g.nodes) {
    os << "  n" << n.id << " [label=\"";
    if (n.node_kind == kBlockHeadKind) {
      os << "BlockHead";
    } else {
      os << to_string(static_cast<AstKind>(n.node_kind));
    }
    if (n.op_kind) os << "\\n" << to_string(*n.op_kind);
    os << "\"];\n";
  }
  for (const auto& e : g.edges) {
    os << "  n" << e.src << " -> n" << e.dst << " [kind=" << to_string(e.kind) << "];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace irbridge
