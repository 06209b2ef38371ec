#pragma once

#include <optional>
#include <string>
#include <vector>

#include "irbridge/autodiff.hpp"
#include "irbridge/error.hpp"
#include "irbridge/ir_model.hpp"
#include "irbridge/preprocess.hpp"

namespace irbridge {

enum class EdgeKind { kAst, kData, kCtrl };
inline constexpr std::size_t kEdgeKindCount = 3;
std::string_view to_string(EdgeKind kind);

enum class ScopeKind { kState, kLocal, kTemporary, kNone };
inline constexpr std::size_t kScopeKindCount = 4;

// AST kinds occupy 0..kAstKindCount-1; block heads take the next slot.
inline constexpr int kBlockHeadKind = static_cast<int>(kAstKindCount);
inline constexpr std::size_t kNodeKindCount = kAstKindCount + 1;
// Opcodes occupy 0..kOpcodeCount-1; kNoOp marks nodes without an instruction.
inline constexpr int kNoOp = static_cast<int>(kOpcodeCount);

struct GraphNode {
  int id = 0;
  int node_kind = 0;  // AstKind value or kBlockHeadKind
  std::optional<Opcode> op_kind;
  ScopeKind scope_kind = ScopeKind::kNone;
  std::optional<int> instr_index;
  std::optional<int> source_id;  // AST node id or block id

  friend bool operator==(const GraphNode&, const GraphNode&) = default;
};

struct GraphEdge {
  int src = 0;
  int dst = 0;
  EdgeKind kind = EdgeKind::kAst;

  auto operator<=>(const GraphEdge&) const = default;
};

struct IrGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;  // canonical (src, dst, kind) order
  FunctionRef function_ref;

  std::size_t count(EdgeKind kind) const;
};

inline constexpr int kEntryDefinition = -1;

struct DefUse {
  int def = kEntryDefinition;  // instruction index, or kEntryDefinition
  int use = 0;
  std::string var;

  auto operator<=>(const DefUse&) const = default;
};

// Most-recent-prior-definition by instruction index. Uses in an instruction
// resolve before its own definition. State variables read before any write
// link to kEntryDefinition.
std::vector<DefUse> derive_def_use_edges(const IrFunction& f);

// AST nodes in input order, then one block head per basic block. Throws
// kInvalidFunction when validate_function reports anything.
IrGraph build_graph(const IrFunction& f);

ScopeKind scope_of(OperandKind kind);

std::string to_dot(const IrGraph& g);

// Learned lookup tables for the initial node features. Rows: node kinds
// (kNodeKindCount), opcodes plus kNoOp, scope kinds (kNone doubles as the
// missing-scope row).
template <typename T>
struct NodeFeatureTables {
  Matrix<T> node_kind;  // kNodeKindCount x d/2
  Matrix<T> op_kind;    // (kOpcodeCount + 1) x d/4
  Matrix<T> scope_kind; // kScopeKindCount x d/4
};

struct NodeFeatureIndex {
  std::vector<int> node_kind;
  std::vector<int> op_kind;
  std::vector<int> scope_kind;
};

NodeFeatureIndex node_feature_index(const IrGraph& g);

template <typename T>
Matrix<T> init_node_features(const IrGraph& g, const NodeFeatureTables<T>& tables, int d_hie) {
  const auto w0 = tables.node_kind.cols();
  const auto w1 = tables.op_kind.cols();
  const auto w2 = tables.scope_kind.cols();
  if (w0 + w1 + w2 != d_hie) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature table widths " + std::to_string(w0) + "+" + std::to_string(w1) + "+" +
                    std::to_string(w2) + " != " + std::to_string(d_hie));
  }
  const auto idx = node_feature_index(g);
  Matrix<T> out(static_cast<Eigen::Index>(g.nodes.size()), d_hie);
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    const auto r = static_cast<Eigen::Index>(v);
    out.row(r).head(w0) = tables.node_kind.row(idx.node_kind[v]);
    out.row(r).segment(w0, w1) = tables.op_kind.row(idx.op_kind[v]);
    out.row(r).tail(w2) = tables.scope_kind.row(idx.scope_kind[v]);
  }
  return out;
}

}  // namespace irbridge
