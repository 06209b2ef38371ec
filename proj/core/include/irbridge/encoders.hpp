#pragma once

// Multi-view function encoder: a post-norm Transformer over token ids and a
// relational graph-attention network over IrGraph, fused by concatenation.
// Parameter structs are templated on the slot type so the same layout holds
// tensors (Matrix<T>), gradients, or tape handles (ad::Var).

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "irbridge/autodiff.hpp"
#include "irbridge/graph_builder.hpp"
#include "irbridge/preprocess.hpp"

namespace irbridge {

enum class EncoderView { kBoth, kSeqOnly, kHieOnly };
std::string_view to_string(EncoderView view);
std::optional<EncoderView> parse_view(std::string_view text);

struct EncoderConfig {
  int seq_layers = 2;
  int heads = 4;
  int d_seq = 32;
  int max_length = 128;
  int ff_mult = 4;
  int hie_layers = 2;
  int d_hie = 32;
  EncoderView view = EncoderView::kBoth;

  static EncoderConfig desk();
  static EncoderConfig paper();

  // Width of the feature produced under `view`.
  int feature_dim() const;
  // Throws kInvalidArgument.
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Named (prefix + field) visitation shared by all parameter structs.
#define IRBRIDGE_VISIT(field) f(prefix + #field, s.field)

template <typename M>
struct SeqLayerT {
  M wq, bq, wk, bk, wv, bv, wo, bo;
  M ln1_gain, ln1_bias;
  M w1, b1, w2, b2;
  M ln2_gain, ln2_bias;

  template <typename S, typename F>
  static void visit(S& s, const std::string& prefix, F&& f) {
    IRBRIDGE_VISIT(wq); IRBRIDGE_VISIT(bq); IRBRIDGE_VISIT(wk); IRBRIDGE_VISIT(bk);
    IRBRIDGE_VISIT(wv); IRBRIDGE_VISIT(bv); IRBRIDGE_VISIT(wo); IRBRIDGE_VISIT(bo);
    IRBRIDGE_VISIT(ln1_gain); IRBRIDGE_VISIT(ln1_bias);
    IRBRIDGE_VISIT(w1); IRBRIDGE_VISIT(b1); IRBRIDGE_VISIT(w2); IRBRIDGE_VISIT(b2);
    IRBRIDGE_VISIT(ln2_gain); IRBRIDGE_VISIT(ln2_bias);
  }
};

template <typename M>
struct SeqParamsT {
  M embedding;   // |V| x d_seq
  M positional;  // L x d_seq
  std::vector<SeqLayerT<M>> layers;

  template <typename S, typename F>
  static void visit(S& s, const std::string& prefix, F&& f) {
    IRBRIDGE_VISIT(embedding);
    IRBRIDGE_VISIT(positional);
    for (std::size_t k = 0; k < s.layers.size(); ++k) {
      SeqLayerT<M>::visit(s.layers[k], prefix + "layer" + std::to_string(k) + ".", f);
    }
  }
};

template <typename M>
struct HieLayerT {
  M weight;     // d x d
  M bias;       // 1 x d
  M att_src;    // d x 1
  M att_dst;    // d x 1
  M edge_bias;  // kEdgeKindCount + 1 (self loop) x 1

  template <typename S, typename F>
  static void visit(S& s, const std::string& prefix, F&& f) {
    IRBRIDGE_VISIT(weight); IRBRIDGE_VISIT(bias); IRBRIDGE_VISIT(att_src);
    IRBRIDGE_VISIT(att_dst); IRBRIDGE_VISIT(edge_bias);
  }
};

template <typename M>
struct HieParamsT {
  M node_kind_table;
  M op_table;
  M scope_table;
  std::vector<HieLayerT<M>> layers;

  template <typename S, typename F>
  static void visit(S& s, const std::string& prefix, F&& f) {
    IRBRIDGE_VISIT(node_kind_table);
    IRBRIDGE_VISIT(op_table);
    IRBRIDGE_VISIT(scope_table);
    for (std::size_t k = 0; k < s.layers.size(); ++k) {
      HieLayerT<M>::visit(s.layers[k], prefix + "layer" + std::to_string(k) + ".", f);
    }
  }
};

template <typename M>
struct EncoderParamsT {
  SeqParamsT<M> seq;
  HieParamsT<M> hie;

  template <typename F>
  void visit(F&& f) { visit_all(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_all(*this, f); }

 private:
  template <typename S, typename F>
  static void visit_all(S& s, F& f) {
    SeqParamsT<M>::visit(s.seq, "seq.", f);
    HieParamsT<M>::visit(s.hie, "hie.", f);
  }
};

#undef IRBRIDGE_VISIT

template <typename T>
using SeqParams = SeqParamsT<Matrix<T>>;
template <typename T>
using HieParams = HieParamsT<Matrix<T>>;
template <typename T>
using EncoderParams = EncoderParamsT<Matrix<T>>;
using BoundEncoder = EncoderParamsT<ad::Var>;

template <typename T>
using FeatureVec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

// Xavier-uniform projections, unit-normal token, positional and node
// embeddings, unit layer-norm gains. Deterministic in (config, vocab_size, seed).
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& cfg, std::size_t vocab_size,
                              std::uint64_t seed);

template <typename T>
EncoderParams<T> zeros_like(const EncoderParams<T>& p);

template <typename To, typename From>
EncoderParams<To> cast_params(const EncoderParams<From>& p) {
  EncoderParams<To> out;
  out.seq.layers.resize(p.seq.layers.size());
  out.hie.layers.resize(p.hie.layers.size());
  std::vector<Matrix<To>*> dst;
  out.visit([&](const std::string&, Matrix<To>& m) { dst.push_back(&m); });
  std::size_t k = 0;
  p.visit([&](const std::string&, const Matrix<From>& m) { *dst[k++] = m.template cast<To>(); });
  return out;
}

// Registers every tensor on the tape. With a null `grads` the encoder is
// frozen; otherwise gradients accumulate into the matching tensors of *grads.
template <typename T>
BoundEncoder bind(ad::Tape<T>& tape, const EncoderParams<T>& p, EncoderParams<T>* grads);

template <typename T>
struct AttentionTrace {
  std::vector<Matrix<T>> seq;      // one n x n matrix per (layer, head)
  std::vector<Matrix<T>> hie;      // one E x 1 column per layer
  std::vector<int> hie_targets;    // target node of each of the E messages
};

struct FunctionInput {
  IdSequence ids;
  IrGraph graph;
};

// 1 x d_seq. Throws kIdOutOfRange, kDimensionMismatch (sequence longer than
// the positional table) or kInvalidArgument (no non-PAD token).
template <typename T>
ad::Var seq_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                    const IdSequence& ids, AttentionTrace<T>* trace = nullptr);

// 1 x d_hie. Throws kEmptyGraph.
template <typename T>
ad::Var hie_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                    const IrGraph& g, AttentionTrace<T>* trace = nullptr);

// The function feature under cfg.view: [h_seq, h_hie], h_seq or h_hie.
template <typename T>
ad::Var function_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                         const FunctionInput& in);

// Inference-mode wrappers.
template <typename T>
FeatureVec<T> seq_encode(const IdSequence& ids, const EncoderParams<T>& p,
                         const EncoderConfig& cfg, AttentionTrace<T>* trace = nullptr);
template <typename T>
FeatureVec<T> hie_encode(const IrGraph& g, const EncoderParams<T>& p, const EncoderConfig& cfg,
                         AttentionTrace<T>* trace = nullptr);
template <typename T>
FeatureVec<T> encode_function(const FunctionInput& in, const EncoderParams<T>& p,
                              const EncoderConfig& cfg);

template <typename T>
FeatureVec<T> fuse_features(const FeatureVec<T>& h_seq, const FeatureVec<T>& h_hie,
                            int d_seq, int d_hie);

}  // namespace irbridge
