#include "irbridge/encoders.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

constexpr int kSelfLoopKind = static_cast<int>(kEdgeKindCount);
constexpr double kLeakySlope = 0.2;
constexpr double kLayerNormEps = 1e-5;
constexpr double kPositionalScale = 1.0;

template <typename T>
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Matrix<T> xavier(int rows, int cols) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    return fill(rows, cols, u);
  }
  Matrix<T> normal(int rows, int cols, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    return fill(rows, cols, n);
  }

 private:
  template <typename D>
  Matrix<T> fill(int rows, int cols, D& dist) {
    Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
    return m;
  }

  std::mt19937_64 rng_;
};

template <typename T>
Matrix<T> zeros(int rows, int cols) {
  return Matrix<T>::Zero(rows, cols);
}

template <typename T>
Matrix<T> ones(int rows, int cols) {
  return Matrix<T>::Ones(rows, cols);
}

}  // namespace

std::string_view to_string(EncoderView view) {
  switch (view) {
    case EncoderView::kBoth: return "both";
    case EncoderView::kSeqOnly: return "seq-only";
    case EncoderView::kHieOnly: return "hie-only";
  }
  return "both";
}

std::optional<EncoderView> parse_view(std::string_view text) {
  if (text == "both") return EncoderView::kBoth;
  if (text == "seq-only") return EncoderView::kSeqOnly;
  if (text == "hie-only") return EncoderView::kHieOnly;
  return std::nullopt;
}

EncoderConfig EncoderConfig::desk() { return {}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.seq_layers = 6;
  c.heads = 8;
  c.d_seq = 128;
  c.max_length = 512;
  c.hie_layers = 3;
  c.d_hie = 128;
  return c;
}

int EncoderConfig::feature_dim() const {
  switch (view) {
    case EncoderView::kSeqOnly: return d_seq;
    case EncoderView::kHieOnly: return d_hie;
    case EncoderView::kBoth: break;
  }
  return d_seq + d_hie;
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (seq_layers < 0 || hie_layers < 0) fail("negative layer count");
  if (heads <= 0 || d_seq <= 0 || d_seq % heads != 0) fail("d_seq must be a positive multiple of heads");
  if (d_hie <= 0 || d_hie % 4 != 0) fail("d_hie must be a positive multiple of 4");
  if (max_length <= 0) fail("max_length must be positive");
  if (ff_mult <= 0) fail("ff_mult must be positive");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"seq_layers", seq_layers}, {"heads", heads},          {"d_seq", d_seq},
          {"max_length", max_length}, {"ff_mult", ff_mult},      {"hie_layers", hie_layers},
          {"d_hie", d_hie},           {"view", to_string(view)}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.seq_layers = j.at("seq_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_seq = j.at("d_seq").get<int>();
  c.max_length = j.at("max_length").get<int>();
  c.ff_mult = j.at("ff_mult").get<int>();
  c.hie_layers = j.at("hie_layers").get<int>();
  c.d_hie = j.at("d_hie").get<int>();
  auto view = parse_view(j.at("view").get<std::string>());
  if (!view) throw Error(ErrorCode::kInvalidArgument, "unknown encoder view");
  c.view = *view;
  c.validate();
  return c;
}

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& cfg, std::size_t vocab_size,
                              std::uint64_t seed) {
  cfg.validate();
  if (vocab_size == 0) throw Error(ErrorCode::kInvalidArgument, "empty vocabulary");
  Init<T> init(seed);
  EncoderParams<T> p;
  const int d = cfg.d_seq;
  const int ff = cfg.ff_mult * d;
  p.seq.embedding = init.normal(static_cast<int>(vocab_size), d, 1.0);
  p.seq.positional = init.normal(cfg.max_length, d, kPositionalScale);
  for (int l = 0; l < cfg.seq_layers; ++l) {
    SeqLayerT<Matrix<T>> layer;
    layer.wq = init.xavier(d, d);
    layer.bq = zeros<T>(1, d);
    layer.wk = init.xavier(d, d);
    layer.bk = zeros<T>(1, d);
    layer.wv = init.xavier(d, d);
    layer.bv = zeros<T>(1, d);
    layer.wo = init.xavier(d, d);
    layer.bo = zeros<T>(1, d);
    layer.ln1_gain = ones<T>(1, d);
    layer.ln1_bias = zeros<T>(1, d);
    layer.w1 = init.xavier(d, ff);
    layer.b1 = zeros<T>(1, ff);
    layer.w2 = init.xavier(ff, d);
    layer.b2 = zeros<T>(1, d);
    layer.ln2_gain = ones<T>(1, d);
    layer.ln2_bias = zeros<T>(1, d);
    p.seq.layers.push_back(std::move(layer));
  }

  const int h = cfg.d_hie;
  p.hie.node_kind_table = init.normal(static_cast<int>(kNodeKindCount), h / 2, 1.0);
  p.hie.op_table = init.normal(static_cast<int>(kOpcodeCount) + 1, h / 4, 1.0);
  p.hie.scope_table = init.normal(static_cast<int>(kScopeKindCount), h / 4, 1.0);
  for (int l = 0; l < cfg.hie_layers; ++l) {
    HieLayerT<Matrix<T>> layer;
    layer.weight = init.xavier(h, h);
    layer.bias = zeros<T>(1, h);
    layer.att_src = init.xavier(h, 1);
    layer.att_dst = init.xavier(h, 1);
    layer.edge_bias = zeros<T>(kSelfLoopKind + 1, 1);
    p.hie.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
EncoderParams<T> zeros_like(const EncoderParams<T>& p) {
  EncoderParams<T> out = p;
  out.visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
  return out;
}

template <typename T>
BoundEncoder bind(ad::Tape<T>& tape, const EncoderParams<T>& p, EncoderParams<T>* grads) {
  BoundEncoder b;
  b.seq.layers.resize(p.seq.layers.size());
  b.hie.layers.resize(p.hie.layers.size());
  std::vector<ad::Var*> slots;
  b.visit([&](const std::string&, ad::Var& v) { slots.push_back(&v); });
  std::vector<Matrix<T>*> sinks;
  if (grads) grads->visit([&](const std::string&, Matrix<T>& m) { sinks.push_back(&m); });
  std::size_t k = 0;
  p.visit([&](const std::string&, const Matrix<T>& m) {
    *slots[k] = tape.parameter(m, grads ? sinks[k] : nullptr);
    ++k;
  });
  return b;
}

template <typename T>
ad::Var seq_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                    const IdSequence& ids, AttentionTrace<T>* trace) {
  const auto vocab = tape.value(p.seq.embedding).rows();
  std::vector<int> tokens;
  std::vector<int> live;
  int n = 0;
  for (std::size_t k = 0; k < ids.ids.size(); ++k) {
    const int id = ids.ids[k];
    if (id < 0 || id >= vocab) {
      throw Error(ErrorCode::kIdOutOfRange,
                  "token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(vocab));
    }
    if (id != Vocabulary::kPad) n = static_cast<int>(k) + 1;
  }
  // Trailing PAD never contributes (masked keys, unpooled queries), so it is
  // dropped up front.
  for (int k = 0; k < n; ++k) {
    tokens.push_back(ids.ids[static_cast<std::size_t>(k)]);
    if (tokens.back() != Vocabulary::kPad) live.push_back(k);
  }
  if (live.empty()) throw Error(ErrorCode::kInvalidArgument, "sequence has no non-PAD token");
  if (n > tape.value(p.seq.positional).rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "sequence length " + std::to_string(n) + " exceeds positional table");
  }
  std::vector<bool> key_mask(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) key_mask[static_cast<std::size_t>(k)] = tokens[static_cast<std::size_t>(k)] != Vocabulary::kPad;
  const bool masked = static_cast<int>(live.size()) != n;

  const int d = cfg.d_seq;
  const int dh = d / cfg.heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T eps = static_cast<T>(kLayerNormEps);

  ad::Var x = tape.add(tape.gather_rows(p.seq.embedding, tokens),
                       tape.slice_rows(p.seq.positional, 0, n));
  for (const auto& L : p.seq.layers) {
    ad::Var q = tape.add_row(tape.matmul(x, L.wq), L.bq);
    ad::Var k = tape.add_row(tape.matmul(x, L.wk), L.bk);
    ad::Var v = tape.add_row(tape.matmul(x, L.wv), L.bv);
    std::vector<ad::Var> heads;
    for (int h = 0; h < cfg.heads; ++h) {
      ad::Var qh = tape.slice_cols(q, h * dh, dh);
      ad::Var kh = tape.slice_cols(k, h * dh, dh);
      ad::Var vh = tape.slice_cols(v, h * dh, dh);
      ad::Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt),
                                      masked ? &key_mask : nullptr);
      if (trace) trace->seq.push_back(tape.value(att));
      heads.push_back(tape.matmul(att, vh));
    }
    ad::Var mixed = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
    ad::Var o = tape.add_row(tape.matmul(mixed, L.wo), L.bo);
    x = tape.layer_norm_rows(tape.add(x, o), L.ln1_gain, L.ln1_bias, eps);
    ad::Var hidden = tape.relu(tape.add_row(tape.matmul(x, L.w1), L.b1));
    ad::Var f = tape.add_row(tape.matmul(hidden, L.w2), L.b2);
    x = tape.layer_norm_rows(tape.add(x, f), L.ln2_gain, L.ln2_bias, eps);
  }
  if (masked) x = tape.gather_rows(x, live);
  return tape.mean_rows(x);
}

template <typename T>
ad::Var hie_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                    const IrGraph& g, AttentionTrace<T>* trace) {
  if (g.nodes.empty()) throw Error(ErrorCode::kEmptyGraph, "graph has no nodes");
  const int n = static_cast<int>(g.nodes.size());
  const int w0 = static_cast<int>(tape.value(p.hie.node_kind_table).cols());
  const int w1 = static_cast<int>(tape.value(p.hie.op_table).cols());
  const int w2 = static_cast<int>(tape.value(p.hie.scope_table).cols());
  if (w0 + w1 + w2 != cfg.d_hie) {
    throw Error(ErrorCode::kDimensionMismatch, "feature table widths do not sum to d_hie");
  }
  const auto idx = node_feature_index(g);
  const ad::Var parts[] = {tape.gather_rows(p.hie.node_kind_table, idx.node_kind),
                           tape.gather_rows(p.hie.op_table, idx.op_kind),
                           tape.gather_rows(p.hie.scope_table, idx.scope_kind)};
  ad::Var h = tape.concat_cols(parts);

  // Messages flow both ways along every edge, plus one self loop per node.
  std::vector<int> src, dst, kind;
  const std::size_t m = 2 * g.edges.size() + g.nodes.size();
  src.reserve(m);
  dst.reserve(m);
  kind.reserve(m);
  for (const auto& e : g.edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      throw Error(ErrorCode::kIdOutOfRange, "edge endpoint outside graph");
    }
    const int k = static_cast<int>(e.kind);
    src.push_back(e.src); dst.push_back(e.dst); kind.push_back(k);
    src.push_back(e.dst); dst.push_back(e.src); kind.push_back(k);
  }
  for (int v = 0; v < n; ++v) {
    src.push_back(v); dst.push_back(v); kind.push_back(kSelfLoopKind);
  }
  if (trace) trace->hie_targets = dst;

  const T slope = static_cast<T>(kLeakySlope);
  for (const auto& L : p.hie.layers) {
    ad::Var wh = tape.matmul(h, L.weight);
    ad::Var s_src = tape.matmul(wh, L.att_src);
    ad::Var s_dst = tape.matmul(wh, L.att_dst);
    ad::Var logits = tape.add(tape.add(tape.gather_rows(s_src, src), tape.gather_rows(s_dst, dst)),
                              tape.gather_rows(L.edge_bias, kind));
    ad::Var alpha = tape.segment_softmax(tape.leaky_relu(logits, slope), dst, n);
    if (trace) trace->hie.push_back(tape.value(alpha));
    ad::Var msgs = tape.mul_rows_by_col(tape.gather_rows(wh, src), alpha);
    h = tape.elu(tape.add_row(tape.scatter_add_rows(msgs, dst, n), L.bias));
  }
  return tape.mean_rows(h);
}

template <typename T>
ad::Var function_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                         const FunctionInput& in) {
  switch (cfg.view) {
    case EncoderView::kSeqOnly: return seq_forward(tape, p, cfg, in.ids);
    case EncoderView::kHieOnly: return hie_forward(tape, p, cfg, in.graph);
    case EncoderView::kBoth: break;
  }
  const ad::Var parts[] = {seq_forward(tape, p, cfg, in.ids), hie_forward(tape, p, cfg, in.graph)};
  return tape.concat_cols(parts);
}

template <typename T>
FeatureVec<T> seq_encode(const IdSequence& ids, const EncoderParams<T>& p,
                         const EncoderConfig& cfg, AttentionTrace<T>* trace) {
  ad::Tape<T> tape;
  auto b = bind(tape, p, static_cast<EncoderParams<T>*>(nullptr));
  return tape.value(seq_forward(tape, b, cfg, ids, trace));
}

template <typename T>
FeatureVec<T> hie_encode(const IrGraph& g, const EncoderParams<T>& p, const EncoderConfig& cfg,
                         AttentionTrace<T>* trace) {
  ad::Tape<T> tape;
  auto b = bind(tape, p, static_cast<EncoderParams<T>*>(nullptr));
  return tape.value(hie_forward(tape, b, cfg, g, trace));
}

template <typename T>
FeatureVec<T> encode_function(const FunctionInput& in, const EncoderParams<T>& p,
                              const EncoderConfig& cfg) {
  ad::Tape<T> tape;
  auto b = bind(tape, p, static_cast<EncoderParams<T>*>(nullptr));
  return tape.value(function_forward(tape, b, cfg, in));
}

template <typename T>
FeatureVec<T> fuse_features(const FeatureVec<T>& h_seq, const FeatureVec<T>& h_hie, int d_seq,
                            int d_hie) {
  if (h_seq.size() != d_seq || h_hie.size() != d_hie) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(d_seq) + "+" + std::to_string(d_hie) + ", got " +
                    std::to_string(h_seq.size()) + "+" + std::to_string(h_hie.size()));
  }
  FeatureVec<T> z(d_seq + d_hie);
  z << h_seq, h_hie;
  return z;
}

#define IRBRIDGE_INSTANTIATE(T)                                                                 \
  template EncoderParams<T> init_encoder<T>(const EncoderConfig&, std::size_t, std::uint64_t); \
  template EncoderParams<T> zeros_like<T>(const EncoderParams<T>&);                             \
  template BoundEncoder bind<T>(ad::Tape<T>&, const EncoderParams<T>&, EncoderParams<T>*);      \
  template ad::Var seq_forward<T>(ad::Tape<T>&, const BoundEncoder&, const EncoderConfig&,      \
                                  const IdSequence&, AttentionTrace<T>*);                       \
  template ad::Var hie_forward<T>(ad::Tape<T>&, const BoundEncoder&, const EncoderConfig&,      \
                                  const IrGraph&, AttentionTrace<T>*);                          \
  template ad::Var function_forward<T>(ad::Tape<T>&, const BoundEncoder&, const EncoderConfig&, \
                                       const FunctionInput&);                                   \
  template FeatureVec<T> seq_encode<T>(const IdSequence&, const EncoderParams<T>&,              \
                                       const EncoderConfig&, AttentionTrace<T>*);               \
  template FeatureVec<T> hie_encode<T>(const IrGraph&, const EncoderParams<T>&,                 \
                                       const EncoderConfig&, AttentionTrace<T>*);               \
  template FeatureVec<T> encode_function<T>(const FunctionInput&, const EncoderParams<T>&,      \
                                            const EncoderConfig&);                              \
  template FeatureVec<T> fuse_features<T>(const FeatureVec<T>&, const FeatureVec<T>&, int, int);

IRBRIDGE_INSTANTIATE(float)
IRBRIDGE_INSTANTIATE(double)

#undef IRBRIDGE_INSTANTIATE

}  // namespace irbridge
