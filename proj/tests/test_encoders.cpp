#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "irbridge/corpus_synth.hpp"
#include "irbridge/encoders.hpp"
#include "irbridge/error.hpp"
#include "irbridge/training.hpp"

namespace irbridge {
namespace {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

EncoderConfig toy() {
  EncoderConfig c;
  c.seq_layers = 1;
  c.heads = 1;
  c.d_seq = 8;
  c.max_length = 64;
  c.hie_layers = 1;
  c.d_hie = 8;
  return c;
}

Rows to_rows(const Matrix<double>& m) {
  Rows out(static_cast<std::size_t>(m.rows()), Row(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

Rows affine(const Rows& x, const Matrix<double>& w, const Matrix<double>& b) {
  Rows out(x.size(), Row(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][static_cast<std::size_t>(k)] * w(k, j);
      out[i][static_cast<std::size_t>(j)] = s;
    }
  return out;
}

Rows layer_norm(const Rows& x, const Matrix<double>& g, const Matrix<double>& b) {
  Rows out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v / n;
    for (double v : x[i]) var += (v - mean) * (v - mean) / n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g(0, static_cast<Eigen::Index>(j)) + b(0, static_cast<Eigen::Index>(j));
  }
  return out;
}

Row mean_rows(const Rows& x) {
  Row out(x[0].size(), 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j] / static_cast<double>(x.size());
  return out;
}

// Textbook post-norm transformer over the unpadded prefix.
Row seq_oracle(const std::vector<int>& ids, const EncoderParams<double>& p, const EncoderConfig& cfg) {
  std::vector<std::size_t> live;
  Rows x;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ids.size(); ++t) if (ids[t] != Vocabulary::kPad) n = t + 1;
  for (std::size_t t = 0; t < n; ++t) {
    Row r(static_cast<std::size_t>(cfg.d_seq));
    for (int j = 0; j < cfg.d_seq; ++j) r[static_cast<std::size_t>(j)] = p.seq.embedding(ids[t], j) + p.seq.positional(static_cast<Eigen::Index>(t), j);
    x.push_back(r);
    if (ids[t] != Vocabulary::kPad) live.push_back(t);
  }
  const int dh = cfg.d_seq / cfg.heads;
  for (const auto& L : p.seq.layers) {
    const Rows q = affine(x, L.wq, L.bq), k = affine(x, L.wk, L.bk), v = affine(x, L.wv, L.bv);
    Rows mixed(n, Row(static_cast<std::size_t>(cfg.d_seq), 0.0));
    for (int h = 0; h < cfg.heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> s(n, -INFINITY);
        double mx = -INFINITY;
        for (std::size_t u : live) {
          double dot = 0;
          for (int j = h * dh; j < (h + 1) * dh; ++j) dot += q[t][static_cast<std::size_t>(j)] * k[u][static_cast<std::size_t>(j)];
          s[u] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (std::size_t u : live) z += std::exp(s[u] - mx);
        for (std::size_t u : live) {
          const double a = std::exp(s[u] - mx) / z;
          for (int j = h * dh; j < (h + 1) * dh; ++j) mixed[t][static_cast<std::size_t>(j)] += a * v[u][static_cast<std::size_t>(j)];
        }
      }
    }
    Rows o = affine(mixed, L.wo, L.bo);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < o[t].size(); ++j) o[t][j] += x[t][j];
    x = layer_norm(o, L.ln1_gain, L.ln1_bias);
    Rows hidden = affine(x, L.w1, L.b1);
    for (auto& r : hidden)
      for (auto& e : r) e = std::max(0.0, e);
    Rows f = affine(hidden, L.w2, L.b2);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < f[t].size(); ++j) f[t][j] += x[t][j];
    x = layer_norm(f, L.ln2_gain, L.ln2_bias);
  }
  Rows kept;
  for (std::size_t t : live) kept.push_back(x[t]);
  return mean_rows(kept);
}

// Relational GAT: both edge directions plus self loops, per-target softmax.
Row hie_oracle(const IrGraph& g, const EncoderParams<double>& p) {
  const auto idx = node_feature_index(g);
  Rows h;
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    Row r;
    for (Eigen::Index j = 0; j < p.hie.node_kind_table.cols(); ++j) r.push_back(p.hie.node_kind_table(idx.node_kind[v], j));
    for (Eigen::Index j = 0; j < p.hie.op_table.cols(); ++j) r.push_back(p.hie.op_table(idx.op_kind[v], j));
    for (Eigen::Index j = 0; j < p.hie.scope_table.cols(); ++j) r.push_back(p.hie.scope_table(idx.scope_kind[v], j));
    h.push_back(r);
  }
  struct Msg { std::size_t src, dst; int kind; };
  std::vector<Msg> msgs;
  for (const auto& e : g.edges) {
    msgs.push_back({static_cast<std::size_t>(e.src), static_cast<std::size_t>(e.dst), static_cast<int>(e.kind)});
    msgs.push_back({static_cast<std::size_t>(e.dst), static_cast<std::size_t>(e.src), static_cast<int>(e.kind)});
  }
  for (std::size_t v = 0; v < g.nodes.size(); ++v) msgs.push_back({v, v, static_cast<int>(kEdgeKindCount)});
  for (const auto& L : p.hie.layers) {
    const Rows wh = affine(h, L.weight, Matrix<double>::Zero(1, L.weight.cols()));
    std::vector<double> logit(msgs.size());
    for (std::size_t m = 0; m < msgs.size(); ++m) {
      double s = L.edge_bias(msgs[m].kind, 0);
      for (std::size_t j = 0; j < wh[0].size(); ++j)
        s += wh[msgs[m].src][j] * L.att_src(static_cast<Eigen::Index>(j), 0) + wh[msgs[m].dst][j] * L.att_dst(static_cast<Eigen::Index>(j), 0);
      logit[m] = s > 0 ? s : 0.2 * s;
    }
    Rows next(h.size(), Row(wh[0].size(), 0.0));
    for (std::size_t v = 0; v < h.size(); ++v) {
      double mx = -INFINITY, z = 0;
      for (std::size_t m = 0; m < msgs.size(); ++m) if (msgs[m].dst == v) mx = std::max(mx, logit[m]);
      for (std::size_t m = 0; m < msgs.size(); ++m) if (msgs[m].dst == v) z += std::exp(logit[m] - mx);
      for (std::size_t m = 0; m < msgs.size(); ++m) {
        if (msgs[m].dst != v) continue;
        const double a = std::exp(logit[m] - mx) / z;
        for (std::size_t j = 0; j < next[v].size(); ++j) next[v][j] += a * wh[msgs[m].src][j];
      }
      for (std::size_t j = 0; j < next[v].size(); ++j) {
        const double s = next[v][j] + L.bias(0, static_cast<Eigen::Index>(j));
        next[v][j] = s > 0 ? s : std::expm1(s);
      }
    }
    h = next;
  }
  return mean_rows(h);
}

struct Fixture {
  Vocabulary vocab;
  std::vector<PreparedContract> contracts;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SynthSpec spec;
    spec.contracts = 6;
    const auto corpus = generate_corpus(spec);
    Fixture out;
    out.vocab = build_vocabulary(corpus_sequences(corpus.a));
    out.contracts = prepare_corpus(corpus.a, out.vocab, toy());
    return out;
  }();
  return f;
}

template <typename A, typename B>
void expect_near_rows(const A& got, const B& want, double tol) {
  ASSERT_EQ(static_cast<std::size_t>(got.size()), want.size());
  for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(got(static_cast<Eigen::Index>(j)), want[j], tol) << j;
}

TEST(SeqEncoder, MatchesTextbookOracle) {
  EncoderConfig cfg = toy();
  cfg.seq_layers = 2;
  cfg.heads = 2;
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 3);
  for (const auto& c : fixture().contracts) {
    for (const auto& f : c.functions) expect_near_rows(seq_encode<double>(f.ids, p, cfg), seq_oracle(f.ids.ids, p, cfg), 1e-9);
  }
}

TEST(SeqEncoder, MaskedPadInsideSequenceMatchesOracle) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 4);
  IdSequence ids;
  ids.ids = {9, 10, Vocabulary::kPad, 11, Vocabulary::kPad, Vocabulary::kPad};
  ids.length = 4;
  ids.max_length = 6;
  expect_near_rows(seq_encode<double>(ids, p, cfg), seq_oracle(ids.ids, p, cfg), 1e-9);
}

TEST(SeqEncoder, SingleTokenIgnoresTrailingPad) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 5);
  IdSequence one{{12}, 1, 1, false};
  IdSequence padded{{12, 0, 0, 0, 0, 0, 0, 0}, 1, 8, false};
  const auto a = seq_encode<double>(one, p, cfg);
  const auto b = seq_encode<double>(padded, p, cfg);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SeqEncoder, PaddingLengthInvariance) {
  EncoderConfig cfg = EncoderConfig::desk();
  cfg.max_length = 128;
  SynthSpec spec;
  spec.contracts = 4;
  const auto corpus = generate_corpus(spec);
  const Vocabulary vocab = build_vocabulary(corpus_sequences(corpus.a));
  const auto p = init_encoder<float>(cfg, vocab.size(), 7);
  for (const auto& c : corpus.a) {
    for (const auto& f : c.functions) {
      const TokenSequence s = normalize_tokens(tokenize_function(f));
      if (s.tokens.size() > 64) continue;
      const auto a = seq_encode<float>(encode_sequence(s, vocab, 64), p, cfg);
      const auto b = seq_encode<float>(encode_sequence(s, vocab, 128), p, cfg);
      EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5f);
    }
  }
}

TEST(SeqEncoder, PositionSensitive) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 6);
  IdSequence ab{{9, 10}, 2, 2, false};
  IdSequence ba{{10, 9}, 2, 2, false};
  EXPECT_GT((seq_encode<double>(ab, p, cfg) - seq_encode<double>(ba, p, cfg)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SeqEncoder, AttentionRowsAreDistributions) {
  const EncoderConfig cfg = EncoderConfig::desk();
  const auto p = init_encoder<float>(cfg, fixture().vocab.size(), 8);
  const auto& f = fixture().contracts[0].functions[0];
  AttentionTrace<float> trace;
  seq_encode<float>(f.ids, p, cfg, &trace);
  ASSERT_EQ(trace.seq.size(), static_cast<std::size_t>(cfg.seq_layers * cfg.heads));
  for (const auto& a : trace.seq) {
    EXPECT_GE(a.minCoeff(), 0.0f);
    for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0f, 1e-5f);
  }
}

TEST(SeqEncoder, OutOfRangeIdRejected) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, 20, 1);
  IdSequence bad{{3, 25}, 2, 2, false};
  try {
    seq_encode<double>(bad, p, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIdOutOfRange);
  }
}

TEST(HieEncoder, MatchesRelationalGatOracle) {
  EncoderConfig cfg = toy();
  cfg.hie_layers = 2;
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 9);
  for (const auto& c : fixture().contracts) {
    for (const auto& f : c.functions) expect_near_rows(hie_encode<double>(f.graph, p, cfg), hie_oracle(f.graph, p), 1e-9);
  }
}

TEST(HieEncoder, SingleNodeUsesSelfLoop) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, 10, 2);
  IrGraph g;
  g.nodes = {GraphNode{}};
  const auto h = hie_encode<double>(g, p, cfg);
  const auto idx = node_feature_index(g);
  Matrix<double> x(1, cfg.d_hie);
  x << p.hie.node_kind_table.row(idx.node_kind[0]), p.hie.op_table.row(idx.op_kind[0]),
      p.hie.scope_table.row(idx.scope_kind[0]);
  Matrix<double> expected = x * p.hie.layers[0].weight + p.hie.layers[0].bias;
  for (Eigen::Index j = 0; j < expected.cols(); ++j) {
    const double s = expected(0, j);
    EXPECT_NEAR(h(j), s > 0 ? s : std::expm1(s), 1e-12);
  }
}

TEST(HieEncoder, NeighborhoodAttentionSumsToOne) {
  const EncoderConfig cfg = EncoderConfig::desk();
  const auto p = init_encoder<float>(cfg, fixture().vocab.size(), 10);
  const auto& g = fixture().contracts[1].functions[0].graph;
  AttentionTrace<float> trace;
  hie_encode<float>(g, p, cfg, &trace);
  ASSERT_EQ(trace.hie.size(), static_cast<std::size_t>(cfg.hie_layers));
  for (const auto& a : trace.hie) {
    std::vector<double> total(g.nodes.size(), 0.0);
    for (std::size_t m = 0; m < trace.hie_targets.size(); ++m) total[static_cast<std::size_t>(trace.hie_targets[m])] += a(static_cast<Eigen::Index>(m), 0);
    for (double t : total) EXPECT_NEAR(t, 1.0, 1e-5);
  }
}

TEST(HieEncoder, NodePermutationInvariance) {
  const EncoderConfig cfg = toy();
  const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 11);
  std::mt19937_64 rng(3);
  for (const auto& c : fixture().contracts) {
    const IrGraph& g = c.functions[0].graph;
    std::vector<int> perm(g.nodes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    IrGraph h = g;
    for (std::size_t v = 0; v < g.nodes.size(); ++v) {
      h.nodes[static_cast<std::size_t>(perm[v])] = g.nodes[v];
      h.nodes[static_cast<std::size_t>(perm[v])].id = perm[v];
    }
    for (auto& e : h.edges) {
      e.src = perm[static_cast<std::size_t>(e.src)];
      e.dst = perm[static_cast<std::size_t>(e.dst)];
    }
    std::sort(h.edges.begin(), h.edges.end());
    EXPECT_LT((hie_encode<double>(g, p, cfg) - hie_encode<double>(h, p, cfg)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(HieEncoder, EmptyGraphRejected) {
  const auto p = init_encoder<double>(toy(), 10, 2);
  try {
    hie_encode<double>(IrGraph{}, p, toy());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyGraph);
  }
}

TEST(Fusion, PaperWidthAndRoundTrip) {
  FeatureVec<double> a = FeatureVec<double>::Random(128);
  FeatureVec<double> b = FeatureVec<double>::Random(128);
  const auto z = fuse_features<double>(a, b, 128, 128);
  EXPECT_EQ(z.size(), 256);
  EXPECT_EQ(z.head(128), a);
  EXPECT_EQ(z.tail(128), b);
  const auto zero = fuse_features<double>(FeatureVec<double>::Zero(128), b, 128, 128);
  EXPECT_TRUE(zero.head(128).isZero(0));
  EXPECT_THROW(fuse_features<double>(a, FeatureVec<double>::Random(64), 128, 128), Error);
}

TEST(Views, AblationWidths) {
  const auto& f = fixture().contracts[0].functions[0];
  for (EncoderView view : {EncoderView::kBoth, EncoderView::kSeqOnly, EncoderView::kHieOnly}) {
    EncoderConfig cfg = toy();
    cfg.view = view;
    const auto p = init_encoder<double>(cfg, fixture().vocab.size(), 12);
    const auto z = encode_function<double>(f, p, cfg);
    EXPECT_EQ(z.size(), cfg.feature_dim());
    if (view == EncoderView::kSeqOnly) EXPECT_EQ(z, seq_encode<double>(f.ids, p, cfg));
    if (view == EncoderView::kHieOnly) EXPECT_EQ(z, hie_encode<double>(f.graph, p, cfg));
  }
}

TEST(Init, DeterministicAndProfiles) {
  const auto a = init_encoder<float>(EncoderConfig::desk(), 50, 1);
  const auto b = init_encoder<float>(EncoderConfig::desk(), 50, 1);
  std::vector<Matrix<float>> ma, mb;
  a.visit([&](const std::string&, const Matrix<float>& m) { ma.push_back(m); });
  b.visit([&](const std::string&, const Matrix<float>& m) { mb.push_back(m); });
  EXPECT_EQ(ma, mb);
  const EncoderConfig paper = EncoderConfig::paper();
  EXPECT_EQ(paper.seq_layers, 6);
  EXPECT_EQ(paper.heads, 8);
  EXPECT_EQ(paper.feature_dim(), 256);
  EXPECT_EQ(EncoderConfig::desk().feature_dim(), 64);
  EncoderConfig bad = toy();
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Gradients, FunctionFeatureMatchesFiniteDifferences) {
  const EncoderConfig cfg = toy();
  auto p = init_encoder<double>(cfg, fixture().vocab.size(), 13);
  const auto& f = fixture().contracts[2].functions[1];
  const Matrix<double> w = Matrix<double>::Random(cfg.feature_dim(), 1);
  auto loss_of = [&](EncoderParams<double>* grads) {
    ad::Tape<double> tape;
    auto b = bind(tape, p, grads);
    ad::Var z = function_forward(tape, b, cfg, f);
    ad::Var l = tape.sum(tape.matmul(z, tape.constant(w)));
    if (grads) tape.backward(l);
    return tape.value(l)(0, 0);
  };
  auto grads = zeros_like(p);
  loss_of(&grads);
  auto [coords, analytic] = sample_coordinates(p, grads, 300, 1);
  const auto r = gradient_check([&] { return loss_of(nullptr); }, coords, analytic, 1e-6);
  EXPECT_GE(r.coordinates, 200u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace irbridge
