#include <random>

#include <benchmark/benchmark.h>

#include "irbridge/alignment.hpp"
#include "irbridge/corpus_synth.hpp"
#include "irbridge/encoders.hpp"
#include "irbridge/training.hpp"

namespace {

using namespace irbridge;

Matrix<double> random_batch(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<double> m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

struct Prepared {
  Vocabulary vocab;
  std::vector<PreparedContract> contracts;
};

const Prepared& prepared() {
  static const Prepared p = [] {
    SynthSpec spec;
    spec.contracts = 16;
    const auto corpus = generate_corpus(spec);
    Prepared out;
    out.vocab = build_vocabulary(corpus_sequences(corpus.a));
    out.contracts = prepare_corpus(corpus.a, out.vocab, EncoderConfig::desk());
    return out;
  }();
  return p;
}

void BM_MmdLoss(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix<double> s = random_batch(n, 64, 1), v = random_batch(n, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_loss<double>(s, v, KernelConfig{}));
}
BENCHMARK(BM_MmdLoss)->Arg(8)->Arg(32)->Arg(128);

void BM_MmdOracle(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix<double> s = random_batch(n, 64, 1), v = random_batch(n, 64, 2);
  std::vector<std::vector<double>> rs(static_cast<std::size_t>(n)), rv(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rs[static_cast<std::size_t>(i)].assign(s.row(i).data(), s.row(i).data() + 64);
    rv[static_cast<std::size_t>(i)].assign(v.row(i).data(), v.row(i).data() + 64);
  }
  for (auto _ : state) benchmark::DoNotOptimize(mmd_oracle(rs, rv, KernelConfig{}));
}
BENCHMARK(BM_MmdOracle)->Arg(8)->Arg(32);

void BM_SeqEncode(benchmark::State& state) {
  const auto p = init_encoder<float>(EncoderConfig::desk(), prepared().vocab.size(), 1);
  const auto& f = prepared().contracts[0].functions[0];
  for (auto _ : state) benchmark::DoNotOptimize(seq_encode<float>(f.ids, p, EncoderConfig::desk()));
}
BENCHMARK(BM_SeqEncode);

void BM_HieEncode(benchmark::State& state) {
  const auto p = init_encoder<float>(EncoderConfig::desk(), prepared().vocab.size(), 1);
  const auto& f = prepared().contracts[0].functions[0];
  for (auto _ : state) benchmark::DoNotOptimize(hie_encode<float>(f.graph, p, EncoderConfig::desk()));
}
BENCHMARK(BM_HieEncode);

void BM_ContractFeatures(benchmark::State& state) {
  const auto p = init_encoder<float>(EncoderConfig::desk(), prepared().vocab.size(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(contract_features(prepared().contracts, p, EncoderConfig::desk()));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(prepared().contracts.size()));
}
BENCHMARK(BM_ContractFeatures);

void BM_AlignmentStep(benchmark::State& state) {
  const EncoderConfig cfg = EncoderConfig::desk();
  auto p = init_encoder<float>(cfg, prepared().vocab.size(), 1);
  const auto& c = prepared().contracts;
  for (auto _ : state) {
    ad::Tape<float> tape;
    auto grads = zeros_like(p);
    auto bound = bind(tape, p, &grads);
    std::vector<ad::Var> a, b;
    for (std::size_t k = 0; k < 8; ++k) {
      a.push_back(contract_forward(tape, bound, cfg, c[k]));
      b.push_back(contract_forward(tape, bound, cfg, c[k + 8]));
    }
    ad::Var loss = mmd_loss(tape, tape.concat_rows(a), tape.concat_rows(b), KernelConfig{});
    tape.backward(loss);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_AlignmentStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
