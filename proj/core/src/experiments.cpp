#include "irbridge/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

std::vector<Contract> pick(const std::vector<Contract>& all, const std::vector<std::size_t>& idx) {
  std::vector<Contract> out;
  out.reserve(idx.size());
  for (auto k : idx) out.push_back(all[k]);
  return out;
}

double last_mmd(const ModelBundle& b) {
  return b.aligned && !b.trace.val_mmd.empty() ? b.trace.val_mmd.back()
                                               : std::numeric_limits<double>::quiet_NaN();
}

template <typename F>
double mean_of(const std::vector<MetricsReport>& reports, F f) {
  if (reports.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : reports) total += f(r);
  return total / static_cast<double>(reports.size());
}

std::string number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

}  // namespace

ContractSplit split_contracts(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  ContractSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Workspace make_workspace(SynthCorpus corpus, const EncoderConfig& enc, const TrainConfig& train) {
  enc.validate();
  train.validate();
  if (corpus.a.size() != corpus.b.size() || corpus.a.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "paired corpora required");
  }
  Workspace ws;
  ws.encoder = enc;
  ws.train = train;
  ws.split = split_contracts(corpus.a.size(), kTrainFraction, train.seed);
  const auto b_train = pick(corpus.b, ws.split.train);
  const auto b_test = pick(corpus.b, ws.split.test);
  auto sequences = corpus_sequences(corpus.a);
  const auto extra = corpus_sequences(b_train);
  sequences.insert(sequences.end(), extra.begin(), extra.end());
  ws.vocab = build_vocabulary(sequences);
  ws.a = prepare_corpus(corpus.a, ws.vocab, enc);
  for (auto k : ws.split.train) ws.a_train.push_back(ws.a[k]);
  ws.b_train = prepare_corpus(b_train, ws.vocab, enc);
  ws.b_test = prepare_corpus(b_test, ws.vocab, enc);
  ws.corpus = std::move(corpus);
  return ws;
}

ModelBundle untrained_bundle(const Workspace& ws, EncoderView view) {
  EncoderConfig enc = ws.encoder;
  enc.view = view;
  return init_bundle(enc, ws.train, ws.vocab.size(), ws.vocab.content_hash());
}

ModelBundle align(const Workspace& ws, ModelBundle bundle) {
  return train_alignment(ws.a, ws.b_train, std::move(bundle));
}

ModelBundle classify(const Workspace& ws, ModelBundle bundle, ShotComposition shots) {
  for (Task task : kAllTasks) {
    if (shots.safe == 0 && shots.vulnerable == 0) {
      bundle = train_classifier(ws.a_train, std::move(bundle), task);
    } else {
      const auto augmented = few_shot_augment(ws.a_train, ws.b_train, shots, task, ws.train.seed);
      bundle = train_classifier(augmented, std::move(bundle), task);
    }
  }
  return bundle;
}

MetricsReport evaluate_task(const Workspace& ws, const ModelBundle& bundle, Task task,
                            const std::string& fingerprint) {
  const TaskExamples ex = task_examples(ws.b_test, task);
  std::vector<ScoredExample> scores;
  for (std::size_t k = 0; k < ex.contracts.size(); ++k) {
    scores.push_back({predict_contract(*ex.contracts[k], bundle, task).probability, ex.targets[k] > 0.5f});
  }
  return detection_metrics(scores, std::string(to_string(task)), fingerprint);
}

std::vector<MetricsReport> evaluate_target(const Workspace& ws, const ModelBundle& bundle,
                                           const std::string& fingerprint) {
  std::vector<MetricsReport> out;
  for (Task task : kAllTasks) out.push_back(evaluate_task(ws, bundle, task, fingerprint));
  return out;
}

double macro_error(const std::vector<MetricsReport>& reports) {
  return mean_of(reports, [](const MetricsReport& r) { return r.fpr + r.fnr; });
}
double macro_fnr(const std::vector<MetricsReport>& reports) {
  return mean_of(reports, [](const MetricsReport& r) { return r.fnr; });
}
double macro_fpr(const std::vector<MetricsReport>& reports) {
  return mean_of(reports, [](const MetricsReport& r) { return r.fpr; });
}

std::vector<MetricsReport> run_joint(const Workspace& ws) {
  std::vector<MetricsReport> out;
  for (Task task : kAllTasks) {
    ModelBundle b = train_joint_baseline(ws.a_train, ws.a, ws.b_train, untrained_bundle(ws), task);
    out.push_back(evaluate_task(ws, b, task, "joint"));
  }
  return out;
}

std::vector<SweepRow> run_ablation(const Workspace& ws) {
  std::vector<SweepRow> rows;
  for (EncoderView view : {EncoderView::kBoth, EncoderView::kSeqOnly, EncoderView::kHieOnly}) {
    ModelBundle b = classify(ws, align(ws, untrained_bundle(ws, view)));
    const std::string name = view == EncoderView::kBoth ? "full" : std::string(to_string(view));
    rows.push_back({name, last_mmd(b), evaluate_target(ws, b, name)});
  }
  ModelBundle raw = classify(ws, untrained_bundle(ws));
  rows.push_back({"no-alignment", last_mmd(raw), evaluate_target(ws, raw, "no-alignment")});
  return rows;
}

std::vector<SweepRow> run_fewshot(const Workspace& ws, const ModelBundle& aligned,
                                  const std::vector<std::pair<std::string, ShotComposition>>& shots) {
  std::vector<SweepRow> rows;
  for (const auto& [name, composition] : shots) {
    ModelBundle b = classify(ws, aligned, composition);
    rows.push_back({name, last_mmd(b), evaluate_target(ws, b, name)});
  }
  return rows;
}

std::vector<SweepRow> run_grid(const Workspace& ws, const std::vector<double>& alphas,
                               const std::vector<double>& gammas) {
  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    for (double gamma : gammas) {
      Workspace cell = ws;
      cell.train.kernel.alpha = alpha;
      cell.train.kernel.gamma = gamma;
      cell.train.kernel.validate();
      ModelBundle b = classify(cell, align(cell, untrained_bundle(cell)));
      std::ostringstream name;
      name << "alpha=" << alpha << " gamma=" << gamma;
      rows.push_back({name.str(), last_mmd(b), evaluate_target(cell, b, name.str())});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "name,val_mmd,macro_fpr,macro_fnr,macro_error,auc_re,auc_wr,auc_ut\n";
  for (const auto& r : rows) {
    out << r.name << ',' << number(r.val_mmd) << ',' << number(macro_fpr(r.reports)) << ','
        << number(macro_fnr(r.reports)) << ',' << number(macro_error(r.reports));
    for (const auto& m : r.reports) {
      out << ',' << (m.auc ? number(*m.auc) : "");
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace irbridge
