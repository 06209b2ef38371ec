#pragma once

// End-to-end runs over a synthetic dialect pair: contract splits, the
// frozen two-stage pipeline, the joint baseline, and the grid, ablation and
// few-shot sweeps that report dialect-B metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "irbridge/corpus_synth.hpp"
#include "irbridge/evaluation.hpp"
#include "irbridge/training.hpp"

namespace irbridge {

inline constexpr double kTrainFraction = 0.6;

struct ContractSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded partition of contract indices; both dialects share it so a B test
// contract's A twin never carries training labels.
ContractSplit split_contracts(std::size_t n, double train_fraction, std::uint64_t seed);

// Everything one experiment needs, prepared once.
struct Workspace {
  SynthCorpus corpus;
  Vocabulary vocab;
  EncoderConfig encoder;
  TrainConfig train;
  ContractSplit split;
  std::vector<PreparedContract> a;        // every dialect-A contract
  std::vector<PreparedContract> a_train;  // labeled source set
  std::vector<PreparedContract> b_train;  // unlabeled target set, few-shot pool
  std::vector<PreparedContract> b_test;   // held out from every stage
};

// Vocabulary from every A contract plus the B training split.
Workspace make_workspace(SynthCorpus corpus, const EncoderConfig& enc, const TrainConfig& train);

ModelBundle untrained_bundle(const Workspace& ws, EncoderView view = EncoderView::kBoth);
// Stage 1 on (all A, B train).
ModelBundle align(const Workspace& ws, ModelBundle bundle);
// Stage 2 for every task on A train plus optional B shots.
ModelBundle classify(const Workspace& ws, ModelBundle bundle, ShotComposition shots = {});

MetricsReport evaluate_task(const Workspace& ws, const ModelBundle& bundle, Task task,
                            const std::string& fingerprint = "");
// One report per task over B test, in task order.
std::vector<MetricsReport> evaluate_target(const Workspace& ws, const ModelBundle& bundle,
                                           const std::string& fingerprint = "");

// Mean over tasks of FPR + FNR.
double macro_error(const std::vector<MetricsReport>& reports);
double macro_fnr(const std::vector<MetricsReport>& reports);
double macro_fpr(const std::vector<MetricsReport>& reports);

// Joint baseline per task, each starting from an untrained encoder.
std::vector<MetricsReport> run_joint(const Workspace& ws);

struct SweepRow {
  std::string name;
  double val_mmd = 0.0;  // last stage-1 validation MMD (NaN when not aligned)
  std::vector<MetricsReport> reports;
};

// Full, seq-only, hie-only, no-alignment.
std::vector<SweepRow> run_ablation(const Workspace& ws);
// Named shot compositions, e.g. {"0-shot", {0,0}}.
std::vector<SweepRow> run_fewshot(const Workspace& ws, const ModelBundle& aligned,
                                  const std::vector<std::pair<std::string, ShotComposition>>& shots);
std::vector<SweepRow> run_grid(const Workspace& ws, const std::vector<double>& alphas,
                               const std::vector<double>& gammas);

// name,val_mmd,macro_fpr,macro_fnr,macro_error,auc_re,auc_wr,auc_ut
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace irbridge
