#pragma once

// Stage 1 (unsupervised MMD alignment with a complexity curriculum), stage 2
// (per-task classifier over frozen encoders), the joint baseline, few-shot
// augmentation, contract prediction and finite-difference gradient checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irbridge/alignment.hpp"
#include "irbridge/encoders.hpp"
#include "irbridge/error.hpp"
#include "irbridge/preprocess.hpp"

namespace irbridge {

enum class Task { kRE, kWR, kUT };
inline constexpr std::array<Task, 3> kAllTasks = {Task::kRE, Task::kWR, Task::kUT};
std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view text);
Label vulnerable_label(Task task);

// ---------------------------------------------------------------------------
// Inputs

struct PreparedContract {
  std::string contract_id;
  Language language = Language::kA;
  std::optional<Label> label;
  std::vector<FunctionInput> functions;
  ComplexityMeasures complexity;
};

// Normalized token sequences of every function of every contract.
std::vector<TokenSequence> corpus_sequences(std::span<const Contract> corpus);
PreparedContract prepare_contract(const Contract& c, const Vocabulary& vocab,
                                  const EncoderConfig& cfg);
std::vector<PreparedContract> prepare_corpus(std::span<const Contract> corpus,
                                             const Vocabulary& vocab, const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters

struct ClassifierConfig {
  int hidden1 = 64;
  int hidden2 = 32;
  double dropout = 0.3;

  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

template <typename M>
struct ClassifierParamsT {
  M w1, b1, w2, b2, w3, b3;

  template <typename F>
  void visit(F&& f) { visit_all(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_all(*this, f); }

 private:
  template <typename S, typename F>
  static void visit_all(S& s, F& f) {
    f("w1", s.w1); f("b1", s.b1); f("w2", s.w2); f("b2", s.b2); f("w3", s.w3); f("b3", s.b3);
  }
};

template <typename T>
using ClassifierParams = ClassifierParamsT<Matrix<T>>;

// A trained head plus the (fixed) input standardization fitted on its
// training features.
template <typename T>
struct Classifier {
  ClassifierParams<T> params;
  Matrix<T> input_mean;   // 1 x d
  Matrix<T> input_scale;  // 1 x d, multiplies (x - mean)
};

template <typename T>
Classifier<T> init_classifier(int input_dim, const ClassifierConfig& cfg, std::uint64_t seed);

// Logits (n x 1) for row-stacked features. `dropout_rng` enables dropout.
template <typename T>
ad::Var classifier_forward(ad::Tape<T>& tape, const ClassifierParamsT<ad::Var>& p,
                           const Classifier<T>& c, ad::Var features, double dropout,
                           std::mt19937_64* dropout_rng);

template <typename T>
ClassifierParamsT<ad::Var> bind(ad::Tape<T>& tape, const ClassifierParams<T>& p,
                                ClassifierParams<T>* grads);

// ---------------------------------------------------------------------------
// Configuration and bundle

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 16;
  std::string optimizer = "adam";
  int max_epochs = 40;            // stage 1
  int max_epochs_classifier = 300;
  double align_stop = 0.2;
  double classify_stop = 0.5;
  double lambda = 0.5;
  int curriculum_phases = 3;
  double validation_fraction = 0.1;
  std::uint64_t seed = 7;
  KernelConfig kernel;
  ClassifierConfig classifier;

  // Throws kInvalidArgument.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AlignmentTrace {
  std::vector<double> val_mmd;  // entry 0 is the untrained encoder
  std::vector<int> phase;       // curriculum phase of each entry (0 = init)
  bool stopped_early = false;
  bool untrained = false;

  nlohmann::json to_json() const;
  static AlignmentTrace from_json(const nlohmann::json& j);
};

struct ModelBundle {
  EncoderConfig encoder_config;
  EncoderParams<float> encoder;
  std::map<Task, Classifier<float>> classifiers;
  std::string vocab_hash;
  TrainConfig train_config;
  AlignmentTrace trace;
  bool aligned = false;
  bool frozen = false;
  bool joint = false;
  nlohmann::json metadata = nlohmann::json::object();  // seeds, digests, notes

  // SHA-256 over every encoder tensor's name, shape and bytes.
  std::string encoder_digest() const;
};

ModelBundle init_bundle(const EncoderConfig& enc, const TrainConfig& cfg, std::size_t vocab_size,
                        std::string vocab_hash);

// Thrown when a step yields a non-finite loss; carries the parameters as of
// the last finite step.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& detail, ModelBundle last_good)
      : Error(ErrorCode::kNonFiniteLoss, detail), last_good_(std::move(last_good)) {}
  const ModelBundle& last_good() const { return last_good_; }

 private:
  ModelBundle last_good_;
};

// ---------------------------------------------------------------------------
// Features

// Contract feature (1 x feature_dim) = mean of the function features.
template <typename T>
ad::Var contract_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                         const PreparedContract& c);

// Inference-mode contract features, one row per contract.
Matrix<float> contract_features(std::span<const PreparedContract> corpus,
                                const EncoderParams<float>& p, const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Training

// `bundle` supplies the initial encoder. Throws kEmptyCorpus,
// NonFiniteLossError.
ModelBundle train_alignment(std::span<const PreparedContract> corpus_a,
                            std::span<const PreparedContract> corpus_b, ModelBundle bundle);

// Examples labeled safe are negatives, examples labeled with the task's
// vulnerability positives, everything else is skipped.
struct TaskExamples {
  std::vector<const PreparedContract*> contracts;
  std::vector<float> targets;
};
TaskExamples task_examples(std::span<const PreparedContract> labeled, Task task);

// Throws kSingleClassDataset, kFrozenViolation.
ModelBundle train_classifier(std::span<const PreparedContract> labeled, ModelBundle bundle,
                             Task task);

// Encoder and classifier trained together on L_cls + lambda * L_mmd.
ModelBundle train_joint_baseline(std::span<const PreparedContract> labeled_a,
                                 std::span<const PreparedContract> unlabeled_a,
                                 std::span<const PreparedContract> unlabeled_b,
                                 ModelBundle bundle, Task task);

struct ShotComposition {
  int safe = 0;
  int vulnerable = 0;
};

// Source set plus the requested numbers of safe / task-vulnerable target
// contracts, drawn deterministically from `pool`. Throws kInsufficientShots.
std::vector<PreparedContract> few_shot_augment(std::span<const PreparedContract> train,
                                               std::span<const PreparedContract> pool,
                                               ShotComposition shots, Task task,
                                               std::uint64_t seed);

struct Prediction {
  double probability = 0.5;
  bool vulnerable = false;
};

// Throws kMissingClassifier, kEmptyContract.
Prediction predict_contract(const PreparedContract& c, const ModelBundle& bundle, Task task);
std::vector<Prediction> predict_corpus(std::span<const PreparedContract> corpus,
                                       const ModelBundle& bundle, Task task);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences of `loss` at each coordinate against `analytic`.
// Relative error is |a - n| / max(|a|, |n|, floor). Throws kInvalidArgument
// for eps <= 0 or mismatched sizes.
GradientCheckResult gradient_check(const std::function<double()>& loss,
                                   const std::vector<double*>& coordinates,
                                   const std::vector<double>& analytic, double eps,
                                   double floor = 1e-8);

// Up to `count` distinct coordinates of visitable double-precision params,
// spread over every tensor, chosen by seed. Returned with the matching
// entries of `grads`.
template <typename P>
std::pair<std::vector<double*>, std::vector<double>> sample_coordinates(P& params, const P& grads,
                                                                        std::size_t count,
                                                                        std::uint64_t seed) {
  std::vector<double*> all;
  std::vector<double> all_grads;
  params.visit([&](const std::string&, Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) all.push_back(m.data() + i);
  });
  grads.visit([&](const std::string&, const Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) all_grads.push_back(m.data()[i]);
  });
  std::vector<std::size_t> order(all.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  std::pair<std::vector<double*>, std::vector<double>> out;
  for (auto k : order) {
    out.first.push_back(all[k]);
    out.second.push_back(all_grads[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename P, typename T = float>
class Adam {
 public:
  Adam(const P& like, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    like.visit([&](const std::string&, const auto& m) {
      m_.push_back(Matrix<T>::Zero(m.rows(), m.cols()));
      v_.push_back(Matrix<T>::Zero(m.rows(), m.cols()));
    });
  }

  void step(P& params, const P& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    std::vector<const void*> g;
    grads.visit([&](const std::string&, const auto& m) { g.push_back(&m); });
    std::size_t k = 0;
    params.visit([&](const std::string&, auto& w) {
      using Mat = Matrix<T>;
      using S = T;
      const Mat& gk = *static_cast<const Mat*>(g[k]);
      Mat& m = m_[k];
      Mat& v = v_[k];
      m = static_cast<S>(beta1_) * m + static_cast<S>(1.0 - beta1_) * gk;
      v = static_cast<S>(beta2_) * v + static_cast<S>(1.0 - beta2_) * gk.cwiseProduct(gk);
      w.array() -= static_cast<S>(lr_) * (m.array() / static_cast<S>(c1)) /
                   ((v.array() / static_cast<S>(c2)).sqrt() + static_cast<S>(eps_));
      ++k;
    });
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Matrix<T>> m_, v_;
};

}  // namespace irbridge
