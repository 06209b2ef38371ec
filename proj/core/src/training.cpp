#include "irbridge/training.hpp"

#include <cmath>
#include <numeric>

#include "irbridge/graph_builder.hpp"
#include "irbridge/hash.hpp"

namespace irbridge {
namespace {

constexpr double kStdFloor = 1e-6;

std::uint64_t task_salt(Task task) {
  return 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(task) + 1);
}

template <typename T>
Matrix<T> xavier(std::mt19937_64& rng, int rows, int cols) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

template <typename P>
bool all_finite(const P& p) {
  bool ok = true;
  p.visit([&](const std::string&, const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

// Mean z-score of the three complexity measures within `pool`.
std::vector<double> complexity_of(std::span<const PreparedContract* const> pool) {
  const double n = static_cast<double>(pool.size());
  std::vector<double> score(pool.size(), 0.0);
  for (auto field : {&ComplexityMeasures::max_ast_depth, &ComplexityMeasures::distinct_opcodes,
                     &ComplexityMeasures::instruction_count}) {
    double mean = 0.0;
    for (const auto* c : pool) mean += c->complexity.*field;
    mean /= n;
    double ss = 0.0;
    for (const auto* c : pool) ss += (c->complexity.*field - mean) * (c->complexity.*field - mean);
    const double sd = std::sqrt(ss / n);
    if (sd <= 0.0) continue;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      score[k] += (pool[k]->complexity.*field - mean) / sd / 3.0;
    }
  }
  return score;
}

struct Split {
  std::vector<const PreparedContract*> train;
  std::vector<const PreparedContract*> validation;
};

Split split_validation(std::span<const PreparedContract> corpus, double fraction,
                       std::mt19937_64& rng) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = 0;
  if (corpus.size() >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size()))), 1,
        corpus.size() - 1);
  }
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_val ? s.validation : s.train).push_back(&corpus[order[k]]);
  }
  std::sort(s.validation.begin(), s.validation.end());
  if (s.validation.empty()) s.validation = s.train;
  return s;
}

// Stable easiest-first order.
std::vector<const PreparedContract*> by_complexity(std::vector<const PreparedContract*> pool) {
  const auto score = complexity_of(pool);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<const PreparedContract*> out;
  for (auto k : order) out.push_back(pool[k]);
  return out;
}

std::size_t released(std::size_t n, int phase, int phases) {
  return std::max<std::size_t>(
      1, (n * static_cast<std::size_t>(phase) + static_cast<std::size_t>(phases) - 1) /
             static_cast<std::size_t>(phases));
}

template <typename T>
ad::Var stack_contracts(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                        const std::vector<const PreparedContract*>& batch) {
  std::vector<ad::Var> rows;
  rows.reserve(batch.size());
  for (const auto* c : batch) rows.push_back(contract_forward(tape, p, cfg, *c));
  return rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
}

// Cycles through a shuffled copy of `items`, reshuffling at each wrap.
template <typename Item>
class Cycler {
 public:
  Cycler(std::vector<Item> items, std::mt19937_64& rng) : items_(std::move(items)), rng_(rng) {
    std::shuffle(items_.begin(), items_.end(), rng_);
  }
  Item next() {
    if (at_ == items_.size()) {
      std::shuffle(items_.begin(), items_.end(), rng_);
      at_ = 0;
    }
    return items_[at_++];
  }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<Item> items_;
  std::mt19937_64& rng_;
  std::size_t at_ = 0;
};

double validation_mmd(const std::vector<const PreparedContract*>& a,
                      const std::vector<const PreparedContract*>& b, const ModelBundle& bundle) {
  auto features = [&](const std::vector<const PreparedContract*>& pool) {
    Matrix<double> out(static_cast<Eigen::Index>(pool.size()), bundle.encoder_config.feature_dim());
    for (std::size_t k = 0; k < pool.size(); ++k) {
      ad::Tape<float> tape;
      auto bound = bind(tape, bundle.encoder, static_cast<EncoderParams<float>*>(nullptr));
      out.row(static_cast<Eigen::Index>(k)) =
          tape.value(contract_forward(tape, bound, bundle.encoder_config, *pool[k])).cast<double>();
    }
    return out;
  };
  return mmd_loss<double>(features(a), features(b), bundle.train_config.kernel);
}

template <typename T>
Matrix<T> standardized(const Matrix<T>& x, const Classifier<T>& c) {
  return (x.rowwise() - c.input_mean.row(0)).array().rowwise() * c.input_scale.row(0).array();
}

template <typename T>
void fit_standardization(Classifier<T>& c, const Matrix<T>& x) {
  c.input_mean = x.colwise().mean();
  Matrix<T> centered = x.rowwise() - c.input_mean.row(0);
  Matrix<T> var = centered.cwiseProduct(centered).colwise().mean();
  c.input_scale = (var.array().sqrt() + static_cast<T>(kStdFloor)).inverse();
}

// Mean of the per-class mean BCE, so a constant predictor scores log 2
// whatever the class balance.
double balanced_bce(const std::vector<double>& prob, const std::vector<float>& targets) {
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (std::size_t k = 0; k < prob.size(); ++k) {
    const int y = targets[k] > 0.5f ? 1 : 0;
    const double p = std::clamp(prob[k], 1e-12, 1.0 - 1e-12);
    sum[y] += y ? -std::log(p) : -std::log(1.0 - p);
    count[y] += 1.0;
  }
  double total = 0.0;
  int classes = 0;
  for (int y = 0; y < 2; ++y) {
    if (count[y] > 0) {
      total += sum[y] / count[y];
      ++classes;
    }
  }
  return classes ? total / classes : 0.0;
}

std::vector<double> classifier_probabilities(const Matrix<float>& features,
                                             const Classifier<float>& c) {
  ad::Tape<float> tape;
  auto p = bind(tape, c.params, static_cast<ClassifierParams<float>*>(nullptr));
  auto logits = classifier_forward(tape, p, c, tape.constant(features), 0.0, nullptr);
  const auto& z = tape.value(logits);
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-static_cast<double>(z(i, 0))));
  }
  return out;
}

void require_both_classes(const TaskExamples& ex, Task task) {
  const auto pos = std::count(ex.targets.begin(), ex.targets.end(), 1.0f);
  const auto neg = static_cast<long>(ex.targets.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::kSingleClassDataset,
                std::string(to_string(task)) + ": " + std::to_string(pos) + " positive, " +
                    std::to_string(neg) + " negative examples");
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> class_indices(
    const TaskExamples& ex) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < ex.targets.size(); ++k) {
    (ex.targets[k] > 0.5f ? out.first : out.second).push_back(k);
  }
  return out;
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kRE: return "re";
    case Task::kWR: return "wr";
    case Task::kUT: return "ut";
  }
  return "re";
}

std::optional<Task> parse_task(std::string_view text) {
  for (Task t : kAllTasks) {
    if (text == to_string(t)) return t;
  }
  return std::nullopt;
}

Label vulnerable_label(Task task) {
  switch (task) {
    case Task::kRE: return Label::kRE;
    case Task::kWR: return Label::kWR;
    case Task::kUT: return Label::kUT;
  }
  return Label::kRE;
}

// ---------------------------------------------------------------------------

std::vector<TokenSequence> corpus_sequences(std::span<const Contract> corpus) {
  std::vector<TokenSequence> out;
  for (const auto& c : corpus) {
    for (const auto& f : c.functions) out.push_back(normalize_tokens(tokenize_function(f)));
  }
  return out;
}

PreparedContract prepare_contract(const Contract& c, const Vocabulary& vocab,
                                  const EncoderConfig& cfg) {
  PreparedContract out;
  out.contract_id = c.contract_id;
  out.language = c.language;
  out.label = c.label;
  out.complexity = complexity_measures(c);
  for (const auto& f : c.functions) {
    FunctionInput in;
    in.ids = encode_sequence(normalize_tokens(tokenize_function(f)), vocab,
                             static_cast<std::size_t>(cfg.max_length));
    in.graph = build_graph(f);
    out.functions.push_back(std::move(in));
  }
  return out;
}

std::vector<PreparedContract> prepare_corpus(std::span<const Contract> corpus,
                                             const Vocabulary& vocab, const EncoderConfig& cfg) {
  std::vector<PreparedContract> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) out.push_back(prepare_contract(c, vocab, cfg));
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json ClassifierConfig::to_json() const {
  return {{"hidden1", hidden1}, {"hidden2", hidden2}, {"dropout", dropout}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.hidden1 = j.at("hidden1").get<int>();
  c.hidden2 = j.at("hidden2").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

template <typename T>
Classifier<T> init_classifier(int input_dim, const ClassifierConfig& cfg, std::uint64_t seed) {
  if (input_dim <= 0 || cfg.hidden1 <= 0 || cfg.hidden2 <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "classifier dimensions must be positive");
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dropout must lie in [0, 1)");
  }
  std::mt19937_64 rng(seed);
  Classifier<T> c;
  c.params.w1 = xavier<T>(rng, input_dim, cfg.hidden1);
  c.params.b1 = Matrix<T>::Zero(1, cfg.hidden1);
  c.params.w2 = xavier<T>(rng, cfg.hidden1, cfg.hidden2);
  c.params.b2 = Matrix<T>::Zero(1, cfg.hidden2);
  c.params.w3 = xavier<T>(rng, cfg.hidden2, 1);
  c.params.b3 = Matrix<T>::Zero(1, 1);
  c.input_mean = Matrix<T>::Zero(1, input_dim);
  c.input_scale = Matrix<T>::Ones(1, input_dim);
  return c;
}

template <typename T>
ClassifierParamsT<ad::Var> bind(ad::Tape<T>& tape, const ClassifierParams<T>& p,
                                ClassifierParams<T>* grads) {
  ClassifierParamsT<ad::Var> b;
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
ad::Var classifier_forward(ad::Tape<T>& tape, const ClassifierParamsT<ad::Var>& p,
                           const Classifier<T>& c, ad::Var features, double dropout,
                           std::mt19937_64* dropout_rng) {
  const auto d = tape.value(features).cols();
  if (d != c.input_mean.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "classifier input width " + std::to_string(d) +
                                                   " != " + std::to_string(c.input_mean.cols()));
  }
  ad::Var x = tape.add_row(features, tape.constant(-c.input_mean));
  Matrix<T> diag = c.input_scale.row(0).asDiagonal();
  x = tape.matmul(x, tape.constant(std::move(diag)));

  auto drop = [&](ad::Var h) {
    if (!dropout_rng || dropout <= 0.0) return h;
    const auto& v = tape.value(h);
    std::bernoulli_distribution keep(1.0 - dropout);
    Matrix<T> mask(v.rows(), v.cols());
    const T scale = static_cast<T>(1.0 / (1.0 - dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = keep(*dropout_rng) ? scale : T(0);
    }
    return tape.mul(h, tape.constant(std::move(mask)));
  };
  ad::Var h1 = drop(tape.relu(tape.add_row(tape.matmul(x, p.w1), p.b1)));
  ad::Var h2 = drop(tape.relu(tape.add_row(tape.matmul(h1, p.w2), p.b2)));
  return tape.add_row(tape.matmul(h2, p.w3), p.b3);
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (batch_size < 2 || batch_size % 2 != 0) fail("batch size must be even and >= 2");
  if (optimizer != "adam") fail("unsupported optimizer '" + optimizer + "'");
  if (max_epochs < 0 || max_epochs_classifier < 0) fail("negative epoch budget");
  if (!(align_stop > 0.0) || !(classify_stop > 0.0)) fail("stop thresholds must be positive");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (curriculum_phases < 1) fail("at least one curriculum phase");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) fail("validation fraction outside (0, 1)");
  kernel.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"optimizer", optimizer},
          {"max_epochs", max_epochs},
          {"max_epochs_classifier", max_epochs_classifier},
          {"align_stop", align_stop},
          {"classify_stop", classify_stop},
          {"lambda", lambda},
          {"curriculum_phases", curriculum_phases},
          {"validation_fraction", validation_fraction},
          {"seed", seed},
          {"alpha", kernel.alpha},
          {"gamma", kernel.gamma},
          {"classifier", classifier.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.optimizer = j.at("optimizer").get<std::string>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.max_epochs_classifier = j.at("max_epochs_classifier").get<int>();
  c.align_stop = j.at("align_stop").get<double>();
  c.classify_stop = j.at("classify_stop").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.curriculum_phases = j.at("curriculum_phases").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.kernel.alpha = j.at("alpha").get<double>();
  c.kernel.gamma = j.at("gamma").get<double>();
  c.classifier = ClassifierConfig::from_json(j.at("classifier"));
  c.validate();
  return c;
}

nlohmann::json AlignmentTrace::to_json() const {
  return {{"val_mmd", val_mmd}, {"phase", phase}, {"stopped_early", stopped_early},
          {"untrained", untrained}};
}

AlignmentTrace AlignmentTrace::from_json(const nlohmann::json& j) {
  AlignmentTrace t;
  t.val_mmd = j.at("val_mmd").get<std::vector<double>>();
  t.phase = j.at("phase").get<std::vector<int>>();
  t.stopped_early = j.at("stopped_early").get<bool>();
  t.untrained = j.at("untrained").get<bool>();
  return t;
}

std::string ModelBundle::encoder_digest() const {
  std::string payload;
  encoder.visit([&](const std::string& name, const Matrix<float>& m) {
    payload += name;
    payload += ':' + std::to_string(m.rows()) + 'x' + std::to_string(m.cols()) + ':';
    payload.append(reinterpret_cast<const char*>(m.data()),
                   static_cast<std::size_t>(m.size()) * sizeof(float));
  });
  return sha256_hex(payload);
}

ModelBundle init_bundle(const EncoderConfig& enc, const TrainConfig& cfg, std::size_t vocab_size,
                        std::string vocab_hash) {
  cfg.validate();
  ModelBundle b;
  b.encoder_config = enc;
  b.encoder = init_encoder<float>(enc, vocab_size, cfg.seed);
  b.vocab_hash = std::move(vocab_hash);
  b.train_config = cfg;
  b.metadata["aggregation"] = "mean";
  b.metadata["norm_placement"] = "post";
  b.metadata["init_seed"] = cfg.seed;
  return b;
}

// ---------------------------------------------------------------------------

template <typename T>
ad::Var contract_forward(ad::Tape<T>& tape, const BoundEncoder& p, const EncoderConfig& cfg,
                         const PreparedContract& c) {
  if (c.functions.empty()) throw Error(ErrorCode::kEmptyContract, c.contract_id);
  std::vector<ad::Var> rows;
  rows.reserve(c.functions.size());
  for (const auto& f : c.functions) rows.push_back(function_forward(tape, p, cfg, f));
  if (rows.size() == 1) return rows[0];
  return tape.mean_rows(tape.concat_rows(rows));
}

Matrix<float> contract_features(std::span<const PreparedContract> corpus,
                                const EncoderParams<float>& p, const EncoderConfig& cfg) {
  Matrix<float> out(static_cast<Eigen::Index>(corpus.size()), cfg.feature_dim());
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    ad::Tape<float> tape;
    auto bound = bind(tape, p, static_cast<EncoderParams<float>*>(nullptr));
    out.row(static_cast<Eigen::Index>(k)) = tape.value(contract_forward(tape, bound, cfg, corpus[k]));
  }
  return out;
}

// ---------------------------------------------------------------------------

ModelBundle train_alignment(std::span<const PreparedContract> corpus_a,
                            std::span<const PreparedContract> corpus_b, ModelBundle bundle) {
  if (corpus_a.empty() || corpus_b.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "alignment needs both corpora");
  }
  const TrainConfig& cfg = bundle.train_config;
  cfg.validate();
  const EncoderConfig& enc = bundle.encoder_config;
  std::mt19937_64 rng(cfg.seed);
  const Split split_a = split_validation(corpus_a, cfg.validation_fraction, rng);
  const Split split_b = split_validation(corpus_b, cfg.validation_fraction, rng);
  const auto sorted_a = by_complexity(split_a.train);
  const auto sorted_b = by_complexity(split_b.train);

  AlignmentTrace trace;
  trace.val_mmd.push_back(validation_mmd(split_a.validation, split_b.validation, bundle));
  trace.phase.push_back(0);
  bundle.metadata["stage1_validation"] = {{"a", split_a.validation.size()},
                                          {"b", split_b.validation.size()}};
  if (cfg.max_epochs == 0) {
    trace.untrained = true;
    bundle.trace = trace;
    return bundle;
  }

  const int phases = cfg.curriculum_phases;
  const std::size_t half = static_cast<std::size_t>(cfg.batch_size / 2);
  Adam<EncoderParams<float>> adam(bundle.encoder, cfg.learning_rate);
  int phase = 1;
  int phase_epochs = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const int phase_budget = std::max(1, cfg.max_epochs / phases);
    std::vector<const PreparedContract*> pool_a(
        sorted_a.begin(), sorted_a.begin() + static_cast<std::ptrdiff_t>(released(sorted_a.size(), phase, phases)));
    std::vector<const PreparedContract*> pool_b(
        sorted_b.begin(), sorted_b.begin() + static_cast<std::ptrdiff_t>(released(sorted_b.size(), phase, phases)));
    Cycler<const PreparedContract*> ca(pool_a, rng);
    Cycler<const PreparedContract*> cb(pool_b, rng);
    const std::size_t steps = (std::max(pool_a.size(), pool_b.size()) + half - 1) / half;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const PreparedContract*> batch_a, batch_b;
      for (std::size_t i = 0; i < half; ++i) {
        batch_a.push_back(ca.next());
        batch_b.push_back(cb.next());
      }
      ad::Tape<float> tape;
      EncoderParams<float> grads = zeros_like(bundle.encoder);
      auto bound = bind(tape, bundle.encoder, &grads);
      ad::Var s = stack_contracts(tape, bound, enc, batch_a);
      ad::Var v = stack_contracts(tape, bound, enc, batch_b);
      ad::Var loss = mmd_loss(tape, s, v, cfg.kernel);
      const float value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        bundle.trace = trace;
        throw NonFiniteLossError("stage-1 loss at epoch " + std::to_string(epoch), bundle);
      }
      tape.backward(loss);
      if (!all_finite(grads)) {
        bundle.trace = trace;
        throw NonFiniteLossError("stage-1 gradient at epoch " + std::to_string(epoch), bundle);
      }
      adam.step(bundle.encoder, grads);
    }

    const double val = validation_mmd(split_a.validation, split_b.validation, bundle);
    trace.val_mmd.push_back(val);
    trace.phase.push_back(phase);
    ++phase_epochs;
    if (val < cfg.align_stop) {
      if (phase == phases) {
        trace.stopped_early = true;
        break;
      }
      ++phase;
      phase_epochs = 0;
    } else if (phase < phases && phase_epochs >= phase_budget) {
      ++phase;
      phase_epochs = 0;
    }
  }
  bundle.trace = trace;
  bundle.aligned = true;
  bundle.metadata["stage1_epochs"] = trace.val_mmd.size() - 1;
  return bundle;
}

TaskExamples task_examples(std::span<const PreparedContract> labeled, Task task) {
  TaskExamples ex;
  const Label positive = vulnerable_label(task);
  for (const auto& c : labeled) {
    if (!c.label) continue;
    if (*c.label == Label::kSafe) {
      ex.contracts.push_back(&c);
      ex.targets.push_back(0.0f);
    } else if (*c.label == positive) {
      ex.contracts.push_back(&c);
      ex.targets.push_back(1.0f);
    }
  }
  return ex;
}

ModelBundle train_classifier(std::span<const PreparedContract> labeled, ModelBundle bundle,
                             Task task) {
  const TrainConfig& cfg = bundle.train_config;
  cfg.validate();
  const TaskExamples ex = task_examples(labeled, task);
  require_both_classes(ex, task);
  const std::string before = bundle.encoder_digest();

  Matrix<float> features(static_cast<Eigen::Index>(ex.contracts.size()),
                         bundle.encoder_config.feature_dim());
  for (std::size_t k = 0; k < ex.contracts.size(); ++k) {
    features.row(static_cast<Eigen::Index>(k)) =
        contract_features(std::span(ex.contracts[k], 1), bundle.encoder, bundle.encoder_config);
  }

  const std::uint64_t seed = cfg.seed ^ task_salt(task);
  Classifier<float> clf = init_classifier<float>(static_cast<int>(features.cols()), cfg.classifier, seed);
  fit_standardization(clf, features);
  std::mt19937_64 rng(seed + 1);
  auto [pos, neg] = class_indices(ex);
  Cycler<std::size_t> cpos(pos, rng);
  Cycler<std::size_t> cneg(neg, rng);
  const std::size_t half = static_cast<std::size_t>(cfg.batch_size / 2);
  const std::size_t steps = std::max<std::size_t>(1, (ex.targets.size() + 2 * half - 1) / (2 * half));
  Adam<ClassifierParams<float>> adam(clf.params, cfg.learning_rate);

  int epochs = 0;
  double loss = balanced_bce(classifier_probabilities(features, clf), ex.targets);
  while (epochs < cfg.max_epochs_classifier && loss >= cfg.classify_stop) {
    for (std::size_t step = 0; step < steps; ++step) {
      Matrix<float> x(static_cast<Eigen::Index>(2 * half), features.cols());
      std::vector<float> y;
      for (std::size_t i = 0; i < 2 * half; ++i) {
        const std::size_t k = i < half ? cpos.next() : cneg.next();
        x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(k));
        y.push_back(ex.targets[k]);
      }
      ad::Tape<float> tape;
      ClassifierParams<float> grads = clf.params;
      grads.visit([](const std::string&, Matrix<float>& m) { m.setZero(); });
      auto bound = bind(tape, clf.params, &grads);
      ad::Var logits = classifier_forward(tape, bound, clf, tape.constant(std::move(x)),
                                          cfg.classifier.dropout, &rng);
      ad::Var l = tape.bce_with_logits(logits, std::move(y));
      if (!std::isfinite(tape.value(l)(0, 0))) {
        throw NonFiniteLossError("stage-2 loss for " + std::string(to_string(task)), bundle);
      }
      tape.backward(l);
      adam.step(clf.params, grads);
    }
    ++epochs;
    loss = balanced_bce(classifier_probabilities(features, clf), ex.targets);
  }

  if (bundle.encoder_digest() != before) {
    throw Error(ErrorCode::kFrozenViolation, "encoder changed while training " + std::string(to_string(task)));
  }
  bundle.classifiers[task] = std::move(clf);
  bundle.frozen = true;
  bundle.metadata["stage2"][std::string(to_string(task))] = {
      {"epochs", epochs}, {"loss", loss}, {"examples", ex.targets.size()}, {"encoder_digest", before}};
  return bundle;
}

ModelBundle train_joint_baseline(std::span<const PreparedContract> labeled_a,
                                 std::span<const PreparedContract> unlabeled_a,
                                 std::span<const PreparedContract> unlabeled_b,
                                 ModelBundle bundle, Task task) {
  const TrainConfig& cfg = bundle.train_config;
  cfg.validate();
  if (unlabeled_a.empty() || unlabeled_b.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "joint baseline needs unlabeled data in both languages");
  }
  const TaskExamples ex = task_examples(labeled_a, task);
  require_both_classes(ex, task);
  const EncoderConfig& enc = bundle.encoder_config;

  auto labeled_features = [&] {
    Matrix<float> f(static_cast<Eigen::Index>(ex.contracts.size()), enc.feature_dim());
    for (std::size_t k = 0; k < ex.contracts.size(); ++k) {
      f.row(static_cast<Eigen::Index>(k)) = contract_features(std::span(ex.contracts[k], 1), bundle.encoder, enc);
    }
    return f;
  };

  const std::uint64_t seed = cfg.seed ^ task_salt(task);
  Classifier<float> clf = init_classifier<float>(enc.feature_dim(), cfg.classifier, seed);
  fit_standardization(clf, labeled_features());
  std::mt19937_64 rng(seed + 2);
  auto [pos, neg] = class_indices(ex);
  Cycler<std::size_t> cpos(pos, rng);
  Cycler<std::size_t> cneg(neg, rng);
  std::vector<const PreparedContract*> ua, ub;
  for (const auto& c : unlabeled_a) ua.push_back(&c);
  for (const auto& c : unlabeled_b) ub.push_back(&c);
  Cycler<const PreparedContract*> cua(ua, rng);
  Cycler<const PreparedContract*> cub(ub, rng);
  const std::size_t half = static_cast<std::size_t>(cfg.batch_size / 2);
  const std::size_t steps = std::max<std::size_t>(1, (ex.targets.size() + 2 * half - 1) / (2 * half));
  Adam<EncoderParams<float>> adam_enc(bundle.encoder, cfg.learning_rate);
  Adam<ClassifierParams<float>> adam_clf(clf.params, cfg.learning_rate);

  int epochs = 0;
  double loss = balanced_bce(classifier_probabilities(labeled_features(), clf), ex.targets);
  while (epochs < cfg.max_epochs_classifier && loss >= cfg.classify_stop) {
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const PreparedContract*> batch;
      std::vector<float> y;
      for (std::size_t i = 0; i < 2 * half; ++i) {
        const std::size_t k = i < half ? cpos.next() : cneg.next();
        batch.push_back(ex.contracts[k]);
        y.push_back(ex.targets[k]);
      }
      ad::Tape<float> tape;
      EncoderParams<float> genc = zeros_like(bundle.encoder);
      ClassifierParams<float> gclf = clf.params;
      gclf.visit([](const std::string&, Matrix<float>& m) { m.setZero(); });
      auto benc = bind(tape, bundle.encoder, &genc);
      auto bclf = bind(tape, clf.params, &gclf);
      ad::Var feats = stack_contracts(tape, benc, enc, batch);
      ad::Var l = tape.bce_with_logits(
          classifier_forward(tape, bclf, clf, feats, cfg.classifier.dropout, &rng), std::move(y));
      if (cfg.lambda > 0.0) {
        std::vector<const PreparedContract*> ba, bb;
        for (std::size_t i = 0; i < half; ++i) {
          ba.push_back(cua.next());
          bb.push_back(cub.next());
        }
        ad::Var mmd = mmd_loss(tape, stack_contracts(tape, benc, enc, ba),
                               stack_contracts(tape, benc, enc, bb), cfg.kernel);
        l = tape.add(l, tape.scale(mmd, static_cast<float>(cfg.lambda)));
      }
      if (!std::isfinite(tape.value(l)(0, 0))) {
        throw NonFiniteLossError("joint loss for " + std::string(to_string(task)), bundle);
      }
      tape.backward(l);
      adam_enc.step(bundle.encoder, genc);
      adam_clf.step(clf.params, gclf);
    }
    ++epochs;
    loss = balanced_bce(classifier_probabilities(labeled_features(), clf), ex.targets);
  }
  bundle.classifiers[task] = std::move(clf);
  bundle.joint = true;
  bundle.frozen = false;
  bundle.metadata["joint"][std::string(to_string(task))] = {
      {"epochs", epochs}, {"loss", loss}, {"lambda", cfg.lambda}};
  return bundle;
}

std::vector<PreparedContract> few_shot_augment(std::span<const PreparedContract> train,
                                               std::span<const PreparedContract> pool,
                                               ShotComposition shots, Task task,
                                               std::uint64_t seed) {
  if (shots.safe < 0 || shots.vulnerable < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative shot count");
  }
  std::vector<std::size_t> safe, vuln;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (!pool[k].label) continue;
    if (*pool[k].label == Label::kSafe) safe.push_back(k);
    if (*pool[k].label == vulnerable_label(task)) vuln.push_back(k);
  }
  if (safe.size() < static_cast<std::size_t>(shots.safe) ||
      vuln.size() < static_cast<std::size_t>(shots.vulnerable)) {
    throw Error(ErrorCode::kInsufficientShots,
                "requested (" + std::to_string(shots.safe) + "," + std::to_string(shots.vulnerable) +
                    "), pool has (" + std::to_string(safe.size()) + "," +
                    std::to_string(vuln.size()) + ")");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(safe.begin(), safe.end(), rng);
  std::shuffle(vuln.begin(), vuln.end(), rng);
  std::vector<PreparedContract> out(train.begin(), train.end());
  for (int k = 0; k < shots.safe; ++k) out.push_back(pool[safe[static_cast<std::size_t>(k)]]);
  for (int k = 0; k < shots.vulnerable; ++k) out.push_back(pool[vuln[static_cast<std::size_t>(k)]]);
  return out;
}

Prediction predict_contract(const PreparedContract& c, const ModelBundle& bundle, Task task) {
  auto it = bundle.classifiers.find(task);
  if (it == bundle.classifiers.end()) {
    throw Error(ErrorCode::kMissingClassifier, "no classifier for task " + std::string(to_string(task)));
  }
  if (c.functions.empty()) throw Error(ErrorCode::kEmptyContract, c.contract_id);
  const Matrix<float> z = contract_features(std::span(&c, 1), bundle.encoder, bundle.encoder_config);
  Prediction p;
  p.probability = classifier_probabilities(z, it->second).front();
  p.vulnerable = p.probability >= 0.5;
  return p;
}

std::vector<Prediction> predict_corpus(std::span<const PreparedContract> corpus,
                                       const ModelBundle& bundle, Task task) {
  std::vector<Prediction> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) out.push_back(predict_contract(c, bundle, task));
  return out;
}

GradientCheckResult gradient_check(const std::function<double()>& loss,
                                   const std::vector<double*>& coordinates,
                                   const std::vector<double>& analytic, double eps, double floor) {
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  if (coordinates.size() != analytic.size()) {
    throw Error(ErrorCode::kInvalidArgument, "coordinate and gradient counts differ");
  }
  GradientCheckResult r;
  for (std::size_t k = 0; k < coordinates.size(); ++k) {
    double* x = coordinates[k];
    const double saved = *x;
    *x = saved + eps;
    const double up = loss();
    *x = saved - eps;
    const double down = loss();
    *x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[k] - numeric) / denom);
    ++r.coordinates;
  }
  return r;
}

#define IRBRIDGE_INSTANTIATE(T)                                                                  \
  template Classifier<T> init_classifier<T>(int, const ClassifierConfig&, std::uint64_t);      \
  template ClassifierParamsT<ad::Var> bind<T>(ad::Tape<T>&, const ClassifierParams<T>&,        \
                                              ClassifierParams<T>*);                           \
  template ad::Var classifier_forward<T>(ad::Tape<T>&, const ClassifierParamsT<ad::Var>&,      \
                                         const Classifier<T>&, ad::Var, double,                \
                                         std::mt19937_64*);                                    \
  template ad::Var contract_forward<T>(ad::Tape<T>&, const BoundEncoder&, const EncoderConfig&, \
                                       const PreparedContract&);

IRBRIDGE_INSTANTIATE(float)
IRBRIDGE_INSTANTIATE(double)

#undef IRBRIDGE_INSTANTIATE

}  // namespace irbridge
