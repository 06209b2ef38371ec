#include "irbridge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

constexpr int kProbeIterations = 2000;
constexpr double kProbeLearningRate = 0.5;
// Ridge penalty on the mean log loss; features are used unscaled.
constexpr double kProbePenalty = 0.01;

std::string fixed(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

Matrix<double> features_of(std::span<const PreparedContract> corpus, const ModelBundle& bundle) {
  return contract_features(corpus, bundle.encoder, bundle.encoder_config).cast<double>();
}

std::vector<double> function_feature(const IrFunction& f, const Vocabulary& vocab,
                                     const ModelBundle& bundle) {
  Contract c;
  c.contract_id = f.contract_id;
  c.language = f.language;
  c.functions.push_back(f);
  const PreparedContract p = prepare_contract(c, vocab, bundle.encoder_config);
  const auto row = encode_function<float>(p.functions.front(), bundle.encoder, bundle.encoder_config);
  return {row.data(), row.data() + row.size()};
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"task", task}, {"tp", tp},   {"fp", fp},   {"tn", tn},
                      {"fn", fn},     {"fpr", fpr}, {"fnr", fnr}, {"f1", f1},
                      {"fingerprint", fingerprint}};
  j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json(nullptr);
  return j;
}

std::string MetricsReport::csv_header() { return "task,tp,fp,tn,fn,fpr,fnr,auc,f1,fingerprint"; }

std::string MetricsReport::csv_row() const {
  std::ostringstream out;
  out << task << ',' << tp << ',' << fp << ',' << tn << ',' << fn << ',' << fixed(fpr) << ','
      << fixed(fnr) << ',' << (auc ? fixed(*auc) : "") << ',' << fixed(f1) << ',' << fingerprint;
  return out.str();
}

double rank_auc(std::span<const ScoredExample> scores) {
  std::vector<double> pos, neg;
  for (const auto& s : scores) (s.positive ? pos : neg).push_back(s.probability);
  if (pos.empty() || neg.empty()) throw Error(ErrorCode::kSingleClass, "AUC needs both classes");
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

MetricsReport detection_metrics(std::span<const ScoredExample> scores, std::string task,
                                std::string fingerprint) {
  if (scores.empty()) throw Error(ErrorCode::kEmptyBatch, "no scores");
  MetricsReport r;
  r.task = std::move(task);
  r.fingerprint = std::move(fingerprint);
  for (const auto& s : scores) {
    const bool predicted = s.probability >= 0.5;
    if (s.positive) {
      predicted ? ++r.tp : ++r.fn;
    } else {
      predicted ? ++r.fp : ++r.tn;
    }
  }
  r.fpr = r.fp + r.tn > 0 ? static_cast<double>(r.fp) / (r.fp + r.tn) : 0.0;
  r.fnr = r.fn + r.tp > 0 ? static_cast<double>(r.fn) / (r.fn + r.tp) : 0.0;
  const int denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom > 0 ? 2.0 * r.tp / denom : 0.0;
  try {
    r.auc = rank_auc(scores);
  } catch (const Error&) {
    r.auc.reset();
  }
  return r;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "cosine of unequal lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<CategorySimilarity> pattern_similarity_report(std::span<const PatternPair> pairs,
                                                          const Vocabulary& vocab,
                                                          const ModelBundle& before,
                                                          const ModelBundle& after) {
  std::vector<CategorySimilarity> out;
  for (auto cat : kAllCategories) {
    CategorySimilarity row;
    row.category = cat;
    for (const auto& p : pairs) {
      if (p.category != cat) continue;
      ++row.n;
      row.before += cosine_similarity(function_feature(p.a, vocab, before), function_feature(p.b, vocab, before));
      row.after += cosine_similarity(function_feature(p.a, vocab, after), function_feature(p.b, vocab, after));
    }
    if (row.n == 0) continue;
    row.before /= row.n;
    row.after /= row.n;
    out.push_back(row);
  }
  return out;
}

double language_probe(const Matrix<double>& features, std::span<const Language> languages,
                      std::uint64_t seed) {
  if (static_cast<std::size_t>(features.rows()) != languages.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one language per feature row");
  }
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < languages.size(); ++i) (languages[i] == Language::kA ? a : b).push_back(i);
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::kSingleLanguage, "probe needs both languages");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, test;
  for (auto* group : {&a, &b}) {
    std::shuffle(group->begin(), group->end(), rng);
    const std::size_t n_test = std::max<std::size_t>(1, group->size() / 5);
    test.insert(test.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), group->begin() + static_cast<std::ptrdiff_t>(n_test), group->end());
  }

  const Eigen::Index d = features.cols();
  const double n = static_cast<double>(train.size());
  auto target = [&](std::size_t i) { return languages[i] == Language::kB ? 1.0 : 0.0; };
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double bias = 0.0;
  for (int it = 0; it < kProbeIterations; ++it) {
    Eigen::VectorXd gw = kProbePenalty * w;
    double gb = 0.0;
    for (auto i : train) {
      const auto x = features.row(static_cast<Eigen::Index>(i));
      const double p = 1.0 / (1.0 + std::exp(-(x.dot(w) + bias)));
      gw += (p - target(i)) * x.transpose() / n;
      gb += (p - target(i)) / n;
    }
    w -= kProbeLearningRate * gw;
    bias -= kProbeLearningRate * gb;
  }
  auto row = [&](std::size_t i) { return features.row(static_cast<Eigen::Index>(i)); };
  int correct = 0;
  for (auto i : test) {
    const bool predicted_b = row(i).dot(w) + bias >= 0.0;
    if (predicted_b == (languages[i] == Language::kB)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double intra_class_variance(const Matrix<double>& batch) {
  if (batch.rows() < 2) throw Error(ErrorCode::kTooFewSamples, "variance needs two rows");
  const Eigen::RowVectorXd mean = batch.colwise().mean();
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) total += (batch.row(i) - mean).squaredNorm();
  return total / static_cast<double>(batch.rows());
}

Matrix<double> token_histograms(std::span<const Contract> corpus, const Vocabulary& vocab) {
  Matrix<double> out = Matrix<double>::Zero(static_cast<Eigen::Index>(corpus.size()),
                                            static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    for (const auto& f : corpus[k].functions) {
      for (const auto& t : normalize_tokens(tokenize_function(f)).tokens) {
        out(static_cast<Eigen::Index>(k), vocab.id(t.text)) += 1.0;
      }
    }
  }
  return out;
}

nlohmann::json ProbeReport::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categories) {
    cats.push_back({{"category", to_string(c.category)}, {"n", c.n}, {"before", c.before}, {"after", c.after}});
  }
  return {{"pattern_cosine", cats},
          {"language_probe", {{"before", probe_before}, {"after", probe_after}}},
          {"intra_class_variance",
           {{"A", {{"before", variance_a_before}, {"after", variance_a_after}}},
            {"B", {{"before", variance_b_before}, {"after", variance_b_after}}}}}};
}

std::string ProbeReport::categories_csv() const {
  std::ostringstream out;
  out << "category,n,cos_before,cos_after\n";
  for (const auto& c : categories) {
    out << to_string(c.category) << ',' << c.n << ',' << fixed(c.before) << ',' << fixed(c.after) << '\n';
  }
  return out.str();
}

ProbeReport probe_report(std::span<const PreparedContract> corpus_a,
                         std::span<const PreparedContract> corpus_b,
                         std::span<const PatternPair> pairs, const Vocabulary& vocab,
                         const ModelBundle& before, const ModelBundle& after, std::uint64_t seed) {
  ProbeReport r;
  r.categories = pattern_similarity_report(pairs, vocab, before, after);
  std::vector<Language> langs(corpus_a.size(), Language::kA);
  langs.insert(langs.end(), corpus_b.size(), Language::kB);
  auto run = [&](const ModelBundle& bundle, double& probe, double& var_a, double& var_b) {
    const Matrix<double> fa = features_of(corpus_a, bundle);
    const Matrix<double> fb = features_of(corpus_b, bundle);
    Matrix<double> all(fa.rows() + fb.rows(), fa.cols());
    all << fa, fb;
    probe = language_probe(all, langs, seed);
    var_a = intra_class_variance(fa);
    var_b = intra_class_variance(fb);
  };
  run(before, r.probe_before, r.variance_a_before, r.variance_b_before);
  run(after, r.probe_after, r.variance_a_after, r.variance_b_after);
  return r;
}

}  // namespace irbridge
