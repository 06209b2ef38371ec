#pragma once

// Detection metrics, representation probes (pattern cosine, language probe,
// intra-class variance) and their JSON / CSV serializations.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irbridge/corpus_synth.hpp"
#include "irbridge/training.hpp"

namespace irbridge {

struct ScoredExample {
  double probability = 0.0;
  bool positive = false;
};

struct MetricsReport {
  std::string task;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double fpr = 0.0;  // 0 when there are no negatives
  double fnr = 0.0;  // 0 when there are no positives
  std::optional<double> auc;  // absent unless both classes are present
  double f1 = 0.0;
  std::string fingerprint;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Threshold 0.5 (probability >= 0.5 is positive). Throws kEmptyBatch.
MetricsReport detection_metrics(std::span<const ScoredExample> scores, std::string task = "",
                                std::string fingerprint = "");

// Rank AUC with ties counted half. Throws kSingleClass.
double rank_auc(std::span<const ScoredExample> scores);

// Throws kZeroVector, kDimensionMismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct CategorySimilarity {
  PatternCategory category = PatternCategory::kBalanceUpdate;
  int n = 0;
  double before = 0.0;
  double after = 0.0;
};

// Mean cosine of the (A, B) function features per category, in category
// order; categories without pairs are omitted.
std::vector<CategorySimilarity> pattern_similarity_report(std::span<const PatternPair> pairs,
                                                          const Vocabulary& vocab,
                                                          const ModelBundle& before,
                                                          const ModelBundle& after);

// Ridge-penalized logistic regression on unscaled features, trained by
// full-batch gradient descent on a stratified 80/20 split; returns held-out
// accuracy. Throws kSingleLanguage,
// kDimensionMismatch.
double language_probe(const Matrix<double>& features, std::span<const Language> languages,
                      std::uint64_t seed);

// Mean squared distance to the row mean. Throws kTooFewSamples.
double intra_class_variance(const Matrix<double>& batch);

// Normalized-token counts, one row per contract and one column per
// vocabulary entry.
Matrix<double> token_histograms(std::span<const Contract> corpus, const Vocabulary& vocab);

struct ProbeReport {
  std::vector<CategorySimilarity> categories;
  double probe_before = 0.0;
  double probe_after = 0.0;
  double variance_a_before = 0.0;
  double variance_a_after = 0.0;
  double variance_b_before = 0.0;
  double variance_b_after = 0.0;

  nlohmann::json to_json() const;
  // category,n,cos_before,cos_after
  std::string categories_csv() const;
};

// Full probe over prepared dialect corpora and synthetic pattern pairs.
ProbeReport probe_report(std::span<const PreparedContract> corpus_a,
                         std::span<const PreparedContract> corpus_b,
                         std::span<const PatternPair> pairs, const Vocabulary& vocab,
                         const ModelBundle& before, const ModelBundle& after, std::uint64_t seed);

}  // namespace irbridge
