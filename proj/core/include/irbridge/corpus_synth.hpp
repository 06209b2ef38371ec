#pragma once

// Paired two-dialect synthetic corpora. Every contract is rendered once per
// dialect from the same random choices: dialect A keeps modifier calls and
// TMP_ temporaries, dialect B inlines guards, renames temporaries and
// respells a configurable opcode subset.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "irbridge/ir_model.hpp"
#include "irbridge/preprocess.hpp"
#include "irbridge/training.hpp"

namespace irbridge {

enum class PatternCategory {
  kBalanceUpdate,
  kAuthorizationCheck,
  kExternalCall,
  kArrayPush,
  kReentrancyPattern,
  kRandomnessCondition,
};
inline constexpr std::size_t kPatternCategoryCount = 6;
inline constexpr std::array<PatternCategory, kPatternCategoryCount> kAllCategories = {
    PatternCategory::kBalanceUpdate,     PatternCategory::kAuthorizationCheck,
    PatternCategory::kExternalCall,      PatternCategory::kArrayPush,
    PatternCategory::kReentrancyPattern, PatternCategory::kRandomnessCondition};
std::string_view to_string(PatternCategory c);
std::optional<PatternCategory> parse_category(std::string_view text);

struct DialectDivergence {
  std::map<std::string, std::string> respell = {{"PUSH", "INTERNAL_CALL"},
                                                {"MODIFIER_CALL", "INTERNAL_CALL"}};
  bool inline_modifiers = true;
  // Dialect-B temporaries are spelled <temp_prefix><n>, n from temp_offset.
  // Anything but "TMP_" reads back as a local variable.
  std::string temp_prefix = "tmp_";
  int temp_offset = 0;
  bool self_prefix = false;  // state variables spelled self.<name>

  // No divergence at all: both dialects render identically.
  static DialectDivergence none();
};

struct SynthSpec {
  std::uint64_t seed = 7;
  int contracts = 120;  // per dialect
  int min_functions = 4;
  int max_functions = 6;
  // Weights of the six categories when drawing functions beyond the three
  // every contract carries (withdraw, draw, payout).
  std::array<double, kPatternCategoryCount> template_mix = {1, 1, 1, 1, 0, 0};
  double re_rate = 0.2;
  double wr_rate = 0.2;
  double ut_rate = 0.2;
  // Alternatives drawn per identifier slot (1 = one fixed spelling).
  int name_variety = 3;
  DialectDivergence divergence;

  // Throws kInvalidSpec.
  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthCorpus {
  std::vector<Contract> a;
  std::vector<Contract> b;
  std::vector<std::pair<FunctionRef, FunctionRef>> pairs;  // (A function, B function)
  std::map<std::string, Label> labels;                     // by base contract id
  SynthSpec spec;

  // {"pairs": [[a, b]], "labels": {...}, "spec": {...}}; functions are
  // spelled "<contract_id>::<function>".
  nlohmann::json sidecar() const;
};

SynthCorpus generate_corpus(const SynthSpec& spec);

// RE: a HIGH_LEVEL_CALL inserted right before the first state-variable write.
// WR: the state variable feeding the first CONDITION replaced by block data.
// UT: a TRANSFER whose result is never read, inserted before the last
// REQUIRE (or appended). New temporaries are named <temp_prefix><max + 1>.
// Blocks and AST are updated. Throws kNoInjectionSite.
IrFunction inject_vulnerability(const IrFunction& f, Task task, std::uint64_t seed,
                                const std::string& temp_prefix = "TMP_");

struct PatternPair {
  IrFunction a;
  IrFunction b;
  PatternCategory category = PatternCategory::kBalanceUpdate;
};

// `per_category` semantically equivalent (A, B) snippets per category.
std::vector<PatternPair> pattern_pairs(const SynthSpec& spec, int per_category,
                                       std::uint64_t seed);

}  // namespace irbridge
