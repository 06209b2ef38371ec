#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "irbridge/ir_model.hpp"

namespace irbridge {

enum class TokenClass { kOperation, kVariable, kTypeAnno, kMarker, kLiteral };

namespace marker {
inline constexpr std::string_view kTmp = "<TMP>";
inline constexpr std::string_view kRef = "<REF>";
inline constexpr std::string_view kTup = "<TUP>";
inline constexpr std::string_view kStr = "<STR>";
inline constexpr std::string_view kSep = "<SEP>";
inline constexpr std::string_view kFn = "<FN>";
inline constexpr std::string_view kBr = "<BR>";
inline constexpr std::string_view kAll[] = {kTmp, kRef, kTup, kStr, kSep, kFn, kBr};
}  // namespace marker

struct Token {
  std::string text;
  TokenClass klass = TokenClass::kVariable;

  friend bool operator==(const Token&, const Token&) = default;
};

struct FunctionRef {
  std::string contract_id;
  std::string function;

  friend bool operator==(const FunctionRef&, const FunctionRef&) = default;
};

struct TokenSequence {
  std::vector<Token> tokens;
  FunctionRef function_ref;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

std::vector<Token> tokenize_instruction(const IrInstruction& instr);

// <FN>, then every instruction in index order. A <BR> precedes each
// instruction that opens a basic block other than the entry block.
TokenSequence tokenize_function(const IrFunction& f);

// Rules, in order: temp/ref/tuple names to markers; strip trailing `_<digits>`
// from other variables; drop string operands of REQUIRE; remaining strings to
// <STR>. Idempotent.
TokenSequence normalize_tokens(const TokenSequence& seq);

// Strips every trailing `_<digits>` group while leaving a non-empty stem.
std::string strip_numeric_suffix(std::string_view name);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<PAD>";
  static constexpr std::string_view kUnkToken = "<UNK>";

  Vocabulary() = default;
  // Builds from tokens in id order; reserved entries must come first.
  static Vocabulary from_tokens(std::vector<std::string> tokens, int min_freq);

  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  int min_freq() const { return min_freq_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Hex SHA-256 over the id-ordered token list and min_freq.
  const std::string& content_hash() const { return hash_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int min_freq_ = 1;
  std::string hash_;
};

// Reserved ids: PAD, UNK, then the seven markers, then remaining tokens by
// (frequency desc, text asc). Throws kEmptyCorpus.
Vocabulary build_vocabulary(std::span<const TokenSequence> corpus, int min_freq = 1);

struct IdSequence {
  std::vector<int> ids;  // padded with PAD up to max_length
  std::size_t length = 0;
  std::size_t max_length = 0;
  bool truncated = false;

  friend bool operator==(const IdSequence&, const IdSequence&) = default;
};

IdSequence encode_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                           std::size_t max_length);

struct ComplexityMeasures {
  double max_ast_depth = 0;
  double distinct_opcodes = 0;
  double instruction_count = 0;
};

ComplexityMeasures complexity_measures(const Contract& c);

struct ComplexityStats {
  ComplexityMeasures mean;
  ComplexityMeasures stddev;  // population standard deviation
};

ComplexityStats complexity_stats(std::span<const Contract> corpus);
double complexity_score(const Contract& c, const ComplexityStats& stats);
std::vector<double> complexity_scores(std::span<const Contract> corpus);

}  // namespace irbridge
