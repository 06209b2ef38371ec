#include "irbridge/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "irbridge/error.hpp"
#include "irbridge/hash.hpp"

namespace irbridge {
namespace {

bool numbered(std::string_view s, std::string_view prefix) {
  if (s.size() <= prefix.size() || s.substr(0, prefix.size()) != prefix) return false;
  return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(prefix.size()), s.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

std::optional<std::string_view> temp_marker(std::string_view s) {
  if (numbered(s, "TMP_")) return marker::kTmp;
  if (numbered(s, "REF_")) return marker::kRef;
  if (numbered(s, "TUP_") || numbered(s, "TUPLE_")) return marker::kTup;
  return std::nullopt;
}

bool is_string_literal(const Token& t) {
  return t.klass == TokenClass::kLiteral && t.text.size() >= 2 && t.text.front() == '"';
}

void push_operand(std::vector<Token>& out, const IrOperand& o) {
  switch (o.kind) {
    case OperandKind::kConstant:
    case OperandKind::kStringLit:
      out.push_back({o.text, TokenClass::kLiteral});
      return;
    case OperandKind::kTypeName:
      out.push_back({o.text, TokenClass::kTypeAnno});
      return;
    case OperandKind::kFunctionName:
    case OperandKind::kOperator:
      out.push_back({o.text, TokenClass::kOperation});
      break;
    default:
      out.push_back({o.text, TokenClass::kVariable});
      break;
  }
  if (o.decl_type) out.push_back({*o.decl_type, TokenClass::kTypeAnno});
}

bool is_reserved(std::string_view t) {
  if (t == Vocabulary::kPadToken || t == Vocabulary::kUnkToken) return true;
  return std::find(std::begin(marker::kAll), std::end(marker::kAll), t) !=
         std::end(marker::kAll);
}

std::string vocab_hash(const std::vector<std::string>& tokens, int min_freq) {
  std::string payload = "vocab-v1\n" + std::to_string(min_freq) + "\n";
  for (const auto& t : tokens) {
    payload += t;
    payload += '\n';
  }
  return sha256_hex(payload);
}

int ast_depth(const IrFunction& f) {
  std::unordered_map<int, const AstNode*> by_id;
  for (const auto& n : f.ast) by_id.emplace(n.id, &n);
  int best = 0;
  for (const auto& n : f.ast) {
    int depth = 1;
    const AstNode* cur = &n;
    while (cur->parent && depth <= static_cast<int>(f.ast.size())) {
      auto it = by_id.find(*cur->parent);
      if (it == by_id.end()) break;
      cur = it->second;
      ++depth;
    }
    best = std::max(best, depth);
  }
  return best;
}

}  // namespace

std::vector<Token> tokenize_instruction(const IrInstruction& instr) {
  std::vector<Token> out;
  out.push_back({std::string(to_string(instr.opcode)), TokenClass::kOperation});
  if (instr.lhs) push_operand(out, *instr.lhs);
  for (const auto& o : instr.operands) push_operand(out, o);
  out.push_back({std::string(marker::kSep), TokenClass::kMarker});
  return out;
}

TokenSequence tokenize_function(const IrFunction& f) {
  std::set<int> block_starts;
  for (const auto& b : f.blocks) {
    if (!b.instr_indices.empty()) {
      block_starts.insert(*std::min_element(b.instr_indices.begin(), b.instr_indices.end()));
    }
  }
  TokenSequence seq;
  seq.function_ref = {f.contract_id, f.name};
  seq.tokens.push_back({std::string(marker::kFn), TokenClass::kMarker});
  for (const auto& instr : f.instructions) {
    if (instr.index != 0 && block_starts.count(instr.index)) {
      seq.tokens.push_back({std::string(marker::kBr), TokenClass::kMarker});
    }
    auto toks = tokenize_instruction(instr);
    seq.tokens.insert(seq.tokens.end(), toks.begin(), toks.end());
  }
  return seq;
}

std::string strip_numeric_suffix(std::string_view name) {
  std::string_view s = name;
  while (true) {
    auto us = s.rfind('_');
    if (us == std::string_view::npos || us == 0 || us + 1 == s.size()) break;
    auto tail = s.substr(us + 1);
    if (!std::all_of(tail.begin(), tail.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      break;
    }
    s = s.substr(0, us);
  }
  return std::string(s);
}

TokenSequence normalize_tokens(const TokenSequence& seq) {
  TokenSequence out;
  out.function_ref = seq.function_ref;
  out.tokens.reserve(seq.tokens.size());

  bool at_instr_start = true;
  bool in_require = false;
  for (const auto& tok : seq.tokens) {
    if (tok.klass == TokenClass::kMarker &&
        (tok.text == marker::kFn || tok.text == marker::kBr)) {
      out.tokens.push_back(tok);
      continue;
    }
    if (at_instr_start) {
      in_require = tok.klass == TokenClass::kOperation &&
                   tok.text == to_string(Opcode::kRequire);
      at_instr_start = false;
    }
    if (tok.klass == TokenClass::kMarker && tok.text == marker::kSep) {
      at_instr_start = true;
      out.tokens.push_back(tok);
      continue;
    }

    Token t = tok;
    if (t.klass == TokenClass::kVariable) {
      if (auto m = temp_marker(t.text)) {
        t = {std::string(*m), TokenClass::kMarker};
      } else {
        t.text = strip_numeric_suffix(t.text);
      }
    } else if (is_string_literal(t)) {
      if (in_require) continue;
      t = {std::string(marker::kStr), TokenClass::kMarker};
    }
    out.tokens.push_back(std::move(t));
  }
  return out;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int min_freq) {
  if (tokens.size() < 2 + std::size(marker::kAll) || tokens[0] != kPadToken ||
      tokens[1] != kUnkToken) {
    throw Error(ErrorCode::kVocabMismatch, "vocabulary lacks reserved entries");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.min_freq_ = min_freq;
  for (std::size_t k = 0; k < v.tokens_.size(); ++k) {
    if (!v.ids_.emplace(v.tokens_[k], static_cast<int>(k)).second) {
      throw Error(ErrorCode::kVocabMismatch, "duplicate token '" + v.tokens_[k] + "'");
    }
  }
  v.hash_ = vocab_hash(v.tokens_, min_freq);
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(int id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

nlohmann::json Vocabulary::to_json() const {
  return {{"version", 1}, {"tokens", tokens_}, {"min_freq", min_freq_}, {"hash", hash_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("tokens")) {
    throw Error(ErrorCode::kVocabMismatch, "unsupported vocabulary file");
  }
  auto v = from_tokens(j.at("tokens").get<std::vector<std::string>>(),
                       j.value("min_freq", 1));
  if (j.contains("hash") && j.at("hash").get<std::string>() != v.hash_) {
    throw Error(ErrorCode::kVocabMismatch, "vocabulary hash does not match its tokens");
  }
  return v;
}

Vocabulary build_vocabulary(std::span<const TokenSequence> corpus, int min_freq) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "no token sequences");
  std::unordered_map<std::string, long> freq;
  for (const auto& seq : corpus) {
    for (const auto& t : seq.tokens) {
      if (!is_reserved(t.text)) ++freq[t.text];
    }
  }
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = {std::string(Vocabulary::kPadToken),
                                     std::string(Vocabulary::kUnkToken)};
  for (auto m : marker::kAll) tokens.emplace_back(m);
  for (auto& [text, count] : ranked) {
    if (count >= min_freq) tokens.push_back(std::move(text));
  }
  return Vocabulary::from_tokens(std::move(tokens), min_freq);
}

IdSequence encode_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                           std::size_t max_length) {
  IdSequence out;
  out.max_length = max_length;
  out.truncated = seq.tokens.size() > max_length;
  out.length = std::min(seq.tokens.size(), max_length);
  out.ids.assign(max_length, Vocabulary::kPad);
  for (std::size_t k = 0; k < out.length; ++k) out.ids[k] = vocab.id(seq.tokens[k].text);
  return out;
}

ComplexityMeasures complexity_measures(const Contract& c) {
  ComplexityMeasures m;
  std::set<Opcode> opcodes;
  for (const auto& f : c.functions) {
    m.max_ast_depth = std::max(m.max_ast_depth, static_cast<double>(ast_depth(f)));
    m.instruction_count += static_cast<double>(f.instructions.size());
    for (const auto& instr : f.instructions) opcodes.insert(instr.opcode);
  }
  m.distinct_opcodes = static_cast<double>(opcodes.size());
  return m;
}

ComplexityStats complexity_stats(std::span<const Contract> corpus) {
  ComplexityStats s;
  if (corpus.empty()) return s;
  std::vector<ComplexityMeasures> all;
  all.reserve(corpus.size());
  for (const auto& c : corpus) all.push_back(complexity_measures(c));
  const double n = static_cast<double>(all.size());
  auto fold = [&](double ComplexityMeasures::*field, double& mean, double& sd) {
    double sum = 0;
    for (const auto& m : all) sum += m.*field;
    mean = sum / n;
    double ss = 0;
    for (const auto& m : all) ss += (m.*field - mean) * (m.*field - mean);
    sd = std::sqrt(ss / n);
  };
  fold(&ComplexityMeasures::max_ast_depth, s.mean.max_ast_depth, s.stddev.max_ast_depth);
  fold(&ComplexityMeasures::distinct_opcodes, s.mean.distinct_opcodes,
       s.stddev.distinct_opcodes);
  fold(&ComplexityMeasures::instruction_count, s.mean.instruction_count,
       s.stddev.instruction_count);
  return s;
}

double complexity_score(const Contract& c, const ComplexityStats& stats) {
  const auto m = complexity_measures(c);
  auto z = [](double x, double mean, double sd) { return sd > 0 ? (x - mean) / sd : 0.0; };
  return (z(m.max_ast_depth, stats.mean.max_ast_depth, stats.stddev.max_ast_depth) +
          z(m.distinct_opcodes, stats.mean.distinct_opcodes, stats.stddev.distinct_opcodes) +
          z(m.instruction_count, stats.mean.instruction_count,
            stats.stddev.instruction_count)) /
         3.0;
}

std::vector<double> complexity_scores(std::span<const Contract> corpus) {
  const auto stats = complexity_stats(corpus);
  std::vector<double> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) out.push_back(complexity_score(c, stats));
  return out;
}

}  // namespace irbridge
