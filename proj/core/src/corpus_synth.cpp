#include "irbridge/corpus_synth.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <random>
#include <set>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

constexpr std::string_view kCategoryNames[] = {
    "balance_update", "authorization_check", "external_call",
    "array_push",     "reentrancy_pattern",  "randomness_condition"};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Draws from the first `variety` entries of `pool`.
template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& pool, int variety = 1 << 20) {
  const auto n = std::min(pool.size(), static_cast<std::size_t>(std::max(1, variety)));
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return pool[d(rng)];
}

bool is_env(std::string_view name) {
  for (std::string_view p : {"block.", "msg.", "tx."}) {
    if (name.substr(0, p.size()) == p) return true;
  }
  return false;
}

AstKind statement_kind(Opcode op) {
  switch (op) {
    case Opcode::kCondition: return AstKind::kIf;
    case Opcode::kNewVar: return AstKind::kVarDecl;
    case Opcode::kInternalCall:
    case Opcode::kHighLevelCall:
    case Opcode::kLowLevelCall:
    case Opcode::kModifierCall:
    case Opcode::kEventEmit:
    case Opcode::kTransfer:
    case Opcode::kRequire:
    case Opcode::kPush:
      return AstKind::kCall;
    default:
      return AstKind::kExprStmt;
  }
}

int next_ast_id(const IrFunction& f) {
  int id = -1;
  for (const auto& n : f.ast) id = std::max(id, n.id);
  return id + 1;
}

int push_ast(IrFunction& f, AstKind kind, std::optional<int> parent, std::optional<int> instr) {
  const int id = next_ast_id(f);
  f.ast.push_back({id, kind, parent, instr});
  return id;
}

// Statement node for instruction `instr` plus its expression children.
int add_statement_ast(IrFunction& f, int instr, int parent) {
  const auto& in = f.instructions[static_cast<std::size_t>(instr)];
  const int stmt = push_ast(f, statement_kind(in.opcode), parent, instr);
  int holder = stmt;
  if (in.opcode == Opcode::kBinary) holder = push_ast(f, AstKind::kBinaryExpr, stmt, std::nullopt);
  if (in.opcode == Opcode::kUnary) holder = push_ast(f, AstKind::kUnaryExpr, stmt, std::nullopt);
  if (in.lhs) push_ast(f, AstKind::kIdentifier, stmt, std::nullopt);
  for (const auto& o : f.instructions[static_cast<std::size_t>(instr)].operands) {
    if (o.is_variable()) {
      push_ast(f, AstKind::kIdentifier, holder, std::nullopt);
    } else if (o.kind == OperandKind::kConstant || o.kind == OperandKind::kStringLit) {
      push_ast(f, AstKind::kLiteral, holder, std::nullopt);
    }
  }
  return stmt;
}

std::string raw_text(const IrInstruction& in) {
  std::string s;
  if (in.lhs) s = in.lhs->spelling() + " = ";
  s += to_string(in.opcode);
  for (const auto& o : in.operands) s += " " + o.spelling();
  return s;
}

IrInstruction make_instruction(int index, Opcode op, const std::optional<std::string>& lhs,
                               const std::vector<std::string>& operands,
                               const std::vector<StateVar>& state_vars) {
  IrInstruction in;
  in.index = index;
  in.opcode = op;
  if (lhs) in.lhs = parse_lhs(*lhs, state_vars);
  for (std::size_t k = 0; k < operands.size(); ++k) {
    in.operands.push_back(parse_operand(operands[k], op, k, state_vars));
  }
  in.raw = raw_text(in);
  return in;
}

int max_numbered(const IrFunction& f, std::string_view prefix) {
  int best = -1;
  auto scan = [&](const IrOperand& o) {
    if (o.text.size() > prefix.size() && o.text.substr(0, prefix.size()) == prefix) {
      try {
        best = std::max(best, std::stoi(o.text.substr(prefix.size())));
      } catch (const std::exception&) {
      }
    }
  };
  for (const auto& in : f.instructions) {
    if (in.lhs) scan(*in.lhs);
    for (const auto& o : in.operands) scan(o);
  }
  return best;
}

// Inserts `in` at position `at`, shifting later instructions and keeping
// blocks and AST links consistent. The new statement becomes a sibling of
// the statement it displaces.
IrFunction insert_instruction(const IrFunction& f, int at, IrInstruction in) {
  IrFunction out = f;
  const int n = static_cast<int>(f.instructions.size());
  const int anchor = at < n ? at : n - 1;
  for (auto& instr : out.instructions) {
    if (instr.index >= at) ++instr.index;
  }
  in.index = at;
  out.instructions.insert(out.instructions.begin() + at, std::move(in));
  for (auto& b : out.blocks) {
    auto pos = std::find(b.instr_indices.begin(), b.instr_indices.end(), anchor);
    const bool owns = pos != b.instr_indices.end();
    const auto offset = pos - b.instr_indices.begin();
    for (int& idx : b.instr_indices) {
      if (idx >= at) ++idx;
    }
    if (owns) {
      auto where = b.instr_indices.begin() + offset + (at < n ? 0 : 1);
      b.instr_indices.insert(where, at);
    }
  }
  std::optional<int> parent;
  for (auto& node : out.ast) {
    if (node.instr_index && *node.instr_index == anchor && !parent) parent = node.parent;
  }
  for (auto& node : out.ast) {
    if (node.instr_index && *node.instr_index >= at) ++*node.instr_index;
  }
  add_statement_ast(out, at, parent.value_or(out.ast.front().id));
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

struct Dialect {
  Language lang = Language::kA;
  const DialectDivergence* div = nullptr;
};

struct Names {
  std::string balances, owner, seed, winner, players, count, oracle;
  std::string amount, to, new_owner;
  bool guarded_payout = false;
};

Names draw_names(std::mt19937_64& rng, int v) {
  static const std::vector<std::string> balances = {"balances", "deposits", "credits"};
  static const std::vector<std::string> owner = {"owner", "admin"};
  static const std::vector<std::string> seed = {"seed", "secret", "commitment"};
  static const std::vector<std::string> winner = {"winner", "lastWinner"};
  static const std::vector<std::string> players = {"players", "members"};
  static const std::vector<std::string> count = {"count", "total"};
  static const std::vector<std::string> oracle = {"oracle", "registry", "feed"};
  static const std::vector<std::string> amount = {"amount", "value", "wad"};
  static const std::vector<std::string> to = {"to", "recipient", "dst"};
  static const std::vector<std::string> suffix = {"", "", "", "_1", "_2"};
  Names n;
  n.balances = pick(rng, balances, v);
  n.owner = pick(rng, owner, v);
  n.seed = pick(rng, seed, v);
  n.winner = pick(rng, winner, v);
  n.players = pick(rng, players, v);
  n.count = pick(rng, count, v);
  n.oracle = pick(rng, oracle, v);
  n.amount = pick(rng, amount, v) + pick(rng, suffix);
  n.to = pick(rng, to, v) + pick(rng, suffix);
  n.new_owner = "newOwner" + pick(rng, suffix);
  n.guarded_payout = std::bernoulli_distribution(0.5)(rng);
  return n;
}

class FnBuilder {
 public:
  FnBuilder(const std::string& contract_id, const Dialect& d, const Names& names, std::string name)
      : d_(d), names_(names) {
    f_.contract_id = contract_id;
    f_.language = d.lang;
    f_.name = std::move(name);
    const auto sv = [&](const std::string& s) { return state(s); };
    f_.state_vars = {{sv(names.balances), "mapping(address=>uint256)"},
                     {sv(names.owner), "address"},
                     {sv(names.seed), "uint256"},
                     {sv(names.winner), "address"},
                     {sv(names.players), "address[]"},
                     {sv(names.count), "uint256"},
                     {sv(names.oracle), "address"}};
    if (d.lang == Language::kB) {
      temp_prefix_ = d.div->temp_prefix;
      next_tmp_ = d.div->temp_offset;
    }
    const int root = push_ast(f_, AstKind::kFunction, std::nullopt, std::nullopt);
    body_ = push_ast(f_, AstKind::kBlock, root, std::nullopt);
    parent_ = body_;
    current_ = new_block();
  }

  const Names& names() const { return names_; }
  std::string state(const std::string& name) const {
    return d_.lang == Language::kB && d_.div->self_prefix ? "self." + name : name;
  }
  std::string tmp() { return temp_prefix_ + std::to_string(next_tmp_++); }
  const std::string& temp_prefix() const { return temp_prefix_; }
  std::string ref() { return "REF_" + std::to_string(next_ref_++); }

  int new_block() {
    const int id = static_cast<int>(f_.blocks.size());
    f_.blocks.push_back({id, {}, {}});
    return id;
  }
  void enter(int block) { current_ = block; }
  void link(int from, int to) { f_.blocks[static_cast<std::size_t>(from)].successors.push_back(to); }
  int body() const { return body_; }
  void set_parent(int ast_id) { parent_ = ast_id; }
  int block_node(int parent) { return push_ast(f_, AstKind::kBlock, parent, std::nullopt); }

  // Emits with the dialect's opcode respelling applied. Returns the
  // statement's AST id.
  int emit(Opcode op, const std::optional<std::string>& lhs, std::vector<std::string> operands) {
    if (d_.lang == Language::kB) {
      auto it = d_.div->respell.find(std::string(to_string(op)));
      if (it != d_.div->respell.end()) {
        auto to = parse_opcode(it->second);
        if (!to) throw Error(ErrorCode::kInvalidSpec, "respell target " + it->second);
        if (op == Opcode::kPush && *to != Opcode::kPush) {
          operands.insert(operands.begin(), "append");
        }
        op = *to;
      }
    }
    const int index = static_cast<int>(f_.instructions.size());
    f_.instructions.push_back(make_instruction(index, op, lhs, operands, f_.state_vars));
    f_.blocks[static_cast<std::size_t>(current_)].instr_indices.push_back(index);
    return add_statement_ast(f_, index, parent_);
  }

  void guard() {
    if (d_.lang == Language::kB && d_.div->inline_modifiers) {
      const std::string t = tmp();
      emit(Opcode::kBinary, t + "(bool)", {"msg.sender", "==", state(names_.owner)});
      emit(Opcode::kRequire, std::nullopt, {t, "\"not owner\""});
    } else {
      emit(Opcode::kModifierCall, std::nullopt, {"onlyOwner"});
    }
  }

  IrFunction finish() { return std::move(f_); }

 private:
  Dialect d_;
  Names names_;
  IrFunction f_;
  std::string temp_prefix_ = "TMP_";
  int next_tmp_ = 0;
  int next_ref_ = 0;
  int body_ = 0;
  int parent_ = 0;
  int current_ = 0;
};

std::string typed(const std::string& name, const char* type) { return name + "(" + type + ")"; }

void reentrant_call(FnBuilder& b, const std::string& value) {
  b.emit(Opcode::kHighLevelCall, b.tmp() + "(bool)", {"msg.sender", "call", value});
}

// Safe withdraw updates the balance before the external call; with
// `with_call == false` the call is left out entirely (injection base).
IrFunction withdraw(FnBuilder b, bool with_call) {
  const auto& n = b.names();
  const std::string amount = typed(n.amount, "uint256");
  const std::string r = b.ref();
  b.emit(Opcode::kIndexRef, typed(r, "uint256"), {b.state(n.balances), "msg.sender"});
  b.emit(Opcode::kAssign, amount, {r});
  b.emit(Opcode::kAssign, typed(r, "uint256"), {"0"});
  if (with_call) reentrant_call(b, amount);
  b.emit(Opcode::kEventEmit, std::nullopt, {"Withdrawn", "msg.sender", amount});
  return b.finish();
}

IrFunction draw(FnBuilder b) {
  const auto& n = b.names();
  const std::string t0 = b.tmp();
  b.emit(Opcode::kBinary, typed(t0, "uint256"), {b.state(n.seed), "%", "2"});
  const std::string t1 = b.tmp();
  b.emit(Opcode::kBinary, typed(t1, "bool"), {t0, "==", "0"});
  const int cond = b.emit(Opcode::kCondition, std::nullopt, {t1});
  const int then_block = b.new_block();
  const int else_block = b.new_block();
  const int join = b.new_block();
  b.link(0, then_block);
  b.link(0, else_block);
  b.link(then_block, join);
  b.link(else_block, join);
  b.enter(then_block);
  b.set_parent(b.block_node(cond));
  b.emit(Opcode::kAssign, b.state(n.winner), {"msg.sender"});
  b.enter(else_block);
  b.set_parent(b.block_node(cond));
  b.emit(Opcode::kAssign, b.state(n.winner), {b.state(n.owner)});
  b.enter(join);
  b.set_parent(b.body());
  b.emit(Opcode::kReturn, std::nullopt, {b.state(n.winner)});
  return b.finish();
}

// Safe payout requires the transfer's result; `with_transfer == false`
// leaves the transfer out (injection base).
IrFunction payout(FnBuilder b, bool with_transfer) {
  const auto& n = b.names();
  const std::string amount = typed(n.amount, "uint256");
  const std::string to = typed(n.to, "address");
  if (n.guarded_payout) b.guard();
  const std::string t0 = b.tmp();
  b.emit(Opcode::kBinary, typed(t0, "bool"), {amount, ">", "0"});
  std::string checked = t0;
  if (with_transfer) {
    checked = b.tmp();
    b.emit(Opcode::kTransfer, typed(checked, "bool"), {to, amount});
  }
  b.emit(Opcode::kRequire, std::nullopt, {checked, "\"transfer failed\""});
  b.emit(Opcode::kEventEmit, std::nullopt, {"Paid", to, amount});
  return b.finish();
}

IrFunction deposit(FnBuilder b) {
  const auto& n = b.names();
  const std::string r = b.ref();
  b.emit(Opcode::kIndexRef, typed(r, "uint256"), {b.state(n.balances), "msg.sender"});
  const std::string t = b.tmp();
  b.emit(Opcode::kBinary, typed(t, "uint256"), {r, "+", "msg.value"});
  b.emit(Opcode::kAssign, typed(r, "uint256"), {t});
  b.emit(Opcode::kEventEmit, std::nullopt, {"Deposit", "msg.sender", "msg.value"});
  return b.finish();
}

IrFunction set_owner(FnBuilder b) {
  const auto& n = b.names();
  const std::string who = typed(n.new_owner, "address");
  b.guard();
  b.emit(Opcode::kAssign, b.state(n.owner), {who});
  b.emit(Opcode::kEventEmit, std::nullopt, {"OwnerChanged", who});
  return b.finish();
}

IrFunction notify(FnBuilder b) {
  const auto& n = b.names();
  const std::string t = b.tmp();
  b.emit(Opcode::kHighLevelCall, typed(t, "bool"),
         {b.state(n.oracle), "update", typed(n.amount, "uint256")});
  b.emit(Opcode::kRequire, std::nullopt, {t});
  b.emit(Opcode::kReturn, std::nullopt, {t});
  return b.finish();
}

IrFunction register_player(FnBuilder b) {
  const auto& n = b.names();
  b.emit(Opcode::kPush, std::nullopt, {b.state(n.players), "msg.sender"});
  const std::string t = b.tmp();
  b.emit(Opcode::kBinary, typed(t, "uint256"), {b.state(n.count), "+", "1"});
  b.emit(Opcode::kAssign, b.state(n.count), {t});
  return b.finish();
}

IrFunction render(PatternCategory c, const std::string& contract_id, const std::string& name,
                  const Dialect& d, const Names& names) {
  FnBuilder b(contract_id, d, names, name);
  switch (c) {
    case PatternCategory::kBalanceUpdate: return deposit(std::move(b));
    case PatternCategory::kAuthorizationCheck: return set_owner(std::move(b));
    case PatternCategory::kExternalCall: return notify(std::move(b));
    case PatternCategory::kArrayPush: return register_player(std::move(b));
    case PatternCategory::kReentrancyPattern: return withdraw(std::move(b), true);
    case PatternCategory::kRandomnessCondition: return draw(std::move(b));
  }
  return deposit(std::move(b));
}

std::string_view base_name(PatternCategory c) {
  switch (c) {
    case PatternCategory::kBalanceUpdate: return "deposit";
    case PatternCategory::kAuthorizationCheck: return "setOwner";
    case PatternCategory::kExternalCall: return "notify";
    case PatternCategory::kArrayPush: return "register";
    case PatternCategory::kReentrancyPattern: return "withdraw";
    case PatternCategory::kRandomnessCondition: return "draw";
  }
  return "fn";
}

std::string contract_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "c%03d", k);
  return buf;
}

std::optional<Label> draw_label(const SynthSpec& spec, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < spec.re_rate) return Label::kRE;
  if (u < spec.re_rate + spec.wr_rate) return Label::kWR;
  if (u < spec.re_rate + spec.wr_rate + spec.ut_rate) return Label::kUT;
  return Label::kSafe;
}

Contract render_contract(const std::string& base, const Dialect& d, const Names& names,
                         Label label, const std::vector<PatternCategory>& extras,
                         std::uint64_t inject_seed) {
  Contract c;
  c.contract_id = base + "." + std::string(to_string(d.lang));
  c.language = d.lang;
  c.label = label;
  auto builder = [&](std::string_view name) { return FnBuilder(c.contract_id, d, names, std::string(name)); };
  const std::string temps = d.lang == Language::kB ? d.div->temp_prefix : "TMP_";

  if (label == Label::kRE) {
    c.functions.push_back(inject_vulnerability(withdraw(builder("withdraw"), false), Task::kRE, inject_seed, temps));
  } else {
    c.functions.push_back(withdraw(builder("withdraw"), true));
  }
  c.functions.push_back(label == Label::kWR
                            ? inject_vulnerability(draw(builder("draw")), Task::kWR, inject_seed, temps)
                            : draw(builder("draw")));
  if (label == Label::kUT) {
    c.functions.push_back(inject_vulnerability(payout(builder("payout"), false), Task::kUT, inject_seed, temps));
  } else {
    c.functions.push_back(payout(builder("payout"), true));
  }
  std::map<std::string, int> used = {{"withdraw", 1}, {"draw", 1}, {"payout", 1}};
  for (auto cat : extras) {
    std::string name(base_name(cat));
    const int k = ++used[name];
    if (k > 1) name += std::to_string(k);
    c.functions.push_back(render(cat, c.contract_id, name, d, names));
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(PatternCategory c) {
  return kCategoryNames[static_cast<std::size_t>(c)];
}

std::optional<PatternCategory> parse_category(std::string_view text) {
  for (auto c : kAllCategories) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

DialectDivergence DialectDivergence::none() {
  DialectDivergence d;
  d.respell.clear();
  d.inline_modifiers = false;
  d.temp_prefix = "TMP_";
  d.temp_offset = 0;
  d.self_prefix = false;
  return d;
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidSpec, what); };
  if (contracts < 1) fail("at least one contract per dialect");
  if (min_functions < 3 || max_functions < min_functions) {
    fail("function range must satisfy 3 <= min <= max");
  }
  for (double r : {re_rate, wr_rate, ut_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) fail("injection rates must lie in [0, 1]");
  }
  if (re_rate + wr_rate + ut_rate > 1.0 + 1e-12) fail("injection rates sum above 1");
  double mix = 0.0;
  for (double w : template_mix) {
    if (!(w >= 0.0)) fail("template weights must be non-negative");
    mix += w;
  }
  if (max_functions > 3 && mix <= 0.0) fail("template mix is all zero");
  if (divergence.temp_offset < 0) fail("negative temp offset");
  if (divergence.temp_prefix.empty() ||
      !std::all_of(divergence.temp_prefix.begin(), divergence.temp_prefix.end(), [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
      })) {
    fail("temp prefix must be letters and underscores");
  }
  if (name_variety < 1) fail("name variety must be at least 1");
  for (const auto& [from, to] : divergence.respell) {
    if (!parse_opcode(from) || !parse_opcode(to)) fail("respell entry " + from + "->" + to);
  }
}

nlohmann::json SynthSpec::to_json() const {
  return {{"seed", seed},
          {"contracts", contracts},
          {"min_functions", min_functions},
          {"max_functions", max_functions},
          {"template_mix", template_mix},
          {"re_rate", re_rate},
          {"wr_rate", wr_rate},
          {"ut_rate", ut_rate},
          {"name_variety", name_variety},
          {"respell", divergence.respell},
          {"inline_modifiers", divergence.inline_modifiers},
          {"temp_prefix", divergence.temp_prefix},
          {"self_prefix", divergence.self_prefix},
          {"temp_offset", divergence.temp_offset}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.seed = j.value("seed", s.seed);
  s.contracts = j.value("contracts", s.contracts);
  s.min_functions = j.value("min_functions", s.min_functions);
  s.max_functions = j.value("max_functions", s.max_functions);
  if (j.contains("template_mix")) s.template_mix = j.at("template_mix").get<std::array<double, 6>>();
  s.re_rate = j.value("re_rate", s.re_rate);
  s.wr_rate = j.value("wr_rate", s.wr_rate);
  s.ut_rate = j.value("ut_rate", s.ut_rate);
  s.name_variety = j.value("name_variety", s.name_variety);
  if (j.contains("respell")) {
    s.divergence.respell = j.at("respell").get<std::map<std::string, std::string>>();
  }
  s.divergence.inline_modifiers = j.value("inline_modifiers", s.divergence.inline_modifiers);
  s.divergence.temp_prefix = j.value("temp_prefix", s.divergence.temp_prefix);
  s.divergence.self_prefix = j.value("self_prefix", s.divergence.self_prefix);
  s.divergence.temp_offset = j.value("temp_offset", s.divergence.temp_offset);
  s.validate();
  return s;
}

nlohmann::json SynthCorpus::sidecar() const {
  nlohmann::json pairs_json = nlohmann::json::array();
  for (const auto& [fa, fb] : pairs) {
    pairs_json.push_back({fa.contract_id + "::" + fa.function, fb.contract_id + "::" + fb.function});
  }
  nlohmann::json labels_json = nlohmann::json::object();
  for (const auto& [id, label] : labels) labels_json[id] = to_string(label);
  return {{"pairs", pairs_json}, {"labels", labels_json}, {"spec", spec.to_json()}};
}

SynthCorpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  SynthCorpus out;
  out.spec = spec;
  const Dialect da{Language::kA, &spec.divergence};
  const Dialect db{Language::kB, &spec.divergence};
  std::discrete_distribution<int> mix(spec.template_mix.begin(), spec.template_mix.end());
  for (int k = 0; k < spec.contracts; ++k) {
    std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(static_cast<std::uint64_t>(k))));
    const std::string base = contract_name(k);
    const Label label = *draw_label(spec, rng);
    const Names names = draw_names(rng, spec.name_variety);
    const int total = std::uniform_int_distribution<int>(spec.min_functions, spec.max_functions)(rng);
    std::vector<PatternCategory> extras;
    for (int e = 3; e < total; ++e) extras.push_back(kAllCategories[static_cast<std::size_t>(mix(rng))]);
    const std::uint64_t inject_seed = rng();

    Contract a = render_contract(base, da, names, label, extras, inject_seed);
    Contract b = render_contract(base, db, names, label, extras, inject_seed);
    for (std::size_t f = 0; f < a.functions.size(); ++f) {
      out.pairs.push_back({{a.contract_id, a.functions[f].name}, {b.contract_id, b.functions[f].name}});
    }
    out.labels[base] = label;
    out.a.push_back(std::move(a));
    out.b.push_back(std::move(b));
  }
  return out;
}

IrFunction inject_vulnerability(const IrFunction& f, Task task, std::uint64_t seed,
                                const std::string& temp_prefix) {
  (void)seed;  // every injection site is chosen deterministically
  const int n = static_cast<int>(f.instructions.size());
  auto no_site = [&](const std::string& why) {
    return Error(ErrorCode::kNoInjectionSite, f.contract_id + "::" + f.name + ": " + why);
  };
  auto fresh_tmp = [&] { return temp_prefix + std::to_string(max_numbered(f, temp_prefix) + 1); };

  switch (task) {
    case Task::kRE: {
      // References produced by INDEX_REF over a state variable.
      std::set<std::string> state_refs;
      int write = -1;
      std::optional<IrOperand> value;
      for (const auto& in : f.instructions) {
        if (in.opcode == Opcode::kIndexRef && in.lhs && !in.operands.empty() &&
            in.operands[0].kind == OperandKind::kStateVar) {
          state_refs.insert(in.lhs->text);
          continue;
        }
        if (in.lhs && (in.lhs->kind == OperandKind::kStateVar || state_refs.count(in.lhs->text))) {
          write = in.index;
          break;
        }
        if (in.lhs && in.lhs->kind == OperandKind::kLocalVar) value = in.lhs;
      }
      if (write < 0) throw no_site("no state-variable write");
      const std::string amount = value ? value->spelling() : "0";
      auto call = make_instruction(write, Opcode::kHighLevelCall, fresh_tmp() + "(bool)",
                                   {"msg.sender", "call", amount}, f.state_vars);
      return insert_instruction(f, write, std::move(call));
    }
    case Task::kWR: {
      auto cond = std::find_if(f.instructions.begin(), f.instructions.end(),
                               [](const IrInstruction& in) { return in.opcode == Opcode::kCondition; });
      if (cond == f.instructions.end()) throw no_site("no CONDITION");
      // Walk the definitions feeding the condition, newest first.
      std::vector<std::string> frontier;
      for (const auto& o : cond->operands) {
        if (o.is_variable()) frontier.push_back(o.text);
      }
      IrFunction out = f;
      for (int at = cond->index; at >= 0; --at) {
        auto& in = out.instructions[static_cast<std::size_t>(at)];
        for (auto& o : in.operands) {
          const bool feeds = at == cond->index ||
                             (in.lhs && std::find(frontier.begin(), frontier.end(), in.lhs->text) != frontier.end());
          if (!feeds) break;
          if (o.kind == OperandKind::kStateVar && !is_env(o.text)) {
            o = parse_operand("block.timestamp", in.opcode, 0, f.state_vars);
            in.raw = raw_text(in);
            return out;
          }
        }
        const bool feeds = at == cond->index ||
                           (in.lhs && std::find(frontier.begin(), frontier.end(), in.lhs->text) != frontier.end());
        if (feeds) {
          for (const auto& o : in.operands) {
            if (o.is_variable()) frontier.push_back(o.text);
          }
        }
      }
      throw no_site("condition reads no state variable");
    }
    case Task::kUT: {
      std::optional<IrOperand> to, amount;
      for (const auto& in : f.instructions) {
        std::vector<const IrOperand*> ops;
        if (in.lhs) ops.push_back(&*in.lhs);
        for (const auto& o : in.operands) ops.push_back(&o);
        for (const auto* o : ops) {
          if (o->kind != OperandKind::kLocalVar || !o->decl_type) continue;
          if (!to && *o->decl_type == "address") to = *o;
          if (!amount && o->decl_type->rfind("uint", 0) == 0) amount = *o;
        }
      }
      int at = n;
      for (int k = n - 1; k >= 0; --k) {
        if (f.instructions[static_cast<std::size_t>(k)].opcode == Opcode::kRequire) {
          at = k;
          break;
        }
      }
      auto transfer = make_instruction(at, Opcode::kTransfer, fresh_tmp() + "(bool)",
                                       {to ? to->spelling() : "msg.sender", amount ? amount->spelling() : "1"},
                                       f.state_vars);
      return insert_instruction(f, at, std::move(transfer));
    }
  }
  throw no_site("unknown task");
}

std::vector<PatternPair> pattern_pairs(const SynthSpec& spec, int per_category, std::uint64_t seed) {
  spec.validate();
  if (per_category < 0) throw Error(ErrorCode::kInvalidArgument, "negative pair count");
  const Dialect da{Language::kA, &spec.divergence};
  const Dialect db{Language::kB, &spec.divergence};
  std::vector<PatternPair> out;
  std::mt19937_64 rng(splitmix(seed));
  for (auto cat : kAllCategories) {
    for (int k = 0; k < per_category; ++k) {
      const Names names = draw_names(rng, spec.name_variety);
      const std::string base = "probe_" + std::string(to_string(cat)) + "_" + std::to_string(k);
      PatternPair p;
      p.category = cat;
      p.a = render(cat, base + ".A", std::string(base_name(cat)), da, names);
      p.b = render(cat, base + ".B", std::string(base_name(cat)), db, names);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace irbridge
