#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "irbridge/checkpoint.hpp"
#include "irbridge/corpus_synth.hpp"
#include "irbridge/error.hpp"
#include "irbridge/evaluation.hpp"
#include "irbridge/experiments.hpp"
#include "irbridge/hash.hpp"
#include "irbridge/ir_model.hpp"
#include "irbridge/preprocess.hpp"
#include "irbridge/training.hpp"

namespace irbridge::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.3.0";
constexpr int kPairsPerCategory = 8;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::vector<std::string> inputs;
  std::string out;
  std::string model;
  std::uint64_t seed = 7;
  std::string profile = "desk";
  std::string task;
  std::vector<double> alpha;
  std::vector<double> gamma;
  std::optional<double> lambda;
  std::string shots;
  int threads = 1;

  json to_json() const {
    json inputs_json = json::array();
    for (const auto& p : inputs) inputs_json.push_back(fs::path(p).filename().string());
    json j = {{"command", command}, {"inputs", inputs_json}, {"seed", seed},
              {"profile", profile}, {"threads", threads}};
    if (!model.empty()) j["model"] = fs::path(model).filename().string();
    if (!task.empty()) j["task"] = task;
    if (!alpha.empty()) j["alpha"] = alpha;
    if (!gamma.empty()) j["gamma"] = gamma;
    if (lambda) j["lambda"] = *lambda;
    if (!shots.empty()) j["shots"] = shots;
    return j;
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Collects inputs and outputs of one invocation and writes the manifest.
class Run {
 public:
  explicit Run(const Options& opt) : opt_(opt), dir_(opt.out) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw UsageError("output directory not writable: " + opt.out);
  }

  std::string input(const fs::path& path) {
    std::string data = read_file(path);
    inputs_.push_back({{"name", path.filename().string()}, {"sha256", sha256_hex(data)}});
    return data;
  }

  void output(const std::string& name, const std::string& data) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out << data;
    if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
    outputs_.push_back({{"name", name}, {"sha256", sha256_hex(data)}});
  }

  json& config() { return config_; }

  void finish() {
    json manifest = {{"tool", "irbridge"},    {"version", kVersion}, {"options", opt_.to_json()},
                     {"config", config_},     {"inputs", inputs_},   {"outputs", outputs_}};
    const fs::path path = dir_ / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out << manifest.dump(2) << '\n';
  }

 private:
  const Options& opt_;
  fs::path dir_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json config_ = json::object();
};

EncoderConfig profile_config(const std::string& profile) {
  if (profile == "desk") return EncoderConfig::desk();
  if (profile == "paper-scale") return EncoderConfig::paper();
  throw UsageError("unknown profile: " + profile);
}

TrainConfig train_config(const Options& opt) {
  TrainConfig t;
  t.seed = opt.seed;
  if (!opt.alpha.empty()) t.kernel.alpha = opt.alpha.front();
  if (!opt.gamma.empty()) t.kernel.gamma = opt.gamma.front();
  if (opt.lambda) t.lambda = *opt.lambda;
  t.validate();
  return t;
}

std::vector<Task> tasks_of(const Options& opt) {
  if (opt.task.empty()) return {kAllTasks.begin(), kAllTasks.end()};
  const auto t = parse_task(opt.task);
  if (!t) throw UsageError("unknown task: " + opt.task);
  return {*t};
}

std::optional<ShotComposition> parse_shots(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError("--shots expects S,V");
  try {
    std::size_t used_s = 0, used_v = 0;
    const std::string s = text.substr(0, comma);
    const std::string v = text.substr(comma + 1);
    ShotComposition c{std::stoi(s, &used_s), std::stoi(v, &used_v)};
    if (used_s != s.size() || used_v != v.size() || c.safe < 0 || c.vulnerable < 0) {
      throw UsageError("--shots expects two non-negative integers");
    }
    return c;
  } catch (const std::logic_error&) {
    throw UsageError("--shots expects two non-negative integers");
  }
}

std::string dump_text(const std::vector<Contract>& contracts) {
  std::ostringstream s;
  write_ir_dump(s, contracts);
  return s.str();
}

std::vector<Contract> parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_ir_dump(in);
}

const fs::path& single_input(const Options& opt, std::vector<fs::path>& holder) {
  if (opt.inputs.size() != 1) throw UsageError(opt.command + " takes exactly one --input");
  holder = {fs::path(opt.inputs.front())};
  return holder.front();
}

// A paired corpus directory as written by gen-synth.
SynthCorpus load_pair(Run& run, const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("expected a corpus directory: " + dir.string());
  const fs::path a = dir / "corpus_a.jsonl";
  const fs::path b = dir / "corpus_b.jsonl";
  if (!fs::exists(a) || !fs::exists(b)) {
    throw UsageError("corpus directory lacks corpus_a.jsonl / corpus_b.jsonl: " + dir.string());
  }
  SynthCorpus c;
  c.a = parse_text(run.input(a));
  c.b = parse_text(run.input(b));
  const fs::path sidecar = dir / "sidecar.json";
  if (fs::exists(sidecar)) {
    const json j = json::parse(run.input(sidecar), nullptr, false);
    if (j.is_discarded() || !j.contains("spec")) {
      throw Error(ErrorCode::kMalformedLine, "unreadable sidecar " + sidecar.string());
    }
    c.spec = SynthSpec::from_json(j["spec"]);
  }
  return c;
}

ModelBundle load_model(Run& run, const Options& opt) {
  if (opt.model.empty()) throw UsageError(opt.command + " requires --model");
  std::istringstream in(run.input(opt.model));
  return load_checkpoint(in);
}

Workspace fresh_workspace(Run& run, const Options& opt) {
  std::vector<fs::path> holder;
  const EncoderConfig enc = profile_config(opt.profile);
  const TrainConfig train = train_config(opt);
  run.config()["encoder"] = enc.to_json();
  run.config()["train"] = train.to_json();
  return make_workspace(load_pair(run, single_input(opt, holder)), enc, train);
}

// Rebuilds the workspace a checkpoint was trained on and checks the
// vocabulary matches.
Workspace model_workspace(Run& run, const Options& opt, const ModelBundle& bundle) {
  std::vector<fs::path> holder;
  run.config()["encoder"] = bundle.encoder_config.to_json();
  run.config()["train"] = bundle.train_config.to_json();
  Workspace ws = make_workspace(load_pair(run, single_input(opt, holder)), bundle.encoder_config,
                                bundle.train_config);
  if (ws.vocab.content_hash() != bundle.vocab_hash) {
    throw Error(ErrorCode::kVocabMismatch, "corpus vocabulary differs from the checkpoint's");
  }
  return ws;
}

std::string checkpoint_bytes(const ModelBundle& bundle) {
  std::ostringstream s;
  save_checkpoint(s, bundle);
  return s.str();
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string s = MetricsReport::csv_header() + "\n";
  for (const auto& r : reports) s += r.csv_row() + "\n";
  return s;
}

void print_metrics(std::ostream& out, const std::vector<MetricsReport>& reports) {
  for (const auto& r : reports) {
    out << r.task << ": fpr " << r.fpr << " fnr " << r.fnr;
    if (r.auc) out << " auc " << *r.auc;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

void gen_synth(const Options& opt, Run& run, std::ostream& out) {
  SynthSpec spec;
  spec.seed = opt.seed;
  spec.validate();
  run.config()["synth"] = spec.to_json();
  const SynthCorpus corpus = generate_corpus(spec);
  run.output("corpus_a.jsonl", dump_text(corpus.a));
  run.output("corpus_b.jsonl", dump_text(corpus.b));
  run.output("sidecar.json", corpus.sidecar().dump(2) + "\n");
  out << "generated " << corpus.a.size() << " contracts per dialect\n";
}

void ingest(const Options& opt, Run& run, std::ostream& out) {
  if (opt.inputs.empty()) throw UsageError("ingest requires --input");
  std::vector<fs::path> files;
  for (const auto& p : opt.inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(p);
    }
  }
  if (files.empty()) throw UsageError("no .jsonl dumps found");

  std::vector<Contract> all;
  json per_file = json::array();
  json violations = json::array();
  std::map<std::string, int> labels;
  std::size_t functions = 0;
  for (const auto& f : files) {
    const auto contracts = parse_text(run.input(f));
    std::size_t n_fn = 0;
    for (const auto& c : contracts) {
      ++labels[c.label ? std::string(to_string(*c.label)) : "unlabeled"];
      for (const auto& fn : c.functions) {
        ++n_fn;
        for (const auto& v : validate_function(fn)) {
          violations.push_back({{"contract_id", c.contract_id},
                                {"function", fn.name},
                                {"kind", to_string(v.kind)},
                                {"id", v.id}});
        }
      }
    }
    functions += n_fn;
    per_file.push_back({{"name", f.filename().string()}, {"contracts", contracts.size()}, {"functions", n_fn}});
    all.insert(all.end(), contracts.begin(), contracts.end());
  }
  const Vocabulary vocab = build_vocabulary(corpus_sequences(all));
  const json summary = {{"files", per_file},         {"contracts", all.size()},
                        {"functions", functions},    {"labels", labels},
                        {"vocab_size", vocab.size()}, {"vocab_hash", vocab.content_hash()},
                        {"violations", violations}};
  run.output("vocab.json", vocab.to_json().dump() + "\n");
  run.output("ingest.json", summary.dump(2) + "\n");
  out << "ingested " << all.size() << " contracts, " << functions << " functions, vocabulary "
      << vocab.size() << '\n';
  if (!violations.empty()) {
    run.finish();
    throw Error(ErrorCode::kInvalidFunction, std::to_string(violations.size()) + " IR violations");
  }
}

void train_align(const Options& opt, Run& run, std::ostream& out) {
  const Workspace ws = fresh_workspace(run, opt);
  const ModelBundle bundle = align(ws, untrained_bundle(ws));
  run.output("model.ckpt", checkpoint_bytes(bundle));
  run.output("vocab.json", ws.vocab.to_json().dump() + "\n");
  run.output("trace.json", bundle.trace.to_json().dump(2) + "\n");
  out << "aligned: " << bundle.trace.val_mmd.size() - 1 << " epochs, validation MMD "
      << bundle.trace.val_mmd.front() << " -> " << bundle.trace.val_mmd.back() << '\n';
}

void train_classify(const Options& opt, Run& run, std::ostream& out) {
  ModelBundle bundle = load_model(run, opt);
  const Workspace ws = model_workspace(run, opt, bundle);
  const auto shots = parse_shots(opt.shots);
  const auto tasks = tasks_of(opt);
  for (Task task : tasks) {
    if (shots) {
      const auto augmented = few_shot_augment(ws.a_train, ws.b_train, *shots, task, ws.train.seed);
      bundle = train_classifier(augmented, std::move(bundle), task);
    } else {
      bundle = train_classifier(ws.a_train, std::move(bundle), task);
    }
  }
  const std::string hash = model_hash(bundle);
  std::vector<MetricsReport> reports;
  for (Task task : tasks) reports.push_back(evaluate_task(ws, bundle, task, hash));
  run.output("model.ckpt", checkpoint_bytes(bundle));
  run.output("metrics.csv", metrics_csv(reports));
  print_metrics(out, reports);
}

void train_joint(const Options& opt, Run& run, std::ostream& out) {
  const Workspace ws = fresh_workspace(run, opt);
  std::vector<MetricsReport> reports;
  for (Task task : tasks_of(opt)) {
    const ModelBundle b = train_joint_baseline(ws.a_train, ws.a, ws.b_train, untrained_bundle(ws), task);
    const std::string bytes = checkpoint_bytes(b);
    reports.push_back(evaluate_task(ws, b, task, sha256_hex(bytes)));
    run.output("joint_" + std::string(to_string(task)) + ".ckpt", bytes);
  }
  run.output("vocab.json", ws.vocab.to_json().dump() + "\n");
  run.output("metrics.csv", metrics_csv(reports));
  print_metrics(out, reports);
}

void scan(const Options& opt, Run& run, std::ostream& out) {
  const ModelBundle bundle = load_model(run, opt);
  std::vector<fs::path> holder;
  const fs::path& input = single_input(opt, holder);
  std::vector<PreparedContract> contracts;
  if (fs::is_directory(input)) {
    contracts = model_workspace(run, opt, bundle).b_test;
  } else {
    const fs::path vocab_path = fs::path(opt.model).parent_path() / "vocab.json";
    if (!fs::exists(vocab_path)) throw UsageError("no vocab.json beside the checkpoint");
    const Vocabulary vocab = Vocabulary::from_json(json::parse(run.input(vocab_path)));
    if (vocab.content_hash() != bundle.vocab_hash) {
      throw Error(ErrorCode::kVocabMismatch, "vocab.json does not match the checkpoint");
    }
    contracts = prepare_corpus(parse_text(run.input(input)), vocab, bundle.encoder_config);
  }
  std::vector<Task> tasks;
  if (opt.task.empty()) {
    for (Task t : kAllTasks) {
      if (bundle.classifiers.count(t)) tasks.push_back(t);
    }
    if (tasks.empty()) throw Error(ErrorCode::kMissingClassifier, "checkpoint has no classifier");
  } else {
    tasks = tasks_of(opt);
  }
  const std::string hash = model_hash(bundle);
  const auto start = std::chrono::steady_clock::now();
  std::string lines;
  for (const auto& c : contracts) {
    for (Task task : tasks) {
      const Prediction p = predict_contract(c, bundle, task);
      nlohmann::ordered_json line;
      line["contract_id"] = c.contract_id;
      line["task"] = to_string(task);
      line["prob"] = p.probability;
      line["label"] = p.vulnerable ? to_string(vulnerable_label(task)) : to_string(Label::kSafe);
      line["model_hash"] = hash;
      lines += line.dump() + "\n";
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  run.output("scan.jsonl", lines);
  out << "scanned " << contracts.size() << " contracts in " << seconds << " s\n";
}

void probe(const Options& opt, Run& run, std::ostream& out) {
  const ModelBundle after = load_model(run, opt);
  const Workspace ws = model_workspace(run, opt, after);
  const ModelBundle before = init_bundle(after.encoder_config, after.train_config, ws.vocab.size(),
                                         ws.vocab.content_hash());
  std::vector<PreparedContract> b = ws.b_train;
  b.insert(b.end(), ws.b_test.begin(), ws.b_test.end());
  const auto pairs = pattern_pairs(ws.corpus.spec, kPairsPerCategory, opt.seed);
  const ProbeReport r = probe_report(ws.a, b, pairs, ws.vocab, before, after, opt.seed);
  run.output("probe.json", r.to_json().dump(2) + "\n");
  run.output("categories.csv", r.categories_csv());
  out << "language probe " << r.probe_before << " -> " << r.probe_after << '\n';
}

void grid(const Options& opt, Run& run, std::ostream& out) {
  const Workspace ws = fresh_workspace(run, opt);
  const std::vector<double> alphas = opt.alpha.empty() ? std::vector<double>{0.6, 0.7, 0.8, 0.9} : opt.alpha;
  const std::vector<double> gammas =
      opt.gamma.empty() ? std::vector<double>{0.001, 0.005, 0.01, 0.1} : opt.gamma;
  run.config()["grid"] = {{"alpha", alphas}, {"gamma", gammas}};
  const auto rows = run_grid(ws, alphas, gammas);
  run.output("grid.csv", sweep_csv(rows));
  out << rows.size() << " grid cells\n";
}

void ablate(const Options& opt, Run& run, std::ostream& out) {
  const Workspace ws = fresh_workspace(run, opt);
  const auto rows = run_ablation(ws);
  run.output("ablation.csv", sweep_csv(rows));
  for (const auto& r : rows) out << r.name << ": macro error " << macro_error(r.reports) << '\n';
}

void fewshot(const Options& opt, Run& run, std::ostream& out) {
  const ModelBundle aligned = load_model(run, opt);
  const Workspace ws = model_workspace(run, opt, aligned);
  std::vector<std::pair<std::string, ShotComposition>> shots;
  if (const auto custom = parse_shots(opt.shots)) {
    shots.push_back({opt.shots, *custom});
  } else {
    shots = {{"0-shot", {0, 0}}, {"balanced", {6, 6}}, {"vulnerable-only", {0, 8}}};
  }
  json compositions = json::array();
  for (const auto& [name, c] : shots) compositions.push_back({{"name", name}, {"safe", c.safe}, {"vulnerable", c.vulnerable}});
  run.config()["shots"] = compositions;
  const auto rows = run_fewshot(ws, aligned, shots);
  run.output("fewshot.csv", sweep_csv(rows));
  for (const auto& r : rows) {
    out << r.name << ": fpr " << macro_fpr(r.reports) << " fnr " << macro_fnr(r.reports) << '\n';
  }
}

void report(const Options& opt, Run& run, std::ostream& out) {
  const ModelBundle bundle = load_model(run, opt);
  const Workspace ws = model_workspace(run, opt, bundle);
  const std::string hash = model_hash(bundle);
  std::vector<MetricsReport> reports;
  for (Task task : tasks_of(opt)) reports.push_back(evaluate_task(ws, bundle, task, hash));
  json per_task = json::array();
  for (const auto& r : reports) per_task.push_back(r.to_json());
  const json summary = {{"model_hash", hash},
                        {"test_contracts", ws.b_test.size()},
                        {"tasks", per_task},
                        {"macro_fpr", macro_fpr(reports)},
                        {"macro_fnr", macro_fnr(reports)},
                        {"macro_error", macro_error(reports)}};
  run.output("report.json", summary.dump(2) + "\n");
  run.output("metrics.csv", metrics_csv(reports));
  print_metrics(out, reports);
}

void write_error(std::ostream& err, const std::string& kind, const std::string& code,
                 const std::string& message) {
  const json j = {{"error", {{"kind", kind}, {"code", code}, {"message", message}}}};
  err << j.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  CLI::App app{"Cross-dialect IR vulnerability detection", "irbridge"};
  app.require_subcommand(1);

  using Handler = void (*)(const Options&, Run&, std::ostream&);
  struct Command {
    const char* name;
    const char* help;
    Handler handler;
    bool needs_model;
    bool needs_input;
  };
  const Command commands[] = {
      {"gen-synth", "Generate a paired synthetic corpus", gen_synth, false, false},
      {"ingest", "Validate IR dumps and build a vocabulary", ingest, false, true},
      {"train-align", "Stage 1: align encoders on unlabeled corpora", train_align, false, true},
      {"train-classify", "Stage 2: train task classifiers on frozen encoders", train_classify, true, true},
      {"train-joint", "Joint baseline: encoder and classifier together", train_joint, false, true},
      {"scan", "Score contracts with a trained checkpoint", scan, true, true},
      {"probe", "Representation probes before and after alignment", probe, true, true},
      {"grid", "Kernel alpha / gamma sweep", grid, false, true},
      {"ablate", "Encoder-view and alignment ablation", ablate, false, true},
      {"fewshot", "Few-shot target augmentation sweep", fewshot, true, true},
      {"report", "Target-dialect metrics of a checkpoint", report, true, true},
  };
  Handler chosen = nullptr;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    auto* input = sub->add_option("--input", opt.inputs, "Corpus directory or IR dump")->check(CLI::ExistingPath);
    if (c.needs_input) input->required();
    sub->add_option("--out", opt.out, "Output directory")->required();
    auto* model = sub->add_option("--model", opt.model, "Checkpoint")->check(CLI::ExistingFile);
    if (c.needs_model) model->required();
    sub->add_option("--seed", opt.seed, "Random seed");
    sub->add_option("--profile", opt.profile, "Encoder profile")->check(CLI::IsMember({"desk", "paper-scale"}));
    sub->add_option("--task", opt.task, "Task")->check(CLI::IsMember({"re", "wr", "ut"}));
    sub->add_option("--alpha", opt.alpha, "Kernel mixing weight(s)")->delimiter(',');
    sub->add_option("--gamma", opt.gamma, "RBF width(s)")->delimiter(',');
    sub->add_option("--lambda", opt.lambda, "Joint-baseline MMD weight");
    sub->add_option("--shots", opt.shots, "Few-shot composition S,V");
    sub->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->callback([&opt, &chosen, c]() {
      opt.command = c.name;
      chosen = c.handler;
    });
  }

  std::vector<const char*> argv{"irbridge"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    write_error(err, "usage", e.get_name(), e.what());
    return kExitUsage;
  }

  try {
    Run run(opt);
    chosen(opt, run, out);
    run.finish();
    return kExitOk;
  } catch (const UsageError& e) {
    write_error(err, "usage", "Usage", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    write_error(err, "pipeline", std::string(to_string(e.code())), e.detail());
    return kExitPipeline;
  } catch (const json::exception& e) {
    write_error(err, "pipeline", "MalformedJson", e.what());
    return kExitPipeline;
  } catch (const std::exception& e) {
    write_error(err, "pipeline", "Internal", e.what());
    return kExitPipeline;
  }
}

}  // namespace irbridge::cli
