#include "irbridge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "irbridge/hash.hpp"

namespace irbridge {
namespace {

constexpr char kMagic[4] = {'S', '2', 'V', 'Y'};

template <typename U>
void put(std::ostream& out, U v) {
  static_assert(std::is_integral_v<U> || std::is_floating_point_v<U>);
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("truncated ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

std::map<std::string, const Matrix<float>*> named_tensors(const ModelBundle& b) {
  std::map<std::string, const Matrix<float>*> out;
  b.encoder.visit([&](const std::string& name, const Matrix<float>& m) { out["encoder." + name] = &m; });
  for (const auto& [task, clf] : b.classifiers) {
    const std::string prefix = "classifier." + std::string(to_string(task)) + ".";
    clf.params.visit([&](const std::string& name, const Matrix<float>& m) { out[prefix + name] = &m; });
    out[prefix + "input_mean"] = &clf.input_mean;
    out[prefix + "input_scale"] = &clf.input_scale;
  }
  return out;
}

nlohmann::json metadata_of(const ModelBundle& b) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& [task, clf] : b.classifiers) tasks.push_back(to_string(task));
  return {{"encoder", b.encoder_config.to_json()},
          {"train", b.train_config.to_json()},
          {"vocab_hash", b.vocab_hash},
          {"stage", {{"aligned", b.aligned}, {"frozen", b.frozen}, {"joint", b.joint}}},
          {"trace", b.trace.to_json()},
          {"norm_placement", "post"},
          {"classifiers", tasks},
          {"notes", b.metadata}};
}

}  // namespace

void save_checkpoint(std::ostream& out, const ModelBundle& bundle) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = metadata_of(bundle).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& [name, m] : named_tensors(bundle)) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m->rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) put<float>(out, m->data()[i]);
  }
  if (!out) throw Error(ErrorCode::kIo, "checkpoint write failed");
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  save_checkpoint(out, bundle);
}

ModelBundle load_checkpoint(std::istream& in, const std::optional<std::string>& expected_vocab_hash) {
  char magic[4];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::kCheckpointFormat, "bad magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointFormat, "unsupported version " + std::to_string(version));
  }
  const auto meta_len = get<std::uint32_t>(in, "metadata length");
  std::string meta_text(meta_len, '\0');
  if (!in.read(meta_text.data(), meta_len)) throw Error(ErrorCode::kCheckpointFormat, "truncated metadata");

  ModelBundle b;
  std::vector<Task> tasks;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    b.encoder_config = EncoderConfig::from_json(meta.at("encoder"));
    b.train_config = TrainConfig::from_json(meta.at("train"));
    b.vocab_hash = meta.at("vocab_hash").get<std::string>();
    b.aligned = meta.at("stage").at("aligned").get<bool>();
    b.frozen = meta.at("stage").at("frozen").get<bool>();
    b.joint = meta.at("stage").at("joint").get<bool>();
    b.trace = AlignmentTrace::from_json(meta.at("trace"));
    b.metadata = meta.at("notes");
    for (const auto& t : meta.at("classifiers")) {
      auto task = parse_task(t.get<std::string>());
      if (!task) throw Error(ErrorCode::kCheckpointFormat, "unknown task in metadata");
      tasks.push_back(*task);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("metadata: ") + e.what());
  }
  if (expected_vocab_hash && *expected_vocab_hash != b.vocab_hash) {
    throw Error(ErrorCode::kVocabMismatch, "checkpoint was trained on vocabulary " + b.vocab_hash);
  }

  std::map<std::string, Matrix<float>> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get<std::uint32_t>(in, "tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error(ErrorCode::kCheckpointFormat, "truncated tensor name");
    const auto rank = get<std::uint32_t>(in, "tensor rank");
    if (rank != 2) throw Error(ErrorCode::kCheckpointFormat, name + ": rank " + std::to_string(rank));
    const auto rows = get<std::uint64_t>(in, "tensor dims");
    const auto cols = get<std::uint64_t>(in, "tensor dims");
    if (rows > (1u << 24) || cols > (1u << 24)) throw Error(ErrorCode::kCheckpointFormat, name + ": implausible shape");
    Matrix<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<float>(in, "tensor data");
    tensors.emplace(std::move(name), std::move(m));
  }

  auto take = [&](const std::string& name, Matrix<float>& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::kCheckpointFormat, "missing tensor " + name);
    dst = std::move(it->second);
    tensors.erase(it);
  };
  b.encoder.seq.layers.resize(static_cast<std::size_t>(b.encoder_config.seq_layers));
  b.encoder.hie.layers.resize(static_cast<std::size_t>(b.encoder_config.hie_layers));
  b.encoder.visit([&](const std::string& name, Matrix<float>& m) { take("encoder." + name, m); });
  for (Task t : tasks) {
    Classifier<float> clf;
    const std::string prefix = "classifier." + std::string(to_string(t)) + ".";
    clf.params.visit([&](const std::string& name, Matrix<float>& m) { take(prefix + name, m); });
    take(prefix + "input_mean", clf.input_mean);
    take(prefix + "input_scale", clf.input_scale);
    b.classifiers.emplace(t, std::move(clf));
  }
  if (!tensors.empty()) {
    throw Error(ErrorCode::kCheckpointFormat, "unexpected tensor " + tensors.begin()->first);
  }
  return b;
}

ModelBundle load_checkpoint(const std::string& path, const std::optional<std::string>& expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return load_checkpoint(in, expected_vocab_hash);
}

std::string model_hash(const ModelBundle& bundle) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(out, bundle);
  return sha256_hex(out.str());
}

}  // namespace irbridge
