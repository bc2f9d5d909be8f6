#include "stner/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "stner/error.hpp"

namespace stner {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint64_t kMaxString = std::uint64_t{1} << 32;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw format_error(std::string("truncated checkpoint while reading ") + what);
  return value;
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint64_t>(in, what);
  if (n > kMaxString) throw format_error(std::string("implausible string length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw format_error(std::string("truncated checkpoint while reading ") + what);
  return s;
}

}  // namespace

void write_checkpoint(const CheckpointBlob& blob, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, blob.kind);
  put_string(out, blob.config.dump());
  put<std::uint64_t>(out, blob.vocab.size());
  for (const auto& t : blob.vocab) put_string(out, t);
  put<std::uint64_t>(out, blob.tensors.size());
  for (const auto& t : blob.tensors) {
    put_string(out, t.name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
}

CheckpointBlob read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw format_error("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw format_error("unsupported checkpoint version " + std::to_string(version));
  CheckpointBlob blob;
  blob.kind = get_string(in, "kind");
  try {
    blob.config = nlohmann::json::parse(get_string(in, "config"));
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto nv = get<std::uint64_t>(in, "vocabulary size");
  if (nv > kMaxString) throw format_error("implausible vocabulary size");
  blob.vocab.reserve(nv);
  for (std::uint64_t i = 0; i < nv; ++i) blob.vocab.push_back(get_string(in, "vocabulary entry"));
  const auto nt = get<std::uint64_t>(in, "tensor count");
  if (nt > 4096) throw format_error("implausible tensor count");
  for (std::uint64_t i = 0; i < nt; ++i) {
    ad::Tensor t;
    t.name = get_string(in, "tensor name");
    const auto rows = get<std::uint64_t>(in, "tensor rows");
    const auto cols = get<std::uint64_t>(in, "tensor cols");
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (std::uint64_t{1} << 28))
      throw format_error("implausible shape for tensor " + t.name);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(t.value.data()),
                 static_cast<std::streamsize>(rows * cols * sizeof(double))))
      throw format_error("truncated data for tensor " + t.name);
    t.grad = ad::Matrix::Zero(t.value.rows(), t.value.cols());
    blob.tensors.push_back(std::move(t));
  }
  return blob;
}

void write_checkpoint_file(const CheckpointBlob& blob, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint " + path);
  write_checkpoint(blob, out);
  if (!out) throw io_error("failed writing checkpoint " + path);
}

CheckpointBlob read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::kMissingPrerequisite, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

void restore_tensors(const CheckpointBlob& blob, const std::vector<ad::Tensor*>& targets) {
  if (blob.tensors.size() != targets.size())
    throw format_error("checkpoint holds " + std::to_string(blob.tensors.size()) + " tensors, expected " +
                       std::to_string(targets.size()));
  for (ad::Tensor* target : targets) {
    const ad::Tensor* found = nullptr;
    for (const auto& t : blob.tensors)
      if (t.name == target->name) found = &t;
    if (!found) throw format_error("checkpoint is missing tensor " + target->name);
    if (found->value.rows() != target->value.rows() || found->value.cols() != target->value.cols())
      throw format_error("shape mismatch for tensor " + target->name + ": stored " +
                         std::to_string(found->value.rows()) + "x" + std::to_string(found->value.cols()) +
                         ", expected " + std::to_string(target->value.rows()) + "x" +
                         std::to_string(target->value.cols()));
    target->value = found->value;
    target->zero_grad();
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"embedding_dim", c.embedding_dim},
          {"init_scale", c.init_scale},
          {"tied_embeddings", c.tied_embeddings},
          {"straight_through", c.straight_through}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
  c.straight_through = j.value("straight_through", c.straight_through);
  return c;
}

nlohmann::json to_json(const TypeRegistry& registry) { return registry.names(); }

TypeRegistry registry_from_json(const nlohmann::json& j) {
  return TypeRegistry(j.get<std::vector<std::string>>());
}

nlohmann::json to_json(const PrefixConfig& p) {
  return {{"source_to_target", p.source_to_target}, {"target_to_source", p.target_to_source}};
}

PrefixConfig prefixes_from_json(const nlohmann::json& j) {
  PrefixConfig p;
  p.source_to_target = j.value("source_to_target", p.source_to_target);
  p.target_to_source = j.value("target_to_source", p.target_to_source);
  return p;
}

nlohmann::json to_json(const OptimizerConfig& o) {
  return {{"kind", to_string(o.kind)}, {"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay},
          {"beta1", o.beta1},          {"beta2", o.beta2},                 {"epsilon", o.epsilon},
          {"clip_norm", o.clip_norm}};
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig o) {
  if (j.contains("kind")) o.kind = parse_optimizer_kind(j.at("kind").get<std::string>());
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  return o;
}

void save_transfer_model(const TransferModel& model, const std::string& path) {
  CheckpointBlob blob;
  blob.kind = "transfer";
  blob.config = {{"model", to_json(model.config)},
                 {"registry", to_json(model.vocab.registry())},
                 {"prefixes", to_json(model.vocab.prefixes())}};
  blob.vocab = model.vocab.tokens();
  for (const auto* t : model.generator.tensors()) blob.tensors.push_back(*t);
  for (const auto* t : model.discriminator.tensors()) blob.tensors.push_back(*t);
  write_checkpoint_file(blob, path);
}

TransferModel load_transfer_model(const std::string& path) {
  CheckpointBlob blob = read_checkpoint_file(path);
  if (blob.kind != "transfer") throw format_error(path + " is a '" + blob.kind + "' checkpoint, not transfer");
  try {
    TransferModel m;
    m.config = model_config_from_json(blob.config.at("model"));
    m.vocab = Vocabulary::from_tokens(blob.vocab, registry_from_json(blob.config.at("registry")),
                                      prefixes_from_json(blob.config.at("prefixes")));
    m.generator = GeneratorParams::zeros(m.config, m.vocab.size());
    m.discriminator = DiscriminatorParams::zeros(m.config);
    std::vector<ad::Tensor*> targets = m.generator.tensors();
    for (auto* t : m.discriminator.tensors()) targets.push_back(t);
    restore_tensors(blob, targets);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("malformed checkpoint config: ") + e.what());
  }
}

}  // namespace stner
