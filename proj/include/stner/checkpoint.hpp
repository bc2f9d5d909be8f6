#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "stner/autodiff.hpp"
#include "stner/train.hpp"

namespace stner {

// Binary layout (all integers little-endian):
//   "STNERCKP" | u32 version | str kind | str config-json | u64 n, n x str vocab |
//   u64 m, m x (str name | u64 rows | u64 cols | rows*cols f64, column-major)
// where str = u64 length followed by UTF-8 bytes.
inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'N', 'E', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlob {
  std::string kind;
  nlohmann::json config;
  std::vector<std::string> vocab;
  std::vector<ad::Tensor> tensors;
};

void write_checkpoint(const CheckpointBlob& blob, std::ostream& out);
CheckpointBlob read_checkpoint(std::istream& in);
void write_checkpoint_file(const CheckpointBlob& blob, const std::string& path);
CheckpointBlob read_checkpoint_file(const std::string& path);

// Copies stored tensors into `targets` by name; every target must be present
// with an identical shape.
void restore_tensors(const CheckpointBlob& blob, const std::vector<ad::Tensor*>& targets);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TypeRegistry& registry);
TypeRegistry registry_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PrefixConfig& prefixes);
PrefixConfig prefixes_from_json(const nlohmann::json& j);

nlohmann::json to_json(const OptimizerConfig& optimizer);
// Fields missing from `j` keep their value in `base`.
OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig base = {});

void save_transfer_model(const TransferModel& model, const std::string& path);
TransferModel load_transfer_model(const std::string& path);

}  // namespace stner
