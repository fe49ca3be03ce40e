#pragma once

// Binary checkpoint container. Byte layout (all integers little-endian):
//
//   magic        8 bytes  "C3GCKPT1"
//   version      u32      1
//   header_len   u64
//   header       JSON text: format, config, vocab, descriptor_checksum,
//                metadata
//   n_tensors    u32
//   tensor[i]    u32 name_len, name bytes, u32 rows, u32 cols,
//                rows*cols IEEE-754 f64 values in row-major order
//   has_opt      u8       0 or 1
//   if has_opt:  u64 step, u32 n, n tensor blocks of first moments,
//                u32 n, n tensor blocks of second moments
//
// Tensor order and names follow ModelParams::tensors().

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cdr3gen/model.hpp"

namespace cdr3gen::checkpoint {

inline constexpr std::string_view kMagic = "C3GCKPT1";
inline constexpr std::uint32_t kVersion = 1;

struct OptimizerState {
    std::uint64_t step = 0;
    model::ModelParams m;
    model::ModelParams v;

    static OptimizerState zeros(const model::ModelConfig& cfg);
};

struct Checkpoint {
    model::ModelConfig config;
    model::ModelParams params;
    // Absent when the phys channel is disabled.
    std::optional<std::uint64_t> descriptor_checksum;
    std::optional<OptimizerState> optimizer;
    nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json config_to_json(const model::ModelConfig& cfg);
// Throws InvalidConfig on missing or ill-typed fields.
model::ModelConfig config_from_json(const nlohmann::json& j);

std::string serialize(const Checkpoint& ckpt);
// Throws BadCheckpoint.
Checkpoint deserialize(std::string_view bytes);

void save(const std::string& path, const Checkpoint& ckpt);
Checkpoint load(const std::string& path);

// Builds a model from a checkpoint. With the phys channel enabled, the
// table checksum must match the recorded one (BadCheckpoint otherwise).
model::Model make_model(const Checkpoint& ckpt, const physchem::DescriptorTable* table);

}  // namespace cdr3gen::checkpoint
