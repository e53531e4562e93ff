#pragma once

// Versioned binary model container: "KBST", u32 version, u8 payload kind,
// u64 payload size, payload, u64 FNV-1a checksum of the payload.

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "knotseg/context.hpp"
#include "knotseg/gradboost.hpp"

namespace knotseg {

inline constexpr std::uint32_t kModelVersion = 1;

enum class ModelKind : std::uint8_t { Boost = 1, Context = 2, Zcut = 3 };

using PipelineModel = std::variant<BoostModel, ContextModel, ZcutModel>;

std::vector<std::uint8_t> encode_model(const PipelineModel& model);
/// Throws on bad magic, version mismatch, truncation, checksum mismatch or
/// trailing bytes; never returns a partially decoded model.
PipelineModel decode_model(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const PipelineModel& model);
PipelineModel load_model(const std::filesystem::path& path);

ModelKind model_kind(const PipelineModel& model);
const char* to_string(ModelKind kind);

}  // namespace knotseg
