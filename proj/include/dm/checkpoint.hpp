#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dm/model.hpp"
#include "dm/signal_io.hpp"

namespace dm::ckpt {

// A trained model: weights in canonical order plus everything needed to
// rebuild and reuse it (config, normalization statistics, the train/freeze
// partition it was produced under, and its parameter budget).
struct Checkpoint {
    model::ModelConfig config;
    io::NormStats stats;
    std::vector<std::string> mask_names; // sorted
    std::uint64_t total_params = 0;
    std::uint64_t trainable_params = 0;
    model::ParamStore params;

    bool has_adapters() const { return model::has_adapters(params); }
};

Checkpoint make_checkpoint(const model::ModelConfig& cfg, const io::NormStats& stats,
                           const model::ParamStore& params, const model::TrainableMask& mask);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

} // namespace dm::ckpt
