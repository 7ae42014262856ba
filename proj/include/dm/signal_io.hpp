#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dm/tensor.hpp"

namespace dm::io {

// One second of multichannel time-domain signal for one cut, row-major
// [sample_rate x channels]. The first `spectral_channels` (C2) channels of a
// configured layout are vibration; the rest are machine status held at the
// controller value between updates.
struct CutSignal {
    std::uint32_t sample_rate = 0;
    std::uint16_t channels = 0;
    std::vector<float> samples; // sample_rate * channels

    float at(std::uint32_t row, std::uint16_t ch) const {
        return samples[static_cast<std::size_t>(row) * channels + ch];
    }
    float& at(std::uint32_t row, std::uint16_t ch) {
        return samples[static_cast<std::size_t>(row) * channels + ch];
    }
};

// Log-magnitude real-FFT bins per vibration channel, [sample_rate/2+1 x C2].
struct SpectralCut {
    std::uint32_t bins = 0;
    std::uint16_t channels = 0;
    std::vector<float> values;
};

// A workpiece groups the cuts machined at one location with one measured
// label. label_mm follows the measured-minus-target sign convention.
struct WorkpieceSample {
    std::string id;
    float label_mm = 0.0f;
    std::uint32_t config_epoch = 0;
    std::vector<CutSignal> cuts;
};

// Per-channel z-score statistics fitted on the pretraining split and carried
// unchanged through fine-tuning. Spectral stats are over log1p magnitudes.
struct NormStats {
    std::vector<double> time_mean, time_std;
    std::vector<double> spec_mean, spec_std;
};

struct NormalizedCut {
    Tensor time;     // [SR, C1]
    Tensor spectral; // [SR/2+1, C2]
};

// --- operations -----------------------------------------------------------

// Real-FFT magnitude of the first c2 (vibration) channels, log1p encoded.
SpectralCut rfft_magnitude(const CutSignal& cut, std::uint16_t c2);

// Pre-log magnitudes of one channel; the Parseval/purity checks run on this.
std::vector<double> rfft_magnitude_raw(const CutSignal& cut, std::uint16_t ch);

NormStats fit_stats(const std::vector<WorkpieceSample>& dataset, std::uint16_t c2);

std::vector<NormalizedCut> apply_stats(const WorkpieceSample& sample, const NormStats& stats,
                                       std::uint16_t c2);

// --- DMDS container ---------------------------------------------------------

void save_dataset(const std::string& path, const std::vector<WorkpieceSample>& samples);
std::vector<WorkpieceSample> load_dataset(const std::string& path);

// Serialize to bytes (save_dataset writes exactly these).
std::vector<std::uint8_t> encode_dataset(const std::vector<WorkpieceSample>& samples);
std::vector<WorkpieceSample> decode_dataset(const std::vector<std::uint8_t>& bytes);

// Plain-text interchange: a manifest names label/config_epoch and one CSV per
// cut. Accepts an optional `window=centered|trailing` key recording how the
// one-second window was taken.
std::vector<WorkpieceSample> import_text_dataset(const std::string& manifest_path);

// Loads either container: DMDS magic -> binary, otherwise text manifest.
std::vector<WorkpieceSample> load_dataset_any(const std::string& path);

// --- split manifest ---------------------------------------------------------

enum class SplitRole { train, shot, test };

struct SplitEntry {
    std::string id;
    SplitRole role = SplitRole::train;
    std::uint32_t epoch = 0;
};

std::string role_name(SplitRole role);
SplitRole parse_role(const std::string& name);

void save_split(const std::string& path, const std::vector<SplitEntry>& entries);
std::vector<SplitEntry> load_split(const std::string& path);

} // namespace dm::io
