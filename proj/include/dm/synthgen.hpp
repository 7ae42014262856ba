#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dm/signal_io.hpp"

namespace dm::synth {

// RPM held from start_index until the next segment begins.
struct RpmSegment {
    int start_index = 0;
    double rpm = 1800.0;
};

// A configuration change (tool reposition, restart, new date): label offset
// and a harmonic-gain multiplier emulating a tool/coating difference.
struct ConfigShift {
    int start_index = 0;
    double error_offset_mm = 0.0;
    double harmonic_gain = 1.0;
};

// Deterministic stand-in for the proprietary factory datasets. Labels are a
// known function of latent tool wear, spindle speed and configuration
// offsets, so end-to-end learning and two-shot adaptation are verifiable.
struct SynthConfig {
    std::uint64_t seed = 7;
    int n_workpieces = 347;
    int n_cuts = 3;
    std::uint32_t sample_rate = 2048;
    std::uint16_t time_channels = 6;    // 3 vibration + RPM + spindle/turret current
    std::uint16_t spectral_channels = 3;
    double wear_rate = 1.0 / 300.0;     // wear progress increment per workpiece
    double wear_curve = 1.8;            // break-in steepness of the saturating wear law
    std::vector<RpmSegment> rpm_schedule{{0, 1800.0}};
    std::vector<ConfigShift> config_shifts; // change points; index 0 implicit
    double noise_std = 0.001;           // label noise, mm
    double label_quantum_mm = 0.001;    // measurement resolution

    // Physics constants of the synthetic lathe, fixed here and relied on by
    // the learnability bounds in the tests.
    double wear_amp_gain = 1.0;        // harmonic amplitude growth per unit wear
    double wear_noise_gain = 0.5;      // broadband noise growth per unit wear
    double wear_current_gain = 0.4;    // motor current growth per unit wear
    double wear_error_gain_mm = 0.04;  // label slope vs wear
    double rpm_error_gain_mm = 0.02;   // label slope vs relative RPM deviation
    double base_error_mm = 0.01;
    double rpm_ref = 1800.0;
    double base_signal_noise = 0.02;   // broadband vibration noise, g
    double harmonic_amp = 0.6;         // spindle-frequency amplitude, g
    double resonance_amp = 0.3;        // tool-resonance amplitude, g
    double resonance_center_hz = 420.0;
    double resonance_drift = 0.25;     // relative center drift per unit wear
    double resonance_gain = 1.0;       // material-analog multiplier

    void validate() const;
};

// Latent wear state: saturating break-in-then-steady-state law
// 1 - exp(-wear_curve * index * wear_rate).
double latent_wear(const SynthConfig& cfg, int index);

// Piecewise lookups along the workpiece axis.
double rpm_at(const SynthConfig& cfg, int index);
const ConfigShift* shift_at(const SynthConfig& cfg, int index); // nullptr before first shift
std::uint32_t epoch_at(const SynthConfig& cfg, int index);

// Label before measurement noise/quantization; the deterministic part the
// ridge oracle regresses against.
double clean_label(const SynthConfig& cfg, int index);

io::WorkpieceSample generate_workpiece(const SynthConfig& cfg, int index);
std::vector<io::WorkpieceSample> generate_dataset(const SynthConfig& cfg);

// Expected MAE of a perfect predictor against the injected label noise and
// quantization: sigma*sqrt(2/pi) + quantum/4.
double label_noise_floor_mae(const SynthConfig& cfg);

// --- table-analog suites ----------------------------------------------------

enum class Suite { pretrain, adapt_tool, adapt_material };

Suite parse_suite(const std::string& name);
std::string suite_name(Suite s);

// 347 workpieces, 14 configuration changes, RPM 1100-2700.
SynthConfig pretrain_suite_config(std::uint64_t seed, int n_workpieces = 347);
// 87 workpieces, 2 configuration epochs, shifted harmonic gain (tool analog).
SynthConfig adapt_tool_suite_config(std::uint64_t seed);
// 34 workpieces, 3 configuration epochs, altered resonance band (material analog).
SynthConfig adapt_material_suite_config(std::uint64_t seed);

SynthConfig suite_config(Suite s, std::uint64_t seed, int n_workpieces = 0);

// Split manifests. Pretrain suites carry both protocols; adaptation suites
// mark the first two workpieces of every configuration epoch as shots.
std::vector<io::SplitEntry> random_split_manifest(const SynthConfig& cfg,
                                                  const std::vector<io::WorkpieceSample>& ds,
                                                  double ratio);
std::vector<io::SplitEntry> sequential_split_manifest(const SynthConfig& cfg,
                                                      const std::vector<io::WorkpieceSample>& ds,
                                                      double ratio);
std::vector<io::SplitEntry> shot_split_manifest(const std::vector<io::WorkpieceSample>& ds,
                                                int shots_per_epoch);

struct SuiteFiles {
    std::string dataset_path;
    std::vector<std::string> split_paths;
};

// Writes <dir>/<suite>.dmds plus its split manifest(s).
SuiteFiles write_suite(Suite s, const SynthConfig& cfg, const std::string& dir, double ratio = 0.8);

} // namespace dm::synth
