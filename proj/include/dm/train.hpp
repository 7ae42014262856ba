#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dm/checkpoint.hpp"
#include "dm/model.hpp"
#include "dm/signal_io.hpp"

namespace dm::train {

enum class Regime { pretrain, finetune };

struct TrainPlan {
    Regime regime = Regime::pretrain;
    double lr = 0.001;
    int batch_size = 512;
    int epochs = 512;
    std::uint64_t seed = 42;
    bool shuffle = true;

    static TrainPlan pretrain_defaults() { return TrainPlan{}; }
    static TrainPlan finetune_defaults() {
        TrainPlan p;
        p.regime = Regime::finetune;
        p.lr = 0.00001;
        p.batch_size = 32;
        p.epochs = 64;
        return p;
    }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay applies to weight matrices/kernels only; biases,
// layer-norm gamma/beta and adapter biases are exempt.
inline bool weight_decay_applies(const std::string& name) { return model::ends_with(name, ".w"); }

class AdamW {
public:
    explicit AdamW(double lr, AdamWConfig cfg = {}) : lr_(lr), cfg_(cfg) {}

    // One update over the masked tensors using their accumulated gradients.
    void step(model::ParamStore& params, const model::TrainableMask& mask);

    std::int64_t step_count() const { return t_; }

private:
    double lr_;
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, std::vector<float>> m_, v_;
};

// A workpiece with its normalized per-cut input streams precomputed, so the
// epoch loop never redoes normalization or FFT work.
struct PreparedPiece {
    std::string id;
    float label = 0.0f;
    std::vector<Tensor> time_streams;
    std::vector<Tensor> spectral_streams;
};

std::vector<PreparedPiece> prepare(const std::vector<io::WorkpieceSample>& samples,
                                   const io::NormStats& stats, std::uint16_t c2);

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

// Mini-batch loop over prepared pieces. Workpieces inside a batch are
// processed in parallel over `threads` workers with per-worker gradient
// buffers reduced in a fixed order, so a run is deterministic for a fixed
// (seed, data, plan, thread count). Writes `epoch,loss,wall_ms` lines.
std::vector<EpochLog> fit(model::Net& net, const model::TrainableMask& mask,
                          const std::vector<PreparedPiece>& train_set, const TrainPlan& plan,
                          const AdamWConfig& opt_cfg, int threads, std::ostream* metrics);

// --- splits -----------------------------------------------------------------

enum class SplitKind { random, sequential };

struct Split {
    std::vector<int> train; // includes promoted shots under the sequential protocol
    std::vector<int> test;
};

Split random_split(int n, double ratio, std::uint64_t seed);

// First floor(ratio*n) pieces train; epochs that begin inside the test region
// contribute their first two pieces to training as shots.
Split sequential_split(const std::vector<io::WorkpieceSample>& ds, double ratio);

// train = roles {train, shot}; test = role test. Entries are matched by id.
Split split_from_manifest(const std::vector<io::WorkpieceSample>& ds,
                          const std::vector<io::SplitEntry>& manifest);

// --- drivers ----------------------------------------------------------------

struct PretrainResult {
    ckpt::Checkpoint checkpoint;
    Split split;
    std::vector<EpochLog> log;
};

PretrainResult pretrain(const std::vector<io::WorkpieceSample>& dataset,
                        const model::ModelConfig& cfg, const TrainPlan& plan, const Split& split,
                        const AdamWConfig& opt_cfg, int threads, std::ostream* metrics);

struct FinetuneResult {
    ckpt::Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

// Inserts adapters when absent, trains only the fine-tune mask on the shot
// workpieces, reuses the checkpoint's normalization statistics unchanged.
FinetuneResult finetune_two_shot(const ckpt::Checkpoint& input,
                                 const std::vector<io::WorkpieceSample>& shots,
                                 const TrainPlan& plan, const AdamWConfig& opt_cfg, int threads,
                                 std::ostream* metrics);

} // namespace dm::train
