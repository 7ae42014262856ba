#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "dm/gradsuite.hpp"
#include "dm/metrics.hpp"
#include "dm/synthgen.hpp"
#include "dm/train.hpp"

using namespace dm;
using namespace dm::train;

namespace {

// Small synthetic dataset wired for fast epochs.
std::vector<io::WorkpieceSample> tiny_dataset(int n, double noise_std, std::uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_workpieces = n;
    cfg.n_cuts = 2;
    cfg.sample_rate = 256;
    cfg.noise_std = noise_std;
    cfg.rpm_schedule = {{0, 1500.0}, {n / 2, 2100.0}};
    cfg.config_shifts = {{n / 2, 0.004, 1.3}};
    return synth::generate_dataset(cfg);
}

model::ModelConfig tiny_model(std::uint64_t seed) {
    auto cfg = gradsuite::tiny_config();
    cfg.sample_rate = 256;
    cfg.dropout_p = 0.1;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("plan defaults pin the published regimes") {
    const auto pre = TrainPlan::pretrain_defaults();
    CHECK(pre.lr == 0.001);
    CHECK(pre.batch_size == 512);
    CHECK(pre.epochs == 512);
    const auto fine = TrainPlan::finetune_defaults();
    CHECK(fine.lr == 0.00001);
    CHECK(fine.batch_size == 32);
    CHECK(fine.epochs == 64);
    CHECK(static_cast<double>(fine.epochs) / pre.epochs == 0.125);
}

TEST_CASE("adamw: single-step oracle, fixed points, masking, decay rule") {
    // Hand-computed step: m_hat = 1, v_hat = 1, w <- 1 - 0.1/(1+1e-8).
    model::ParamStore params;
    auto& w = params.create("x.w", {1});
    (*w.data)[0] = 1.0f;
    w.ensure_grad();
    (*w.grad)[0] = 1.0f;
    model::TrainableMask mask;
    mask.names.insert("x.w");
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(0.1, cfg);
    opt.step(params, mask);
    CHECK((*w.data)[0] == doctest::Approx(0.9).epsilon(1e-6));

    // Zero gradient leaves the value untouched.
    model::ParamStore p2;
    auto& w2 = p2.create("y.w", {3});
    (*w2.data)[0] = 0.5f;
    (*w2.data)[1] = -2.0f;
    (*w2.data)[2] = 7.0f;
    w2.ensure_grad();
    AdamW opt2(0.1, cfg);
    opt2.step(p2, model::pretrain_mask(p2));
    CHECK((*w2.data)[0] == 0.5f);
    CHECK((*w2.data)[1] == -2.0f);
    CHECK((*w2.data)[2] == 7.0f);

    // lr = 0 is a 0-ulp no-op even with a gradient.
    (*w2.grad)[0] = 3.0f;
    AdamW opt3(0.0, cfg);
    opt3.step(p2, model::pretrain_mask(p2));
    CHECK((*w2.data)[0] == 0.5f);

    // Frozen tensors receive no update regardless of gradient.
    model::ParamStore p3;
    auto& frozen = p3.create("z.w", {1});
    (*frozen.data)[0] = 4.0f;
    frozen.ensure_grad();
    (*frozen.grad)[0] = 100.0f;
    model::TrainableMask empty_mask;
    AdamW opt4(0.1, cfg);
    opt4.step(p3, empty_mask);
    CHECK((*frozen.data)[0] == 4.0f);

    // Non-finite gradient is reported with the tensor name.
    model::ParamStore p4;
    auto& bad = p4.create("nan.w", {1});
    bad.ensure_grad();
    (*bad.grad)[0] = std::numeric_limits<float>::quiet_NaN();
    AdamW opt5(0.1, cfg);
    CHECK_THROWS_WITH_AS(opt5.step(p4, model::pretrain_mask(p4)),
                         doctest::Contains("nan.w"), OptimError);

    // Decoupled decay touches weights only.
    CHECK(weight_decay_applies("time.di0.fc.w"));
    CHECK(weight_decay_applies("head.w"));
    CHECK(!weight_decay_applies("time.di0.fc.b"));
    CHECK(!weight_decay_applies("time.di0.ln.gamma"));
    CHECK(!weight_decay_applies("time.di0.ln.beta"));
    CHECK(!weight_decay_applies("time.di0.adapter.w1.b"));
    CHECK(weight_decay_applies("time.di0.adapter.w1.w"));
}

TEST_CASE("splits: ratios, sequential promotion, manifest mapping") {
    const auto r = random_split(347, 0.8, 42);
    CHECK(r.train.size() == 277);
    CHECK(r.test.size() == 70);

    synth::SynthConfig cfg = synth::pretrain_suite_config(7);
    cfg.sample_rate = 256;
    cfg.n_cuts = 1;
    const auto ds = synth::generate_dataset(cfg);
    const auto s = sequential_split(ds, 0.8);
    CHECK(s.train.size() == 281);
    CHECK(s.test.size() == 66);

    const auto manifest = synth::sequential_split_manifest(cfg, ds, 0.8);
    const auto m = split_from_manifest(ds, manifest);
    CHECK(m.train.size() == 281);
    CHECK(m.test.size() == 66);
}

TEST_CASE("fit: determinism and loss descent on clean data") {
    const auto ds = tiny_dataset(12, 0.0, 5);
    auto mcfg = tiny_model(11);
    mcfg.dropout_p = 0.0; // noise-free descent check

    TrainPlan plan;
    plan.lr = 0.002;
    plan.batch_size = 6;
    plan.epochs = 60;
    plan.seed = 31;

    Split split;
    for (int i = 0; i < 12; ++i) split.train.push_back(i);

    std::ostringstream log1, log2;
    const auto r1 = pretrain(ds, mcfg, plan, split, {}, 2, &log1);
    const auto r2 = pretrain(ds, mcfg, plan, split, {}, 2, &log2);

    // Same seed, same data: identical checkpoint bytes and identical losses
    // (wall_ms is the one column allowed to differ).
    CHECK(ckpt::encode_checkpoint(r1.checkpoint) == ckpt::encode_checkpoint(r2.checkpoint));
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);

    // Finite losses, and no 50-epoch window ends higher than it began.
    for (const auto& e : r1.log) CHECK(std::isfinite(e.loss));
    for (std::size_t i = 0; i + 50 < r1.log.size(); ++i)
        CHECK(r1.log[i + 50].loss <= r1.log[i].loss * (1.0 + 1e-9));

    // Metrics log format: epoch,loss,wall_ms lines.
    std::istringstream in(log1.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 2);
        ++lines;
    }
    CHECK(lines == plan.epochs);
}

TEST_CASE("finetune: mask soundness, frozen bytes, zero-epoch identity, SR rejection") {
    const auto ds = tiny_dataset(10, 0.001, 6);
    const auto mcfg = tiny_model(13);

    TrainPlan plan;
    plan.lr = 0.002;
    plan.batch_size = 8;
    plan.epochs = 8;
    plan.seed = 77;
    Split split;
    for (int i = 0; i < 8; ++i) split.train.push_back(i);
    split.test = {8, 9};
    const auto pre = pretrain(ds, mcfg, plan, split, {}, 2, nullptr);

    std::vector<io::WorkpieceSample> shots{ds[8], ds[9]};

    // Zero-epoch fine-tune: adapters inserted but function preserved.
    TrainPlan zero = TrainPlan::finetune_defaults();
    zero.epochs = 0;
    const auto same = finetune_two_shot(pre.checkpoint, shots, zero, {}, 1, nullptr);
    CHECK(same.checkpoint.has_adapters());
    const auto before = metrics::predict(pre.checkpoint, shots);
    const auto after = metrics::predict(same.checkpoint, shots);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);

    // Real fine-tune: exactly the masked tensors change.
    TrainPlan fine = TrainPlan::finetune_defaults();
    fine.epochs = 16;
    fine.lr = 0.001;
    fine.seed = 78;
    const auto tuned = finetune_two_shot(pre.checkpoint, shots, fine, {}, 2, nullptr);
    const auto mask = model::finetune_mask(tuned.checkpoint.params);
    std::size_t changed = 0, frozen_diff = 0;
    auto baseline = pre.checkpoint.params;
    model::insert_adapters(baseline, pre.checkpoint.config);
    for (const auto& t : tuned.checkpoint.params.tensors) {
        const auto& orig = baseline.at(t.name);
        const bool same_bytes =
            std::memcmp(t.data->data(), orig.data->data(), t.numel() * sizeof(float)) == 0;
        if (mask.contains(t.name)) {
            if (!same_bytes) ++changed;
        } else if (!same_bytes) {
            ++frozen_diff;
        }
    }
    CHECK(frozen_diff == 0);
    CHECK(changed > 0);

    // Heavy fine-tuning overfits the shots: their MAE collapses.
    TrainPlan heavy = fine;
    heavy.epochs = 200;
    heavy.lr = 0.003;
    const auto over = finetune_two_shot(pre.checkpoint, shots, heavy, {}, 2, nullptr);
    const auto rep_before = metrics::evaluate(pre.checkpoint, shots);
    const auto rep_after = metrics::evaluate(over.checkpoint, shots);
    CHECK(rep_after.mae < rep_before.mae);

    // A checkpoint trained at one sampling rate refuses data at another.
    synth::SynthConfig other;
    other.n_workpieces = 2;
    other.n_cuts = 2;
    other.sample_rate = 512;
    const auto wrong_sr = synth::generate_dataset(other);
    CHECK_THROWS_AS(finetune_two_shot(pre.checkpoint, wrong_sr, fine, {}, 1, nullptr), ConfigError);

    // NormStats are reused from the checkpoint, never refitted.
    CHECK(tuned.checkpoint.stats.time_mean == pre.checkpoint.stats.time_mean);
    CHECK(tuned.checkpoint.stats.spec_std == pre.checkpoint.stats.spec_std);
}
