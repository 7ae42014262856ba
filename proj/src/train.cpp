#include "dm/train.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "dm/errors.hpp"
#include "dm/rng.hpp"

namespace dm::train {

void AdamW::step(model::ParamStore& params, const model::TrainableMask& mask) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    for (auto& tensor : params.tensors) {
        if (!mask.contains(tensor.name)) continue;
        if (!tensor.grad) throw OptimError("tensor '" + tensor.name + "' has no gradient");
        auto& m = m_[tensor.name];
        auto& v = v_[tensor.name];
        if (m.empty()) {
            m.assign(tensor.numel(), 0.0f);
            v.assign(tensor.numel(), 0.0f);
        }
        const bool decay = weight_decay_applies(tensor.name);
        float* __restrict p = tensor.ptr();
        const float* __restrict g = tensor.grad_ptr();
        const std::size_t n = tensor.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const float gi = g[i];
            if (!std::isfinite(gi)) throw OptimError("non-finite gradient in tensor '" + tensor.name + "'");
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + cfg_.eps);
            if (decay) update += cfg_.weight_decay * p[i];
            p[i] = static_cast<float>(p[i] - lr_ * update);
        }
    }
}

std::vector<PreparedPiece> prepare(const std::vector<io::WorkpieceSample>& samples,
                                   const io::NormStats& stats, std::uint16_t c2) {
    std::vector<PreparedPiece> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        PreparedPiece p;
        p.id = s.id;
        p.label = s.label_mm;
        auto cuts = io::apply_stats(s, stats, c2);
        for (auto& c : cuts) {
            p.time_streams.push_back(std::move(c.time));
            p.spectral_streams.push_back(std::move(c.spectral));
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

// Accumulate worker gradients into the main store in fixed worker order.
void reduce_grads(model::ParamStore& main, const std::vector<model::Net>& workers) {
    for (std::size_t k = 0; k < main.tensors.size(); ++k) {
        auto& dst = main.tensors[k];
        if (!dst.requires_grad) continue;
        float* __restrict gd = dst.grad_ptr();
        const std::size_t n = dst.numel();
        for (const auto& w : workers) {
            const float* __restrict gs = w.params().tensors[k].grad_ptr();
            for (std::size_t i = 0; i < n; ++i) gd[i] += gs[i];
        }
    }
}

} // namespace

std::vector<EpochLog> fit(model::Net& net, const model::TrainableMask& mask,
                          const std::vector<PreparedPiece>& train_set, const TrainPlan& plan,
                          const AdamWConfig& opt_cfg, int threads, std::ostream* metrics) {
    if (train_set.empty()) throw DataError("fit: empty training set");
    if (plan.batch_size < 1) throw ConfigError("fit: batch_size must be >= 1");
    if (plan.epochs < 0) throw ConfigError("fit: epochs must be >= 0");

    net.set_trainable(mask);
    AdamW opt(plan.lr, opt_cfg);

    const int n = static_cast<int>(train_set.size());
    const int n_workers = std::max(1, threads);
    std::vector<model::Net> workers;
    workers.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w)
        workers.emplace_back(net.config(), net.params().grad_view());

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::vector<double> sq_err(n, 0.0);
    std::vector<EpochLog> logs;
    logs.reserve(plan.epochs);

    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (plan.shuffle) {
            Rng shuffle_rng(derive_seed(plan.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);
        }
        for (int start = 0; start < n; start += plan.batch_size) {
            const int end = std::min(start + plan.batch_size, n);
            const int batch = end - start;

            net.zero_grad();
            for (auto& w : workers) w.zero_grad();

            auto run_chunk = [&](int worker, int lo, int hi) {
                model::Net& wnet = workers[worker];
                for (int pos = lo; pos < hi; ++pos) {
                    const int idx = order[start + pos];
                    const PreparedPiece& piece = train_set[idx];
                    Rng rng(derive_seed(plan.seed, "dropout",
                                        static_cast<std::uint64_t>(epoch),
                                        static_cast<std::uint64_t>(idx)));
                    Graph g(Mode::train);
                    Tensor pred = wnet.forward(g, piece.time_streams, piece.spectral_streams, rng);
                    const float d = (*pred.data)[0] - piece.label;
                    sq_err[static_cast<std::size_t>(start + pos)] = static_cast<double>(d) * d;
                    // d(mse)/d(pred_i) for a batch mean of squared errors.
                    g.backward(pred, 2.0f * d / static_cast<float>(batch));
                }
            };

            if (n_workers == 1 || batch == 1) {
                run_chunk(0, 0, batch);
            } else {
                std::vector<std::thread> pool;
                const int chunk = (batch + n_workers - 1) / n_workers;
                for (int w = 0; w < n_workers; ++w) {
                    const int lo = w * chunk, hi = std::min(lo + chunk, batch);
                    if (lo >= hi) break;
                    pool.emplace_back(run_chunk, w, lo, hi);
                }
                for (auto& t : pool) t.join();
            }

            reduce_grads(net.params(), workers);
            opt.step(net.params(), mask);
        }

        double loss = 0.0;
        for (int i = 0; i < n; ++i) loss += sq_err[i];
        loss /= n;
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        logs.push_back({epoch, loss, ms});
        if (metrics) (*metrics) << epoch << ',' << loss << ',' << ms << '\n';
    }
    return logs;
}

Split random_split(int n, double ratio, std::uint64_t seed) {
    if (n < 1) throw DataError("random_split: empty dataset");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split/random"));
    rng.shuffle(order);
    const int n_train = static_cast<int>(std::floor(ratio * n));
    Split s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.test.assign(order.begin() + n_train, order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

Split sequential_split(const std::vector<io::WorkpieceSample>& ds, double ratio) {
    const int n = static_cast<int>(ds.size());
    if (n < 1) throw DataError("sequential_split: empty dataset");
    const int boundary = static_cast<int>(std::floor(ratio * n));
    std::vector<int> seg_start(n, 0);
    for (int i = 1; i < n; ++i)
        seg_start[i] = ds[i].config_epoch == ds[i - 1].config_epoch ? seg_start[i - 1] : i;
    Split s;
    for (int i = 0; i < n; ++i) {
        const bool shot = seg_start[i] >= boundary && i - seg_start[i] < 2;
        if (i < boundary || shot) s.train.push_back(i);
        else s.test.push_back(i);
    }
    return s;
}

Split split_from_manifest(const std::vector<io::WorkpieceSample>& ds,
                          const std::vector<io::SplitEntry>& manifest) {
    std::unordered_map<std::string, io::SplitRole> roles;
    for (const auto& e : manifest) roles[e.id] = e.role;
    Split s;
    for (int i = 0; i < static_cast<int>(ds.size()); ++i) {
        auto it = roles.find(ds[i].id);
        if (it == roles.end()) throw DataError("split manifest does not cover workpiece '" + ds[i].id + "'");
        if (it->second == io::SplitRole::test) s.test.push_back(i);
        else s.train.push_back(i);
    }
    return s;
}

PretrainResult pretrain(const std::vector<io::WorkpieceSample>& dataset,
                        const model::ModelConfig& cfg, const TrainPlan& plan, const Split& split,
                        const AdamWConfig& opt_cfg, int threads, std::ostream* metrics) {
    if (dataset.empty()) throw DataError("pretrain: empty dataset");
    if (split.train.empty()) throw DataError("pretrain: empty train split");
    cfg.validate();
    if (dataset.front().cuts.front().sample_rate != cfg.sample_rate)
        throw ConfigError("pretrain: dataset sample rate does not match model config");
    if (dataset.front().cuts.front().channels != cfg.time_channels)
        throw ConfigError("pretrain: dataset channel count does not match model config");

    std::vector<io::WorkpieceSample> train_pieces;
    train_pieces.reserve(split.train.size());
    for (int i : split.train) train_pieces.push_back(dataset[static_cast<std::size_t>(i)]);

    const io::NormStats stats = io::fit_stats(train_pieces, cfg.spectral_channels);
    const auto prepared = prepare(train_pieces, stats, cfg.spectral_channels);

    model::Net net(cfg, model::build_params<float>(cfg));
    const auto mask = model::pretrain_mask(net.params());

    PretrainResult result;
    result.split = split;
    result.log = fit(net, mask, prepared, plan, opt_cfg, threads, metrics);
    result.checkpoint = ckpt::make_checkpoint(cfg, stats, net.params(), mask);
    return result;
}

FinetuneResult finetune_two_shot(const ckpt::Checkpoint& input,
                                 const std::vector<io::WorkpieceSample>& shots,
                                 const TrainPlan& plan, const AdamWConfig& opt_cfg, int threads,
                                 std::ostream* metrics) {
    if (shots.empty()) throw DataError("finetune: need at least one shot workpiece");
    const auto& cfg = input.config;
    for (const auto& s : shots) {
        if (s.cuts.front().sample_rate != cfg.sample_rate)
            throw ConfigError("finetune: shot sample rate " + std::to_string(s.cuts.front().sample_rate) +
                              " does not match checkpoint SR " + std::to_string(cfg.sample_rate));
        if (s.cuts.front().channels != cfg.time_channels)
            throw ConfigError("finetune: shot channel count does not match checkpoint");
    }

    model::ParamStore params;
    params.index = input.params.index;
    for (const auto& t : input.params.tensors) params.tensors.push_back(t.clone_values());
    if (!model::has_adapters(params)) model::insert_adapters(params, cfg);

    model::Net net(cfg, std::move(params));
    const auto mask = model::finetune_mask(net.params());

    // Normalization statistics come from the checkpoint, never refitted.
    const auto prepared = prepare(shots, input.stats, cfg.spectral_channels);

    FinetuneResult result;
    result.log = fit(net, mask, prepared, plan, opt_cfg, threads, metrics);
    result.checkpoint = ckpt::make_checkpoint(cfg, input.stats, net.params(), mask);
    return result;
}

} // namespace dm::train
