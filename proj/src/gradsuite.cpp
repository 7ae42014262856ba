#include "dm/gradsuite.hpp"

#include "dm/gradcheck.hpp"
#include "dm/rng.hpp"

namespace dm::gradsuite {

namespace {

using DTensor = TensorT<double>;
using DGraph = GraphT<double>;
using DNet = model::NetT<double>;

DTensor random_tensor(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
    DTensor t = zeros<double>(std::move(shape));
    Rng rng(seed);
    for (auto& v : *t.data) v = rng.normal(0.0, scale);
    return t;
}

// Inputs = the data tensor plus the net's own parameter tensors. The store
// tensors are marked trainable first so the handles placed in the input list
// share both the value and gradient buffers the network ops will use.
std::vector<DTensor> with_params(const DTensor& x, DNet& net, const std::string& prefix) {
    std::vector<DTensor> inputs{x};
    for (auto& t : net.params().tensors)
        if (t.name.rfind(prefix, 0) == 0) {
            t.ensure_grad();
            inputs.push_back(t);
        }
    return inputs;
}

CheckResult run_one(const std::string& name, const ScalarClosure<double>& f,
                    std::vector<DTensor>& inputs) {
    const auto report = grad_check<double>(f, inputs);
    return {name, report.max_rel_err};
}

} // namespace

model::ModelConfig tiny_config() {
    model::ModelConfig cfg;
    cfg.width = 8;
    cfg.sample_rate = 64;
    // Two stacks: the 33-bin spectral stream only survives two halvings.
    cfg.stacks = 2;
    cfg.kernel_schedule = {11, 7, 3};
    cfg.dropout_p = 0.0;
    cfg.seed = 97;
    return cfg;
}

SuiteResult run_suite() {
    const auto cfg = tiny_config();
    DNet net(cfg, model::build_params<double>(cfg));
    DNet adapted(cfg, [&] {
        auto p = model::build_params<double>(cfg);
        model::insert_adapters(p, cfg);
        return p;
    }());
    Rng dummy(0);

    SuiteResult result;
    auto add = [&result](CheckResult r) {
        result.worst = std::max(result.worst, r.max_rel_err);
        result.checks.push_back(std::move(r));
    };

    {
        DTensor x = random_tensor({static_cast<int>(cfg.sample_rate), cfg.time_channels}, 11);
        auto inputs = with_params(x, net, "time.stem.");
        add(run_one("stem", [&](DGraph& g, std::vector<DTensor>& in) {
            return sum_all(g, net.stem_forward(g, in[0], "time", dummy));
        }, inputs));
    }
    {
        DTensor x = random_tensor({13, cfg.width}, 12);
        auto inputs = with_params(x, net, "time.di0.");
        add(run_one("d_inception", [&](DGraph& g, std::vector<DTensor>& in) {
            return sum_all(g, net.d_inception_forward(g, in[0], "time.di0", cfg.kernel_schedule[0],
                                                      dummy, false));
        }, inputs));
    }
    {
        DTensor x = random_tensor({13, cfg.width}, 13);
        auto inputs = with_params(x, net, "time.di0.ca.");
        add(run_one("channel_attention", [&](DGraph& g, std::vector<DTensor>& in) {
            DTensor mc = net.channel_attention(g, in[0], "time.di0");
            return sum_all(g, mul_channels(g, in[0], mc));
        }, inputs));
    }
    {
        DTensor x = random_tensor({13, cfg.width}, 14);
        auto inputs = with_params(x, net, "time.di0.ta.");
        add(run_one("temporal_attention", [&](DGraph& g, std::vector<DTensor>& in) {
            DTensor mt = net.temporal_attention(g, in[0], "time.di0");
            return sum_all(g, mul_positions(g, in[0], mt));
        }, inputs));
    }
    {
        DTensor x = random_tensor({13, cfg.width}, 15);
        auto inputs = with_params(x, net, "time.ds0.");
        add(run_one("downsampling", [&](DGraph& g, std::vector<DTensor>& in) {
            return sum_all(g, net.downsampling_forward(g, in[0], "time.ds0", false));
        }, inputs));
    }
    {
        DTensor x = random_tensor({13, cfg.width}, 16);
        // Start the adapter away from its zero-init so the check exercises
        // nontrivial curvature.
        Rng jitter(161);
        for (auto& t : adapted.params().tensors)
            if (t.name.rfind("time.di0.adapter.", 0) == 0)
                for (auto& v : *t.data) v += jitter.normal(0.0, 0.3);
        auto inputs = with_params(x, adapted, "time.di0.adapter.");
        add(run_one("adapter", [&](DGraph& g, std::vector<DTensor>& in) {
            return sum_all(g, adapted.adapter_forward(g, in[0], "time.di0"));
        }, inputs));
    }
    {
        DTensor h = random_tensor({8 * cfg.width}, 17);
        auto inputs = with_params(h, net, "head.");
        add(run_one("head", [&](DGraph& g, std::vector<DTensor>& in) {
            return net.projection_head(g, in[0]);
        }, inputs));
    }
    {
        std::vector<DTensor> preds;
        Rng rng(18);
        std::vector<double> targets;
        for (int i = 0; i < 5; ++i) {
            preds.push_back(scalar_tensor<double>(rng.normal(0.0, 1.0)));
            targets.push_back(rng.normal(0.0, 1.0));
        }
        add(run_one("mse_loss", [&](DGraph& g, std::vector<DTensor>& in) {
            return mse_loss(g, in, targets);
        }, preds));
    }
    {
        const int n_cuts = 2;
        std::vector<DTensor> streams;
        for (int n = 0; n < n_cuts; ++n) {
            streams.push_back(random_tensor({static_cast<int>(cfg.sample_rate), cfg.time_channels},
                                            30 + n, 0.7));
            streams.push_back(random_tensor(
                {static_cast<int>(cfg.sample_rate) / 2 + 1, cfg.spectral_channels}, 40 + n, 0.7));
        }
        std::vector<DTensor> inputs = streams;
        for (auto& t : net.params().tensors) {
            t.ensure_grad();
            inputs.push_back(t);
        }
        add(run_one("full_model", [&](DGraph& g, std::vector<DTensor>& in) {
            std::vector<DTensor> time{in[0], in[2]};
            std::vector<DTensor> spec{in[1], in[3]};
            return net.forward(g, time, spec, dummy);
        }, inputs));
    }
    return result;
}

} // namespace dm::gradsuite
