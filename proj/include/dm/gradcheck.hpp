#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dm/ops.hpp"
#include "dm/tensor.hpp"

namespace dm {

struct GradCheckEntry {
    std::string input_name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> inputs;
    double max_rel_err = 0.0;
    bool passed(double rel_tol) const { return max_rel_err < rel_tol; }
};

// A differentiable scalar closure over the given inputs. Must be
// deterministic and mode-independent (no active dropout). Tensors are
// shared-buffer handles, so the closure may either consume the vector
// directly or capture views of the same buffers (e.g. a network whose
// parameter store aliases them).
template <typename S>
using ScalarClosure = std::function<TensorT<S>(GraphT<S>&, std::vector<TensorT<S>>&)>;

// Compares reverse-mode gradients against central finite differences
// (coordinates perturbed in place and restored). Run with S = double for the
// 64-bit verification mode. The relative error denominator is
// max(|analytic|, |numeric|, 1e-6) so near-zero gradients are judged on an
// absolute scale.
template <typename S>
GradCheckReport grad_check(const ScalarClosure<S>& f, std::vector<TensorT<S>>& inputs,
                           double h = 1e-5) {
    GradCheckReport report;

    for (auto& in : inputs) {
        in.ensure_grad();
        in.zero_grad();
    }
    GraphT<S> g(Mode::train);
    TensorT<S> y = f(g, inputs);
    if (y.numel() != 1) throw GradCheckError("closure must produce a scalar");
    if (!std::isfinite(static_cast<double>((*y.data)[0])))
        throw GradCheckError("closure produced a non-finite value");
    y.ensure_grad();
    g.backward(y);

    std::vector<std::vector<S>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) analytic.emplace_back(in.grad->begin(), in.grad->end());

    auto eval = [&]() -> double {
        GraphT<S> gi(Mode::infer);
        TensorT<S> v = f(gi, inputs);
        const double r = static_cast<double>((*v.data)[0]);
        if (!std::isfinite(r)) throw GradCheckError("closure produced a non-finite value");
        return r;
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        GradCheckEntry entry;
        entry.input_name = inputs[k].name.empty() ? "input" + std::to_string(k) : inputs[k].name;
        auto& buf = *inputs[k].data;
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const S keep = buf[i];
            buf[i] = keep + static_cast<S>(h);
            const double fp = eval();
            buf[i] = keep - static_cast<S>(h);
            const double fm = eval();
            buf[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double an = static_cast<double>(analytic[k][i]);
            const double denom = std::max({std::fabs(an), std::fabs(numeric), 1e-6});
            const double err = std::fabs(an - numeric) / denom;
            if (err >= entry.max_rel_err) {
                entry.max_rel_err = err;
                entry.worst_index = i;
                entry.analytic = an;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.inputs.push_back(std::move(entry));
    }
    return report;
}

} // namespace dm
