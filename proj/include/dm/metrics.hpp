#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dm/checkpoint.hpp"
#include "dm/signal_io.hpp"

namespace dm::metrics {

// Population (1/n) normalization throughout. pearson_corr is undefined when
// either series has zero variance — reported explicitly, never as NaN.
double mae(const std::vector<double>& y, const std::vector<double>& y_hat);
double rmse(const std::vector<double>& y, const std::vector<double>& y_hat);
std::optional<double> pearson_corr(const std::vector<double>& y, const std::vector<double>& y_hat);

struct ScatterPoint {
    std::string id;
    double y = 0.0;
    double y_hat = 0.0;
};

struct EvalReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> corr;
    std::size_t n = 0;
    std::vector<ScatterPoint> pairs;
};

EvalReport report_from_pairs(std::vector<ScatterPoint> pairs);

// Infer-mode predictions, one per workpiece, in input order.
std::vector<double> predict(const ckpt::Checkpoint& checkpoint,
                            const std::vector<io::WorkpieceSample>& pieces);

EvalReport evaluate(const ckpt::Checkpoint& checkpoint,
                    const std::vector<io::WorkpieceSample>& pieces);

// `metric=value` lines at <prefix>.txt plus a scatter CSV (id,y_mm,y_hat_mm)
// at <prefix>.csv.
void write_report(const std::string& path_prefix, const EvalReport& report);

} // namespace dm::metrics
