#include "dm/metrics.hpp"

#include <cmath>
#include <fstream>

#include "dm/errors.hpp"
#include "dm/rng.hpp"
#include "dm/train.hpp"

namespace dm::metrics {

namespace {
void check_lengths(const std::vector<double>& y, const std::vector<double>& y_hat, std::size_t min_n) {
    if (y.size() != y_hat.size()) throw DataError("metric: length mismatch");
    if (y.size() < min_n) throw DataError("metric: need at least " + std::to_string(min_n) + " points");
}
} // namespace

double mae(const std::vector<double>& y, const std::vector<double>& y_hat) {
    check_lengths(y, y_hat, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(y_hat[i] - y[i]);
    return acc / static_cast<double>(y.size());
}

double rmse(const std::vector<double>& y, const std::vector<double>& y_hat) {
    check_lengths(y, y_hat, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y_hat[i] - y[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(y.size()));
}

std::optional<double> pearson_corr(const std::vector<double>& y, const std::vector<double>& y_hat) {
    check_lengths(y, y_hat, 2);
    const double n = static_cast<double>(y.size());
    double my = 0.0, mh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        my += y[i];
        mh += y_hat[i];
    }
    my /= n;
    mh /= n;
    double cov = 0.0, vy = 0.0, vh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double a = y[i] - my, b = y_hat[i] - mh;
        cov += a * b;
        vy += a * a;
        vh += b * b;
    }
    if (vy == 0.0 || vh == 0.0) return std::nullopt;
    return cov / std::sqrt(vy * vh);
}

EvalReport report_from_pairs(std::vector<ScatterPoint> pairs) {
    if (pairs.empty()) throw DataError("evaluate: no pairs");
    std::vector<double> y, yh;
    y.reserve(pairs.size());
    yh.reserve(pairs.size());
    for (const auto& p : pairs) {
        y.push_back(p.y);
        yh.push_back(p.y_hat);
    }
    EvalReport r;
    r.n = pairs.size();
    r.mae = mae(y, yh);
    r.rmse = rmse(y, yh);
    r.corr = pairs.size() >= 2 ? pearson_corr(y, yh) : std::nullopt;
    r.pairs = std::move(pairs);
    return r;
}

std::vector<double> predict(const ckpt::Checkpoint& checkpoint,
                            const std::vector<io::WorkpieceSample>& pieces) {
    if (pieces.empty()) throw DataError("predict: no workpieces");
    const auto& cfg = checkpoint.config;
    for (const auto& s : pieces) {
        if (s.cuts.front().sample_rate != cfg.sample_rate)
            throw ConfigError("predict: dataset SR does not match checkpoint");
        if (s.cuts.front().channels != cfg.time_channels)
            throw ConfigError("predict: dataset channel count does not match checkpoint");
    }
    model::Net net(cfg, checkpoint.params);
    const auto prepared = train::prepare(pieces, checkpoint.stats, cfg.spectral_channels);
    Rng rng(0); // dropout is inert in infer mode
    std::vector<double> out;
    out.reserve(prepared.size());
    for (const auto& p : prepared) {
        Graph g(Mode::infer);
        Tensor y = net.forward(g, p.time_streams, p.spectral_streams, rng);
        out.push_back(static_cast<double>((*y.data)[0]));
    }
    return out;
}

EvalReport evaluate(const ckpt::Checkpoint& checkpoint,
                    const std::vector<io::WorkpieceSample>& pieces) {
    const auto preds = predict(checkpoint, pieces);
    std::vector<ScatterPoint> pairs;
    pairs.reserve(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i)
        pairs.push_back({pieces[i].id, static_cast<double>(pieces[i].label_mm), preds[i]});
    return report_from_pairs(std::move(pairs));
}

void write_report(const std::string& path_prefix, const EvalReport& report) {
    {
        std::ofstream f(path_prefix + ".txt", std::ios::trunc);
        if (!f) throw IOError("cannot open '" + path_prefix + ".txt' for writing");
        f << "n=" << report.n << '\n';
        f << "mae=" << report.mae << '\n';
        f << "rmse=" << report.rmse << '\n';
        if (report.corr) f << "corr=" << *report.corr << '\n';
        else f << "corr=undefined\n";
    }
    {
        std::ofstream f(path_prefix + ".csv", std::ios::trunc);
        if (!f) throw IOError("cannot open '" + path_prefix + ".csv' for writing");
        f << "id,y_mm,y_hat_mm\n";
        for (const auto& p : report.pairs) f << p.id << ',' << p.y << ',' << p.y_hat << '\n';
    }
}

} // namespace dm::metrics
