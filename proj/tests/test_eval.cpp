#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dm/metrics.hpp"
#include "dm/rng.hpp"

using namespace dm;
using namespace dm::metrics;

TEST_CASE("metrics: identity and hand-computed example") {
    std::vector<double> y{1, 2, 3};
    CHECK(mae(y, y) == 0.0);
    CHECK(rmse(y, y) == 0.0);
    auto c = pearson_corr(y, y);
    REQUIRE(c.has_value());
    CHECK(*c == doctest::Approx(1.0));

    std::vector<double> yh{1, 3, 2};
    CHECK(mae(y, yh) == doctest::Approx(2.0 / 3.0));
    CHECK(rmse(y, yh) == doctest::Approx(std::sqrt(2.0 / 3.0)));
    auto c2 = pearson_corr(y, yh);
    REQUIRE(c2.has_value());
    CHECK(*c2 == doctest::Approx(0.5));

    std::vector<double> flat{2, 2, 2};
    CHECK(!pearson_corr(y, flat).has_value());
    CHECK(std::isfinite(mae(y, flat)));
    CHECK(std::isfinite(rmse(y, flat)));
}

TEST_CASE("metrics: twenty random vectors against longhand statistics") {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(12);
        std::vector<double> y(n), yh(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.uniform(-3, 3);
            yh[i] = rng.uniform(-3, 3);
        }
        long double abs_acc = 0.0L, sq_acc = 0.0L, sy = 0.0L, sh = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            abs_acc += std::fabs(yh[i] - y[i]);
            sq_acc += (yh[i] - y[i]) * (yh[i] - y[i]);
            sy += y[i];
            sh += yh[i];
        }
        const long double my = sy / n, mh = sh / n;
        long double cov = 0.0L, vy = 0.0L, vh = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            cov += (y[i] - my) * (yh[i] - mh);
            vy += (y[i] - my) * (y[i] - my);
            vh += (yh[i] - mh) * (yh[i] - mh);
        }
        CHECK(mae(y, yh) == doctest::Approx(static_cast<double>(abs_acc / n)).epsilon(1e-6));
        CHECK(rmse(y, yh) ==
              doctest::Approx(std::sqrt(static_cast<double>(sq_acc / n))).epsilon(1e-6));
        if (vy > 0 && vh > 0) {
            auto c = pearson_corr(y, yh);
            REQUIRE(c.has_value());
            CHECK(*c == doctest::Approx(static_cast<double>(cov / std::sqrt(vy * vh))).epsilon(1e-6));
        }
        CHECK(rmse(y, yh) >= mae(y, yh));
    }
}

TEST_CASE("pearson: affine invariance and sign flip") {
    Rng rng(505);
    std::vector<double> y(30), yh(30);
    for (std::size_t i = 0; i < 30; ++i) {
        y[i] = rng.normal(0, 1);
        yh[i] = 0.6 * y[i] + rng.normal(0, 0.5);
    }
    const double base = *pearson_corr(y, yh);
    std::vector<double> scaled(30), negated(30);
    for (std::size_t i = 0; i < 30; ++i) {
        scaled[i] = 2.5 * yh[i] + 7.0;
        negated[i] = -yh[i];
    }
    CHECK(*pearson_corr(y, scaled) == doctest::Approx(base).epsilon(1e-9));
    CHECK(*pearson_corr(y, negated) == doctest::Approx(-base).epsilon(1e-9));
}

TEST_CASE("mae translation covariance") {
    Rng rng(606);
    std::vector<double> y(25), yh(25), shifted(25);
    for (std::size_t i = 0; i < 25; ++i) {
        y[i] = rng.normal(0, 1);
        yh[i] = y[i] + rng.uniform(0.05, 0.4); // all residuals positive
    }
    const double c = 0.3;
    for (std::size_t i = 0; i < 25; ++i) shifted[i] = yh[i] + c;
    CHECK(mae(y, shifted) == doctest::Approx(mae(y, yh) + c).epsilon(1e-9));

    // Mixed-sign residuals: the shift moves MAE by at most |c|.
    std::vector<double> mixed(25), mixed_shift(25);
    for (std::size_t i = 0; i < 25; ++i) {
        mixed[i] = y[i] + rng.normal(0, 0.3);
        mixed_shift[i] = mixed[i] - c;
    }
    CHECK(std::fabs(mae(y, mixed_shift) - mae(y, mixed)) <= c + 1e-12);
}

TEST_CASE("report: invariants and file format") {
    std::vector<ScatterPoint> pairs;
    Rng rng(707);
    for (int i = 0; i < 40; ++i)
        pairs.push_back({"wp" + std::to_string(i), rng.normal(0, 0.01), rng.normal(0, 0.01)});
    const auto report = report_from_pairs(pairs);
    CHECK(report.rmse >= report.mae);
    CHECK(report.n == 40);

    const auto prefix = (std::filesystem::temp_directory_path() / "dm_eval_report").string();
    write_report(prefix, report);
    std::ifstream txt(prefix + ".txt");
    std::string line;
    std::getline(txt, line);
    CHECK(line == "n=40");
    std::getline(txt, line);
    CHECK(line.rfind("mae=", 0) == 0);
    std::ifstream csv(prefix + ".csv");
    std::getline(csv, line);
    CHECK(line == "id,y_mm,y_hat_mm");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 40);
    std::filesystem::remove(prefix + ".txt");
    std::filesystem::remove(prefix + ".csv");
}
