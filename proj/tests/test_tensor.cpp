#include <doctest.h>

#include <cmath>

#include "dm/gradcheck.hpp"
#include "dm/ops.hpp"
#include "dm/rng.hpp"
#include "dm/tensor.hpp"
#include "oracles.hpp"

using namespace dm;

namespace {

Tensor t2(std::vector<int> shape, std::vector<float> vals) {
    return from_values<float>(std::move(shape), std::move(vals));
}

TensorT<double> random_d(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
    auto t = zeros<double>(std::move(shape));
    Rng rng(seed);
    for (auto& v : *t.data) v = rng.normal(0.0, scale);
    return t;
}

Tensor random_f(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
    auto t = zeros<float>(std::move(shape));
    Rng rng(seed);
    for (auto& v : *t.data) v = static_cast<float>(rng.normal(0.0, scale));
    return t;
}

} // namespace

TEST_CASE("conv1d: fixed examples match the direct-convolution oracle") {
    Graph g(Mode::infer);
    // 4-sample single-channel signal, kernel [1,0,-1], stride 1, valid.
    Tensor x = t2({4, 1}, {1, 2, 3, 4});
    Tensor w = t2({3, 1, 1}, {1, 0, -1});
    Tensor b = t2({1}, {0});
    Tensor y = conv1d(g, x, w, b, 1, 1, Pad::valid);
    REQUIRE(y.shape == std::vector<int>({2, 1}));
    CHECK(y.at(0) == doctest::Approx(-2));
    CHECK(y.at(1) == doctest::Approx(-2));
    auto ref = oracle::conv1d({{1}, {2}, {3}, {4}}, {{{1}}, {{0}}, {{-1}}}, {0}, 1, 1, false);
    CHECK(y.at(0) == doctest::Approx(ref[0][0]));
    CHECK(y.at(1) == doctest::Approx(ref[1][0]));

    // Dilation 2 with kernel [1,-1].
    Tensor w2 = t2({2, 1, 1}, {1, -1});
    Tensor y2 = conv1d(g, x, w2, b, 1, 2, Pad::valid);
    REQUIRE(y2.shape == std::vector<int>({2, 1}));
    CHECK(y2.at(0) == doctest::Approx(-2));
    CHECK(y2.at(1) == doctest::Approx(-2));

    // Stem geometry: L=2048, k=11, stride 5, same -> ceil(2048/5) = 410.
    auto geo = conv_geometry(2048, 11, 5, 1, Pad::same);
    CHECK(geo.len_out == 410);
}

TEST_CASE("conv1d: random shapes match the oracle") {
    Rng rng(1234);
    for (int trial = 0; trial < 30; ++trial) {
        const int len = 3 + static_cast<int>(rng.below(40));
        const int cin = 1 + static_cast<int>(rng.below(4));
        const int cout = 1 + static_cast<int>(rng.below(5));
        const int k = 1 + static_cast<int>(rng.below(5));
        const int stride = 1 + static_cast<int>(rng.below(3));
        const int dilation = 1 + static_cast<int>(rng.below(2));
        const bool same = rng.bernoulli(0.5);
        if (!same && dilation * (k - 1) + 1 > len) continue;

        std::vector<std::vector<double>> xr(len, std::vector<double>(cin));
        std::vector<std::vector<std::vector<double>>> wr(
            k, std::vector<std::vector<double>>(cin, std::vector<double>(cout)));
        std::vector<double> br(cout);
        Tensor x = zeros<float>({len, cin}), w = zeros<float>({k, cin, cout}), b = zeros<float>({cout});
        for (int t = 0; t < len; ++t)
            for (int c = 0; c < cin; ++c) {
                xr[t][c] = rng.uniform(-1, 1);
                x.at(t, c) = static_cast<float>(xr[t][c]);
            }
        for (int kk = 0; kk < k; ++kk)
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co) {
                    wr[kk][ci][co] = rng.uniform(-1, 1);
                    (*w.data)[(static_cast<std::size_t>(kk) * cin + ci) * cout + co] =
                        static_cast<float>(wr[kk][ci][co]);
                }
        for (int co = 0; co < cout; ++co) {
            br[co] = rng.uniform(-1, 1);
            (*b.data)[co] = static_cast<float>(br[co]);
        }

        Graph g(Mode::infer);
        Tensor y = conv1d(g, x, w, b, stride, dilation, same ? Pad::same : Pad::valid);
        auto ref = oracle::conv1d(xr, wr, br, stride, dilation, same);
        REQUIRE(y.shape[0] == static_cast<int>(ref.size()));
        for (int t = 0; t < y.shape[0]; ++t)
            for (int c = 0; c < cout; ++c)
                CHECK(y.at(t, c) == doctest::Approx(ref[t][c]).epsilon(1e-4));
    }
}

TEST_CASE("conv1d: output length formulas hold; oversized kernels rejected") {
    for (int len = 1; len <= 40; ++len)
        for (int k = 1; k <= 6; ++k)
            for (int stride = 1; stride <= 4; ++stride)
                for (int dilation = 1; dilation <= 3; ++dilation) {
                    const auto same = conv_geometry(len, k, stride, dilation, Pad::same);
                    CHECK(same.len_out == (len + stride - 1) / stride);
                    const int span = dilation * (k - 1) + 1;
                    if (span <= len) {
                        const auto valid = conv_geometry(len, k, stride, dilation, Pad::valid);
                        CHECK(valid.len_out == (len - span) / stride + 1);
                    } else {
                        CHECK_THROWS_AS(conv_geometry(len, k, stride, dilation, Pad::valid), ShapeError);
                    }
                }
}

TEST_CASE("linear: examples and oracle") {
    Graph g(Mode::infer);
    Tensor x = t2({2}, {1, 2});
    CHECK(linear(g, x, t2({2, 2}, {1, 0, 0, 1}), t2({2}, {0, 0})).at(0) == doctest::Approx(1));
    CHECK(linear(g, x, t2({2, 2}, {1, 0, 0, 1}), t2({2}, {0, 0})).at(1) == doctest::Approx(2));
    Tensor y = linear(g, x, t2({2, 1}, {1, 1}), t2({1}, {-3}));
    CHECK(y.at(0) == doctest::Approx(0));

    Rng rng(77);
    std::vector<std::vector<double>> ar(3, std::vector<double>(4)), br(4, std::vector<double>(2));
    Tensor a = zeros<float>({3, 4}), w = zeros<float>({4, 2}), bias = zeros<float>({2});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            ar[i][j] = rng.uniform(-2, 2);
            a.at(i, j) = static_cast<float>(ar[i][j]);
        }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            br[i][j] = rng.uniform(-2, 2);
            w.at(i, j) = static_cast<float>(br[i][j]);
        }
    Tensor y2 = linear(g, a, w, bias);
    auto ref = oracle::matmul(ar, br);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) CHECK(y2.at(i, j) == doctest::Approx(ref[i][j]).epsilon(1e-5));

    CHECK_THROWS_AS(linear(g, t2({3}, {1, 2, 3}), w, bias), ShapeError);
}

TEST_CASE("layer_norm: examples and statistics") {
    Graph g(Mode::infer);
    Tensor gamma = t2({3}, {1, 1, 1}), beta = t2({3}, {0, 0, 0});
    Tensor y = layer_norm(g, t2({1, 3}, {5, 5, 5}), gamma, beta, 1e-5f);
    for (int i = 0; i < 3; ++i) CHECK(y.at(0, i) == doctest::Approx(0));

    Tensor y2 = layer_norm(g, t2({1, 2}, {1, 3}), t2({2}, {1, 1}), t2({2}, {0, 0}), 1e-5f);
    CHECK(y2.at(0, 0) == doctest::Approx(-1).epsilon(1e-4));
    CHECK(y2.at(0, 1) == doctest::Approx(1).epsilon(1e-4));

    // Rows of a random 4x8 matrix normalize to mean 0, variance 1.
    Tensor x = random_f({4, 8}, 5, 3.0);
    Tensor g8 = full<float>({8}, 1.0f), b8 = zeros<float>({8});
    Tensor yn = layer_norm(g, x, g8, b8, 1e-5f);
    for (int r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 8; ++c) mean += yn.at(r, c);
        mean /= 8;
        for (int c = 0; c < 8; ++c) var += (yn.at(r, c) - mean) * (yn.at(r, c) - mean);
        var /= 8;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("gelu and sigmoid: fixed points, range, reference value") {
    Graph g(Mode::infer);
    CHECK(gelu(g, t2({1}, {0})).at(0) == 0.0f);
    CHECK(sigmoid(g, t2({1}, {0})).at(0) == 0.5f);

    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const float v = static_cast<float>(rng.uniform(-15, 15));
        const float s = sigmoid(g, t2({1}, {v})).at(0);
        CHECK(s > 0.0f);
        CHECK(s < 1.0f);
    }

    const double ref = oracle::gelu_reference(3.0);
    CHECK(ref == doctest::Approx(2.9964).epsilon(1e-4));
    CHECK(gelu(g, t2({1}, {3.0f})).at(0) == doctest::Approx(ref).epsilon(1e-4));
}

TEST_CASE("maxpool1d: examples, oracle, constants") {
    Graph g(Mode::infer);
    Tensor x = t2({4, 1}, {1, 3, 2, 5});
    Tensor y = maxpool1d(g, x, 2, 2, Pad::valid);
    CHECK(y.at(0) == 3);
    CHECK(y.at(1) == 5);

    Tensor y2 = maxpool1d(g, x, 3, 1, Pad::same);
    REQUIRE(y2.shape[0] == 4);
    const float expect[4] = {3, 3, 5, 5};
    auto ref = oracle::windowed_max({{1}, {3}, {2}, {5}}, 3, 1, true);
    for (int i = 0; i < 4; ++i) {
        CHECK(y2.at(i) == expect[i]);
        CHECK(y2.at(i) == doctest::Approx(ref[i][0]));
    }

    Tensor c = full<float>({7, 3}, 2.5f);
    Tensor yc = maxpool1d(g, c, 3, 1, Pad::same);
    for (std::size_t i = 0; i < yc.numel(); ++i) CHECK((*yc.data)[i] == 2.5f);

    CHECK_THROWS_AS(maxpool1d(g, t2({1, 1}, {1}), 2, 2, Pad::valid), ShapeError);
}

TEST_CASE("global_pool: examples, masking, oracle") {
    Graph g(Mode::infer);
    Tensor x = t2({2, 2}, {1, 2, 3, 4});
    Tensor avg = global_pool(g, x, PoolKind::avg);
    Tensor mx = global_pool(g, x, PoolKind::max);
    CHECK(avg.at(0) == 2);
    CHECK(avg.at(1) == 3);
    CHECK(mx.at(0) == 3);
    CHECK(mx.at(1) == 4);

    std::vector<std::uint8_t> mask{1, 0};
    Tensor masked = global_pool(g, x, PoolKind::avg, &mask);
    CHECK(masked.at(0) == 1);
    CHECK(masked.at(1) == 2);

    std::vector<std::uint8_t> all_masked{0, 0};
    CHECK_THROWS_AS(global_pool(g, x, PoolKind::avg, &all_masked), MaskError);

    Tensor big = random_f({100, 8}, 21);
    std::vector<std::vector<double>> rows(100, std::vector<double>(8));
    for (int t = 0; t < 100; ++t)
        for (int c = 0; c < 8; ++c) rows[t][c] = big.at(t, c);
    auto ravg = oracle::column_avg(rows);
    auto rmax = oracle::column_max(rows);
    Tensor bavg = global_pool(g, big, PoolKind::avg);
    Tensor bmax = global_pool(g, big, PoolKind::max);
    for (int c = 0; c < 8; ++c) {
        CHECK(bavg.at(c) == doctest::Approx(ravg[c]).epsilon(1e-6));
        CHECK(bmax.at(c) == doctest::Approx(rmax[c]).epsilon(1e-6));
    }
}

TEST_CASE("dropout: identity cases, scaling expectation, bad p") {
    Rng rng(31);
    Tensor x = random_f({100, 10}, 15);
    Graph infer(Mode::infer);
    Tensor y = dropout(infer, x, 0.5, rng);
    CHECK(y.data.get() == x.data.get()); // bitwise identity in infer mode

    Graph train(Mode::train);
    Tensor y0 = dropout(train, x, 0.0, rng);
    CHECK(y0.data.get() == x.data.get());

    Tensor big = zeros<float>({100000});
    Rng fill(3);
    for (auto& v : *big.data) v = static_cast<float>(fill.uniform(0.5, 1.5));
    double mean_in = 0.0;
    for (auto v : *big.data) mean_in += v;
    mean_in /= static_cast<double>(big.numel());
    Rng drop_rng(77);
    Tensor yd = dropout(train, big, 0.5, drop_rng);
    double mean_out = 0.0;
    for (auto v : *yd.data) mean_out += v;
    mean_out /= static_cast<double>(yd.numel());
    CHECK(std::fabs(mean_out - mean_in) / mean_in < 0.02);

    CHECK_THROWS_AS(dropout(train, x, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(dropout(train, x, -0.1, rng), ConfigError);
}

TEST_CASE("concat and add: examples and gradients") {
    Graph g(Mode::train);
    Tensor a = t2({2, 1}, {1, 2});
    Tensor b = t2({2, 1}, {3, 4});
    Tensor cat = concat(g, {a, b}, 1);
    CHECK(cat.at(0, 0) == 1);
    CHECK(cat.at(0, 1) == 3);
    CHECK(cat.at(1, 0) == 2);
    CHECK(cat.at(1, 1) == 4);

    Tensor x = random_f({3, 4}, 8);
    Tensor z = zeros<float>({3, 4});
    Graph g2(Mode::infer);
    Tensor sum = add(g2, x, z);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK((*sum.data)[i] == (*x.data)[i]);

    // d(add)/d(input) equals the upstream gradient on both sides.
    Tensor p = random_f({2, 2}, 11), q = random_f({2, 2}, 12);
    p.ensure_grad();
    q.ensure_grad();
    Graph g3(Mode::train);
    Tensor s = add(g3, p, q);
    Tensor total = sum_all(g3, s);
    g3.backward(total);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK((*p.grad)[i] == doctest::Approx(1.0));
        CHECK((*q.grad)[i] == doctest::Approx(1.0));
    }

    CHECK_THROWS_AS(add(g, a, t2({1, 1}, {0})), ShapeError);
}

TEST_CASE("mse_loss: examples") {
    Graph g(Mode::infer);
    std::vector<Tensor> same{scalar_tensor(1.0f), scalar_tensor(-2.0f)};
    CHECK(mse_loss(g, same, {1.0f, -2.0f}).at(0) == doctest::Approx(0));

    std::vector<Tensor> zeroes{scalar_tensor(0.0f), scalar_tensor(0.0f)};
    CHECK(mse_loss(g, zeroes, {1.0f, -1.0f}).at(0) == doctest::Approx(1));

    CHECK_THROWS_AS(mse_loss(g, {}, {}), DataError);
}

TEST_CASE("grad_check: core op gradients in 64-bit") {
    // Affine map: rel error < 1e-6.
    {
        auto x = random_d({4, 3}, 41);
        auto w = random_d({3, 2}, 42);
        auto b = random_d({2}, 43);
        std::vector<TensorT<double>> inputs{x, w, b};
        auto report = grad_check<double>(
            [](GraphT<double>& g, std::vector<TensorT<double>>& in) {
                return sum_all(g, linear(g, in[0], in[1], in[2]));
            },
            inputs);
        CHECK(report.max_rel_err < 1e-6);
    }
    // sigmoid of a sum: rel error < 1e-7.
    {
        auto x = random_d({10}, 44, 0.3);
        std::vector<TensorT<double>> inputs{x};
        auto report = grad_check<double>(
            [](GraphT<double>& g, std::vector<TensorT<double>>& in) {
                return sigmoid(g, sum_all(g, in[0]));
            },
            inputs);
        CHECK(report.max_rel_err < 1e-7);
    }
    // Composite: conv -> gelu -> layer_norm -> pools -> products.
    {
        auto x = random_d({9, 4}, 45);
        auto w = random_d({3, 4, 4}, 46, 0.5);
        auto b = random_d({4}, 47, 0.1);
        auto gamma = full<double>({4}, 1.0);
        auto beta = zeros<double>({4});
        std::vector<TensorT<double>> inputs{x, w, b, gamma, beta};
        auto report = grad_check<double>(
            [](GraphT<double>& g, std::vector<TensorT<double>>& in) {
                auto h = conv1d(g, in[0], in[1], in[2], 1, 2, Pad::same);
                h = gelu(g, h);
                h = layer_norm(g, h, in[3], in[4], 1e-5);
                auto c = global_pool(g, h, PoolKind::avg);
                auto m = global_pool(g, h, PoolKind::max);
                auto v = concat(g, {c, m}, 0);
                auto t = pool_channels(g, h, PoolKind::max);
                auto hp = mul_positions(g, h, t);
                auto hc = mul_channels(g, hp, sigmoid(g, c));
                return add(g, sum_all(g, hc), sum_all(g, v));
            },
            inputs);
        CHECK(report.max_rel_err < 1e-4);
    }
    // maxpool + dropout-off + mse against fixed targets.
    {
        auto x = random_d({12, 3}, 48);
        std::vector<TensorT<double>> inputs{x};
        auto report = grad_check<double>(
            [](GraphT<double>& g, std::vector<TensorT<double>>& in) {
                auto h = maxpool1d(g, in[0], 3, 2, Pad::same);
                std::vector<TensorT<double>> preds{sum_all(g, h)};
                return mse_loss(g, preds, std::vector<double>{0.25});
            },
            inputs);
        CHECK(report.max_rel_err < 1e-6);
    }
}

TEST_CASE("graph: determinism, accumulation, infer mode records nothing") {
    auto make_chain = [](Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
        Tensor h = conv1d(g, x, w, b, 2, 1, Pad::same);
        h = gelu(g, h);
        return sum_all(g, h);
    };
    Tensor x = random_f({32, 3}, 71), w = random_f({5, 3, 4}, 72), b = random_f({4}, 73);
    Graph g1(Mode::infer), g2(Mode::infer);
    Tensor y1 = make_chain(g1, x, w, b);
    Tensor y2 = make_chain(g2, x, w, b);
    CHECK((*y1.data)[0] == (*y2.data)[0]); // bitwise
    CHECK(g1.op_count() == 0);

    // backward of (f+g) equals separate backward passes summed.
    Tensor xa = random_f({6}, 74);
    auto run_joint = [&]() {
        Tensor in = xa.clone_values();
        in.ensure_grad();
        Graph g(Mode::train);
        Tensor f = sum_all(g, gelu(g, in));
        Tensor h = sigmoid(g, sum_all(g, in));
        Tensor total = add(g, f, h);
        g.backward(total);
        return *in.grad;
    };
    auto run_split = [&]() {
        Tensor in1 = xa.clone_values();
        in1.ensure_grad();
        Graph ga(Mode::train);
        Tensor f = sum_all(ga, gelu(ga, in1));
        ga.backward(f);
        Tensor in2 = xa.clone_values();
        in2.ensure_grad();
        Graph gb(Mode::train);
        Tensor h = sigmoid(gb, sum_all(gb, in2));
        gb.backward(h);
        std::vector<float> out(in1.grad->size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in1.grad)[i] + (*in2.grad)[i];
        return out;
    };
    const auto joint = run_joint();
    const auto split = run_split();
    for (std::size_t i = 0; i < joint.size(); ++i)
        CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-6));

    Tensor nonscalar = random_f({3}, 75);
    nonscalar.ensure_grad();
    Graph g3(Mode::train);
    CHECK_THROWS_AS(g3.backward(nonscalar), ShapeError);
}
