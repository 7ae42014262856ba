#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dm/checkpoint.hpp"
#include "dm/cli.hpp"
#include "dm/signal_io.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("dm_cli_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int run(std::initializer_list<std::string> args) { return dm::cli::run(std::vector<std::string>(args)); }

} // namespace

TEST_CASE("cli: usage errors exit 2, runtime errors exit 1") {
    CHECK(run({"bogus"}) == 2);
    CHECK(run({"gen", "--suite", "nope", "--out", "/tmp"}) == 2); // unknown suite name
    CHECK(run({"gen"}) == 2);                                     // missing required --suite
    CHECK(run({"gen", "--suite", "pretrain", "--frobnicate"}) == 2);
    CHECK(run({"eval", "--ckpt", "/nonexistent", "--data", "/nonexistent", "--out", "/tmp/x"}) == 2);
}

TEST_CASE("cli: gen determinism and suite shapes") {
    TempDir dir;
    const auto a = dir.str("a"), b = dir.str("b");
    CHECK(run({"gen", "--suite", "pretrain", "--seed", "7", "--n-workpieces", "24", "--sr", "256",
               "--out", a}) == 0);
    CHECK(run({"gen", "--suite", "pretrain", "--seed", "7", "--n-workpieces", "24", "--sr", "256",
               "--out", b}) == 0);
    CHECK(slurp(a + "/pretrain.dmds") == slurp(b + "/pretrain.dmds"));
    CHECK(!slurp(a + "/pretrain_random.split").empty());
    CHECK(!slurp(a + "/pretrain_sequential.split").empty());

    CHECK(run({"gen", "--suite", "adapt-material", "--seed", "7", "--sr", "256", "--out", a}) == 0);
    const auto ds = dm::io::load_dataset(a + "/adapt-material.dmds");
    CHECK(ds.size() == 34);
    const auto split = dm::io::load_split(a + "/adapt-material.split");
    int shots = 0, tests = 0;
    for (const auto& e : split) (e.role == dm::io::SplitRole::shot ? shots : tests)++;
    CHECK(shots == 6);
    CHECK(tests == 28);
}

TEST_CASE("cli: pretrain -> inspect -> predict -> eval pipeline at desk scale") {
    TempDir dir;
    const auto data_dir = dir.str("data");
    REQUIRE(run({"gen", "--suite", "pretrain", "--seed", "11", "--n-workpieces", "20", "--sr", "256",
                 "--out", data_dir}) == 0);
    const auto data = data_dir + "/pretrain.dmds";
    const auto ckpt = dir.str("model.dmck");

    REQUIRE(run({"pretrain", "--data", data, "--out", ckpt, "--width", "8", "--epochs", "2",
                 "--batch", "8", "--seed", "3", "--threads", "2"}) == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".metrics.csv"));
    CHECK(fs::exists(ckpt + ".split"));

    // The metrics log begins with the echoed config and holds one line per epoch.
    {
        std::ifstream f(ckpt + ".metrics.csv");
        std::string line;
        std::getline(f, line);
        CHECK(line.rfind("# cmd=pretrain", 0) == 0);
        std::getline(f, line);
        CHECK(line == "epoch,loss,wall_ms");
        int rows = 0;
        while (std::getline(f, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 2);
    }

    const auto preds = dir.str("preds.csv");
    REQUIRE(run({"predict", "--ckpt", ckpt, "--data", data, "--manifest", ckpt + ".split", "--out",
                 preds}) == 0);
    {
        std::ifstream f(preds);
        std::string line;
        std::getline(f, line);
        CHECK(line == "id,y_hat_mm");
        int rows = 0;
        while (std::getline(f, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 4); // 20 - floor(0.8*20) = 4 test pieces
    }

    REQUIRE(run({"eval", "--ckpt", ckpt, "--data", data, "--manifest", ckpt + ".split", "--out",
                 dir.str("report")}) == 0);
    CHECK(fs::exists(dir.str("report.txt")));
    CHECK(fs::exists(dir.str("report.csv")));

    // Commands do not mutate their input files.
    const auto before = slurp(data);
    REQUIRE(run({"eval", "--ckpt", ckpt, "--data", data, "--out", dir.str("report2")}) == 0);
    CHECK(slurp(data) == before);
}

TEST_CASE("cli: finetune rejects a sample-rate mismatch") {
    TempDir dir;
    REQUIRE(run({"gen", "--suite", "pretrain", "--seed", "4", "--n-workpieces", "12", "--sr", "256",
                 "--out", dir.str("p")}) == 0);
    REQUIRE(run({"gen", "--suite", "adapt-tool", "--seed", "4", "--sr", "512", "--out",
                 dir.str("q")}) == 0);
    const auto ckpt = dir.str("m.dmck");
    REQUIRE(run({"pretrain", "--data", dir.str("p") + "/pretrain.dmds", "--out", ckpt, "--width", "8",
                 "--epochs", "1", "--batch", "8", "--seed", "3"}) == 0);
    CHECK(run({"finetune", "--ckpt", ckpt, "--data", dir.str("q") + "/adapt-tool.dmds", "--manifest",
               dir.str("q") + "/adapt-tool.split", "--out", dir.str("m2.dmck"), "--epochs", "1"}) == 1);
}

TEST_CASE("cli: config file supplies defaults, flags win") {
    TempDir dir;
    const auto cfg_path = dir.str("run.cfg");
    {
        std::ofstream f(cfg_path);
        f << "# generator settings\n";
        f << "suite=pretrain\n";
        f << "n-workpieces=10\n";
        f << "sr=256\n";
        f << "seed=21\n";
    }
    CHECK(run({"gen", "--config", cfg_path, "--out", dir.str("a")}) == 0);
    CHECK(dm::io::load_dataset(dir.str("a") + "/pretrain.dmds").size() == 10);
    // A flag overrides the config file value.
    CHECK(run({"gen", "--config", cfg_path, "--n-workpieces", "6", "--out", dir.str("b")}) == 0);
    CHECK(dm::io::load_dataset(dir.str("b") + "/pretrain.dmds").size() == 6);
}

TEST_CASE("cli: inspect and gradcheck succeed") {
    CHECK(run({"inspect", "--mode", "finetune"}) == 0);
    CHECK(run({"gradcheck"}) == 0);
}

TEST_CASE("cli: DM_SEED environment fallback") {
    TempDir dir;
    ::setenv("DM_SEED", "99", 1);
    CHECK(run({"gen", "--suite", "pretrain", "--n-workpieces", "8", "--sr", "256", "--out",
               dir.str("env")}) == 0);
    ::unsetenv("DM_SEED");
    CHECK(run({"gen", "--suite", "pretrain", "--seed", "99", "--n-workpieces", "8", "--sr", "256",
               "--out", dir.str("flag")}) == 0);
    CHECK(slurp(dir.str("env") + "/pretrain.dmds") == slurp(dir.str("flag") + "/pretrain.dmds"));
}
