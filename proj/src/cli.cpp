#include "dm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "dm/checkpoint.hpp"
#include "dm/errors.hpp"
#include "dm/gradsuite.hpp"
#include "dm/metrics.hpp"
#include "dm/model.hpp"
#include "dm/signal_io.hpp"
#include "dm/synthgen.hpp"
#include "dm/train.hpp"

namespace dm::cli {

namespace {

int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Config precedence: built-in defaults < key=value config file < flags.
// Implemented by injecting file pairs only for options the command line does
// not already carry.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;

    std::ifstream f(path);
    if (!f) throw IOError("cannot open config file '" + path + "'");
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file line is not key=value: '" + line + "'");
        const std::string key = "--" + line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        bool present = false;
        for (const auto& a : args)
            if (a == key || a.rfind(key + "=", 0) == 0) {
                present = true;
                break;
            }
        if (!present) args.push_back(key + "=" + value);
    }
    return args;
}

std::string default_split_path(const std::string& data_path, const std::string& split) {
    return (std::filesystem::path(data_path).replace_extension("")).string() + "_" + split + ".split";
}

struct CommonModelFlags {
    int width = 40;
    double dropout = 0.1;
    int c2 = 3;
    int max_cuts = 8;
};

model::ModelConfig config_for_dataset(const std::vector<io::WorkpieceSample>& ds,
                                      const CommonModelFlags& f, std::uint64_t seed) {
    if (ds.empty()) throw DataError("dataset is empty");
    model::ModelConfig cfg;
    cfg.width = f.width;
    cfg.dropout_p = f.dropout;
    cfg.sample_rate = ds.front().cuts.front().sample_rate;
    cfg.time_channels = ds.front().cuts.front().channels;
    cfg.spectral_channels = static_cast<std::uint16_t>(f.c2);
    cfg.max_cuts = f.max_cuts;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

void add_model_flags(CLI::App* cmd, CommonModelFlags& f) {
    cmd->add_option("--width", f.width, "encoder channel width");
    cmd->add_option("--dropout", f.dropout, "dropout probability");
    cmd->add_option("--c2", f.c2, "number of vibration (spectral) channels");
    cmd->add_option("--max-cuts", f.max_cuts, "maximum cuts per workpiece");
}

std::string describe_plan(const train::TrainPlan& plan, int threads) {
    std::string s = "lr=" + std::to_string(plan.lr) + " batch=" + std::to_string(plan.batch_size) +
                    " epochs=" + std::to_string(plan.epochs) + " seed=" + std::to_string(plan.seed) +
                    " threads=" + std::to_string(threads);
    return s;
}

// Role-shot entries grouped by epoch, first `per_epoch` of each.
std::vector<io::WorkpieceSample> select_shots(const std::vector<io::WorkpieceSample>& ds,
                                              const std::vector<io::SplitEntry>& manifest,
                                              int per_epoch) {
    std::unordered_map<std::string, const io::WorkpieceSample*> by_id;
    for (const auto& s : ds) by_id[s.id] = &s;
    std::unordered_map<std::uint32_t, int> taken;
    std::vector<io::WorkpieceSample> shots;
    for (const auto& e : manifest) {
        if (e.role != io::SplitRole::shot) continue;
        if (taken[e.epoch] >= per_epoch) continue;
        auto it = by_id.find(e.id);
        if (it == by_id.end()) throw DataError("manifest shot '" + e.id + "' not present in dataset");
        shots.push_back(*it->second);
        ++taken[e.epoch];
    }
    if (shots.empty()) throw DataError("manifest holds no shot workpieces");
    return shots;
}

std::vector<io::WorkpieceSample> select_role(const std::vector<io::WorkpieceSample>& ds,
                                             const std::vector<io::SplitEntry>& manifest,
                                             io::SplitRole role) {
    std::unordered_map<std::string, io::SplitRole> roles;
    for (const auto& e : manifest) roles[e.id] = e.role;
    std::vector<io::WorkpieceSample> out;
    for (const auto& s : ds) {
        auto it = roles.find(s.id);
        if (it == roles.end()) throw DataError("manifest does not cover workpiece '" + s.id + "'");
        if (it->second == role) out.push_back(s);
    }
    return out;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"dm: machining-error prediction engine for lathe workpieces"};
    app.require_subcommand(1);

    // ---- gen ----------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic suite (DMDS + split manifests)");
    struct {
        std::string suite;
        std::string out = ".";
        std::uint64_t seed = 7;
        int n_workpieces = 0;
        int n_cuts = 3;
        std::uint32_t sr = 2048;
        double noise_std = 0.001;
        double label_quantum = 0.001;
        double ratio = 0.8;
    } g;
    std::string gen_cfg_file;
    gen->add_option("--config", gen_cfg_file, "key=value config file (flags override)");
    gen->add_option("--suite", g.suite, "pretrain|adapt-tool|adapt-material")
        ->required()
        ->check(CLI::IsMember({"pretrain", "adapt-tool", "adapt-material"}));
    gen->add_option("--out", g.out, "output directory");
    gen->add_option("--seed", g.seed, "generator seed")->envname("DM_SEED");
    gen->add_option("--n-workpieces", g.n_workpieces, "workpiece count (pretrain suite only)");
    gen->add_option("--n-cuts", g.n_cuts, "cuts per workpiece");
    gen->add_option("--sr", g.sr, "sample rate (power of two)");
    gen->add_option("--noise-std", g.noise_std, "label noise std, mm");
    gen->add_option("--label-quantum", g.label_quantum, "label measurement resolution, mm");
    gen->add_option("--ratio", g.ratio, "train ratio for pretrain manifests");
    gen->callback([&] {
        const auto suite = synth::parse_suite(g.suite);
        auto cfg = synth::suite_config(suite, g.seed, g.n_workpieces);
        cfg.n_cuts = g.n_cuts;
        cfg.sample_rate = g.sr;
        cfg.noise_std = g.noise_std;
        cfg.label_quantum_mm = g.label_quantum;
        const auto files = synth::write_suite(suite, cfg, g.out, g.ratio);
        std::cout << "# cmd=gen suite=" << g.suite << " seed=" << cfg.seed
                  << " n=" << cfg.n_workpieces << " cuts=" << cfg.n_cuts << " sr=" << cfg.sample_rate
                  << " noise-std=" << cfg.noise_std << " label-quantum=" << cfg.label_quantum_mm
                  << " ratio=" << g.ratio << "\n";
        std::cout << "wrote " << files.dataset_path << " (" << cfg.n_workpieces << " workpieces)\n";
        for (const auto& p : files.split_paths) std::cout << "wrote " << p << "\n";
    });

    // ---- pretrain -----------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain", "pretrain a model on a dataset");
    struct {
        std::string data, out, manifest, metrics, emit_split;
        std::string split = "random";
        double ratio = 0.8;
        int epochs = 512;
        int batch = 512;
        double lr = 0.001;
        std::uint64_t seed = 42;
        int threads = default_threads();
        CommonModelFlags model;
    } p;
    std::string pre_cfg_file;
    pre->add_option("--config", pre_cfg_file, "key=value config file (flags override)");
    pre->add_option("--data", p.data, "dataset (DMDS or text manifest)")->required()->check(CLI::ExistingFile);
    pre->add_option("--out", p.out, "output checkpoint path")->required();
    pre->add_option("--split", p.split, "random|sequential")->check(CLI::IsMember({"random", "sequential"}));
    pre->add_option("--ratio", p.ratio, "train fraction");
    pre->add_option("--manifest", p.manifest, "split manifest (overrides --split)")->check(CLI::ExistingFile);
    pre->add_option("--epochs", p.epochs, "training epochs");
    pre->add_option("--batch", p.batch, "batch size");
    pre->add_option("--lr", p.lr, "learning rate");
    pre->add_option("--seed", p.seed, "run seed")->envname("DM_SEED");
    pre->add_option("--threads", p.threads, "worker threads");
    pre->add_option("--metrics", p.metrics, "metrics log path (default <out>.metrics.csv)");
    pre->add_option("--emit-split", p.emit_split, "write the split used (default <out>.split)");
    add_model_flags(pre, p.model);
    pre->callback([&] {
        const auto ds = io::load_dataset_any(p.data);
        auto cfg = config_for_dataset(ds, p.model, p.seed);
        train::TrainPlan plan = train::TrainPlan::pretrain_defaults();
        plan.lr = p.lr;
        plan.batch_size = p.batch;
        plan.epochs = p.epochs;
        plan.seed = p.seed;

        train::Split split;
        if (!p.manifest.empty()) {
            split = train::split_from_manifest(ds, io::load_split(p.manifest));
        } else if (p.split == "random") {
            split = train::random_split(static_cast<int>(ds.size()), p.ratio, p.seed);
        } else {
            split = train::sequential_split(ds, p.ratio);
        }

        const std::string metrics_path = p.metrics.empty() ? p.out + ".metrics.csv" : p.metrics;
        std::ofstream metrics(metrics_path, std::ios::trunc);
        if (!metrics) throw IOError("cannot open metrics log '" + metrics_path + "'");
        metrics << "# cmd=pretrain data=" << p.data << " split=" << (p.manifest.empty() ? p.split : p.manifest)
                << " ratio=" << p.ratio << " width=" << cfg.width << " dropout=" << cfg.dropout_p
                << " c2=" << cfg.spectral_channels << " " << describe_plan(plan, p.threads) << "\n";
        metrics << "epoch,loss,wall_ms\n";

        const auto result = train::pretrain(ds, cfg, plan, split, {}, p.threads, &metrics);
        ckpt::save_checkpoint(p.out, result.checkpoint);

        const std::string split_path = p.emit_split.empty() ? p.out + ".split" : p.emit_split;
        std::vector<io::SplitEntry> entries;
        entries.reserve(ds.size());
        std::vector<bool> in_train(ds.size(), false);
        for (int i : result.split.train) in_train[static_cast<std::size_t>(i)] = true;
        for (std::size_t i = 0; i < ds.size(); ++i)
            entries.push_back({ds[i].id, in_train[i] ? io::SplitRole::train : io::SplitRole::test,
                               ds[i].config_epoch});
        io::save_split(split_path, entries);

        std::cout << "pretrained on " << result.split.train.size() << " workpieces ("
                  << result.split.test.size() << " held out); checkpoint " << p.out << "\n";
        if (!result.log.empty()) std::cout << "final loss " << result.log.back().loss << "\n";
    });

    // ---- finetune -----------------------------------------------------------
    auto* fin = app.add_subcommand("finetune", "two-shot adaptation of a pretrained checkpoint");
    struct {
        std::string ckpt, data, manifest, out, metrics;
        int shots = 2;
        int epochs = 64;
        int batch = 32;
        double lr = 0.00001;
        std::uint64_t seed = 42;
        int threads = default_threads();
    } f;
    std::string fin_cfg_file;
    fin->add_option("--config", fin_cfg_file, "key=value config file (flags override)");
    fin->add_option("--ckpt", f.ckpt, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
    fin->add_option("--data", f.data, "adaptation dataset")->required()->check(CLI::ExistingFile);
    fin->add_option("--manifest", f.manifest, "split manifest with shot roles")->required()->check(CLI::ExistingFile);
    fin->add_option("--out", f.out, "output checkpoint path")->required();
    fin->add_option("--shots", f.shots, "shots per configuration epoch");
    fin->add_option("--epochs", f.epochs, "fine-tune epochs");
    fin->add_option("--batch", f.batch, "batch size");
    fin->add_option("--lr", f.lr, "learning rate");
    fin->add_option("--seed", f.seed, "run seed")->envname("DM_SEED");
    fin->add_option("--threads", f.threads, "worker threads");
    fin->add_option("--metrics", f.metrics, "metrics log path (default <out>.metrics.csv)");
    fin->callback([&] {
        const auto checkpoint = ckpt::load_checkpoint(f.ckpt);
        const auto ds = io::load_dataset_any(f.data);
        const auto manifest = io::load_split(f.manifest);
        const auto shots = select_shots(ds, manifest, f.shots);

        train::TrainPlan plan = train::TrainPlan::finetune_defaults();
        plan.lr = f.lr;
        plan.batch_size = f.batch;
        plan.epochs = f.epochs;
        plan.seed = f.seed;

        const std::string metrics_path = f.metrics.empty() ? f.out + ".metrics.csv" : f.metrics;
        std::ofstream metrics(metrics_path, std::ios::trunc);
        if (!metrics) throw IOError("cannot open metrics log '" + metrics_path + "'");
        metrics << "# cmd=finetune ckpt=" << f.ckpt << " data=" << f.data << " shots=" << f.shots
                << " " << describe_plan(plan, f.threads) << "\n";
        metrics << "epoch,loss,wall_ms\n";

        const auto result = train::finetune_two_shot(checkpoint, shots, plan, {}, f.threads, &metrics);
        ckpt::save_checkpoint(f.out, result.checkpoint);
        std::cout << "fine-tuned on " << shots.size() << " shots; checkpoint " << f.out << "\n";
    });

    // ---- predict ------------------------------------------------------------
    auto* prd = app.add_subcommand("predict", "write per-workpiece predictions as CSV");
    struct {
        std::string ckpt, data, manifest, out;
    } q;
    std::string prd_cfg_file;
    prd->add_option("--config", prd_cfg_file, "key=value config file (flags override)");
    prd->add_option("--ckpt", q.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    prd->add_option("--data", q.data, "dataset")->required()->check(CLI::ExistingFile);
    prd->add_option("--manifest", q.manifest, "restrict to role-test workpieces")->check(CLI::ExistingFile);
    prd->add_option("--out", q.out, "output CSV path")->required();
    prd->callback([&] {
        const auto checkpoint = ckpt::load_checkpoint(q.ckpt);
        auto ds = io::load_dataset_any(q.data);
        if (!q.manifest.empty()) ds = select_role(ds, io::load_split(q.manifest), io::SplitRole::test);
        const auto preds = metrics::predict(checkpoint, ds);
        std::ofstream out(q.out, std::ios::trunc);
        if (!out) throw IOError("cannot open '" + q.out + "' for writing");
        out << "id,y_hat_mm\n";
        for (std::size_t i = 0; i < ds.size(); ++i) out << ds[i].id << ',' << preds[i] << '\n';
        std::cout << "wrote " << preds.size() << " predictions to " << q.out << "\n";
    });

    // ---- eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (MAE/RMSE/CORR + scatter CSV)");
    struct {
        std::string ckpt, data, manifest, out;
    } e;
    std::string ev_cfg_file;
    ev->add_option("--config", ev_cfg_file, "key=value config file (flags override)");
    ev->add_option("--ckpt", e.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", e.data, "dataset")->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", e.manifest, "restrict to role-test workpieces")->check(CLI::ExistingFile);
    ev->add_option("--out", e.out, "report path prefix (.txt/.csv)")->required();
    ev->callback([&] {
        const auto checkpoint = ckpt::load_checkpoint(e.ckpt);
        auto ds = io::load_dataset_any(e.data);
        if (!e.manifest.empty()) ds = select_role(ds, io::load_split(e.manifest), io::SplitRole::test);
        const auto report = metrics::evaluate(checkpoint, ds);
        metrics::write_report(e.out, report);
        std::cout << "n=" << report.n << " mae=" << report.mae << " rmse=" << report.rmse << " corr=";
        if (report.corr) std::cout << *report.corr;
        else std::cout << "undefined";
        std::cout << "\n";
    });

    // ---- inspect ------------------------------------------------------------
    auto* ins = app.add_subcommand("inspect", "parameter budget and trainable fraction");
    struct {
        std::string mode = "pretrain";
        std::string ckpt;
        std::uint64_t seed = 42;
        bool per_tensor = false;
        CommonModelFlags model;
    } i;
    std::string ins_cfg_file;
    ins->add_option("--config", ins_cfg_file, "key=value config file (flags override)");
    ins->add_option("--mode", i.mode, "pretrain|finetune")->check(CLI::IsMember({"pretrain", "finetune"}));
    ins->add_option("--ckpt", i.ckpt, "inspect an existing checkpoint instead of the default config")
        ->check(CLI::ExistingFile);
    ins->add_option("--seed", i.seed, "init seed")->envname("DM_SEED");
    ins->add_flag("--per-tensor", i.per_tensor, "list every tensor");
    add_model_flags(ins, i.model);
    ins->callback([&] {
        model::ParamStore store;
        model::ModelConfig cfg;
        if (!i.ckpt.empty()) {
            auto c = ckpt::load_checkpoint(i.ckpt);
            cfg = c.config;
            store = std::move(c.params);
            if (i.mode == "finetune" && !model::has_adapters(store)) model::insert_adapters(store, cfg);
        } else {
            cfg.width = i.model.width;
            cfg.dropout_p = i.model.dropout;
            cfg.spectral_channels = static_cast<std::uint16_t>(i.model.c2);
            cfg.max_cuts = i.model.max_cuts;
            cfg.seed = i.seed;
            cfg.validate();
            store = model::build_params<float>(cfg);
            if (i.mode == "finetune") model::insert_adapters(store, cfg);
        }
        const auto mask = i.mode == "finetune" ? model::finetune_mask(store) : model::pretrain_mask(store);
        if (i.per_tensor) {
            for (const auto& t : store.tensors)
                std::cout << (mask.contains(t.name) ? "T " : "f ") << t.name << " [" << t.numel() << "]\n";
        }
        const auto counts = model::param_counts(store, mask);
        std::cout << "total=" << counts.total << "\ntrainable=" << counts.trainable
                  << "\nfraction=" << counts.fraction << "\n";
    });

    // ---- gradcheck ----------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite (64-bit)");
    struct {
        double tol = 1e-4;
    } c;
    std::string gc_cfg_file;
    gc->add_option("--config", gc_cfg_file, "key=value config file (flags override)");
    gc->add_option("--tol", c.tol, "relative error tolerance");
    gc->callback([&] {
        const auto suite = gradsuite::run_suite();
        for (const auto& r : suite.checks)
            std::cout << (r.max_rel_err < c.tol ? "ok   " : "FAIL ") << r.name
                      << " max_rel_err=" << r.max_rel_err << "\n";
        if (!suite.passed(c.tol)) throw GradCheckError("gradient suite exceeded tolerance");
        std::cout << "gradient suite passed (worst " << suite.worst << ", tol " << c.tol << ")\n";
    });

    // ---- parse & dispatch -----------------------------------------------------
    try {
        const auto expanded = apply_config_file(args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForAllHelp& h) {
        return app.exit(h);
    } catch (const CLI::ParseError& pe) {
        std::cerr << pe.what() << "\n";
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace dm::cli
