#include "dm/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dm/errors.hpp"

namespace dm::ckpt {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

json config_to_json(const model::ModelConfig& c) {
    return json{{"width", c.width},
                {"attn_reduction", c.attn_reduction},
                {"adapter_reduction", c.adapter_reduction},
                {"stacks", c.stacks},
                {"kernel_schedule", c.kernel_schedule},
                {"stage2_kernel", c.stage2_kernel},
                {"dropout_p", c.dropout_p},
                {"sample_rate", c.sample_rate},
                {"time_channels", c.time_channels},
                {"spectral_channels", c.spectral_channels},
                {"max_cuts", c.max_cuts},
                {"seed", c.seed}};
}

model::ModelConfig config_from_json(const json& j) {
    model::ModelConfig c;
    c.width = j.at("width").get<int>();
    c.attn_reduction = j.at("attn_reduction").get<int>();
    c.adapter_reduction = j.at("adapter_reduction").get<int>();
    c.stacks = j.at("stacks").get<int>();
    c.kernel_schedule = j.at("kernel_schedule").get<std::vector<int>>();
    c.stage2_kernel = j.at("stage2_kernel").get<int>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.sample_rate = j.at("sample_rate").get<std::uint32_t>();
    c.time_channels = j.at("time_channels").get<std::uint16_t>();
    c.spectral_channels = j.at("spectral_channels").get<std::uint16_t>();
    c.max_cuts = j.at("max_cuts").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

json stats_to_json(const io::NormStats& s) {
    return json{{"time_mean", s.time_mean},
                {"time_std", s.time_std},
                {"spec_mean", s.spec_mean},
                {"spec_std", s.spec_std}};
}

io::NormStats stats_from_json(const json& j) {
    io::NormStats s;
    s.time_mean = j.at("time_mean").get<std::vector<double>>();
    s.time_std = j.at("time_std").get<std::vector<double>>();
    s.spec_mean = j.at("spec_mean").get<std::vector<double>>();
    s.spec_std = j.at("spec_std").get<std::vector<double>>();
    return s;
}

} // namespace

Checkpoint make_checkpoint(const model::ModelConfig& cfg, const io::NormStats& stats,
                           const model::ParamStore& params, const model::TrainableMask& mask) {
    Checkpoint c;
    c.config = cfg;
    c.stats = stats;
    c.mask_names.assign(mask.names.begin(), mask.names.end());
    std::sort(c.mask_names.begin(), c.mask_names.end());
    const auto counts = model::param_counts(params, mask);
    c.total_params = counts.total;
    c.trainable_params = counts.trainable;
    c.params = params;
    return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    json meta{{"model_config", config_to_json(c.config)},
              {"norm_stats", stats_to_json(c.stats)},
              {"trainable_mask", c.mask_names},
              {"param_counts", json{{"total", c.total_params}, {"trainable", c.trainable_params}}},
              {"adapters", c.has_adapters()}};
    const std::string meta_text = meta.dump();

    std::vector<std::uint8_t> out;
    auto push = [&out](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    };
    push(kMagic, 4);
    const std::uint32_t version = kVersion;
    push(&version, 4);
    const std::uint32_t meta_len = static_cast<std::uint32_t>(meta_text.size());
    push(&meta_len, 4);
    push(meta_text.data(), meta_text.size());
    const std::uint32_t tensor_count = static_cast<std::uint32_t>(c.params.tensors.size());
    push(&tensor_count, 4);
    for (const auto& t : c.params.tensors) {
        const std::uint16_t name_len = static_cast<std::uint16_t>(t.name.size());
        push(&name_len, 2);
        push(t.name.data(), t.name.size());
        const std::uint8_t ndim = static_cast<std::uint8_t>(t.shape.size());
        push(&ndim, 1);
        for (int d : t.shape) {
            const std::uint32_t dim = static_cast<std::uint32_t>(d);
            push(&dim, 4);
        }
        push(t.data->data(), t.numel() * 4);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (off + n > bytes.size()) throw FormatError(std::string("truncated reading ") + what, off);
    };
    auto read = [&](void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, bytes.data() + off, n);
        off += n;
    };

    char magic[4];
    read(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic (want DMCK)", 0);
    std::uint32_t version = 0;
    read(&version, 4, "version");
    if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
    std::uint32_t meta_len = 0;
    read(&meta_len, 4, "metadata length");
    need(meta_len, "metadata");
    std::string meta_text(reinterpret_cast<const char*>(bytes.data() + off), meta_len);
    off += meta_len;

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), 12);
    }

    Checkpoint c;
    try {
        c.config = config_from_json(meta.at("model_config"));
        c.stats = stats_from_json(meta.at("norm_stats"));
        c.mask_names = meta.at("trainable_mask").get<std::vector<std::string>>();
        c.total_params = meta.at("param_counts").at("total").get<std::uint64_t>();
        c.trainable_params = meta.at("param_counts").at("trainable").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metadata missing fields: ") + e.what(), 12);
    }
    c.config.validate();
    const bool adapters = meta.value("adapters", false);

    // Rebuild the canonical store and fill it by name, validating every
    // tensor shape against the config.
    c.params = model::build_params<float>(c.config);
    if (adapters) model::insert_adapters(c.params, c.config);
    const auto expected = model::expected_shapes(c.config, adapters);

    std::uint32_t tensor_count = 0;
    read(&tensor_count, 4, "tensor count");
    if (tensor_count != c.params.tensors.size())
        throw FormatError("tensor count " + std::to_string(tensor_count) + " does not match config (" +
                              std::to_string(c.params.tensors.size()) + ")",
                          off - 4);
    std::size_t filled = 0;
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        std::uint16_t name_len = 0;
        read(&name_len, 2, "tensor name length");
        std::string name(name_len, '\0');
        if (name_len) read(name.data(), name_len, "tensor name");
        const auto it = expected.find(name);
        if (it == expected.end()) throw FormatError("unexpected tensor '" + name + "'", off);
        std::uint8_t ndim = 0;
        read(&ndim, 1, "tensor rank");
        std::vector<int> shape(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) {
            std::uint32_t dim = 0;
            read(&dim, 4, "tensor dim");
            shape[d] = static_cast<int>(dim);
        }
        if (shape != it->second) throw FormatError("shape mismatch for tensor '" + name + "'", off);
        auto& t = c.params.at(name);
        read(t.data->data(), t.numel() * 4, "tensor payload");
        ++filled;
    }
    if (filled != c.params.tensors.size()) throw FormatError("missing tensors", off);
    if (off != bytes.size()) throw FormatError("trailing bytes after last tensor", off);

    const auto actual_total = c.params.total_count();
    if (actual_total != c.total_params)
        throw FormatError("recorded total parameter count " + std::to_string(c.total_params) +
                              " does not match tensors (" + std::to_string(actual_total) + ")",
                          12);
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const auto bytes = encode_checkpoint(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IOError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IOError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace dm::ckpt
