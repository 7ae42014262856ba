#include "dm/signal_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dm/errors.hpp"
#include "dm/fft.hpp"

namespace dm::io {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
public:
    void u16(std::uint16_t v) { append(&v, 2); }
    void u32(std::uint32_t v) { append(&v, 4); }
    void f32(float v) { append(&v, 4); }
    void bytes(const void* p, std::size_t n) { append(p, n); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void append(const void* p, std::size_t n) {
        // Little-endian host assumed; payloads are fixed-width scalars.
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    std::uint64_t offset() const { return off_; }
    bool exhausted() const { return off_ == buf_.size(); }

    std::uint16_t u16(const char* what) { return scalar<std::uint16_t>(what); }
    std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
    float f32(const char* what) { return scalar<float>(what); }

    void raw(void* dst, std::size_t n, const char* what) {
        if (off_ + n > buf_.size()) throw FormatError(std::string("truncated reading ") + what, off_);
        std::memcpy(dst, buf_.data() + off_, n);
        off_ += n;
    }

private:
    template <typename T>
    T scalar(const char* what) {
        T v;
        raw(&v, sizeof(T), what);
        return v;
    }
    const std::vector<std::uint8_t>& buf_;
    std::uint64_t off_ = 0;
};

void validate_sample(const WorkpieceSample& s) {
    if (s.cuts.empty()) throw DataError("workpiece '" + s.id + "' has no cuts");
    if (!std::isfinite(s.label_mm)) throw DataError("workpiece '" + s.id + "' has non-finite label");
    const auto sr = s.cuts.front().sample_rate;
    const auto c1 = s.cuts.front().channels;
    for (const auto& cut : s.cuts) {
        if (cut.sample_rate != sr || cut.channels != c1)
            throw DataError("workpiece '" + s.id + "' mixes cut shapes");
        if (cut.samples.size() != static_cast<std::size_t>(sr) * c1)
            throw DataError("workpiece '" + s.id + "' cut buffer size mismatch");
    }
}

} // namespace

SpectralCut rfft_magnitude(const CutSignal& cut, std::uint16_t c2) {
    if (!is_power_of_two(cut.sample_rate))
        throw ConfigError("rfft_magnitude: sample rate must be a power of two");
    if (c2 > cut.channels) throw ConfigError("rfft_magnitude: C2 exceeds channel count");
    SpectralCut out;
    out.bins = cut.sample_rate / 2 + 1;
    out.channels = c2;
    out.values.resize(static_cast<std::size_t>(out.bins) * c2);
    std::vector<double> x(cut.sample_rate);
    for (std::uint16_t ch = 0; ch < c2; ++ch) {
        for (std::uint32_t t = 0; t < cut.sample_rate; ++t) x[t] = cut.at(t, ch);
        const auto mag = rfft_magnitude_bins(x);
        for (std::uint32_t k = 0; k < out.bins; ++k)
            out.values[static_cast<std::size_t>(k) * c2 + ch] = static_cast<float>(std::log1p(mag[k]));
    }
    return out;
}

std::vector<double> rfft_magnitude_raw(const CutSignal& cut, std::uint16_t ch) {
    if (!is_power_of_two(cut.sample_rate))
        throw ConfigError("rfft_magnitude_raw: sample rate must be a power of two");
    if (ch >= cut.channels) throw ConfigError("rfft_magnitude_raw: bad channel");
    std::vector<double> x(cut.sample_rate);
    for (std::uint32_t t = 0; t < cut.sample_rate; ++t) x[t] = cut.at(t, ch);
    return rfft_magnitude_bins(x);
}

namespace {

// Streaming per-channel mean/std (Welford). The test-side oracle is a plain
// two-pass computation.
struct Welford {
    std::vector<double> mean, m2;
    double count = 0.0;

    explicit Welford(std::size_t channels) : mean(channels, 0.0), m2(channels, 0.0) {}

    void push(const double* row) {
        count += 1.0;
        for (std::size_t c = 0; c < mean.size(); ++c) {
            const double d = row[c] - mean[c];
            mean[c] += d / count;
            m2[c] += d * (row[c] - mean[c]);
        }
    }

    void finish(std::vector<double>& out_mean, std::vector<double>& out_std) const {
        out_mean = mean;
        out_std.resize(mean.size());
        for (std::size_t c = 0; c < mean.size(); ++c) {
            const double var = count > 0.0 ? m2[c] / count : 0.0;
            out_std[c] = std::max(std::sqrt(var), 1e-8);
        }
    }
};

} // namespace

NormStats fit_stats(const std::vector<WorkpieceSample>& dataset, std::uint16_t c2) {
    if (dataset.empty()) throw DataError("fit_stats: empty dataset");
    const auto c1 = dataset.front().cuts.front().channels;
    if (c2 >= c1) throw ConfigError("fit_stats: C2 must be < C1");

    Welford time_acc(c1), spec_acc(c2);
    std::vector<double> row(std::max<std::size_t>(c1, c2));
    for (const auto& s : dataset) {
        validate_sample(s);
        for (const auto& cut : s.cuts) {
            for (std::uint32_t t = 0; t < cut.sample_rate; ++t) {
                for (std::uint16_t ch = 0; ch < c1; ++ch) row[ch] = cut.at(t, ch);
                time_acc.push(row.data());
            }
            const SpectralCut sp = rfft_magnitude(cut, c2);
            for (std::uint32_t k = 0; k < sp.bins; ++k) {
                for (std::uint16_t ch = 0; ch < c2; ++ch)
                    row[ch] = sp.values[static_cast<std::size_t>(k) * c2 + ch];
                spec_acc.push(row.data());
            }
        }
    }
    NormStats stats;
    time_acc.finish(stats.time_mean, stats.time_std);
    spec_acc.finish(stats.spec_mean, stats.spec_std);
    return stats;
}

std::vector<NormalizedCut> apply_stats(const WorkpieceSample& sample, const NormStats& stats,
                                       std::uint16_t c2) {
    validate_sample(sample);
    const auto c1 = sample.cuts.front().channels;
    if (stats.time_mean.size() != c1 || stats.spec_mean.size() != c2)
        throw DataError("apply_stats: stats channel counts do not match sample");

    std::vector<NormalizedCut> out;
    out.reserve(sample.cuts.size());
    for (const auto& cut : sample.cuts) {
        NormalizedCut nc;
        nc.time = zeros<float>({static_cast<int>(cut.sample_rate), static_cast<int>(c1)});
        for (std::uint32_t t = 0; t < cut.sample_rate; ++t)
            for (std::uint16_t ch = 0; ch < c1; ++ch)
                nc.time.at(static_cast<int>(t), ch) = static_cast<float>(
                    (cut.at(t, ch) - stats.time_mean[ch]) / stats.time_std[ch]);

        const SpectralCut sp = rfft_magnitude(cut, c2);
        nc.spectral = zeros<float>({static_cast<int>(sp.bins), static_cast<int>(c2)});
        for (std::uint32_t k = 0; k < sp.bins; ++k)
            for (std::uint16_t ch = 0; ch < c2; ++ch)
                nc.spectral.at(static_cast<int>(k), ch) = static_cast<float>(
                    (sp.values[static_cast<std::size_t>(k) * c2 + ch] - stats.spec_mean[ch]) /
                    stats.spec_std[ch]);
        out.push_back(std::move(nc));
    }
    return out;
}

std::vector<std::uint8_t> encode_dataset(const std::vector<WorkpieceSample>& samples) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        validate_sample(s);
        if (s.id.size() > 0xFFFF) throw DataError("workpiece id too long");
        if (s.cuts.size() > 0xFFFF) throw DataError("too many cuts");
        w.u16(static_cast<std::uint16_t>(s.id.size()));
        w.bytes(s.id.data(), s.id.size());
        w.f32(s.label_mm);
        w.u32(s.config_epoch);
        w.u16(static_cast<std::uint16_t>(s.cuts.size()));
        w.u32(s.cuts.front().sample_rate);
        w.u16(s.cuts.front().channels);
        for (const auto& cut : s.cuts) w.bytes(cut.samples.data(), cut.samples.size() * 4);
    }
    return w.take();
}

std::vector<WorkpieceSample> decode_dataset(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic (want DMDS)", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("workpiece count");

    std::vector<WorkpieceSample> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        WorkpieceSample s;
        const std::uint16_t id_len = r.u16("id length");
        s.id.resize(id_len);
        if (id_len) r.raw(s.id.data(), id_len, "id");
        const std::uint64_t label_off = r.offset();
        s.label_mm = r.f32("label");
        if (!std::isfinite(s.label_mm)) throw FormatError("non-finite label", label_off);
        s.config_epoch = r.u32("config epoch");
        const std::uint64_t n_off = r.offset();
        const std::uint16_t n_cuts = r.u16("cut count");
        if (n_cuts == 0) throw FormatError("workpiece with zero cuts", n_off);
        const std::uint64_t sr_off = r.offset();
        const std::uint32_t sr = r.u32("sample rate");
        const std::uint16_t c1 = r.u16("channel count");
        if (sr == 0 || c1 == 0) throw FormatError("zero sample rate or channel count", sr_off);
        s.cuts.resize(n_cuts);
        for (std::uint16_t n = 0; n < n_cuts; ++n) {
            auto& cut = s.cuts[n];
            cut.sample_rate = sr;
            cut.channels = c1;
            cut.samples.resize(static_cast<std::size_t>(sr) * c1);
            const std::uint64_t cut_off = r.offset();
            r.raw(cut.samples.data(), cut.samples.size() * 4, "cut samples");
            for (std::size_t j = 0; j < cut.samples.size(); ++j)
                if (!std::isfinite(cut.samples[j]))
                    throw FormatError("non-finite sample value", cut_off + j * 4);
        }
        out.push_back(std::move(s));
    }
    if (!r.exhausted()) throw FormatError("trailing bytes after last workpiece", r.offset());
    return out;
}

void save_dataset(const std::string& path, const std::vector<WorkpieceSample>& samples) {
    const auto bytes = encode_dataset(samples);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IOError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IOError("short write to '" + path + "'");
}

std::vector<WorkpieceSample> load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_dataset(bytes);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    for (auto& s : fields) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    }
    return fields;
}

CutSignal load_cut_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open cut file '" + path + "'");
    CutSignal cut;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_csv_line(line);
        if (cut.channels == 0) cut.channels = static_cast<std::uint16_t>(fields.size());
        if (fields.size() != cut.channels)
            throw DataError("'" + path + "' row " + std::to_string(rows + 1) + ": column count varies");
        for (const auto& v : fields) cut.samples.push_back(std::stof(v));
        ++rows;
    }
    if (rows == 0) throw DataError("'" + path + "' holds no rows");
    cut.sample_rate = static_cast<std::uint32_t>(rows);
    return cut;
}

} // namespace

std::vector<WorkpieceSample> import_text_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IOError("cannot open manifest '" + manifest_path + "'");
    const auto base = std::filesystem::path(manifest_path).parent_path();

    std::vector<WorkpieceSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("window=", 0) == 0) {
            const std::string w = line.substr(7);
            if (w != "centered" && w != "trailing")
                throw DataError("manifest line " + std::to_string(lineno) + ": window must be centered|trailing");
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() < 4)
            throw DataError("manifest line " + std::to_string(lineno) +
                            ": want id,label,config_epoch,cut.csv[,...]");
        WorkpieceSample s;
        s.id = fields[0];
        s.label_mm = std::stof(fields[1]);
        s.config_epoch = static_cast<std::uint32_t>(std::stoul(fields[2]));
        for (std::size_t i = 3; i < fields.size(); ++i) {
            auto p = std::filesystem::path(fields[i]);
            if (p.is_relative()) p = base / p;
            s.cuts.push_back(load_cut_csv(p.string()));
        }
        validate_sample(s);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<WorkpieceSample> load_dataset_any(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open '" + path + "'");
    char magic[4] = {0, 0, 0, 0};
    f.read(magic, 4);
    f.close();
    if (std::memcmp(magic, kMagic, 4) == 0) return load_dataset(path);
    return import_text_dataset(path);
}

std::string role_name(SplitRole role) {
    switch (role) {
        case SplitRole::train: return "train";
        case SplitRole::shot: return "shot";
        case SplitRole::test: return "test";
    }
    return "?";
}

SplitRole parse_role(const std::string& name) {
    if (name == "train") return SplitRole::train;
    if (name == "shot") return SplitRole::shot;
    if (name == "test") return SplitRole::test;
    throw DataError("unknown split role '" + name + "'");
}

void save_split(const std::string& path, const std::vector<SplitEntry>& entries) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IOError("cannot open '" + path + "' for writing");
    for (const auto& e : entries) f << e.id << ',' << role_name(e.role) << ',' << e.epoch << '\n';
    if (!f) throw IOError("short write to '" + path + "'");
}

std::vector<SplitEntry> load_split(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open split manifest '" + path + "'");
    std::vector<SplitEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw DataError("split manifest line " + std::to_string(lineno) + ": want id,role,epoch");
        SplitEntry e;
        e.id = fields[0];
        e.role = parse_role(fields[1]);
        e.epoch = static_cast<std::uint32_t>(std::stoul(fields[2]));
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace dm::io
