#pragma once

// Dataset ingestion and signal statistics. A dataset on disk is a JSON
// manifest next to one binary file per sample:
//
//   16-byte header: magic "DSTG", then u32 N, u32 T, u32 C (little-endian),
//   followed by N*T*C float32 values, node-major, then time, then channel.
//
// Values are float32 on disk and promoted to double in memory.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dastgcn/errors.hpp"
#include "dastgcn/io.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

struct SampleRef {
    std::string path;  // relative to the manifest directory
    int label = 0;
    std::string subject_id;
};

struct DatasetManifest {
    std::string name;
    int nodes = 0;
    int timepoints = 0;  // nominal; individual samples may differ in T
    int channels = 1;
    double tr_seconds = 0.0;
    std::vector<SampleRef> samples;
};

struct LoadedSample {
    Tensor signal;  // [N, T, C]
    int label = 0;
    std::string subject_id;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<LoadedSample> samples;

    int nodes() const { return manifest.nodes; }
    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.label);
        return out;
    }
};

// ---------------------------------------------------------------------------
// manifest JSON
// ---------------------------------------------------------------------------

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["name"] = m.name;
    j["nodes"] = m.nodes;
    j["timepoints"] = m.timepoints;
    j["channels"] = m.channels;
    j["tr_seconds"] = m.tr_seconds;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples)
        j["samples"].push_back({{"path", s.path}, {"label", s.label}, {"subject_id", s.subject_id}});
    write_text_file(path, j.dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + " does not parse: " + e.what());
    }
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.nodes = j.at("nodes").get<int>();
        m.timepoints = j.at("timepoints").get<int>();
        m.channels = j.at("channels").get<int>();
        m.tr_seconds = j.value("tr_seconds", 0.0);
        for (const auto& s : j.at("samples")) {
            SampleRef r;
            r.path = s.at("path").get<std::string>();
            r.label = s.at("label").get<int>();
            r.subject_id = s.value("subject_id", "");
            if (r.label != 0 && r.label != 1)
                throw DataError("manifest " + path.string() + ": label must be 0 or 1, got " +
                                std::to_string(r.label));
            m.samples.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + " is missing fields: " + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// sample binary files
// ---------------------------------------------------------------------------

inline void write_sample_file(const std::filesystem::path& path, const Tensor& signal) {
    if (signal.rank() != 3)
        throw DimensionError("sample file: signal must be [N, T, C], got " + shape_str(signal.shape()));
    std::string out;
    out.reserve(16 + signal.size() * 4);
    out += "DSTG";
    detail::put_u32(out, static_cast<std::uint32_t>(signal.dim(0)));
    detail::put_u32(out, static_cast<std::uint32_t>(signal.dim(1)));
    detail::put_u32(out, static_cast<std::uint32_t>(signal.dim(2)));
    for (std::size_t i = 0; i < signal.size(); ++i) {
        const float f = static_cast<float>(signal[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
    write_text_file(path, out);
}

inline Tensor read_sample_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open sample file " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || bytes.compare(0, 4, "DSTG") != 0)
        throw DataError("corrupt sample file " + path.string() + ": bad magic");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const int n = static_cast<int>(detail::get_u32(p + 4));
    const int t = static_cast<int>(detail::get_u32(p + 8));
    const int c = static_cast<int>(detail::get_u32(p + 12));
    const std::size_t expect = static_cast<std::size_t>(n) * t * c;
    if (bytes.size() != 16 + expect * 4)
        throw DataError("corrupt sample file " + path.string() + ": header " + std::to_string(n) + "x" +
                        std::to_string(t) + "x" + std::to_string(c) + " does not match payload of " +
                        std::to_string((bytes.size() - 16) / 4) + " values");
    Tensor signal({n, t, c});
    for (std::size_t i = 0; i < expect; ++i) {
        const std::uint32_t bits = detail::get_u32(p + 16 + i * 4);
        float f;
        std::memcpy(&f, &bits, 4);
        signal[i] = static_cast<double>(f);
        if (!std::isfinite(signal[i]))
            throw DataError("sample file " + path.string() + ": non-finite value at index " +
                            std::to_string(i));
    }
    return signal;
}

// Loads every sample named by the manifest, in manifest order, validating the
// headers against the manifest dimensions.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = load_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    for (const auto& ref : ds.manifest.samples) {
        const auto file = base / ref.path;
        if (!std::filesystem::exists(file)) throw IoError("missing sample file " + file.string());
        LoadedSample s;
        s.signal = read_sample_file(file);
        if (s.signal.dim(0) != ds.manifest.nodes)
            throw DataError("sample " + file.string() + ": manifest says N=" +
                            std::to_string(ds.manifest.nodes) + ", header says N=" +
                            std::to_string(s.signal.dim(0)));
        if (s.signal.dim(2) != ds.manifest.channels)
            throw DataError("sample " + file.string() + ": manifest says C=" +
                            std::to_string(ds.manifest.channels) + ", header says C=" +
                            std::to_string(s.signal.dim(2)));
        s.label = ref.label;
        s.subject_id = ref.subject_id;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// signal statistics
// ---------------------------------------------------------------------------

// Per node and channel: subtract the mean and divide by the population
// standard deviation. Constant series map to zeros rather than erroring.
inline Tensor zscore(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("zscore: want [N, T, C], got " + shape_str(x.shape()));
    const int n = x.dim(0), t_len = x.dim(1), ch = x.dim(2);
    if (t_len < 2) throw ContractError("zscore: need at least 2 timepoints");
    Tensor out(x.shape());
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < ch; ++c) {
            double mean = 0.0;
            for (int t = 0; t < t_len; ++t) mean += x.at(i, t, c);
            mean /= t_len;
            double var = 0.0;
            for (int t = 0; t < t_len; ++t) {
                const double d = x.at(i, t, c) - mean;
                var += d * d;
            }
            var /= t_len;
            const double sd = std::sqrt(var);
            if (sd < 1e-12) {
                for (int t = 0; t < t_len; ++t) out.at(i, t, c) = 0.0;
            } else {
                const double inv = 1.0 / sd;
                for (int t = 0; t < t_len; ++t) out.at(i, t, c) = (x.at(i, t, c) - mean) * inv;
            }
        }
    }
    return out;
}

// Pairwise Pearson correlation of the node time courses of a single-channel
// signal. Symmetric, unit diagonal, entries clamped to [-1, 1]; pairs that
// involve a constant series get 0.
inline Tensor pearson_matrix(const Tensor& x) {
    if (x.rank() != 3 || x.dim(2) != 1)
        throw DimensionError("pearson_matrix: want [N, T, 1], got " + shape_str(x.shape()));
    const int n = x.dim(0), t_len = x.dim(1);
    if (t_len < 2) throw ContractError("pearson_matrix: need at least 2 timepoints");
    std::vector<double> mean(static_cast<std::size_t>(n), 0.0), sd(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* xi = x.data() + static_cast<std::size_t>(i) * t_len;
        double m = 0.0;
        for (int t = 0; t < t_len; ++t) m += xi[t];
        m /= t_len;
        double v = 0.0;
        for (int t = 0; t < t_len; ++t) v += (xi[t] - m) * (xi[t] - m);
        mean[static_cast<std::size_t>(i)] = m;
        sd[static_cast<std::size_t>(i)] = std::sqrt(v / t_len);
    }
    Tensor corr({n, n});
    for (int i = 0; i < n; ++i) {
        corr.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double r = 0.0;
            if (sd[static_cast<std::size_t>(i)] > 1e-12 && sd[static_cast<std::size_t>(j)] > 1e-12) {
                const double* xi = x.data() + static_cast<std::size_t>(i) * t_len;
                const double* xj = x.data() + static_cast<std::size_t>(j) * t_len;
                double cov = 0.0;
                for (int t = 0; t < t_len; ++t)
                    cov += (xi[t] - mean[static_cast<std::size_t>(i)]) * (xj[t] - mean[static_cast<std::size_t>(j)]);
                cov /= t_len;
                r = cov / (sd[static_cast<std::size_t>(i)] * sd[static_cast<std::size_t>(j)]);
                r = std::min(1.0, std::max(-1.0, r));
            }
            corr.at(i, j) = r;
            corr.at(j, i) = r;
        }
    }
    return corr;
}

// Elementwise mean of the per-sample Pearson matrices over the given indices.
inline Tensor mean_pearson(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw ContractError("mean_pearson: no samples given");
    Tensor acc({ds.nodes(), ds.nodes()});
    for (int idx : indices) {
        const Tensor p = pearson_matrix(ds.samples[static_cast<std::size_t>(idx)].signal);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= inv;
    return acc;
}

// Strict upper triangle of the Pearson matrix, flattened row by row; the
// feature vector of the linear correlation baseline. Length N*(N-1)/2.
inline Tensor upper_triangle_features(const Tensor& corr) {
    const int n = corr.dim(0);
    Tensor out({n * (n - 1) / 2});
    std::size_t k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out[k++] = corr.at(i, j);
    return out;
}

}  // namespace dastgcn
