#pragma once

// Synthetic datasets with planted coupling structure. Signals follow a
// stable VAR(1) process x[t+1] = Phi_c x[t] + noise, where the coupling
// matrix Phi_c depends on the class: class 0 always runs the base coupling,
// class 1 runs the planted coupling, either for the whole scan
// (static_coupling) or alternating with the base coupling every switch_period
// steps (switching_coupling). Coupling matrices are rescaled to spectral
// radius 0.95 * effect_size, so effect_size 0 collapses both classes onto
// identical pure-noise processes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dastgcn/data.hpp"
#include "dastgcn/errors.hpp"
#include "dastgcn/io.hpp"
#include "dastgcn/rng.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

enum class CouplingDynamics { static_coupling, switching_coupling };

inline std::string to_string(CouplingDynamics d) {
    return d == CouplingDynamics::static_coupling ? "static_coupling" : "switching_coupling";
}

inline CouplingDynamics coupling_dynamics_from(const std::string& s) {
    if (s == "static_coupling") return CouplingDynamics::static_coupling;
    if (s == "switching_coupling") return CouplingDynamics::switching_coupling;
    throw ConfigError("unknown dynamics '" + s + "'");
}

struct SynthSpec {
    std::string name = "synthetic";
    int nodes = 16;
    int timepoints = 64;
    int samples_per_class = 50;
    double effect_size = 0.8;
    double noise_sigma = 1.0;
    CouplingDynamics dynamics = CouplingDynamics::switching_coupling;
    int switch_period = 8;
    double edge_density = 0.15;  // used when coupling matrices are auto-generated
    double tr_seconds = 1.0;
    std::uint64_t seed = 1;
    Tensor coupling_base;  // optional user-supplied raw coupling matrices
    Tensor coupling_true;

    void validate() const {
        if (nodes < 2) throw ConfigError("synth: need at least 2 nodes");
        if (timepoints < 2) throw ConfigError("synth: need at least 2 timepoints");
        if (samples_per_class < 1) throw ConfigError("synth: samples_per_class must be >= 1");
        if (effect_size < 0.0 || effect_size > 1.0)
            throw ConfigError("synth: effect_size must lie in [0, 1], got " + format_double(effect_size));
        if (noise_sigma <= 0.0) throw ConfigError("synth: noise_sigma must be positive");
        if (dynamics == CouplingDynamics::switching_coupling && switch_period < 1)
            throw ConfigError("synth: switch_period must be >= 1");
        if (edge_density <= 0.0 || edge_density > 1.0)
            throw ConfigError("synth: edge_density must lie in (0, 1]");
        auto check_mat = [&](const Tensor& m, const char* which) {
            if (m.defined() && (m.rank() != 2 || m.dim(0) != nodes || m.dim(1) != nodes))
                throw ConfigError(std::string("synth: ") + which + " coupling matrix must be " +
                                  std::to_string(nodes) + "x" + std::to_string(nodes));
        };
        check_mat(coupling_base, "base");
        check_mat(coupling_true, "planted");
    }
};

// Dominant eigenvalue magnitude via the normalized power method; the growth
// rate is averaged geometrically over the tail iterations, which also
// converges when the dominant eigenvalues are a complex pair.
inline double spectral_radius(const Tensor& a, int iterations = 300) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw DimensionError("spectral_radius: want a square matrix, got " + shape_str(a.shape()));
    const int n = a.dim(0);
    std::vector<double> v(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    RngStream rng(0x5eed, "spectral_radius");
    for (auto& x : v) x = rng.normal();
    double log_sum = 0.0;
    int counted = 0;
    const int tail_start = iterations / 2;
    for (int it = 0; it < iterations; ++it) {
        double norm2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* row = a.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) acc += row[j] * v[static_cast<std::size_t>(j)];
            w[static_cast<std::size_t>(i)] = acc;
            norm2 += acc * acc;
        }
        const double norm = std::sqrt(norm2);
        if (norm < 1e-150) return 0.0;  // (numerically) nilpotent
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / norm;
        if (it >= tail_start) {
            log_sum += std::log(norm);
            ++counted;
        }
    }
    return std::exp(log_sum / counted);
}

// Rescales a coupling matrix to the requested spectral radius. A target at or
// above 1 would make the VAR process explode, which is rejected up front.
inline Tensor scale_to_radius(const Tensor& a, double target) {
    if (target >= 1.0)
        throw ConfigError("unstable coupling: requested spectral radius " + format_double(target) +
                          " >= 1");
    Tensor out(a.shape());
    if (target == 0.0) return out;
    const double rho = spectral_radius(a);
    if (rho < 1e-12)
        throw ConfigError("coupling matrix has spectral radius " + format_double(rho) +
                          "; cannot rescale to " + format_double(target));
    const double s = target / rho;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

namespace detail {
// Sparse directed graph with random +/- edge weights and mild self coupling.
inline Tensor random_coupling(int n, double density, RngStream& rng) {
    Tensor a({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if (rng.uniform() < density) {
                const double w = rng.uniform(0.5, 1.0);
                a.at(i, j) = rng.uniform() < 0.5 ? w : -w;
            }
        }
        a.at(i, i) = 0.3;
    }
    return a;
}
}  // namespace detail

struct SynthResult {
    std::string manifest_path;
    Tensor coupling_base;  // stabilized matrices actually driving the processes
    Tensor coupling_true;
};

// Generates the dataset under out_dir: manifest.json, samples/sNNNNN.dstg and
// ground_truth_adjacency.csv (the planted class-1 coupling). Deterministic in
// the spec seed, file for file.
inline SynthResult synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const int n = spec.nodes, t_len = spec.timepoints;

    Tensor base_raw = spec.coupling_base;
    Tensor true_raw = spec.coupling_true;
    if (!base_raw.defined()) {
        RngStream rng(spec.seed, "synth.graph.base");
        base_raw = detail::random_coupling(n, spec.edge_density, rng);
    }
    if (!true_raw.defined()) {
        RngStream rng(spec.seed, "synth.graph.true");
        true_raw = detail::random_coupling(n, spec.edge_density, rng);
    }
    const double target = 0.95 * spec.effect_size;
    const Tensor phi_base = scale_to_radius(base_raw, target);
    const Tensor phi_true = scale_to_radius(true_raw, target);

    ensure_dir(out_dir);
    ensure_dir(out_dir / "samples");

    DatasetManifest manifest;
    manifest.name = spec.name;
    manifest.nodes = n;
    manifest.timepoints = t_len;
    manifest.channels = 1;
    manifest.tr_seconds = spec.tr_seconds;

    const int burn_in = 64;
    std::vector<double> state(static_cast<std::size_t>(n)), next(static_cast<std::size_t>(n));
    int file_index = 0;
    for (int cls = 0; cls < 2; ++cls) {
        for (int s = 0; s < spec.samples_per_class; ++s) {
            RngStream rng(spec.seed,
                          "synth.class" + std::to_string(cls) + ".sample" + std::to_string(s));
            const bool switching = cls == 1 && spec.dynamics == CouplingDynamics::switching_coupling;
            // random phase so no class keys on absolute scan position
            const int phase =
                switching ? static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * spec.switch_period)))
                          : 0;
            std::fill(state.begin(), state.end(), 0.0);
            Tensor signal({n, t_len, 1});
            for (int step = 0; step < burn_in + t_len; ++step) {
                const Tensor* phi = &phi_base;
                if (cls == 1) {
                    if (!switching) {
                        phi = &phi_true;
                    } else {
                        const int slot = (step + phase) / spec.switch_period;
                        phi = slot % 2 == 0 ? &phi_true : &phi_base;
                    }
                }
                for (int i = 0; i < n; ++i) {
                    double acc = 0.0;
                    const double* row = phi->data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) acc += row[j] * state[static_cast<std::size_t>(j)];
                    next[static_cast<std::size_t>(i)] = acc + rng.normal(0.0, spec.noise_sigma);
                }
                std::swap(state, next);
                if (step >= burn_in)
                    for (int i = 0; i < n; ++i) signal.at(i, step - burn_in, 0) = state[static_cast<std::size_t>(i)];
            }
            char fname[32];
            std::snprintf(fname, sizeof fname, "samples/s%05d.dstg", file_index++);
            write_sample_file(out_dir / fname, signal);
            SampleRef ref;
            ref.path = fname;
            ref.label = cls;
            ref.subject_id = "synth-c" + std::to_string(cls) + "-" + std::to_string(s);
            manifest.samples.push_back(std::move(ref));
        }
    }

    const auto manifest_path = out_dir / "manifest.json";
    save_manifest(manifest_path, manifest);
    write_matrix_csv(out_dir / "ground_truth_adjacency.csv", phi_true);

    SynthResult result;
    result.manifest_path = manifest_path.string();
    result.coupling_base = phi_base;
    result.coupling_true = phi_true;
    return result;
}

}  // namespace dastgcn
