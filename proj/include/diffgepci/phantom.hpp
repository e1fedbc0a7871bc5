#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace diffgepci {

/// Echo times TE_q = TE1 + (q - 1) * spacing, in milliseconds.
struct EchoTrain {
    std::vector<double> te_ms;

    static EchoTrain uniform(std::size_t count = 10, double first_ms = 4.0, double spacing_ms = 4.0) {
        if (count == 0) throw InvalidArgument("echo train needs at least one echo");
        if (!(first_ms > 0.0) || !(spacing_ms > 0.0)) throw InvalidArgument("echo times must be positive and increasing");
        EchoTrain e;
        for (std::size_t q = 0; q < count; ++q) e.te_ms.push_back(first_ms + static_cast<double>(q) * spacing_ms);
        return e;
    }

    std::size_t size() const noexcept { return te_ms.size(); }

    void validate() const {
        if (te_ms.empty()) throw InvalidArgument("echo train needs at least one echo");
        for (std::size_t q = 1; q < te_ms.size(); ++q) {
            if (!(te_ms[q] > te_ms[q - 1])) throw InvalidArgument("echo times must be strictly increasing");
        }
    }
};

/// Per-voxel tissue parameters of a procedural head phantom.
struct TissueField {
    Volume::Dims dims{};
    std::vector<float> proton_density;  // [0, 1], 0 in background
    std::vector<float> t2star_ms;       // [5, 200]
    std::vector<std::uint8_t> label;    // 0 background, 1 head, 2.. inner structures

    std::size_t voxels() const noexcept { return proton_density.size(); }
    std::size_t foreground() const {
        return static_cast<std::size_t>(std::count_if(proton_density.begin(), proton_density.end(), [](float p) { return p > 0.0f; }));
    }
};

inline constexpr float kBackgroundT2StarMs = 200.0f;
inline constexpr std::size_t kMinPhantomSide = 8;

/// Relaxation rate (1/s) at which the target contrast reaches half its proton-density ceiling.
inline constexpr double kContrastHalfRate = 25.0;

/// Shortest T2* (ms) the contrast map and the decay fit admit.
inline constexpr double kMinT2StarMs = 5.0;

/// FLAIR-like target contrast. With R = 1000 / t2star the relaxation rate
/// in 1/s, c = pd * R / (R + R_half) is mapped linearly onto [-1, 1] using
/// its ceiling at pd = 1, t2star = kMinT2StarMs. Background (pd = 0) is -1.
/// Smooth and invertible from the noiseless decay curve.
inline double target_contrast(double proton_density, double t2star_ms) {
    const double rate = 1000.0 / t2star_ms;
    const double max_rate = 1000.0 / kMinT2StarMs;
    const double ceiling = max_rate / (max_rate + kContrastHalfRate);
    return 2.0 * proton_density * rate / (rate + kContrastHalfRate) / ceiling - 1.0;
}

/// Target value of background voxels.
inline constexpr double kBackgroundTarget = -1.0;

/// Random ellipsoidal head: an outer ellipsoid with a few inner structures
/// clipped to it. Deterministic per seed.
inline TissueField make_tissue_field(std::uint64_t seed, std::size_t n) {
    if (n < kMinPhantomSide) {
        throw InvalidArgument("phantom: side " + std::to_string(n) + " is too small for ellipsoid placement (need >= " +
                              std::to_string(kMinPhantomSide) + ")");
    }
    Rng rng = make_stream(seed, 0x7155);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double side = static_cast<double>(n);

    struct Ellipsoid {
        std::array<double, 3> center;
        std::array<double, 3> semi;
        float pd;
        float t2;
    };
    auto inside = [](const Ellipsoid& e, double i, double j, double k) {
        const double a = (i - e.center[0]) / e.semi[0];
        const double b = (j - e.center[1]) / e.semi[1];
        const double c = (k - e.center[2]) / e.semi[2];
        return a * a + b * b + c * c <= 1.0;
    };

    const double mid = 0.5 * (side - 1.0);
    Ellipsoid head{};
    for (int d = 0; d < 3; ++d) {
        head.center[d] = mid + uniform(-0.03, 0.03) * side;
        head.semi[d] = uniform(0.34, 0.44) * side;
    }
    head.pd = static_cast<float>(uniform(0.6, 0.8));
    head.t2 = static_cast<float>(uniform(40.0, 70.0));

    std::vector<Ellipsoid> inner(static_cast<std::size_t>(std::uniform_int_distribution<int>(3, 6)(rng)));
    for (auto& e : inner) {
        for (int d = 0; d < 3; ++d) {
            e.center[d] = head.center[d] + uniform(-0.2, 0.2) * side;
            e.semi[d] = uniform(0.08, 0.2) * side;
        }
        e.pd = static_cast<float>(uniform(0.4, 1.0));
        e.t2 = static_cast<float>(uniform(8.0, 150.0));
    }

    TissueField f;
    f.dims = {n, n, n};
    f.proton_density.assign(n * n * n, 0.0f);
    f.t2star_ms.assign(n * n * n, kBackgroundT2StarMs);
    f.label.assign(n * n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < n; ++k) {
                const double x = static_cast<double>(i), y = static_cast<double>(j), z = static_cast<double>(k);
                if (!inside(head, x, y, z)) continue;
                const std::size_t v = (i * n + j) * n + k;
                f.proton_density[v] = head.pd;
                f.t2star_ms[v] = head.t2;
                f.label[v] = 1;
                for (std::size_t e = 0; e < inner.size(); ++e) {
                    if (!inside(inner[e], x, y, z)) continue;
                    f.proton_density[v] = inner[e].pd;
                    f.t2star_ms[v] = inner[e].t2;
                    f.label[v] = static_cast<std::uint8_t>(2 + e);
                }
            }
        }
    }
    return f;
}

/// Noiseless echo amplitude pd * exp(-TE / t2star).
inline double echo_signal(double proton_density, double t2star_ms, double te_ms) {
    return proton_density * std::exp(-te_ms / t2star_ms);
}

/// Multi-echo condition volume with additive Gaussian noise of std `noise_sigma`.
inline Volume simulate_echoes(const TissueField& field, const EchoTrain& echoes, double noise_sigma, Rng& rng) {
    echoes.validate();
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("phantom: noise sigma must be >= 0");
    Volume y(field.dims, echoes.size());
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t v = 0; v < field.voxels(); ++v) {
        for (std::size_t q = 0; q < echoes.size(); ++q) {
            double s = echo_signal(field.proton_density[v], field.t2star_ms[v], echoes.te_ms[q]);
            if (noise_sigma > 0.0) s += noise_sigma * noise(rng);
            y.values()[v * echoes.size() + q] = static_cast<float>(s);
        }
    }
    return y;
}

inline Volume target_volume(const TissueField& field) {
    Volume x(field.dims, 1);
    for (std::size_t v = 0; v < field.voxels(); ++v) {
        x.values()[v] = static_cast<float>(target_contrast(field.proton_density[v], field.t2star_ms[v]));
    }
    return x;
}

struct PhantomPair {
    Volume condition;  // N^3 x Q echoes
    Volume target;     // N^3 contrast
    TissueField field;
};

inline constexpr double kDefaultEchoNoise = 0.01;

inline PhantomPair generate_pair(std::uint64_t seed, std::size_t n, const EchoTrain& echoes = EchoTrain::uniform(),
                                 double noise_sigma = kDefaultEchoNoise) {
    PhantomPair p;
    p.field = make_tissue_field(seed, n);
    Rng noise_rng = make_stream(seed, 0xEC40);
    p.condition = simulate_echoes(p.field, echoes, noise_sigma, noise_rng);
    p.target = target_volume(p.field);
    return p;
}

/// Weighted log-linear fit of a decay curve, weights S^2.
struct DecayFit {
    double proton_density = 0.0;
    double t2star_ms = kBackgroundT2StarMs;
    bool valid = false;
};

inline DecayFit fit_decay(std::span<const float> signal, const EchoTrain& echoes, double floor = 1e-3) {
    double sw = 0, st = 0, sl = 0, stt = 0, stl = 0;
    std::size_t used = 0;
    for (std::size_t q = 0; q < signal.size() && q < echoes.size(); ++q) {
        const double s = signal[q];
        if (!(s > floor)) continue;
        const double w = s * s;
        const double te = echoes.te_ms[q];
        const double l = std::log(s);
        sw += w;
        st += w * te;
        sl += w * l;
        stt += w * te * te;
        stl += w * te * l;
        ++used;
    }
    DecayFit fit;
    if (used < 2) return fit;
    const double det = sw * stt - st * st;
    if (!(det > 0.0)) return fit;
    const double slope = (sw * stl - st * sl) / det;
    const double intercept = (sl - slope * st) / sw;
    fit.proton_density = std::exp(intercept);
    fit.t2star_ms = slope < 0.0 ? -1.0 / slope : kBackgroundT2StarMs;
    fit.valid = true;
    return fit;
}

/// Target estimate from raw echoes: decay fit followed by the contrast map.
/// Voxels whose first echo is below `detection` count as background.
inline double estimate_target_from_echoes(std::span<const float> signal, const EchoTrain& echoes, double detection = 0.05) {
    if (signal.empty() || !(signal[0] > detection)) return kBackgroundTarget;
    const DecayFit fit = fit_decay(signal, echoes);
    if (!fit.valid) return kBackgroundTarget;
    const double pd = std::clamp(fit.proton_density, 0.0, 1.0);
    const double t2 = std::clamp(fit.t2star_ms, kMinT2StarMs, 200.0);
    return target_contrast(pd, t2);
}

/// Disjoint train / validation / test index sets.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..count-1 cut into the requested set sizes.
inline DatasetSplit split_dataset(std::size_t count, std::array<std::size_t, 3> sizes, std::uint64_t seed) {
    if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) throw InvalidArgument("split_dataset: split sizes must be positive");
    if (sizes[0] + sizes[1] + sizes[2] > count) {
        throw InvalidArgument("split_dataset: " + std::to_string(count) + " volumes are insufficient for the requested split");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_stream(seed, 0x5917);
    std::shuffle(order.begin(), order.end(), rng);
    DatasetSplit s;
    auto take = [&](std::size_t from, std::size_t n) {
        std::vector<std::size_t> part(order.begin() + static_cast<long>(from), order.begin() + static_cast<long>(from + n));
        std::sort(part.begin(), part.end());
        return part;
    };
    s.train = take(0, sizes[0]);
    s.validation = take(sizes[0], sizes[1]);
    s.test = take(sizes[0] + sizes[1], sizes[2]);
    return s;
}

/// Simulates independent per-slice generation error along `axis`: every
/// slice receives a constant offset ~ N(0, amplitude^2) plus per-voxel
/// noise ~ N(0, (amplitude / 2)^2).
inline Volume inject_slice_artifacts(const Volume& v, PlaneAxis axis, double amplitude, std::uint64_t seed) {
    if (!(amplitude >= 0.0)) throw InvalidArgument("inject_slice_artifacts: amplitude must be >= 0");
    if (amplitude == 0.0) return v;
    Volume out = v;
    const std::size_t n = v.dim(axis_dim(axis));
    const auto [rd, cd] = in_plane_dims(axis);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < n; ++s) {
        Rng rng = make_stream(seed, 0xA27F + static_cast<std::uint64_t>(axis_dim(axis)), s);
        const double offset = amplitude * normal(rng);
        for (std::size_t r = 0; r < v.dim(rd); ++r) {
            for (std::size_t c = 0; c < v.dim(cd); ++c) {
                const auto p = slice_to_volume(axis, s, r, c);
                for (std::size_t q = 0; q < v.channels(); ++q) {
                    float& x = out.at(p[0], p[1], p[2], q);
                    x = static_cast<float>(x + offset + 0.5 * amplitude * normal(rng));
                }
            }
        }
    }
    return out;
}

/// One line of the dataset manifest.
struct ManifestEntry {
    std::string pair_id;
    std::string condition_path;
    std::string target_path;
    std::string split;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Tab-separated: pair id, condition path, target path, split.
inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& e : entries) out << e.pair_id << '\t' << e.condition_path << '\t' << e.target_path << '\t' << e.split << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        ManifestEntry e;
        if (!std::getline(fields, e.pair_id, '\t') || !std::getline(fields, e.condition_path, '\t') ||
            !std::getline(fields, e.target_path, '\t') || !std::getline(fields, e.split, '\t')) {
            throw IoError("malformed manifest line in " + path.string() + ": " + line);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

} // namespace diffgepci
