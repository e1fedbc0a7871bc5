#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "diffgepci/phantom.hpp"

using namespace diffgepci;

namespace {

std::vector<double> slice_means(const Volume& v, PlaneAxis axis) {
    std::vector<double> out;
    for (std::size_t i = 0; i < v.dim(axis_dim(axis)); ++i) {
        const auto s = extract_slice(v, axis, i);
        double sum = 0.0;
        for (float x : s.image.values()) sum += x;
        out.push_back(sum / double(s.image.values().size()));
    }
    return out;
}

double variance(const std::vector<double>& xs) {
    double m = 0.0, v = 0.0;
    for (double x : xs) m += x / xs.size();
    for (double x : xs) v += (x - m) * (x - m) / (xs.size() - 1);
    return v;
}

} // namespace

TEST(Phantom, EchoDecayValue) {
    EXPECT_NEAR(echo_signal(1.0, 50.0, 4.0), 0.92311634638663578291, 1e-15);
    EXPECT_NEAR(echo_signal(1.0, 50.0, 4.0), 0.92312, 5e-6);
    const EchoTrain e = EchoTrain::uniform();
    ASSERT_EQ(e.size(), 10u);
    EXPECT_EQ(e.te_ms.front(), 4.0);
    EXPECT_EQ(e.te_ms.back(), 40.0);
}

TEST(Phantom, NoiselessChannelsFollowDecay) {
    const auto p = generate_pair(4, 16, EchoTrain::uniform(), 0.0);
    const auto e = EchoTrain::uniform();
    for (std::size_t v = 0; v < p.target.voxels(); ++v) {
        for (std::size_t q = 0; q < e.size(); ++q) {
            const double expected = echo_signal(p.field.proton_density[v], p.field.t2star_ms[v], e.te_ms[q]);
            EXPECT_NEAR(p.condition.values()[v * e.size() + q], expected, 1e-6);
        }
    }
}

TEST(Phantom, BackgroundIsNoiseOnly) {
    const auto clean = generate_pair(5, 16, EchoTrain::uniform(), 0.0);
    const auto noisy = generate_pair(5, 16);
    double sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < clean.target.voxels(); ++v) {
        if (clean.field.label[v] != 0) continue;
        EXPECT_EQ(clean.target.values()[v], -1.0f);
        for (std::size_t q = 0; q < 10; ++q) {
            EXPECT_EQ(clean.condition.values()[v * 10 + q], 0.0f);
            const double x = noisy.condition.values()[v * 10 + q];
            sum2 += x * x;
            ++n;
        }
    }
    ASSERT_GT(n, 1000u);
    EXPECT_NEAR(std::sqrt(sum2 / n), kDefaultEchoNoise, 0.1 * kDefaultEchoNoise);
}

TEST(Phantom, DeterministicPerSeed) {
    const auto a = generate_pair(6, 16), b = generate_pair(6, 16), c = generate_pair(7, 16);
    EXPECT_EQ(a.condition, b.condition);
    EXPECT_EQ(a.target, b.target);
    EXPECT_NE(a.target, c.target);
}

TEST(Phantom, TissueRangesAndForeground) {
    const auto f = make_tissue_field(8, 24);
    EXPECT_GT(f.foreground(), 0u);
    EXPECT_LT(f.foreground(), f.voxels());
    for (std::size_t v = 0; v < f.voxels(); ++v) {
        if (f.label[v] == 0) {
            EXPECT_EQ(f.proton_density[v], 0.0f);
            EXPECT_EQ(f.t2star_ms[v], kBackgroundT2StarMs);
        } else {
            EXPECT_GE(f.proton_density[v], 0.4f);
            EXPECT_LE(f.proton_density[v], 1.0f);
            EXPECT_GE(f.t2star_ms[v], 8.0f);
            EXPECT_LE(f.t2star_ms[v], 150.0f);
        }
    }
}

TEST(Phantom, EchoesMonotoneBeforeNoise) {
    const auto p = generate_pair(9, 16, EchoTrain::uniform(), 0.0);
    for (std::size_t v = 0; v < p.target.voxels(); ++v) {
        if (p.field.label[v] == 0) continue;
        for (std::size_t q = 1; q < 10; ++q) EXPECT_LE(p.condition.values()[v * 10 + q], p.condition.values()[v * 10 + q - 1]);
    }
}

TEST(Phantom, NoiselessFitRecoversT2Star) {
    const auto e = EchoTrain::uniform();
    const auto p = generate_pair(10, 16, e, 0.0);
    for (std::size_t v = 0; v < p.target.voxels(); ++v) {
        if (p.field.label[v] == 0) continue;
        const std::span<const float> sig(p.condition.values().data() + v * 10, 10);
        const DecayFit fit = fit_decay(sig, e);
        ASSERT_TRUE(fit.valid);
        EXPECT_NEAR(fit.t2star_ms, p.field.t2star_ms[v], 0.01 * p.field.t2star_ms[v]);
        EXPECT_NEAR(estimate_target_from_echoes(sig, e), p.target.values()[v], 1e-3);
    }
}

TEST(Phantom, TargetContrast) {
    EXPECT_NEAR(target_contrast(1.0, 40.0), 2.25 * 0.5 - 1.0, 1e-12);
    EXPECT_NEAR(target_contrast(0.8, 20.0), 2.25 * 0.8 * 50.0 / 75.0 - 1.0, 1e-12);
    EXPECT_NEAR(target_contrast(1.0, kMinT2StarMs), 1.0, 1e-12);
    EXPECT_EQ(target_contrast(0.0, 30.0), kBackgroundTarget);
    EXPECT_GT(target_contrast(1.0, 10.0), target_contrast(1.0, 100.0));
}

TEST(Phantom, TooSmallRejected) {
    EXPECT_THROW(generate_pair(1, 7), InvalidArgument);
    EXPECT_THROW(make_tissue_field(1, 4), InvalidArgument);
    EXPECT_NO_THROW(generate_pair(1, kMinPhantomSide));
}

TEST(Split, TwentyThreeTwoFour) {
    const auto s = split_dataset(29, {23, 2, 4}, 1);
    EXPECT_EQ(s.train.size(), 23u);
    EXPECT_EQ(s.validation.size(), 2u);
    EXPECT_EQ(s.test.size(), 4u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 29u);
    EXPECT_EQ(*all.rbegin(), 28u);
}

TEST(Split, SingletonsDisjointAndDeterministic) {
    const auto s = split_dataset(3, {1, 1, 1}, 2);
    std::set<std::size_t> all{s.train[0], s.validation[0], s.test[0]};
    EXPECT_EQ(all, (std::set<std::size_t>{0, 1, 2}));
    const auto again = split_dataset(3, {1, 1, 1}, 2);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.test, s.test);
}

TEST(Split, Errors) {
    EXPECT_THROW(split_dataset(5, {3, 2, 1}, 0), InvalidArgument);
    EXPECT_THROW(split_dataset(5, {3, 0, 1}, 0), InvalidArgument);
}

TEST(Artifacts, ZeroAmplitudeIsIdentity) {
    const auto t = generate_pair(11, 16).target;
    EXPECT_EQ(inject_slice_artifacts(t, PlaneAxis::Axial, 0.0, 3), t);
    EXPECT_THROW(inject_slice_artifacts(t, PlaneAxis::Axial, -0.1, 3), InvalidArgument);
}

TEST(Artifacts, RaiseVarianceOfSliceMeans) {
    const auto t = generate_pair(12, 32).target;
    for (PlaneAxis axis : kAllAxes) {
        const Volume c = inject_slice_artifacts(t, axis, 0.1, 4);
        EXPECT_GT(variance(slice_means(c, axis)), variance(slice_means(t, axis)) + 0.002);
        EXPECT_EQ(c, inject_slice_artifacts(t, axis, 0.1, 4));
        EXPECT_NE(c, inject_slice_artifacts(t, axis, 0.1, 5));
    }
}

TEST(Artifacts, OffsetConstantWithinSlice) {
    const Volume flat = Volume::cube(16, 1, 0.5f);
    const Volume c = inject_slice_artifacts(flat, PlaneAxis::Coronal, 0.2, 6);
    const auto means = slice_means(c, PlaneAxis::Coronal);
    EXPECT_GT(variance(means), 0.2 * 0.2 * 0.3);
    const auto other = slice_means(c, PlaneAxis::Axial);
    EXPECT_LT(variance(other), variance(means));
}

TEST(Manifest, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "diffgepci_manifest_test";
    std::filesystem::create_directories(dir);
    const std::vector<ManifestEntry> entries{{"pair000", "pair000_cond.gpcv", "pair000_target.gpcv", "train"},
                                             {"pair001", "pair001_cond.gpcv", "pair001_target.gpcv", "test"}};
    write_manifest(dir / "manifest.tsv", entries);
    EXPECT_EQ(read_manifest(dir / "manifest.tsv"), entries);
    EXPECT_THROW(read_manifest(dir / "missing.tsv"), IoError);
    std::filesystem::remove_all(dir);
}
