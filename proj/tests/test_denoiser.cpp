#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "diffgepci/denoiser.hpp"

using namespace diffgepci;

namespace {

GaussianTargetModel constant_model(double m, double s) {
    return {[m](std::span<const float>) { return m; }, s};
}

GaussianTargetModel linear_model(double s) {
    return {[](std::span<const float> y) { return 0.5 * y[0] + 0.2 * y[1]; }, s};
}

class ConstantDenoiser final : public Denoiser {
public:
    explicit ConstantDenoiser(float c) : c_(c) {}
    Image predict_noise(const Image& x_t, int, const Image&) const override { return Image(x_t.rows(), x_t.cols(), 1, c_); }

private:
    float c_;
};

/// Analytic prediction scaled by a factor.
class ScaledDenoiser final : public Denoiser {
public:
    ScaledDenoiser(const Denoiser& inner, float factor) : inner_(inner), factor_(factor) {}
    Image predict_noise(const Image& x_t, int t, const Image& y) const override {
        Image out = inner_.predict_noise(x_t, t, y);
        for (float& v : out.values()) v *= factor_;
        return out;
    }

private:
    const Denoiser& inner_;
    float factor_;
};

/// Knows the clean sample, hence the exact noise.
class OracleDenoiser final : public Denoiser {
public:
    OracleDenoiser(Image x0, const NoiseSchedule& s) : x0_(std::move(x0)), s_(s) {}
    Image predict_noise(const Image& x_t, int t, const Image&) const override {
        Image out(x_t.rows(), x_t.cols(), 1);
        const double ab = s_.alpha_bar(t);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.values()[i] = static_cast<float>((x_t.values()[i] - std::sqrt(ab) * x0_.values()[i]) / std::sqrt(1.0 - ab));
        }
        return out;
    }

private:
    Image x0_;
    const NoiseSchedule& s_;
};

Image random_condition(std::size_t rows, std::size_t cols, std::size_t q, Rng& rng) {
    Image y(rows, cols, q);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : y.values()) v = u(rng);
    return y;
}

/// Pairs whose targets are drawn from the Gaussian target model.
std::vector<TrainingPair> gaussian_pairs(const GaussianTargetModel& model, std::size_t count, std::uint64_t seed) {
    Rng rng = make_stream(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<TrainingPair> out;
    for (std::size_t n = 0; n < count; ++n) {
        TrainingPair p{Image(4, 4), random_condition(4, 4, 2, rng), PlaneAxis::Axial};
        const Image m = model.mean_image(p.y);
        for (std::size_t i = 0; i < p.x0.size(); ++i) p.x0.values()[i] = static_cast<float>(m.values()[i] + model.s * normal(rng));
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<double> per_item_losses(const std::vector<TrainingPair>& data, const Denoiser& d, const NoiseSchedule& s) {
    std::vector<double> out;
    for (std::size_t n = 0; n < data.size(); ++n) {
        Rng rng = make_stream(99, n);
        out.push_back(training_loss(std::span(&data[n], 1), d, s, rng));
    }
    return out;
}

} // namespace

TEST(AnalyticDenoiser, ZeroAtConditionalMean) {
    const auto s = NoiseSchedule::linear(100);
    const AnalyticDenoiser d(constant_model(0.4, 0.3), s);
    const Image y(3, 3, 2, 0.0f);
    for (int t : {1, 17, 100}) {
        const Image xt(3, 3, 1, static_cast<float>(std::sqrt(s.alpha_bar(t)) * 0.4));
        const Image eps = d.predict_noise(xt, t, y);
        for (float v : eps.values()) EXPECT_NEAR(v, 0.0f, 1e-5);
    }
}

TEST(AnalyticDenoiser, MatchesQuadraturePosteriorMean) {
    // Posterior means by 40-digit numerical integration of
    // N(x0; m, s^2) N(x_t; sqrt(abar) x0, 1 - abar).
    struct Case {
        double m, s, ab, xt, eps;
    };
    for (const Case& c : {Case{0.3, 0.2, 0.6, 0.9, 0.99585045816820190},
                          Case{-0.5, 1.0, 0.1, 0.2, 0.33973665961010277},
                          Case{0.0, 0.05, 0.99, 0.1, 0.80160320641282546}}) {
        const auto s = NoiseSchedule::from_betas({1.0 - c.ab});
        const AnalyticDenoiser d(constant_model(c.m, c.s), s);
        const Image out = d.predict_noise(Image(1, 1, 1, static_cast<float>(c.xt)), 1, Image(1, 1, 1));
        EXPECT_NEAR(out.values()[0], c.eps, 2e-6);
    }
}

TEST(AnalyticDenoiser, Errors) {
    const auto s = NoiseSchedule::linear(10);
    EXPECT_THROW(AnalyticDenoiser(constant_model(0, 0.0), s), InvalidArgument);
    EXPECT_THROW(AnalyticDenoiser(GaussianTargetModel{}, s), ModelError);
    const AnalyticDenoiser d(constant_model(0, 1), s);
    EXPECT_THROW(d.predict_noise(Image(2, 2), 0, Image(2, 2, 3)), StepOutOfRange);
    EXPECT_THROW(d.predict_noise(Image(2, 2), 1, Image(3, 2, 3)), ShapeMismatch);
}

TEST(TrainingLoss, PerfectPredictorIsZero) {
    const auto s = NoiseSchedule::linear(100);
    Rng rng = make_stream(1);
    const TrainingPair p{standard_normal(4, 4, 1, rng), Image(4, 4, 2), PlaneAxis::Axial};
    const OracleDenoiser oracle(p.x0, s);
    Rng draw = make_stream(2);
    EXPECT_NEAR(training_loss(std::span(&p, 1), oracle, s, draw), 0.0, 1e-8);
}

TEST(TrainingLoss, ZeroPredictorChiSquareMean) {
    const auto s = NoiseSchedule::linear(100);
    const std::vector<TrainingPair> batch(10000, TrainingPair{Image(4, 4, 1, 0.3f), Image(4, 4, 1), PlaneAxis::Axial});
    Rng rng = make_stream(3);
    const double loss = training_loss(batch, ConstantDenoiser(0.0f), s, rng);
    EXPECT_NEAR(loss / 16.0, 1.0, 0.02);
    EXPECT_THROW(training_loss(std::span<const TrainingPair>{}, ConstantDenoiser(0.0f), s, rng), InvalidArgument);
}

TEST(TrainingLoss, AnalyticPredictorIsMmseOptimal) {
    const auto s = NoiseSchedule::linear(200);
    const auto model = linear_model(0.3);
    const AnalyticDenoiser analytic(model, s);
    const auto data = gaussian_pairs(model, 4000, 17);
    const auto best = per_item_losses(data, analytic, s);

    const ConstantDenoiser zero(0.0f), constant(0.2f);
    const ScaledDenoiser up(analytic, 1.1f), down(analytic, 0.9f);
    for (const Denoiser* other : std::vector<const Denoiser*>{&zero, &constant, &up, &down}) {
        const auto loss = per_item_losses(data, *other, s);
        std::vector<double> diff(loss.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = loss[i] - best[i];
        const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / diff.size();
        double var = 0.0;
        for (double d : diff) var += (d - mean) * (d - mean);
        const double se = std::sqrt(var / (diff.size() - 1) / diff.size());
        EXPECT_GT(mean, 3.0 * se);
    }
}

TEST(CountingDenoiser, CountsCalls) {
    const auto s = NoiseSchedule::linear(10);
    const AnalyticDenoiser d(constant_model(0, 1), s);
    const CountingDenoiser counter(d);
    for (int t = 1; t <= 7; ++t) counter.predict_noise(Image(2, 2), t, Image(2, 2, 1));
    EXPECT_EQ(counter.calls(), 7u);
}

TEST(Condition, NormalizeChannels) {
    Volume y({2, 2, 2}, 2);
    for (std::size_t v = 0; v < 8; ++v) {
        y.values()[2 * v] = static_cast<float>(v) * 3.0f - 4.0f;
        y.values()[2 * v + 1] = 5.0f;
    }
    const Volume n = normalize_condition_channels(y);
    for (std::size_t v = 0; v < 8; ++v) {
        EXPECT_NEAR(n.values()[2 * v], v / 7.0, 1e-6);
        EXPECT_EQ(n.values()[2 * v + 1], 0.0f);
    }
}

TEST(Condition, TriPlanePairs) {
    Volume target = Volume::cube(4);
    for (std::size_t i = 0; i < target.voxels(); ++i) target.values()[i] = float(i);
    const Volume cond = Volume::cube(4, 3, 1.0f);
    const auto pairs = tri_plane_pairs(target, cond);
    ASSERT_EQ(pairs.size(), 12u);
    EXPECT_EQ(pairs[0].axis, PlaneAxis::Axial);
    EXPECT_EQ(pairs[4].axis, PlaneAxis::Coronal);
    EXPECT_EQ(pairs[8].axis, PlaneAxis::Sagittal);
    EXPECT_EQ(pairs[5].x0, extract_slice(target, PlaneAxis::Coronal, 1).image);
    EXPECT_EQ(pairs[5].y.channels(), 3u);
    EXPECT_THROW(tri_plane_pairs(target, Volume::cube(5, 3)), ShapeMismatch);
}

namespace {

/// Noise prediction that always implies the clean image `level`.
class ConstantTargetDenoiser final : public Denoiser {
public:
    ConstantTargetDenoiser(NoiseSchedule s, double level) : s_(std::move(s)), level_(level) {}
    Image predict_noise(const Image& x_t, int t, const Image&) const override {
        const double ab = s_.alpha_bar(t);
        Image eps(x_t.rows(), x_t.cols(), 1);
        for (std::size_t p = 0; p < eps.size(); ++p)
            eps.values()[p] = static_cast<float>((x_t.values()[p] - std::sqrt(ab) * level_) / std::sqrt(1.0 - ab));
        return eps;
    }

private:
    NoiseSchedule s_;
    double level_;
};

double implied_x0(const Image& x_t, const Image& eps, const NoiseSchedule& s, int t, std::size_t p) {
    const double ab = s.alpha_bar(t);
    return (x_t.values()[p] - std::sqrt(1.0 - ab) * eps.values()[p]) / std::sqrt(ab);
}

} // namespace

TEST(ClampedDenoiser, ClampsImpliedCleanImage) {
    const auto s = NoiseSchedule::linear(100);
    Rng rng = make_stream(3);
    const Image x = standard_normal(4, 4, 1, rng);
    const Image y(4, 4, 1);
    for (double level : {-3.0, 2.5}) {
        const ConstantTargetDenoiser inner(s, level);
        const ClampedDenoiser clamped(inner, s, -1.0, 1.0);
        for (int t : {1, 50, 100}) {
            const Image eps = clamped.predict_noise(x, t, y);
            for (std::size_t p = 0; p < eps.size(); ++p) EXPECT_NEAR(implied_x0(x, eps, s, t, p), level < 0 ? -1.0 : 1.0, 1e-4);
        }
    }
}

TEST(ClampedDenoiser, InRangeEstimatesPassThrough) {
    const auto s = NoiseSchedule::linear(100);
    Rng rng = make_stream(4);
    const Image x = standard_normal(4, 4, 1, rng);
    const ConstantTargetDenoiser inner(s, 0.3);
    const ClampedDenoiser clamped(inner, s);
    for (int t : {1, 30, 100}) {
        const Image a = inner.predict_noise(x, t, Image(4, 4, 1));
        const Image b = clamped.predict_noise(x, t, Image(4, 4, 1));
        for (std::size_t p = 0; p < a.size(); ++p) EXPECT_NEAR(a.values()[p], b.values()[p], 1e-4);
    }
    EXPECT_THROW(ClampedDenoiser(inner, s, 1.0, 1.0), InvalidArgument);
}
