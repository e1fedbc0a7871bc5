#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "denoiser.hpp"
#include "error.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace diffgepci {

/// Sinusoidal features of t / T broadcast as extra input channels.
inline constexpr std::size_t kTimeFeatures = 4;

inline std::array<double, kTimeFeatures> time_features(int t, int total_steps) {
    const double tau = static_cast<double>(t) / static_cast<double>(total_steps);
    const double w = 0.5 * std::numbers::pi * tau;
    return {std::sin(w), std::cos(w), std::sin(2.0 * w), std::cos(2.0 * w)};
}

struct LayerShape {
    std::uint32_t in_channels = 0;
    std::uint32_t out_channels = 0;
    std::uint32_t kernel_h = 3;
    std::uint32_t kernel_w = 3;

    std::size_t fan_in() const noexcept { return std::size_t{in_channels} * kernel_h * kernel_w; }
    std::size_t weight_count() const noexcept { return fan_in() * out_channels; }
    std::size_t parameter_count() const noexcept { return weight_count() + out_channels; }

    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Three-level convolutional encoder-decoder.
///
/// Input channels are [x_t, y_1..y_Q, time features]. Levels run at full,
/// half and quarter resolution with widths w0, w1, w2; decoder levels
/// concatenate the upsampled features with the matching encoder output.
/// All convolutions are 3x3 with zero padding, followed by SiLU except the
/// final projection to one channel. Slice sides must be divisible by 4.
struct NetworkShape {
    std::size_t condition_channels = 10;
    std::array<std::size_t, 3> widths{8, 16, 16};

    std::size_t input_channels() const noexcept { return 1 + condition_channels + kTimeFeatures; }

    std::vector<LayerShape> layers() const {
        const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
        const auto [w0, w1, w2] = widths;
        return {
            {u(input_channels()), u(w0)}, {u(w0), u(w0)},           // encoder, full resolution
            {u(w0), u(w1)},               {u(w1), u(w1)},           // encoder, half resolution
            {u(w1), u(w2)},               {u(w2), u(w2)},           // bottleneck
            {u(w2 + w1), u(w1)},                                    // decoder, half resolution
            {u(w1 + w0), u(w0)},                                    // decoder, full resolution
            {u(w0), 1},                                             // projection
        };
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers()) n += l.parameter_count();
        return n;
    }

    /// Inverse of layers(); throws if the table is not this topology.
    static NetworkShape from_layers(const std::vector<LayerShape>& table) {
        if (table.size() != 9 || table[0].in_channels < 1 + kTimeFeatures + 1) {
            throw ModelError("layer table does not describe the encoder-decoder topology");
        }
        NetworkShape shape;
        shape.condition_channels = table[0].in_channels - 1 - kTimeFeatures;
        shape.widths = {table[0].out_channels, table[2].out_channels, table[4].out_channels};
        if (shape.layers() != table) throw ModelError("layer table does not describe the encoder-decoder topology");
        return shape;
    }
};

/// Flat parameter vector plus the layer table it was built for. Each layer
/// contributes its weights (grouped by output channel, then input channel,
/// then kernel row and column) followed by its biases.
struct DenoiserParams {
    std::vector<LayerShape> layers;
    std::vector<float> weights;

    std::size_t expected_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.parameter_count();
        return n;
    }

    void validate() const {
        if (layers.empty()) throw ModelError("denoiser parameters are uninitialized");
        if (expected_count() != weights.size()) {
            throw ModelError("parameter count " + std::to_string(weights.size()) + " does not match layer table (" +
                             std::to_string(expected_count()) + ")");
        }
        for (float w : weights) {
            if (!std::isfinite(w)) throw ModelError("non-finite parameter value");
        }
    }

    friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

/// Small uniform weights scaled by fan-in, zero biases.
inline DenoiserParams initialize_params(const NetworkShape& shape, std::uint64_t seed) {
    DenoiserParams p{shape.layers(), {}};
    p.weights.reserve(shape.parameter_count());
    Rng rng = make_stream(seed, 0x1417);
    for (const auto& l : p.layers) {
        const float bound = static_cast<float>(std::sqrt(3.0 / static_cast<double>(l.fan_in())));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (std::size_t i = 0; i < l.weight_count(); ++i) p.weights.push_back(dist(rng));
        p.weights.insert(p.weights.end(), l.out_channels, 0.0f);
    }
    return p;
}

namespace detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Feature maps are (H*W) x C matrices, pixel p = y * W + x.

template <typename S>
Mat<S> im2col(const Mat<S>& in, std::size_t h, std::size_t w) {
    const auto channels = static_cast<std::size_t>(in.cols());
    Mat<S> col = Mat<S>::Zero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(channels * 9));
    for (std::size_t c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                auto dst = col.col(static_cast<Eigen::Index>(c * 9 + ky * 3 + kx));
                const auto src = in.col(static_cast<Eigen::Index>(c));
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const std::size_t x_lo = kx == 0 ? 1 : 0;
                    const std::size_t x_hi = kx == 2 ? w - 1 : w;
                    for (std::size_t x = x_lo; x < x_hi; ++x) {
                        dst(static_cast<Eigen::Index>(y * w + x)) =
                            src(static_cast<Eigen::Index>(static_cast<std::size_t>(sy) * w + x + kx - 1));
                    }
                }
            }
        }
    }
    return col;
}

template <typename S>
Mat<S> col2im(const Mat<S>& col, std::size_t h, std::size_t w) {
    const auto channels = static_cast<std::size_t>(col.cols()) / 9;
    Mat<S> out = Mat<S>::Zero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(channels));
    for (std::size_t c = 0; c < channels; ++c) {
        auto dst = out.col(static_cast<Eigen::Index>(c));
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const auto src = col.col(static_cast<Eigen::Index>(c * 9 + ky * 3 + kx));
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const std::size_t x_lo = kx == 0 ? 1 : 0;
                    const std::size_t x_hi = kx == 2 ? w - 1 : w;
                    for (std::size_t x = x_lo; x < x_hi; ++x) {
                        dst(static_cast<Eigen::Index>(static_cast<std::size_t>(sy) * w + x + kx - 1)) +=
                            src(static_cast<Eigen::Index>(y * w + x));
                    }
                }
            }
        }
    }
    return out;
}

template <typename S>
Mat<S> avg_pool2(const Mat<S>& in, std::size_t h, std::size_t w) {
    const std::size_t oh = h / 2, ow = w / 2;
    Mat<S> out(static_cast<Eigen::Index>(oh * ow), in.cols());
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const auto p = [&](std::size_t yy, std::size_t xx) { return in(static_cast<Eigen::Index>(yy * w + xx), c); };
                out(static_cast<Eigen::Index>(y * ow + x), c) =
                    S(0.25) * (p(2 * y, 2 * x) + p(2 * y, 2 * x + 1) + p(2 * y + 1, 2 * x) + p(2 * y + 1, 2 * x + 1));
            }
        }
    }
    return out;
}

template <typename S>
Mat<S> avg_pool2_backward(const Mat<S>& d_out, std::size_t h, std::size_t w) {
    const std::size_t ow = w / 2;
    Mat<S> d_in(static_cast<Eigen::Index>(h * w), d_out.cols());
    for (Eigen::Index c = 0; c < d_out.cols(); ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                d_in(static_cast<Eigen::Index>(y * w + x), c) =
                    S(0.25) * d_out(static_cast<Eigen::Index>((y / 2) * ow + x / 2), c);
    return d_in;
}

/// Nearest-neighbour 2x upsampling from (h, w).
template <typename S>
Mat<S> upsample2(const Mat<S>& in, std::size_t h, std::size_t w) {
    const std::size_t ow = 2 * w;
    Mat<S> out(static_cast<Eigen::Index>(4 * h * w), in.cols());
    for (Eigen::Index c = 0; c < in.cols(); ++c)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                out(static_cast<Eigen::Index>(y * ow + x), c) = in(static_cast<Eigen::Index>((y / 2) * w + x / 2), c);
    return out;
}

template <typename S>
Mat<S> upsample2_backward(const Mat<S>& d_out, std::size_t h, std::size_t w) {
    const std::size_t ow = 2 * w;
    Mat<S> d_in = Mat<S>::Zero(static_cast<Eigen::Index>(h * w), d_out.cols());
    for (Eigen::Index c = 0; c < d_out.cols(); ++c)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                d_in(static_cast<Eigen::Index>((y / 2) * w + x / 2), c) += d_out(static_cast<Eigen::Index>(y * ow + x), c);
    return d_in;
}

template <typename S>
Mat<S> silu(const Mat<S>& z) {
    return z.unaryExpr([](S v) { return v / (S(1) + std::exp(-v)); });
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& z, const Mat<S>& d_a) {
    return z.binaryExpr(d_a, [](S v, S g) {
        const S sig = S(1) / (S(1) + std::exp(-v));
        return g * sig * (S(1) + v * (S(1) - sig));
    });
}

template <typename S>
Mat<S> hconcat(const Mat<S>& a, const Mat<S>& b) {
    Mat<S> out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

} // namespace detail

/// Forward and backward passes of the encoder-decoder over a flat
/// parameter vector of scalar type S.
template <typename S>
class EncoderDecoder {
public:
    using Matrix = detail::Mat<S>;

    struct Tape {
        std::size_t h = 0;
        std::size_t w = 0;
        std::array<Matrix, 9> cols;  // im2col of each layer input
        std::array<Matrix, 9> pre;   // pre-activations
    };

    explicit EncoderDecoder(NetworkShape shape) : shape_(shape), layers_(shape.layers()) {
        std::size_t off = 0;
        for (const auto& l : layers_) {
            offsets_.push_back(off);
            off += l.parameter_count();
        }
        count_ = off;
    }

    const NetworkShape& shape() const noexcept { return shape_; }
    std::size_t parameter_count() const noexcept { return count_; }

    /// Builds the (H*W) x C input matrix for one slice.
    Matrix make_input(const Image& x_t, int t, int total_steps, const Image& y) const {
        if (x_t.channels() != 1 || y.rows() != x_t.rows() || y.cols() != x_t.cols() ||
            y.channels() != shape_.condition_channels) {
            throw ShapeMismatch("network input: x_t " + x_t.shape_string() + ", condition " + y.shape_string() +
                                ", expected " + std::to_string(shape_.condition_channels) + " condition channels");
        }
        if (x_t.rows() % 4 != 0 || x_t.cols() % 4 != 0 || x_t.rows() == 0 || x_t.cols() == 0) {
            throw ShapeMismatch("network input: slice sides must be positive multiples of 4, got " + x_t.shape_string());
        }
        const auto n = static_cast<Eigen::Index>(x_t.pixels());
        Matrix in(n, static_cast<Eigen::Index>(shape_.input_channels()));
        for (Eigen::Index p = 0; p < n; ++p) in(p, 0) = static_cast<S>(x_t.values()[static_cast<std::size_t>(p)]);
        for (std::size_t q = 0; q < y.channels(); ++q) {
            const auto ch = y.channel(q);
            for (Eigen::Index p = 0; p < n; ++p) in(p, static_cast<Eigen::Index>(1 + q)) = static_cast<S>(ch[static_cast<std::size_t>(p)]);
        }
        const auto feats = time_features(t, total_steps);
        for (std::size_t f = 0; f < kTimeFeatures; ++f) {
            in.col(static_cast<Eigen::Index>(1 + y.channels() + f)).setConstant(static_cast<S>(feats[f]));
        }
        return in;
    }

    Matrix forward(const Matrix& input, std::size_t h, std::size_t w, std::span<const S> theta, Tape* tape = nullptr) const {
        require_params(theta);
        Tape local;
        Tape& tp = tape ? *tape : local;
        tp.h = h;
        tp.w = w;
        const std::size_t h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;

        const Matrix a0 = conv_act(0, input, h, w, theta, tp);
        const Matrix a1 = conv_act(1, a0, h, w, theta, tp);
        const Matrix a2 = conv_act(2, detail::avg_pool2(a1, h, w), h2, w2, theta, tp);
        const Matrix a3 = conv_act(3, a2, h2, w2, theta, tp);
        const Matrix a4 = conv_act(4, detail::avg_pool2(a3, h2, w2), h4, w4, theta, tp);
        const Matrix a5 = conv_act(5, a4, h4, w4, theta, tp);
        const Matrix a6 = conv_act(6, detail::hconcat(detail::upsample2(a5, h4, w4), a3), h2, w2, theta, tp);
        const Matrix a7 = conv_act(7, detail::hconcat(detail::upsample2(a6, h2, w2), a1), h, w, theta, tp);
        return conv(8, a7, h, w, theta, tp);
    }

    /// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(output).
    void backward(const Tape& tp, const Matrix& d_out, std::span<const S> theta, std::span<S> grad) const {
        require_params(theta);
        if (grad.size() != count_) throw ShapeMismatch("gradient buffer size mismatch");
        const std::size_t h = tp.h, w = tp.w, h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
        const auto [w0, w1, w2c] = shape_.widths;
        const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

        Matrix d_a7 = conv_backward(8, tp, d_out, h, w, theta, grad);
        Matrix d_c1 = conv_backward(7, tp, detail::silu_backward(tp.pre[7], d_a7), h, w, theta, grad);
        Matrix d_a6 = detail::upsample2_backward<S>(d_c1.leftCols(ei(w1)), h2, w2);
        Matrix d_a1 = d_c1.rightCols(ei(w0));
        Matrix d_c2 = conv_backward(6, tp, detail::silu_backward(tp.pre[6], d_a6), h2, w2, theta, grad);
        Matrix d_a5 = detail::upsample2_backward<S>(d_c2.leftCols(ei(w2c)), h4, w4);
        Matrix d_a3 = d_c2.rightCols(ei(w1));
        Matrix d_a4 = conv_backward(5, tp, detail::silu_backward(tp.pre[5], d_a5), h4, w4, theta, grad);
        Matrix d_p2 = conv_backward(4, tp, detail::silu_backward(tp.pre[4], d_a4), h4, w4, theta, grad);
        d_a3 += detail::avg_pool2_backward(d_p2, h2, w2);
        Matrix d_a2 = conv_backward(3, tp, detail::silu_backward(tp.pre[3], d_a3), h2, w2, theta, grad);
        Matrix d_p1 = conv_backward(2, tp, detail::silu_backward(tp.pre[2], d_a2), h2, w2, theta, grad);
        d_a1 += detail::avg_pool2_backward(d_p1, h, w);
        Matrix d_a0 = conv_backward(1, tp, detail::silu_backward(tp.pre[1], d_a1), h, w, theta, grad);
        conv_backward(0, tp, detail::silu_backward(tp.pre[0], d_a0), h, w, theta, grad, false);
    }

private:
    void require_params(std::span<const S> theta) const {
        if (theta.size() != count_) {
            throw ModelError("network expects " + std::to_string(count_) + " parameters, got " + std::to_string(theta.size()));
        }
    }

    Matrix conv(std::size_t l, const Matrix& in, std::size_t h, std::size_t w, std::span<const S> theta, Tape& tp) const {
        const auto& shape = layers_[l];
        tp.cols[l] = detail::im2col(in, h, w);
        const Eigen::Map<const Matrix> weights(theta.data() + offsets_[l], static_cast<Eigen::Index>(shape.fan_in()),
                                               static_cast<Eigen::Index>(shape.out_channels));
        const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bias(theta.data() + offsets_[l] + shape.weight_count(),
                                                                          static_cast<Eigen::Index>(shape.out_channels));
        Matrix z = tp.cols[l] * weights;
        z.rowwise() += bias;
        return z;
    }

    Matrix conv_act(std::size_t l, const Matrix& in, std::size_t h, std::size_t w, std::span<const S> theta, Tape& tp) const {
        tp.pre[l] = conv(l, in, h, w, theta, tp);
        return detail::silu(tp.pre[l]);
    }

    /// Returns d(loss)/d(layer input) unless `want_input` is false.
    Matrix conv_backward(std::size_t l, const Tape& tp, const Matrix& d_z, std::size_t h, std::size_t w,
                         std::span<const S> theta, std::span<S> grad, bool want_input = true) const {
        const auto& shape = layers_[l];
        const auto fan_in = static_cast<Eigen::Index>(shape.fan_in());
        const auto out_ch = static_cast<Eigen::Index>(shape.out_channels);
        Eigen::Map<Matrix> g_w(grad.data() + offsets_[l], fan_in, out_ch);
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> g_b(grad.data() + offsets_[l] + shape.weight_count(), out_ch);
        g_w.noalias() += tp.cols[l].transpose() * d_z;
        g_b += d_z.colwise().sum();
        if (!want_input) return {};
        const Eigen::Map<const Matrix> weights(theta.data() + offsets_[l], fan_in, out_ch);
        const Matrix d_col = d_z * weights.transpose();
        return detail::col2im(d_col, h, w);
    }

    NetworkShape shape_;
    std::vector<LayerShape> layers_;
    std::vector<std::size_t> offsets_;
    std::size_t count_ = 0;
};

/// Noise predictor backed by trained encoder-decoder parameters.
class LearnedDenoiser final : public Denoiser {
public:
    LearnedDenoiser(std::shared_ptr<const DenoiserParams> params, int total_steps)
        : params_(std::move(params)), total_steps_(total_steps), net_(shape_of(params_)) {
        if (total_steps_ < 1) throw InvalidArgument("learned denoiser: step count must be >= 1");
    }

    Image predict_noise(const Image& x_t, int t, const Image& y) const override {
        if (t < 1 || t > total_steps_) {
            throw StepOutOfRange("predict_noise: t = " + std::to_string(t) + " outside [1, " + std::to_string(total_steps_) + "]");
        }
        const auto input = net_.make_input(x_t, t, total_steps_, y);
        const auto out = net_.forward(input, x_t.rows(), x_t.cols(), params_->weights);
        Image eps(x_t.rows(), x_t.cols(), 1);
        for (std::size_t p = 0; p < eps.size(); ++p) eps.values()[p] = out(static_cast<Eigen::Index>(p), 0);
        return eps;
    }

    const DenoiserParams& params() const noexcept { return *params_; }
    const std::shared_ptr<const DenoiserParams>& shared_params() const noexcept { return params_; }

private:
    static NetworkShape shape_of(const std::shared_ptr<const DenoiserParams>& p) {
        if (!p) throw ModelError("learned denoiser: parameters are uninitialized");
        p->validate();
        return NetworkShape::from_layers(p->layers);
    }

    std::shared_ptr<const DenoiserParams> params_;
    int total_steps_;
    EncoderDecoder<float> net_;
};

/// Single-slice network evaluation.
inline Image network_forward(const Image& x_t, int t, int total_steps, const Image& y, const DenoiserParams& params) {
    params.validate();
    EncoderDecoder<float> net(NetworkShape::from_layers(params.layers));
    const auto out = net.forward(net.make_input(x_t, t, total_steps, y), x_t.rows(), x_t.cols(), params.weights);
    Image eps(x_t.rows(), x_t.cols(), 1);
    for (std::size_t p = 0; p < eps.size(); ++p) eps.values()[p] = out(static_cast<Eigen::Index>(p), 0);
    return eps;
}

/// Training loss of the network at `theta` and, when `grad` is non-empty,
/// its gradient (overwritten). Draws one (t, eps) per item from `rng` in
/// the same order as training_loss().
template <typename S>
double network_loss(std::span<const TrainingPair> batch, const EncoderDecoder<S>& net, std::span<const S> theta,
                    const NoiseSchedule& schedule, Rng& rng, std::span<S> grad = {}) {
    if (batch.empty()) throw InvalidArgument("training_loss: empty batch");
    const bool want_grad = !grad.empty();
    if (want_grad) std::fill(grad.begin(), grad.end(), S(0));
    const S inv_batch = S(1) / static_cast<S>(batch.size());
    double total = 0.0;
    typename EncoderDecoder<S>::Tape tape;
    for (const auto& pair : batch) {
        const NoisyExample ex = draw_noisy_example(pair, schedule, rng);
        const auto input = net.make_input(ex.x_t, ex.t, schedule.steps(), pair.y);
        const auto out = net.forward(input, ex.x_t.rows(), ex.x_t.cols(), theta, want_grad ? &tape : nullptr);
        typename EncoderDecoder<S>::Matrix diff(out.rows(), 1);
        for (Eigen::Index p = 0; p < out.rows(); ++p) diff(p, 0) = out(p, 0) - static_cast<S>(ex.eps.values()[static_cast<std::size_t>(p)]);
        total += static_cast<double>(diff.squaredNorm());
        if (want_grad) {
            std::vector<S> item_grad(grad.size(), S(0));
            net.backward(tape, (S(2) * inv_batch) * diff, theta, item_grad);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += item_grad[i];
        }
    }
    return total / static_cast<double>(batch.size());
}

/// Training loss for stored parameters (no gradient).
inline double training_loss(std::span<const TrainingPair> batch, const DenoiserParams& params, const NoiseSchedule& schedule,
                            Rng& rng) {
    params.validate();
    EncoderDecoder<float> net(NetworkShape::from_layers(params.layers));
    return network_loss<float>(batch, net, params.weights, schedule, rng);
}

enum class Optimizer { Sgd, Adam };

struct TrainingOptions {
    std::size_t epochs = 120;
    std::size_t batch_size = 8;
    Optimizer optimizer = Optimizer::Adam;
    /// SGD: step size applied to the gradient of the per-pixel loss.
    /// Adam: the step size itself.
    double learning_rate = 0.001;
    /// SGD momentum, or Adam's first-moment decay.
    double momentum = 0.9;
    /// Adam's second-moment decay.
    double second_moment = 0.999;
    /// Decay of the exponential moving average of the weights returned
    /// as the result; 0 returns the raw final weights.
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainingResult {
    DenoiserParams params;
    std::vector<double> epoch_losses;
};

/// Minibatch SGD with momentum, or Adam, on the noise-prediction loss.
///
/// Every epoch visits the whole dataset in a seeded random order, so slices
/// of all orientations present in `dataset` are mixed within each epoch.
inline TrainingResult train(std::span<const TrainingPair> dataset, DenoiserParams initial, const NoiseSchedule& schedule,
                            const TrainingOptions& options) {
    if (dataset.empty()) throw InvalidArgument("train: empty dataset");
    if (options.batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
    if (!(options.learning_rate >= 0.0) || !(options.momentum >= 0.0 && options.momentum < 1.0)) {
        throw InvalidArgument("train: need learning_rate >= 0 and momentum in [0, 1)");
    }
    if (!(options.second_moment >= 0.0 && options.second_moment < 1.0) || !(options.ema_decay >= 0.0 && options.ema_decay < 1.0)) {
        throw InvalidArgument("train: second_moment and ema_decay must lie in [0, 1)");
    }
    initial.validate();
    const EncoderDecoder<float> net(NetworkShape::from_layers(initial.layers));

    TrainingResult result{std::move(initial), {}};
    std::vector<float>& theta = result.params.weights;
    std::vector<float> grad(theta.size(), 0.0f);
    std::vector<float> velocity(theta.size(), 0.0f);
    std::vector<float> second(options.optimizer == Optimizer::Adam ? theta.size() : 0, 0.0f);
    std::vector<float> average(options.ema_decay > 0.0 ? theta : std::vector<float>{});
    const auto pixels = static_cast<double>(dataset.front().x0.pixels());
    const auto step = static_cast<float>(options.learning_rate / pixels);
    const auto mu = static_cast<float>(options.momentum);
    const auto nu = static_cast<float>(options.second_moment);
    const auto ema = static_cast<float>(options.ema_decay);
    double mu_power = 1.0, nu_power = 1.0;

    std::vector<std::size_t> order(dataset.size());
    std::vector<TrainingPair> batch;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_stream(options.seed, 0x5eed, epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng noise_rng = make_stream(options.seed, 0x0415e, epoch);

        double weighted = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[order[i]]);
            const double loss = network_loss<float>(batch, net, theta, schedule, noise_rng, grad);
            if (!std::isfinite(loss)) {
                throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
            }
            weighted += loss * static_cast<double>(batch.size());
            if (options.optimizer == Optimizer::Sgd) {
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    velocity[i] = mu * velocity[i] - step * grad[i];
                    theta[i] += velocity[i];
                }
            } else {
                mu_power *= options.momentum;
                nu_power *= options.second_moment;
                const auto lr = static_cast<float>(options.learning_rate * std::sqrt(1.0 - nu_power) / (1.0 - mu_power));
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    velocity[i] = mu * velocity[i] + (1.0f - mu) * grad[i];
                    second[i] = nu * second[i] + (1.0f - nu) * grad[i] * grad[i];
                    theta[i] -= lr * velocity[i] / (std::sqrt(second[i]) + 1e-8f);
                }
            }
            for (std::size_t i = 0; i < average.size(); ++i) average[i] = ema * average[i] + (1.0f - ema) * theta[i];
        }
        const double mean_loss = weighted / static_cast<double>(dataset.size());
        for (float w : theta) {
            if (!std::isfinite(w)) throw NumericalError("training diverged: non-finite parameter at epoch " + std::to_string(epoch + 1));
        }
        result.epoch_losses.push_back(mean_loss);
        if (options.on_epoch) options.on_epoch(epoch + 1, mean_loss);
    }
    if (!average.empty()) theta = std::move(average);
    return result;
}

// GPDN checkpoint: "GPDN", version byte, u32 layer count, per layer
// u32 (in, out, kernel_h, kernel_w), then float32 parameters in
// declaration order. Everything little-endian.

inline constexpr std::uint8_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_params(const DenoiserParams& p) {
    p.validate();
    std::vector<std::uint8_t> out;
    binary::put_magic(out, "GPDN");
    binary::put_u8(out, kCheckpointVersion);
    binary::put_u32(out, static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        binary::put_u32(out, l.in_channels);
        binary::put_u32(out, l.out_channels);
        binary::put_u32(out, l.kernel_h);
        binary::put_u32(out, l.kernel_w);
    }
    for (float w : p.weights) binary::put_f32(out, w);
    return out;
}

inline DenoiserParams decode_params(std::vector<std::uint8_t> bytes, std::string source = "<memory>") {
    binary::Reader in(std::move(bytes), std::move(source));
    in.expect_magic("GPDN");
    const auto version = in.u8();
    if (version != kCheckpointVersion) throw IoError(in.source() + ": unsupported GPDN version " + std::to_string(version));
    DenoiserParams p;
    const std::uint32_t n = in.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        LayerShape l;
        l.in_channels = in.u32();
        l.out_channels = in.u32();
        l.kernel_h = in.u32();
        l.kernel_w = in.u32();
        p.layers.push_back(l);
    }
    if (in.remaining() != p.expected_count() * 4) throw IoError(in.source() + ": parameter payload does not match layer table");
    p.weights.resize(p.expected_count());
    for (float& w : p.weights) w = in.f32();
    p.validate();
    return p;
}

inline void save_params(const std::filesystem::path& path, const DenoiserParams& p) { binary::write_file(path, encode_params(p)); }

inline DenoiserParams load_params(const std::filesystem::path& path) { return decode_params(binary::read_file(path), path.string()); }

} // namespace diffgepci
