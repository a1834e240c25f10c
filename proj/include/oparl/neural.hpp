#pragma once

// Dense feed-forward networks with exact reverse-mode gradients plus the Adam
// and parameter-copy helpers that act on them. All parameters of a network live in one flat buffer in
// canonical layer-major order:
//
//   for each layer l: W_l (out x in, row-major), then b_l (out)
//
// so snapshots, Polyak averaging and optimizer steps work on plain arrays.

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oparl/errors.hpp"
#include "oparl/rng.hpp"

namespace oparl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Tanh, Relu };

/// tanh through the vectorized exponential: 1 - 2 / (exp(2x) + 1). Absolute
/// error stays at the 1e-16 level and the result is confined to [-1, 1].
template <typename Derived>
Matrix tanh_via_exp(const Eigen::ArrayBase<Derived>& z) {
    return (1.0 - 2.0 / ((2.0 * z).exp() + 1.0)).matrix();
}

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw FormatError("unknown activation '" + s + "'");
}

/// Output squashing: identity, or scale * tanh(z) componentwise.
struct OutputTransform {
    enum class Kind { Identity, Bounded };
    Kind kind = Kind::Identity;
    double scale = 1.0;

    static OutputTransform identity() { return {}; }
    static OutputTransform bounded(double scale) { return {Kind::Bounded, scale}; }

    friend bool operator==(const OutputTransform&, const OutputTransform&) = default;
};

/// Heap buffer with Eigen's maximum alignment. Parameters and gradients live in
/// these so vectorized kernels see the same alignment on every run, which keeps
/// floating-point reduction order (and so every bit of the result) reproducible.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// Flat parameter (or gradient) array plus the layer sizes that define its layout.
struct ParamVector {
    std::vector<double> values;
    std::vector<std::size_t> layer_sizes;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

inline std::size_t param_count(std::span<const std::size_t> sizes) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) n += (sizes[i] + 1) * sizes[i + 1];
    return n;
}

/// Per-layer intermediate values of a batched forward pass, kept for backprop.
/// Columns are samples.
struct ForwardCache {
    Matrix input;                 // network input
    std::vector<Matrix> outputs;  // post-activation output of each layer (last = network output)

    const Matrix& layer_input(std::size_t l) const { return l == 0 ? input : outputs[l - 1]; }
};

class Mlp {
public:
    Mlp() = default;

    Mlp(std::vector<std::size_t> layer_sizes, Activation activation, OutputTransform transform)
        : sizes_(std::move(layer_sizes)), activation_(activation), transform_(transform) {
        if (sizes_.size() < 2) throw ShapeError("Mlp needs at least an input and an output layer");
        for (auto s : sizes_)
            if (s == 0) throw ShapeError("Mlp layer sizes must be positive");
        if (transform_.kind == OutputTransform::Kind::Bounded && !(transform_.scale > 0.0))
            throw ShapeError("bounded output scale must be positive");
        offsets_.reserve(sizes_.size());
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(off);
            off += (sizes_[l] + 1) * sizes_[l + 1];
        }
        offsets_.push_back(off);
        params_.assign(off, 0.0);
    }

    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    Activation activation() const { return activation_; }
    const OutputTransform& output_transform() const { return transform_; }
    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }
    std::size_t layer_count() const { return sizes_.size() - 1; }
    std::size_t param_count() const { return params_.size(); }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    ParamVector snapshot() const { return {{params_.begin(), params_.end()}, sizes_}; }

    void restore(const ParamVector& p) {
        if (p.layer_sizes != sizes_) throw ShapeError("snapshot layout does not match network");
        if (p.values.size() != params_.size())
            throw ShapeError("snapshot parameter count", params_.size(), p.values.size());
        params_.assign(p.values.begin(), p.values.end());
    }

    bool same_architecture(const Mlp& other) const {
        return sizes_ == other.sizes_ && activation_ == other.activation_ &&
               transform_ == other.transform_;
    }

    using ConstWeights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using Weights = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    ConstWeights weights(std::size_t l) const {
        return ConstWeights(params_.data() + offsets_[l], static_cast<Eigen::Index>(sizes_[l + 1]),
                            static_cast<Eigen::Index>(sizes_[l]));
    }
    Weights weights(std::size_t l) {
        return Weights(params_.data() + offsets_[l], static_cast<Eigen::Index>(sizes_[l + 1]),
                       static_cast<Eigen::Index>(sizes_[l]));
    }
    Eigen::Map<const Vector> bias(std::size_t l) const {
        return Eigen::Map<const Vector>(params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1],
                                        static_cast<Eigen::Index>(sizes_[l + 1]));
    }
    Eigen::Map<Vector> bias(std::size_t l) {
        return Eigen::Map<Vector>(params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1],
                                  static_cast<Eigen::Index>(sizes_[l + 1]));
    }

    /// Batched forward pass: `input` is (input_size x batch).
    Matrix forward(const Matrix& input) const {
        check_input(input);
        Matrix h = input;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            Matrix z = weights(l) * h;
            z.colwise() += bias(l);
            h = apply_activation(std::move(z), l);
        }
        return h;
    }

    /// Forward pass that records what backward() needs.
    Matrix forward(const Matrix& input, ForwardCache& cache) const {
        check_input(input);
        cache.input = input;
        cache.outputs.resize(layer_count());
        const Matrix* h = &cache.input;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            Matrix z = weights(l) * (*h);
            z.colwise() += bias(l);
            cache.outputs[l] = apply_activation(std::move(z), l);
            h = &cache.outputs[l];
        }
        return cache.outputs.back();
    }

    /// Reverse pass for the scalar sum(output .* output_grad), summed over the batch.
    /// Writes parameter gradients into `param_grad` (resized) when non-null and
    /// returns the gradient with respect to the input (input_size x batch).
    Matrix backward(const ForwardCache& cache, const Matrix& output_grad,
                    AlignedBuffer* param_grad, bool want_input_grad = true) const {
        if (cache.outputs.size() != layer_count()) throw ShapeError("forward cache does not match network");
        if (static_cast<std::size_t>(output_grad.rows()) != output_size())
            throw ShapeError("output gradient rows", output_size(), static_cast<std::size_t>(output_grad.rows()));
        if (output_grad.cols() != cache.outputs.back().cols())
            throw ShapeError("output gradient batch", static_cast<std::size_t>(cache.outputs.back().cols()),
                             static_cast<std::size_t>(output_grad.cols()));
        if (param_grad) param_grad->assign(params_.size(), 0.0);

        Matrix delta = output_grad;
        for (std::size_t l = layer_count(); l-- > 0;) {
            delta = activation_derivative(cache.outputs[l], l).cwiseProduct(delta);
            if (param_grad) {
                Weights gw(param_grad->data() + offsets_[l], static_cast<Eigen::Index>(sizes_[l + 1]),
                           static_cast<Eigen::Index>(sizes_[l]));
                gw.noalias() = delta * cache.layer_input(l).transpose();
                Eigen::Map<Vector> gb(param_grad->data() + offsets_[l] + sizes_[l] * sizes_[l + 1],
                                      static_cast<Eigen::Index>(sizes_[l + 1]));
                gb = delta.rowwise().sum();
            }
            if (l > 0 || want_input_grad) delta = weights(l).transpose() * delta;
        }
        return want_input_grad ? delta : Matrix();
    }

private:
    void check_input(const Matrix& input) const {
        if (static_cast<std::size_t>(input.rows()) != input_size())
            throw ShapeError("network input", input_size(), static_cast<std::size_t>(input.rows()));
    }

    bool is_output_layer(std::size_t l) const { return l + 1 == layer_count(); }

    Matrix apply_activation(Matrix z, std::size_t l) const {
        if (is_output_layer(l)) {
            if (transform_.kind == OutputTransform::Kind::Bounded)
                return transform_.scale * tanh_via_exp(z.array());
            return z;
        }
        if (activation_ == Activation::Tanh) return tanh_via_exp(z.array());
        return z.cwiseMax(0.0);
    }

    // Derivative of the layer nonlinearity expressed through its output.
    Matrix activation_derivative(const Matrix& out, std::size_t l) const {
        if (is_output_layer(l)) {
            if (transform_.kind == OutputTransform::Kind::Bounded) {
                const double s = transform_.scale;
                return (1.0 - (out.array() / s).square()).matrix() * s;
            }
            return Matrix::Ones(out.rows(), out.cols());
        }
        if (activation_ == Activation::Tanh) return (1.0 - out.array().square()).matrix();
        return (out.array() > 0.0).cast<double>().matrix();
    }

    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    Activation activation_ = Activation::Tanh;
    OutputTransform transform_;
    AlignedBuffer params_;
};

// ---------------------------------------------------------------------------
// Free-function surface

inline Vector to_column(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input) {
    if (input.size() != net.input_size()) throw ShapeError("network input", net.input_size(), input.size());
    Matrix out = net.forward(Matrix(to_column(input)));
    return {out.data(), out.data() + out.size()};
}

/// d(output . output_grad)/d(params) for a single input. Does not touch the net.
inline ParamVector mlp_backward(const Mlp& net, std::span<const double> input,
                                std::span<const double> output_grad) {
    if (input.size() != net.input_size()) throw ShapeError("network input", net.input_size(), input.size());
    if (output_grad.size() != net.output_size())
        throw ShapeError("output gradient", net.output_size(), output_grad.size());
    ForwardCache cache;
    net.forward(Matrix(to_column(input)), cache);
    AlignedBuffer grad;
    net.backward(cache, Matrix(to_column(output_grad)), &grad, false);
    return {{grad.begin(), grad.end()}, net.layer_sizes()};
}

/// Fan-in scaled uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
inline Mlp init_mlp(const std::vector<std::size_t>& layer_sizes, OutputTransform transform, Rng& rng,
                    Activation activation = Activation::Tanh) {
    Mlp net(layer_sizes, activation, transform);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer_sizes[l]));
        auto w = net.weights(l);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    return net;
}

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t n, double learning_rate)
        : first_moment(n, 0.0), second_moment(n, 0.0), lr(learning_rate) {}

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// In-place Adam update with bias correction.
inline void adam_apply(std::span<double> params, std::span<const double> grads, AdamState& state) {
    if (grads.size() != params.size()) throw ShapeError("adam gradient length", params.size(), grads.size());
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
        throw ShapeError("adam moment length", params.size(), state.first_moment.size());
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        params[i] -= state.lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
    }
}

inline ParamVector adam_step(const ParamVector& params, const ParamVector& grads, AdamState& state) {
    if (grads.size() != params.size()) throw ShapeError("adam gradient length", params.size(), grads.size());
    ParamVector out = params;
    adam_apply(out.values, grads.values, state);
    return out;
}

/// target <- tau * online + (1 - tau) * target, elementwise.
inline void polyak_update(Mlp& target, const Mlp& online, double tau) {
    if (!target.same_architecture(online)) throw ShapeError("polyak_update: architecture mismatch");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau must lie in [0, 1]");
    auto dst = target.params();
    auto src = online.params();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau * src[i] + (1.0 - tau) * dst[i];
}

/// Parameter-only copy. Optimizer state belonging to `dst` is left alone.
inline void hard_copy(Mlp& dst, const Mlp& src) {
    if (!dst.same_architecture(src)) throw ShapeError("hard_copy: architecture mismatch");
    std::copy(src.params().begin(), src.params().end(), dst.params().begin());
}

// ---------------------------------------------------------------------------
// Snapshot documents

inline nlohmann::ordered_json to_json(const Mlp& net) {
    nlohmann::ordered_json transform;
    if (net.output_transform().kind == OutputTransform::Kind::Bounded) {
        transform["kind"] = "bounded";
        transform["scale"] = net.output_transform().scale;
    } else {
        transform["kind"] = "identity";
    }
    nlohmann::ordered_json doc;
    doc["format_version"] = 1;
    doc["layer_sizes"] = net.layer_sizes();
    doc["activation"] = to_string(net.activation());
    doc["output_transform"] = transform;
    doc["params"] = std::vector<double>(net.params().begin(), net.params().end());
    return doc;
}

inline Mlp mlp_from_json(const nlohmann::ordered_json& doc) {
    try {
        if (doc.at("format_version").get<int>() != 1)
            throw FormatError("unsupported snapshot format_version " + doc.at("format_version").dump());
        auto sizes = doc.at("layer_sizes").get<std::vector<std::size_t>>();
        auto activation = activation_from_string(doc.at("activation").get<std::string>());
        const auto& t = doc.at("output_transform");
        OutputTransform transform;
        const auto kind = t.at("kind").get<std::string>();
        if (kind == "bounded") {
            transform = OutputTransform::bounded(t.at("scale").get<double>());
        } else if (kind != "identity") {
            throw FormatError("unknown output transform '" + kind + "'");
        }
        Mlp net(std::move(sizes), activation, transform);
        auto values = doc.at("params").get<std::vector<double>>();
        if (values.size() != net.param_count())
            throw FormatError("snapshot has " + std::to_string(values.size()) + " params, layout needs " +
                              std::to_string(net.param_count()));
        std::copy(values.begin(), values.end(), net.params().begin());
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed network snapshot: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("invalid network snapshot: ") + e.what());
    }
}

}  // namespace oparl
