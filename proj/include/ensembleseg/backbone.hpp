#pragma once
// Residual U-Net: `depth` encoder levels of residual blocks (two 3x3
// convolutions with an identity shortcut, or a 1x1 projection when channel
// counts differ) joined by 2x max pooling, a mirrored decoder with learned
// 2x up-convolutions and skip concatenations, and a final 1x1 convolution
// into per-pixel softmax class probabilities. Feature counts double per
// encoder level from root_features and halve in the decoder.

#include <memory>
#include <optional>
#include <stdexcept>

#include "ensembleseg/tensor.hpp"
#include "ensembleseg/types.hpp"

namespace eseg {

struct BackboneConfig {
    int depth = 5;
    int root_features = 16;
    int classes = 2;
    double dropout_rate = 0.25;
    int input_size = 128;  // square inputs
    int in_channels = 3;

    void validate() const {
        if (depth < 1) throw std::invalid_argument("backbone: depth must be >= 1");
        if (root_features < 1) throw std::invalid_argument("backbone: root_features must be >= 1");
        if (classes < 2) throw std::invalid_argument("backbone: classes must be >= 2");
        if (in_channels != 1 && in_channels != 3) {
            throw std::invalid_argument("backbone: in_channels must be 1 or 3");
        }
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw std::invalid_argument("backbone: dropout_rate must lie in [0, 1)");
        }
        const int factor = 1 << (depth - 1);
        if (input_size <= 0 || input_size % factor != 0) {
            throw std::invalid_argument("backbone: input_size " + std::to_string(input_size) +
                                        " is not divisible by 2^(depth-1) = " +
                                        std::to_string(factor));
        }
    }
};

template <class T>
struct ResBlock {
    Conv2d<T> conv1, conv2;
    std::optional<Conv2d<T>> proj;  // 1x1 shortcut when in != out channels

    void configure(const std::string& name, int in, int out) {
        conv1.configure(name + ".conv1", in, out, 3, 1);
        conv2.configure(name + ".conv2", out, out, 3, 1);
        if (in != out) {
            proj.emplace();
            proj->configure(name + ".proj", in, out, 1, 0);
        }
    }

    struct Trace {
        Tensor4<T> x;        // block input
        Tensor4<T> t1;       // post-relu output of conv1
        Tensor4<T> y;        // post-relu block output (pre-dropout)
        std::vector<std::uint8_t> dropout_mask;
    };

    Tensor4<T> forward(const Tensor4<T>& x, Trace* trace) const {
        Tensor4<T> t1 = conv1.forward(x);
        relu_inplace(t1);
        Tensor4<T> y = conv2.forward(t1);
        if (proj) {
            const Tensor4<T> s = proj->forward(x);
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
        } else {
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
        }
        relu_inplace(y);
        if (trace) {
            trace->x = x;
            trace->t1 = t1;
            trace->y = y;
        }
        return y;
    }

    Tensor4<T> backward(const Trace& trace, Tensor4<T> dy) {
        relu_backward_inplace(trace.y, dy);
        Tensor4<T> dt1 = conv2.backward(trace.t1, dy);
        relu_backward_inplace(trace.t1, dt1);
        Tensor4<T> dx = conv1.backward(trace.x, dt1);
        if (proj) {
            const Tensor4<T> ds = proj->backward(trace.x, dy);
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
        } else {
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
        }
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&conv1.weight);
        out.push_back(&conv1.bias);
        out.push_back(&conv2.weight);
        out.push_back(&conv2.bias);
        if (proj) {
            out.push_back(&proj->weight);
            out.push_back(&proj->bias);
        }
    }

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        if (proj) proj->init(rng);
    }
};

// Retained activations of one training-mode forward pass.
template <class T>
struct BackboneTape {
    std::vector<typename ResBlock<T>::Trace> enc_traces;
    std::vector<Tensor4<T>> enc_outputs;  // post-dropout block outputs (skip sources)
    std::vector<std::vector<std::int32_t>> pool_argmax;
    std::vector<Tensor4<T>> up_inputs;    // decoder stage inputs (pre-upconv)
    std::vector<Tensor4<T>> concat;       // concatenated decoder block inputs
    std::vector<typename ResBlock<T>::Trace> dec_traces;
    std::vector<std::vector<std::uint8_t>> enc_dropout, dec_dropout;
    Tensor4<T> head_input;
    Tensor4<T> probs;
    bool training = false;
};

template <class T>
class Backbone {
public:
    explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int depth = cfg_.depth;
        enc_.resize(depth);
        for (int d = 0; d < depth; ++d) {
            const int in = d == 0 ? cfg_.in_channels : features(d - 1);
            enc_[d].configure("enc" + std::to_string(d), in, features(d));
        }
        up_.resize(depth - 1);
        dec_.resize(depth - 1);
        for (int d = depth - 2; d >= 0; --d) {
            up_[d].configure("dec" + std::to_string(d) + ".up", features(d + 1), features(d));
            dec_[d].configure("dec" + std::to_string(d), 2 * features(d), features(d));
        }
        head_.configure("head", features(0), cfg_.classes, 1, 0);
    }

    const BackboneConfig& config() const { return cfg_; }

    // The dropout rate is a training-regime property (0.25 for the initial
    // model, 0 for sub-models); the trainer adjusts it without touching the
    // architecture.
    void set_dropout_rate(double rate) {
        if (rate < 0.0 || rate >= 1.0) {
            throw std::invalid_argument("backbone: dropout_rate must lie in [0, 1)");
        }
        cfg_.dropout_rate = rate;
    }

    int features(int level) const { return cfg_.root_features << level; }

    void init_params(Rng& rng) {
        for (auto& b : enc_) b.init(rng);
        for (auto& u : up_) u.init(rng);
        for (auto& b : dec_) b.init(rng);
        head_.init(rng);
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& b : enc_) b.collect(out);
        for (int d = 0; d < cfg_.depth - 1; ++d) {
            out.push_back(&up_[d].weight);
            out.push_back(&up_[d].bias);
            dec_[d].collect(out);
        }
        out.push_back(&head_.weight);
        out.push_back(&head_.bias);
        return out;
    }

    void zero_grad() {
        for (Param<T>* p : params()) p->zero_grad();
    }

    // Training forward keeps the tape for backward(); eval forward (tape ==
    // nullptr, training == false) is const and reentrant. dropout_rng is
    // consumed only when training with a nonzero dropout rate.
    Tensor4<T> forward(const Tensor4<T>& x, bool training, Rng* dropout_rng,
                       BackboneTape<T>* tape) const {
        if (x.c != cfg_.in_channels) {
            throw std::invalid_argument("backbone forward: expected " +
                                        std::to_string(cfg_.in_channels) + " channels, got " +
                                        std::to_string(x.c));
        }
        const int depth = cfg_.depth;
        const bool use_dropout = training && cfg_.dropout_rate > 0.0;
        if (use_dropout && !dropout_rng) {
            throw std::invalid_argument("backbone forward: dropout requires an rng");
        }
        BackboneTape<T> local;
        BackboneTape<T>& t = tape ? *tape : local;
        t = BackboneTape<T>{};
        t.training = training;
        t.enc_traces.resize(depth);
        t.enc_outputs.resize(depth);
        t.pool_argmax.resize(depth - 1);
        t.enc_dropout.resize(depth);
        t.up_inputs.resize(depth - 1);
        t.concat.resize(depth - 1);
        t.dec_traces.resize(depth - 1);
        t.dec_dropout.resize(depth - 1);

        Tensor4<T> cur = x;
        for (int d = 0; d < depth; ++d) {
            cur = enc_[d].forward(cur, tape ? &t.enc_traces[d] : nullptr);
            if (use_dropout) dropout_inplace(cur, cfg_.dropout_rate, *dropout_rng, t.enc_dropout[d]);
            t.enc_outputs[d] = cur;
            if (d < depth - 1) cur = maxpool2(cur, t.pool_argmax[d]);
        }
        for (int d = depth - 2; d >= 0; --d) {
            if (tape) t.up_inputs[d] = cur;
            Tensor4<T> up = up_[d].forward(cur);
            cur = concat_channels(up, t.enc_outputs[d]);
            if (tape) t.concat[d] = cur;
            cur = dec_[d].forward(cur, tape ? &t.dec_traces[d] : nullptr);
            if (use_dropout) dropout_inplace(cur, cfg_.dropout_rate, *dropout_rng, t.dec_dropout[d]);
        }
        if (tape) t.head_input = cur;
        Tensor4<T> logits = head_.forward(cur);
        Tensor4<T> probs = softmax_channels(logits);
        if (tape) t.probs = probs;
        return probs;
    }

    // Backprop from dL/dlogits (the softmax jacobian is folded into the loss
    // gradient). Accumulates into the parameter gradients.
    void backward(const BackboneTape<T>& tape, const Tensor4<T>& dlogits) {
        const int depth = cfg_.depth;
        const bool use_dropout = tape.training && cfg_.dropout_rate > 0.0;
        Tensor4<T> d = head_.backward(tape.head_input, dlogits);

        // Gradient flowing into each encoder block output via skip paths.
        std::vector<Tensor4<T>> dskip(depth);
        for (int d_i = 0; d_i <= depth - 2; ++d_i) {
            if (use_dropout) dropout_backward_inplace(d, cfg_.dropout_rate, tape.dec_dropout[d_i]);
            Tensor4<T> dconcat = dec_[d_i].backward(tape.dec_traces[d_i], std::move(d));
            Tensor4<T> dup, ds;
            split_channels(dconcat, up_[d_i].out_ch, dup, ds);
            dskip[d_i] = std::move(ds);
            d = up_[d_i].backward(tape.up_inputs[d_i], dup);
        }

        for (int d_i = depth - 1; d_i >= 0; --d_i) {
            // d currently holds the gradient at the pooled output of block
            // d_i (or at the bottom block output when d_i == depth-1).
            Tensor4<T> dout;
            if (d_i == depth - 1) {
                dout = std::move(d);
            } else {
                dout = maxpool2_backward(d, tape.pool_argmax[d_i], tape.enc_outputs[d_i].h,
                                         tape.enc_outputs[d_i].w);
            }
            if (d_i <= depth - 2) {
                for (std::size_t i = 0; i < dout.v.size(); ++i) dout.v[i] += dskip[d_i].v[i];
            }
            if (use_dropout) dropout_backward_inplace(dout, cfg_.dropout_rate, tape.enc_dropout[d_i]);
            d = enc_[d_i].backward(tape.enc_traces[d_i], std::move(dout));
        }
    }

    // Reentrant single-image inference. The image must already be
    // preprocessed to the configured input size and channel count.
    ProbMap predict(const RasterImage& image) const {
        if (image.width != cfg_.input_size || image.height != cfg_.input_size ||
            image.channels != cfg_.in_channels) {
            throw std::invalid_argument(
                "predict: image does not match backbone input configuration");
        }
        Tensor4<T> x(1, cfg_.in_channels, image.height, image.width);
        std::copy(image.values.begin(), image.values.end(), x.v.begin());
        const Tensor4<T> probs = forward(x, false, nullptr, nullptr);
        ProbMap map;
        map.width = image.width;
        map.height = image.height;
        map.classes = cfg_.classes;
        map.probs.resize(map.pixel_count() * map.classes);
        const std::size_t plane = probs.plane();
        for (std::size_t j = 0; j < plane; ++j) {
            for (int c = 0; c < cfg_.classes; ++c) {
                map.probs[j * cfg_.classes + c] = static_cast<double>(probs.v[c * plane + j]);
            }
        }
        return map;
    }

private:
    BackboneConfig cfg_;
    std::vector<ResBlock<T>> enc_;
    std::vector<UpConv2x2<T>> up_;
    std::vector<ResBlock<T>> dec_;
    Conv2d<T> head_;
};

// Adaptive-moment gradient descent.
template <class T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Param<T>*>& params) {
        if (state_.empty()) {
            state_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                state_[i].m.assign(params[i]->value.size(), T(0));
                state_[i].v.assign(params[i]->value.size(), T(0));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param<T>& p = *params[i];
            State& s = state_[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double g = double(p.grad[j]);
                const double m = beta1_ * double(s.m[j]) + (1.0 - beta1_) * g;
                const double v = beta2_ * double(s.v[j]) + (1.0 - beta2_) * g * g;
                s.m[j] = static_cast<T>(m);
                s.v[j] = static_cast<T>(v);
                p.value[j] -= static_cast<T>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

private:
    struct State {
        std::vector<T> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<State> state_;
};

}  // namespace eseg
