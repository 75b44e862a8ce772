#pragma once
// Combined segmentation cost: loss = w_ce * CE + w_dice * (1 - softDice).
// CE is the mean per-pixel cross-entropy over all classes; softDice is
// computed on the foreground channel (class 1) over the whole batch:
//   softDice = (2 * sum(p_fg * t_fg) + eps) / (sum(p_fg) + sum(t_fg) + eps).
// Targets may be hard one-hot maps (labeled data) or soft probability maps
// (pseudo labels); both terms consume them unchanged.
//
// The default weights are 0.5/0.5 ("equal weights"); an unnormalized 1.0/1.0
// variant differs only by a constant gradient scale and is selectable via
// TrainConfig.

#include <cmath>
#include <stdexcept>

#include "ensembleseg/tensor.hpp"

namespace eseg {

inline constexpr double kLossProbFloor = 1e-7;  // log clamp
inline constexpr double kDiceEpsilon = 1e-6;
inline constexpr int kForegroundChannel = 1;

struct LossBreakdown {
    double total = 0.0;
    double cross_entropy = 0.0;
    double dice_term = 0.0;  // w_dice * (1 - softDice)
    double soft_dice = 0.0;
};

namespace detail {

template <class T>
void check_loss_shapes(const Tensor4<T>& probs, const Tensor4<T>& target) {
    if (probs.n != target.n || probs.c != target.c || probs.h != target.h ||
        probs.w != target.w) {
        throw std::invalid_argument("loss: prediction and target shapes disagree");
    }
    if (probs.c < 2) throw std::invalid_argument("loss: need at least two class channels");
}

}  // namespace detail

template <class T>
LossBreakdown combined_loss(const Tensor4<T>& probs, const Tensor4<T>& target,
                            double ce_weight = 0.5, double dice_weight = 0.5) {
    detail::check_loss_shapes(probs, target);
    const std::size_t plane = probs.plane();
    const double pixel_count = double(probs.n) * plane;

    double ce = 0.0, inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int s = 0; s < probs.n; ++s) {
        const T* ps = probs.sample(s);
        const T* ts = target.sample(s);
        for (int c = 0; c < probs.c; ++c) {
            const T* prow = ps + c * plane;
            const T* trow = ts + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double t = double(trow[j]);
                if (t != 0.0) ce -= t * std::log(std::max(double(prow[j]), kLossProbFloor));
            }
        }
        const T* pfg = ps + kForegroundChannel * plane;
        const T* tfg = ts + kForegroundChannel * plane;
        for (std::size_t j = 0; j < plane; ++j) {
            inter += double(pfg[j]) * double(tfg[j]);
            psum += double(pfg[j]);
            tsum += double(tfg[j]);
        }
    }
    LossBreakdown out;
    out.cross_entropy = ce / pixel_count;
    out.soft_dice = (2.0 * inter + kDiceEpsilon) / (psum + tsum + kDiceEpsilon);
    out.dice_term = dice_weight * (1.0 - out.soft_dice);
    out.total = ce_weight * out.cross_entropy + out.dice_term;
    return out;
}

// Gradient of the combined loss with respect to the pre-softmax logits:
// first dL/dp per class, then the softmax jacobian per pixel.
template <class T>
LossBreakdown combined_loss_backward(const Tensor4<T>& probs, const Tensor4<T>& target,
                                     Tensor4<T>& dlogits, double ce_weight = 0.5,
                                     double dice_weight = 0.5) {
    const LossBreakdown breakdown = combined_loss(probs, target, ce_weight, dice_weight);
    detail::check_loss_shapes(probs, target);
    dlogits = Tensor4<T>(probs.n, probs.c, probs.h, probs.w);

    const std::size_t plane = probs.plane();
    const double pixel_count = double(probs.n) * plane;

    // softDice = (2A + eps) / (B + eps); d/dp_fg = (2t(B+eps) - (2A+eps)) / (B+eps)^2
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int s = 0; s < probs.n; ++s) {
        const T* pfg = probs.sample(s) + kForegroundChannel * plane;
        const T* tfg = target.sample(s) + kForegroundChannel * plane;
        for (std::size_t j = 0; j < plane; ++j) {
            inter += double(pfg[j]) * double(tfg[j]);
            psum += double(pfg[j]);
            tsum += double(tfg[j]);
        }
    }
    const double numer = 2.0 * inter + kDiceEpsilon;
    const double denom = psum + tsum + kDiceEpsilon;

    std::vector<double> g(probs.c);
    for (int s = 0; s < probs.n; ++s) {
        const T* ps = probs.sample(s);
        const T* ts = target.sample(s);
        T* ds = dlogits.sample(s);
        for (std::size_t j = 0; j < plane; ++j) {
            double gdotp = 0.0;
            for (int c = 0; c < probs.c; ++c) {
                const double p = double(ps[c * plane + j]);
                const double t = double(ts[c * plane + j]);
                double gc = 0.0;
                if (t != 0.0 && p >= kLossProbFloor) gc -= ce_weight * t / p / pixel_count;
                if (c == kForegroundChannel) {
                    const double ddice = (2.0 * t * denom - numer) / (denom * denom);
                    gc -= dice_weight * ddice;
                }
                g[c] = gc;
                gdotp += gc * p;
            }
            for (int c = 0; c < probs.c; ++c) {
                const double p = double(ps[c * plane + j]);
                ds[c * plane + j] = static_cast<T>(p * (g[c] - gdotp));
            }
        }
    }
    return breakdown;
}

}  // namespace eseg
