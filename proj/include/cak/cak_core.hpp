#pragma once

#include "cak/diffmath.hpp"
#include "cak/grid.hpp"
#include "cak/spectral.hpp"

#include <array>
#include <cstdint>

namespace cak {

/// The effect: a 3x3 detector (kernel + bias), a learned output scale, and
/// the fixed gate threshold plus the scheduled gate temperature.
///
/// Kernel layout is row-major {1, 1, 3, 3}. Row index is the frequency offset
/// (row 0 reads bin f-1), column index is the time offset (column 2 reads
/// frame t+1). The detector is a cross-correlation with zero padding.
struct EffectParams {
    ad::Tensor kernel{ad::Shape{1, 1, 3, 3}, 0.0};
    ad::Tensor bias{ad::Shape{1}, 0.0};
    ad::Tensor scale = ad::Tensor::scalar(1.0);
    double tau = 0.3;
    double temperature = 2.0;

    double weight(std::size_t row, std::size_t col) const { return kernel.data[row * 3 + col]; }
    double& weight(std::size_t row, std::size_t col) { return kernel.data[row * 3 + col]; }
    double bias_value() const { return bias.data[0]; }
    double scale_value() const { return scale.data[0]; }

    /// The tensors an optimizer may update: kernel, bias, scale. tau and
    /// temperature are never part of this list.
    std::array<ad::Tensor*, 3> learnable() { return {&kernel, &bias, &scale}; }
    std::array<const ad::Tensor*, 3> learnable() const { return {&kernel, &bias, &scale}; }
    std::size_t learnable_count() const;

    friend bool operator==(const EffectParams&, const EffectParams&) = default;
};

/// Linear temperature ramp across training epochs.
struct GateSchedule {
    double temp_start = 2.0;
    double temp_end = 20.0;
    int total_epochs = 100;

    void validate() const;
    friend bool operator==(const GateSchedule&, const GateSchedule&) = default;
};

/// temp_start + (temp_end - temp_start) * (epoch - 1) / (total_epochs - 1);
/// a single-epoch schedule returns temp_end. Throws EpochOutOfRange.
double temperature_at(int epoch, const GateSchedule& schedule);

/// Kernel ~ N(0, 0.1^2), bias 0, scale 1.
EffectParams init_params(std::uint64_t seed);

/// Controls live in [0, 1]; out-of-range values are clamped, NaN rejected.
double clamp_control(double c);

/// sigmoid((c - tau) * temperature)
double soft_gate(double c, const EffectParams& params);

/// c * soft_gate(c): the factor multiplying s * D(x). Exactly 0 at c = 0.
double gate_factor(double c, const EffectParams& params);

Grid detect(const Grid& x, const EffectParams& params);

/// y = x + D(x) * c * sigma(c) * s with no output clamp (c is clamped to [0,1]).
Grid cak_forward(const Grid& x, double c, const EffectParams& params);

/// cak_forward followed by the reconstruction clamp y >= 0.
spectral::MagnitudeSpectrogram cak_apply(const spectral::MagnitudeSpectrogram& x, double c,
                                         const EffectParams& params);

/// Graph-side view of the effect for loss evaluation.
struct EffectVars {
    ad::Var kernel;
    ad::Var bias;
    ad::Var scale;
    double tau = 0.3;
    double temperature = 2.0;
};

EffectVars make_effect_vars(const EffectParams& params, bool requires_grad);

/// Grid <-> {1, H, W} tensor.
ad::Tensor to_tensor(const Grid& g);
Grid to_grid(const ad::Tensor& t);

/// D(x) on a {1, H, W} value.
ad::Var detect(const ad::Var& x, const EffectVars& effect);

/// Differentiable cak_forward (unclamped) on a {1, H, W} value.
ad::Var cak_forward(const ad::Var& x, double c, const EffectVars& effect);

} // namespace cak
