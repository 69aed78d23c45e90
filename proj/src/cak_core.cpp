#include "cak/cak_core.hpp"

#include "cak/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace cak {

std::size_t EffectParams::learnable_count() const
{
    std::size_t n = 0;
    for (const ad::Tensor* t : learnable()) n += t->size();
    return n;
}

void GateSchedule::validate() const
{
    if (!(temp_start > 0.0) || !(temp_start <= temp_end))
        throw Error(ErrorCode::InvalidArgument, "gate schedule needs 0 < temp_start <= temp_end");
    if (total_epochs < 1) throw Error(ErrorCode::InvalidArgument, "gate schedule needs total_epochs >= 1");
}

double temperature_at(int epoch, const GateSchedule& schedule)
{
    schedule.validate();
    if (epoch < 1 || epoch > schedule.total_epochs)
        throw Error(ErrorCode::EpochOutOfRange, "epoch " + std::to_string(epoch) + " outside 1.." +
                                                    std::to_string(schedule.total_epochs));
    if (schedule.total_epochs == 1) return schedule.temp_end;
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(schedule.total_epochs - 1);
    return schedule.temp_start + (schedule.temp_end - schedule.temp_start) * progress;
}

EffectParams init_params(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    EffectParams p;
    for (double& w : p.kernel.data) w = normal(rng);
    return p;
}

double clamp_control(double c)
{
    if (std::isnan(c)) throw Error(ErrorCode::InvalidArgument, "control value is NaN");
    return std::clamp(c, 0.0, 1.0);
}

double soft_gate(double c, const EffectParams& params)
{
    return 1.0 / (1.0 + std::exp(-(c - params.tau) * params.temperature));
}

double gate_factor(double c, const EffectParams& params)
{
    c = clamp_control(c);
    return c * soft_gate(c, params);
}

Grid detect(const Grid& x, const EffectParams& params)
{
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Grid out(rows, cols, params.bias_value());
    for (std::size_t ki = 0; ki < 3; ++ki) {
        for (std::size_t kj = 0; kj < 3; ++kj) {
            const double k = params.weight(ki, kj);
            if (k == 0.0) continue;
            for (std::size_t r = 0; r < rows; ++r) {
                const std::ptrdiff_t src_r = static_cast<std::ptrdiff_t>(r + ki) - 1;
                if (src_r < 0 || src_r >= static_cast<std::ptrdiff_t>(rows)) continue;
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::ptrdiff_t src_c = static_cast<std::ptrdiff_t>(c + kj) - 1;
                    if (src_c < 0 || src_c >= static_cast<std::ptrdiff_t>(cols)) continue;
                    out(r, c) += k * x(static_cast<std::size_t>(src_r), static_cast<std::size_t>(src_c));
                }
            }
        }
    }
    return out;
}

Grid cak_forward(const Grid& x, double c, const EffectParams& params)
{
    const double factor = gate_factor(c, params);
    const double s = params.scale_value();
    Grid y = detect(x, params);
    auto& yv = y.storage();
    const auto& xv = x.storage();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] + yv[i] * factor * s;
    return y;
}

spectral::MagnitudeSpectrogram cak_apply(const spectral::MagnitudeSpectrogram& x, double c,
                                         const EffectParams& params)
{
    spectral::MagnitudeSpectrogram y{cak_forward(x.mag, c, params), x.config};
    for (double& v : y.mag.storage()) v = std::max(v, 0.0);
    return y;
}

EffectVars make_effect_vars(const EffectParams& params, bool requires_grad)
{
    return EffectVars{ad::Var(params.kernel, requires_grad), ad::Var(params.bias, requires_grad),
                      ad::Var(params.scale, requires_grad), params.tau, params.temperature};
}

ad::Tensor to_tensor(const Grid& g)
{
    return ad::Tensor(ad::Shape{1, g.rows(), g.cols()}, g.storage());
}

Grid to_grid(const ad::Tensor& t)
{
    if (t.shape.size() != 3 || t.shape[0] != 1)
        throw Error(ErrorCode::ShapeMismatch, "expected a {1,H,W} tensor, got " + ad::shape_string(t.shape));
    return Grid(t.shape[1], t.shape[2], t.data);
}

ad::Var detect(const ad::Var& x, const EffectVars& effect)
{
    return ad::add_channel_bias(ad::conv2d(x, effect.kernel, 1), effect.bias);
}

ad::Var cak_forward(const ad::Var& x, double c, const EffectVars& effect)
{
    EffectParams gate;
    gate.tau = effect.tau;
    gate.temperature = effect.temperature;
    const double factor = gate_factor(c, gate);
    // Same evaluation order as the grid path: x + (D * factor) * s.
    const ad::Var residual = ad::scale(ad::mul_const(detect(x, effect), factor), effect.scale);
    return ad::add(x, residual);
}

} // namespace cak
