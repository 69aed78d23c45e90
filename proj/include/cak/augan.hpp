#pragma once

// Audit-game objective: a critic that scores (x, c), the control-compliance
// violation measured with the shared detector, the WGAN gradient penalty, and
// the critic and generator losses built from them.

#include "cak/cak_core.hpp"
#include "cak/diffmath.hpp"
#include "cak/training_pair.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cak::augan {

struct CriticConfig {
    std::vector<std::size_t> channels{16, 32, 64};  ///< 3x3 stride-2 conv widths
    std::size_t hidden = 32;                        ///< width of the fused dense layer
    double leak = 0.2;

    friend bool operator==(const CriticConfig&, const CriticConfig&) = default;
};

/// Critic weights. The detector is not duplicated here: the critic reads the
/// effect's detector output as its second input channel.
struct CriticParams {
    CriticConfig config;
    std::vector<ad::Tensor> conv_w;  ///< {out, in, 3, 3}
    std::vector<ad::Tensor> conv_b;  ///< {out}
    ad::Tensor fuse_w;               ///< {hidden, channels.back() + 1}
    ad::Tensor fuse_b;               ///< {hidden}
    ad::Tensor head_w;               ///< {1, hidden}
    ad::Tensor head_b;               ///< {1}

    std::vector<ad::Tensor*> tensors();
    std::vector<const ad::Tensor*> tensors() const;
    std::size_t parameter_count() const;

    friend bool operator==(const CriticParams&, const CriticParams&) = default;
};

CriticParams init_critic(const CriticConfig& config, std::uint64_t seed);

struct CriticVars {
    std::vector<ad::Var> conv_w;
    std::vector<ad::Var> conv_b;
    ad::Var fuse_w, fuse_b, head_w, head_b;
    double leak = 0.2;

    std::vector<ad::Var> all() const;
};

CriticVars make_critic_vars(const CriticParams& params, bool requires_grad);

struct LossWeights {
    double gp = 10.0;
    double comp = 2.0;
    double recon = 5.0;
    double reg = 0.01;
    double reg_eps = 1e-8;

    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Batch means of every term. reg_term is E[log(eps + mean|D(x_in)|)] before
/// its (negative) weight; recon_term is the per-cell mean |x_fake - x_real|
/// averaged over the batch.
struct BatchLosses {
    double critic_total = 0.0;
    double generator_total = 0.0;
    double wasserstein_estimate = 0.0;  ///< E[C(real)] - E[C(fake)]
    double real_score_mean = 0.0;
    double fake_score_mean = 0.0;
    double gp_term = 0.0;
    double violation_mean = 0.0;
    double recon_term = 0.0;
    double reg_term = 0.0;
};

/// Signed mean of D(x).
double measured_texture(const Grid& x, const EffectParams& effect);
ad::Var measured_texture(const ad::Var& x, const EffectVars& effect);

/// |measured_texture(x) - c|
double violation(const Grid& x, double c, const EffectParams& effect);
ad::Var violation(const ad::Var& x, double c, const EffectVars& effect);

/// Score for x {1,H,W} at control c. Input channels are [x, D(x)].
ad::Var critic_forward(const ad::Var& x, double c, const CriticVars& critic, const EffectVars& effect);
double critic_forward(const Grid& x, double c, const CriticParams& critic, const EffectParams& effect);

using CriticFn = std::function<ad::Var(const ad::Var& x)>;

/// (||grad_x f(x_hat)||_2 - 1)^2 at x_hat = u * x_real + (1 - u) * x_fake.
/// The result stays differentiable w.r.t. everything f closes over.
ad::Var gradient_penalty(const CriticFn& critic, const ad::Tensor& x_real, const ad::Tensor& x_fake, double u);

struct LossGraph {
    ad::Var total;
    BatchLosses parts;
};

/// L_C = -E[C(x_real,c)] + E[C(x_fake,c)] + gp * GP + comp * E[V(x_fake,c)].
/// x_fake = cak_forward(x_in, c) enters as a constant; the detector still
/// receives gradient through the critic's D(x) channel, GP and V.
/// `interpolation` holds one u in [0,1] per pair.
LossGraph critic_loss_graph(std::span<const TrainingPair> batch, const CriticVars& critic,
                            const EffectVars& effect, const LossWeights& weights,
                            std::span<const double> interpolation);

/// L_G = -E[C(x_fake,c)] + comp * E[V(x_fake,c)] + recon * E[mean|x_fake - x_real|]
///       - reg * E[log(eps + mean|D(x_in)|)].
LossGraph generator_loss_graph(std::span<const TrainingPair> batch, const CriticVars& critic,
                               const EffectVars& effect, const LossWeights& weights);

BatchLosses critic_loss(std::span<const TrainingPair> batch, const CriticParams& critic, const EffectParams& effect,
                        const LossWeights& weights, std::span<const double> interpolation);
BatchLosses generator_loss(std::span<const TrainingPair> batch, const CriticParams& critic,
                           const EffectParams& effect, const LossWeights& weights);

} // namespace cak::augan
