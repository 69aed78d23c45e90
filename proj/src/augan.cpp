#include "cak/augan.hpp"

#include "cak/error.hpp"

#include <cmath>
#include <random>
#include <string>

namespace cak::augan {

namespace {

ad::Tensor normal_tensor(ad::Shape shape, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, stddev);
    ad::Tensor t(std::move(shape), 0.0);
    for (double& v : t.data) v = normal(rng);
    return t;
}

ad::Var batch_mean(const std::vector<ad::Var>& terms)
{
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::mul_const(acc, 1.0 / static_cast<double>(terms.size()));
}

void check_batch(std::span<const TrainingPair> batch)
{
    if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "loss evaluated on an empty batch");
    for (const auto& pair : batch)
        if (!pair.x_in.mag.same_shape(pair.x_real.mag) || pair.x_in.mag.empty())
            throw Error(ErrorCode::ShapeMismatch, "training pair spectrograms differ in shape or are empty");
}

ad::Var as_const(const spectral::MagnitudeSpectrogram& m) { return ad::constant(to_tensor(m.mag)); }

void require_finite(const BatchLosses& l, const char* what)
{
    for (double v : {l.critic_total, l.generator_total, l.wasserstein_estimate, l.gp_term, l.violation_mean,
                     l.recon_term, l.reg_term})
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, std::string(what) + " produced a non-finite term");
}

} // namespace

std::vector<ad::Tensor*> CriticParams::tensors()
{
    std::vector<ad::Tensor*> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.push_back(&conv_w[i]);
        out.push_back(&conv_b[i]);
    }
    for (ad::Tensor* t : {&fuse_w, &fuse_b, &head_w, &head_b}) out.push_back(t);
    return out;
}

std::vector<const ad::Tensor*> CriticParams::tensors() const
{
    std::vector<const ad::Tensor*> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.push_back(&conv_w[i]);
        out.push_back(&conv_b[i]);
    }
    for (const ad::Tensor* t : {&fuse_w, &fuse_b, &head_w, &head_b}) out.push_back(t);
    return out;
}

std::size_t CriticParams::parameter_count() const
{
    std::size_t n = 0;
    for (const ad::Tensor* t : tensors()) n += t->size();
    return n;
}

CriticParams init_critic(const CriticConfig& config, std::uint64_t seed)
{
    if (config.channels.empty() || config.hidden == 0)
        throw Error(ErrorCode::InvalidArgument, "critic needs at least one conv layer and a hidden width");
    std::mt19937_64 rng(seed);
    CriticParams p;
    p.config = config;
    std::size_t in = 2;  // x and D(x)
    for (std::size_t out : config.channels) {
        p.conv_w.push_back(normal_tensor({out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(9 * in)), rng));
        p.conv_b.emplace_back(ad::Shape{out}, 0.0);
        in = out;
    }
    const std::size_t fused = config.channels.back() + 1;
    p.fuse_w = normal_tensor({config.hidden, fused}, std::sqrt(2.0 / static_cast<double>(fused)), rng);
    p.fuse_b = ad::Tensor(ad::Shape{config.hidden}, 0.0);
    p.head_w = normal_tensor({1, config.hidden}, std::sqrt(1.0 / static_cast<double>(config.hidden)), rng);
    p.head_b = ad::Tensor(ad::Shape{1}, 0.0);
    return p;
}

std::vector<ad::Var> CriticVars::all() const
{
    std::vector<ad::Var> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.push_back(conv_w[i]);
        out.push_back(conv_b[i]);
    }
    for (const ad::Var& v : {fuse_w, fuse_b, head_w, head_b}) out.push_back(v);
    return out;
}

CriticVars make_critic_vars(const CriticParams& params, bool requires_grad)
{
    CriticVars v;
    for (std::size_t i = 0; i < params.conv_w.size(); ++i) {
        v.conv_w.emplace_back(params.conv_w[i], requires_grad);
        v.conv_b.emplace_back(params.conv_b[i], requires_grad);
    }
    v.fuse_w = ad::Var(params.fuse_w, requires_grad);
    v.fuse_b = ad::Var(params.fuse_b, requires_grad);
    v.head_w = ad::Var(params.head_w, requires_grad);
    v.head_b = ad::Var(params.head_b, requires_grad);
    v.leak = params.config.leak;
    return v;
}

void LossWeights::validate() const
{
    for (double w : {gp, comp, recon, reg, reg_eps})
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "loss weights must be >= 0");
}

double measured_texture(const Grid& x, const EffectParams& effect)
{
    const Grid d = detect(x, effect);
    double acc = 0.0;
    for (double v : d.storage()) acc += v;
    return acc / static_cast<double>(d.size());
}

ad::Var measured_texture(const ad::Var& x, const EffectVars& effect) { return ad::mean(detect(x, effect)); }

double violation(const Grid& x, double c, const EffectParams& effect)
{
    return std::fabs(measured_texture(x, effect) - c);
}

ad::Var violation(const ad::Var& x, double c, const EffectVars& effect)
{
    return ad::abs(ad::add_const(measured_texture(x, effect), -c));
}

ad::Var critic_forward(const ad::Var& x, double c, const CriticVars& critic, const EffectVars& effect)
{
    ad::Var h = ad::concat(x, detect(x, effect));
    for (std::size_t i = 0; i < critic.conv_w.size(); ++i)
        h = ad::leaky_relu(ad::add_channel_bias(ad::conv2d(h, critic.conv_w[i], 2), critic.conv_b[i]), critic.leak);
    const ad::Var pooled = ad::global_mean_pool(h);
    const ad::Var fused = ad::concat(pooled, ad::constant(ad::Tensor(ad::Shape{1}, c)));
    const ad::Var hidden = ad::leaky_relu(ad::affine(critic.fuse_w, critic.fuse_b, fused), critic.leak);
    return ad::reshape(ad::affine(critic.head_w, critic.head_b, hidden), ad::Shape{});
}

double critic_forward(const Grid& x, double c, const CriticParams& critic, const EffectParams& effect)
{
    ad::NoGradGuard guard;
    return critic_forward(ad::constant(to_tensor(x)), c, make_critic_vars(critic, false),
                          make_effect_vars(effect, false))
        .item();
}

ad::Var gradient_penalty(const CriticFn& critic, const ad::Tensor& x_real, const ad::Tensor& x_fake, double u)
{
    if (x_real.shape != x_fake.shape) throw Error(ErrorCode::ShapeMismatch, "gradient_penalty: shapes differ");
    if (!ad::grad_enabled())
        throw Error(ErrorCode::InvalidArgument, "gradient_penalty needs gradient recording enabled");
    ad::Tensor mixed(x_real.shape, 0.0);
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed.data[i] = u * x_real.data[i] + (1.0 - u) * x_fake.data[i];
    const ad::Var x_hat = ad::parameter(std::move(mixed));
    const ad::Var score = critic(x_hat);
    const std::vector<ad::Var> wrt{x_hat};
    const ad::Var g = ad::grad(score, wrt, true).front();
    return ad::square(ad::add_const(ad::l2_norm(g), -1.0));
}

LossGraph critic_loss_graph(std::span<const TrainingPair> batch, const CriticVars& critic,
                            const EffectVars& effect, const LossWeights& weights,
                            std::span<const double> interpolation)
{
    check_batch(batch);
    weights.validate();
    if (interpolation.size() != batch.size())
        throw Error(ErrorCode::InvalidArgument, "one interpolation coefficient per pair is required");

    std::vector<ad::Var> real_scores, fake_scores, penalties, violations;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TrainingPair& pair = batch[i];
        ad::Tensor fake;
        {
            ad::NoGradGuard guard;
            fake = cak_forward(as_const(pair.x_in), pair.c, effect).value();
        }
        const ad::Var x_real = as_const(pair.x_real);
        const ad::Var x_fake = ad::constant(fake);
        const double c = pair.c;
        real_scores.push_back(critic_forward(x_real, c, critic, effect));
        fake_scores.push_back(critic_forward(x_fake, c, critic, effect));
        penalties.push_back(gradient_penalty(
            [&](const ad::Var& x) { return critic_forward(x, c, critic, effect); }, x_real.value(), fake,
            interpolation[i]));
        violations.push_back(violation(x_fake, c, effect));
    }

    const ad::Var real = batch_mean(real_scores);
    const ad::Var fake = batch_mean(fake_scores);
    const ad::Var gp = batch_mean(penalties);
    const ad::Var v = batch_mean(violations);
    const ad::Var total = ad::add(ad::add(ad::sub(fake, real), ad::mul_const(gp, weights.gp)),
                                  ad::mul_const(v, weights.comp));

    LossGraph out;
    out.total = total;
    out.parts.critic_total = total.item();
    out.parts.real_score_mean = real.item();
    out.parts.fake_score_mean = fake.item();
    out.parts.wasserstein_estimate = real.item() - fake.item();
    out.parts.gp_term = gp.item();
    out.parts.violation_mean = v.item();
    require_finite(out.parts, "critic loss");
    return out;
}

LossGraph generator_loss_graph(std::span<const TrainingPair> batch, const CriticVars& critic,
                               const EffectVars& effect, const LossWeights& weights)
{
    check_batch(batch);
    weights.validate();

    std::vector<ad::Var> fake_scores, violations, recons, regs;
    for (const TrainingPair& pair : batch) {
        const ad::Var x_in = as_const(pair.x_in);
        const ad::Var x_real = as_const(pair.x_real);
        const ad::Var x_fake = cak_forward(x_in, pair.c, effect);
        fake_scores.push_back(critic_forward(x_fake, pair.c, critic, effect));
        violations.push_back(violation(x_fake, pair.c, effect));
        recons.push_back(ad::mean(ad::abs(ad::sub(x_fake, x_real))));
        regs.push_back(ad::log(ad::add_const(ad::mean(ad::abs(detect(x_in, effect))), weights.reg_eps)));
    }

    const ad::Var fake = batch_mean(fake_scores);
    const ad::Var v = batch_mean(violations);
    const ad::Var recon = batch_mean(recons);
    const ad::Var reg = batch_mean(regs);
    const ad::Var total =
        ad::sub(ad::add(ad::add(ad::neg(fake), ad::mul_const(v, weights.comp)), ad::mul_const(recon, weights.recon)),
                ad::mul_const(reg, weights.reg));

    LossGraph out;
    out.total = total;
    out.parts.generator_total = total.item();
    out.parts.fake_score_mean = fake.item();
    out.parts.violation_mean = v.item();
    out.parts.recon_term = recon.item();
    out.parts.reg_term = reg.item();
    require_finite(out.parts, "generator loss");
    return out;
}

BatchLosses critic_loss(std::span<const TrainingPair> batch, const CriticParams& critic, const EffectParams& effect,
                        const LossWeights& weights, std::span<const double> interpolation)
{
    return critic_loss_graph(batch, make_critic_vars(critic, false), make_effect_vars(effect, false), weights,
                             interpolation)
        .parts;
}

BatchLosses generator_loss(std::span<const TrainingPair> batch, const CriticParams& critic,
                           const EffectParams& effect, const LossWeights& weights)
{
    ad::NoGradGuard guard;
    return generator_loss_graph(batch, make_critic_vars(critic, false), make_effect_vars(effect, false), weights)
        .parts;
}

} // namespace cak::augan
