#include "support.hpp"

#include "cak/augan.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cak::testing {

using ad::Shape;
using ad::Tensor;
using ad::Var;

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi, double min_abs)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape, 0.0);
    for (double& v : t.data) {
        do {
            v = dist(rng);
        } while (std::fabs(v) < min_abs);
    }
    return t;
}

Grid random_grid(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Grid g(rows, cols);
    for (double& v : g.storage()) v = dist(rng);
    return g;
}

std::vector<OpCase> op_cases()
{
    using V = std::vector<Var>;
    std::vector<OpCase> ops;
    auto add = [&](std::string name, std::vector<Shape> shapes, std::function<Var(const V&)> fn) -> OpCase& {
        ops.push_back({std::move(name), std::move(shapes), std::move(fn)});
        return ops.back();
    };

    add("add", {{3, 4}, {3, 4}}, [](const V& v) { return ad::add(v[0], v[1]); });
    add("sub", {{3, 4}, {3, 4}}, [](const V& v) { return ad::sub(v[0], v[1]); });
    add("mul", {{3, 4}, {3, 4}}, [](const V& v) { return ad::mul(v[0], v[1]); });
    auto& div = add("div", {{3, 4}, {3, 4}}, [](const V& v) { return ad::div(v[0], v[1]); });
    div.min_abs = 0.5;
    add("neg", {{3, 4}}, [](const V& v) { return ad::neg(v[0]); });
    add("square", {{3, 4}}, [](const V& v) { return ad::square(v[0]); });
    auto& sig = add("sigmoid", {{3, 4}}, [](const V& v) { return ad::sigmoid(v[0]); });
    sig.lo = -4.0;
    sig.hi = 4.0;
    add("abs", {{3, 4}}, [](const V& v) { return ad::abs(v[0]); });
    auto& log = add("log", {{3, 4}}, [](const V& v) { return ad::log(v[0]); });
    log.lo = 0.2;
    log.hi = 2.0;
    auto& sqrt = add("sqrt", {{3, 4}}, [](const V& v) { return ad::sqrt(v[0]); });
    sqrt.lo = 0.2;
    sqrt.hi = 2.0;
    add("leaky_relu", {{3, 4}}, [](const V& v) { return ad::leaky_relu(v[0], 0.2); });
    add("add_const", {{3, 4}}, [](const V& v) { return ad::add_const(v[0], 0.7); });
    add("mul_const", {{3, 4}}, [](const V& v) { return ad::mul_const(v[0], -1.3); });
    add("scale", {{2, 3}, {}}, [](const V& v) { return ad::scale(v[0], v[1]); });
    add("sum", {{5}}, [](const V& v) { return ad::sum(v[0]); });
    add("mean", {{5}}, [](const V& v) { return ad::mean(v[0]); });
    add("l1_norm", {{5}}, [](const V& v) { return ad::l1_norm(v[0]); });
    add("l2_norm", {{5}}, [](const V& v) { return ad::l2_norm(v[0]); });
    add("broadcast", {{}}, [](const V& v) { return ad::broadcast(v[0], {2, 3}); });
    add("reshape", {{2, 3}}, [](const V& v) { return ad::reshape(v[0], {3, 2}); });
    add("conv2d", {{2, 5, 6}, {3, 2, 3, 3}}, [](const V& v) { return ad::conv2d(v[0], v[1], 1); });
    add("conv2d_stride2", {{2, 7, 6}, {3, 2, 3, 3}}, [](const V& v) { return ad::conv2d(v[0], v[1], 2); });
    add("conv2d_grad_input", {{3, 5, 6}, {3, 2, 3, 3}},
        [](const V& v) { return ad::conv2d_grad_input(v[0], v[1], {2, 5, 6}, 1); });
    add("conv2d_grad_input_stride2", {{3, 4, 3}, {3, 2, 3, 3}},
        [](const V& v) { return ad::conv2d_grad_input(v[0], v[1], {2, 7, 6}, 2); });
    add("conv2d_grad_weight", {{2, 5, 6}, {3, 5, 6}},
        [](const V& v) { return ad::conv2d_grad_weight(v[0], v[1], {3, 2, 3, 3}, 1); });
    add("conv2d_grad_weight_stride2", {{2, 7, 6}, {3, 4, 3}},
        [](const V& v) { return ad::conv2d_grad_weight(v[0], v[1], {3, 2, 3, 3}, 2); });
    add("channel_sum", {{3, 4, 5}}, [](const V& v) { return ad::channel_sum(v[0]); });
    add("channel_broadcast", {{3}}, [](const V& v) { return ad::channel_broadcast(v[0], {3, 4, 5}); });
    add("add_channel_bias", {{3, 4, 5}, {3}}, [](const V& v) { return ad::add_channel_bias(v[0], v[1]); });
    add("global_mean_pool", {{3, 4, 5}}, [](const V& v) { return ad::global_mean_pool(v[0]); });
    add("matvec", {{4, 3}, {3}}, [](const V& v) { return ad::matvec(v[0], v[1]); });
    add("matvec_t", {{4, 3}, {4}}, [](const V& v) { return ad::matvec_t(v[0], v[1]); });
    add("outer", {{4}, {3}}, [](const V& v) { return ad::outer(v[0], v[1]); });
    add("affine", {{4, 3}, {4}, {3}}, [](const V& v) { return ad::affine(v[0], v[1], v[2]); });
    add("concat", {{2, 3, 4}, {1, 3, 4}}, [](const V& v) { return ad::concat(v[0], v[1]); });
    add("slice", {{4, 3}}, [](const V& v) { return ad::slice(v[0], 1, 2); });
    add("pad", {{2, 3}}, [](const V& v) { return ad::pad(v[0], 1, {4, 3}); });
    auto& custom = add("custom_op", {{3, 4}}, [](const V& v) {
        Tensor value = v[0].value();
        for (double& x : value.data) x = x * x * x;
        return ad::custom_op("cube", v[0], std::move(value), [](const Tensor& x, const Tensor& g) {
            Tensor out = g;
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= 3.0 * x.data[i] * x.data[i];
            return out;
        });
    });
    custom.second_order = false;
    return ops;
}

namespace {

std::vector<Tensor> draw_inputs(const OpCase& op, std::mt19937_64& rng)
{
    std::vector<Tensor> xs;
    for (const Shape& s : op.shapes) xs.push_back(random_tensor(s, rng, op.lo, op.hi, op.min_abs));
    return xs;
}

std::vector<Var> as_params(const std::vector<Tensor>& xs)
{
    std::vector<Var> vs;
    for (const Tensor& x : xs) vs.push_back(ad::parameter(x));
    return vs;
}

Var project(const Var& y, const Tensor& r) { return ad::sum(ad::mul(y, ad::constant(r))); }

Tensor flatten(const std::vector<Tensor>& ts)
{
    Tensor out(Shape{0}, 0.0);
    out.data.clear();
    for (const Tensor& t : ts) out.data.insert(out.data.end(), t.data.begin(), t.data.end());
    out.shape = {out.data.size()};
    return out;
}

// Numeric gradient of f over every element of every input.
Tensor numeric_all(const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> xs, double h)
{
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Tensor g(xs[i].shape, 0.0);
        for (std::size_t j = 0; j < xs[i].size(); ++j) {
            const double keep = xs[i].data[j];
            xs[i].data[j] = keep + h;
            const double up = f(xs);
            xs[i].data[j] = keep - h;
            const double down = f(xs);
            xs[i].data[j] = keep;
            g.data[j] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return flatten(grads);
}

std::vector<Tensor> values(const std::vector<Var>& vs)
{
    std::vector<Tensor> out;
    for (const Var& v : vs) out.push_back(v.value());
    return out;
}

} // namespace

double relative_error(const Tensor& a, const Tensor& b)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-10);
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h)
{
    Tensor g = numeric_all([&](const std::vector<Tensor>& xs) { return f(xs[0]); }, {x}, h);
    g.shape = x.shape;
    return g;
}

double first_order_error(const OpCase& op, std::mt19937_64& rng, double h)
{
    const std::vector<Tensor> xs = draw_inputs(op, rng);
    const std::vector<Var> vs = as_params(xs);
    const Var y = op.fn(vs);
    const Tensor r = random_tensor(y.shape(), rng);
    const Tensor analytic = flatten(values(ad::grad(project(y, r), vs)));

    const auto loss = [&](const std::vector<Tensor>& in) {
        ad::NoGradGuard guard;
        std::vector<Var> cs;
        for (const Tensor& t : in) cs.push_back(ad::constant(t));
        return project(op.fn(cs), r).item();
    };
    return relative_error(analytic, numeric_all(loss, xs, h));
}

double second_order_error(const OpCase& op, std::mt19937_64& rng, double h)
{
    const std::vector<Tensor> xs = draw_inputs(op, rng);
    Tensor r;
    {
        ad::NoGradGuard guard;
        std::vector<Var> cs;
        for (const Tensor& t : xs) cs.push_back(ad::constant(t));
        r = random_tensor(op.fn(cs).shape(), rng);
    }
    std::vector<Tensor> dirs;
    for (const Tensor& x : xs) dirs.push_back(random_tensor(x.shape, rng));

    const auto directional = [&](const std::vector<Var>& g) {
        Var m = ad::sum(ad::mul(g[0], ad::constant(dirs[0])));
        for (std::size_t i = 1; i < g.size(); ++i) m = ad::add(m, ad::sum(ad::mul(g[i], ad::constant(dirs[i]))));
        return m;
    };

    const std::vector<Var> vs = as_params(xs);
    const std::vector<Var> g = ad::grad(project(op.fn(vs), r), vs, true);
    const Tensor analytic = flatten(values(ad::grad(directional(g), vs)));

    const auto first = [&](const std::vector<Tensor>& in) {
        const std::vector<Var> ps = as_params(in);
        const std::vector<Var> gi = ad::grad(project(op.fn(ps), r), ps);
        return directional(gi).item();
    };
    return relative_error(analytic, numeric_all(first, xs, h));
}

double gp_linear_closed_form_error(std::mt19937_64& rng)
{
    const Tensor w = random_tensor({5}, rng, -1.0, 1.0);
    const Tensor a = random_tensor({5}, rng);
    const Tensor b = random_tensor({5}, rng);
    const Var wv = ad::parameter(w);
    const augan::CriticFn critic = [&](const Var& x) { return ad::sum(ad::mul(wv, x)); };
    const Var gp = augan::gradient_penalty(critic, a, b, 0.37);
    const std::vector<Var> wrt{wv};
    const Tensor g = ad::grad(gp, wrt)[0].value();

    double norm = 0.0;
    for (double v : w.data) norm += v * v;
    norm = std::sqrt(norm);
    double worst = std::fabs(gp.item() - (norm - 1.0) * (norm - 1.0));
    for (std::size_t i = 0; i < 5; ++i)
        worst = std::max(worst, std::fabs(g.data[i] - 2.0 * (norm - 1.0) * w.data[i] / norm));
    return worst;
}

double gp_toy_critic_error(std::mt19937_64& rng, double h)
{
    std::vector<Tensor> theta{random_tensor({4, 6}, rng), random_tensor({4}, rng), random_tensor({1, 4}, rng),
                              random_tensor({1}, rng)};
    const Tensor real = random_tensor({6}, rng);
    const Tensor fake = random_tensor({6}, rng);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    const auto make_critic = [](const std::vector<Var>& p) {
        return augan::CriticFn([p](const Var& x) {
            const Var hidden = ad::leaky_relu(ad::affine(p[0], p[1], x), 0.2);
            return ad::reshape(ad::affine(p[2], p[3], hidden), Shape{});
        });
    };

    const std::vector<Var> params = as_params(theta);
    const Var gp = augan::gradient_penalty(make_critic(params), real, fake, u);
    const Tensor analytic = flatten(values(ad::grad(gp, params)));

    // Penalty from first-order gradients only: no double backprop involved.
    const auto penalty = [&](const std::vector<Tensor>& t) {
        std::vector<Var> cs;
        for (const Tensor& x : t) cs.push_back(ad::constant(x));
        Tensor mixed(real.shape, 0.0);
        for (std::size_t i = 0; i < mixed.size(); ++i) mixed.data[i] = u * real.data[i] + (1.0 - u) * fake.data[i];
        const Var x_hat = ad::parameter(mixed);
        const std::vector<Var> wrt{x_hat};
        const Tensor g = ad::grad(make_critic(cs)(x_hat), wrt)[0].value();
        double norm = 0.0;
        for (double v : g.data) norm += v * v;
        return (std::sqrt(norm) - 1.0) * (std::sqrt(norm) - 1.0);
    };
    return relative_error(analytic, numeric_all(penalty, theta, h));
}

Grid manual_detect(const Grid& x, const EffectParams& effect)
{
    Grid out(x.rows(), x.cols());
    for (std::size_t f = 0; f < x.rows(); ++f)
        for (std::size_t t = 0; t < x.cols(); ++t) {
            double acc = effect.bias.data[0];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    const long r = static_cast<long>(f) + i - 1;
                    const long c = static_cast<long>(t) + j - 1;
                    if (r < 0 || c < 0 || r >= static_cast<long>(x.rows()) || c >= static_cast<long>(x.cols()))
                        continue;
                    acc += effect.kernel.data[static_cast<std::size_t>(i * 3 + j)] *
                           x(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                }
            out(f, t) = acc;
        }
    return out;
}

double manual_critic(const Grid& x, double c, const augan::CriticParams& critic, const EffectParams& effect)
{
    const auto lrelu = [&](double v) { return v > 0.0 ? v : critic.config.leak * v; };
    // maps[channel] as plain row-major grids
    std::vector<Grid> maps{x, manual_detect(x, effect)};
    for (std::size_t layer = 0; layer < critic.conv_w.size(); ++layer) {
        const Tensor& w = critic.conv_w[layer];
        const Tensor& b = critic.conv_b[layer];
        const std::size_t out_ch = w.shape[0], in_ch = w.shape[1];
        const std::size_t h = maps[0].rows(), wd = maps[0].cols();
        const std::size_t oh = (h + 1) / 2, ow = (wd + 1) / 2;
        std::vector<Grid> next(out_ch, Grid(oh, ow));
        for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t q = 0; q < ow; ++q) {
                    double acc = b.data[o];
                    for (std::size_t i = 0; i < in_ch; ++i)
                        for (int kr = 0; kr < 3; ++kr)
                            for (int kc = 0; kc < 3; ++kc) {
                                const long rr = static_cast<long>(2 * r) + kr - 1;
                                const long cc = static_cast<long>(2 * q) + kc - 1;
                                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(wd))
                                    continue;
                                acc += w.data[((o * in_ch + i) * 3 + static_cast<std::size_t>(kr)) * 3 +
                                              static_cast<std::size_t>(kc)] *
                                       maps[i](static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                            }
                    next[o](r, q) = lrelu(acc);
                }
        maps = std::move(next);
    }
    std::vector<double> fused;
    for (const Grid& m : maps) {
        double acc = 0.0;
        for (double v : m.storage()) acc += v;
        fused.push_back(acc / static_cast<double>(m.size()));
    }
    fused.push_back(c);
    const std::size_t hidden = critic.fuse_w.shape[0];
    double score = critic.head_b.data[0];
    for (std::size_t k = 0; k < hidden; ++k) {
        double acc = critic.fuse_b.data[k];
        for (std::size_t j = 0; j < fused.size(); ++j) acc += critic.fuse_w.data[k * fused.size() + j] * fused[j];
        score += critic.head_w.data[k] * lrelu(acc);
    }
    return score;
}

LossFixture loss_fixture()
{
    LossFixture fx;
    Grid x_in(4, 4), x_real(4, 4);
    const double in_values[16] = {0.2, 0.5, 0.1, 0.0, 0.9, 0.3, 0.4, 0.7, 0.6, 0.8, 0.2, 0.1, 0.0, 0.4, 0.5, 0.3};
    const double real_values[16] = {0.7, 0.1, 0.8, 0.3, 0.2, 0.9, 0.0, 0.6, 0.4, 0.3, 0.9, 0.5, 0.8, 0.1, 0.2, 0.7};
    for (std::size_t i = 0; i < 16; ++i) {
        x_in.storage()[i] = in_values[i];
        x_real.storage()[i] = real_values[i];
    }
    fx.pair = TrainingPair{{x_in, {}}, {x_real, {}}, 0.45, PairKind::Transformation};

    fx.effect.kernel.data = {0.05, -0.10, 0.20, 0.15, 0.30, -0.05, -0.20, 0.10, 0.25};
    fx.effect.bias.data = {0.02};
    fx.effect.scale.data = {1.4};
    fx.effect.temperature = 8.0;

    fx.critic.config = augan::CriticConfig{{2}, 3, 0.2};
    std::mt19937_64 rng(2024);
    fx.critic.conv_w = {random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5)};
    fx.critic.conv_b = {Tensor(Shape{2}, std::vector<double>{0.05, -0.03})};
    fx.critic.fuse_w = random_tensor({3, 3}, rng, -0.8, 0.8);
    fx.critic.fuse_b = Tensor(Shape{3}, std::vector<double>{0.1, -0.2, 0.05});
    fx.critic.head_w = random_tensor({1, 3}, rng, -1.0, 1.0);
    fx.critic.head_b = Tensor(Shape{1}, std::vector<double>{0.3});
    fx.u = 0.35;
    return fx;
}

ManualLosses manual_losses(const LossFixture& fx, const augan::LossWeights& w)
{
    const Grid& x_in = fx.pair.x_in.mag;
    const Grid& x_real = fx.pair.x_real.mag;
    const double c = fx.pair.c;
    const EffectParams& e = fx.effect;
    const double gate = 1.0 / (1.0 + std::exp(-(c - e.tau) * e.temperature));

    const Grid d_in = manual_detect(x_in, e);
    Grid fake = x_in;
    for (std::size_t i = 0; i < fake.size(); ++i)
        fake.storage()[i] += d_in.storage()[i] * c * gate * e.scale.data[0];

    ManualLosses m;
    m.real_score = manual_critic(x_real, c, fx.critic, e);
    m.fake_score = manual_critic(fake, c, fx.critic, e);

    Grid mixed = x_real;
    for (std::size_t i = 0; i < mixed.size(); ++i)
        mixed.storage()[i] = fx.u * x_real.storage()[i] + (1.0 - fx.u) * fake.storage()[i];
    double sq = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
        Grid up = mixed, down = mixed;
        up.storage()[i] += h;
        down.storage()[i] -= h;
        const double g = (manual_critic(up, c, fx.critic, e) - manual_critic(down, c, fx.critic, e)) / (2.0 * h);
        sq += g * g;
    }
    m.gp = (std::sqrt(sq) - 1.0) * (std::sqrt(sq) - 1.0);

    const Grid d_fake = manual_detect(fake, e);
    double texture = 0.0;
    for (double v : d_fake.storage()) texture += v;
    texture /= static_cast<double>(d_fake.size());
    m.violation = std::fabs(texture - c);

    for (std::size_t i = 0; i < fake.size(); ++i) m.recon += std::fabs(fake.storage()[i] - x_real.storage()[i]);
    m.recon /= static_cast<double>(fake.size());
    double energy = 0.0;
    for (double v : d_in.storage()) energy += std::fabs(v);
    m.reg = std::log(w.reg_eps + energy / static_cast<double>(d_in.size()));

    m.critic_total = -m.real_score + m.fake_score + w.gp * m.gp + w.comp * m.violation;
    m.generator_total = -m.fake_score + w.comp * m.violation + w.recon * m.recon - w.reg * m.reg;
    return m;
}

audio::AudioClip sine(double freq, double seconds, int rate, double amp)
{
    audio::AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.resize(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
        clip.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / rate));
    return clip;
}

audio::AudioClip noise(double seconds, std::uint64_t seed, int rate, double amp)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-amp, amp);
    audio::AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.resize(static_cast<std::size_t>(seconds * rate));
    for (float& s : clip.samples) s = static_cast<float>(dist(rng));
    return clip;
}

audio::AudioClip noise_bursts(double seconds, std::uint64_t seed, int rate)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::uniform_int_distribution<int> gap(rate / 40, rate / 8);
    audio::AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.assign(static_cast<std::size_t>(seconds * rate), 0.0f);
    const std::size_t burst = static_cast<std::size_t>(rate / 50);
    std::size_t pos = 0;
    while (pos < clip.samples.size()) {
        for (std::size_t i = 0; i < burst && pos + i < clip.samples.size(); ++i)
            clip.samples[pos + i] = static_cast<float>(0.8 * dist(rng));
        pos += burst + static_cast<std::size_t>(gap(rng));
    }
    return clip;
}

double snr_db(const std::vector<float>& reference, const std::vector<float>& test, std::size_t begin,
              std::size_t end)
{
    double signal = 0.0, error = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        signal += static_cast<double>(reference[i]) * reference[i];
        const double d = static_cast<double>(reference[i]) - test[i];
        error += d * d;
    }
    if (error == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / error);
}

TempDir::TempDir()
{
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto candidate = std::filesystem::temp_directory_path() / ("cak_test_" + std::to_string(rd()));
        if (std::filesystem::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
    throw std::runtime_error("cannot create a temporary directory");
}

TempDir::~TempDir()
{
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

void write_synthetic_corpus(const std::filesystem::path& dir, double seconds, std::uint64_t seed)
{
    for (int i = 0; i < 8; ++i) {
        audio::AudioClip tone = sine(110.0 * (i + 1), seconds, 44100, 0.4);
        const audio::AudioClip partial = sine(165.0 * (i + 1), seconds, 44100, 0.2);
        for (std::size_t k = 0; k < tone.size(); ++k) tone.samples[k] += partial.samples[k];
        audio::write_wav(tone, dir / ("tone_" + std::to_string(i) + ".wav"));
        audio::write_wav(noise_bursts(seconds, seed + static_cast<std::uint64_t>(i)),
                         dir / ("burst_" + std::to_string(i) + ".wav"));
    }
}

} // namespace cak::testing
