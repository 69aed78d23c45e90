#pragma once

#include "cak/audio_io.hpp"
#include "cak/augan.hpp"
#include "cak/training_pair.hpp"
#include "cak/diffmath.hpp"
#include "cak/grid.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace cak::testing {

ad::Tensor random_tensor(const ad::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                         double min_abs = 0.0);
Grid random_grid(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0);

/// One differentiable op under test. Inputs are drawn from [lo, hi] with
/// |v| >= min_abs, which keeps kinks (abs, leaky_relu) and poles away.
struct OpCase {
    std::string name;
    std::vector<ad::Shape> shapes;
    std::function<ad::Var(const std::vector<ad::Var>&)> fn;
    double lo = -1.0;
    double hi = 1.0;
    double min_abs = 0.05;
    bool second_order = true;
};

std::vector<OpCase> op_cases();

/// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-10) for the
/// scalar sum(f(x) * R) with a random projection R; central differences.
double first_order_error(const OpCase& op, std::mt19937_64& rng, double h = 1e-4);

/// Same measure for the gradient of sum(grad(x) * V): the double-backprop
/// result against central differences of first-order gradients.
double second_order_error(const OpCase& op, std::mt19937_64& rng, double h = 1e-4);

/// Linear critic f(x) = w.x: the penalty is (||w|| - 1)^2 and its gradient
/// 2 (||w|| - 1) w / ||w||. Returns the largest absolute deviation of the
/// double-backprop value and gradient from that closed form.
double gp_linear_closed_form_error(std::mt19937_64& rng);

/// Two-layer leaky-ReLU critic: relative error of the penalty's parameter
/// gradient (double backprop) against central differences of the penalty
/// computed from first-order input gradients.
double gp_toy_critic_error(std::mt19937_64& rng, double h = 1e-5);

/// Central differences of a scalar function of a tensor.
ad::Tensor numeric_gradient(const std::function<double(const ad::Tensor&)>& f, const ad::Tensor& x, double h);

double relative_error(const ad::Tensor& a, const ad::Tensor& b);

/// Hand-built single-pair batch with a one-layer critic, evaluated by a
/// plain-array forward pass that shares no code with the library.
struct LossFixture {
    TrainingPair pair;
    augan::CriticParams critic;
    EffectParams effect;
    double u = 0.0;
};
LossFixture loss_fixture();

struct ManualLosses {
    double real_score = 0.0;
    double fake_score = 0.0;
    double gp = 0.0;
    double violation = 0.0;
    double recon = 0.0;
    double reg = 0.0;  ///< log(eps + mean|D(x_in)|)
    double critic_total = 0.0;
    double generator_total = 0.0;
};
ManualLosses manual_losses(const LossFixture& fx, const augan::LossWeights& w = {});

/// Manual critic score (conv stack, pool, fuse c, head) on a plain grid.
double manual_critic(const Grid& x, double c, const augan::CriticParams& critic, const EffectParams& effect);
Grid manual_detect(const Grid& x, const EffectParams& effect);

audio::AudioClip sine(double freq, double seconds, int rate = 44100, double amp = 0.5);
audio::AudioClip noise(double seconds, std::uint64_t seed, int rate = 44100, double amp = 0.5);
/// Short noise bursts separated by silence: high spectral flux.
audio::AudioClip noise_bursts(double seconds, std::uint64_t seed, int rate = 44100);

double snr_db(const std::vector<float>& reference, const std::vector<float>& test, std::size_t begin,
              std::size_t end);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// 8 sustained tones and 8 noise-burst clips of `seconds` each.
void write_synthetic_corpus(const std::filesystem::path& dir, double seconds, std::uint64_t seed);

} // namespace cak::testing
