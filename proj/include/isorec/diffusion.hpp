#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "isorec/image.hpp"
#include "isorec/io_util.hpp"

namespace isorec {

using MatrixR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic>;
using VectorR = Eigen::Matrix<real, Eigen::Dynamic, 1>;

// beta/alpha/alpha_bar tables; index t runs 1..T, alpha_bar(0) == 1.
struct NoiseSchedule {
    int T = 1000;
    real beta_start = 1e-4;
    real beta_end = 0.02;
    std::vector<real> beta;       // beta[t-1] = beta_t
    std::vector<real> alpha;      // 1 - beta_t
    std::vector<real> alpha_bar;  // prod_{s<=t} alpha_s

    real a_bar(int t) const {
        if (t < 0 || t > T) throw ConfigError("alpha_bar: t out of [0, T]");
        return t == 0 ? 1.0 : alpha_bar[std::size_t(t) - 1];
    }
    real beta_at(int t) const { return beta.at(std::size_t(t) - 1); }
    real alpha_at(int t) const { return alpha.at(std::size_t(t) - 1); }

    json to_json() const;
};

// beta linear from beta_start to beta_end inclusive over T steps.
NoiseSchedule build_schedule(int T, real beta_start, real beta_end);

// x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps
Image perturb(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched);

struct DenoiserConfig {
    int channels = 1;
    int base_width = 16;
    int levels = 2;          // resolutions; inputs must divide 2^(levels-1)
    int time_embed_dim = 32; // even
    real output_clip = 4.0;  // eps_hat = clip * tanh(raw / clip); covers
                             // 4 sigma of the target noise while keeping the
                             // prediction bounded off-manifold (0 disables)

    json to_json() const;
    static DenoiserConfig from_json(const json& j);
};

// Timestep-conditioned noise predictor: a small convolutional
// encoder-decoder with skip connections; each conv block receives a
// per-channel bias projected from a sinusoidal embedding of t.
// Operates in the prior's [-1, 1] intensity range.
class DenoiserModel {
public:
    DenoiserModel() = default;
    DenoiserModel(const DenoiserConfig& cfg, const NoiseSchedule& sched, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }
    std::uint64_t seed() const { return seed_; }
    long steps_trained = 0;

    std::span<real> params() { return params_; }
    std::span<const real> params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    // Stored intermediates of one (batched) forward pass.
    struct Cache {
        int n = 0, H = 0, W = 0;
        std::vector<int> ts;
        std::vector<VectorR> temb_in;
        std::vector<VectorR> t_h1_pre;
        std::vector<VectorR> temb;
        MatrixR x;
        std::vector<MatrixR> enc_pre;
        std::vector<MatrixR> enc_act;
        MatrixR mid_pre, mid_act;
        std::vector<MatrixR> dec_cat;
        std::vector<MatrixR> dec_pre;
        std::vector<MatrixR> dec_act;
        MatrixR out_pre;
    };

    Image forward(const Image& x_t, int t) const;
    Image forward_cached(const Image& x_t, int t, Cache& cache) const;
    void backward(const Cache& cache, const Image& grad_out, std::span<real> grad) const;

    // Batched variants (one GEMM spanning the batch); per-sample timesteps.
    std::vector<Image> forward_batch(std::span<const Image* const> xs,
                                     std::span<const int> ts) const;
    std::vector<Image> forward_batch_cached(std::span<const Image* const> xs,
                                            std::span<const int> ts, Cache& cache) const;
    void backward_batch(const Cache& cache, std::span<const Image* const> grad_outs,
                        std::span<real> grad) const;

    void validate_input(const Image& x) const;

private:
    DenoiserConfig cfg_;
    NoiseSchedule sched_;
    std::uint64_t seed_ = 0;
    std::vector<real> params_;

    struct Layout;
    const Layout& layout() const;
    mutable std::shared_ptr<const Layout> layout_;
};

// Eq. 4 pieces. `eps_theta` receives (x_t, t, item index) so tests can stub
// the predictor; the loss is the mean over items of the per-pixel MSE
// between the drawn noise and the prediction.
struct NoiseDraw {
    int t = 1;
    Image eps;
};
std::vector<NoiseDraw> sample_noise_draws(const NoiseSchedule& sched,
                                          const std::vector<Image>& x0, Rng& rng);
real diffusion_loss(const std::function<Image(const Image&, int, std::size_t)>& eps_theta,
                    const NoiseSchedule& sched, const std::vector<Image>& x0,
                    const std::vector<NoiseDraw>& draws);

// Model-backed loss with freshly sampled (t, eps).
real denoiser_loss(const DenoiserModel& model, const std::vector<Image>& x0, Rng& rng);

struct PriorTrainConfig {
    long steps = 2000;
    int batch = 8;
    real lr = 1e-3;
    bool augment = true;   // random horizontal/vertical flips
    int log_every = 50;
    std::uint64_t seed = 0;

    json to_json() const;
    static PriorTrainConfig from_json(const json& j);
};

struct LossCurvePoint {
    long step;
    real loss;
};

// Trains eps_theta on patches given in volume range [0, 1]; intensities are
// mapped to [-1, 1] internally. Deterministic for a fixed seed. Throws
// NumericError on NaN loss.
DenoiserModel train_denoiser(const std::vector<Image>& patches, const DenoiserConfig& cfg,
                             const NoiseSchedule& sched, const PriorTrainConfig& train,
                             std::vector<LossCurvePoint>* curve = nullptr);

// Ancestral reverse chain from x_T ~ N(0, I); returns an image in volume
// range [0, 1] (internally clipped from the prior range). Sample i draws
// its noise from sub-stream i of the seed, independent of the other samples.
Image ancestral_sample(const DenoiserModel& model, int height, int width, std::uint64_t seed);
std::vector<Image> ancestral_sample_batch(const DenoiserModel& model, int n, int height,
                                          int width, std::uint64_t seed);

void save_denoiser(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_denoiser(const std::filesystem::path& path);

}  // namespace isorec
