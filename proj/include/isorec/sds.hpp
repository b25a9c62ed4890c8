#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "isorec/degradation.hpp"
#include "isorec/diffusion.hpp"
#include "isorec/inr.hpp"
#include "isorec/volume.hpp"

namespace isorec {

enum class Regularizer { Sds, Tv, None };

Regularizer regularizer_from_name(const std::string& name);
const char* regularizer_name(Regularizer r);

struct SdsConfig {
    real lambda = 0.25;
    int t_start = 500;
    int t_end = 1;
    int epochs = 150;
    int batch_slices = 8;
    real lr = 1e-5;
    bool alternate = true;
    Regularizer regularizer = Regularizer::Sds;
    bool scale_by_alpha = false;  // reinstate the sqrt(a_bar_t) factor of the
                                  // full chain rule; off by default (folded
                                  // into lambda)
    bool use_adam = true;
    std::uint64_t seed = 0;

    // reporting knobs
    int metrics_every = 0;        // epochs; 0 = final only (when gt present)
    int residual_dump_every = 0;  // iterations; 0 = off
    int checkpoint_every = 0;     // iterations; 0 = off

    json to_json() const;
    static SdsConfig from_json(const json& j);
};

struct TermValue {
    real value = 0;
    Image grad;  // with respect to the queried slice
};

// Mean squared error between degrade(queried) and the measurement;
// the gradient flows through the adjoint of the linear operator.
TermValue data_fidelity(const Image& queried, const Image& measurement, const DegradationOp& op);

// Linear noise-level decay: t(0) = t_start, t(total-1) = t_end, rounded to
// nearest (half away from zero).
int t_schedule(long iter, long total_iters, const SdsConfig& cfg);

// Score-distillation surrogate on a prior-range slice: perturbs with eps at
// level t, computes the severed residual r = eps - eps_theta(x_t, t), and
// returns mean(r * queried) with gradient r / numel.
TermValue sds_term(const Image& queried_prior_range, int t, const Image& eps,
                   const DenoiserModel& denoiser, bool scale_by_alpha = false);

// Smoothed isotropic total variation (baseline regularizer).
TermValue tv_term(const Image& slice);

struct LossRow {
    long iter = 0;
    real data_fidelity = 0;
    real sds = 0;  // raw surrogate value, before lambda
    real total = 0;
    int t = 0;
};

struct MetricRow {
    int epoch = 0;
    real psnr_zx = 0, psnr_zy = 0;
    real ssim_zx = 0, ssim_zy = 0;
};

struct RunReport {
    std::vector<LossRow> loss_rows;
    std::vector<MetricRow> metric_rows;
    real initial_mean_data_fidelity = 0;
    real final_mean_data_fidelity = 0;
    long total_iters = 0;
    long zx_visits = 0, zy_visits = 0;
    std::string denoiser_checksum_before;
    std::string denoiser_checksum_after;

    std::string loss_csv() const;
    std::string metrics_csv() const;
};

struct ReconstructResult {
    InrModel model;
    RunReport report;
};

// The reconstruction loop: per iteration, sample batch_slices random axial
// slices in the current orientation, query the INR on the target isotropic
// grid, and minimize data_fidelity + lambda * regularizer, updating only the
// INR parameters. Orientation alternates ZX/ZY when configured. Report files
// (loss.csv, metrics.csv, residual dumps, periodic checkpoints) are written
// into out_dir when provided.
ReconstructResult reconstruct(const VolumeGrid& measurements, const DenoiserModel& denoiser,
                              const InrConfig& inr_cfg, const SdsConfig& sds_cfg,
                              const DegradationOp& op,
                              const VolumeGrid* ground_truth = nullptr,
                              const std::filesystem::path& out_dir = {});

// Mean data-fidelity over every axial slice (both orientations).
real mean_data_fidelity(const InrModel& model, const VolumeGrid& measurements,
                        const DegradationOp& op);

}  // namespace isorec
