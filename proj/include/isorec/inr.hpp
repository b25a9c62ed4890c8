#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "isorec/io_util.hpp"
#include "isorec/volume.hpp"

namespace isorec {

using MatrixR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic>;
using VectorR = Eigen::Matrix<real, Eigen::Dynamic, 1>;

// Fixed random Gaussian projection; never trained.
struct FourierEmbedding {
    MatrixR B;  // m x 3, entries ~ N(0, sigma^2)
    real sigma = 8.0;
    std::uint64_t seed = 0;

    int m() const { return int(B.rows()); }
    int out_dim() const { return 2 * m(); }
};

FourierEmbedding make_fourier_embedding(int m, real sigma, std::uint64_t seed);

// [sin(2 pi B c), cos(2 pi B c)], one row per coordinate triple.
MatrixR fourier_embed(const CoordMatrix& coords, const FourierEmbedding& emb);

struct InrConfig {
    int width = 64;
    int depth = 4;        // number of sine hidden layers
    int fourier_dim = 32; // m; embedding outputs 2m features
    int channels = 1;
    real fourier_sigma = 8.0;
    real omega_first = 30.0;
    real omega_hidden = 1.0;

    json to_json() const;
    static InrConfig from_json(const json& j);
};

// Sine-activation MLP over the Fourier features. Layer l computes
// a_l = sin(omega_l (a_{l-1} W_l + b_l)); the output head is linear.
// Parameters live in one flat buffer in declared layer order
// (W row-major, then b, for each layer).
class InrModel {
public:
    InrModel() = default;
    InrModel(const InrConfig& cfg, std::uint64_t seed);

    const InrConfig& config() const { return cfg_; }
    const FourierEmbedding& embedding() const { return emb_; }
    std::uint64_t seed() const { return seed_; }

    std::span<real> params() { return params_; }
    std::span<const real> params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    long step = 0;  // training steps applied so far

    // batch forward: coords (N x 3) -> intensities (N x C)
    MatrixR forward(const CoordMatrix& coords) const;

    struct Cache {
        MatrixR input;                  // embedded features (N x 2m)
        std::vector<MatrixR> preact;    // per hidden layer, pre-sine (N x w)
        std::vector<MatrixR> act;       // per hidden layer, post-sine (N x w)
    };
    MatrixR forward_cached(const CoordMatrix& coords, Cache& cache) const;

    // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    void backward(const Cache& cache, const MatrixR& grad_out, std::span<real> grad) const;

private:
    InrConfig cfg_;
    FourierEmbedding emb_;
    std::uint64_t seed_ = 0;
    std::vector<real> params_;

    int n_layers() const { return cfg_.depth + 1; }
    int layer_in(int l) const;
    int layer_out(int l) const;
    std::size_t layer_offset(int l) const;

    friend void save_inr(const InrModel&, const std::filesystem::path&);
    friend InrModel load_inr(const std::filesystem::path&);

public:
    // Weight matrix / bias views for layer l (0..depth inclusive; depth = output head).
    Eigen::Map<const MatrixR> weight(int l) const;
    Eigen::Map<const VectorR> bias(int l) const;
    Eigen::Map<MatrixR> weight(int l);
    Eigen::Map<VectorR> bias(int l);
    real omega(int l) const { return l == 0 ? cfg_.omega_first : cfg_.omega_hidden; }
};

InrModel init_inr(const InrConfig& cfg, std::uint64_t seed);

// rows x cols x C image sampled from the model on the plan's coordinates.
Image query_slice(const InrModel& model, const SlicePlan& plan);

// Dense export: all XY slices, clamped to [0, 1], isotropic spacing.
VolumeGrid export_volume(const InrModel& model, int nz, int ny, int nx);

// Checkpoint: JSON metadata + little-endian f32 weight payload at path+".raw".
void save_inr(const InrModel& model, const std::filesystem::path& path);
InrModel load_inr(const std::filesystem::path& path);

std::string param_checksum(std::span<const real> params);

}  // namespace isorec
