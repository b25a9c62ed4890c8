#pragma once

#include <vector>

#include "isorec/image.hpp"
#include "isorec/io_util.hpp"
#include "isorec/volume.hpp"

namespace isorec {

enum class DegradeMode { GaussianSubsample, LinearAverage };

// Axial forward operator A: maps a high-resolution axial slice (rows = z)
// to its low-resolution measurement. Linear and deterministic.
//   gaussian_subsample: 1D z-blur (replicate padding) then keep rows
//                       z = k*factor + phase
//   linear_average:     each output row is the mean of `factor` input rows
struct DegradationOp {
    DegradeMode mode = DegradeMode::GaussianSubsample;
    int factor = 2;
    real sigma_z = 1.0;     // gaussian mode only
    int kernel_radius = 3;  // gaussian mode only
    int phase = 1;          // subsample offset in [0, factor)

    static DegradationOp gaussian(int factor, real sigma_z, int kernel_radius = -1, int phase = -1);
    static DegradationOp linear_average(int factor, int phase = -1);

    std::vector<real> kernel() const;  // normalized, length 2*kernel_radius+1

    json to_json() const;
    static DegradationOp from_json(const json& j);
};

// w_k proportional to exp(-k^2 / (2 sigma^2)), k in [-radius, radius],
// normalized to sum 1.
std::vector<real> gaussian_kernel_1d(real sigma, int radius);

// hr rows must be divisible by op.factor; output has rows/factor rows.
Image degrade(const Image& hr, const DegradationOp& op);

// Adjoint of `degrade` (exact transpose of the linear map, including the
// replicate-padding contributions). Used to backpropagate the data-fidelity
// term into the INR.
Image degrade_adjoint(const Image& lr, int hr_rows, const DegradationOp& op);

// Applies `degrade` along z for every (c, y, x) column; output z-spacing is
// multiplied by the factor.
VolumeGrid degrade_volume(const VolumeGrid& vol, const DegradationOp& op);

}  // namespace isorec
