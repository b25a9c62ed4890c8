#include "isorec/sds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "isorec/metrics.hpp"
#include "isorec/nn.hpp"

namespace isorec {

Regularizer regularizer_from_name(const std::string& name) {
    if (name == "sds") return Regularizer::Sds;
    if (name == "tv") return Regularizer::Tv;
    if (name == "none") return Regularizer::None;
    throw ConfigError("unknown regularizer: " + name);
}

const char* regularizer_name(Regularizer r) {
    switch (r) {
        case Regularizer::Sds: return "sds";
        case Regularizer::Tv: return "tv";
        case Regularizer::None: return "none";
    }
    return "?";
}

json SdsConfig::to_json() const {
    return json{{"lambda", lambda},
                {"t_start", t_start},
                {"t_end", t_end},
                {"epochs", epochs},
                {"batch_slices", batch_slices},
                {"lr", lr},
                {"alternate", alternate},
                {"regularizer", regularizer_name(regularizer)},
                {"scale_by_alpha", scale_by_alpha},
                {"use_adam", use_adam},
                {"seed", seed},
                {"metrics_every", metrics_every},
                {"residual_dump_every", residual_dump_every},
                {"checkpoint_every", checkpoint_every}};
}

SdsConfig SdsConfig::from_json(const json& j) {
    SdsConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.t_start = j.value("t_start", c.t_start);
    c.t_end = j.value("t_end", c.t_end);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_slices = j.value("batch_slices", c.batch_slices);
    c.lr = j.value("lr", c.lr);
    c.alternate = j.value("alternate", c.alternate);
    c.regularizer = regularizer_from_name(j.value("regularizer", "sds"));
    c.scale_by_alpha = j.value("scale_by_alpha", c.scale_by_alpha);
    c.use_adam = j.value("use_adam", c.use_adam);
    c.seed = j.value("seed", c.seed);
    c.metrics_every = j.value("metrics_every", c.metrics_every);
    c.residual_dump_every = j.value("residual_dump_every", c.residual_dump_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (c.lambda < 0) throw ConfigError("SdsConfig: lambda must be >= 0");
    if (c.batch_slices < 1) throw ConfigError("SdsConfig: batch_slices must be >= 1");
    if (c.epochs < 1) throw ConfigError("SdsConfig: epochs must be >= 1");
    if (!(c.t_end >= 1 && c.t_end <= c.t_start))
        throw ConfigError("SdsConfig: need 1 <= t_end <= t_start");
    return c;
}

TermValue data_fidelity(const Image& queried, const Image& measurement, const DegradationOp& op) {
    Image lr = degrade(queried, op);
    require_same_shape(lr, measurement, "data_fidelity");
    TermValue out;
    const real norm = 1.0 / real(lr.v.size());
    for (std::size_t i = 0; i < lr.v.size(); ++i) {
        const real r = lr.v[i] - measurement.v[i];
        out.value += r * r;
        lr.v[i] = 2.0 * r * norm;
    }
    out.value *= norm;
    out.grad = degrade_adjoint(lr, queried.height, op);
    return out;
}

int t_schedule(long iter, long total_iters, const SdsConfig& cfg) {
    if (iter < 0 || (total_iters > 0 && iter >= total_iters))
        throw ConfigError("t_schedule: iter out of range");
    if (total_iters < 2) return cfg.t_start;
    const real f = real(iter) / real(total_iters - 1);
    return int(std::lround(real(cfg.t_start) + (real(cfg.t_end) - real(cfg.t_start)) * f));
}

TermValue sds_term(const Image& queried_prior_range, int t, const Image& eps,
                   const DenoiserModel& denoiser, bool scale_by_alpha) {
    const NoiseSchedule& sched = denoiser.schedule();
    if (t < 1 || t > sched.T) throw ConfigError("sds_term: t out of [1, T]");
    require_same_shape(queried_prior_range, eps, "sds_term");

    const Image xt = perturb(queried_prior_range, t, eps, sched);
    const Image pred = denoiser.forward(xt, t);

    const real w = scale_by_alpha ? std::sqrt(sched.a_bar(t)) : 1.0;
    const real norm = 1.0 / real(eps.v.size());
    TermValue out;
    out.grad = Image(eps.channels, eps.height, eps.width);
    for (std::size_t i = 0; i < eps.v.size(); ++i) {
        const real r = w * (eps.v[i] - pred.v[i]);  // severed: constant w.r.t. the INR
        out.value += r * queried_prior_range.v[i];
        out.grad.v[i] = r * norm;
    }
    out.value *= norm;
    return out;
}

TermValue tv_term(const Image& slice) {
    if (slice.height < 2 || slice.width < 2) throw ShapeError("tv_term: slice must be >= 2x2");
    constexpr real eps_tv = 1e-8;
    TermValue out;
    out.grad = Image(slice.channels, slice.height, slice.width, 0.0);
    const std::size_t count =
        std::size_t(slice.channels) * (slice.height - 1) * (slice.width - 1);
    const real norm = 1.0 / real(count);
    for (int c = 0; c < slice.channels; ++c)
        for (int y = 0; y + 1 < slice.height; ++y)
            for (int x = 0; x + 1 < slice.width; ++x) {
                const real dr = slice.at(c, y + 1, x) - slice.at(c, y, x);
                const real dc = slice.at(c, y, x + 1) - slice.at(c, y, x);
                const real mag = std::sqrt(dr * dr + dc * dc + eps_tv);
                out.value += mag;
                const real gdr = dr / mag * norm;
                const real gdc = dc / mag * norm;
                out.grad.at(c, y + 1, x) += gdr;
                out.grad.at(c, y, x + 1) += gdc;
                out.grad.at(c, y, x) -= gdr + gdc;
            }
    out.value *= norm;
    return out;
}

std::string RunReport::loss_csv() const {
    std::ostringstream os;
    os << "iter,data_fidelity,sds,total,t\n";
    os.precision(12);
    for (const auto& r : loss_rows)
        os << r.iter << "," << r.data_fidelity << "," << r.sds << "," << r.total << "," << r.t
           << "\n";
    return os.str();
}

std::string RunReport::metrics_csv() const {
    std::ostringstream os;
    os << "epoch,psnr_zx,psnr_zy,ssim_zx,ssim_zy\n";
    os.precision(10);
    for (const auto& r : metric_rows)
        os << r.epoch << "," << r.psnr_zx << "," << r.psnr_zy << "," << r.ssim_zx << ","
           << r.ssim_zy << "\n";
    return os.str();
}

namespace {

// epoch-style sampling without replacement per orientation
class SliceSampler {
public:
    SliceSampler(int count, Rng rng) : rng_(rng), order_(static_cast<std::size_t>(count)) {
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }
    int next() {
        if (cursor_ == order_.size()) reshuffle();
        return order_[cursor_++];
    }

private:
    void reshuffle() {
        for (std::size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1], order_[std::size_t(rng_.uniform_int(std::int64_t(i)))]);
        cursor_ = 0;
    }
    Rng rng_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
};

Image image_from_rows(const MatrixR& out, Eigen::Index row0, int rows, int cols, int channels) {
    Image img(channels, rows, cols);
    for (int c = 0; c < channels; ++c)
        for (int r = 0; r < rows; ++r)
            for (int x = 0; x < cols; ++x)
                img.at(c, r, x) = out(row0 + Eigen::Index(r) * cols + x, c);
    return img;
}

}  // namespace

real mean_data_fidelity(const InrModel& model, const VolumeGrid& measurements,
                        const DegradationOp& op) {
    const int nz = measurements.dz * op.factor;
    real acc = 0;
    for (int j = 0; j < measurements.hy; ++j) {
        const Image q = query_slice(model, make_slice_plan(Orientation::ZX, j, nz,
                                                           measurements.hy, measurements.wx));
        acc += data_fidelity(q, get_slice(measurements, Orientation::ZX, j), op).value;
    }
    for (int i = 0; i < measurements.wx; ++i) {
        const Image q = query_slice(model, make_slice_plan(Orientation::ZY, i, nz,
                                                           measurements.hy, measurements.wx));
        acc += data_fidelity(q, get_slice(measurements, Orientation::ZY, i), op).value;
    }
    return acc / real(measurements.hy + measurements.wx);
}

ReconstructResult reconstruct(const VolumeGrid& measurements, const DenoiserModel& denoiser,
                              const InrConfig& inr_cfg, const SdsConfig& sds_cfg,
                              const DegradationOp& op, const VolumeGrid* ground_truth,
                              const std::filesystem::path& out_dir) {
    if (inr_cfg.channels != measurements.channels)
        throw ConfigError("reconstruct: INR channel count does not match the measurements");
    if (sds_cfg.regularizer == Regularizer::Sds) {
        if (denoiser.config().channels != measurements.channels)
            throw ConfigError("reconstruct: denoiser channel count does not match");
        if (sds_cfg.t_start > denoiser.schedule().T)
            throw ConfigError("reconstruct: t_start exceeds the denoiser schedule T");
    }
    const int nz = measurements.dz * op.factor;
    const int ny = measurements.hy;
    const int nx = measurements.wx;
    if (ground_truth &&
        (ground_truth->dz != nz || ground_truth->hy != ny || ground_truth->wx != nx ||
         ground_truth->channels != measurements.channels))
        throw ConfigError("reconstruct: ground truth dims inconsistent with target grid");

    ReconstructResult res;
    res.model = init_inr(inr_cfg, mix_seed(sds_cfg.seed, 0x1273));
    RunReport& rep = res.report;
    rep.denoiser_checksum_before = param_checksum(denoiser.params());

    // one epoch visits roughly one volume's worth of axial slices
    const int slices_per_epoch = sds_cfg.alternate ? (ny + nx) / 2 : ny;
    const long iters_per_epoch =
        std::max(1L, long((slices_per_epoch + sds_cfg.batch_slices - 1) / sds_cfg.batch_slices));
    const long total_iters = iters_per_epoch * sds_cfg.epochs;
    rep.total_iters = total_iters;

    rep.initial_mean_data_fidelity = mean_data_fidelity(res.model, measurements, op);

    Rng root(mix_seed(sds_cfg.seed, 0x5d5));
    SliceSampler zx_sampler(ny, root.fork(1));
    SliceSampler zy_sampler(nx, root.fork(2));
    Rng noise_rng = root.fork(3);

    AdamState adam(res.model.param_count());
    std::vector<real> grad(res.model.param_count(), 0.0);

    // measurement cross-sections are fixed; fetch once
    std::vector<Image> meas_zx(static_cast<std::size_t>(ny)), meas_zy(static_cast<std::size_t>(nx));
    for (int j = 0; j < ny; ++j) meas_zx[j] = get_slice(measurements, Orientation::ZX, j);
    for (int i = 0; i < nx; ++i) meas_zy[i] = get_slice(measurements, Orientation::ZY, i);

    const bool write_files = !out_dir.empty();
    if (write_files) std::filesystem::create_directories(out_dir);

    const int C = measurements.channels;
    const real batch_norm = 1.0 / real(sds_cfg.batch_slices);

    for (long iter = 0; iter < total_iters; ++iter) {
        const bool use_zy = sds_cfg.alternate && (iter % 2 == 1);
        const Orientation orient = use_zy ? Orientation::ZY : Orientation::ZX;
        (use_zy ? rep.zy_visits : rep.zx_visits) += 1;
        const int rows = nz;
        const int cols = use_zy ? ny : nx;
        const Eigen::Index slice_pts = Eigen::Index(rows) * cols;

        std::vector<int> indices(static_cast<std::size_t>(sds_cfg.batch_slices));
        for (auto& idx : indices) idx = use_zy ? zy_sampler.next() : zx_sampler.next();

        CoordMatrix coords(slice_pts * sds_cfg.batch_slices, 3);
        for (int b = 0; b < sds_cfg.batch_slices; ++b)
            coords.middleRows(slice_pts * b, slice_pts) =
                expand_slice(make_slice_plan(orient, indices[b], nz, ny, nx));

        InrModel::Cache cache;
        const MatrixR out = res.model.forward_cached(coords, cache);
        MatrixR grad_out = MatrixR::Zero(out.rows(), out.cols());

        const int t = t_schedule(iter, total_iters, sds_cfg);
        real df_acc = 0, reg_acc = 0;
        for (int b = 0; b < sds_cfg.batch_slices; ++b) {
            const Image q = image_from_rows(out, slice_pts * b, rows, cols, C);
            const Image& y = use_zy ? meas_zy[indices[b]] : meas_zx[indices[b]];

            const TermValue df = data_fidelity(q, y, op);
            df_acc += df.value;
            Image grad_q = df.grad;

            if (sds_cfg.regularizer == Regularizer::Sds && sds_cfg.lambda > 0) {
                Image qp = q;
                for (auto& v : qp.v) v = 2.0 * v - 1.0;  // to prior range
                Image eps(C, rows, cols);
                for (auto& v : eps.v) v = noise_rng.normal();
                const TermValue sds =
                    sds_term(qp, t, eps, denoiser, sds_cfg.scale_by_alpha);
                reg_acc += sds.value;
                for (std::size_t k = 0; k < grad_q.v.size(); ++k)
                    grad_q.v[k] += sds_cfg.lambda * 2.0 * sds.grad.v[k];

                if (write_files && sds_cfg.residual_dump_every > 0 && b == 0 &&
                    iter % sds_cfg.residual_dump_every == 0) {
                    // (eps - eps_theta) shifted into [0,1] for the volume container
                    VolumeGrid dump(1, rows, cols, C);
                    const real numel = real(sds.grad.v.size());
                    for (int c = 0; c < C; ++c)
                        for (int r2 = 0; r2 < rows; ++r2)
                            for (int x = 0; x < cols; ++x)
                                dump.at(c, 0, r2, x) = float(std::clamp(
                                    0.5 + 0.5 * sds.grad.at(c, r2, x) * numel, 0.0, 1.0));
                    char name[64];
                    std::snprintf(name, sizeof name, "residual_iter%06ld.volume", iter);
                    save_volume(dump, out_dir / name);
                }
            } else if (sds_cfg.regularizer == Regularizer::Tv && sds_cfg.lambda > 0) {
                const TermValue tv = tv_term(q);
                reg_acc += tv.value;
                for (std::size_t k = 0; k < grad_q.v.size(); ++k)
                    grad_q.v[k] += sds_cfg.lambda * tv.grad.v[k];
            }

            for (int c = 0; c < C; ++c)
                for (int r2 = 0; r2 < rows; ++r2)
                    for (int x = 0; x < cols; ++x)
                        grad_out(slice_pts * b + Eigen::Index(r2) * cols + x, c) =
                            grad_q.at(c, r2, x) * batch_norm;
        }
        df_acc *= batch_norm;
        reg_acc *= batch_norm;
        const real total = df_acc + sds_cfg.lambda * reg_acc;
        if (!std::isfinite(total)) {
            if (write_files) save_inr(res.model, out_dir / "inr_diverged.ckpt");
            throw NumericError("reconstruct: loss diverged at iteration " + std::to_string(iter));
        }

        std::fill(grad.begin(), grad.end(), 0.0);
        res.model.backward(cache, grad_out, grad);
        if (sds_cfg.use_adam)
            adam_step(res.model.params(), grad, adam, sds_cfg.lr);
        else
            sgd_step(res.model.params(), grad, sds_cfg.lr);
        res.model.step += 1;

        rep.loss_rows.push_back({iter, df_acc, reg_acc, total, t});

        if (write_files && sds_cfg.checkpoint_every > 0 &&
            (iter + 1) % sds_cfg.checkpoint_every == 0)
            save_inr(res.model, out_dir / "inr_latest.ckpt");

        const bool epoch_end = (iter + 1) % iters_per_epoch == 0;
        if (epoch_end && ground_truth) {
            const int epoch = int((iter + 1) / iters_per_epoch);
            const bool due = (sds_cfg.metrics_every > 0 && epoch % sds_cfg.metrics_every == 0) ||
                             iter + 1 == total_iters;
            if (due) {
                const VolumeGrid recon = export_volume(res.model, nz, ny, nx);
                const FamilyMeans fzx = evaluate_family(recon, *ground_truth, Orientation::ZX);
                const FamilyMeans fzy = evaluate_family(recon, *ground_truth, Orientation::ZY);
                rep.metric_rows.push_back(
                    {epoch, fzx.psnr_db, fzy.psnr_db, fzx.ssim_val, fzy.ssim_val});
            }
        }
    }

    rep.final_mean_data_fidelity = mean_data_fidelity(res.model, measurements, op);
    rep.denoiser_checksum_after = param_checksum(denoiser.params());

    if (write_files) {
        atomic_write_text(out_dir / "loss.csv", rep.loss_csv());
        if (!rep.metric_rows.empty())
            atomic_write_text(out_dir / "metrics.csv", rep.metrics_csv());
    }
    return res;
}

}  // namespace isorec
