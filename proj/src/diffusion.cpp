#include "isorec/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "isorec/nn.hpp"

namespace isorec {

json NoiseSchedule::to_json() const {
    return json{{"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

NoiseSchedule build_schedule(int T, real beta_start, real beta_end) {
    if (T < 1) throw ConfigError("build_schedule: T must be >= 1");
    if (!(beta_start > 0) || !(beta_start <= beta_end) || !(beta_end < 1))
        throw ConfigError("build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    real prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const real frac = T == 1 ? 0.0 : real(t) / real(T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

Image perturb(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "perturb");
    if (t < 1 || t > sched.T) throw ConfigError("perturb: t out of [1, T]");
    const real a = std::sqrt(sched.a_bar(t));
    const real b = std::sqrt(1.0 - sched.a_bar(t));
    Image xt = x0;
    for (std::size_t i = 0; i < xt.v.size(); ++i) xt.v[i] = a * x0.v[i] + b * eps.v[i];
    return xt;
}

json DenoiserConfig::to_json() const {
    return json{{"channels", channels},
                {"base_width", base_width},
                {"levels", levels},
                {"time_embed_dim", time_embed_dim},
                {"output_clip", output_clip}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig cfg;
    cfg.channels = j.value("channels", cfg.channels);
    cfg.base_width = j.value("base_width", cfg.base_width);
    cfg.levels = j.value("levels", cfg.levels);
    cfg.time_embed_dim = j.value("time_embed_dim", cfg.time_embed_dim);
    cfg.output_clip = j.value("output_clip", cfg.output_clip);
    return cfg;
}

// ---------------------------------------------------------------------------
// parameter layout

namespace {

struct ConvSpec {
    int cin = 0, cout = 0;
    std::size_t w_off = 0;
    std::size_t w_count() const { return std::size_t(cin) * 9 * cout; }
};

struct LinSpec {
    int in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0;
    std::size_t w_count() const { return std::size_t(in) * out; }
};

}  // namespace

struct DenoiserModel::Layout {
    int E = 0, C = 0, F = 0, L = 1;
    LinSpec t1, t2;
    ConvSpec conv_in;
    LinSpec tl_in;
    std::vector<ConvSpec> conv_enc;  // enc level l = 1..L-1 at [l-1]
    std::vector<LinSpec> tl_enc;
    ConvSpec conv_mid;
    LinSpec tl_mid;
    std::vector<ConvSpec> conv_dec;  // dec level l = L-1..1 in that order
    std::vector<LinSpec> tl_dec;
    ConvSpec conv_out;
    std::size_t out_b_off = 0;
    std::size_t total = 0;

    static Layout build(const DenoiserConfig& cfg) {
        if (cfg.channels < 1 || cfg.base_width < 1 || cfg.levels < 1)
            throw ConfigError("DenoiserConfig: channels, base_width, levels must be positive");
        if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
            throw ConfigError("DenoiserConfig: time_embed_dim must be even and >= 2");
        Layout ly;
        ly.E = cfg.time_embed_dim;
        ly.C = cfg.channels;
        ly.F = cfg.base_width;
        ly.L = cfg.levels;
        std::size_t off = 0;
        auto lin = [&](int in, int out) {
            LinSpec s{in, out, off, off + std::size_t(in) * out};
            off += s.w_count() + std::size_t(out);
            return s;
        };
        auto conv = [&](int cin, int cout) {
            ConvSpec s{cin, cout, off};
            off += s.w_count();
            return s;
        };
        const auto width = [&](int level) { return ly.F << level; };
        ly.t1 = lin(ly.E, ly.E);
        ly.t2 = lin(ly.E, ly.E);
        ly.conv_in = conv(ly.C, width(0));
        ly.tl_in = lin(ly.E, width(0));
        for (int l = 1; l < ly.L; ++l) {
            ly.conv_enc.push_back(conv(width(l - 1), width(l)));
            ly.tl_enc.push_back(lin(ly.E, width(l)));
        }
        ly.conv_mid = conv(width(ly.L - 1), width(ly.L - 1));
        ly.tl_mid = lin(ly.E, width(ly.L - 1));
        for (int l = ly.L - 1; l >= 1; --l) {
            ly.conv_dec.push_back(conv(width(l) + width(l - 1), width(l - 1)));
            ly.tl_dec.push_back(lin(ly.E, width(l - 1)));
        }
        ly.conv_out = conv(width(0), ly.C);
        ly.out_b_off = off;
        off += std::size_t(ly.C);
        ly.total = off;
        return ly;
    }
};

const DenoiserModel::Layout& DenoiserModel::layout() const {
    if (!layout_) layout_ = std::make_shared<const Layout>(Layout::build(cfg_));
    return *layout_;
}

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, const NoiseSchedule& sched,
                             std::uint64_t seed)
    : cfg_(cfg), sched_(sched), seed_(seed) {
    const Layout& ly = layout();
    params_.assign(ly.total, 0.0);
    Rng rng(mix_seed(seed, 0xd0c5));
    auto init_lin = [&](const LinSpec& s) {
        const real bound = std::sqrt(1.0 / real(s.in));
        for (std::size_t i = 0; i < s.w_count(); ++i)
            params_[s.w_off + i] = rng.uniform(-bound, bound);
    };
    auto init_conv = [&](const ConvSpec& s) {
        const real bound = std::sqrt(1.0 / real(s.cin * 9));
        for (std::size_t i = 0; i < s.w_count(); ++i)
            params_[s.w_off + i] = rng.uniform(-bound, bound);
    };
    init_lin(ly.t1);
    init_lin(ly.t2);
    init_conv(ly.conv_in);
    init_lin(ly.tl_in);
    for (std::size_t i = 0; i < ly.conv_enc.size(); ++i) {
        init_conv(ly.conv_enc[i]);
        init_lin(ly.tl_enc[i]);
    }
    init_conv(ly.conv_mid);
    init_lin(ly.tl_mid);
    for (std::size_t i = 0; i < ly.conv_dec.size(); ++i) {
        init_conv(ly.conv_dec[i]);
        init_lin(ly.tl_dec[i]);
    }
    // output conv starts at zero: the fresh model predicts eps == 0
}

void DenoiserModel::validate_input(const Image& x) const {
    const int div = 1 << (cfg_.levels - 1);
    if (x.channels != cfg_.channels)
        throw ShapeError("denoiser: channel count mismatch");
    if (x.height % div != 0 || x.width % div != 0 || x.height < div || x.width < div)
        throw ShapeError("denoiser: image sides must be divisible by " + std::to_string(div));
}

// ---------------------------------------------------------------------------
// batched feature-map helpers
//
// A feature map for a batch of n same-sized images is an (n*H*W x C)
// column-major matrix; column c of row block i is channel c of sample i.

namespace {

using Map = Eigen::Map<MatrixR>;
using CMap = Eigen::Map<const MatrixR>;
using VMap = Eigen::Map<VectorR>;
using CVMap = Eigen::Map<const VectorR>;

inline real silu(real x) { return x / (1.0 + std::exp(-x)); }
inline real silu_grad(real x) {
    const real s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

MatrixR apply_silu(const MatrixR& z) {
    MatrixR out(z.rows(), z.cols());
    const real* src = z.data();
    real* dst = out.data();
    for (Eigen::Index i = 0; i < z.size(); ++i) dst[i] = silu(src[i]);
    return out;
}

// cols(p, c*9 + k) = X(shift_k(p), c), zero outside; per-sample row blocks.
MatrixR im2col(const MatrixR& X, int n, int H, int W) {
    const int cin = int(X.cols());
    const Eigen::Index npix = Eigen::Index(H) * W;
    MatrixR cols = MatrixR::Zero(X.rows(), Eigen::Index(cin) * 9);
    for (int c = 0; c < cin; ++c) {
        const real* src0 = X.col(c).data();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                real* dst0 = cols.col(Eigen::Index(c) * 9 + (dy + 1) * 3 + (dx + 1)).data();
                const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                if (x1 <= x0) continue;
                for (int i = 0; i < n; ++i) {
                    const real* src = src0 + Eigen::Index(i) * npix;
                    real* dst = dst0 + Eigen::Index(i) * npix;
                    for (int y = 0; y < H; ++y) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= H) continue;
                        std::memcpy(dst + Eigen::Index(y) * W + x0,
                                    src + Eigen::Index(yy) * W + x0 + dx,
                                    std::size_t(x1 - x0) * sizeof(real));
                    }
                }
            }
    }
    return cols;
}

// adjoint of im2col: scatter-add column gradients back to pixel gradients
void col2im_add(const MatrixR& dcols, int n, int H, int W, MatrixR& dX) {
    const int cin = int(dX.cols());
    const Eigen::Index npix = Eigen::Index(H) * W;
    for (int c = 0; c < cin; ++c) {
        real* dst0 = dX.col(c).data();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const real* src0 = dcols.col(Eigen::Index(c) * 9 + (dy + 1) * 3 + (dx + 1)).data();
                const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                if (x1 <= x0) continue;
                for (int i = 0; i < n; ++i) {
                    const real* src = src0 + Eigen::Index(i) * npix;
                    real* dst = dst0 + Eigen::Index(i) * npix;
                    for (int y = 0; y < H; ++y) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= H) continue;
                        real* d = dst + Eigen::Index(yy) * W + x0 + dx;
                        const real* s = src + Eigen::Index(y) * W + x0;
                        for (int x = 0; x < x1 - x0; ++x) d[x] += s[x];
                    }
                }
            }
    }
}

MatrixR avg_pool2(const MatrixR& X, int n, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
    MatrixR out(Eigen::Index(n) * Ho * Wo, X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        const real* src = X.col(c).data();
        real* dst = out.col(c).data();
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const real* p = src + (Eigen::Index(i) * H + 2 * y) * W + 2 * x;
                    dst[(Eigen::Index(i) * Ho + y) * Wo + x] =
                        0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
                }
    }
    return out;
}

void avg_pool2_adjoint_add(const MatrixR& dOut, int n, int H, int W, MatrixR& dX) {
    const int Ho = H / 2, Wo = W / 2;
    for (Eigen::Index c = 0; c < dX.cols(); ++c) {
        const real* src = dOut.col(c).data();
        real* dst = dX.col(c).data();
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const real g = 0.25 * src[(Eigen::Index(i) * Ho + y) * Wo + x];
                    real* p = dst + (Eigen::Index(i) * H + 2 * y) * W + 2 * x;
                    p[0] += g;
                    p[1] += g;
                    p[W] += g;
                    p[W + 1] += g;
                }
    }
}

MatrixR upsample2(const MatrixR& X, int n, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
    MatrixR out(Eigen::Index(n) * Ho * Wo, X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        const real* src = X.col(c).data();
        real* dst = out.col(c).data();
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const real v = src[(Eigen::Index(i) * H + y) * W + x];
                    real* p = dst + (Eigen::Index(i) * Ho + 2 * y) * Wo + 2 * x;
                    p[0] = v;
                    p[1] = v;
                    p[Wo] = v;
                    p[Wo + 1] = v;
                }
    }
    return out;
}

void upsample2_adjoint_add(const MatrixR& dOut, int n, int H, int W, MatrixR& dX) {
    const int Ho = H * 2, Wo = W * 2;
    for (Eigen::Index c = 0; c < dX.cols(); ++c) {
        const real* src = dOut.col(c).data();
        real* dst = dX.col(c).data();
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const real* p = src + (Eigen::Index(i) * Ho + 2 * y) * Wo + 2 * x;
                    dst[(Eigen::Index(i) * H + y) * W + x] += p[0] + p[1] + p[Wo] + p[Wo + 1];
                }
    }
}

VectorR sinusoidal_embedding(int t, int dim) {
    const int half = dim / 2;
    VectorR e(dim);
    for (int i = 0; i < half; ++i) {
        const real freq =
            half == 1 ? 1.0 : std::exp(-std::log(10000.0) * real(i) / real(half - 1));
        e[i] = std::sin(real(t) * freq);
        e[half + i] = std::cos(real(t) * freq);
    }
    return e;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward / backward

namespace {

// shared implementation bits parameterized over the flat parameter buffer
struct NetViews {
    const real* p;
    CMap conv_w(const ConvSpec& s) const { return {p + s.w_off, Eigen::Index(s.cin) * 9, s.cout}; }
    CMap lin_w(const LinSpec& s) const { return {p + s.w_off, s.in, s.out}; }
    CVMap lin_b(const LinSpec& s) const { return {p + s.b_off, s.out}; }
};

struct GradViews {
    real* g;
    Map conv_w(const ConvSpec& s) const { return {g + s.w_off, Eigen::Index(s.cin) * 9, s.cout}; }
    Map lin_w(const LinSpec& s) const { return {g + s.w_off, s.in, s.out}; }
    VMap lin_b(const LinSpec& s) const { return {g + s.b_off, s.out}; }
};

MatrixR images_to_features(std::span<const Image* const> xs) {
    const Image& x0 = *xs[0];
    const Eigen::Index npix = Eigen::Index(x0.height) * x0.width;
    MatrixR X(npix * Eigen::Index(xs.size()), x0.channels);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!xs[i]->same_shape(x0)) throw ShapeError("denoiser batch: mixed image shapes");
        for (int c = 0; c < x0.channels; ++c)
            std::memcpy(X.col(c).data() + Eigen::Index(i) * npix, xs[i]->plane(c),
                        std::size_t(npix) * sizeof(real));
    }
    return X;
}

std::vector<Image> features_to_images(const MatrixR& X, int n, int H, int W) {
    const Eigen::Index npix = Eigen::Index(H) * W;
    std::vector<Image> out(static_cast<std::size_t>(n), Image(int(X.cols()), H, W));
    for (int i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < X.cols(); ++c)
            std::memcpy(out[std::size_t(i)].plane(int(c)), X.col(c).data() + i * npix,
                        std::size_t(npix) * sizeof(real));
    return out;
}

// adds per-sample per-channel bias tb[i] to row block i
void add_time_bias(MatrixR& z, const std::vector<VectorR>& tb, Eigen::Index npix) {
    for (std::size_t i = 0; i < tb.size(); ++i)
        z.middleRows(Eigen::Index(i) * npix, npix).rowwise() += tb[i].transpose();
}

}  // namespace

std::vector<Image> DenoiserModel::forward_batch_cached(std::span<const Image* const> xs,
                                                       std::span<const int> ts,
                                                       Cache& cc) const {
    const Layout& ly = layout();
    const int nn = int(xs.size());
    if (nn == 0 || std::size_t(nn) != ts.size())
        throw ShapeError("denoiser batch: empty batch or ts size mismatch");
    validate_input(*xs[0]);
    NetViews net{params_.data()};

    cc.n = nn;
    cc.H = xs[0]->height;
    cc.W = xs[0]->width;
    cc.ts.assign(ts.begin(), ts.end());

    // timestep path
    cc.temb_in.resize(static_cast<std::size_t>(nn));
    cc.t_h1_pre.resize(static_cast<std::size_t>(nn));
    cc.temb.resize(static_cast<std::size_t>(nn));
    for (int i = 0; i < nn; ++i) {
        cc.temb_in[i] = sinusoidal_embedding(ts[i], ly.E);
        cc.t_h1_pre[i] = net.lin_w(ly.t1).transpose() * cc.temb_in[i] + net.lin_b(ly.t1);
        VectorR h1(ly.E);
        for (int k = 0; k < ly.E; ++k) h1[k] = silu(cc.t_h1_pre[i][k]);
        cc.temb[i] = net.lin_w(ly.t2).transpose() * h1 + net.lin_b(ly.t2);
    }
    auto time_bias = [&](const LinSpec& s) {
        std::vector<VectorR> tb(static_cast<std::size_t>(nn));
        for (int i = 0; i < nn; ++i)
            tb[std::size_t(i)] = net.lin_w(s).transpose() * cc.temb[std::size_t(i)] + net.lin_b(s);
        return tb;
    };

    cc.x = images_to_features(xs);
    cc.enc_pre.resize(static_cast<std::size_t>(ly.L));
    cc.enc_act.resize(static_cast<std::size_t>(ly.L));

    int H = cc.H, W = cc.W;
    {
        MatrixR z = im2col(cc.x, nn, H, W) * net.conv_w(ly.conv_in);
        add_time_bias(z, time_bias(ly.tl_in), Eigen::Index(H) * W);
        cc.enc_pre[0] = std::move(z);
        cc.enc_act[0] = apply_silu(cc.enc_pre[0]);
    }
    for (int l = 1; l < ly.L; ++l) {
        MatrixR pooled = avg_pool2(cc.enc_act[l - 1], nn, H, W);
        H /= 2;
        W /= 2;
        MatrixR z = im2col(pooled, nn, H, W) * net.conv_w(ly.conv_enc[l - 1]);
        add_time_bias(z, time_bias(ly.tl_enc[l - 1]), Eigen::Index(H) * W);
        cc.enc_pre[l] = std::move(z);
        cc.enc_act[l] = apply_silu(cc.enc_pre[l]);
    }
    {
        MatrixR z = im2col(cc.enc_act[ly.L - 1], nn, H, W) * net.conv_w(ly.conv_mid);
        add_time_bias(z, time_bias(ly.tl_mid), Eigen::Index(H) * W);
        cc.mid_pre = std::move(z);
        cc.mid_act = apply_silu(cc.mid_pre);
    }
    cc.dec_cat.resize(ly.conv_dec.size());
    cc.dec_pre.resize(ly.conv_dec.size());
    cc.dec_act.resize(ly.conv_dec.size());
    const MatrixR* h = &cc.mid_act;
    for (std::size_t d = 0; d < ly.conv_dec.size(); ++d) {
        const int l = ly.L - 1 - int(d);
        MatrixR up = upsample2(*h, nn, H, W);
        H *= 2;
        W *= 2;
        MatrixR cat(up.rows(), up.cols() + cc.enc_act[l - 1].cols());
        cat << up, cc.enc_act[l - 1];
        cc.dec_cat[d] = std::move(cat);
        MatrixR z = im2col(cc.dec_cat[d], nn, H, W) * net.conv_w(ly.conv_dec[d]);
        add_time_bias(z, time_bias(ly.tl_dec[d]), Eigen::Index(H) * W);
        cc.dec_pre[d] = std::move(z);
        cc.dec_act[d] = apply_silu(cc.dec_pre[d]);
        h = &cc.dec_act[d];
    }
    MatrixR out = im2col(*h, nn, H, W) * net.conv_w(ly.conv_out);
    out.rowwise() += CVMap(params_.data() + ly.out_b_off, ly.C).transpose();
    cc.out_pre = std::move(out);
    if (cfg_.output_clip > 0) {
        const real clip = cfg_.output_clip;
        MatrixR bounded = (cc.out_pre / clip).array().tanh() * clip;
        return features_to_images(bounded, nn, cc.H, cc.W);
    }
    return features_to_images(cc.out_pre, nn, cc.H, cc.W);
}

void DenoiserModel::backward_batch(const Cache& cc, std::span<const Image* const> grad_outs,
                                   std::span<real> grad) const {
    const Layout& ly = layout();
    if (grad.size() != params_.size()) throw ShapeError("denoiser backward: grad size mismatch");
    NetViews net{params_.data()};
    GradViews gv{grad.data()};
    const int nn = cc.n;
    const Eigen::Index npix0 = Eigen::Index(cc.H) * cc.W;

    std::vector<VectorR> dtemb(static_cast<std::size_t>(nn), VectorR::Zero(ly.E));
    auto time_bias_backward = [&](const LinSpec& s, const MatrixR& dZ, Eigen::Index npix) {
        for (int i = 0; i < nn; ++i) {
            const VectorR sums = dZ.middleRows(Eigen::Index(i) * npix, npix).colwise().sum();
            gv.lin_w(s).noalias() += cc.temb[std::size_t(i)] * sums.transpose();
            gv.lin_b(s).noalias() += sums;
            dtemb[std::size_t(i)].noalias() += net.lin_w(s) * sums;
        }
    };

    // output conv
    MatrixR dOut = images_to_features(grad_outs);
    if (cfg_.output_clip > 0) {
        const real clip = cfg_.output_clip;
        dOut.array() *= 1.0 - (cc.out_pre / clip).array().tanh().square();
    }
    const MatrixR& last = ly.conv_dec.empty() ? cc.mid_act : cc.dec_act.back();
    {
        MatrixR cols = im2col(last, nn, cc.H, cc.W);
        gv.conv_w(ly.conv_out).noalias() += cols.transpose() * dOut;
        VMap(grad.data() + ly.out_b_off, ly.C).noalias() += dOut.colwise().sum().transpose();
    }
    MatrixR dh = MatrixR::Zero(last.rows(), last.cols());
    {
        MatrixR dcols = dOut * net.conv_w(ly.conv_out).transpose();
        col2im_add(dcols, nn, cc.H, cc.W, dh);
    }

    std::vector<MatrixR> denc_act(static_cast<std::size_t>(ly.L));
    for (int l = 0; l < ly.L; ++l)
        denc_act[l] = MatrixR::Zero(cc.enc_act[l].rows(), cc.enc_act[l].cols());

    // decoder blocks, reverse order
    int H = cc.H, W = cc.W;
    for (int d = int(ly.conv_dec.size()) - 1; d >= 0; --d) {
        const int l = ly.L - 1 - d;
        MatrixR dZ = dh.cwiseProduct(cc.dec_pre[d].unaryExpr([](real z) { return silu_grad(z); }));
        time_bias_backward(ly.tl_dec[d], dZ, Eigen::Index(H) * W);
        {
            MatrixR cols = im2col(cc.dec_cat[d], nn, H, W);
            gv.conv_w(ly.conv_dec[d]).noalias() += cols.transpose() * dZ;
        }
        MatrixR dcat = MatrixR::Zero(cc.dec_cat[d].rows(), cc.dec_cat[d].cols());
        col2im_add(dZ * net.conv_w(ly.conv_dec[d]).transpose(), nn, H, W, dcat);
        const Eigen::Index up_ch = dcat.cols() - cc.enc_act[l - 1].cols();
        denc_act[l - 1] += dcat.rightCols(cc.enc_act[l - 1].cols());
        H /= 2;
        W /= 2;
        MatrixR dprev = d == 0 ? MatrixR::Zero(cc.mid_act.rows(), cc.mid_act.cols())
                               : MatrixR::Zero(cc.dec_act[d - 1].rows(), cc.dec_act[d - 1].cols());
        upsample2_adjoint_add(dcat.leftCols(up_ch), nn, H, W, dprev);
        dh = std::move(dprev);
    }

    // bottleneck
    {
        MatrixR dZ = dh.cwiseProduct(cc.mid_pre.unaryExpr([](real z) { return silu_grad(z); }));
        time_bias_backward(ly.tl_mid, dZ, Eigen::Index(H) * W);
        MatrixR cols = im2col(cc.enc_act[ly.L - 1], nn, H, W);
        gv.conv_w(ly.conv_mid).noalias() += cols.transpose() * dZ;
        col2im_add(dZ * net.conv_w(ly.conv_mid).transpose(), nn, H, W, denc_act[ly.L - 1]);
    }

    // encoder blocks, reverse order
    for (int l = ly.L - 1; l >= 1; --l) {
        MatrixR dZ =
            denc_act[l].cwiseProduct(cc.enc_pre[l].unaryExpr([](real z) { return silu_grad(z); }));
        time_bias_backward(ly.tl_enc[l - 1], dZ, Eigen::Index(H) * W);
        MatrixR pooled = avg_pool2(cc.enc_act[l - 1], nn, H * 2, W * 2);
        MatrixR cols = im2col(pooled, nn, H, W);
        gv.conv_w(ly.conv_enc[l - 1]).noalias() += cols.transpose() * dZ;
        MatrixR dpooled = MatrixR::Zero(pooled.rows(), pooled.cols());
        col2im_add(dZ * net.conv_w(ly.conv_enc[l - 1]).transpose(), nn, H, W, dpooled);
        H *= 2;
        W *= 2;
        avg_pool2_adjoint_add(dpooled, nn, H, W, denc_act[l - 1]);
    }

    // input conv
    {
        MatrixR dZ =
            denc_act[0].cwiseProduct(cc.enc_pre[0].unaryExpr([](real z) { return silu_grad(z); }));
        time_bias_backward(ly.tl_in, dZ, npix0);
        MatrixR cols = im2col(cc.x, nn, cc.H, cc.W);
        gv.conv_w(ly.conv_in).noalias() += cols.transpose() * dZ;
        // input gradient not needed: x_t is a leaf during denoiser training
    }

    // timestep MLP
    for (int i = 0; i < nn; ++i) {
        gv.lin_b(ly.t2).noalias() += dtemb[std::size_t(i)];
        VectorR h1(ly.E);
        for (int k = 0; k < ly.E; ++k) h1[k] = silu(cc.t_h1_pre[std::size_t(i)][k]);
        gv.lin_w(ly.t2).noalias() += h1 * dtemb[std::size_t(i)].transpose();
        VectorR dh1 = net.lin_w(ly.t2) * dtemb[std::size_t(i)];
        for (int k = 0; k < ly.E; ++k) dh1[k] *= silu_grad(cc.t_h1_pre[std::size_t(i)][k]);
        gv.lin_w(ly.t1).noalias() += cc.temb_in[std::size_t(i)] * dh1.transpose();
        gv.lin_b(ly.t1).noalias() += dh1;
    }
}

std::vector<Image> DenoiserModel::forward_batch(std::span<const Image* const> xs,
                                                std::span<const int> ts) const {
    Cache cc;
    return forward_batch_cached(xs, ts, cc);
}

Image DenoiserModel::forward(const Image& x_t, int t) const {
    const Image* p = &x_t;
    Cache cc;
    return forward_batch_cached({&p, 1}, {&t, 1}, cc)[0];
}

Image DenoiserModel::forward_cached(const Image& x_t, int t, Cache& cache) const {
    const Image* p = &x_t;
    return forward_batch_cached({&p, 1}, {&t, 1}, cache)[0];
}

void DenoiserModel::backward(const Cache& cache, const Image& grad_out,
                             std::span<real> grad) const {
    const Image* p = &grad_out;
    backward_batch(cache, {&p, 1}, grad);
}

// ---------------------------------------------------------------------------
// Eq. 4 loss, training, sampling

std::vector<NoiseDraw> sample_noise_draws(const NoiseSchedule& sched,
                                          const std::vector<Image>& x0, Rng& rng) {
    std::vector<NoiseDraw> draws;
    draws.reserve(x0.size());
    for (const Image& img : x0) {
        NoiseDraw d;
        d.t = 1 + int(rng.uniform_int(sched.T));
        d.eps = Image(img.channels, img.height, img.width);
        for (auto& v : d.eps.v) v = rng.normal();
        draws.push_back(std::move(d));
    }
    return draws;
}

real diffusion_loss(const std::function<Image(const Image&, int, std::size_t)>& eps_theta,
                    const NoiseSchedule& sched, const std::vector<Image>& x0,
                    const std::vector<NoiseDraw>& draws) {
    if (x0.empty() || x0.size() != draws.size())
        throw ShapeError("diffusion_loss: empty batch or draw count mismatch");
    real total = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const Image xt = perturb(x0[i], draws[i].t, draws[i].eps, sched);
        const Image pred = eps_theta(xt, draws[i].t, i);
        require_same_shape(pred, draws[i].eps, "diffusion_loss");
        real mse = 0;
        for (std::size_t k = 0; k < pred.v.size(); ++k) {
            const real d = draws[i].eps.v[k] - pred.v[k];
            mse += d * d;
        }
        total += mse / real(pred.v.size());
    }
    return total / real(x0.size());
}

real denoiser_loss(const DenoiserModel& model, const std::vector<Image>& x0, Rng& rng) {
    const auto draws = sample_noise_draws(model.schedule(), x0, rng);
    return diffusion_loss(
        [&](const Image& xt, int t, std::size_t) { return model.forward(xt, t); },
        model.schedule(), x0, draws);
}

json PriorTrainConfig::to_json() const {
    return json{{"steps", steps}, {"batch", batch},         {"lr", lr},
                {"augment", augment}, {"log_every", log_every}, {"seed", seed}};
}

PriorTrainConfig PriorTrainConfig::from_json(const json& j) {
    PriorTrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.augment = j.value("augment", c.augment);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

Image to_prior_range(const Image& x01) {
    Image out = x01;
    for (auto& v : out.v) v = 2.0 * v - 1.0;
    return out;
}

Image flip_image(const Image& img, bool flip_h, bool flip_v) {
    if (!flip_h && !flip_v) return img;
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y, x) =
                    img.at(c, flip_v ? img.height - 1 - y : y, flip_h ? img.width - 1 - x : x);
    return out;
}

}  // namespace

DenoiserModel train_denoiser(const std::vector<Image>& patches, const DenoiserConfig& cfg,
                             const NoiseSchedule& sched, const PriorTrainConfig& train,
                             std::vector<LossCurvePoint>* curve) {
    if (patches.empty()) throw ConfigError("train_denoiser: empty patch dataset");
    DenoiserModel model(cfg, sched, train.seed);
    model.validate_input(patches[0]);

    AdamState adam(model.param_count());
    std::vector<real> grad(model.param_count(), 0.0);
    Rng rng(mix_seed(train.seed, 0x7a19));

    std::vector<Image> batch_imgs(static_cast<std::size_t>(train.batch));
    std::vector<const Image*> batch_ptrs(static_cast<std::size_t>(train.batch));
    std::vector<int> ts(static_cast<std::size_t>(train.batch));

    for (long step = 1; step <= train.steps; ++step) {
        for (int b = 0; b < train.batch; ++b) {
            const auto idx = std::size_t(rng.uniform_int(std::int64_t(patches.size())));
            bool fh = false, fv = false;
            if (train.augment) {
                fh = rng.uniform() < 0.5;
                fv = rng.uniform() < 0.5;
            }
            batch_imgs[b] = to_prior_range(flip_image(patches[idx], fh, fv));
            batch_ptrs[b] = &batch_imgs[b];
        }
        std::vector<NoiseDraw> draws = sample_noise_draws(sched, batch_imgs, rng);
        std::vector<Image> xts(static_cast<std::size_t>(train.batch));
        for (int b = 0; b < train.batch; ++b) {
            xts[b] = perturb(batch_imgs[b], draws[b].t, draws[b].eps, sched);
            batch_ptrs[b] = &xts[b];
            ts[b] = draws[b].t;
        }
        DenoiserModel::Cache cache;
        const std::vector<Image> preds = model.forward_batch_cached(batch_ptrs, ts, cache);

        real loss = 0;
        std::vector<Image> douts(static_cast<std::size_t>(train.batch));
        const real norm = 1.0 / (real(preds[0].v.size()) * real(train.batch));
        for (int b = 0; b < train.batch; ++b) {
            douts[b] = Image(preds[b].channels, preds[b].height, preds[b].width);
            for (std::size_t k = 0; k < preds[b].v.size(); ++k) {
                const real r = preds[b].v[k] - draws[b].eps.v[k];
                loss += r * r;
                douts[b].v[k] = 2.0 * r * norm;
            }
        }
        loss *= norm;
        if (!std::isfinite(loss))
            throw NumericError("train_denoiser: loss diverged (NaN/inf) at step " +
                               std::to_string(step));

        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<const Image*> dptrs(static_cast<std::size_t>(train.batch));
        for (int b = 0; b < train.batch; ++b) dptrs[b] = &douts[b];
        model.backward_batch(cache, dptrs, grad);
        adam_step(model.params(), grad, adam, train.lr);

        if (curve && (step % std::max(1, train.log_every) == 0 || step == train.steps))
            curve->push_back({step, loss});
    }
    model.steps_trained = train.steps;
    return model;
}

std::vector<Image> ancestral_sample_batch(const DenoiserModel& model, int n, int height,
                                          int width, std::uint64_t seed) {
    if (n < 1) throw ConfigError("ancestral_sample: need n >= 1");
    const NoiseSchedule& sched = model.schedule();
    const int C = model.config().channels;

    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) rngs.emplace_back(mix_seed(seed, 0x5a0 + std::uint64_t(i)));

    std::vector<Image> x(static_cast<std::size_t>(n), Image(C, height, width));
    for (int i = 0; i < n; ++i) {
        model.validate_input(x[i]);
        for (auto& v : x[i].v) v = rngs[i].normal();
    }

    std::vector<const Image*> ptrs(static_cast<std::size_t>(n));
    std::vector<int> ts(static_cast<std::size_t>(n));
    for (int t = sched.T; t >= 1; --t) {
        for (int i = 0; i < n; ++i) {
            ptrs[i] = &x[i];
            ts[i] = t;
        }
        const std::vector<Image> eps = model.forward_batch(ptrs, ts);
        const real a = sched.alpha_at(t);
        const real b = sched.beta_at(t);
        const real ab = sched.a_bar(t);
        const real coef = b / std::sqrt(1.0 - ab);
        const real inv_sqrt_a = 1.0 / std::sqrt(a);
        const real sigma = std::sqrt(b);
        for (int i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < x[i].v.size(); ++k) {
                real mu = (x[i].v[k] - coef * eps[i].v[k]) * inv_sqrt_a;
                if (!std::isfinite(mu))
                    throw NumericError("ancestral_sample: non-finite state at t=" +
                                       std::to_string(t));
                x[i].v[k] = t > 1 ? mu + sigma * rngs[i].normal() : mu;
            }
        }
    }
    for (int i = 0; i < n; ++i)
        for (auto& v : x[i].v) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
    return x;
}

Image ancestral_sample(const DenoiserModel& model, int height, int width, std::uint64_t seed) {
    return ancestral_sample_batch(model, 1, height, width, seed)[0];
}

void save_denoiser(const DenoiserModel& model, const std::filesystem::path& path) {
    const std::filesystem::path payload = path.string() + ".raw";
    std::vector<float> w(model.params().begin(), model.params().end());
    json header = {
        {"version", 1},
        {"kind", "denoiser"},
        {"config", model.config().to_json()},
        {"schedule", model.schedule().to_json()},
        {"normalization", "[0,1]<->[-1,1]"},
        {"seed", model.seed()},
        {"steps", model.steps_trained},
        {"param_count", model.param_count()},
        {"payload", payload.filename().string()},
    };
    write_f32_payload(payload, w);
    atomic_write_json(path, header);
}

DenoiserModel load_denoiser(const std::filesystem::path& path) {
    const json h = read_json_file(path);
    if (h.value("kind", "") != std::string("denoiser"))
        throw FormatError("not a denoiser checkpoint: " + path.string());
    if (h.value("version", 0) != 1)
        throw FormatError("unsupported denoiser checkpoint version in " + path.string());
    const json& sj = h.at("schedule");
    const NoiseSchedule sched = build_schedule(sj.value("T", 1000), sj.value("beta_start", 1e-4),
                                               sj.value("beta_end", 0.02));
    DenoiserModel model(DenoiserConfig::from_json(h.at("config")), sched,
                        h.value("seed", std::uint64_t(0)));
    model.steps_trained = h.value("steps", 0L);
    const std::filesystem::path payload =
        path.parent_path() / h.value("payload", path.filename().string() + ".raw");
    const std::vector<float> w = read_f32_payload(payload, model.param_count());
    std::copy(w.begin(), w.end(), model.params().begin());
    return model;
}

}  // namespace isorec
