#include "isorec/inr.hpp"

#include <algorithm>
#include <cmath>

namespace isorec {

namespace {
constexpr real kTwoPi = 6.283185307179586476925286766559;
}

FourierEmbedding make_fourier_embedding(int m, real sigma, std::uint64_t seed) {
    if (m < 1) throw ConfigError("FourierEmbedding: m must be >= 1");
    if (!(sigma > 0)) throw ConfigError("FourierEmbedding: sigma must be positive");
    FourierEmbedding emb;
    emb.sigma = sigma;
    emb.seed = seed;
    emb.B.resize(m, 3);
    Rng rng(mix_seed(seed, 0x0f0e));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < 3; ++j) emb.B(i, j) = sigma * rng.normal();
    return emb;
}

MatrixR fourier_embed(const CoordMatrix& coords, const FourierEmbedding& emb) {
    const MatrixR phase = kTwoPi * (coords * emb.B.transpose());  // N x m
    MatrixR out(coords.rows(), 2 * emb.m());
    out.leftCols(emb.m()) = phase.array().sin();
    out.rightCols(emb.m()) = phase.array().cos();
    return out;
}

json InrConfig::to_json() const {
    return json{{"width", width},
                {"depth", depth},
                {"fourier_dim", fourier_dim},
                {"channels", channels},
                {"fourier_sigma", fourier_sigma},
                {"omega_first", omega_first},
                {"omega_hidden", omega_hidden}};
}

InrConfig InrConfig::from_json(const json& j) {
    InrConfig cfg;
    cfg.width = j.value("width", cfg.width);
    cfg.depth = j.value("depth", cfg.depth);
    cfg.fourier_dim = j.value("fourier_dim", cfg.fourier_dim);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.fourier_sigma = j.value("fourier_sigma", cfg.fourier_sigma);
    cfg.omega_first = j.value("omega_first", cfg.omega_first);
    cfg.omega_hidden = j.value("omega_hidden", cfg.omega_hidden);
    return cfg;
}

int InrModel::layer_in(int l) const { return l == 0 ? 2 * cfg_.fourier_dim : cfg_.width; }
int InrModel::layer_out(int l) const { return l == cfg_.depth ? cfg_.channels : cfg_.width; }

std::size_t InrModel::layer_offset(int l) const {
    std::size_t off = 0;
    for (int i = 0; i < l; ++i)
        off += std::size_t(layer_in(i)) * layer_out(i) + layer_out(i);
    return off;
}

Eigen::Map<const MatrixR> InrModel::weight(int l) const {
    return {params_.data() + layer_offset(l), layer_in(l), layer_out(l)};
}
Eigen::Map<const VectorR> InrModel::bias(int l) const {
    return {params_.data() + layer_offset(l) + std::size_t(layer_in(l)) * layer_out(l),
            layer_out(l)};
}
Eigen::Map<MatrixR> InrModel::weight(int l) {
    return {params_.data() + layer_offset(l), layer_in(l), layer_out(l)};
}
Eigen::Map<VectorR> InrModel::bias(int l) {
    return {params_.data() + layer_offset(l) + std::size_t(layer_in(l)) * layer_out(l),
            layer_out(l)};
}

InrModel::InrModel(const InrConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg.width < 1 || cfg.depth < 1 || cfg.fourier_dim < 1 || cfg.channels < 1)
        throw ConfigError("InrConfig: widths, depth and channels must be positive");
    emb_ = make_fourier_embedding(cfg.fourier_dim, cfg.fourier_sigma, mix_seed(seed, 1));
    params_.assign(layer_offset(n_layers()), 0.0);

    Rng rng(mix_seed(seed, 2));
    for (int l = 0; l <= cfg_.depth; ++l) {
        const real bound = std::sqrt(6.0 / real(layer_in(l))) / omega(l);
        auto W = weight(l);
        for (int i = 0; i < W.rows(); ++i)
            for (int j = 0; j < W.cols(); ++j) W(i, j) = rng.uniform(-bound, bound);
        bias(l).setZero();
    }
}

InrModel init_inr(const InrConfig& cfg, std::uint64_t seed) { return InrModel(cfg, seed); }

// Inference evaluates one coordinate at a time with an identical code path,
// so a coordinate's value never depends on its position in the batch. This
// is what makes orthogonal slice queries agree bitwise on shared lines.
// (The cached/training path below uses batched GEMMs instead.)
MatrixR InrModel::forward(const CoordMatrix& coords) const {
    const int m = emb_.m();
    MatrixR out(coords.rows(), cfg_.channels);
    VectorR feat(2 * m), act(cfg_.width), pre;
    for (Eigen::Index r = 0; r < coords.rows(); ++r) {
        for (int i = 0; i < m; ++i) {
            const real phase = kTwoPi * (emb_.B(i, 0) * coords(r, 0) +
                                         emb_.B(i, 1) * coords(r, 1) +
                                         emb_.B(i, 2) * coords(r, 2));
            feat[i] = std::sin(phase);
            feat[m + i] = std::cos(phase);
        }
        const VectorR* in = &feat;
        for (int l = 0; l < cfg_.depth; ++l) {
            pre.noalias() = weight(l).transpose() * (*in);
            pre += bias(l);
            for (int j = 0; j < cfg_.width; ++j) act[j] = std::sin(omega(l) * pre[j]);
            in = &act;
        }
        out.row(r).noalias() = (weight(cfg_.depth).transpose() * (*in)).transpose();
        out.row(r) += bias(cfg_.depth).transpose();
    }
    return out;
}

MatrixR InrModel::forward_cached(const CoordMatrix& coords, Cache& cache) const {
    cache.input = fourier_embed(coords, emb_);
    cache.preact.resize(std::size_t(cfg_.depth));
    cache.act.resize(std::size_t(cfg_.depth));
    const MatrixR* a = &cache.input;
    for (int l = 0; l < cfg_.depth; ++l) {
        cache.preact[l] = omega(l) * ((*a * weight(l)).rowwise() + bias(l).transpose());
        cache.act[l] = cache.preact[l].array().sin();
        a = &cache.act[l];
    }
    return (*a * weight(cfg_.depth)).rowwise() + bias(cfg_.depth).transpose();
}

void InrModel::backward(const Cache& cache, const MatrixR& grad_out, std::span<real> grad) const {
    if (grad.size() != params_.size())
        throw ShapeError("InrModel::backward: gradient buffer size mismatch");
    auto grad_w = [&](int l) {
        return Eigen::Map<MatrixR>(grad.data() + layer_offset(l), layer_in(l), layer_out(l));
    };
    auto grad_b = [&](int l) {
        return Eigen::Map<VectorR>(
            grad.data() + layer_offset(l) + std::size_t(layer_in(l)) * layer_out(l),
            layer_out(l));
    };

    const MatrixR& last_act = cfg_.depth > 0 ? cache.act[cfg_.depth - 1] : cache.input;
    grad_w(cfg_.depth).noalias() += last_act.transpose() * grad_out;
    grad_b(cfg_.depth).noalias() += grad_out.colwise().sum().transpose();
    MatrixR g = grad_out * weight(cfg_.depth).transpose();

    for (int l = cfg_.depth - 1; l >= 0; --l) {
        // d/dz sin(z) = cos(z); the omega factor belongs to the affine map.
        MatrixR dz = (g.array() * cache.preact[l].array().cos()).matrix() * omega(l);
        const MatrixR& in = l == 0 ? cache.input : cache.act[l - 1];
        grad_w(l).noalias() += in.transpose() * dz;
        grad_b(l).noalias() += dz.colwise().sum().transpose();
        if (l > 0) g.noalias() = dz * weight(l).transpose();
    }
}

Image query_slice(const InrModel& model, const SlicePlan& plan) {
    validate_plan(plan);
    const MatrixR out = model.forward(expand_slice(plan));  // (rows*cols) x C
    Image img(model.config().channels, plan.rows, plan.cols);
    for (int c = 0; c < img.channels; ++c)
        for (int r = 0; r < plan.rows; ++r)
            for (int x = 0; x < plan.cols; ++x)
                img.at(c, r, x) = out(Eigen::Index(r) * plan.cols + x, c);
    return img;
}

VolumeGrid export_volume(const InrModel& model, int nz, int ny, int nx) {
    VolumeGrid vol(nz, ny, nx, model.config().channels);
    for (int z = 0; z < nz; ++z) {
        Image img = query_slice(model, make_slice_plan(Orientation::XY, z, nz, ny, nx));
        for (auto& v : img.v) v = std::clamp(v, 0.0, 1.0);
        set_slice(vol, Orientation::XY, z, img);
    }
    return vol;
}

void save_inr(const InrModel& model, const std::filesystem::path& path) {
    const std::filesystem::path payload = path.string() + ".raw";
    std::vector<float> w(model.params_.begin(), model.params_.end());
    json header = {
        {"version", 1},
        {"kind", "inr"},
        {"config", model.cfg_.to_json()},
        {"seed", model.seed_},
        {"step", model.step},
        {"param_count", model.param_count()},
        {"payload", payload.filename().string()},
    };
    write_f32_payload(payload, w);
    atomic_write_json(path, header);
}

InrModel load_inr(const std::filesystem::path& path) {
    const json h = read_json_file(path);
    if (h.value("kind", "") != std::string("inr"))
        throw FormatError("not an INR checkpoint: " + path.string());
    if (h.value("version", 0) != 1)
        throw FormatError("unsupported INR checkpoint version in " + path.string());
    InrModel model(InrConfig::from_json(h.at("config")), h.value("seed", std::uint64_t(0)));
    model.step = h.value("step", 0L);
    const std::filesystem::path payload =
        path.parent_path() / h.value("payload", path.filename().string() + ".raw");
    const std::vector<float> w = read_f32_payload(payload, model.param_count());
    std::copy(w.begin(), w.end(), model.params_.begin());
    return model;
}

std::string param_checksum(std::span<const real> params) {
    return fnv1a_hex(params.data(), params.size_bytes());
}

}  // namespace isorec
