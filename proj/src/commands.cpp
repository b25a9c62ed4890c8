#include "isorec/commands.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "isorec/degradation.hpp"
#include "isorec/diffusion.hpp"
#include "isorec/inr.hpp"
#include "isorec/metrics.hpp"
#include "isorec/sds.hpp"
#include "isorec/simulate.hpp"

namespace isorec {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json file_entry(const fs::path& p) {
    return json{{"path", p.string()}, {"hash", hash_file(p)}};
}

void write_manifest(const fs::path& dir, const std::string& command, const json& resolved,
                    const json& inputs, const json& outputs, double seconds,
                    json extra = json::object()) {
    const std::string cfg_text = resolved.dump();
    json m = {
        {"command", command},
        {"config_hash", fnv1a_hex(cfg_text.data(), cfg_text.size())},
        {"resolved_config", resolved},
        {"inputs", inputs},
        {"outputs", outputs},
        {"volatile", {{"duration_seconds", seconds}}},
    };
    for (auto& [k, v] : extra.items()) m[k] = v;
    atomic_write_json(dir / "manifest.json", m);
}

int run_guarded(const char* name, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << name << ": config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << name << ": error: " << e.what() << "\n";
        return 2;
    }
}

json load_config(const fs::path& path, const CliOverrides& ovr) {
    json cfg = read_json_file(path);
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object: " + path.string());
    if (ovr.seed) cfg["seed"] = *ovr.seed;
    if (ovr.out) cfg["out"] = *ovr.out;
    return cfg;
}

fs::path out_dir_of(const json& cfg) {
    const std::string out = cfg.value("out", "");
    if (out.empty()) throw ConfigError("config field 'out' is required");
    return fs::path(out);
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_simulate(const fs::path& config_path, const CliOverrides& ovr) {
    return run_guarded("simulate", [&] {
        Stopwatch watch;
        const json cfg = load_config(config_path, ovr);
        const fs::path out = out_dir_of(cfg);
        const std::uint64_t seed = cfg.value("seed", std::uint64_t(0));

        PhantomSpec spec = PhantomSpec::from_json(cfg.value("phantom", json::object()));
        spec.seed = mix_seed(seed, 0x9e0);
        DegradationOp op = DegradationOp::from_json(cfg.value("degradation", json::object()));
        const json pj = cfg.value("patches", json::object());
        const int patch = pj.value("size", 32);
        const int count = pj.value("count", 2000);
        const std::uint64_t patch_seed = mix_seed(seed, 0x9e1);

        const VolumeGrid gt = make_phantom(spec);
        const VolumeGrid aniso = degrade_volume(gt, op);
        const VolumeGrid patches =
            patches_to_volume(extract_lateral_patches(aniso, patch, count, patch_seed));

        BundlePaths paths{out};
        fs::create_directories(out);
        save_volume(gt, paths.gt());
        save_volume(aniso, paths.aniso());
        save_volume(patches, paths.patches());

        const json resolved = {{"out", out.string()},
                               {"seed", seed},
                               {"phantom", spec.to_json()},
                               {"degradation", op.to_json()},
                               {"patches", {{"size", patch}, {"count", count}}}};
        json bundle = {{"phantom", spec.to_json()},
                       {"degradation", op.to_json()},
                       {"patches", {{"size", patch}, {"count", count}, {"seed", patch_seed}}},
                       {"seed", seed},
                       {"gt_dims", {gt.dz, gt.hy, gt.wx}},
                       {"aniso_dims", {aniso.dz, aniso.hy, aniso.wx}},
                       {"channels", gt.channels}};
        atomic_write_json(paths.meta(), bundle);

        write_manifest(out, "simulate", resolved, json::object(),
                       json{{"gt", file_entry(paths.gt())},
                            {"aniso", file_entry(paths.aniso())},
                            {"patches", file_entry(paths.patches())},
                            {"bundle", file_entry(paths.meta())}},
                       watch.seconds());
    });
}

int cmd_train_prior(const fs::path& config_path, const CliOverrides& ovr) {
    return run_guarded("train-prior", [&] {
        Stopwatch watch;
        const json cfg = load_config(config_path, ovr);
        const fs::path out = out_dir_of(cfg);
        const std::uint64_t seed = cfg.value("seed", std::uint64_t(0));

        const std::string data_path = cfg.value("data", "");
        if (data_path.empty()) throw ConfigError("config field 'data' is required");
        const VolumeGrid stack = load_volume(data_path);
        const std::vector<Image> patches = volume_to_patches(stack);

        DenoiserConfig dcfg = DenoiserConfig::from_json(cfg.value("model", json::object()));
        dcfg.channels = stack.channels;
        const json sj = cfg.value("schedule", json::object());
        const NoiseSchedule sched = build_schedule(
            sj.value("T", 1000), sj.value("beta_start", 1e-4), sj.value("beta_end", 0.02));
        PriorTrainConfig tcfg = PriorTrainConfig::from_json(cfg.value("train", json::object()));
        tcfg.seed = mix_seed(seed, 0x7a0);

        std::vector<LossCurvePoint> curve;
        const DenoiserModel model = train_denoiser(patches, dcfg, sched, tcfg, &curve);

        fs::create_directories(out);
        const fs::path ckpt = out / "denoiser.ckpt";
        save_denoiser(model, ckpt);
        std::ostringstream csv;
        csv << "step,loss\n";
        csv.precision(12);
        for (const auto& p : curve) csv << p.step << "," << p.loss << "\n";
        atomic_write_text(out / "loss.csv", csv.str());

        // recorded validation loss: fixed draws over a small patch subset
        std::vector<Image> val;
        for (std::size_t i = 0; i < patches.size() && val.size() < 16; i += 7) {
            Image img = patches[i];
            for (auto& v : img.v) v = 2.0 * v - 1.0;
            val.push_back(std::move(img));
        }
        Rng val_rng(mix_seed(seed, 0xa1e));
        const real val_loss = denoiser_loss(model, val, val_rng);

        const json resolved = {{"out", out.string()},    {"seed", seed},
                               {"data", data_path},      {"model", dcfg.to_json()},
                               {"schedule", sched.to_json()}, {"train", tcfg.to_json()}};
        write_manifest(out, "train-prior", resolved,
                       json{{"data", file_entry(data_path)}},
                       json{{"checkpoint", file_entry(ckpt)},
                            {"loss_curve", file_entry(out / "loss.csv")}},
                       watch.seconds(),
                       json{{"validation", {{"loss", val_loss}, {"items", val.size()}}}});
    });
}

int cmd_reconstruct(const fs::path& config_path, const CliOverrides& ovr) {
    return run_guarded("reconstruct", [&] {
        Stopwatch watch;
        const json cfg = load_config(config_path, ovr);
        const fs::path out = out_dir_of(cfg);
        const std::uint64_t seed = cfg.value("seed", std::uint64_t(0));

        const std::string meas_path = cfg.value("measurements", "");
        if (meas_path.empty()) throw ConfigError("config field 'measurements' is required");
        const VolumeGrid measurements = load_volume(meas_path);

        DegradationOp op = DegradationOp::from_json(cfg.value("degradation", json::object()));
        InrConfig inr_cfg = InrConfig::from_json(cfg.value("inr", json::object()));
        inr_cfg.channels = measurements.channels;
        SdsConfig sds_cfg = SdsConfig::from_json(cfg.value("sds", json::object()));
        sds_cfg.seed = mix_seed(seed, 0x2ec0);

        const std::string denoiser_path = cfg.value("denoiser", "");
        DenoiserModel denoiser;
        json denoiser_input = json::object();
        if (!denoiser_path.empty()) {
            denoiser = load_denoiser(denoiser_path);
            denoiser_input = file_entry(denoiser_path);
        } else if (sds_cfg.regularizer == Regularizer::Sds && sds_cfg.lambda > 0) {
            throw ConfigError("sds regularizer requires a 'denoiser' checkpoint path");
        } else {
            // placeholder prior; never evaluated for tv/none runs
            denoiser = DenoiserModel(DenoiserConfig{measurements.channels, 1, 1, 2},
                                     build_schedule(sds_cfg.t_start, 1e-4, 0.02), 0);
        }

        std::optional<VolumeGrid> gt;
        const std::string gt_path = cfg.value("gt", "");
        if (!gt_path.empty()) gt = load_volume(gt_path);

        fs::create_directories(out);
        const ReconstructResult result =
            reconstruct(measurements, denoiser, inr_cfg, sds_cfg, op,
                        gt ? &*gt : nullptr, out);

        const fs::path ckpt = out / "inr.ckpt";
        save_inr(result.model, ckpt);
        const VolumeGrid recon =
            export_volume(result.model, measurements.dz * op.factor, measurements.hy,
                          measurements.wx);
        const fs::path recon_path = out / "recon.volume";
        save_volume(recon, recon_path);

        const json resolved = {{"out", out.string()},
                               {"seed", seed},
                               {"measurements", meas_path},
                               {"denoiser", denoiser_path},
                               {"gt", gt_path},
                               {"degradation", op.to_json()},
                               {"inr", inr_cfg.to_json()},
                               {"sds", sds_cfg.to_json()}};
        atomic_write_json(out / "resolved_config.json", resolved);

        json inputs = {{"measurements", file_entry(meas_path)}};
        if (!denoiser_path.empty()) inputs["denoiser"] = denoiser_input;
        if (!gt_path.empty()) inputs["gt"] = file_entry(gt_path);
        json outputs = {{"checkpoint", file_entry(ckpt)},
                        {"volume", file_entry(recon_path)},
                        {"loss_curve", file_entry(out / "loss.csv")}};
        write_manifest(
            out, "reconstruct", resolved, inputs, outputs, watch.seconds(),
            json{{"run",
                  {{"initial_mean_data_fidelity", result.report.initial_mean_data_fidelity},
                   {"final_mean_data_fidelity", result.report.final_mean_data_fidelity},
                   {"total_iters", result.report.total_iters},
                   {"zx_visits", result.report.zx_visits},
                   {"zy_visits", result.report.zy_visits},
                   {"denoiser_checksum_before", result.report.denoiser_checksum_before},
                   {"denoiser_checksum_after", result.report.denoiser_checksum_after}}}});
    });
}

int cmd_evaluate(const fs::path& recon_path, const fs::path& gt_path, const fs::path& out_dir) {
    return run_guarded("evaluate", [&] {
        Stopwatch watch;
        const VolumeGrid recon = load_volume(recon_path);
        const VolumeGrid gt = load_volume(gt_path);
        const MetricsReport report = evaluate_volumes(recon, gt);

        fs::create_directories(out_dir);
        report.write(out_dir / "metrics.json", out_dir / "metrics.csv");

        std::printf("family  slices  mean_psnr_db  mean_ssim\n");
        const std::pair<const char*, const FamilyMeans*> rows[] = {
            {"ZX", &report.zx}, {"ZY", &report.zy}, {"XY", &report.xy}};
        for (auto [name, fm] : rows)
            std::printf("%-6s  %6d  %12.4f  %9.6f\n", name, fm->count, fm->psnr_db,
                        fm->ssim_val);

        const json resolved = {{"recon", recon_path.string()},
                               {"gt", gt_path.string()},
                               {"out", out_dir.string()}};
        write_manifest(out_dir, "evaluate", resolved,
                       json{{"recon", file_entry(recon_path)}, {"gt", file_entry(gt_path)}},
                       json{{"metrics_json", file_entry(out_dir / "metrics.json")},
                            {"metrics_csv", file_entry(out_dir / "metrics.csv")}},
                       watch.seconds());
    });
}

int cmd_sample_prior(const fs::path& checkpoint, int n, std::uint64_t seed,
                     const fs::path& out_dir, int height, int width) {
    return run_guarded("sample-prior", [&] {
        Stopwatch watch;
        if (n < 1) throw ConfigError("sample-prior: n must be >= 1");
        const DenoiserModel model = load_denoiser(checkpoint);
        const std::vector<Image> samples =
            ancestral_sample_batch(model, n, height, width, seed);

        VolumeGrid stack = patches_to_volume(samples);
        fs::create_directories(out_dir);
        const fs::path samples_path = out_dir / "samples.volume";
        save_volume(stack, samples_path);

        const json resolved = {{"checkpoint", checkpoint.string()},
                               {"n", n},
                               {"seed", seed},
                               {"height", height},
                               {"width", width},
                               {"out", out_dir.string()}};
        write_manifest(out_dir, "sample-prior", resolved,
                       json{{"checkpoint", file_entry(checkpoint)}},
                       json{{"samples", file_entry(samples_path)}}, watch.seconds());
    });
}

}  // namespace isorec
