#include <CLI11.hpp>

#include <cstdint>
#include <string>

#include "isorec/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"isorec: reference-free axial super-resolution toolkit"};
    app.require_subcommand(1);

    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;

    auto add_common = [&](CLI::App* sub, bool config_required = true) {
        auto* copt = sub->add_option("--config", config, "JSON config file");
        if (config_required) copt->required();
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--out", out, "override the output directory");
    };

    auto* sim = app.add_subcommand("simulate", "generate a phantom bundle (gt/aniso/patches)");
    add_common(sim);
    auto* train = app.add_subcommand("train-prior", "train the 2D diffusion prior on lateral patches");
    add_common(train);
    auto* rec = app.add_subcommand("reconstruct", "optimize the INR against measurements + prior");
    add_common(rec);

    auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM report for recon vs ground truth");
    std::string recon_path, gt_path, eval_out;
    eval->add_option("--recon", recon_path, "reconstructed volume")->required();
    eval->add_option("--gt", gt_path, "ground-truth volume")->required();
    eval->add_option("--out", eval_out, "output directory")->required();

    auto* sample = app.add_subcommand("sample-prior", "draw ancestral samples from a trained prior");
    std::string ckpt_path, sample_out;
    int n = 16, height = 32, width = 32;
    std::uint64_t sample_seed = 0;
    sample->add_option("--checkpoint", ckpt_path, "denoiser checkpoint")->required();
    sample->add_option("--n", n, "number of samples");
    sample->add_option("--seed", sample_seed, "sampling seed");
    sample->add_option("--height", height, "sample height");
    sample->add_option("--width", width, "sample width");
    sample->add_option("--out", sample_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    isorec::CliOverrides ovr;
    if (seed_set) ovr.seed = seed;
    if (!out.empty()) ovr.out = out;

    if (sim->parsed()) return isorec::cmd_simulate(config, ovr);
    if (train->parsed()) return isorec::cmd_train_prior(config, ovr);
    if (rec->parsed()) return isorec::cmd_reconstruct(config, ovr);
    if (eval->parsed()) return isorec::cmd_evaluate(recon_path, gt_path, eval_out);
    if (sample->parsed()) return isorec::cmd_sample_prior(ckpt_path, n, sample_seed, sample_out,
                                                          height, width);
    return 1;
}
