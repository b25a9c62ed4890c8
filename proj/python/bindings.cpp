#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "isorec/commands.hpp"
#include "isorec/degradation.hpp"
#include "isorec/diffusion.hpp"
#include "isorec/inr.hpp"
#include "isorec/metrics.hpp"
#include "isorec/sds.hpp"
#include "isorec/simulate.hpp"
#include "isorec/volume.hpp"

namespace py = pybind11;
using namespace isorec;

namespace {

using VolArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ImgArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

VolumeGrid volume_from_numpy(const VolArray& arr) {
    const auto buf = arr.request();
    int c = 1, dz, hy, wx;
    if (buf.ndim == 4) {
        c = int(buf.shape[0]);
        dz = int(buf.shape[1]);
        hy = int(buf.shape[2]);
        wx = int(buf.shape[3]);
    } else if (buf.ndim == 3) {
        dz = int(buf.shape[0]);
        hy = int(buf.shape[1]);
        wx = int(buf.shape[2]);
    } else {
        throw ShapeError("expected a (D,H,W) or (C,D,H,W) array");
    }
    VolumeGrid vol(dz, hy, wx, c);
    const float* src = static_cast<const float*>(buf.ptr);
    std::copy(src, src + vol.size(), vol.data.begin());
    return vol;
}

VolArray volume_to_numpy(const VolumeGrid& vol) {
    VolArray arr({py::ssize_t(vol.channels), py::ssize_t(vol.dz), py::ssize_t(vol.hy),
                  py::ssize_t(vol.wx)});
    std::copy(vol.data.begin(), vol.data.end(), static_cast<float*>(arr.request().ptr));
    return arr;
}

Image image_from_numpy(const ImgArray& arr) {
    const auto buf = arr.request();
    int c = 1, h, w;
    if (buf.ndim == 3) {
        c = int(buf.shape[0]);
        h = int(buf.shape[1]);
        w = int(buf.shape[2]);
    } else if (buf.ndim == 2) {
        h = int(buf.shape[0]);
        w = int(buf.shape[1]);
    } else {
        throw ShapeError("expected a (H,W) or (C,H,W) array");
    }
    Image img(c, h, w);
    const double* src = static_cast<const double*>(buf.ptr);
    std::copy(src, src + img.v.size(), img.v.begin());
    return img;
}

ImgArray image_to_numpy(const Image& img) {
    ImgArray arr({py::ssize_t(img.channels), py::ssize_t(img.height), py::ssize_t(img.width)});
    std::copy(img.v.begin(), img.v.end(), static_cast<double*>(arr.request().ptr));
    return arr;
}

DegradationOp op_from_kwargs(const std::string& mode, int factor, double sigma_z,
                             int kernel_radius, int phase) {
    if (mode == "gaussian_subsample")
        return DegradationOp::gaussian(factor, sigma_z, kernel_radius, phase);
    if (mode == "linear_average") return DegradationOp::linear_average(factor, phase);
    throw ConfigError("unknown degradation mode: " + mode);
}

}  // namespace

PYBIND11_MODULE(_isorec, m) {
    m.doc() = "reference-free axial super-resolution: INR + 2D diffusion prior";

    py::register_exception<ConfigError>(m, "IsorecConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "IsorecShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "IsorecFormatError", PyExc_IOError);

    // volume io
    m.def(
        "load_volume",
        [](const std::filesystem::path& path) {
            const VolumeGrid vol = load_volume(path);
            py::dict meta;
            meta["spacing"] = vol.spacing;
            meta["scale"] = vol.scale;
            meta["offset"] = vol.offset;
            return py::make_tuple(volume_to_numpy(vol), meta);
        },
        py::arg("path"), "Load a .volume file; returns (array[C,D,H,W], metadata dict).");
    m.def(
        "save_volume",
        [](const VolArray& arr, const std::filesystem::path& path,
           std::array<double, 3> spacing) {
            VolumeGrid vol = volume_from_numpy(arr);
            vol.spacing = spacing;
            save_volume(vol, path);
        },
        py::arg("array"), py::arg("path"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0});

    // simulation
    m.def(
        "make_phantom",
        [](const std::string& spec_json) {
            return volume_to_numpy(make_phantom(PhantomSpec::from_json(json::parse(spec_json))));
        },
        py::arg("spec_json") = "{}",
        "Procedural ground-truth phantom from a JSON spec string.");
    m.def(
        "simulate_anisotropic",
        [](const VolArray& gt, double sigma_z, int factor) {
            return volume_to_numpy(simulate_anisotropic(volume_from_numpy(gt), sigma_z, factor));
        },
        py::arg("gt"), py::arg("sigma_z"), py::arg("factor"));

    // degradation operator
    m.def(
        "degrade_volume",
        [](const VolArray& vol, const std::string& mode, int factor, double sigma_z,
           int kernel_radius, int phase) {
            return volume_to_numpy(degrade_volume(
                volume_from_numpy(vol),
                op_from_kwargs(mode, factor, sigma_z, kernel_radius, phase)));
        },
        py::arg("volume"), py::arg("mode") = "gaussian_subsample", py::arg("factor") = 4,
        py::arg("sigma_z") = 2.0, py::arg("kernel_radius") = -1, py::arg("phase") = -1);
    m.def("gaussian_kernel_1d", &gaussian_kernel_1d, py::arg("sigma"), py::arg("radius"));

    // baseline + metrics
    m.def(
        "linear_interp_volume",
        [](const VolArray& vol, int factor, int phase) {
            return volume_to_numpy(linear_interp_volume(volume_from_numpy(vol), factor, phase));
        },
        py::arg("volume"), py::arg("factor"), py::arg("phase") = -1);
    m.def(
        "psnr",
        [](const ImgArray& a, const ImgArray& b, double peak) {
            return psnr(image_from_numpy(a), image_from_numpy(b), peak);
        },
        py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
    m.def(
        "ssim",
        [](const ImgArray& a, const ImgArray& b) {
            return ssim(image_from_numpy(a), image_from_numpy(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "evaluate_volumes",
        [](const VolArray& recon, const VolArray& gt) {
            const MetricsReport rep =
                evaluate_volumes(volume_from_numpy(recon), volume_from_numpy(gt));
            return py::module_::import("json").attr("loads")(rep.to_json().dump());
        },
        py::arg("recon"), py::arg("gt"));

    // diffusion pieces
    m.def(
        "build_schedule",
        [](int T, double beta_start, double beta_end) {
            const NoiseSchedule s = build_schedule(T, beta_start, beta_end);
            py::dict d;
            d["T"] = s.T;
            d["beta"] = s.beta;
            d["alpha"] = s.alpha;
            d["alpha_bar"] = s.alpha_bar;
            return d;
        },
        py::arg("T") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
    m.def(
        "sample_prior",
        [](const std::filesystem::path& checkpoint, int n, int height, int width,
           std::uint64_t seed) {
            const DenoiserModel model = load_denoiser(checkpoint);
            return volume_to_numpy(
                patches_to_volume(ancestral_sample_batch(model, n, height, width, seed)));
        },
        py::arg("checkpoint"), py::arg("n") = 16, py::arg("height") = 32, py::arg("width") = 32,
        py::arg("seed") = 0);

    // trained INR access
    py::class_<InrModel>(m, "InrModel")
        .def_static("load", [](const std::filesystem::path& p) { return load_inr(p); })
        .def_property_readonly("step", [](const InrModel& mdl) { return mdl.step; })
        .def_property_readonly("param_count",
                               [](const InrModel& mdl) { return mdl.param_count(); })
        .def(
            "query_slice",
            [](const InrModel& model, const std::string& orientation, int index, int nz, int ny,
               int nx) {
                return image_to_numpy(query_slice(
                    model,
                    make_slice_plan(orientation_from_name(orientation), index, nz, ny, nx)));
            },
            py::arg("orientation"), py::arg("index"), py::arg("nz"), py::arg("ny"),
            py::arg("nx"))
        .def(
            "export_volume",
            [](const InrModel& model, int nz, int ny, int nx) {
                return volume_to_numpy(export_volume(model, nz, ny, nx));
            },
            py::arg("nz"), py::arg("ny"), py::arg("nx"));

    // pipeline commands (config-file driven, same as the CLI)
    m.def(
        "run_simulate", [](const std::filesystem::path& cfg) { return cmd_simulate(cfg); },
        py::arg("config"));
    m.def(
        "run_train_prior", [](const std::filesystem::path& cfg) { return cmd_train_prior(cfg); },
        py::arg("config"));
    m.def(
        "run_reconstruct", [](const std::filesystem::path& cfg) { return cmd_reconstruct(cfg); },
        py::arg("config"));
    m.def(
        "run_evaluate",
        [](const std::filesystem::path& recon, const std::filesystem::path& gt,
           const std::filesystem::path& out) { return cmd_evaluate(recon, gt, out); },
        py::arg("recon"), py::arg("gt"), py::arg("out"));
}
