#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "isorec/io_util.hpp"
#include "isorec/volume.hpp"

using namespace isorec;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    const fs::path dir = fs::temp_directory_path() / (std::string("isorec_vol_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("normalize_index maps voxel centers into [-1,1]") {
    CHECK(normalize_index(0, 2) == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(normalize_index(1, 2) == doctest::Approx(0.5).epsilon(1e-15));
    // center of an odd axis is exactly 0
    CHECK(normalize_index(3, 7) == doctest::Approx(0.0).epsilon(1e-15));

    SUBCASE("bijection onto an evenly spaced grid with step 2/n") {
        const int n = 17;
        real prev = normalize_index(0, n);
        for (int i = 1; i < n; ++i) {
            const real c = normalize_index(i, n);
            CHECK(c - prev == doctest::Approx(2.0 / n).epsilon(1e-12));
            prev = c;
        }
        CHECK(normalize_index(0, n) == doctest::Approx(-normalize_index(n - 1, n)));
    }

    CHECK_THROWS_AS(normalize_index(-1, 4), ShapeError);
    CHECK_THROWS_AS(normalize_index(4, 4), ShapeError);
    CHECK_THROWS_AS(normalize_index(0, 0), ShapeError);
}

TEST_CASE("expand_slice fixes the plane coordinate") {
    SUBCASE("ZX plan, index 0, dims (2,4,2)") {
        const SlicePlan plan = make_slice_plan(Orientation::ZX, 0, 2, 4, 2);
        CHECK(plan.rows == 2);
        CHECK(plan.cols == 2);
        const CoordMatrix coords = expand_slice(plan);
        REQUIRE(coords.rows() == 4);
        for (int k = 0; k < 4; ++k) CHECK(coords(k, 1) == doctest::Approx(-0.75));
        // row-major: first row varies x fastest
        CHECK(coords(0, 0) == doctest::Approx(normalize_index(0, 2)));
        CHECK(coords(1, 0) == doctest::Approx(normalize_index(0, 2)));
        CHECK(coords(2, 0) == doctest::Approx(normalize_index(1, 2)));
        CHECK(coords(0, 2) == doctest::Approx(normalize_index(0, 2)));
        CHECK(coords(1, 2) == doctest::Approx(normalize_index(1, 2)));
    }

    SUBCASE("XY plan at the center z of an odd axis") {
        const CoordMatrix coords = expand_slice(make_slice_plan(Orientation::XY, 2, 5, 3, 3));
        for (int k = 0; k < coords.rows(); ++k) CHECK(coords(k, 0) == 0.0);
    }

    SUBCASE("orthogonal plans agree exactly on the intersection line") {
        const int nz = 6, ny = 5, nx = 4;
        const int j = 3, i = 2;
        const CoordMatrix zx = expand_slice(make_slice_plan(Orientation::ZX, j, nz, ny, nx));
        const CoordMatrix zy = expand_slice(make_slice_plan(Orientation::ZY, i, nz, ny, nx));
        for (int r = 0; r < nz; ++r) {
            // column i of the ZX slice vs column j of the ZY slice
            for (int a = 0; a < 3; ++a)
                CHECK(zx(r * nx + i, a) == zy(r * ny + j, a));  // exact equality
        }
    }

    SUBCASE("invalid plans are rejected") {
        CHECK_THROWS_AS(expand_slice(make_slice_plan(Orientation::ZX, 9, 4, 4, 4)), ShapeError);
        SlicePlan bad = make_slice_plan(Orientation::XY, 0, 4, 4, 4);
        bad.rows = 2;  // shape no longer spans the free axes
        CHECK_THROWS_AS(expand_slice(bad), ShapeError);
        CHECK_THROWS_AS(orientation_from_name("XZ"), ConfigError);
    }
}

TEST_CASE("slice get/set roundtrip and cross-section consistency") {
    VolumeGrid vol(3, 4, 5, 2);
    Rng rng(7);
    for (auto& v : vol.data) v = float(rng.uniform());

    const Image zx = get_slice(vol, Orientation::ZX, 1);
    CHECK(zx.channels == 2);
    CHECK(zx.height == 3);
    CHECK(zx.width == 5);
    const Image zy = get_slice(vol, Orientation::ZY, 2);
    // shared line (y=1, x=2): column 2 of ZX equals column 1 of ZY
    for (int c = 0; c < 2; ++c)
        for (int z = 0; z < 3; ++z) CHECK(zx.at(c, z, 2) == zy.at(c, z, 1));

    VolumeGrid copy(3, 4, 5, 2);
    for (int y = 0; y < 4; ++y) set_slice(copy, Orientation::ZX, y, get_slice(vol, Orientation::ZX, y));
    CHECK(copy.data == vol.data);
}

TEST_CASE("volume save/load roundtrip is bit-exact") {
    const fs::path dir = temp_dir("roundtrip");
    VolumeGrid vol(2, 3, 4, 2);
    Rng rng(42);
    for (auto& v : vol.data) v = float(rng.uniform());
    vol.spacing = {4.0, 1.0, 1.0};
    vol.scale = {0.5, 0.25};
    vol.offset = {1.0, 2.0};

    const fs::path path = dir / "vol.volume";
    save_volume(vol, path);
    const VolumeGrid back = load_volume(path);
    CHECK(back.data == vol.data);
    CHECK(back.dz == vol.dz);
    CHECK(back.hy == vol.hy);
    CHECK(back.wx == vol.wx);
    CHECK(back.channels == vol.channels);
    CHECK(back.spacing == vol.spacing);
    CHECK(back.scale == vol.scale);
    CHECK(back.offset == vol.offset);
}

TEST_CASE("constant volume payload") {
    const fs::path dir = temp_dir("constant");
    VolumeGrid vol(2, 2, 2, 1, 0.5f);
    save_volume(vol, dir / "c.volume");
    const auto payload = read_f32_payload(dir / "c.volume.raw", 8);
    for (float v : payload) CHECK(v == 0.5f);
}

TEST_CASE("ingestion normalizes out-of-range channels per channel") {
    const fs::path dir = temp_dir("ingest");
    VolumeGrid vol(2, 2, 2, 1);
    for (std::size_t i = 0; i < vol.data.size(); ++i) vol.data[i] = float(i * 255.0 / 7.0);
    // bypass save-side invariants by writing the raw payload directly
    save_volume(vol, dir / "raw.volume");
    const VolumeGrid back = load_volume(dir / "raw.volume");
    CHECK(back.scale[0] == doctest::Approx(1.0 / 255.0).epsilon(1e-12));
    CHECK(back.offset[0] == doctest::Approx(0.0));
    CHECK(back.data.front() == 0.0f);
    CHECK(back.data.back() == 1.0f);
    for (float v : back.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("format errors") {
    const fs::path dir = temp_dir("fmt");
    VolumeGrid vol(2, 2, 2, 1, 0.25f);
    save_volume(vol, dir / "v.volume");

    SUBCASE("payload size mismatch") {
        std::ofstream(dir / "v.volume.raw", std::ios::binary | std::ios::trunc) << "abc";
        CHECK_THROWS_AS(load_volume(dir / "v.volume"), FormatError);
    }
    SUBCASE("unknown version") {
        json h = read_json_file(dir / "v.volume");
        h["version"] = 9;
        atomic_write_json(dir / "v.volume", h);
        CHECK_THROWS_AS(load_volume(dir / "v.volume"), FormatError);
    }
    SUBCASE("unknown dtype") {
        json h = read_json_file(dir / "v.volume");
        h["dtype"] = "f64le";
        atomic_write_json(dir / "v.volume", h);
        CHECK_THROWS_AS(load_volume(dir / "v.volume"), FormatError);
    }
}

TEST_CASE("crop_volume windows align exactly") {
    VolumeGrid vol(6, 6, 6, 1);
    Rng rng(3);
    for (auto& v : vol.data) v = float(rng.uniform());
    const VolumeGrid sub = crop_volume(vol, 1, 2, 3, 4, 3, 2);
    CHECK(sub.dz == 4);
    CHECK(sub.hy == 3);
    CHECK(sub.wx == 2);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 2; ++x)
                CHECK(sub.at(0, z, y, x) == vol.at(0, 1 + z, 2 + y, 3 + x));
    CHECK_THROWS_AS(crop_volume(vol, 4, 0, 0, 4, 1, 1), ShapeError);
}
