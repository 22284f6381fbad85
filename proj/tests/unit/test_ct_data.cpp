#include <doctest.h>

#include "ndk/ct/metaimage.hpp"
#include "ndk/ct/phantom.hpp"
#include "ndk/ct/preprocess.hpp"
#include "ndk/ct/records.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ndk;
using namespace ndk::ct;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "ndk_test_ct";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string header_2cube(const std::string& raw, const std::string& extra = "") {
  return "ObjectType = Image\nNDims = 3\nBinaryData = True\n" + extra +
         "ElementSpacing = 0.7 0.7 2.5\nOffset = -10 -20 -30\nDimSize = 2 2 2\nElementType = MET_SHORT\n"
         "ElementDataFile = " +
         raw + "\n";
}

}  // namespace

TEST_CASE("read_metaimage: zeros with stated spacing") {
  write_text(scratch("zeros.raw"), std::string(16, '\0'));
  write_text(scratch("zeros.mhd"), header_2cube("zeros.raw"));
  const CtScan scan = read_ct_scan(scratch("zeros.mhd"));
  CHECK(scan.series_id == "zeros");
  CHECK(scan.hu.extent == Index3{2, 2, 2});
  CHECK(scan.hu.spacing.isApprox(Vec3(0.7, 0.7, 2.5)));
  CHECK(scan.hu.origin.isApprox(Vec3(-10, -20, -30)));
  for (auto v : scan.hu.voxels) CHECK(v == 0);
}

TEST_CASE("read_metaimage: x-fastest little-endian order, MSB swap, LOCAL data") {
  std::string raw;
  for (int i = 0; i < 8; ++i) {
    raw.push_back(static_cast<char>(i + 1));
    raw.push_back(static_cast<char>(i == 7 ? 0xff : 0));
  }
  write_text(scratch("order.raw"), raw);
  write_text(scratch("order.mhd"), header_2cube("order.raw"));
  auto v = read_metaimage<std::int16_t>(scratch("order.mhd"));
  CHECK(v.at(0, 0, 1) == 2);
  CHECK(v.at(0, 1, 0) == 3);
  CHECK(v.at(1, 0, 0) == 5);
  CHECK(v.at(1, 1, 1) == static_cast<std::int16_t>(0xff08));

  write_text(scratch("msb.mhd"), header_2cube("order.raw", "BinaryDataByteOrderMSB = True\n"));
  auto m = read_metaimage<std::int16_t>(scratch("msb.mhd"));
  CHECK(m.at(0, 0, 0) == 0x0100);

  write_text(scratch("local.mha"), header_2cube("LOCAL") + raw);
  CHECK(read_metaimage<std::int16_t>(scratch("local.mha")).voxels == v.voxels);
}

TEST_CASE("metaimage round trips bit-exactly for every element type") {
  std::mt19937_64 rng(1);
  Volume<std::int16_t> hu({3, 4, 5});
  hu.spacing = {0.625, 0.625, 1.25};
  hu.origin = {-187.3, 12.0, -0.1};
  std::uniform_int_distribution<int> d(-32768, 32767);
  for (auto& v : hu.voxels) v = static_cast<std::int16_t>(d(rng));
  write_metaimage(scratch("rt.mhd"), hu);
  auto back = read_metaimage<std::int16_t>(scratch("rt.mhd"));
  CHECK(back.voxels == hu.voxels);
  CHECK(back.spacing == hu.spacing);
  CHECK(back.origin == hu.origin);

  Volume<std::uint8_t> mask({2, 3, 4}, 1);
  mask.at(1, 2, 3) = 0;
  write_metaimage(scratch("mask.mhd"), mask);
  CHECK(read_metaimage<std::uint8_t>(scratch("mask.mhd")).voxels == mask.voxels);

  Volume<float> g({2, 2, 2}, 127.5f);
  g.voxels[3] = -0.0f;
  write_metaimage(scratch("gray.mhd"), g);
  auto gb = read_metaimage<float>(scratch("gray.mhd"));
  CHECK(std::memcmp(gb.voxels.data(), g.voxels.data(), 8 * sizeof(float)) == 0);
}

TEST_CASE("read_metaimage error paths") {
  write_text(scratch("short.raw"), std::string(14, '\0'));
  write_text(scratch("short.mhd"), header_2cube("short.raw"));
  CHECK_THROWS_WITH_AS(read_ct_scan(scratch("short.mhd")), doctest::Contains("promises 16 bytes, found 14"),
                       MetaImageError);

  write_text(scratch("nodim.mhd"), "ElementType = MET_SHORT\nElementSpacing = 1 1 1\nElementDataFile = x.raw\n");
  CHECK_THROWS_WITH_AS(read_ct_scan(scratch("nodim.mhd")), doctest::Contains("DimSize"), MetaImageError);

  std::string dbl = header_2cube("zeros.raw");
  dbl.replace(dbl.find("MET_SHORT"), 9, "MET_DOUBLE");
  write_text(scratch("dbl.mhd"), dbl);
  CHECK_THROWS_WITH_AS(read_ct_scan(scratch("dbl.mhd")), doctest::Contains("MET_DOUBLE"), MetaImageError);

  write_text(scratch("zip.mhd"), header_2cube("zeros.raw", "CompressedData = True\n"));
  CHECK_THROWS_AS(read_ct_scan(scratch("zip.mhd")), MetaImageError);

  CHECK_THROWS_AS(read_metaimage<std::uint8_t>(scratch("zeros.mhd")), MetaImageError);
}

TEST_CASE("hu_window_normalize: endpoints, midpoint, clamping, monotonicity") {
  CHECK(hu_to_gray(-1200) == 0.0f);
  CHECK(hu_to_gray(600) == 255.0f);
  CHECK(hu_to_gray(-300) == doctest::Approx(127.5));
  CHECK(hu_to_gray(-2000) == 0.0f);
  CHECK(hu_to_gray(3000) == 255.0f);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> d(-32768, 32767);
  for (int i = 0; i < 2000; ++i) {
    int a = d(rng), b = d(rng);
    if (a > b) std::swap(a, b);
    CHECK(hu_to_gray(a) <= hu_to_gray(b));
  }
  for (int hu = -1200; hu <= 600; hu += 37) CHECK(gray_to_hu(hu_to_gray(hu)) == doctest::Approx(hu).epsilon(1e-5));

  Volume<std::int16_t> v({1, 1, 3});
  v.voxels = {-1200, -300, 600};
  v.spacing = {2, 2, 2};
  auto g = hu_window_normalize(v);
  CHECK(g.voxels == std::vector<float>{0.0f, 127.5f, 255.0f});
  CHECK(g.spacing == v.spacing);
}

TEST_CASE("resample_isotropic") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 255);

  SUBCASE("1 mm input is unchanged") {
    Volume<float> v({4, 5, 6});
    for (auto& x : v.voxels) x = static_cast<float>(u(rng));
    auto r = resample_isotropic(v);
    CHECK(r.extent == v.extent);
    CHECK(r.voxels == v.voxels);
  }
  SUBCASE("constant input stays constant") {
    Volume<float> v({5, 7, 3}, 42.0f);
    v.spacing = {0.7, 1.3, 2.5};
    auto r = resample_isotropic(v);
    CHECK(r.extent == Index3{13, 9, 2});
    for (float x : r.voxels) CHECK(x == doctest::Approx(42.0));
  }
  SUBCASE("ramp along x at 2 mm halves the per-voxel slope") {
    Volume<float> v({2, 3, 8});
    v.spacing = {2, 1, 1};
    for (Index z = 0; z < 2; ++z)
      for (Index y = 0; y < 3; ++y)
        for (Index x = 0; x < 8; ++x) v.at(z, y, x) = static_cast<float>(x);
    auto r = resample_isotropic(v);
    REQUIRE(r.extent == Index3{2, 3, 16});
    for (Index x = 0; x <= 14; ++x) CHECK(r.at(1, 1, x) == doctest::Approx(0.5 * x).epsilon(1e-5));
    CHECK(r.at(0, 0, 15) == doctest::Approx(7.0));
  }
  SUBCASE("no overshoot on random data") {
    for (int t = 0; t < 10; ++t) {
      Volume<float> v({3, 4, 5});
      v.spacing = {0.5 + t * 0.2, 1.7, 0.9};
      for (auto& x : v.voxels) x = static_cast<float>(u(rng));
      const auto [lo, hi] = std::minmax_element(v.voxels.begin(), v.voxels.end());
      for (float x : resample_isotropic(v).voxels) {
        CHECK(x >= *lo - 1e-4f);
        CHECK(x <= *hi + 1e-4f);
      }
    }
  }
  SUBCASE("degenerate target extent") {
    Volume<float> v({1, 1, 1});
    v.spacing = {0.2, 1, 1};
    CHECK_THROWS_AS(resample_isotropic(v), std::invalid_argument);
  }
}

TEST_CASE("preprocess applies the resampled mask") {
  CtScan scan{"s", Volume<std::int16_t>({2, 2, 2}, 0)};
  scan.hu.spacing = {2, 2, 2};
  Volume<std::uint8_t> mask({2, 2, 2}, 1);
  mask.at(0, 0, 0) = 0;
  auto nv = preprocess(scan, &mask);
  REQUIRE(nv.mask);
  CHECK(nv.gray.extent == Index3{4, 4, 4});
  CHECK(nv.gray.at(0, 0, 0) == 0.0f);
  CHECK(nv.gray.at(3, 3, 3) == doctest::Approx(170.0));
  CHECK(nv.mask->at(0, 0, 0) == 0);
  // Output x = 1 sits at source x = 0.5, which rounds to source voxel 1.
  CHECK(nv.mask->at(0, 0, 1) == 1);
}

TEST_CASE("world_to_voxel and inverse") {
  Volume<float> v({200, 200, 200});
  v.origin = {-100, -100, -100};
  CHECK(world_to_voxel(Vec3(0, 0, 0), v).isApprox(Vec3(100, 100, 100)));
  CHECK(world_to_voxel(v.origin, v).norm() == 0.0);
  v.spacing = {0.7, 0.8, 2.5};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-300, 300);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK((voxel_to_world(world_to_voxel(p, v), v) - p).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(inside_grid(Vec3(0, 0, 0), v));
  CHECK_FALSE(inside_grid(Vec3(-1, 0, 0), v));
}

TEST_CASE("extract_tiles") {
  CHECK(tile_starts(160, 96, 64) == std::vector<Index>{0, 64});
  CHECK(tile_starts(200, 96, 64) == std::vector<Index>{0, 64, 104});
  CHECK(tile_starts(96, 96, 64) == std::vector<Index>{0});

  Volume<float> one({96, 96, 96}, 1.0f);
  auto t1 = extract_tiles(one);
  REQUIRE(t1.size() == 1);
  CHECK(t1[0].offset == Index3{0, 0, 0});

  Volume<float> big({160, 160, 160}, 1.0f);
  auto t8 = extract_tiles(big);
  REQUIRE(t8.size() == 8);
  for (const auto& t : t8) {
    CHECK((t.offset.z == 0 || t.offset.z == 64));
    CHECK((t.offset.x == 0 || t.offset.x == 64));
  }

  Volume<float> small({50, 50, 50}, 7.0f);
  auto tp = extract_tiles(small);
  REQUIRE(tp.size() == 1);
  const auto& pv = tp[0].volume;
  CHECK(pv.extent == Index3{96, 96, 96});
  CHECK(pv.at(49, 49, 49) == 7.0f);
  for (Index z = 0; z < 96; ++z)
    for (Index y = 0; y < 96; ++y)
      for (Index x = 50; x < 96; ++x) REQUIRE(pv.at(z, y, x) == 0.0f);

  // Coverage: every voxel appears in some tile and each tile lies within the volume.
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> ext(20, 140);
  for (int trial = 0; trial < 10; ++trial) {
    const Index3 e{ext(rng), ext(rng), ext(rng)};
    for (Index n : {e.z, e.y, e.x}) {
      const auto starts = tile_starts(n, 48, 32);
      std::vector<int> hit(static_cast<std::size_t>(n), 0);
      for (Index s : starts) {
        CHECK(s >= 0);
        CHECK((s + 48 <= n || s == 0));
        for (Index i = s; i < std::min(n, s + 48); ++i) hit[static_cast<std::size_t>(i)] = 1;
      }
      CHECK(std::count(hit.begin(), hit.end(), 0) == 0);
    }
  }
}

TEST_CASE("generate_phantom") {
  PhantomConfig cfg;
  cfg.seed = 11;
  const Phantom a = generate_phantom(cfg, "p0");
  const Phantom b = generate_phantom(cfg, "p0");
  CHECK(a.volume.gray.voxels == b.volume.gray.voxels);
  CHECK(a.nodules.size() == static_cast<std::size_t>(cfg.nodule_count));
  CHECK(a.vessels.size() == static_cast<std::size_t>(cfg.vessel_count));

  cfg.seed = 12;
  CHECK(generate_phantom(cfg, "p0").volume.gray.voxels != a.volume.gray.voxels);

  for (const auto& n : a.nodules) {
    CHECK(n.diameter >= cfg.diameter_min);
    CHECK(n.diameter <= cfg.diameter_max);
    const Vec3 c = world_to_voxel(n.center, a.volume.gray);
    CHECK(inside_grid(c, a.volume.gray));
    // Core of the sphere vs. the nearby background shell.
    const double r = n.diameter / 2;
    double core = 0, ring = 0;
    int nc = 0, nr = 0;
    for (Index z = 0; z < cfg.extent.z; ++z)
      for (Index y = 0; y < cfg.extent.y - cfg.wall_thickness; ++y)
        for (Index x = 0; x < cfg.extent.x; ++x) {
          const double d = (Vec3(x, y, z) - c).norm();
          if (d <= r / 2) core += a.volume.gray.at(z, y, x), ++nc;
          if (d >= r + 3 && d <= r + 5 && std::abs(y - c.y()) < 2) ring += a.volume.gray.at(z, y, x), ++nr;
        }
    REQUIRE(nc > 0);
    REQUIRE(nr > 0);
    const double excess = core / nc - ring / nr;
    CHECK(excess == doctest::Approx(cfg.nodule_contrast).epsilon(0.05));
  }

  const auto& mask = *a.volume.mask;
  CHECK(mask.at(0, cfg.extent.y - 1, 0) == 0);
  CHECK(mask.at(0, 0, 0) == 1);
  const auto masked = masked_gray(a.volume);
  CHECK(masked.at(5, cfg.extent.y - 2, 5) == 0.0f);

  const CtScan ct = phantom_to_ct(a.volume);
  const auto back = hu_window_normalize(ct.hu);
  for (std::size_t i = 0; i < back.voxels.size(); i += 97) {
    CHECK(std::abs(back.voxels[i] - a.volume.gray.voxels[i]) <= 0.1f);
  }

  PhantomConfig bad;
  bad.diameter_max = 40;
  CHECK_THROWS_WITH_AS(generate_phantom(bad, "x"), doctest::Contains("diameter"), std::invalid_argument);
  PhantomConfig crowded;
  crowded.nodule_count = 60;
  crowded.max_retries = 20;
  CHECK_THROWS_AS(generate_phantom(crowded, "x"), std::runtime_error);
}

TEST_CASE("annotation and candidate CSV round trips") {
  std::vector<NoduleAnnotation> anns{{"a", {-1.5, 2.25, 1e-3}, 10.0}, {"b", {0.1, 0.2, 0.3}, 3.7}};
  std::stringstream ss;
  write_annotations(ss, anns);
  std::size_t odd = 99;
  auto back = parse_annotations(ss, &odd);
  REQUIRE(back.size() == 2);
  CHECK(odd == 0);
  CHECK(back[1].center == anns[1].center);
  CHECK(back[1].diameter == anns[1].diameter);

  std::vector<Candidate> cands{{"a", {1.0 / 3, -2, 5}, 7.5, 0.123456789}};
  std::stringstream cs;
  write_candidates(cs, cands);
  auto cb = parse_candidates(cs);
  REQUIRE(cb.size() == 1);
  CHECK(cb[0].center.x() == 1.0 / 3);
  CHECK(cb[0].score == 0.123456789);

  std::stringstream wrong("seriesuid,x\n");
  CHECK_THROWS_AS(parse_annotations(wrong), CsvError);
  std::stringstream bad_row(std::string(kAnnotationHeader) + "\na,1,2,3\n");
  CHECK_THROWS_WITH_AS(parse_annotations(bad_row), doctest::Contains("line 2"), CsvError);
  std::stringstream big(std::string(kAnnotationHeader) + "\na,1,2,3,45\n");
  parse_annotations(big, &odd);
  CHECK(odd == 1);
}
