#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rav/core/archive.hpp"
#include "rav/core/error.hpp"
#include "rav/core/image.hpp"
#include "rav/core/io.hpp"
#include "rav/core/loss_history.hpp"
#include "rav/core/random.hpp"

namespace fs = std::filesystem;
using namespace rav;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rav_test_core";
  fs::create_directories(dir);
  return dir / name;
}

ImageBuffer random_image(int h, int w, int c, std::uint64_t seed) {
  ImageBuffer img(h, w, c);
  Rng rng = make_rng(seed);
  for (double& v : img.data()) v = uniform(rng, 0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("archive round trip preserves arrays and header") {
  Archive a;
  a.magic = "RAVCK1";
  a.version = 3;
  a.header = {7, 8, 9};
  NamedArray f;
  f.name = "w";
  f.shape = {2, 3};
  f.f32 = {1.5f, -2.0f, 0.0f, 3.25f, 1e-7f, -1e7f};
  NamedArray i;
  i.name = "idx";
  i.dtype = NamedArray::DType::i32;
  i.shape = {4};
  i.i32 = {0, -1, 2, 1 << 30};
  a.arrays = {f, i};
  const auto path = scratch("roundtrip.bin");
  write_archive(path, a);
  const Archive b = read_archive(path, "RAVCK1");
  CHECK(b.version == 3);
  CHECK(b.header == a.header);
  REQUIRE(b.arrays.size() == 2);
  CHECK(b.get("w").f32 == f.f32);
  CHECK(b.get("w").shape == f.shape);
  CHECK(b.get("idx").i32 == i.i32);
  CHECK(b.find("missing") == nullptr);
}

TEST_CASE("archive errors are categorised") {
  Archive a;
  a.magic = "RAVMM1";
  const auto path = scratch("magic.bin");
  write_archive(path, a);
  try {
    read_archive(path, "RAVCK1");
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::format_error);
  }
  try {
    read_archive(scratch("does_not_exist.bin"), "RAVCK1");
    FAIL("expected missing artifact");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::missing_artifact);
  }
  // Truncated payload.
  NamedArray f;
  f.name = "x";
  f.shape = {100};
  f.f32.assign(100, 1.0f);
  a.arrays = {f};
  write_archive(path, a);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 10);
  CHECK_THROWS_AS(read_archive(path, "RAVMM1"), Error);
}

TEST_CASE("archive byte layout is little-endian as documented") {
  Archive a;
  a.magic = "RAVMM1";
  a.version = 1;
  a.header = {258};
  const auto path = scratch("layout.bin");
  write_archive(path, a);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 6 + 4 + 4 + 4 + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "RAVMM1");
  CHECK(bytes[6] == 1);
  CHECK(bytes[10] == 1);  // header count
  CHECK(bytes[14] == 2);  // 258 = 0x0102
  CHECK(bytes[15] == 1);
}

TEST_CASE("sha256 matches published test vectors") {
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("png round trip is exact on 8-bit levels") {
  for (int channels : {1, 3}) {
    ImageBuffer img(5, 7, channels);
    int k = 0;
    for (double& v : img.data()) v = (k++ * 37 % 256) / 255.0;
    const auto path = scratch("img" + std::to_string(channels) + ".png");
    write_png(path, img);
    const ImageBuffer back = read_png(path);
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(read_png(scratch("nope.png")), Error);
}

TEST_CASE("loss history csv round trip and hash") {
  LossHistory h;
  h.add(0, "G", {{"l1", 0.5}, {"total", 1.25}});
  h.add(0, "D", {{"total", 0.693147}});
  h.add(1, "G", {{"l1", 0.25}, {"total", 1.0}});
  const auto path = scratch("hist.csv");
  h.write_csv(path);
  const LossHistory back = LossHistory::read_csv(path);
  CHECK(back.size() == 3);
  CHECK(back.hash() == h.hash());
  CHECK(h.series("G", "l1") == std::vector<double>{0.5, 0.25});
  CHECK(read_text(path).rfind("step,phase,term,value", 0) == 0);
}

TEST_CASE("image helpers") {
  const ImageBuffer img = random_image(6, 8, 3, 1);
  SUBCASE("grayscale uses luma weights") {
    const ImageBuffer g = to_grayscale(img);
    CHECK(g.channels() == 1);
    const double expect = 0.299 * img.at(2, 3, 0) + 0.587 * img.at(2, 3, 1) + 0.114 * img.at(2, 3, 2);
    CHECK(g.at(2, 3, 0) == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("flip twice is identity") { CHECK(flip_horizontal(flip_horizontal(img)) == img); }
  SUBCASE("crop copies the window") {
    const ImageBuffer c = crop(img, {2, 1, 3, 4});
    CHECK(c.height() == 4);
    CHECK(c.width() == 3);
    CHECK(c.at(0, 0, 1) == img.at(1, 2, 1));
    CHECK(c.at(3, 2, 2) == img.at(4, 4, 2));
    CHECK_THROWS_AS(crop(img, {6, 0, 3, 3}), Error);
  }
  SUBCASE("resize to same size is identity") { CHECK(resize_bilinear(img, 6, 8) == img); }
  SUBCASE("resize of constant image is constant") {
    ImageBuffer k(5, 5, 1, 0.3);
    const ImageBuffer r = resize_bilinear(k, 11, 7);
    for (double v : r.data()) CHECK(v == doctest::Approx(0.3));
  }
  SUBCASE("mean absolute difference") {
    ImageBuffer a(2, 2, 1, 0.2), b(2, 2, 1, 0.5);
    CHECK(mean_abs_difference(a, b) == doctest::Approx(0.3));
  }
}

TEST_CASE("error categories map to distinct exit codes") {
  CHECK(category_name(ErrorCategory::missing_artifact) == "missing-artifact");
  CHECK(exit_code(ErrorCategory::missing_artifact) != 0);
  CHECK(exit_code(ErrorCategory::missing_artifact) != exit_code(ErrorCategory::invalid_config));
  CHECK_THROWS_AS(require(false, "x"), Error);
}

TEST_CASE("hash_uniform is deterministic and in [0,1)") {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = hash_uniform(42, i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(u == hash_uniform(42, i));
  }
  CHECK(hash_uniform(1, 0) != hash_uniform(2, 0));
}
