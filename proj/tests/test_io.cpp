#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowify/config.hpp"
#include "flowify/errors.hpp"
#include "flowify/image_io.hpp"

using namespace flowify;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "flowify_io_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

json minimal_config() {
  return {{"dataset", {{"kind", "toy2d"}, {"samples", 100}}}, {"model", {{"preset", "toy_fmlp"}}}};
}

}  // namespace

// ---- IDX ---------------------------------------------------------------------------

TEST_CASE("IDX images round trip through the encoder") {
  std::vector<std::uint8_t> px(3 * 2 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 10);
  const auto bytes = encode_idx_images(3, 2, 4, px);
  CHECK(bytes.size() == 16 + px.size());
  CHECK(bytes[2] == 0x08);
  CHECK(bytes[3] == 0x03);
  const Dataset d = parse_idx_images(bytes);
  CHECK(d.count == 3);
  CHECK(d.sample_shape == Shape{1, 2, 4});
  CHECK(d.integer_pixels);
  CHECK(d.values[9] == 90.0);
}

TEST_CASE("IDX errors carry offsets") {
  const std::vector<std::uint8_t> px(2 * 3 * 3, 7);
  auto bytes = encode_idx_images(2, 3, 3, px);

  auto bad = bytes;
  bad[3] = 0x01;
  CHECK_THROWS_AS(parse_idx_images(bad), ParseError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  CHECK_THROWS_AS(parse_idx_images(truncated), ParseError);

  try {
    parse_idx_images(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() <= 12);
  }
}

TEST_CASE("IDX labels") {
  std::vector<std::uint8_t> b{0, 0, 8, 1, 0, 0, 0, 3, 4, 1, 9};
  CHECK(parse_idx_labels(b) == std::vector<std::uint8_t>{4, 1, 9});
  b.pop_back();
  CHECK_THROWS_AS(parse_idx_labels(b), ParseError);
}

TEST_CASE("the bundled gzip digits load as 10000 28x28 images") {
  const std::string path = std::string(FLOWIFY_SOURCE_DIR) + "/data/mnist10k-images-idx3-ubyte.gz";
  if (!fs::exists(path)) {
    MESSAGE("bundled digits missing; skipping");
    return;
  }
  const Dataset d = load_idx(path);
  CHECK(d.count == 10000);
  CHECK(d.sample_shape == Shape{1, 28, 28});
  double mx = 0.0;
  for (double v : d.values) mx = std::max(mx, v);
  CHECK(mx == 255.0);
}

TEST_CASE("uncompressed IDX files load from disk") {
  const std::vector<std::uint8_t> px(4 * 2 * 2, 200);
  const fs::path p = scratch("tiny-idx3-ubyte");
  write_bytes(p, encode_idx_images(4, 2, 2, px));
  const Dataset d = load_idx(p.string());
  CHECK(d.count == 4);
  CHECK_THROWS_AS(load_idx(scratch("absent").string()), DataError);
}

// ---- CSV and toy data --------------------------------------------------------------------

TEST_CASE("csv parsing with and without a header") {
  const Dataset a = parse_csv("x,y\n1,2\n3.5,-4\n");
  CHECK(a.count == 2);
  CHECK(a.sample_shape == Shape{2});
  CHECK(a.values == std::vector<double>{1, 2, 3.5, -4});
  const Dataset b = parse_csv("1,2,3\n4,5,6\n");
  CHECK(b.count == 2);
  CHECK_THROWS_AS(parse_csv("1,2\n3\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1,x\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n"), DataError);
}

TEST_CASE("mixture log density matches the closed form") {
  const GaussianMixture2d g(default_toy_mixture());
  const auto& c = g.components();
  for (auto [x, y] : {std::pair{0.0, 0.0}, {1.0, 0.5}, {-2.0, 3.0}}) {
    double p = 0.0;
    for (const auto& k : c) {
      const double r2 = (x - k.mean_x) * (x - k.mean_x) + (y - k.mean_y) * (y - k.mean_y);
      p += k.weight * std::exp(-0.5 * r2 / (k.std * k.std)) / (2 * M_PI * k.std * k.std);
    }
    CHECK(g.log_pdf(x, y) == doctest::Approx(std::log(p)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(GaussianMixture2d({}), ConfigError);
  Rng rng(0);
  const Dataset d = g.sample(5000, rng);
  CHECK(d.count == 5000);
  double mean_x = 0.0;
  for (std::size_t i = 0; i < d.count; ++i) mean_x += d.values[2 * i];
  CHECK(std::abs(mean_x / 5000.0) < 0.05);
}

TEST_CASE("dequantization stays inside each pixel's bin") {
  Rng rng(1);
  const DiffArray px = DiffArray::from({0, 17, 255});
  const DiffArray y = dequantize(px, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y[i] >= px[i] / 256.0);
    CHECK(y[i] < (px[i] + 1) / 256.0);
  }
  CHECK_THROWS_AS(dequantize(DiffArray::from({1.5}), rng), DataError);
  CHECK_THROWS_AS(dequantize(DiffArray::from({256}), rng), DataError);
}

TEST_CASE("splits are seeded and standardization uses train statistics") {
  Dataset d = parse_csv("1,10\n2,20\n3,30\n4,40\n5,50\n6,60\n7,70\n8,80\n9,90\n10,100\n");
  const Split a = split_dataset(d, 0.3, 5), b = split_dataset(d, 0.3, 5), c = split_dataset(d, 0.3, 6);
  CHECK(a.test.count == 3);
  CHECK(a.train.count == 7);
  CHECK(a.test.values == b.test.values);
  CHECK((a.test.values != c.test.values || a.train.values != c.train.values));
  CHECK_THROWS_AS(split_dataset(d, 1.5, 0), ConfigError);

  Split s = a;
  standardize(s);
  double m = 0.0;
  for (std::size_t i = 0; i < s.train.count; ++i) m += s.train.values[2 * i];
  CHECK(std::abs(m) < 1e-12);
  REQUIRE(s.mean.size() == 2);
  CHECK(s.mean[1] == doctest::Approx(10.0 * s.mean[0]));
}

// ---- images ------------------------------------------------------------------------------

TEST_CASE("pixel conversion clamps and rounds") {
  CHECK(to_pixel(0.0) == 0);
  CHECK(to_pixel(0.5) == 128);
  CHECK(to_pixel(1.0) == 255);
  CHECK(to_pixel(-3.0) == 0);
  CHECK(to_pixel(std::nan("")) == 0);
}

TEST_CASE("PGM and PPM round trip") {
  Image g{3, 2, 1, {0, 50, 100, 150, 200, 250}};
  const Image back = decode_pnm(encode_pnm(g));
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == g.pixels);

  Image c{1, 2, 3, {1, 2, 3, 4, 5, 6}};
  const fs::path p = scratch("c.ppm");
  write_pnm(p.string(), c);
  const Image rc = read_pnm(p.string());
  CHECK(rc.channels == 3);
  CHECK(rc.pixels == c.pixels);

  auto bytes = encode_pnm(g);
  bytes[1] = '3';
  CHECK_THROWS_AS(decode_pnm(bytes), ParseError);
  auto short_bytes = encode_pnm(g);
  short_bytes.pop_back();
  CHECK_THROWS_AS(decode_pnm(short_bytes), ParseError);
}

TEST_CASE("tile grid layout") {
  const DiffArray s = DiffArray::full({5, 1, 2, 2}, 1.0);
  const Image im = tile_grid(s);
  CHECK(im.width == 3 * 2);
  CHECK(im.height == 2 * 2);
  CHECK(im.channels == 1);
  CHECK(im.pixels.front() == 255);
  CHECK(im.pixels.back() == 0);  // sixth cell stays black
}

// ---- run configs -------------------------------------------------------------------------

TEST_CASE("every non-full preset builds for its input shape") {
  std::vector<std::string> warnings;
  for (const auto& name : preset_names()) {
    const bool full = name.ends_with("_full");
    const Shape in = name == "toy_fmlp" ? Shape{2} : Shape{1, 28, 28};
    const json layers = preset_layers(name, full, &warnings);
    const FlowModel m = build_model(layers, in, 0);
    CHECK(m.size() > 0);
    if (!full) CHECK_THROWS_AS(preset_layers(name + "_x", false), ConfigError);
    if (full) CHECK_THROWS_AS(preset_layers(name, false), ConfigError);
  }
  CHECK(warnings.size() == 3);
}

TEST_CASE("run config parsing and round trip") {
  std::vector<std::string> warnings;
  const RunConfig c = RunConfig::from_json(minimal_config(), &warnings);
  CHECK(c.preset == "toy_fmlp");
  CHECK(c.layers.is_array());
  CHECK(warnings.empty());
  const RunConfig again = RunConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());

  json bad = minimal_config();
  bad["extra"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = minimal_config();
  bad["model"]["layers"] = json::array();
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = minimal_config();
  bad["dataset"]["kind"] = "audio";
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = minimal_config();
  bad["dataset"] = {{"kind", "idx_images"}};
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
}

TEST_CASE("layer list errors") {
  Shape s{2};
  Rng rng(0);
  CHECK_THROWS_AS(build_layers(json::array({{{"type", "warp"}}}), s, "l", rng), ConfigError);
  s = {2};
  CHECK_THROWS_AS(build_layers(json::array({{{"type", "linear"}}}), s, "l", rng), ConfigError);
  s = {2};
  CHECK_THROWS_AS(build_layers(json::array({{{"type", "linear"}, {"out", 2}, {"bias", 0}}}), s, "l", rng),
                  ConfigError);
  s = {2};
  CHECK_THROWS_AS(build_layers(json::array({{{"type", "conv"}, {"out_channels", 2}}}), s, "l", rng),
                  ConfigError);
  s = {1, 5, 5};
  CHECK_THROWS(build_layers(json::array({{{"type", "conv"}, {"out_channels", 2}, {"kernel", 2}}}), s, "l", rng));
  s = {1, 4, 4};
  const auto ok = build_layers(
      json::array({{{"type", "conv"}, {"out_channels", 2}, {"kernel", {2, 1}}, {"stride", {2, 1}}}}), s, "l", rng);
  CHECK(s == Shape{2, 2, 4});
}

TEST_CASE("repository configs load") {
  for (const auto& entry : fs::directory_iterator(std::string(FLOWIFY_SOURCE_DIR) + "/configs")) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    std::vector<std::string> warnings;
    CHECK_NOTHROW(load_run_config(entry.path().string(), &warnings));
  }
  CHECK_THROWS_AS(load_run_config(scratch("nope.json").string()), ConfigError);
  const fs::path broken = scratch("broken.json");
  std::ofstream(broken) << "{ not json";
  CHECK_THROWS_AS(load_run_config(broken.string()), ConfigError);
}

TEST_CASE("the toy dataset loads with the requested split") {
  DatasetSpec spec = DatasetSpec::from_json({{"kind", "toy2d"}, {"samples", 200}, {"test_fraction", 0.25}});
  const Split s = load_dataset(spec, 3);
  CHECK(s.train.count == 150);
  CHECK(s.test.count == 50);
  CHECK(s.train.sample_shape == Shape{2});
  CHECK(DatasetSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}
