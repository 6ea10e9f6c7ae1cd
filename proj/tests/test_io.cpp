#include "anderson/io.hpp"

#include <cstdlib>
#include <filesystem>

#include "anderson/noise.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace anderson;

namespace {

std::string scratch(const std::string& name) {
  static std::string dir = [] {
    std::string d = "/tmp/anderson_io_test";
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir + "/" + name;
}

// flip one byte and re-seal, to probe version enforcement separately from
// checksum enforcement
std::string reseal(std::string bytes) {
  size_t body = bytes.size() - 8;
  uint64_t h = fnv1a(bytes.data(), body);
  for (int i = 0; i < 8; ++i) bytes[body + i] = static_cast<char>(h >> (8 * i));
  return bytes;
}

SpectralDecomposition small_dec() {
  TorusGrid g = make_grid(2.0 * M_PI, 12);
  SpectralField w = constant_field(g, 0.7);
  w.at(1, 0) = 0.2;
  w.at(g.N - 1, 0) = 0.2;
  SpectralDecomposition dec = eigendecompose(assemble_potential(g, w));
  dec.r = 0.05;
  dec.z0 = 2.0;
  dec.seed = 123;
  return dec;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("fnv1a published vectors") {
  CHECK(fnv1a("", 0) == 14695981039346656037ull);
  CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("format_double shortest round-trip") {
  for (double v : {0.0, 1.0, 0.1, 2.0 * M_PI, 1e-300, -3.5e17, 1.0 / 3.0, 0.302}) {
    std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_double(3.0) == "3");
  CHECK(format_double(0.25) == "0.25");
}

TEST_CASE("atomic write leaves no temp file") {
  std::string p = scratch("atomic.bin");
  write_file_atomic(p, "hello");
  CHECK(read_file(p) == "hello");
  CHECK_FALSE(std::filesystem::exists(p + ".tmp"));
  write_file_atomic(p, "rewritten");
  CHECK(read_file(p) == "rewritten");
  CHECK_THROWS_AS(read_file(scratch("missing.bin")), std::runtime_error);
}

TEST_CASE("field cache round-trip bitwise") {
  TorusGrid g = make_grid(2.0 * M_PI, 16);
  NoiseRealization nz = sample_white_noise(g, 9);
  std::string p = scratch("noise.andf");
  save_field(p, nz.field, nz.seed, 0.0625);
  FieldRecord rec = load_field(p);
  CHECK(rec.seed == 9);
  CHECK(rec.r == 0.0625);
  CHECK(rec.field.grid.N == 16);
  CHECK(rec.field.grid.L == g.L);
  REQUIRE(rec.field.c.size() == nz.field.c.size());
  for (size_t i = 0; i < nz.field.c.size(); ++i) CHECK(rec.field.c[i] == nz.field.c[i]);
  // second store of the loaded record is byte-identical
  std::string p2 = scratch("noise2.andf");
  save_field(p2, rec.field, rec.seed, rec.r);
  CHECK(read_file(p) == read_file(p2));
}

TEST_CASE("field cache rejects corruption, version skew, foreign files") {
  TorusGrid g = make_grid(2.0 * M_PI, 8);
  NoiseRealization nz = sample_white_noise(g, 1);
  std::string p = scratch("guard.andf");
  save_field(p, nz.field, 2, 0.5);
  std::string bytes = read_file(p);

  std::string flipped = bytes;
  flipped[40] ^= 0x01;
  write_file_atomic(p, flipped);
  CHECK_THROWS_WITH_AS(load_field(p), doctest::Contains("checksum"), std::runtime_error);

  std::string skewed = bytes;
  skewed[4] = static_cast<char>(kFieldFormatVersion + 1);
  write_file_atomic(p, reseal(skewed));
  CHECK_THROWS_WITH_AS(load_field(p), doctest::Contains("version"), std::runtime_error);

  std::string magic = bytes;
  magic[0] = 'X';
  write_file_atomic(p, magic);
  CHECK_THROWS_WITH_AS(load_field(p), doctest::Contains("magic"), std::runtime_error);

  write_file_atomic(p, bytes.substr(0, 30));
  CHECK_THROWS_AS(load_field(p), std::runtime_error);
}

TEST_CASE("spectral cache round-trip bitwise") {
  SpectralDecomposition dec = small_dec();
  std::string p = scratch("spec.ands");
  save_spectrum(p, dec);
  SpectralDecomposition back = load_spectrum(p);
  CHECK(back.grid.N == dec.grid.N);
  CHECK(back.grid.L == dec.grid.L);
  CHECK(back.layout.dim() == dec.layout.dim());
  CHECK(back.kept == dec.kept);
  CHECK(back.r == dec.r);
  CHECK(back.z0 == dec.z0);
  CHECK(back.seed == dec.seed);
  CHECK(back.ortho_defect == dec.ortho_defect);
  CHECK(back.eigenvalues == dec.eigenvalues);
  CHECK(back.vectors == dec.vectors);
  CHECK(back.residuals == dec.residuals);
  std::string p2 = scratch("spec2.ands");
  save_spectrum(p2, back);
  CHECK(read_file(p) == read_file(p2));
  // derived payload contract: mode fields of the loaded object match
  SpectralField f0 = dec.field(0), b0 = back.field(0);
  for (size_t i = 0; i < f0.c.size(); ++i) CHECK(f0.c[i] == b0.c[i]);
}

TEST_CASE("spectral cache rejects corruption, version skew, wrong magic") {
  SpectralDecomposition dec = small_dec();
  std::string p = scratch("guard.ands");
  save_spectrum(p, dec);
  std::string bytes = read_file(p);

  std::string flipped = bytes;
  flipped[100] ^= 0x40;
  write_file_atomic(p, flipped);
  CHECK_THROWS_WITH_AS(load_spectrum(p), doctest::Contains("checksum"), std::runtime_error);

  std::string skewed = bytes;
  skewed[4] = static_cast<char>(kSpectrumFormatVersion + 1);
  write_file_atomic(p, reseal(skewed));
  CHECK_THROWS_WITH_AS(load_spectrum(p), doctest::Contains("version"), std::runtime_error);

  TorusGrid g = make_grid(2.0 * M_PI, 8);
  std::string pf = scratch("field_not_spec.andf");
  save_field(pf, SpectralField(g), 0, 0.0);
  CHECK_THROWS_WITH_AS(load_spectrum(pf), doctest::Contains("magic"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load_field(p), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("csv rendering") {
  CsvTable t;
  t.comments = {"anderson-lab test", "config {}"};
  t.columns = {"r", "seed", "value"};
  t.rows = {{0.25, 3.0, 1.5}, {0.125, 4.0, -2.0}};
  CHECK(render_csv(t) ==
        "# anderson-lab test\n# config {}\nr,seed,value\n0.25,3,1.5\n0.125,4,-2\n");
  t.rows.push_back({1.0});
  CHECK_THROWS_AS(render_csv(t), std::invalid_argument);
}

TEST_CASE("ndjson path records") {
  Path p;
  p.kind = PathKind::polymer;
  p.delta = 0.25;
  p.seed = 7;
  p.pos = {1, 2, 3};
  CHECK(path_record(5, p) ==
        R"({"seeds":[5,7],"kind":"polymer","delta":0.25,"positions":[1,2,3]})");
  p.kind = PathKind::bridge;
  CHECK(path_record(5, p).find("\"kind\":\"bridge\"") != std::string::npos);
  Loop l;
  l.zeta = 0.906;
  l.pos = {4, 9};
  std::string rec = loop_record(11, 13, 0.302, l);
  CHECK(rec == R"({"seeds":[11,13],"kind":"loop","delta":0.302,"positions":[4,9]})");
  auto j = nlohmann::json::parse(rec);
  CHECK(j["seeds"][0] == 11);
  CHECK(j["positions"].size() == 2);
}

TEST_CASE("config round-trip and strict keys") {
  ExperimentConfig d;
  std::string canon = render_config(d);
  CHECK(canon ==
        R"({"experiment":"","L":6.283185307179586,"N":32,"r_schedule":[],"seeds":[],)"
        R"("z0":"auto","c":"default","samples":0,"out_dir":"."})");
  CHECK(parse_config(canon) == d);
  CHECK(render_config(parse_config(canon)) == canon);

  ExperimentConfig c;
  c.experiment = "renorm";
  c.L = 2.0 * M_PI;
  c.N = 48;
  c.r_schedule = {0.0625, 0.03125};
  c.seeds = {1, 2, 3};
  c.z0_policy = "fixed";
  c.z0_value = 2.5;
  c.c_policy = "fixed";
  c.c_value = 0.9;
  c.samples = 200;
  c.out_dir = "out";
  CHECK(parse_config(render_config(c)) == c);
  CHECK(render_config(c).find("\"z0\":2.5") != std::string::npos);

  // partial configs pick up defaults
  ExperimentConfig p = parse_config(R"({"experiment":"weyl","N":24})");
  CHECK(p.experiment == "weyl");
  CHECK(p.N == 24);
  CHECK(p.z0_policy == "auto");
  CHECK(p.samples == 0);
}

TEST_CASE("config rejects unknown and ill-typed keys by name") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"experiment":"x","rr":1})"),
                       doctest::Contains("unknown key \"rr\""), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"bb":1,"aa":2})"),
                       doctest::Contains("keys \"aa\", \"bb\""), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"N":1.5})"), doctest::Contains("\"N\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"N":2})"), doctest::Contains("at least 4"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"L":-1.0})"), doctest::Contains("\"L\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"seeds":"3"})"), doctest::Contains("\"seeds\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"r_schedule":[0.5,-0.25]})"),
                       doctest::Contains("\"r_schedule\""), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"z0":"spectral"})"), doctest::Contains("\"z0\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"c":"none"})"), doctest::Contains("\"c\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"samples":-5})"), doctest::Contains("\"samples\""),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config("not json"), doctest::Contains("config"),
                       std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[1,2]"), std::invalid_argument);
}

}  // TEST_SUITE
