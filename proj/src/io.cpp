#include "anderson/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace anderson {

uint64_t fnv1a(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw std::runtime_error("write failed: " + tmp);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("rename failed: " + path);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

struct ByteWriter {
  std::string b;
  void raw(const void* p, size_t n) { b.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) {
    char c[4];
    for (int i = 0; i < 4; ++i) c[i] = static_cast<char>(v >> (8 * i));
    b.append(c, 4);
  }
  void u64(uint64_t v) {
    char c[8];
    for (int i = 0; i < 8; ++i) c[i] = static_cast<char>(v >> (8 * i));
    b.append(c, 8);
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void seal() { u64(fnv1a(b.data(), b.size())); }
};

struct ByteReader {
  const unsigned char* p;
  size_t n, off = 0;
  explicit ByteReader(const std::string& s)
      : p(reinterpret_cast<const unsigned char*>(s.data())), n(s.size()) {}
  void need(size_t k) const {
    if (off + k > n) throw std::runtime_error("cache file truncated");
  }
  void skip(size_t k) {
    need(k);
    off += k;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

// trailer first: a corrupted file must be rejected before any parsing
void check_envelope(const std::string& bytes, const char* magic, const char* what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw std::runtime_error(std::string("not a ") + what + " (bad magic)");
  size_t body = bytes.size() - 8;
  ByteReader tail(bytes);
  tail.off = body;
  uint64_t stored = tail.u64();
  if (stored != fnv1a(bytes.data(), body))
    throw std::runtime_error(std::string(what) + " checksum mismatch");
}

void check_version(uint32_t got, uint32_t want, const char* what) {
  if (got != want)
    throw std::runtime_error(std::string(what) + " version " + std::to_string(got) +
                             ", expected " + std::to_string(want));
}

}  // namespace

void save_field(const std::string& path, const SpectralField& f, uint64_t seed, double r) {
  ByteWriter w;
  w.raw("ANDF", 4);
  w.u32(kFieldFormatVersion);
  w.u32(static_cast<uint32_t>(f.grid.N));
  w.f64(f.grid.L);
  w.u64(seed);
  w.f64(r);
  for (const cplx& c : f.c) {
    w.f64(c.real());
    w.f64(c.imag());
  }
  w.seal();
  write_file_atomic(path, w.b);
}

FieldRecord load_field(const std::string& path) {
  std::string bytes = read_file(path);
  check_envelope(bytes, "ANDF", "field cache");
  ByteReader rd(bytes);
  rd.skip(4);
  check_version(rd.u32(), kFieldFormatVersion, "field cache");
  int N = static_cast<int>(rd.u32());
  double L = rd.f64();
  FieldRecord rec;
  rec.seed = rd.u64();
  rec.r = rd.f64();
  rec.field = SpectralField(make_grid(L, N));
  for (cplx& c : rec.field.c) {
    double re = rd.f64(), im = rd.f64();
    c = {re, im};
  }
  return rec;
}

void save_spectrum(const std::string& path, const SpectralDecomposition& dec) {
  int np = dec.grid.size(), dim = dec.layout.dim();
  ByteWriter w;
  w.raw("ANDS", 4);
  w.u32(kSpectrumFormatVersion);
  w.u32(static_cast<uint32_t>(dec.grid.N));
  w.f64(dec.grid.L);
  w.f64(dec.r);
  w.f64(dec.z0);
  w.u64(dec.seed);
  w.u32(static_cast<uint32_t>(dec.kept));
  for (double v : dec.eigenvalues) w.f64(v);
  for (int n = 0; n < dec.kept; ++n) {
    SpectralField f = dec.field(n);
    for (const cplx& c : f.c) {
      w.f64(c.real());
      w.f64(c.imag());
    }
  }
  for (int n = 0; n < dec.kept; ++n)
    w.f64(n < static_cast<int>(dec.residuals.size()) ? dec.residuals[n] : 0.0);
  w.f64(dec.ortho_defect);
  w.u32(static_cast<uint32_t>(dim));
  w.raw(dec.vectors.data(), static_cast<size_t>(dim) * dec.kept * sizeof(double));
  (void)np;
  w.seal();
  write_file_atomic(path, w.b);
}

SpectralDecomposition load_spectrum(const std::string& path) {
  std::string bytes = read_file(path);
  check_envelope(bytes, "ANDS", "spectral cache");
  ByteReader rd(bytes);
  rd.skip(4);
  check_version(rd.u32(), kSpectrumFormatVersion, "spectral cache");
  int N = static_cast<int>(rd.u32());
  double L = rd.f64();
  SpectralDecomposition dec;
  dec.r = rd.f64();
  dec.z0 = rd.f64();
  dec.seed = rd.u64();
  dec.kept = static_cast<int>(rd.u32());
  dec.grid = make_grid(L, N);
  dec.layout = make_layout(dec.grid);
  dec.eigenvalues.resize(dec.kept);
  for (double& v : dec.eigenvalues) v = rd.f64();
  // the complex payload is for external readers; native vectors follow
  rd.skip(static_cast<size_t>(dec.kept) * dec.grid.size() * 16);
  dec.residuals.resize(dec.kept);
  for (double& v : dec.residuals) v = rd.f64();
  dec.ortho_defect = rd.f64();
  int dim = static_cast<int>(rd.u32());
  if (dim != dec.layout.dim())
    throw std::runtime_error("spectral cache layout mismatch: dim " + std::to_string(dim) +
                             " for N " + std::to_string(N));
  dec.vectors.resize(static_cast<size_t>(dim) * dec.kept);
  rd.need(dec.vectors.size() * sizeof(double));
  std::memcpy(dec.vectors.data(), rd.p + rd.off, dec.vectors.size() * sizeof(double));
  return dec;
}

std::string render_csv(const CsvTable& t) {
  std::string out;
  for (const std::string& c : t.comments) out += "# " + c + "\n";
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += ',';
    out += t.columns[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw std::invalid_argument("csv row width " + std::to_string(row.size()) +
                                  " != " + std::to_string(t.columns.size()) + " columns");
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

namespace {

const char* kind_name(PathKind k) {
  switch (k) {
    case PathKind::polymer: return "polymer";
    case PathKind::diffusion: return "diffusion";
    default: return "bridge";
  }
}

std::string record(uint64_t s0, uint64_t s1, const char* kind, double delta,
                   const std::vector<int>& pos) {
  nlohmann::ordered_json j;
  j["seeds"] = {s0, s1};
  j["kind"] = kind;
  j["delta"] = delta;
  j["positions"] = pos;
  return j.dump();
}

}  // namespace

std::string path_record(uint64_t cache_seed, const Path& p) {
  return record(cache_seed, p.seed, kind_name(p.kind), p.delta, p.pos);
}

std::string loop_record(uint64_t cache_seed, uint64_t soup_seed, double delta, const Loop& l) {
  return record(cache_seed, soup_seed, "loop", delta, l.pos);
}

namespace {

[[noreturn]] void bad_key(const std::string& key, const char* why) {
  throw std::invalid_argument("config: key \"" + key + "\" " + why);
}

double num_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) bad_key(key, "must be a number");
  return v.get<double>();
}

int int_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer()) bad_key(key, "must be an integer");
  return v.get<int>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");

  static const std::set<std::string> known = {"experiment", "L",       "N",
                                              "r_schedule", "seeds",   "z0",
                                              "c",          "samples", "out_dir"};
  std::vector<std::string> unknown;
  for (const auto& item : j.items())
    if (!known.count(item.key())) unknown.push_back(item.key());
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    std::string msg = "config: unknown key";
    if (unknown.size() > 1) msg += 's';
    for (size_t i = 0; i < unknown.size(); ++i)
      msg += (i ? ", \"" : " \"") + unknown[i] + "\"";
    throw std::invalid_argument(msg);
  }

  ExperimentConfig c;
  if (j.contains("experiment")) {
    if (!j["experiment"].is_string()) bad_key("experiment", "must be a string");
    c.experiment = j["experiment"].get<std::string>();
  }
  if (j.contains("L")) {
    c.L = num_value(j["L"], "L");
    if (c.L <= 0.0) bad_key("L", "must be positive");
  }
  if (j.contains("N")) {
    c.N = int_value(j["N"], "N");
    if (c.N < 4) bad_key("N", "must be at least 4");
  }
  if (j.contains("r_schedule")) {
    if (!j["r_schedule"].is_array()) bad_key("r_schedule", "must be an array of numbers");
    for (const auto& v : j["r_schedule"]) {
      double r = num_value(v, "r_schedule");
      if (r <= 0.0) bad_key("r_schedule", "entries must be positive");
      c.r_schedule.push_back(r);
    }
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) bad_key("seeds", "must be an array of integers");
    for (const auto& v : j["seeds"]) {
      if (!v.is_number_integer()) bad_key("seeds", "must be an array of integers");
      c.seeds.push_back(v.get<uint64_t>());
    }
  }
  if (j.contains("z0")) {
    const auto& v = j["z0"];
    if (v.is_string()) {
      if (v.get<std::string>() != "auto") bad_key("z0", "must be \"auto\" or a number");
      c.z0_policy = "auto";
    } else {
      c.z0_policy = "fixed";
      c.z0_value = num_value(v, "z0");
    }
  }
  if (j.contains("c")) {
    const auto& v = j["c"];
    if (v.is_string()) {
      if (v.get<std::string>() != "default") bad_key("c", "must be \"default\" or a number");
      c.c_policy = "default";
    } else {
      c.c_policy = "fixed";
      c.c_value = num_value(v, "c");
    }
  }
  if (j.contains("samples")) {
    c.samples = int_value(j["samples"], "samples");
    if (c.samples < 0) bad_key("samples", "must be non-negative");
  }
  if (j.contains("out_dir")) {
    if (!j["out_dir"].is_string()) bad_key("out_dir", "must be a string");
    c.out_dir = j["out_dir"].get<std::string>();
  }
  return c;
}

std::string render_config(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["experiment"] = c.experiment;
  j["L"] = c.L;
  j["N"] = c.N;
  j["r_schedule"] = c.r_schedule;
  j["seeds"] = c.seeds;
  if (c.z0_policy == "auto")
    j["z0"] = "auto";
  else
    j["z0"] = c.z0_value;
  if (c.c_policy == "default")
    j["c"] = "default";
  else
    j["c"] = c.c_value;
  j["samples"] = c.samples;
  j["out_dir"] = c.out_dir;
  return j.dump();
}

}  // namespace anderson
