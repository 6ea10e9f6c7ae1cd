#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "anderson/galerkin.hpp"
#include "anderson/paths.hpp"

namespace anderson {

// Artifact plumbing: versioned binary caches with checksum trailers, CSV
// and NDJSON emission, and the experiment configuration record. All writes
// are atomic (temp file + rename) and all output is timestamp-free so a
// rerun with the same config is byte-identical.

inline constexpr const char* kCodeVersion = "anderson-lab 1.0.0";
inline constexpr uint32_t kFieldFormatVersion = 1;
inline constexpr uint32_t kSpectrumFormatVersion = 1;

uint64_t fnv1a(const void* data, size_t n);

// shortest representation that parses back to the same double
std::string format_double(double v);

void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

// field cache: "ANDF" | version | N | L | seed | r | N^2 complex
// coefficients in storage order | fnv1a trailer
struct FieldRecord {
  SpectralField field;
  uint64_t seed = 0;
  double r = 0.0;
};
void save_field(const std::string& path, const SpectralField& f, uint64_t seed, double r);
FieldRecord load_field(const std::string& path);

// spectral cache: "ANDS" | version | N | L | r | z0 | seed | M |
// eigenvalues | eigenvectors as M x N^2 complex coefficient fields |
// residuals | ortho defect | native basis vectors (the bitwise source of
// truth; the complex payload is derived for external readers) | fnv1a
void save_spectrum(const std::string& path, const SpectralDecomposition& dec);
SpectralDecomposition load_spectrum(const std::string& path);

struct CsvTable {
  std::vector<std::string> comments;  // "# " preamble lines: version, config
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
std::string render_csv(const CsvTable& t);

// one NDJSON record per path, keys {seeds, kind, delta, positions};
// seeds = [generator seed of the operator, seed of the path draw]
std::string path_record(uint64_t cache_seed, const Path& p);
std::string loop_record(uint64_t cache_seed, uint64_t soup_seed, double delta, const Loop& l);

// experiment configuration: plain JSON with a closed key set. Policies:
// z0 is "auto" (spectral placement) or a fixed number; c is "default"
// (1 - lambda0) or a fixed number. Empty r_schedule/seeds/samples defer
// to per-experiment defaults.
struct ExperimentConfig {
  std::string experiment;
  double L = 2.0 * 3.14159265358979323846;
  int N = 32;
  std::vector<double> r_schedule;
  std::vector<uint64_t> seeds;
  std::string z0_policy = "auto";  // "auto" | "fixed"
  double z0_value = 0.0;
  std::string c_policy = "default";  // "default" | "fixed"
  double c_value = 0.0;
  int samples = 0;
  std::string out_dir = ".";

  bool operator==(const ExperimentConfig&) const = default;
};

// strict parse: an unknown or ill-typed key throws naming the key
ExperimentConfig parse_config(const std::string& json_text);
// canonical one-line form; parse(render(c)) == c and render is idempotent
std::string render_config(const ExperimentConfig& c);

}  // namespace anderson
