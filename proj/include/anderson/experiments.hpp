#pragma once
#include <functional>
#include <ostream>

#include "anderson/io.hpp"
#include "anderson/paracontrolled.hpp"

namespace anderson {

// Reproduction harness. Every acceptance experiment is a pure function of
// its resolved configuration: it returns the underlying table, any extra
// artifacts, and a list of named gates, and the caller decides where that
// goes (CSV on disk, stdout pass/fail lines, an exit code). Reruns with
// the same configuration produce byte-identical artifacts; wall-clock
// budget gates live only in the printed report, never in the files.

struct GateResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  std::string detail;
};

struct ExperimentResult {
  std::string name;
  CsvTable table;
  // extra artifacts (NDJSON path ensembles, binary caches) as
  // filename -> bytes, written next to the table by run_and_write
  std::vector<std::pair<std::string, std::string>> extra_files;
  std::vector<GateResult> gates;
  double elapsed_seconds = 0.0;  // printed only, never written to artifacts

  bool pass() const;
  const GateResult* find(const std::string& gate_name) const;
};

// knobs that live in CLI flags rather than the closed config key set;
// non-default values are echoed in the artifact header for reproducibility
struct RunOverrides {
  const SpectralDecomposition* cache = nullptr;  // reuse a loaded operator
  std::vector<double> lambda_grid;               // gff, partition
  std::vector<double> t_grid;                    // heat, trace, ldp
  int k = -1;                                    // spectrum: partial depth
};

// the operator a single-realization experiment works on: grid from the
// config, noise seed = seeds[0], r = r_schedule[0], z0 per policy
SpectralDecomposition build_decomposition(const ExperimentConfig& resolved, int k = -1);

const std::vector<std::string>& experiment_names();

// fills per-experiment defaults (seeds, r-schedule, sample counts);
// throws on an unknown experiment name, listing the valid ones
ExperimentConfig resolve_config(ExperimentConfig c);

ExperimentResult run_experiment(const ExperimentConfig& c, const RunOverrides& ov = {});

// resolve, run, and write <out_dir>/<experiment>.csv plus extras,
// atomically, with the version and resolved config embedded as comments
ExperimentResult run_and_write(const ExperimentConfig& c, const RunOverrides& ov = {});

// worker pool for seed sweeps: tasks write disjoint slots, reductions
// happen after the join, so results are identical for any thread count
void set_worker_threads(int n);
int worker_threads();
void parallel_for(int n, const std::function<void(int)>& fn);

std::string gate_line(const ExperimentResult& r, const GateResult& g);
void print_result(const ExperimentResult& r, std::ostream& os);

}  // namespace anderson
