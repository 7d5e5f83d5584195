#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "roacolearn/colearn.hpp"

namespace roa {

// Comparison cells: ball sampling, gap sampling, gap sampling with the
// Lyapunov regularizer.
enum class Method { Ball, Roa, RoaReg };

std::string to_string(Method method);
Method parse_method(const std::string& name);

// Applies a method's sampling mode and regularizer weight to `base`.
RunConfig configure_method(const RunConfig& base, Method method);

struct ComparisonRow {
  std::uint64_t seed = 0;
  Method method = Method::Roa;
  int trajectories = 0;
  double mse = 0.0;
  int stages = 0;
  std::string error;  // non-empty when the cell failed
};

struct ComparisonMedian {
  Method method = Method::Roa;
  double trajectories = 0.0;
  double mse = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonMedian> medians;
};

double median(std::vector<double> values);

// Three independent runs per seed; cell failures are recorded in the row
// and the remaining cells still run.
ComparisonTable run_comparison(const RunConfig& base,
                               const std::vector<std::uint64_t>& seeds);

void write_comparison(const ComparisonTable& table, const std::filesystem::path& dir);

struct ExportConfig {
  int raster_resolution = 101;
  int field_resolution = 31;
  bool interpolants = false;
};

// Plot-ready exports of a run: V rasters per stage, trajectories, true and
// learned vector fields, the true boundary, the training curve, stage
// reports and the manifest.
void export_plots(const RunResult& result, const std::filesystem::path& dir,
                  const ExportConfig& cfg = {});

// Computes the true boundary of cfg's system and writes roa_boundary.csv.
RoaBoundary export_truth(const RunConfig& cfg, const std::filesystem::path& dir);

void write_vector_field_csv(std::ostream& os, const Box& box, int resolution,
                            const std::function<State(const State&)>& field);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Fast invariant suite over the configured system and architectures.
std::vector<CheckResult> run_checks(const RunConfig& cfg);

}  // namespace roa
