// roacolearn command-line driver; talks to the library only through the C API.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "roacolearn/roacolearn.h"

namespace {

struct ConfigDeleter {
  void operator()(rcl_config* c) const { rcl_config_free(c); }
};
struct ResultDeleter {
  void operator()(rcl_result* r) const { rcl_result_free(r); }
};
struct ComparisonDeleter {
  void operator()(rcl_comparison* t) const { rcl_comparison_free(t); }
};
using ConfigPtr = std::unique_ptr<rcl_config, ConfigDeleter>;

int report_error(rcl_status status, const char* what) {
  std::fprintf(stderr, "roacolearn: %s failed (%s): %s\n", what, rcl_status_string(status),
               rcl_last_error());
  return static_cast<int>(status) == 0 ? 1 : static_cast<int>(status);
}

struct CommonOptions {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string mode;
  int stages = -1;
  std::string out = "out";
};

int load_config(const CommonOptions& opt, ConfigPtr& cfg) {
  rcl_config* raw = nullptr;
  rcl_status st = opt.config.empty() ? rcl_config_default(&raw)
                                     : rcl_config_load(opt.config.c_str(), &raw);
  if (st != RCL_OK) return report_error(st, "loading config");
  cfg.reset(raw);
  if (opt.seed_set && (st = rcl_config_set_seed(raw, opt.seed)) != RCL_OK) {
    return report_error(st, "--seed");
  }
  if (!opt.mode.empty() && (st = rcl_config_set_method(raw, opt.mode.c_str())) != RCL_OK) {
    return report_error(st, "--mode");
  }
  if (opt.stages >= 0 && (st = rcl_config_set_max_stages(raw, opt.stages)) != RCL_OK) {
    return report_error(st, "--stages");
  }
  return 0;
}

void add_common(CLI::App* app, CommonOptions& opt, bool with_mode) {
  app->add_option("--config", opt.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  app->add_option_function<std::uint64_t>(
      "--seed", [&opt](std::uint64_t s) { opt.seed = s, opt.seed_set = true; }, "master seed");
  app->add_option("--out", opt.out, "output directory");
  app->add_option("--stages", opt.stages, "maximum number of stages")->check(CLI::NonNegativeNumber);
  if (with_mode) {
    app->add_option("--mode", opt.mode, "sampling method")
        ->check(CLI::IsMember({"ball", "roa", "roa+reg"}));
  }
}

int write_manifest_copy(const ConfigPtr& cfg, const std::string& dir) {
  char* text = nullptr;
  const rcl_status st = rcl_config_to_json(cfg.get(), &text);
  if (st != RCL_OK) return report_error(st, "serializing config");
  std::filesystem::create_directories(dir);
  std::FILE* f = std::fopen((std::filesystem::path(dir) / "config.json").string().c_str(), "wb");
  if (!f) {
    rcl_string_free(text);
    std::fprintf(stderr, "roacolearn: cannot write to %s\n", dir.c_str());
    return 1;
  }
  std::fputs(text, f);
  std::fputs("\n", f);
  std::fclose(f);
  rcl_string_free(text);
  return 0;
}

int cmd_run(const CommonOptions& opt) {
  ConfigPtr cfg;
  if (int rc = load_config(opt, cfg)) return rc;
  rcl_result* raw = nullptr;
  const rcl_status st = rcl_run(cfg.get(), &raw);
  std::unique_ptr<rcl_result, ResultDeleter> result(raw);
  if (result) {
    for (size_t i = 0; i < rcl_result_stage_count(result.get()); ++i) {
      rcl_stage_report r{};
      rcl_result_stage(result.get(), i, &r);
      std::printf("stage %d  c %.6g -> %.6g  gap %.4g  +%d/-%d  trajectories %d  mse %.6g\n",
                  r.stage, r.level_before, r.level, r.gap_volume, r.stable_labels,
                  r.unstable_labels, r.cumulative_trajectories, r.ode_mse);
    }
    std::printf("stop: %s\n", rcl_result_stop_reason(result.get()));
    const rcl_status ex = rcl_result_export(result.get(), opt.out.c_str());
    if (ex != RCL_OK) return report_error(ex, "export");
  }
  if (st != RCL_OK) return report_error(st, "run");
  std::printf("wrote %s\n", opt.out.c_str());
  return 0;
}

int cmd_compare(const CommonOptions& opt, int seed_count) {
  ConfigPtr cfg;
  if (int rc = load_config(opt, cfg)) return rc;
  std::vector<std::uint64_t> seeds;
  const std::uint64_t first = opt.seed_set ? opt.seed : 0;
  for (int i = 0; i < seed_count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
  rcl_comparison* raw = nullptr;
  rcl_status st = rcl_compare(cfg.get(), seeds.data(), seeds.size(), &raw);
  if (st != RCL_OK) return report_error(st, "compare");
  std::unique_ptr<rcl_comparison, ComparisonDeleter> table(raw);
  std::printf("%-6s %-8s %6s %12s\n", "seed", "method", "trajs", "mse");
  for (size_t i = 0; i < rcl_comparison_row_count(table.get()); ++i) {
    rcl_comparison_row row{};
    rcl_comparison_row_at(table.get(), i, &row);
    std::printf("%-6llu %-8s %6d %12.6g%s%s\n", static_cast<unsigned long long>(row.seed),
                row.method, row.trajectories, row.mse, *row.error ? "  error: " : "", row.error);
  }
  for (const char* m : {"ball", "roa", "roa+reg"}) {
    double trajs = 0.0;
    double mse = 0.0;
    rcl_comparison_median(table.get(), m, &trajs, &mse);
    std::printf("median %-8s %6.1f %12.6g\n", m, trajs, mse);
  }
  if ((st = rcl_comparison_export(table.get(), opt.out.c_str())) != RCL_OK) {
    return report_error(st, "export");
  }
  return write_manifest_copy(cfg, opt.out);
}

int cmd_truth(const CommonOptions& opt) {
  ConfigPtr cfg;
  if (int rc = load_config(opt, cfg)) return rc;
  double area = 0.0;
  const rcl_status st = rcl_truth_export(cfg.get(), opt.out.c_str(), &area);
  if (st != RCL_OK) return report_error(st, "truth");
  std::printf("true ROA area %.6g, written to %s\n", area, opt.out.c_str());
  return 0;
}

int cmd_check(const CommonOptions& opt) {
  ConfigPtr cfg;
  if (int rc = load_config(opt, cfg)) return rc;
  char* report = nullptr;
  int passed = 0;
  const rcl_status st = rcl_check(cfg.get(), &report, &passed);
  if (st != RCL_OK) return report_error(st, "check");
  std::printf("%s\n", report);
  rcl_string_free(report);
  return passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-learning of a region of attraction and a vector field"};
  app.require_subcommand(1);

  CommonOptions run_opt;
  auto* run = app.add_subcommand("run", "one coupled run with plot exports");
  add_common(run, run_opt, true);

  CommonOptions cmp_opt;
  int seed_count = 5;
  auto* compare = app.add_subcommand("compare", "ball / roa / roa+reg over consecutive seeds");
  add_common(compare, cmp_opt, false);
  compare->add_option("--seeds", seed_count, "number of seeds")->check(CLI::PositiveNumber);

  CommonOptions truth_opt;
  auto* truth = app.add_subcommand("truth", "true ROA boundary of the configured system");
  add_common(truth, truth_opt, false);

  CommonOptions check_opt;
  auto* check = app.add_subcommand("check", "fast invariant checks");
  add_common(check, check_opt, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_opt);
    if (*compare) return cmd_compare(cmp_opt, seed_count);
    if (*truth) return cmd_truth(truth_opt);
    if (*check) return cmd_check(check_opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "roacolearn: %s\n", e.what());
    return 1;
  }
  return 1;
}
