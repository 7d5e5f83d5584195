#include "roacolearn/roacolearn.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <new>
#include <string>

#include "json.hpp"
#include "roacolearn/harness.hpp"
#include "roacolearn/io.hpp"

struct rcl_config {
  roa::RunConfig cfg;
};

struct rcl_result {
  roa::RunResult result;
  std::string stop;
};

struct rcl_comparison {
  roa::ComparisonTable table;
  std::vector<std::string> methods;
};

namespace {

thread_local std::string g_last_error;

rcl_status fail(rcl_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `body`, translating library exceptions into status codes.
template <typename Fn>
rcl_status guarded(Fn&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const roa::Error& e) {
    return fail(static_cast<rcl_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(RCL_E_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RCL_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(RCL_E_INTERNAL, e.what());
  }
}

char* duplicate(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define RCL_REQUIRE(cond, msg) \
  do {                         \
    if (!(cond)) return fail(RCL_E_INVALID_ARGUMENT, msg); \
  } while (0)

}  // namespace

extern "C" {

const char* rcl_last_error(void) { return g_last_error.c_str(); }

const char* rcl_status_string(rcl_status status) {
  if (status == RCL_OK) return "ok";
  if (status == RCL_E_INTERNAL) return "internal error";
  if (status >= RCL_E_INVALID_ARGUMENT && status <= RCL_E_EMPTY_INTERIOR) {
    return roa::to_string(static_cast<roa::ErrorCode>(status));
  }
  return "unknown status";
}

void rcl_string_free(char* s) { delete[] s; }

rcl_status rcl_config_default(rcl_config** out) {
  RCL_REQUIRE(out, "null output pointer");
  return guarded([&] {
    *out = new rcl_config{};
    return RCL_OK;
  });
}

rcl_status rcl_config_from_json(const char* text, rcl_config** out) {
  RCL_REQUIRE(text && out, "null argument");
  return guarded([&] {
    const auto j = nlohmann::json::parse(text);
    auto cfg = roa::run_config_from_json(j);
    cfg.validate();
    *out = new rcl_config{std::move(cfg)};
    return RCL_OK;
  });
}

rcl_status rcl_config_load(const char* path, rcl_config** out) {
  RCL_REQUIRE(path && out, "null argument");
  return guarded([&] {
    const std::string text = roa::read_text_file(path);
    return rcl_config_from_json(text.c_str(), out);
  });
}

rcl_status rcl_config_clone(const rcl_config* cfg, rcl_config** out) {
  RCL_REQUIRE(cfg && out, "null argument");
  return guarded([&] {
    *out = new rcl_config{*cfg};
    return RCL_OK;
  });
}

void rcl_config_free(rcl_config* cfg) { delete cfg; }

rcl_status rcl_config_set_seed(rcl_config* cfg, uint64_t seed) {
  RCL_REQUIRE(cfg, "null config");
  cfg->cfg.seed = seed;
  return RCL_OK;
}

rcl_status rcl_config_set_method(rcl_config* cfg, const char* method) {
  RCL_REQUIRE(cfg && method, "null argument");
  return guarded([&] {
    cfg->cfg = roa::configure_method(cfg->cfg, roa::parse_method(method));
    return RCL_OK;
  });
}

rcl_status rcl_config_set_max_stages(rcl_config* cfg, int stages) {
  RCL_REQUIRE(cfg, "null config");
  RCL_REQUIRE(stages >= 0, "max stages must be >= 0");
  cfg->cfg.max_stages = stages;
  return RCL_OK;
}

rcl_status rcl_config_to_json(const rcl_config* cfg, char** out) {
  RCL_REQUIRE(cfg && out, "null argument");
  return guarded([&] {
    *out = duplicate(roa::to_json(cfg->cfg).dump(2));
    return RCL_OK;
  });
}

rcl_status rcl_run(const rcl_config* cfg, rcl_result** out) {
  RCL_REQUIRE(cfg && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    cfg->cfg.validate();
    auto* r = new rcl_result{roa::run(cfg->cfg), {}};
    r->stop = roa::to_string(r->result.stop);
    *out = r;
    if (!r->result.ok()) {
      // The diagnostic is "<code>: <message>"; recover the code when present.
      for (int code = RCL_E_INVALID_ARGUMENT; code <= RCL_E_EMPTY_INTERIOR; ++code) {
        const std::string prefix =
            std::string(roa::to_string(static_cast<roa::ErrorCode>(code))) + ":";
        if (r->result.diagnostic.rfind(prefix, 0) == 0) {
          return fail(static_cast<rcl_status>(code), r->result.diagnostic);
        }
      }
      return fail(RCL_E_INTERNAL, r->result.diagnostic);
    }
    return RCL_OK;
  });
}

void rcl_result_free(rcl_result* result) { delete result; }

size_t rcl_result_stage_count(const rcl_result* result) {
  return result ? result->result.reports.size() : 0;
}

rcl_status rcl_result_stage(const rcl_result* result, size_t index, rcl_stage_report* out) {
  RCL_REQUIRE(result && out, "null argument");
  RCL_REQUIRE(index < result->result.reports.size(), "stage index out of range");
  const auto& r = result->result.reports[index];
  *out = rcl_stage_report{r.stage,
                          r.level_before,
                          r.level,
                          r.gap_volume,
                          r.new_trajectories,
                          r.cumulative_trajectories,
                          r.stable_labels,
                          r.unstable_labels,
                          r.ode_mse,
                          r.decrease_violations,
                          r.level_shrunk ? 1 : 0};
  return RCL_OK;
}

const char* rcl_result_stop_reason(const rcl_result* result) {
  return result ? result->stop.c_str() : "";
}

const char* rcl_result_diagnostic(const rcl_result* result) {
  return result ? result->result.diagnostic.c_str() : "";
}

double rcl_result_level(const rcl_result* result) {
  return result ? result->result.lyapunov.level() : std::numeric_limits<double>::quiet_NaN();
}

size_t rcl_result_dim(const rcl_result* result) {
  return result ? static_cast<size_t>(result->result.lyapunov.dim()) : 0;
}

size_t rcl_result_trajectory_count(const rcl_result* result) {
  return result ? result->result.trajectories.size() : 0;
}

rcl_status rcl_result_eval_lyapunov(const rcl_result* result, const double* x, size_t count,
                                    double* values) {
  RCL_REQUIRE(result && (count == 0 || (x && values)), "null argument");
  return guarded([&] {
    const auto n = static_cast<Eigen::Index>(rcl_result_dim(result));
    const Eigen::Map<const Eigen::MatrixXd> states(x, n, static_cast<Eigen::Index>(count));
    const Eigen::VectorXd v = result->result.lyapunov.values(states);
    std::copy(v.data(), v.data() + v.size(), values);
    return RCL_OK;
  });
}

rcl_status rcl_result_eval_field(const rcl_result* result, const double* x, size_t count,
                                 double* field) {
  RCL_REQUIRE(result && (count == 0 || (x && field)), "null argument");
  return guarded([&] {
    const auto n = static_cast<Eigen::Index>(rcl_result_dim(result));
    const Eigen::MatrixXd states =
        Eigen::Map<const Eigen::MatrixXd>(x, n, static_cast<Eigen::Index>(count));
    const Eigen::MatrixXd f = roa::forward(result->result.dynamics, states);
    std::copy(f.data(), f.data() + f.size(), field);
    return RCL_OK;
  });
}

rcl_status rcl_result_mse(const rcl_result* result, double* out) {
  RCL_REQUIRE(result && out, "null argument");
  if (!result->result.true_boundary) {
    return fail(RCL_E_PRECONDITION, "no true ROA boundary for this system");
  }
  return guarded([&] {
    const auto& cfg = result->result.config;
    *out = roa::compute_mse(result->result.dynamics, cfg.system_spec(),
                            *result->result.true_boundary, cfg.mse_resolution);
    return RCL_OK;
  });
}

rcl_status rcl_result_export(const rcl_result* result, const char* dir) {
  RCL_REQUIRE(result && dir, "null argument");
  return guarded([&] {
    roa::export_plots(result->result, dir);
    return RCL_OK;
  });
}

rcl_status rcl_truth_export(const rcl_config* cfg, const char* dir, double* area) {
  RCL_REQUIRE(cfg && dir, "null argument");
  return guarded([&] {
    const roa::RoaBoundary b = roa::export_truth(cfg->cfg, dir);
    if (area) *area = b.area();
    return RCL_OK;
  });
}

rcl_status rcl_compare(const rcl_config* cfg, const uint64_t* seeds, size_t seed_count,
                       rcl_comparison** out) {
  RCL_REQUIRE(cfg && seeds && out && seed_count > 0, "null argument or no seeds");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::uint64_t> list(seeds, seeds + seed_count);
    auto* t = new rcl_comparison{roa::run_comparison(cfg->cfg, list), {}};
    for (const auto& row : t->table.rows) t->methods.push_back(roa::to_string(row.method));
    *out = t;
    return RCL_OK;
  });
}

void rcl_comparison_free(rcl_comparison* table) { delete table; }

size_t rcl_comparison_row_count(const rcl_comparison* table) {
  return table ? table->table.rows.size() : 0;
}

rcl_status rcl_comparison_row_at(const rcl_comparison* table, size_t index,
                                 rcl_comparison_row* out) {
  RCL_REQUIRE(table && out, "null argument");
  RCL_REQUIRE(index < table->table.rows.size(), "row index out of range");
  const auto& r = table->table.rows[index];
  *out = rcl_comparison_row{r.seed, table->methods[index].c_str(), r.trajectories,
                            r.stages, r.mse, r.error.c_str()};
  return RCL_OK;
}

rcl_status rcl_comparison_median(const rcl_comparison* table, const char* method,
                                 double* trajectories, double* mse) {
  RCL_REQUIRE(table && method, "null argument");
  return guarded([&] {
    const roa::Method m = roa::parse_method(method);
    for (const auto& med : table->table.medians) {
      if (med.method != m) continue;
      if (trajectories) *trajectories = med.trajectories;
      if (mse) *mse = med.mse;
      return RCL_OK;
    }
    return fail(RCL_E_INVALID_ARGUMENT, "method not in table");
  });
}

rcl_status rcl_comparison_export(const rcl_comparison* table, const char* dir) {
  RCL_REQUIRE(table && dir, "null argument");
  return guarded([&] {
    roa::write_comparison(table->table, dir);
    return RCL_OK;
  });
}

rcl_status rcl_check(const rcl_config* cfg, char** report, int* all_passed) {
  RCL_REQUIRE(cfg && report, "null argument");
  return guarded([&] {
    const auto checks = roa::run_checks(cfg->cfg);
    nlohmann::json j = nlohmann::json::array();
    bool ok = true;
    for (const auto& c : checks) {
      j.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      ok = ok && c.passed;
    }
    *report = duplicate(j.dump(2));
    if (all_passed) *all_passed = ok ? 1 : 0;
    return RCL_OK;
  });
}

}  // extern "C"
