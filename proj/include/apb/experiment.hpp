#pragma once

#include "apb/runner.hpp"
#include "apb/theory_suite.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace apb {

using OrderedJson = nlohmann::ordered_json;

// --- metrics CSV (versioned, fixed schema) -----------------------------------

inline constexpr const char* kMetricsVersion = "apb-metrics-v1";

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

// --- experiment configuration -------------------------------------------------

/// Whole-experiment configuration: one JSON document with command-scoped
/// sections and per-family override blocks. Unknown keys are rejected against
/// the default schema; the resolved document is persisted verbatim next to
/// every run's outputs.
class ExperimentConfig {
  public:
    static ExperimentConfig defaults();
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);

    /// Applies "dotted.path=value" (value parsed as JSON when possible).
    void apply_override(const std::string& assignment);

    std::string resolved_text() const; // canonical indented dump
    std::string hash() const;          // digest of the resolved text

    const OrderedJson& json() const { return root_; }

    // Typed views.
    PointMassConfig env_config() const;
    ActorConfig actor_config() const;
    Td3Config td3_config() const;
    MetaTrainConfig meta_train_config() const;
    AdaptConfig adapt_config(TaskFamily family, ExploreProtocol protocol) const;
    BcConfig bc_config(TaskFamily family) const;
    TheorySuiteOptions theory_options() const;
    std::vector<std::uint64_t> seeds() const;
    std::string output_root() const; // APB_OUT_ROOT env var wins when set

    // Per-family adaptation knobs (exploration sigma per protocol).
    double explore_sigma(TaskFamily family, ExploreProtocol protocol) const;

  private:
    void validate() const;
    OrderedJson root_;
};

// --- run directories and records ----------------------------------------------

/// Creates `<root>/<prefix>-<k>` with the smallest unused k. Existing run
/// output is never overwritten.
std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   const std::string& prefix);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Source revision compiled into the binary (git short hash or "unknown").
std::string source_revision();

/// Per-run metadata written as run.json.
struct ExperimentRecord {
    std::string run_id;
    std::string command;
    std::string method; // e.g. apb, baseline, apb-random-init, bc-apb-frozen
    std::string family;
    std::string config_hash;
    std::string revision;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outcomes;      // per seed
    std::vector<double> final_returns;      // per seed
    OrderedJson extra;                      // command-specific fields

    OrderedJson to_json() const;
    static ExperimentRecord from_json(const OrderedJson& j);
};

void write_record(const std::filesystem::path& run_dir, const ExperimentRecord& record);
ExperimentRecord read_record(const std::filesystem::path& run_dir);

// --- report aggregation ---------------------------------------------------------

struct LoadedRun {
    std::filesystem::path dir;
    ExperimentRecord record;
    std::vector<std::vector<MetricRow>> per_seed_rows;
};

LoadedRun load_run(const std::filesystem::path& run_dir);

/// Mean/std/CI curves resampled on a shared env-step grid plus per-run final
/// summaries and one verdict line per family for paired methods. Refuses
/// directories whose task families do not match.
std::string report_comparison(const std::vector<LoadedRun>& runs, int grid_points = 50);

} // namespace apb
