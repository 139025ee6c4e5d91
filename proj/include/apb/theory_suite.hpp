#pragma once

#include "apb/rng.hpp"
#include "apb/tabular.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace apb {

/// One verification check: name, worst observed deviation, the tolerance it
/// was held to, and the verdict. Serialized as one JSON object per line.
struct TheoryCheck {
    std::string name;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct TheorySuiteOptions {
    std::uint64_t seed = 0;
    int decomposition_instances = 100; // random MDPs for the rank-one split checks
    int transport_pairs = 50;          // random reward pairs on shared dynamics
    int bound_trials = 100;            // piecewise-linear bound trials
    std::vector<std::string> scenario_paths; // extra user MDPs to check
};

/// Runs every built-in verification and returns one entry per check.
std::vector<TheoryCheck> run_theory_suite(const TheorySuiteOptions& options);

/// JSONL rendering: {"check": ..., "max_deviation": ..., "tolerance": ...,
/// "verdict": "pass"|"fail", "detail": ...} per line.
std::string theory_report_jsonl(const std::vector<TheoryCheck>& checks);

bool all_pass(const std::vector<TheoryCheck>& checks);

// Seeded generators shared by the suite and the test oracles.
TabularMdp random_mdp(Rng& rng, int n_states, int n_actions);
Matrix random_policy_table(Rng& rng, int n_states, int n_actions);

} // namespace apb
