// Python bindings for the core operations: exact tabular machinery, policy
// transport, the verification suite, the point-mass tasks, and the training
// entry points.

#include "apb/errors.hpp"
#include "apb/experiment.hpp"
#include "apb/theory_suite.hpp"
#include "apb/transfer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace apb;

namespace {

StateMapMode parse_mode(const std::string& name) {
    if (name == "permutation-search") return StateMapMode::PermutationSearch;
    if (name == "rank-one") return StateMapMode::RankOne;
    if (name == "least-squares") return StateMapMode::LeastSquares;
    throw ValidationError("unknown state-map mode: " + name);
}

py::dict bound_report_dict(const BoundReport& r) {
    py::dict d;
    d["lipschitz_constant"] = r.lipschitz_constant;
    d["head_operator_norm"] = r.head_operator_norm;
    d["ood_count"] = r.ood_count;
    d["eps_max"] = r.eps_max;
    d["bound_value"] = r.bound_value;
    d["empirical_error"] = r.empirical_error;
    d["bound_holds"] = r.bound_holds;
    return d;
}

py::dict transport_report_dict(const IsomorphicTransportReport& r) {
    py::dict d;
    d["max_linear_image_deviation"] = r.max_linear_image_deviation;
    d["value_consistency_deviation"] = r.value_consistency_deviation;
    d["all_actions_optimal"] = r.all_actions_optimal;
    d["greedy_rollouts_reach_goal"] = r.greedy_rollouts_reach_goal;
    d["row_block_stochastic"] = r.row_block_stochastic;
    py::list actions;
    for (const TransportedStateCheck& c : r.states) actions.append(c.transported_action);
    d["transported_actions"] = actions;
    return d;
}

ExperimentConfig config_from_text(const std::string& text) {
    return text.empty() ? ExperimentConfig::defaults()
                        : ExperimentConfig::from_json_text(text);
}

} // namespace

PYBIND11_MODULE(_apb, m) {
    m.doc() = "Tabular policy transport, frozen-trunk adaptation, and the "
              "verification suite";

    py::register_exception<StructuralError>(m, "StructuralError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DegenerateInputError>(m, "DegenerateInputError",
                                                 PyExc_ValueError);
    py::register_exception<ExtractionError>(m, "ExtractionError", PyExc_ValueError);
    py::register_exception<NoSolutionError>(m, "NoSolutionError", PyExc_ValueError);

    // --- tabular core -------------------------------------------------------
    py::class_<TabularMdp>(m, "TabularMdp")
        .def_static(
            "create",
            [](int n_states, int n_actions, const Matrix& transition,
               const Vector& reward, double discount) {
                return TabularMdp::create(n_states, n_actions, transition, reward,
                                          discount);
            },
            py::arg("n_states"), py::arg("n_actions"), py::arg("transition"),
            py::arg("reward"), py::arg("discount"))
        .def_readonly("n_states", &TabularMdp::n_states)
        .def_readonly("n_actions", &TabularMdp::n_actions)
        .def_readonly("transition", &TabularMdp::transition)
        .def_readonly("reward", &TabularMdp::reward)
        .def_readonly("discount", &TabularMdp::discount)
        .def("flat_index", &TabularMdp::flat_index);

    py::class_<PolicyMatrix>(m, "PolicyMatrix")
        .def_readonly("data", &PolicyMatrix::data)
        .def("table", &PolicyMatrix::table)
        .def("distribution", &PolicyMatrix::distribution);

    py::class_<PolicyDecomposition>(m, "PolicyDecomposition")
        .def_readonly("rank_one", &PolicyDecomposition::rank_one)
        .def_readonly("null_part", &PolicyDecomposition::null_part)
        .def_readonly("pivot", &PolicyDecomposition::pivot);

    m.def("policy_matrix", &policy_matrix, py::arg("mdp"), py::arg("table"));
    m.def("state_values", &state_values, py::arg("mdp"), py::arg("pi"));
    m.def("pivot_vector", &pivot_vector, py::arg("mdp"), py::arg("values"));
    m.def("decompose_policy", &decompose_policy, py::arg("mdp"), py::arg("pi"));
    m.def("solve_optimal_policy",
          [](const TabularMdp& mdp, double tol) {
              auto [pi, values] = solve_optimal_policy(mdp, tol);
              return py::make_tuple(pi, values);
          },
          py::arg("mdp"), py::arg("tol") = 1e-12);
    m.def("save_scenario", &save_scenario);
    m.def("load_scenario", &load_scenario);

    // --- gridworld and transport ---------------------------------------------
    py::class_<GridworldTask>(m, "GridworldTask")
        .def(py::init([](int width, int height, int goal_x, int goal_y) {
                 GridworldTask t;
                 t.width = width;
                 t.height = height;
                 t.goal_x = goal_x;
                 t.goal_y = goal_y;
                 return t;
             }),
             py::arg("width"), py::arg("height"), py::arg("goal_x"), py::arg("goal_y"))
        .def_readonly("width", &GridworldTask::width)
        .def_readonly("height", &GridworldTask::height)
        .def_readonly("goal_x", &GridworldTask::goal_x)
        .def_readonly("goal_y", &GridworldTask::goal_y)
        .def_property_readonly("permutation",
                               [](const GridworldTask& t) { return t.permutation; });

    m.def("gridworld_mdp", &gridworld_mdp);
    m.def("symmetric_task", &symmetric_task, py::arg("reference"), py::arg("symmetry"));

    py::class_<SolvedTask>(m, "SolvedTask")
        .def_readonly("pi", &SolvedTask::pi)
        .def_readonly("values", &SolvedTask::values);
    m.def("solve_task", &solve_task, py::arg("mdp"), py::arg("tol") = 1e-13);

    py::class_<TransportPair>(m, "TransportPair")
        .def_readonly("state_map", &TransportPair::state_map)
        .def_readonly("action_map", &TransportPair::action_map);
    m.def("build_transport_pair", &build_transport_pair, py::arg("task1"),
          py::arg("task2"), py::arg("state_map"));
    m.def("build_state_map",
          [](const Vector& v1, const Vector& v2, const std::string& mode) {
              return build_state_map(v1, v2, parse_mode(mode));
          },
          py::arg("v1"), py::arg("v2"), py::arg("mode"));
    m.def("extract_policy",
          [](const Vector& row, int n_actions) {
              const ExtractedPolicy e = extract_policy(row, n_actions);
              return py::make_tuple(e.state, e.distribution);
          },
          py::arg("row_image"), py::arg("n_actions"));
    m.def("verify_isomorphic_transport",
          [](const GridworldTask& reference, const GridworldTask& permuted) {
              return transport_report_dict(
                  verify_isomorphic_transport(reference, permuted));
          });
    m.def("evaluate_adaptation_bound",
          [](const std::function<Vector(const Vector&)>& f_meta,
             const std::function<Vector(const Vector&)>& f_star, const Matrix& head,
             const std::vector<Vector>& inputs, const std::vector<Vector>& support,
             double lipschitz) {
              return bound_report_dict(evaluate_adaptation_bound(
                  f_meta, f_star, head, inputs, support, lipschitz));
          },
          py::arg("f_meta"), py::arg("f_star"), py::arg("head"),
          py::arg("test_inputs"), py::arg("support"), py::arg("lipschitz_constant"));

    // --- verification suite ---------------------------------------------------
    m.def("run_theory_suite",
          [](std::uint64_t seed, int decomposition_instances, int transport_pairs,
             int bound_trials, const std::vector<std::string>& scenarios) {
              TheorySuiteOptions opts;
              opts.seed = seed;
              opts.decomposition_instances = decomposition_instances;
              opts.transport_pairs = transport_pairs;
              opts.bound_trials = bound_trials;
              opts.scenario_paths = scenarios;
              py::list out;
              for (const TheoryCheck& c : run_theory_suite(opts)) {
                  py::dict d;
                  d["check"] = c.name;
                  d["max_deviation"] = c.max_deviation;
                  d["tolerance"] = c.tolerance;
                  d["pass"] = c.pass;
                  d["detail"] = c.detail;
                  out.append(d);
              }
              return out;
          },
          py::arg("seed") = 0, py::arg("decomposition_instances") = 100,
          py::arg("transport_pairs") = 50, py::arg("bound_trials") = 100,
          py::arg("scenarios") = std::vector<std::string>{});

    // --- point-mass tasks -------------------------------------------------------
    py::class_<TaskSpec>(m, "TaskSpec")
        .def_property_readonly("family",
                               [](const TaskSpec& t) { return family_name(t.family); })
        .def_readonly("param", &TaskSpec::param)
        .def_readonly("is_ood", &TaskSpec::is_ood);
    m.def("sample_train_tasks",
          [](const std::string& family, int n, std::uint64_t seed) {
              return sample_train_tasks({parse_family(family), seed}, n);
          },
          py::arg("family"), py::arg("n"), py::arg("seed"));
    m.def("ood_task",
          [](const std::string& family) { return ood_task(parse_family(family)); });
    m.def("in_train_support", [](const std::string& family, const TaskSpec& task) {
        return in_train_support(parse_family(family), task);
    });

    py::class_<PointMassEnv>(m, "PointMassEnv")
        .def(py::init([](const TaskSpec& task, int horizon) {
                 PointMassConfig cfg;
                 cfg.horizon = horizon;
                 return PointMassEnv(cfg, task);
             }),
             py::arg("task"), py::arg("horizon") = 100)
        .def("reset",
             [](PointMassEnv& env, std::uint64_t seed) {
                 Rng rng(seed);
                 return env.reset(rng);
             },
             py::arg("seed"))
        .def("step", [](PointMassEnv& env, const Vector& action) {
            const auto r = env.step(action);
            return py::make_tuple(r.state, r.reward, r.truncated);
        });

    // --- training entry points ----------------------------------------------------
    m.def("meta_train",
          [](const std::string& family, const std::string& config_json,
             std::uint64_t seed, const std::string& checkpoint_path) {
              ExperimentConfig cfg = config_from_text(config_json);
              MetaTrainConfig mcfg = cfg.meta_train_config();
              mcfg.seed = seed;
              const MetaTrainResult result =
                  meta_train(parse_family(family), mcfg, cfg.actor_config(),
                             cfg.env_config(), cfg.td3_config());
              if (!checkpoint_path.empty())
                  save_checkpoint(checkpoint_path, result.checkpoint);
              py::dict d;
              d["outcome"] = result.outcome;
              d["cycles"] = result.cycles;
              d["env_steps"] = result.env_steps;
              d["grad_steps"] = result.grad_steps;
              d["final_task_returns"] = result.final_task_returns;
              return d;
          },
          py::arg("family"), py::arg("config_json") = std::string{},
          py::arg("seed") = 0, py::arg("checkpoint_path") = std::string{});

    m.def("adapt",
          [](const std::string& family, const std::string& config_json,
             std::uint64_t seed, const std::string& backbone_path, bool baseline,
             bool random_init, const std::string& protocol) {
              ExperimentConfig cfg = config_from_text(config_json);
              const TaskFamily fam = parse_family(family);
              AdaptConfig acfg = cfg.adapt_config(
                  fam, protocol == "action-noise" ? ExploreProtocol::ActionNoise
                                                  : ExploreProtocol::ParamNoise);
              acfg.seed = seed;
              acfg.freeze_backbone = !baseline;
              acfg.random_init_backbone = random_init;
              std::optional<Checkpoint> backbone;
              if (!backbone_path.empty()) backbone = load_checkpoint(backbone_path);
              const AdaptResult result =
                  run_adaptation(backbone, ood_task(fam), acfg, cfg.actor_config(),
                                 cfg.env_config(), cfg.td3_config());
              py::dict d;
              d["outcome"] = result.outcome;
              d["env_steps"] = result.env_steps;
              d["grad_steps"] = result.grad_steps;
              d["final_eval_return"] = result.final_eval_return;
              d["backbone_frozen"] = result.backbone_checksum_before ==
                                     result.backbone_checksum_after;
              d["metrics_csv"] = metrics_csv(result.rows);
              return d;
          },
          py::arg("family"), py::arg("config_json") = std::string{},
          py::arg("seed") = 0, py::arg("backbone_path") = std::string{},
          py::arg("baseline") = false, py::arg("random_init") = false,
          py::arg("protocol") = "action-noise");

    m.def("default_config_json",
          [] { return ExperimentConfig::defaults().resolved_text(); });
}
