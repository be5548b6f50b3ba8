#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "snmm/blip.hpp"
#include "snmm/estimator.hpp"
#include "snmm/exposure.hpp"
#include "snmm/variance.hpp"

namespace snmm {

// Derived causal quantities computed from a fitted model:
//   UntreatedTrajectory  mean outcome had no unit ever been exposed,
//                        Pn H_{0,k} at the fitted parameters;
//   SubgroupBlipMean     mean last-blip effect gamma_{m,k} among the
//                        (sampling unit, member) pairs a selector picks out;
//   BlipValue            gamma_{m,k} evaluated at one fixed history point.
enum class EstimandKind { UntreatedTrajectory, SubgroupBlipMean, BlipValue };

const char* estimand_kind_name(EstimandKind kind);
EstimandKind estimand_kind_from_name(const std::string& name);

enum class SelectorOp { Eq, Ne, Lt, Le, Gt, Ge };

// One comparison over a unit's history: a mapped-exposure component or
// covariate at a time reference, compared against a constant.
struct SelectorAtom {
    Factor ref;  // OwnExposure / MappedComponent / Covariate references only
    SelectorOp op = SelectorOp::Eq;
    double value = 0.0;
};

// Conjunction of atoms, or one of two named subgroup shorthands:
//   direct_only    exposed itself at m, no indirect exposure at m
//   indirect_only  unexposed itself at m, some indirect exposure at m
// With a full-cluster exposure mapping the member's own slot inside the
// mapped vector is ignored when judging "indirect" exposure.
struct Selector {
    enum class Builtin { None, DirectOnly, IndirectOnly };
    Builtin builtin = Builtin::None;
    std::vector<SelectorAtom> atoms;
};

// Grammar: "direct_only" | "indirect_only" | atom ("&" atom)*.
// atom: ref op NUMBER; ref: a[t] | h[t][r] | l[t][j]; t: m, m-INT, or INT;
// op: = == != < <= > >=. References after the decision time are rejected.
Selector parse_selector(const std::string& text);
std::string print_selector(const Selector& selector);

// True when row i of the mapped panel satisfies the selector at decision
// time m. Out-of-range time references raise IndexError; references past m
// raise LeakageError.
bool selector_matches(const Selector& selector, const MappedPanel& mapped, int i, int m);

struct EstimandSpec {
    EstimandKind kind = EstimandKind::UntreatedTrajectory;
    std::string label;  // report name; synthesized from the fields if empty
    int k = 1;          // outcome period
    int m = 0;          // blip period (SubgroupBlipMean / BlipValue)
    int member = 0;     // cluster position for BlipValue evaluation
    std::string selector;  // subgroup predicate, or equality pins for BlipValue
};

std::string estimand_label(const EstimandSpec& spec);

// Mean fully blipped-down outcome Pn H_{0,k}(psi): the expected outcome at
// period k had no unit ever been exposed.
double untreated_trajectory(const EstimationResult& result, const MappedPanel& mapped,
                            const BlipModel& model, int k);

// Mean of gamma_{m,k}(history; psi_hat) over the (sampling unit, member)
// pairs the selector picks out at period m. EmptySubgroup if none match.
double subgroup_blip_mean(const EstimationResult& result, const MappedPanel& mapped,
                          const BlipModel& model, const EstimandSpec& spec);

// gamma_{m,k} at one fixed history point: the selector's equality atoms pin
// history components, everything unmentioned is zero.
double blip_value_at(const EstimationResult& result, const MappedPanel& mapped,
                     const BlipModel& model, const EstimandSpec& spec);

// Same pinned evaluation at an arbitrary parameter vector, without a panel;
// mapped_dimension and covariate_count bound the pin indices. Used to turn a
// known parameter vector into reference values for blip-value estimands.
double pinned_blip_value(const Eigen::VectorXd& psi, int mapped_dimension,
                         int covariate_count, const BlipModel& model,
                         const EstimandSpec& spec);

// Dispatch on spec.kind. Optional row weights (one per panel row) reweight
// the sample means; used to evaluate estimands inside bootstrap resamples.
double evaluate_estimand(const Eigen::VectorXd& psi, const MappedPanel& mapped,
                         const BlipModel& model, const EstimandSpec& spec,
                         const Eigen::VectorXd* row_weights = nullptr);
double evaluate_estimand(const EstimationResult& result, const MappedPanel& mapped,
                         const BlipModel& model, const EstimandSpec& spec);

struct EstimandEstimate {
    EstimandSpec spec;
    std::string label;
    double value = 0.0;
    double se = 0.0;
    double ci_level = 0.95;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    Eigen::VectorXd replicate_values;
};

// Point estimate plus bootstrap uncertainty: the estimand is re-evaluated
// inside every stored bootstrap replicate (same resample weights, replicate
// parameter vector), giving a percentile interval and a standard error.
// Requires a bootstrap variance estimate; ConfigError otherwise.
EstimandEstimate estimand_with_uncertainty(const EstimationResult& result,
                                           const MappedPanel& mapped, const BlipModel& model,
                                           const EstimandSpec& spec,
                                           const VarianceEstimate& variance);

}  // namespace snmm
