#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snmm/estimands.hpp"
#include "snmm/estimator.hpp"
#include "snmm/exposure.hpp"
#include "snmm/variance.hpp"

namespace snmm {

// Synthetic-panel generators and a Monte Carlo driver for checking the whole
// estimation pipeline against known parameter values.
//
// Both generators share one confounding mechanism: a latent binary trait
// U ~ Bernoulli(1/2) shifts untreated outcome levels (each untreated outcome
// is N(U, noise_sd^2)) and exposure uptake (P(exposed) = base_rate +
// confounder_effect * U). Exposure is initiation-coded over three waves:
// wave-1 uptake is only possible for units unexposed at wave 0. Observed
// outcomes add the model-implied blip effects plus fresh N(0, noise_sd^2)
// noise per wave. noise_sd defaults to sqrt(0.1), i.e. outcome noise
// *variance* 0.1.

// Units on a line graph; the indirect exposure is the neighbor maximum.
struct NetworkStudyConfig {
    int units = 5000;
    unsigned long long seed = 1;
    Eigen::VectorXd psi;  // 13 entries; empty selects default_network_psi()
    double base_rate = 0.3;
    double confounder_effect = 0.2;
    double noise_sd = std::sqrt(0.1);
};

// Two-member clusters; the mapped exposure is the full cluster vector. The
// latent trait is drawn per cluster and shared by both members.
struct ClusterStudyConfig {
    int clusters = 5000;
    unsigned long long seed = 1;
    Eigen::VectorXd psi;  // 7 entries; empty selects default_cluster_psi()
    double base_rate = 0.3;
    double confounder_effect = 0.2;
    double noise_sd = std::sqrt(0.1);
};

// Reference parameter values the default study configurations simulate from.
Eigen::VectorXd default_network_psi();
Eigen::VectorXd default_cluster_psi();

// Blip model fitted in the network study: saturated in (own, neighbor-max)
// history with a linear time-gap trend for the wave-0 blips. Parameters
// psi1..psi13 in the order of default_network_psi().
BlipModel network_study_model();

// Blip model fitted in the cluster study: symmetric across the two members,
// with a wave-1 synergy term (own uptake times the partner's cumulative
// exposure). Parameters psi1_01, psi2_01, psi1_02, psi2_02, psi1_12,
// psi2_12, psi3_12 in the order of default_cluster_psi().
BlipModel cluster_study_model();

// Interference-blind comparison model: own-exposure terms only, in the same
// shape as the network study model's direct effects — a contemporaneous
// time-0 effect (psi_01) plus its per-wave trend increment (psi_02), and a
// contemporaneous time-1 effect (psi_12).
BlipModel no_interference_model();

// Generate one synthetic panel. The returned panel carries the structure
// (line graph / cluster map) and is already mapped (neighbor_max /
// identity_cluster).
MappedPanel gen_network_dgp(const NetworkStudyConfig& config);
MappedPanel gen_cluster_dgp(const ClusterStudyConfig& config);

// The thirteen blip values reported for the network study: every realizable
// exposure/indirect-exposure history point of gamma_{0,1}, gamma_{0,2} and
// gamma_{1,2} under initiation coding.
std::vector<EstimandSpec> network_report_estimands();

// Reference value of each network report estimand implied by a parameter
// vector (13 entries).
Eigen::VectorXd network_report_truths(const Eigen::VectorXd& psi);

struct MonteCarloRow {
    std::string label;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double sd_estimate = 0.0;   // spread of the point estimates across runs
    double mean_se = 0.0;       // average reported standard error
    double coverage = 0.0;      // fraction of 95% intervals containing truth
    int replicates = 0;         // successful runs aggregated into this row
};

struct MonteCarloReport {
    std::string study;            // "network", "cluster", or "naive-comparison"
    std::string variance_method;
    int requested = 0;
    int completed = 0;
    int failed = 0;
    std::string first_failure;    // empty when every run succeeded
    std::string noise_note;       // records the noise-scale convention
    std::vector<MonteCarloRow> rows;

    // Tab-separated human-readable table (header lines, then one line per row).
    std::string to_table() const;
    // Machine-readable JSON with the same content, stable field order.
    std::string to_json() const;
};

enum class StudyKind { Network, Cluster };

// Monte Carlo driver configuration. Each run r draws its panel from
// derive_stream(seed, r, 0) and its bootstrap from derive_stream(seed, r, 1),
// so reports are reproducible bit-for-bit for a fixed configuration.
struct MonteCarloConfig {
    StudyKind study = StudyKind::Network;
    NetworkStudyConfig network;
    ClusterStudyConfig cluster;
    int replicates = 500;
    unsigned long long seed = 1;
    // "moving-block-bootstrap" (percentile intervals) or "sandwich" (normal
    // intervals). With the bootstrap, the network study reports the thirteen
    // blip-value estimands; otherwise rows are the model parameters.
    std::string variance_method = "moving-block-bootstrap";
    int block_length = 5;
    int bootstrap_replicates = 500;
    EstimatorConfig estimator;
};

// Repeatedly generate + fit + attach uncertainty, then aggregate each row's
// truth, mean, spread, mean SE and 95% interval coverage. Individual run
// failures are tolerated up to 5% of the requested runs (SolveFailed above
// that); at least two runs must succeed.
MonteCarloReport run_monte_carlo(const MonteCarloConfig& config);

// Exactly the up-front validation run_monte_carlo performs, without running
// anything. Lets config checkers reject bad studies cheaply.
void check_monte_carlo_config(const MonteCarloConfig& config);

// Head-to-head comparison on network panels of the untreated wave-2 outcome
// mean E[Y_2(never exposed)] (true value 1/2). The aware arm removes every
// fitted blip from the neighbor-max model, which is unbiased here. The blind
// arm fits the no-interference model to direct exposure only and reports
// mean{Y2 - psi_12*A1 - psi_02*A0}: each later-wave coefficient subtracted
// once at its own decision point. Since psi_02 is a trend increment, the
// persistent time-0 effect stays in the average — the classic way a blind
// analysis overstates the untreated path. Both arms use moving-block-
// bootstrap percentile intervals.
struct NaiveComparisonConfig {
    NetworkStudyConfig network;
    int replicates = 500;
    unsigned long long seed = 1;
    int block_length = 5;
    int bootstrap_replicates = 500;
    EstimatorConfig estimator;
};

MonteCarloReport naive_comparison(const NaiveComparisonConfig& config);

// Validation-only counterpart of naive_comparison.
void check_naive_comparison_config(const NaiveComparisonConfig& config);

}  // namespace snmm
