#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "snmm/estimator.hpp"

namespace snmm {

enum class KernelKind { Bartlett, Uniform };

const char* kernel_kind_name(KernelKind kind);
KernelKind kernel_kind_from_name(const std::string& name);

struct KernelSpec {
    KernelKind kind = KernelKind::Bartlett;
};

// kappa(u): Bartlett max(0, 1-u); uniform 1{u <= 1}. kappa(0) = 1 always.
double kernel_weight(const KernelSpec& kernel, double u);

// Resampling pool: candidate blocks of sampling-unit indices. Every index is
// covered by at least one block; moving blocks all have the same length.
struct BlockPlan {
    std::vector<std::vector<int>> blocks;
    int replicate_count = 0;
    unsigned long long seed = 0;
};

struct VarianceTuning {
    std::string kernel;            // HAC kernel name
    double bandwidth = 0.0;        // HAC b_n
    int max_lag = 0;               // HAC S_n
    int block_length = 0;          // moving-block L
    double hex_width_km = 0.0;     // spatial hex width
    double anchor_x_km = 0.0;      // hex grid anchor (bounding-box min corner)
    double anchor_y_km = 0.0;
    int replicates = 0;            // bootstrap B
    unsigned long long seed = 0;
    int retries_used = 0;          // bootstrap resampling retries
    double clipped_magnitude = 0.0;  // |sum of clipped negative eigenvalues|
};

struct VarianceEstimate {
    Eigen::MatrixXd covariance;  // P x P, symmetric PSD
    std::string method;
    VarianceTuning tuning;
    Eigen::VectorXd se;          // sqrt of the covariance diagonal
    double ci_level = 0.95;
    Eigen::VectorXd ci_lower;    // per-parameter confidence bounds
    Eigen::VectorXd ci_upper;
    Eigen::MatrixXd replicate_psi;        // B x P (bootstrap methods only)
    std::vector<int> replicate_attempts;  // RNG sub-stream that produced each row
    BlockPlan plan;                       // bootstrap candidate blocks
    ValidationReport diagnostics;
};

// V = (1/N) Pn{S S^T} with S_i = A^{-1} g_i; equal-weight normal CIs.
VarianceEstimate sandwich_cluster(const EstimationResult& result);

// Network HAC: Sigma = sum_{s<=S_n} kappa(s/b_n) Omega(s) over distance-s
// rings, V = (1/n) G^{-1} Sigma G^{-T}, negative eigenvalues clipped to zero
// (clipping reported as a warning).
VarianceEstimate network_hac(const EstimationResult& result, const NetworkGraph& graph,
                             const KernelSpec& kernel, double bandwidth, int max_lag);

// Documented defaults: bandwidth = mapping dependence radius + 1; max lag =
// smallest distance at which every unit's ring is empty (diameter + 1).
double default_hac_bandwidth(const MappedPanel& mapped);
int default_hac_max_lag(const NetworkGraph& graph);

// Moving block bootstrap over the sampling-unit ordering: each replicate
// concatenates ceil(N/L) circular blocks of length L (truncated to N),
// re-fits nuisances, and re-solves. SEs are replicate SDs; CIs percentile.
VarianceEstimate moving_block_bootstrap(const MappedPanel& mapped, const BlipModel& model,
                                        const EstimatorConfig& config, int block_length,
                                        int replicates, unsigned long long seed);

// Spatial block bootstrap: sampling units tile into flat-top hexagons of the
// given width anchored at the bounding-box min corner; each replicate draws
// #nonempty-hexagons hexagons with replacement and pools their units.
VarianceEstimate spatial_block_bootstrap(const MappedPanel& mapped, const BlipModel& model,
                                         const EstimatorConfig& config, double hex_width_km,
                                         int replicates, unsigned long long seed);

// Deterministic resample multiplicities used by the bootstrap methods; exposed
// so downstream summaries can replay a replicate's weighting exactly.
Eigen::VectorXd moving_block_weights(int unit_count, int block_length,
                                     unsigned long long stream);
Eigen::VectorXd block_draw_weights(const BlockPlan& plan, int unit_count,
                                   unsigned long long stream);

// Flat-top hexagonal tiling of sampling units by their coordinates; blocks in
// first-touched order. Records nothing; callers pair it with the anchor.
std::vector<std::vector<int>> hex_blocks(const Eigen::MatrixX2d& coords, double width_km);

// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

}  // namespace snmm
