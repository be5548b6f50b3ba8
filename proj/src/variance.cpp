#include "snmm/variance.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "snmm/errors.hpp"
#include "snmm/rng.hpp"

namespace snmm {

namespace {

constexpr double kNormal975 = 1.959963984540054;  // z for the fixed 95% level
constexpr int kMaxResampleRetries = 10;

std::string format_int(long long v) { return std::to_string(v); }

// S_i = G^+ g_i rows; throws JacobianSingular when G has deficient rank.
Eigen::MatrixXd influence_rows(const EstimationResult& result) {
    const Eigen::MatrixXd& jac = result.jacobian;
    if (result.scores.size() == 0)
        throw Error(ErrorCode::ConfigError, "estimation result carries no scores");
    if (jac.rows() == jac.cols()) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw Error(ErrorCode::JacobianSingular,
                        "estimating-equation jacobian is singular");
        return lu.solve(result.scores.transpose()).transpose();
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac.transpose() * jac);
    if (!lu.isInvertible())
        throw Error(ErrorCode::JacobianSingular, "estimating-equation jacobian is rank deficient");
    return lu.solve(jac.transpose() * result.scores.transpose()).transpose();
}

void finish_symmetric(Eigen::MatrixXd& m) { m = ((m + m.transpose()) / 2.0).eval(); }

void normal_intervals(const Eigen::VectorXd& psi, VarianceEstimate& out) {
    out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.ci_lower = psi - kNormal975 * out.se;
    out.ci_upper = psi + kNormal975 * out.se;
}

struct ReplicateSummary {
    Eigen::MatrixXd covariance;
    Eigen::VectorXd se, lower, upper;
};

ReplicateSummary summarize_replicates(const Eigen::MatrixXd& reps) {
    const int b = static_cast<int>(reps.rows());
    const int p = static_cast<int>(reps.cols());
    ReplicateSummary s;
    const Eigen::RowVectorXd mean = reps.colwise().mean();
    const Eigen::MatrixXd centered = reps.rowwise() - mean;
    s.covariance = centered.transpose() * centered / std::max(1, b - 1);
    finish_symmetric(s.covariance);
    s.se = s.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    s.lower.resize(p);
    s.upper.resize(p);
    for (int j = 0; j < p; ++j) {
        std::vector<double> col(reps.col(j).data(), reps.col(j).data() + b);
        s.lower(j) = percentile(col, 0.025);
        s.upper(j) = percentile(std::move(col), 0.975);
    }
    return s;
}

bool retryable(ErrorCode code) {
    return code == ErrorCode::PositivityViolation || code == ErrorCode::IdentificationError ||
           code == ErrorCode::SolveFailed;
}

// Shared bootstrap loop: draw weights per (seed, replicate, attempt), re-fit,
// retry on resample-induced failures, and summarize the replicate solutions.
template <typename DrawWeights>
VarianceEstimate bootstrap_core(const MappedPanel& mapped, const BlipModel& model,
                                const EstimatorConfig& config, int replicates,
                                unsigned long long seed, const DrawWeights& draw,
                                VarianceEstimate out) {
    if (replicates < 2)
        throw Error(ErrorCode::ConfigError,
                    "bootstrap needs at least 2 replicates, got " + format_int(replicates));
    FitContext ctx(mapped, model);
    out.replicate_psi.resize(replicates, ctx.param_count());
    out.replicate_attempts.assign(replicates, 0);
    out.tuning.replicates = replicates;
    out.tuning.seed = seed;
    for (int b = 0; b < replicates; ++b) {
        bool done = false;
        for (int attempt = 0; attempt <= kMaxResampleRetries && !done; ++attempt) {
            const Eigen::VectorXd w = draw(derive_stream(seed, static_cast<unsigned long long>(b),
                                                         static_cast<unsigned long long>(attempt)));
            try {
                const EstimationResult fit = ctx.fit(config, &w, /*want_scores=*/false);
                out.replicate_psi.row(b) = fit.psi_hat.transpose();
                out.replicate_attempts[b] = attempt;
                out.tuning.retries_used += attempt;
                done = true;
            } catch (const Error& err) {
                if (!retryable(err.code()))
                    throw;
                if (attempt == kMaxResampleRetries)
                    throw Error(err.code(),
                                "bootstrap replicate " + format_int(b) + " failed after " +
                                    format_int(kMaxResampleRetries) +
                                    " resampling retries; last failure: " + err.what());
            }
        }
    }
    const ReplicateSummary s = summarize_replicates(out.replicate_psi);
    out.covariance = s.covariance;
    out.se = s.se;
    out.ci_lower = s.lower;
    out.ci_upper = s.upper;
    return out;
}

}  // namespace

const char* kernel_kind_name(KernelKind kind) {
    switch (kind) {
        case KernelKind::Bartlett: return "bartlett";
        case KernelKind::Uniform: return "uniform";
    }
    return "unknown";
}

KernelKind kernel_kind_from_name(const std::string& name) {
    if (name == "bartlett") return KernelKind::Bartlett;
    if (name == "uniform") return KernelKind::Uniform;
    throw Error(ErrorCode::ConfigError,
                "unknown kernel '" + name + "' (expected bartlett or uniform)");
}

double kernel_weight(const KernelSpec& kernel, double u) {
    switch (kernel.kind) {
        case KernelKind::Bartlett: return std::max(0.0, 1.0 - u);
        case KernelKind::Uniform: return u <= 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::InvalidSize, "percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

VarianceEstimate sandwich_cluster(const EstimationResult& result) {
    const Eigen::MatrixXd shat = influence_rows(result);
    const double n = static_cast<double>(shat.rows());
    VarianceEstimate out;
    out.method = "sandwich";
    out.covariance = shat.transpose() * shat / (n * n);
    finish_symmetric(out.covariance);
    normal_intervals(result.psi_hat, out);
    return out;
}

VarianceEstimate network_hac(const EstimationResult& result, const NetworkGraph& graph,
                             const KernelSpec& kernel, double bandwidth, int max_lag) {
    const int n = static_cast<int>(result.scores.rows());
    const int q = static_cast<int>(result.scores.cols());
    if (graph.unit_count() != n)
        throw Error(ErrorCode::InvalidSize,
                    "graph has " + format_int(graph.unit_count()) + " units but " +
                        format_int(n) + " scores; network uncertainty needs one node per score");
    if (!(bandwidth > 0.0))
        throw Error(ErrorCode::ConfigError, "HAC bandwidth must be positive");
    if (max_lag < 0) throw Error(ErrorCode::ConfigError, "HAC max lag must be >= 0");

    VarianceEstimate out;
    out.method = "network-hac";
    out.tuning.kernel = kernel_kind_name(kernel.kind);
    out.tuning.bandwidth = bandwidth;
    out.tuning.max_lag = max_lag;

    // Effective lag: beyond the kernel's support the weights vanish anyway.
    int effective = 0;
    while (effective < max_lag &&
           kernel_weight(kernel, static_cast<double>(effective + 1) / bandwidth) > 0.0)
        ++effective;

    const Eigen::MatrixXd& g = result.scores;
    Eigen::MatrixXd sigma = g.transpose() * g / static_cast<double>(n);  // lag 0, weight 1
    for (int i = 0; i < n && effective > 0; ++i) {
        const auto rings = graph_rings_up_to(graph, i, effective);
        for (int s = 1; s < static_cast<int>(rings.size()); ++s) {
            if (rings[s].empty()) continue;
            const double w = kernel_weight(kernel, static_cast<double>(s) / bandwidth);
            if (w <= 0.0) continue;
            Eigen::RowVectorXd ring_sum = Eigen::RowVectorXd::Zero(q);
            for (int j : rings[s]) ring_sum += g.row(j);
            sigma.noalias() += (w / static_cast<double>(n)) * g.row(i).transpose() * ring_sum;
        }
    }
    finish_symmetric(sigma);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const Eigen::VectorXd values = eig.eigenvalues();
    double clipped = 0.0;
    for (int j = 0; j < values.size(); ++j)
        if (values(j) < 0.0) clipped += -values(j);
    if (clipped > 0.0) {
        out.tuning.clipped_magnitude = clipped;
        out.diagnostics.add_warning(
            ErrorCode::NegativeEigenvalue,
            "long-run score covariance had negative eigenvalues (smallest " +
                std::to_string(values.minCoeff()) + ", total clipped magnitude " +
                std::to_string(clipped) + "); clipped to zero",
            "variance/network-hac");
        sigma = eig.eigenvectors() * values.cwiseMax(0.0).asDiagonal() *
                eig.eigenvectors().transpose();
    }

    const Eigen::MatrixXd& jac = result.jacobian;
    Eigen::MatrixXd v;
    if (jac.rows() == jac.cols()) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw Error(ErrorCode::JacobianSingular, "estimating-equation jacobian is singular");
        const Eigen::MatrixXd left = lu.solve(sigma);        // G^{-1} Sigma
        v = lu.solve(left.transpose()).transpose();          // ... G^{-T}
    } else {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac.transpose() * jac);
        if (!lu.isInvertible())
            throw Error(ErrorCode::JacobianSingular,
                        "estimating-equation jacobian is rank deficient");
        const Eigen::MatrixXd pinv = lu.solve(jac.transpose());  // (G'G)^{-1} G'
        v = pinv * sigma * pinv.transpose();
    }
    out.covariance = v / static_cast<double>(n);
    finish_symmetric(out.covariance);
    normal_intervals(result.psi_hat, out);
    return out;
}

double default_hac_bandwidth(const MappedPanel& mapped) {
    return static_cast<double>(mapped.mapping_radius + 1);
}

int default_hac_max_lag(const NetworkGraph& graph) {
    const int n = graph.unit_count();
    int diameter = 0;
    std::vector<int> dist(n);
    std::queue<int> frontier;
    for (int start = 0; start < n; ++start) {
        std::fill(dist.begin(), dist.end(), -1);
        dist[start] = 0;
        frontier.push(start);
        while (!frontier.empty()) {
            const int u = frontier.front();
            frontier.pop();
            diameter = std::max(diameter, dist[u]);
            for (int v : graph.adjacency[u])
                if (dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    frontier.push(v);
                }
        }
    }
    return diameter + 1;  // smallest distance with empty rings everywhere
}

Eigen::VectorXd moving_block_weights(int unit_count, int block_length,
                                     unsigned long long stream) {
    std::mt19937_64 rng(stream);  // stream is already a derived value
    std::uniform_int_distribution<int> start(0, unit_count - 1);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(unit_count);
    int remaining = unit_count;
    while (remaining > 0) {
        const int s = start(rng);
        const int len = std::min(block_length, remaining);  // truncate the final block
        for (int o = 0; o < len; ++o) w((s + o) % unit_count) += 1.0;
        remaining -= len;
    }
    return w;
}

Eigen::VectorXd block_draw_weights(const BlockPlan& plan, int unit_count,
                                   unsigned long long stream) {
    const int blocks = static_cast<int>(plan.blocks.size());
    std::mt19937_64 rng(stream);  // stream is already a derived value
    std::uniform_int_distribution<int> pick(0, blocks - 1);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(unit_count);
    for (int d = 0; d < blocks; ++d)
        for (int e : plan.blocks[pick(rng)]) w(e) += 1.0;
    return w;
}

VarianceEstimate moving_block_bootstrap(const MappedPanel& mapped, const BlipModel& model,
                                        const EstimatorConfig& config, int block_length,
                                        int replicates, unsigned long long seed) {
    const int e_count = mapped.sampling_unit_count();
    if (block_length < 1)
        throw Error(ErrorCode::ConfigError, "moving-block length must be >= 1");
    VarianceEstimate out;
    out.method = "moving-block-bootstrap";
    out.tuning.block_length = block_length;
    out.plan.replicate_count = replicates;
    out.plan.seed = seed;
    out.plan.blocks.reserve(e_count);
    const int stored = std::min(block_length, e_count);
    for (int s = 0; s < e_count; ++s) {
        std::vector<int> block(stored);
        for (int o = 0; o < stored; ++o) block[o] = (s + o) % e_count;
        out.plan.blocks.push_back(std::move(block));
    }
    return bootstrap_core(mapped, model, config, replicates, seed,
                          [e_count, block_length](unsigned long long stream) {
                              return moving_block_weights(e_count, block_length, stream);
                          },
                          std::move(out));
}

std::vector<std::vector<int>> hex_blocks(const Eigen::MatrixX2d& coords, double width_km) {
    if (!(width_km > 0.0))
        throw Error(ErrorCode::ConfigError, "hexagon width must be positive");
    const int n = static_cast<int>(coords.rows());
    const double min_x = coords.col(0).minCoeff();
    const double min_y = coords.col(1).minCoeff();
    const double size = width_km / 2.0;  // flat-top: width spans corner to corner

    std::map<std::pair<long long, long long>, int> cell_index;
    std::vector<std::vector<int>> blocks;
    for (int i = 0; i < n; ++i) {
        const double x = coords(i, 0) - min_x;
        const double y = coords(i, 1) - min_y;
        const double qf = (2.0 / 3.0) * x / size;
        const double rf = (-1.0 / 3.0 * x + std::sqrt(3.0) / 3.0 * y) / size;
        // Cube rounding keeps the point in the hexagon it falls in.
        const double yf = -qf - rf;
        double rq = std::round(qf), ry = std::round(yf), rr = std::round(rf);
        const double dq = std::abs(rq - qf), dy = std::abs(ry - yf), dr = std::abs(rr - rf);
        if (dq > dy && dq > dr)
            rq = -ry - rr;
        else if (dy > dr)
            ry = -rq - rr;
        else
            rr = -rq - ry;
        const std::pair<long long, long long> cell{static_cast<long long>(rq),
                                                   static_cast<long long>(rr)};
        auto [it, inserted] = cell_index.emplace(cell, static_cast<int>(blocks.size()));
        if (inserted) blocks.emplace_back();
        blocks[it->second].push_back(i);
    }
    return blocks;
}

VarianceEstimate spatial_block_bootstrap(const MappedPanel& mapped, const BlipModel& model,
                                         const EstimatorConfig& config, double hex_width_km,
                                         int replicates, unsigned long long seed) {
    if (!mapped.panel.coordinates)
        throw Error(ErrorCode::StructureMissing,
                    "spatial block bootstrap needs unit coordinates");
    const int e_count = mapped.sampling_unit_count();
    Eigen::MatrixX2d coords(e_count, 2);
    for (int e = 0; e < e_count; ++e)
        coords.row(e) = mapped.panel.coordinates->row(mapped.sampling_units[e].front());

    VarianceEstimate out;
    out.method = "spatial-block-bootstrap";
    out.tuning.hex_width_km = hex_width_km;
    out.tuning.anchor_x_km = coords.col(0).minCoeff();
    out.tuning.anchor_y_km = coords.col(1).minCoeff();
    out.plan.blocks = hex_blocks(coords, hex_width_km);
    out.plan.replicate_count = replicates;
    out.plan.seed = seed;
    if (out.plan.blocks.size() == 1)
        out.diagnostics.add_warning(
            ErrorCode::DegenerateBlocks,
            "all sampling units fall in a single hexagon; every resample repeats the "
            "original data and the reported uncertainty collapses to zero",
            "variance/spatial-block-bootstrap");

    const BlockPlan plan = out.plan;  // lambda keeps its own copy; out is moved below
    return bootstrap_core(mapped, model, config, replicates, seed,
                          [plan, e_count](unsigned long long stream) {
                              return block_draw_weights(plan, e_count, stream);
                          },
                          std::move(out));
}

}  // namespace snmm
