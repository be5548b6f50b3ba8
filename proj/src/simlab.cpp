#include "snmm/simlab.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "snmm/errors.hpp"
#include "snmm/rng.hpp"

namespace snmm {

namespace {

std::string format_count(long long v) { return std::to_string(v); }

std::string format_double(double v, const char* fmt) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

void check_study_knobs(double base_rate, double confounder_effect, double noise_sd) {
    const double low = base_rate;
    const double high = base_rate + confounder_effect;
    if (!(low > 0.0 && low < 1.0 && high > 0.0 && high < 1.0))
        throw Error(ErrorCode::ConfigError,
                    "exposure uptake probabilities must stay inside (0,1); base rate " +
                        format_double(base_rate, "%g") + " with confounder effect " +
                        format_double(confounder_effect, "%g") + " does not");
    if (!(noise_sd >= 0.0))
        throw Error(ErrorCode::ConfigError, "outcome noise sd must be non-negative");
}

std::string noise_note_for(double noise_sd) {
    return "outcome noise sd " + format_double(noise_sd, "%.17g") + " (variance " +
           format_double(noise_sd * noise_sd, "%.17g") + ") per wave";
}

Eigen::VectorXd checked_network_psi(const NetworkStudyConfig& config) {
    if (config.units < 3)
        throw Error(ErrorCode::ConfigError, "network study needs at least 3 units; got " +
                                                format_count(config.units));
    const Eigen::VectorXd psi = config.psi.size() ? config.psi : default_network_psi();
    if (psi.size() != 13)
        throw Error(ErrorCode::InvalidSize,
                    "network study parameter vector has " + format_count(psi.size()) +
                        " entries; the model has 13");
    check_study_knobs(config.base_rate, config.confounder_effect, config.noise_sd);
    return psi;
}

Eigen::VectorXd checked_cluster_psi(const ClusterStudyConfig& config) {
    if (config.clusters < 1)
        throw Error(ErrorCode::ConfigError, "cluster study needs at least 1 cluster; got " +
                                                format_count(config.clusters));
    const Eigen::VectorXd psi = config.psi.size() ? config.psi : default_cluster_psi();
    if (psi.size() != 7)
        throw Error(ErrorCode::InvalidSize,
                    "cluster study parameter vector has " + format_count(psi.size()) +
                        " entries; the model has 7");
    check_study_knobs(config.base_rate, config.confounder_effect, config.noise_sd);
    return psi;
}

}  // namespace

Eigen::VectorXd default_network_psi() {
    Eigen::VectorXd psi(13);
    psi << 1.0, 0.5, -0.1, -0.1, -0.2, -0.05,  // gamma_{0,k} terms
        1.0, 0.5, -0.1, -0.1, -0.1, -0.05, -0.05;  // gamma_{1,2} terms
    return psi;
}

Eigen::VectorXd default_cluster_psi() {
    Eigen::VectorXd psi(7);
    psi << 1.0, 0.5, 2.0, 1.0, 0.75, 0.25, 0.1;
    return psi;
}

BlipModel network_study_model() {
    return parse_blip_spec(
        "m=0 { psi1: a[m]; psi2: h[m][0]; psi3: a[m]*timegap; psi4: h[m][0]*timegap; "
        "psi5: a[m]*h[m][0]; psi6: a[m]*h[m][0]*timegap; } "
        "m=1 { psi7: a[m]; psi8: h[m][0]; psi9: a[m]*h[m][0]; psi10: a[m]*h[m-1][0]; "
        "psi11: h[m][0]*a[m-1]; psi12: h[m][0]*h[m-1][0]; psi13: a[m]*h[m][0]*h[m-1][0]; }");
}

BlipModel cluster_study_model() {
    return parse_blip_spec(
        "m=0,k=1,j=0 { psi1_01: a[m]; psi2_01: h[m][1]; } "
        "m=0,k=1,j=1 { psi1_01: a[m]; psi2_01: h[m][0]; } "
        "m=0,k=2,j=0 { psi1_02: a[m]; psi2_02: h[m][1]; } "
        "m=0,k=2,j=1 { psi1_02: a[m]; psi2_02: h[m][0]; } "
        "m=1,j=0 { psi1_12: a[m]; psi2_12: h[m][1]; "
        "psi3_12: a[m]*h[m-1][1]; psi3_12: a[m]*h[m][1]; } "
        "m=1,j=1 { psi1_12: a[m]; psi2_12: h[m][0]; "
        "psi3_12: a[m]*h[m-1][0]; psi3_12: a[m]*h[m][0]; }");
}

BlipModel no_interference_model() {
    // Own-exposure analogue of the network study model: a contemporaneous
    // effect plus a per-wave trend for the time-0 decision, and a
    // contemporaneous effect for the time-1 decision.  psi_02 is the
    // increment an extra elapsed wave adds on top of psi_01, mirroring how
    // the full model carries its own timegap terms.
    return parse_blip_spec(
        "m=0 { psi_01: a[m]; psi_02: a[m]*timegap; } m=1 { psi_12: a[m]; }");
}

MappedPanel gen_network_dgp(const NetworkStudyConfig& config) {
    const Eigen::VectorXd psi = checked_network_psi(config);

    const int n = config.units;
    const double sd = config.noise_sd;
    std::mt19937_64 rng = make_rng(config.seed, 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(0.0, 1.0);

    Eigen::VectorXd u(n), y0(n), y1p(n), y2p(n), a0(n), a1(n);
    for (int i = 0; i < n; ++i) u(i) = unif(rng) < 0.5 ? 1.0 : 0.0;
    for (int i = 0; i < n; ++i) {
        y0(i) = u(i) + sd * norm(rng);
        y1p(i) = u(i) + sd * norm(rng);
        y2p(i) = u(i) + sd * norm(rng);
    }
    for (int i = 0; i < n; ++i) {
        const double uptake = config.base_rate + config.confounder_effect * u(i);
        a0(i) = unif(rng) < uptake ? 1.0 : 0.0;
    }
    for (int i = 0; i < n; ++i) {
        const double uptake = config.base_rate + config.confounder_effect * u(i);
        const double draw = unif(rng) < uptake ? 1.0 : 0.0;
        a1(i) = a0(i) == 1.0 ? 0.0 : draw;  // initiation coding: one uptake at most
    }

    // Neighbor maximum along the line; end units see their single neighbor.
    auto neighbor_max = [&](const Eigen::VectorXd& a, int i) {
        double h = 0.0;
        if (i > 0) h = std::max(h, a(i - 1));
        if (i + 1 < n) h = std::max(h, a(i + 1));
        return h;
    };

    PanelDataset p;
    p.unit_ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p.unit_ids.push_back("u" + std::to_string(i));
    p.time_labels = {"0", "1", "2"};
    p.exposure = Eigen::MatrixXd::Zero(n, 3);
    p.outcome = Eigen::MatrixXd::Zero(n, 3);
    p.alphabet = ExposureAlphabet::Binary;
    p.graph = line_graph(n);

    for (int i = 0; i < n; ++i) {
        const double h0 = neighbor_max(a0, i);
        const double h1 = neighbor_max(a1, i);
        const double g01 = psi(0) * a0(i) + psi(1) * h0 + psi(4) * a0(i) * h0;
        const double g02 = (psi(0) + psi(2)) * a0(i) + (psi(1) + psi(3)) * h0 +
                           (psi(4) + psi(5)) * a0(i) * h0;
        const double g12 = psi(6) * a1(i) + psi(7) * h1 + psi(8) * a1(i) * h1 +
                           psi(9) * a1(i) * h0 + psi(10) * h1 * a0(i) +
                           psi(11) * h1 * h0 + psi(12) * a1(i) * h1 * h0;
        p.exposure(i, 0) = a0(i);
        p.exposure(i, 1) = a1(i);
        p.outcome(i, 0) = y0(i);
        p.outcome(i, 1) = y1p(i) + g01 + sd * norm(rng);
        p.outcome(i, 2) = y2p(i) + g02 + g12 + sd * norm(rng);
    }

    MappingSpec spec;
    spec.kind = MappingKind::NeighborMax;
    return apply_mapping(p, spec);
}

MappedPanel gen_cluster_dgp(const ClusterStudyConfig& config) {
    const Eigen::VectorXd psi = checked_cluster_psi(config);

    const int n_clusters = config.clusters;
    const int n = 2 * n_clusters;
    const double sd = config.noise_sd;
    std::mt19937_64 rng = make_rng(config.seed, 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(0.0, 1.0);

    Eigen::VectorXd u(n_clusters);
    for (int c = 0; c < n_clusters; ++c) u(c) = unif(rng) < 0.5 ? 1.0 : 0.0;

    Eigen::MatrixXd potentials(n, 3);  // untreated outcomes per member row
    for (int c = 0; c < n_clusters; ++c)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 3; ++k)
                potentials(2 * c + j, k) = u(c) + sd * norm(rng);

    Eigen::VectorXd a0(n), a1(n);
    for (int c = 0; c < n_clusters; ++c) {
        const double uptake = config.base_rate + config.confounder_effect * u(c);
        for (int j = 0; j < 2; ++j) a0(2 * c + j) = unif(rng) < uptake ? 1.0 : 0.0;
    }
    for (int c = 0; c < n_clusters; ++c) {
        const double uptake = config.base_rate + config.confounder_effect * u(c);
        for (int j = 0; j < 2; ++j) {
            const int i = 2 * c + j;
            const double draw = unif(rng) < uptake ? 1.0 : 0.0;
            a1(i) = a0(i) == 1.0 ? 0.0 : draw;
        }
    }

    PanelDataset p;
    p.unit_ids.reserve(static_cast<std::size_t>(n));
    ClusterMap map;
    map.cluster_of.resize(static_cast<std::size_t>(n));
    map.members.resize(static_cast<std::size_t>(n_clusters));
    for (int c = 0; c < n_clusters; ++c) {
        for (int j = 0; j < 2; ++j) {
            const int i = 2 * c + j;
            p.unit_ids.push_back("c" + std::to_string(c) + "m" + std::to_string(j));
            map.cluster_of[static_cast<std::size_t>(i)] = c;
            map.members[static_cast<std::size_t>(c)].push_back(i);
        }
    }
    p.time_labels = {"0", "1", "2"};
    p.exposure = Eigen::MatrixXd::Zero(n, 3);
    p.outcome = Eigen::MatrixXd::Zero(n, 3);
    p.alphabet = ExposureAlphabet::Binary;
    p.clusters = std::move(map);

    for (int c = 0; c < n_clusters; ++c) {
        for (int j = 0; j < 2; ++j) {
            const int i = 2 * c + j;
            const int partner = 2 * c + (1 - j);
            const double g01 = psi(0) * a0(i) + psi(1) * a0(partner);
            const double g02 = psi(2) * a0(i) + psi(3) * a0(partner);
            const double g12 = psi(4) * a1(i) + psi(5) * a1(partner) +
                               psi(6) * a1(i) * (a0(partner) + a1(partner));
            p.exposure(i, 0) = a0(i);
            p.exposure(i, 1) = a1(i);
            p.outcome(i, 0) = potentials(i, 0);
            p.outcome(i, 1) = potentials(i, 1) + g01 + sd * norm(rng);
            p.outcome(i, 2) = potentials(i, 2) + g02 + g12 + sd * norm(rng);
        }
    }

    MappingSpec spec;
    spec.kind = MappingKind::IdentityCluster;
    return apply_mapping(p, spec);
}

std::vector<EstimandSpec> network_report_estimands() {
    auto blip_at = [](int m, int k, const std::string& pins, const std::string& label) {
        EstimandSpec spec;
        spec.kind = EstimandKind::BlipValue;
        spec.m = m;
        spec.k = k;
        spec.selector = pins;
        spec.label = label;
        return spec;
    };
    return {
        blip_at(0, 1, "a[m]=1", "gamma_{0,1}(a0=1, h0=0)"),
        blip_at(0, 1, "a[m]=1 & h[m][0]=1", "gamma_{0,1}(a0=1, h0=1)"),
        blip_at(0, 1, "h[m][0]=1", "gamma_{0,1}(a0=0, h0=1)"),
        blip_at(0, 2, "a[m]=1", "gamma_{0,2}(a0=1, h0=0)"),
        blip_at(0, 2, "a[m]=1 & h[m][0]=1", "gamma_{0,2}(a0=1, h0=1)"),
        blip_at(0, 2, "h[m][0]=1", "gamma_{0,2}(a0=0, h0=1)"),
        blip_at(1, 2, "a[m]=1", "gamma_{1,2}(a=(0,1), h=(0,0))"),
        blip_at(1, 2, "a[m]=1 & h[m-1][0]=1", "gamma_{1,2}(a=(0,1), h=(1,0))"),
        blip_at(1, 2, "a[m]=1 & h[m][0]=1", "gamma_{1,2}(a=(0,1), h=(0,1))"),
        blip_at(1, 2, "a[m]=1 & h[m][0]=1 & h[m-1][0]=1", "gamma_{1,2}(a=(0,1), h=(1,1))"),
        blip_at(1, 2, "h[m][0]=1", "gamma_{1,2}(a=(0,0), h=(0,1))"),
        blip_at(1, 2, "h[m][0]=1 & h[m-1][0]=1", "gamma_{1,2}(a=(0,0), h=(1,1))"),
        blip_at(1, 2, "h[m][0]=1 & a[m-1]=1", "gamma_{1,2}(a=(1,0), h=(0,1))"),
    };
}

Eigen::VectorXd network_report_truths(const Eigen::VectorXd& psi) {
    const BlipModel model = network_study_model();
    const std::vector<EstimandSpec> specs = network_report_estimands();
    Eigen::VectorXd truths(static_cast<Eigen::Index>(specs.size()));
    for (std::size_t i = 0; i < specs.size(); ++i)
        truths(static_cast<Eigen::Index>(i)) = pinned_blip_value(psi, 1, 0, model, specs[i]);
    return truths;
}

namespace {

struct RowAccum {
    std::string label;
    double truth = 0.0;
    std::vector<double> estimates;
    std::vector<double> ses;
    int covered = 0;
};

void accumulate(RowAccum& row, double estimate, double se, double lo, double hi) {
    row.estimates.push_back(estimate);
    row.ses.push_back(se);
    if (row.truth >= lo && row.truth <= hi) ++row.covered;
}

MonteCarloRow finalize_row(const RowAccum& accum) {
    MonteCarloRow row;
    row.label = accum.label;
    row.truth = accum.truth;
    row.replicates = static_cast<int>(accum.estimates.size());
    double sum = 0.0;
    for (double v : accum.estimates) sum += v;
    row.mean_estimate = sum / row.replicates;
    double sq = 0.0;
    for (double v : accum.estimates) sq += (v - row.mean_estimate) * (v - row.mean_estimate);
    row.sd_estimate = row.replicates > 1 ? std::sqrt(sq / (row.replicates - 1)) : 0.0;
    double se_sum = 0.0;
    for (double s : accum.ses) se_sum += s;
    row.mean_se = se_sum / row.replicates;
    row.coverage = static_cast<double>(accum.covered) / row.replicates;
    return row;
}

void check_bootstrap_knobs(int block_length, int bootstrap_replicates) {
    if (block_length < 1)
        throw Error(ErrorCode::ConfigError, "bootstrap block length must be at least 1; got " +
                                                format_count(block_length));
    if (bootstrap_replicates < 2)
        throw Error(ErrorCode::ConfigError, "bootstrap needs at least 2 replicates; got " +
                                                format_count(bootstrap_replicates));
}

void check_run_budget(const MonteCarloReport& report) {
    if (report.completed >= 2 && report.failed * 20 <= report.requested) return;
    std::string message = "only " + format_count(report.completed) + " of " +
                          format_count(report.requested) +
                          " monte carlo runs succeeded (tolerated failure rate 5%)";
    if (!report.first_failure.empty()) message += "; first failure: " + report.first_failure;
    throw Error(ErrorCode::SolveFailed, message);
}

}  // namespace

void check_monte_carlo_config(const MonteCarloConfig& config) {
    if (config.replicates < 2)
        throw Error(ErrorCode::ConfigError, "monte carlo needs at least 2 runs; got " +
                                                format_count(config.replicates));
    const bool bootstrap = config.variance_method == "moving-block-bootstrap";
    if (!bootstrap && config.variance_method != "sandwich")
        throw Error(ErrorCode::ConfigError,
                    "variance method must be 'sandwich' or 'moving-block-bootstrap'; got '" +
                        config.variance_method + "'");
    if (bootstrap) check_bootstrap_knobs(config.block_length, config.bootstrap_replicates);
    if (config.study == StudyKind::Network)
        checked_network_psi(config.network);
    else
        checked_cluster_psi(config.cluster);
}

void check_naive_comparison_config(const NaiveComparisonConfig& config) {
    if (config.replicates < 2)
        throw Error(ErrorCode::ConfigError, "monte carlo needs at least 2 runs; got " +
                                                format_count(config.replicates));
    check_bootstrap_knobs(config.block_length, config.bootstrap_replicates);
    checked_network_psi(config.network);
}

MonteCarloReport run_monte_carlo(const MonteCarloConfig& config) {
    check_monte_carlo_config(config);
    const bool bootstrap = config.variance_method == "moving-block-bootstrap";

    const bool network = config.study == StudyKind::Network;
    const BlipModel model = network ? network_study_model() : cluster_study_model();
    const Eigen::VectorXd psi_true =
        network ? (config.network.psi.size() ? config.network.psi : default_network_psi())
                : (config.cluster.psi.size() ? config.cluster.psi : default_cluster_psi());

    // With bootstrap intervals the network study reports the realizable blip
    // values; otherwise rows are the model parameters themselves.
    const bool estimand_rows = network && bootstrap;
    std::vector<EstimandSpec> specs;
    std::vector<RowAccum> accums;
    if (estimand_rows) {
        specs = network_report_estimands();
        const Eigen::VectorXd truths = network_report_truths(psi_true);
        for (std::size_t i = 0; i < specs.size(); ++i) {
            RowAccum accum;
            accum.label = specs[i].label;
            accum.truth = truths(static_cast<Eigen::Index>(i));
            accums.push_back(std::move(accum));
        }
    } else {
        for (int j = 0; j < model.param_count(); ++j) {
            RowAccum accum;
            accum.label = model.param_labels[static_cast<std::size_t>(j)];
            accum.truth = psi_true(j);
            accums.push_back(std::move(accum));
        }
    }

    MonteCarloReport report;
    report.study = network ? "network" : "cluster";
    report.variance_method = config.variance_method;
    report.requested = config.replicates;
    report.noise_note =
        noise_note_for(network ? config.network.noise_sd : config.cluster.noise_sd);

    for (int r = 0; r < config.replicates; ++r) {
        const unsigned long long dgp_seed =
            derive_stream(config.seed, static_cast<unsigned long long>(r), 0);
        const unsigned long long boot_seed =
            derive_stream(config.seed, static_cast<unsigned long long>(r), 1);
        try {
            MappedPanel mapped = [&] {
                if (network) {
                    NetworkStudyConfig c = config.network;
                    c.seed = dgp_seed;
                    return gen_network_dgp(c);
                }
                ClusterStudyConfig c = config.cluster;
                c.seed = dgp_seed;
                return gen_cluster_dgp(c);
            }();
            const EstimationResult fit = solve_psi(mapped, model, config.estimator);
            if (bootstrap) {
                const VarianceEstimate boot = moving_block_bootstrap(
                    mapped, model, config.estimator, config.block_length,
                    config.bootstrap_replicates, boot_seed);
                if (estimand_rows) {
                    for (std::size_t i = 0; i < specs.size(); ++i) {
                        const EstimandEstimate est =
                            estimand_with_uncertainty(fit, mapped, model, specs[i], boot);
                        accumulate(accums[i], est.value, est.se, est.ci_lower, est.ci_upper);
                    }
                } else {
                    for (int j = 0; j < model.param_count(); ++j)
                        accumulate(accums[static_cast<std::size_t>(j)], fit.psi_hat(j),
                                   boot.se(j), boot.ci_lower(j), boot.ci_upper(j));
                }
            } else {
                const VarianceEstimate sandwich = sandwich_cluster(fit);
                for (int j = 0; j < model.param_count(); ++j)
                    accumulate(accums[static_cast<std::size_t>(j)], fit.psi_hat(j),
                               sandwich.se(j), sandwich.ci_lower(j), sandwich.ci_upper(j));
            }
            ++report.completed;
        } catch (const Error& e) {
            ++report.failed;
            if (report.first_failure.empty()) report.first_failure = e.what();
        }
    }

    check_run_budget(report);
    for (const RowAccum& accum : accums) report.rows.push_back(finalize_row(accum));
    return report;
}

MonteCarloReport naive_comparison(const NaiveComparisonConfig& config) {
    check_naive_comparison_config(config);
    const BlipModel aware_model = network_study_model();
    const BlipModel naive_model = no_interference_model();

    EstimandSpec trajectory;
    trajectory.kind = EstimandKind::UntreatedTrajectory;
    trajectory.k = 2;

    // The untreated mean equals the latent trait mean, 1/2, regardless of the
    // blip parameters and noise scale.
    RowAccum aware_accum;
    aware_accum.label = "E[Y2(never exposed)] interference-aware";
    aware_accum.truth = 0.5;
    RowAccum naive_accum;
    naive_accum.label = "E[Y2(never exposed)] no-interference";
    naive_accum.truth = 0.5;

    MonteCarloReport report;
    report.study = "naive-comparison";
    report.variance_method = "moving-block-bootstrap";
    report.requested = config.replicates;
    report.noise_note = noise_note_for(config.network.noise_sd);

    for (int r = 0; r < config.replicates; ++r) {
        try {
            NetworkStudyConfig dgp = config.network;
            dgp.seed = derive_stream(config.seed, static_cast<unsigned long long>(r), 0);
            const MappedPanel mapped = gen_network_dgp(dgp);

            const EstimationResult aware_fit =
                solve_psi(mapped, aware_model, config.estimator);
            const VarianceEstimate aware_boot = moving_block_bootstrap(
                mapped, aware_model, config.estimator, config.block_length,
                config.bootstrap_replicates,
                derive_stream(config.seed, static_cast<unsigned long long>(r), 1));
            const EstimandEstimate aware_est = estimand_with_uncertainty(
                aware_fit, mapped, aware_model, trajectory, aware_boot);

            MappingSpec direct;  // MappingKind::Direct: indirect exposure ignored
            const MappedPanel flat = apply_mapping(mapped.panel, direct);
            const EstimationResult naive_fit =
                solve_psi(flat, naive_model, config.estimator);
            const VarianceEstimate naive_boot = moving_block_bootstrap(
                flat, naive_model, config.estimator, config.block_length,
                config.bootstrap_replicates,
                derive_stream(config.seed, static_cast<unsigned long long>(r), 2));

            // Headline number of the blind analysis: subtract each fitted
            // later-wave coefficient once, at its own decision point,
            //   mean{ Y2 - psi_12 * A1 - psi_02 * A0 }.
            // psi_02 is the per-wave increment, so the time-0 effect that
            // persists into wave 2 (psi_01 * A0) stays in the average; the
            // blind "untreated" mean is overstated whenever exposure helps.
            const PanelDataset& panel = flat.panel;
            const int n = flat.unit_count();
            const int e_count = flat.sampling_unit_count();
            std::vector<int> unit_of_row(static_cast<std::size_t>(n), 0);
            for (int e = 0; e < e_count; ++e)
                for (int i : flat.sampling_units[static_cast<std::size_t>(e)])
                    unit_of_row[static_cast<std::size_t>(i)] = e;
            const auto naive_value = [&](const Eigen::VectorXd& psi,
                                         const Eigen::VectorXd* we) {
                double acc = 0.0;
                double total = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double w =
                        we ? (*we)(unit_of_row[static_cast<std::size_t>(i)]) : 1.0;
                    acc += w * (panel.outcome(i, 2) - psi(2) * panel.exposure(i, 1) -
                                psi(1) * panel.exposure(i, 0));
                    total += w;
                }
                return acc / total;
            };
            const double naive_point = naive_value(naive_fit.psi_hat, nullptr);
            const int b_count = static_cast<int>(naive_boot.replicate_psi.rows());
            Eigen::VectorXd reps(b_count);
            Eigen::VectorXd row_w(n);
            for (int b = 0; b < b_count; ++b) {
                const unsigned long long stream = derive_stream(
                    naive_boot.tuning.seed, static_cast<unsigned long long>(b),
                    static_cast<unsigned long long>(naive_boot.replicate_attempts
                                                        [static_cast<std::size_t>(b)]));
                const Eigen::VectorXd we = moving_block_weights(
                    e_count, naive_boot.tuning.block_length, stream);
                for (int i = 0; i < n; ++i)
                    row_w(i) = we(unit_of_row[static_cast<std::size_t>(i)]);
                reps(b) = naive_value(naive_boot.replicate_psi.row(b).transpose(), &row_w);
            }
            const double rep_mean = reps.mean();
            const double naive_se = std::sqrt((reps.array() - rep_mean).square().sum() /
                                              static_cast<double>(b_count - 1));
            std::vector<double> vals(reps.data(), reps.data() + b_count);
            const double naive_lo = percentile(vals, 0.025);
            const double naive_hi = percentile(std::move(vals), 0.975);

            accumulate(aware_accum, aware_est.value, aware_est.se, aware_est.ci_lower,
                       aware_est.ci_upper);
            accumulate(naive_accum, naive_point, naive_se, naive_lo, naive_hi);
            ++report.completed;
        } catch (const Error& e) {
            ++report.failed;
            if (report.first_failure.empty()) report.first_failure = e.what();
        }
    }

    check_run_budget(report);
    report.rows.push_back(finalize_row(aware_accum));
    report.rows.push_back(finalize_row(naive_accum));
    return report;
}

std::string MonteCarloReport::to_table() const {
    std::string out;
    out += "# study: " + study + "\n";
    out += "# variance: " + variance_method + "\n";
    out += "# runs: " + format_count(completed) + " of " + format_count(requested) +
           " completed, " + format_count(failed) + " failed\n";
    if (!first_failure.empty()) out += "# first failure: " + first_failure + "\n";
    out += "# noise: " + noise_note + "\n";
    out += "estimand\ttruth\tmean\tsd\tmean_se\tcoverage95\truns\n";
    for (const MonteCarloRow& row : rows) {
        out += row.label + "\t" + format_double(row.truth, "%.6g") + "\t" +
               format_double(row.mean_estimate, "%.6g") + "\t" +
               format_double(row.sd_estimate, "%.6g") + "\t" +
               format_double(row.mean_se, "%.6g") + "\t" +
               format_double(row.coverage, "%.3f") + "\t" + format_count(row.replicates) +
               "\n";
    }
    return out;
}

std::string MonteCarloReport::to_json() const {
    nlohmann::ordered_json j;
    j["study"] = study;
    j["variance_method"] = variance_method;
    j["requested"] = requested;
    j["completed"] = completed;
    j["failed"] = failed;
    j["first_failure"] = first_failure;
    j["noise_note"] = noise_note;
    j["rows"] = nlohmann::ordered_json::array();
    for (const MonteCarloRow& row : rows) {
        nlohmann::ordered_json jr;
        jr["label"] = row.label;
        jr["truth"] = row.truth;
        jr["mean_estimate"] = row.mean_estimate;
        jr["sd_estimate"] = row.sd_estimate;
        jr["mean_se"] = row.mean_se;
        jr["coverage"] = row.coverage;
        jr["replicates"] = row.replicates;
        j["rows"].push_back(std::move(jr));
    }
    return j.dump(2);
}

}  // namespace snmm
