#include "snmm/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <unordered_map>

#include "snmm/errors.hpp"

namespace snmm {

namespace {

// Most distinct values a single history column may take before saturated
// cell means are refused as a stratification strategy.
constexpr int kMaxDiscreteLevels = 24;

std::string format_int(long long v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", v);
    return buf;
}

void append_key_double(std::string& key, double v) {
    if (v == 0.0) v = 0.0;  // normalize -0.0
    char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    key.append(bytes, sizeof(double));
}

}  // namespace

const char* nuisance_strategy_name(NuisanceStrategy s) {
    switch (s) {
        case NuisanceStrategy::SaturatedCells: return "saturated-cells";
        case NuisanceStrategy::LinearRegression: return "linear-regression";
    }
    return "unknown";
}

NuisanceStrategy nuisance_strategy_from_name(const std::string& name) {
    std::string canon = name;
    std::replace(canon.begin(), canon.end(), '_', '-');
    if (canon == "saturated-cells" || canon == "saturated")
        return NuisanceStrategy::SaturatedCells;
    if (canon == "linear-regression" || canon == "regression")
        return NuisanceStrategy::LinearRegression;
    throw Error(ErrorCode::ConfigError,
                "unknown nuisance strategy '" + name +
                    "' (expected saturated-cells or linear-regression)");
}

SFunctionSet default_s_functions(const BlipModel& model) {
    (void)model;
    return SFunctionSet{};  // s_m = blip feature map: no extra components
}

FitContext::FitContext(const MappedPanel& mapped, const BlipModel& model, SFunctionSet sset)
    : mapped_(&mapped), model_(&model), sset_(std::move(sset)) {
    validate_blip_model(model, mapped);
    tau_ = mapped.tau();
    P_ = model.param_count();
    Q_ = P_ + std::max(0, sset_.extra_dim);
    R_ = mapped.rows_per_sampling_unit();
    if (sset_.extra_dim > 0 && !sset_.extra)
        throw Error(ErrorCode::ConfigError,
                    "estimating-function set declares extra components but no function");
    if (sset_.extra_dim < 0)
        throw Error(ErrorCode::InvalidSize, "estimating-function extra dimension is negative");
    build_pairs();
    build_feature_blocks();
    build_strata();
}

int FitContext::pair_index(int m, int k) const {
    if (m < 0 || m >= tau_ || k <= m || k > tau_)
        throw Error(ErrorCode::IndexError,
                    "no estimating-equation pair (m=" + format_int(m) + ", k=" + format_int(k) +
                        ") with tau=" + format_int(tau_));
    return pair_lookup_[m][k];
}

void FitContext::build_pairs() {
    pair_lookup_.assign(tau_, std::vector<int>(tau_ + 1, -1));
    for (int m = 0; m < tau_; ++m)
        for (int k = m + 1; k <= tau_; ++k) {
            pair_lookup_[m][k] = static_cast<int>(pairs_.size());
            pairs_.emplace_back(m, k);
        }
}

void FitContext::build_feature_blocks() {
    const int n = mapped_->unit_count();
    const int np = pair_count();
    F_.assign(np, Eigen::MatrixXd::Zero(n, Q_));
    W_.assign(np, Eigen::MatrixXd::Zero(n, P_));
    dy_.assign(np, Eigen::VectorXd::Zero(n));

    for (int i = 0; i < n; ++i) {
        const int member = mapped_->member_index.empty() ? 0 : mapped_->member_index[i];
        for (int m = 0; m < tau_; ++m) {
            const History hist = mapping_histories(*mapped_, i, m);
            for (int k = m + 1; k <= tau_; ++k) {
                const int pair = pair_lookup_[m][k];
                F_[pair].row(i).head(P_) = blip_features(*model_, m, k, hist, member);
                if (sset_.extra_dim > 0) {
                    Eigen::VectorXd extra = sset_.extra(m, k, hist, member);
                    if (extra.size() != sset_.extra_dim)
                        throw Error(ErrorCode::InvalidSize,
                                    "extra estimating-function block returned length " +
                                        format_int(extra.size()) + ", declared " +
                                        format_int(sset_.extra_dim));
                    F_[pair].row(i).tail(sset_.extra_dim) = extra;
                }
            }
        }
    }

    const Eigen::MatrixXd& y = mapped_->panel.outcome;
    for (int k = 1; k <= tau_; ++k) {
        const Eigen::VectorXd diff = y.col(k) - y.col(k - 1);
        // H_{m,k} - H_{m,k-1} = (Y_k - Y_{k-1}) - W_{m,k} psi, built by the
        // recursion W_{k-1,k} = f_{k-1,k}; W_{m,k} = W_{m+1,k} + f_{m,k} - f_{m,k-1}.
        for (int m = k - 1; m >= 0; --m) {
            const int pair = pair_lookup_[m][k];
            dy_[pair] = diff;
            if (m == k - 1) {
                W_[pair] = F_[pair].leftCols(P_);
            } else {
                W_[pair] = W_[pair_lookup_[m + 1][k]] + F_[pair].leftCols(P_) -
                           F_[pair_lookup_[m][k - 1]].leftCols(P_);
            }
        }
    }
}

void FitContext::build_strata() {
    const int E = mapped_->sampling_unit_count();
    const int p = mapped_->p();
    const int n_cov = mapped_->panel.covariate_count();
    stratum_of_.assign(tau_, std::vector<int>());
    stratum_count_.assign(tau_, 0);
    unit_zero_.assign(tau_, std::vector<char>(E, 0));
    discrete_.assign(tau_, 1);
    nondiscrete_reason_.assign(tau_, std::string());
    design_.assign(tau_, Eigen::MatrixXd());

    for (int m = 0; m < tau_; ++m) {
        for (int e = 0; e < E; ++e) {
            bool zero = true;
            for (int i : mapped_->sampling_units[e])
                if (!mapped_->is_zero(i, m)) { zero = false; break; }
            unit_zero_[m][e] = zero ? 1 : 0;
        }

        // One column layout per member: exposure history a_0..a_{m-1}, each
        // mapped component h_0..h_{m-1}, each covariate at times 0..m.
        const int per_member = m + p * m + n_cov * (m + 1);
        const int d = R_ * per_member;
        Eigen::MatrixXd hist(E, d);
        std::vector<std::string> col_desc(d);
        for (int e = 0; e < E; ++e) {
            int c = 0;
            for (int r = 0; r < R_; ++r) {
                const int i = mapped_->sampling_units[e][r];
                for (int t = 0; t < m; ++t) {
                    if (e == 0)
                        col_desc[c] = "exposure at period " + format_int(t) + " (member " +
                                      format_int(r) + ")";
                    hist(e, c++) = mapped_->a(i, t);
                }
                for (int comp = 0; comp < p; ++comp)
                    for (int t = 0; t < m; ++t) {
                        if (e == 0)
                            col_desc[c] = "mapped exposure component " + format_int(comp) +
                                          " at period " + format_int(t) + " (member " +
                                          format_int(r) + ")";
                        hist(e, c++) = mapped_->h[comp](i, t);
                    }
                for (int j = 0; j < n_cov; ++j)
                    for (int t = 0; t <= m; ++t) {
                        if (e == 0)
                            col_desc[c] = "covariate " + mapped_->panel.covariate_names[j] +
                                          " at period " + format_int(t) + " (member " +
                                          format_int(r) + ")";
                        hist(e, c++) = mapped_->panel.covariates[j](i, t);
                    }
            }
        }

        design_[m].resize(E, d + 1);
        design_[m].col(0).setOnes();
        design_[m].rightCols(d) = hist;

        for (int c = 0; c < d && discrete_[m]; ++c) {
            std::set<double> levels;
            for (int e = 0; e < E; ++e) {
                levels.insert(hist(e, c) == 0.0 ? 0.0 : hist(e, c));
                if (static_cast<int>(levels.size()) > kMaxDiscreteLevels) {
                    discrete_[m] = 0;
                    nondiscrete_reason_[m] =
                        col_desc[c] + " takes more than " + format_int(kMaxDiscreteLevels) +
                        " distinct values";
                    break;
                }
            }
        }

        stratum_of_[m].assign(E, 0);
        if (!discrete_[m]) continue;
        std::unordered_map<std::string, int> index;
        index.reserve(static_cast<size_t>(E) * 2);
        std::string key;
        for (int e = 0; e < E; ++e) {
            key.clear();
            key.reserve(static_cast<size_t>(d) * sizeof(double));
            for (int c = 0; c < d; ++c) append_key_double(key, hist(e, c));
            auto [it, inserted] = index.emplace(key, static_cast<int>(index.size()));
            stratum_of_[m][e] = it->second;
            (void)inserted;
        }
        stratum_count_[m] = static_cast<int>(index.size());
    }
}

TreatmentModel FitContext::fit_treatment(NuisanceStrategy strategy,
                                         const Eigen::VectorXd* weights) const {
    const int E = mapped_->sampling_unit_count();
    const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(E);
    TreatmentModel out;
    out.strategy = strategy;
    out.pred_s.assign(pair_count(), Eigen::MatrixXd::Zero(mapped_->unit_count(), Q_));

    if (strategy == NuisanceStrategy::SaturatedCells) {
        for (int m = 0; m < tau_; ++m)
            if (!discrete_[m])
                throw Error(ErrorCode::ConfigError,
                            "saturated cell means need discrete histories: " +
                                nondiscrete_reason_[m] +
                                "; use the linear-regression strategy");
        for (int pair = 0; pair < pair_count(); ++pair) {
            const int m = pairs_[pair].first;
            const int S = stratum_count_[m];
            Eigen::MatrixXd cell_sum = Eigen::MatrixXd::Zero(S * R_, Q_);
            Eigen::VectorXd cell_w = Eigen::VectorXd::Zero(S);
            for (int e = 0; e < E; ++e) {
                if (w(e) <= 0.0) continue;
                const int s = stratum_of_[m][e];
                cell_w(s) += w(e);
                for (int r = 0; r < R_; ++r)
                    cell_sum.row(s * R_ + r) += w(e) * F_[pair].row(mapped_->sampling_units[e][r]);
            }
            for (int e = 0; e < E; ++e) {
                const int s = stratum_of_[m][e];
                if (cell_w(s) <= 0.0) continue;
                for (int r = 0; r < R_; ++r)
                    out.pred_s[pair].row(mapped_->sampling_units[e][r]) =
                        cell_sum.row(s * R_ + r) / cell_w(s);
            }
        }
        return out;
    }

    // Linear regression of each s component on [1 | full history], one fit
    // per member position, shared design decomposition per period.
    const Eigen::VectorXd sw = w.cwiseMax(0.0).cwiseSqrt();
    for (int m = 0; m < tau_; ++m) {
        Eigen::MatrixXd xw = sw.asDiagonal() * design_[m];
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
        for (int k = m + 1; k <= tau_; ++k) {
            const int pair = pair_lookup_[m][k];
            for (int r = 0; r < R_; ++r) {
                Eigen::MatrixXd target(E, Q_);
                for (int e = 0; e < E; ++e)
                    target.row(e) = F_[pair].row(mapped_->sampling_units[e][r]);
                Eigen::MatrixXd coef = qr.solve(sw.asDiagonal() * target);
                Eigen::MatrixXd fitted = design_[m] * coef;
                for (int e = 0; e < E; ++e)
                    out.pred_s[pair].row(mapped_->sampling_units[e][r]) = fitted.row(e);
            }
        }
    }
    return out;
}

TrendModel FitContext::fit_trend(NuisanceStrategy strategy,
                                 const Eigen::VectorXd* weights) const {
    const int E = mapped_->sampling_unit_count();
    const int n = mapped_->unit_count();
    const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(E);
    TrendModel out;
    out.strategy = strategy;
    out.constant.assign(pair_count(), Eigen::VectorXd::Zero(n));
    out.linear.assign(pair_count(), Eigen::MatrixXd::Zero(n, P_));

    if (strategy == NuisanceStrategy::SaturatedCells) {
        for (int m = 0; m < tau_; ++m)
            if (!discrete_[m])
                throw Error(ErrorCode::ConfigError,
                            "saturated cell means need discrete histories: " +
                                nondiscrete_reason_[m] +
                                "; use the linear-regression strategy");
        for (int pair = 0; pair < pair_count(); ++pair) {
            const int m = pairs_[pair].first;
            const int S = stratum_count_[m];
            Eigen::MatrixXd sum_w_rows = Eigen::MatrixXd::Zero(S * R_, P_);
            Eigen::MatrixXd sum_dy = Eigen::MatrixXd::Zero(S, R_);
            Eigen::VectorXd cell_w = Eigen::VectorXd::Zero(S);
            for (int e = 0; e < E; ++e) {
                if (w(e) <= 0.0) continue;
                const int s = stratum_of_[m][e];
                cell_w(s) += w(e);
                for (int r = 0; r < R_; ++r) {
                    const int i = mapped_->sampling_units[e][r];
                    sum_w_rows.row(s * R_ + r) += w(e) * W_[pair].row(i);
                    sum_dy(s, r) += w(e) * dy_[pair](i);
                }
            }
            for (int e = 0; e < E; ++e) {
                const int s = stratum_of_[m][e];
                if (cell_w(s) <= 0.0) continue;
                for (int r = 0; r < R_; ++r) {
                    const int i = mapped_->sampling_units[e][r];
                    out.constant[pair](i) = sum_dy(s, r) / cell_w(s);
                    out.linear[pair].row(i) = sum_w_rows.row(s * R_ + r) / cell_w(s);
                }
            }
        }
        return out;
    }

    const Eigen::VectorXd sw = w.cwiseMax(0.0).cwiseSqrt();
    for (int m = 0; m < tau_; ++m) {
        Eigen::MatrixXd xw = sw.asDiagonal() * design_[m];
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
        for (int k = m + 1; k <= tau_; ++k) {
            const int pair = pair_lookup_[m][k];
            for (int r = 0; r < R_; ++r) {
                Eigen::MatrixXd target(E, 1 + P_);
                for (int e = 0; e < E; ++e) {
                    const int i = mapped_->sampling_units[e][r];
                    target(e, 0) = dy_[pair](i);
                    target.row(e).tail(P_) = W_[pair].row(i);
                }
                Eigen::MatrixXd coef = qr.solve(sw.asDiagonal() * target);
                Eigen::MatrixXd fitted = design_[m] * coef;
                for (int e = 0; e < E; ++e) {
                    const int i = mapped_->sampling_units[e][r];
                    out.constant[pair](i) = fitted(e, 0);
                    out.linear[pair].row(i) = fitted.row(e).tail(P_);
                }
            }
        }
    }
    return out;
}

void FitContext::assemble_affine(const TreatmentModel& treatment, const TrendModel& trend,
                                 const EstimatorConfig& config, const Eigen::VectorXd* weights,
                                 Eigen::MatrixXd& A, Eigen::VectorXd& b) const {
    const int E = mapped_->sampling_unit_count();
    const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(E);
    if (w.size() != E)
        throw Error(ErrorCode::InvalidSize,
                    "weight vector length " + format_int(w.size()) + " != sampling units " +
                        format_int(E));
    const double total = w.sum();
    if (!(total > 0.0))
        throw Error(ErrorCode::InvalidSize, "weights sum to zero; nothing to estimate");

    Eigen::MatrixXd acc_a = Eigen::MatrixXd::Zero(Q_, P_);
    Eigen::VectorXd acc_b = Eigen::VectorXd::Zero(Q_);
    Eigen::RowVectorXd fc(Q_), wc(P_);
    for (int pair = 0; pair < pair_count(); ++pair) {
        const Eigen::MatrixXd& f = F_[pair];
        const Eigen::MatrixXd& wmat = W_[pair];
        const Eigen::VectorXd& dy = dy_[pair];
        const Eigen::MatrixXd& pred_s = treatment.pred_s[pair];
        const Eigen::VectorXd& cvec = trend.constant[pair];
        const Eigen::MatrixXd& lin = trend.linear[pair];
        for (int e = 0; e < E; ++e) {
            if (w(e) <= 0.0) continue;
            for (int i : mapped_->sampling_units[e]) {
                fc = f.row(i) - pred_s.row(i);
                fc.array() -= config.corrupt_treatment_offset;
                wc = wmat.row(i) - lin.row(i);
                const double dyc = dy(i) - cvec(i) - config.corrupt_trend_offset;
                acc_a.noalias() += w(e) * fc.transpose() * wc;
                acc_b.noalias() += w(e) * dyc * fc.transpose();
            }
        }
    }
    // Mean score is b_tilde - A_tilde psi; report the spec'd form A psi - b.
    A = -(acc_a / total);
    b = -(acc_b / total);
}

void FitContext::positivity_and_occupancy(const EstimatorConfig& config,
                                          const Eigen::VectorXd& w,
                                          EstimationResult& result) const {
    const int E = mapped_->sampling_unit_count();
    const bool use_strata = config.treatment_strategy == NuisanceStrategy::SaturatedCells ||
                            config.trend_strategy == NuisanceStrategy::SaturatedCells;
    for (int m = 0; m < tau_; ++m) {
        if (use_strata && discrete_[m]) {
            const int S = stratum_count_[m];
            std::vector<double> wt(S, 0.0);
            std::vector<int> count(S, 0);
            std::vector<char> zero(S, 0);
            for (int e = 0; e < E; ++e) {
                if (w(e) <= 0.0) continue;
                const int s = stratum_of_[m][e];
                wt[s] += w(e);
                count[s] += 1;
                if (unit_zero_[m][e]) zero[s] = 1;
            }
            int singletons = 0;
            for (int s = 0; s < S; ++s) {
                if (count[s] == 0) continue;
                result.occupancy.push_back(StratumOccupancy{m, s, wt[s], zero[s] != 0});
                if (count[s] == 1) ++singletons;
                if (!zero[s])
                    throw Error(ErrorCode::PositivityViolation,
                                "no sampling unit at the zero exposure element in history "
                                "stratum " + format_int(s) + " at period " + format_int(m) +
                                " (stratum weight " + format_int(static_cast<long long>(wt[s])) +
                                "); every stratum needs an untreated unit");
            }
            if (singletons > 0)
                result.diagnostics.add_warning(
                    ErrorCode::SingletonStratum,
                    format_int(singletons) + " history stratum(s) at period " + format_int(m) +
                        " hold a single sampling unit; their residuals are identically zero",
                    "estimator/period " + format_int(m));
        } else {
            bool any_zero = false;
            for (int e = 0; e < E && !any_zero; ++e)
                if (w(e) > 0.0 && unit_zero_[m][e]) any_zero = true;
            if (!any_zero)
                throw Error(ErrorCode::PositivityViolation,
                            "no sampling unit at the zero exposure element at period " +
                                format_int(m));
        }
    }
}

EstimationResult FitContext::fit(const EstimatorConfig& config, const Eigen::VectorXd* weights,
                                 bool want_scores) const {
    const int E = mapped_->sampling_unit_count();
    Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(E);
    if (w.size() != E)
        throw Error(ErrorCode::InvalidSize,
                    "weight vector length " + format_int(w.size()) + " != sampling units " +
                        format_int(E));
    if ((w.array() < 0.0).any())
        throw Error(ErrorCode::InvalidSize, "negative sampling-unit weight");

    EstimationResult result;
    result.param_labels = model_->param_labels;
    result.sampling_unit_count = E;

    positivity_and_occupancy(config, w, result);

    const TreatmentModel treatment = fit_treatment(config.treatment_strategy, &w);
    const TrendModel trend = fit_trend(config.trend_strategy, &w);
    assemble_affine(treatment, trend, config, &w, result.a_matrix, result.b_vector);
    result.jacobian = result.a_matrix;

    const Eigen::MatrixXd& A = result.a_matrix;
    const Eigen::VectorXd& b = result.b_vector;

    auto identification_failure = [&](const Eigen::MatrixXd& kernel) -> Error {
        std::string labels;
        for (int c = 0; c < kernel.cols(); ++c) {
            const double peak = kernel.col(c).cwiseAbs().maxCoeff();
            for (int j = 0; j < P_; ++j)
                if (std::abs(kernel(j, c)) > 0.1 * peak) {
                    if (!labels.empty()) labels += ", ";
                    labels += model_->param_labels[j];
                }
        }
        return Error(ErrorCode::IdentificationError,
                     "estimating system is rank deficient; null space involves parameters: " +
                         (labels.empty() ? std::string("(none resolved)") : labels));
    };

    if (Q_ == P_) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible()) throw identification_failure(lu.kernel());
        result.psi_hat = lu.solve(b);
        result.score_residual = (A * result.psi_hat - b).cwiseAbs().maxCoeff();
        const double scale = 1.0 + b.cwiseAbs().maxCoeff();
        if (result.score_residual > 1e-10 * scale)
            throw Error(ErrorCode::SolveFailed,
                        "estimating equations not solved to tolerance (residual " +
                            std::to_string(result.score_residual) + ")");
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() < P_) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(A.transpose() * A);
            throw identification_failure(lu.kernel());
        }
        result.psi_hat = qr.solve(b);
        // Over-identified: check the least-squares normal equations instead.
        const Eigen::VectorXd grad = A.transpose() * (A * result.psi_hat - b);
        result.score_residual = grad.cwiseAbs().maxCoeff();
        const double scale = 1.0 + (A.transpose() * b).cwiseAbs().maxCoeff();
        if (result.score_residual > 1e-10 * scale)
            throw Error(ErrorCode::SolveFailed,
                        "least-squares estimating equations not solved to tolerance (residual " +
                            std::to_string(result.score_residual) + ")");
    }

    if (want_scores) {
        result.scores = Eigen::MatrixXd::Zero(E, Q_);
        Eigen::RowVectorXd fc(Q_), wc(P_);
        for (int pair = 0; pair < pair_count(); ++pair) {
            const Eigen::MatrixXd& f = F_[pair];
            const Eigen::MatrixXd& wmat = W_[pair];
            const Eigen::VectorXd& dy = dy_[pair];
            const Eigen::MatrixXd& pred_s = treatment.pred_s[pair];
            const Eigen::VectorXd& cvec = trend.constant[pair];
            const Eigen::MatrixXd& lin = trend.linear[pair];
            for (int e = 0; e < E; ++e) {
                for (int i : mapped_->sampling_units[e]) {
                    fc = f.row(i) - pred_s.row(i);
                    fc.array() -= config.corrupt_treatment_offset;
                    wc = wmat.row(i) - lin.row(i);
                    const double resid =
                        dy(i) - cvec(i) - config.corrupt_trend_offset - wc.dot(result.psi_hat);
                    result.scores.row(e) += resid * fc;
                }
            }
        }
    }
    return result;
}

TreatmentModel fit_treatment_model(const MappedPanel& mapped, const BlipModel& model,
                                   const SFunctionSet& sset, NuisanceStrategy strategy) {
    return FitContext(mapped, model, sset).fit_treatment(strategy);
}

TrendModel fit_trend_model(const MappedPanel& mapped, const BlipModel& model,
                           const SFunctionSet& sset, NuisanceStrategy strategy) {
    return FitContext(mapped, model, sset).fit_trend(strategy);
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> assemble_score(const MappedPanel& mapped,
                                                           const BlipModel& model,
                                                           const SFunctionSet& sset,
                                                           const TreatmentModel& treatment,
                                                           const TrendModel& trend) {
    FitContext ctx(mapped, model, sset);
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    ctx.assemble_affine(treatment, trend, EstimatorConfig{}, nullptr, A, b);
    return {A, b};
}

EstimationResult solve_psi(const MappedPanel& mapped, const BlipModel& model,
                           const EstimatorConfig& config) {
    return FitContext(mapped, model).fit(config);
}

EstimationResult naive_no_interference_fit(const PanelDataset& panel, const BlipModel& model,
                                           const EstimatorConfig& config) {
    MappingSpec spec;
    spec.kind = MappingKind::Direct;
    const MappedPanel mapped = apply_mapping(panel, spec);
    return solve_psi(mapped, model, config);
}

}  // namespace snmm
