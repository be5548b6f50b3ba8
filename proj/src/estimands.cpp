#include "snmm/estimands.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "snmm/errors.hpp"
#include "snmm/rng.hpp"

namespace snmm {

namespace {

std::string format_int(long long v) { return std::to_string(v); }

// Shortest numeric literal that parses back to exactly the same double.
std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    if (std::strtod(buf, nullptr) == v) return buf;
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Cursor {
    const std::string& text;
    size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    bool eof() {
        skip_ws();
        return pos >= text.size();
    }
    char peek() {
        skip_ws();
        return pos < text.size() ? text[pos] : '\0';
    }
    bool consume(char c) {
        skip_ws();
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorCode::SpecParseError,
                    "selector: " + what + " at position " + format_int(static_cast<long long>(pos)) +
                        " in '" + text + "'");
    }
    std::string ident() {
        skip_ws();
        size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
            ++pos;
        if (pos == start) fail("expected a name");
        return text.substr(start, pos - start);
    }
    int integer() {
        skip_ws();
        size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos == start) fail("expected an integer");
        return std::atoi(text.substr(start, pos - start).c_str());
    }
    double number() {
        skip_ws();
        const char* begin = text.c_str() + pos;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail("expected a number");
        pos += static_cast<size_t>(end - begin);
        return v;
    }
};

TimeRef parse_time(Cursor& cur) {
    TimeRef t;
    if (std::isdigit(static_cast<unsigned char>(cur.peek()))) {
        t.symbolic = false;
        t.absolute = cur.integer();
        return t;
    }
    const std::string name = cur.ident();
    if (name != "m") cur.fail("time index must be m, m-INT, or a period number");
    t.symbolic = true;
    if (cur.consume('-'))
        t.offset = -cur.integer();
    else if (cur.consume('+')) {
        t.offset = cur.integer();
        if (t.offset > 0)
            throw Error(ErrorCode::LeakageError,
                        "selector references data after the decision period (m+" +
                            format_int(t.offset) + ")");
    }
    return t;
}

Factor parse_ref(Cursor& cur) {
    Factor f;
    const std::string name = cur.ident();
    if (name == "a")
        f.kind = FactorKind::OwnExposure;
    else if (name == "h")
        f.kind = FactorKind::MappedComponent;
    else if (name == "l")
        f.kind = FactorKind::Covariate;
    else
        cur.fail("unknown reference '" + name + "' (expected a, h, or l)");
    if (!cur.consume('[')) cur.fail("expected '[' after '" + name + "'");
    f.time = parse_time(cur);
    if (!cur.consume(']')) cur.fail("expected ']'");
    if (f.kind != FactorKind::OwnExposure) {
        if (!cur.consume('[')) cur.fail("expected a component index like " + name + "[m][0]");
        f.component = cur.integer();
        if (!cur.consume(']')) cur.fail("expected ']'");
    }
    return f;
}

SelectorOp parse_op(Cursor& cur) {
    cur.skip_ws();
    const char c = cur.peek();
    if (c == '=') {
        cur.consume('=');
        cur.consume('=');  // accept = and ==
        return SelectorOp::Eq;
    }
    if (c == '!') {
        cur.consume('!');
        if (!cur.consume('=')) cur.fail("expected '!='");
        return SelectorOp::Ne;
    }
    if (c == '<') {
        cur.consume('<');
        return cur.consume('=') ? SelectorOp::Le : SelectorOp::Lt;
    }
    if (c == '>') {
        cur.consume('>');
        return cur.consume('=') ? SelectorOp::Ge : SelectorOp::Gt;
    }
    cur.fail("expected a comparison (=, !=, <, <=, >, >=)");
}

const char* op_text(SelectorOp op) {
    switch (op) {
        case SelectorOp::Eq: return "=";
        case SelectorOp::Ne: return "!=";
        case SelectorOp::Lt: return "<";
        case SelectorOp::Le: return "<=";
        case SelectorOp::Gt: return ">";
        case SelectorOp::Ge: return ">=";
    }
    return "?";
}

std::string ref_text(const Factor& f) {
    std::string time;
    if (!f.time.symbolic)
        time = format_int(f.time.absolute);
    else if (f.time.offset == 0)
        time = "m";
    else
        time = "m-" + format_int(-f.time.offset);
    switch (f.kind) {
        case FactorKind::OwnExposure: return "a[" + time + "]";
        case FactorKind::MappedComponent:
            return "h[" + time + "][" + format_int(f.component) + "]";
        case FactorKind::Covariate: return "l[" + time + "][" + format_int(f.component) + "]";
        default: break;
    }
    return "?";
}

std::string trimmed(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// History value an atom refers to, for row i at decision time m.
double atom_value(const SelectorAtom& atom, const MappedPanel& mapped, int i, int m) {
    const int t = atom.ref.time.resolve(m);
    if (t > m)
        throw Error(ErrorCode::LeakageError,
                    "selector reference " + ref_text(atom.ref) + " resolves to period " +
                        format_int(t) + ", after the decision period " + format_int(m));
    if (t < 0)
        throw Error(ErrorCode::IndexError, "selector reference " + ref_text(atom.ref) +
                                               " resolves to a negative period");
    switch (atom.ref.kind) {
        case FactorKind::OwnExposure: return mapped.a(i, t);
        case FactorKind::MappedComponent:
            if (atom.ref.component < 0 || atom.ref.component >= mapped.p())
                throw Error(ErrorCode::IndexError,
                            "selector references mapped component " +
                                format_int(atom.ref.component) + " but the mapping has " +
                                format_int(mapped.p()));
            return mapped.h[atom.ref.component](i, t);
        case FactorKind::Covariate:
            if (atom.ref.component < 0 ||
                atom.ref.component >= mapped.panel.covariate_count())
                throw Error(ErrorCode::IndexError,
                            "selector references covariate " + format_int(atom.ref.component) +
                                " but the panel has " +
                                format_int(mapped.panel.covariate_count()));
            return mapped.panel.covariates[atom.ref.component](i, t);
        default: break;
    }
    throw Error(ErrorCode::IndexError, "selector reference kind not supported");
}

bool compare(double lhs, SelectorOp op, double rhs) {
    switch (op) {
        case SelectorOp::Eq: return lhs == rhs;
        case SelectorOp::Ne: return lhs != rhs;
        case SelectorOp::Lt: return lhs < rhs;
        case SelectorOp::Le: return lhs <= rhs;
        case SelectorOp::Gt: return lhs > rhs;
        case SelectorOp::Ge: return lhs >= rhs;
    }
    return false;
}

void check_outcome_period(const MappedPanel& mapped, int k) {
    if (k < 0 || k > mapped.tau())
        throw Error(ErrorCode::IndexError, "outcome period " + format_int(k) +
                                               " outside 0.." + format_int(mapped.tau()));
}

void check_blip_pair(const MappedPanel& mapped, int m, int k) {
    if (m < 0 || m >= mapped.tau())
        throw Error(ErrorCode::IndexError, "blip period " + format_int(m) + " outside 0.." +
                                               format_int(mapped.tau() - 1));
    if (k <= m || k > mapped.tau())
        throw Error(ErrorCode::IndexError,
                    "outcome period " + format_int(k) + " must lie in " + format_int(m + 1) +
                        ".." + format_int(mapped.tau()));
}

double weight_at(const Eigen::VectorXd* w, int i) { return w ? (*w)(i) : 1.0; }

void check_weights(const Eigen::VectorXd* w, const MappedPanel& mapped) {
    if (w && w->size() != mapped.unit_count())
        throw Error(ErrorCode::InvalidSize,
                    "estimand weights have " + format_int(w->size()) + " entries for " +
                        format_int(mapped.unit_count()) + " panel rows");
}

double untreated_trajectory_value(const Eigen::VectorXd& psi, const MappedPanel& mapped,
                                  const BlipModel& model, int k,
                                  const Eigen::VectorXd* row_weights) {
    check_outcome_period(mapped, k);
    check_weights(row_weights, mapped);
    double acc = 0.0, total = 0.0;
    for (int i = 0; i < mapped.unit_count(); ++i) {
        const double w = weight_at(row_weights, i);
        if (w == 0.0) continue;
        double blipped = mapped.panel.outcome(i, k);
        for (int j = 0; j < k; ++j)
            blipped -= blip_value(model, psi, j, k, mapping_histories(mapped, i, j),
                                  mapped.member_index[i]);
        acc += w * blipped;
        total += w;
    }
    if (total <= 0.0)
        throw Error(ErrorCode::InvalidSize, "estimand weights sum to zero");
    return acc / total;
}

double subgroup_mean_value(const Eigen::VectorXd& psi, const MappedPanel& mapped,
                           const BlipModel& model, const EstimandSpec& spec,
                           const Eigen::VectorXd* row_weights) {
    check_blip_pair(mapped, spec.m, spec.k);
    check_weights(row_weights, mapped);
    const Selector sel = parse_selector(spec.selector);
    double acc = 0.0, total = 0.0;
    int matched = 0;
    for (int i = 0; i < mapped.unit_count(); ++i) {
        if (!selector_matches(sel, mapped, i, spec.m)) continue;
        ++matched;
        const double w = weight_at(row_weights, i);
        if (w == 0.0) continue;
        acc += w * blip_value(model, psi, spec.m, spec.k,
                              mapping_histories(mapped, i, spec.m), mapped.member_index[i]);
        total += w;
    }
    if (matched == 0)
        throw Error(ErrorCode::EmptySubgroup, "selector '" + print_selector(sel) +
                                                  "' matched no unit at period " +
                                                  format_int(spec.m));
    if (total <= 0.0)
        throw Error(ErrorCode::EmptySubgroup,
                    "selector '" + print_selector(sel) +
                        "' matched no unit with positive resample weight at period " +
                        format_int(spec.m));
    return acc / total;
}

History build_pinned_history(int p, int covariate_count, const EstimandSpec& spec) {
    const Selector sel = parse_selector(spec.selector);
    if (sel.builtin != Selector::Builtin::None)
        throw Error(ErrorCode::ConfigError,
                    "blip-value estimands need explicit equality pins, not a named subgroup");
    History hist;
    hist.a = Eigen::VectorXd::Zero(spec.m + 1);
    hist.h = Eigen::MatrixXd::Zero(p, spec.m + 1);
    hist.l = Eigen::MatrixXd::Zero(covariate_count, spec.m + 1);
    for (const SelectorAtom& atom : sel.atoms) {
        if (atom.op != SelectorOp::Eq)
            throw Error(ErrorCode::ConfigError, "blip-value estimands pin history points with "
                                                "'=' only; got '" +
                                                    std::string(op_text(atom.op)) + "'");
        const int t = atom.ref.time.resolve(spec.m);
        if (t > spec.m)
            throw Error(ErrorCode::LeakageError,
                        "blip-value pin " + ref_text(atom.ref) + " lies after period " +
                            format_int(spec.m));
        if (t < 0)
            throw Error(ErrorCode::IndexError,
                        "blip-value pin " + ref_text(atom.ref) + " resolves below period 0");
        switch (atom.ref.kind) {
            case FactorKind::OwnExposure: hist.a(t) = atom.value; break;
            case FactorKind::MappedComponent:
                if (atom.ref.component < 0 || atom.ref.component >= p)
                    throw Error(ErrorCode::IndexError,
                                "blip-value pin " + ref_text(atom.ref) +
                                    " indexes past the mapped components");
                hist.h(atom.ref.component, t) = atom.value;
                break;
            case FactorKind::Covariate:
                if (atom.ref.component < 0 || atom.ref.component >= covariate_count)
                    throw Error(ErrorCode::IndexError,
                                "blip-value pin " + ref_text(atom.ref) +
                                    " indexes past the covariates");
                hist.l(atom.ref.component, t) = atom.value;
                break;
            default: break;
        }
    }
    return hist;
}

double blip_point_value(const Eigen::VectorXd& psi, const MappedPanel& mapped,
                        const BlipModel& model, const EstimandSpec& spec) {
    check_blip_pair(mapped, spec.m, spec.k);
    const History hist =
        build_pinned_history(mapped.p(), mapped.panel.covariate_count(), spec);
    return blip_value(model, psi, spec.m, spec.k, hist, spec.member);
}

// Estimand value with the psi-independent pieces (selector matches, mapped
// histories, blip feature vectors) precomputed, so a bootstrap replicate
// costs only dot products. eval() reproduces the one-shot evaluation
// bit-for-bit: same row order, same skip rules, same accumulation.
struct ReplicateEvaluator {
    EstimandKind kind = EstimandKind::BlipValue;
    int param_count = 0;
    std::vector<int> rows;                              // retained panel rows
    std::vector<double> outcomes;                       // trajectory: y_ik per row
    std::vector<std::vector<Eigen::VectorXd>> features; // per row, per period
    int matched = 0;                                    // subgroup rows matched
    std::string selector_printed;
    int m = 0;
    Eigen::VectorXd pin_features;                       // blip-value contrast

    double eval(const Eigen::VectorXd& psi, const Eigen::VectorXd* row_weights) const {
        if (psi.size() != param_count)
            throw Error(ErrorCode::InvalidSize,
                        "psi has " + format_int(psi.size()) + " entries, model has " +
                            format_int(param_count) + " parameters");
        if (kind == EstimandKind::BlipValue) return psi.dot(pin_features);
        double acc = 0.0, total = 0.0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double w = weight_at(row_weights, rows[r]);
            if (w == 0.0) continue;
            if (kind == EstimandKind::UntreatedTrajectory) {
                double blipped = outcomes[r];
                for (const Eigen::VectorXd& f : features[r]) blipped -= psi.dot(f);
                acc += w * blipped;
            } else {
                acc += w * psi.dot(features[r][0]);
            }
            total += w;
        }
        if (total <= 0.0) {
            if (kind == EstimandKind::UntreatedTrajectory)
                throw Error(ErrorCode::InvalidSize, "estimand weights sum to zero");
            throw Error(ErrorCode::EmptySubgroup,
                        "selector '" + selector_printed +
                            "' matched no unit with positive resample weight at period " +
                            format_int(m));
        }
        return acc / total;
    }
};

ReplicateEvaluator build_evaluator(const MappedPanel& mapped, const BlipModel& model,
                                   const EstimandSpec& spec) {
    ReplicateEvaluator ev;
    ev.kind = spec.kind;
    ev.param_count = model.param_count();
    ev.m = spec.m;
    if (spec.kind == EstimandKind::BlipValue) {
        check_blip_pair(mapped, spec.m, spec.k);
        const History hist =
            build_pinned_history(mapped.p(), mapped.panel.covariate_count(), spec);
        ev.pin_features = blip_features(model, spec.m, spec.k, hist, spec.member);
        return ev;
    }
    if (spec.kind == EstimandKind::UntreatedTrajectory) {
        check_outcome_period(mapped, spec.k);
        ev.rows.reserve(static_cast<std::size_t>(mapped.unit_count()));
        for (int i = 0; i < mapped.unit_count(); ++i) {
            ev.rows.push_back(i);
            ev.outcomes.push_back(mapped.panel.outcome(i, spec.k));
            std::vector<Eigen::VectorXd> per_period;
            per_period.reserve(static_cast<std::size_t>(spec.k));
            for (int j = 0; j < spec.k; ++j)
                per_period.push_back(blip_features(model, j, spec.k,
                                                   mapping_histories(mapped, i, j),
                                                   mapped.member_index[i]));
            ev.features.push_back(std::move(per_period));
        }
        return ev;
    }
    check_blip_pair(mapped, spec.m, spec.k);
    const Selector sel = parse_selector(spec.selector);
    ev.selector_printed = print_selector(sel);
    for (int i = 0; i < mapped.unit_count(); ++i) {
        if (!selector_matches(sel, mapped, i, spec.m)) continue;
        ++ev.matched;
        ev.rows.push_back(i);
        ev.features.push_back({blip_features(model, spec.m, spec.k,
                                             mapping_histories(mapped, i, spec.m),
                                             mapped.member_index[i])});
    }
    if (ev.matched == 0)
        throw Error(ErrorCode::EmptySubgroup, "selector '" + ev.selector_printed +
                                                  "' matched no unit at period " +
                                                  format_int(spec.m));
    return ev;
}

}  // namespace

const char* estimand_kind_name(EstimandKind kind) {
    switch (kind) {
        case EstimandKind::UntreatedTrajectory: return "untreated_trajectory";
        case EstimandKind::SubgroupBlipMean: return "subgroup_blip_mean";
        case EstimandKind::BlipValue: return "blip_value";
    }
    return "unknown";
}

EstimandKind estimand_kind_from_name(const std::string& name) {
    if (name == "untreated_trajectory") return EstimandKind::UntreatedTrajectory;
    if (name == "subgroup_blip_mean") return EstimandKind::SubgroupBlipMean;
    if (name == "blip_value") return EstimandKind::BlipValue;
    throw Error(ErrorCode::ConfigError, "unknown estimand kind '" + name + "'");
}

Selector parse_selector(const std::string& text) {
    Selector sel;
    const std::string t = trimmed(text);
    if (t == "direct_only") {
        sel.builtin = Selector::Builtin::DirectOnly;
        return sel;
    }
    if (t == "indirect_only") {
        sel.builtin = Selector::Builtin::IndirectOnly;
        return sel;
    }
    if (t.empty())
        throw Error(ErrorCode::SpecParseError, "selector is empty");
    Cursor cur{t};
    while (true) {
        SelectorAtom atom;
        atom.ref = parse_ref(cur);
        atom.op = parse_op(cur);
        atom.value = cur.number();
        sel.atoms.push_back(atom);
        if (cur.eof()) break;
        if (!cur.consume('&')) cur.fail("expected '&' between conditions");
    }
    return sel;
}

std::string print_selector(const Selector& selector) {
    switch (selector.builtin) {
        case Selector::Builtin::DirectOnly: return "direct_only";
        case Selector::Builtin::IndirectOnly: return "indirect_only";
        case Selector::Builtin::None: break;
    }
    std::string out;
    for (size_t i = 0; i < selector.atoms.size(); ++i) {
        if (i) out += " & ";
        const SelectorAtom& atom = selector.atoms[i];
        out += ref_text(atom.ref);
        out += op_text(atom.op);
        out += format_value(atom.value);
    }
    return out;
}

bool selector_matches(const Selector& selector, const MappedPanel& mapped, int i, int m) {
    if (selector.builtin != Selector::Builtin::None) {
        // With a full-cluster mapping the member's own exposure repeats inside
        // the mapped vector; skip that slot when judging indirect exposure.
        const bool skip_own = mapped.mapping_kind == MappingKind::IdentityCluster;
        bool any_indirect = false;
        for (int r = 0; r < mapped.p(); ++r) {
            if (skip_own && r == mapped.member_index[i]) continue;
            if (mapped.h[r](i, m) != 0.0) any_indirect = true;
        }
        if (selector.builtin == Selector::Builtin::DirectOnly)
            return mapped.a(i, m) != 0.0 && !any_indirect;
        return mapped.a(i, m) == 0.0 && any_indirect;
    }
    for (const SelectorAtom& atom : selector.atoms)
        if (!compare(atom_value(atom, mapped, i, m), atom.op, atom.value)) return false;
    return true;
}

std::string estimand_label(const EstimandSpec& spec) {
    if (!spec.label.empty()) return spec.label;
    switch (spec.kind) {
        case EstimandKind::UntreatedTrajectory:
            return "untreated_trajectory(k=" + format_int(spec.k) + ")";
        case EstimandKind::SubgroupBlipMean:
            return "blip_mean(m=" + format_int(spec.m) + ",k=" + format_int(spec.k) + " | " +
                   trimmed(spec.selector) + ")";
        case EstimandKind::BlipValue: {
            std::string out = "blip(m=" + format_int(spec.m) + ",k=" + format_int(spec.k);
            if (spec.member != 0) out += ",member=" + format_int(spec.member);
            return out + " | " + trimmed(spec.selector) + ")";
        }
    }
    return "estimand";
}

double untreated_trajectory(const EstimationResult& result, const MappedPanel& mapped,
                            const BlipModel& model, int k) {
    return untreated_trajectory_value(result.psi_hat, mapped, model, k, nullptr);
}

double subgroup_blip_mean(const EstimationResult& result, const MappedPanel& mapped,
                          const BlipModel& model, const EstimandSpec& spec) {
    return subgroup_mean_value(result.psi_hat, mapped, model, spec, nullptr);
}

double blip_value_at(const EstimationResult& result, const MappedPanel& mapped,
                     const BlipModel& model, const EstimandSpec& spec) {
    return blip_point_value(result.psi_hat, mapped, model, spec);
}

double pinned_blip_value(const Eigen::VectorXd& psi, int mapped_dimension,
                         int covariate_count, const BlipModel& model,
                         const EstimandSpec& spec) {
    if (spec.m < 0 || spec.k <= spec.m)
        throw Error(ErrorCode::IndexError,
                    "outcome period " + format_int(spec.k) + " must lie after period " +
                        format_int(spec.m));
    if (mapped_dimension < 0 || covariate_count < 0)
        throw Error(ErrorCode::InvalidSize, "history dimensions must be non-negative");
    const History hist = build_pinned_history(mapped_dimension, covariate_count, spec);
    return blip_value(model, psi, spec.m, spec.k, hist, spec.member);
}

double evaluate_estimand(const Eigen::VectorXd& psi, const MappedPanel& mapped,
                         const BlipModel& model, const EstimandSpec& spec,
                         const Eigen::VectorXd* row_weights) {
    switch (spec.kind) {
        case EstimandKind::UntreatedTrajectory:
            return untreated_trajectory_value(psi, mapped, model, spec.k, row_weights);
        case EstimandKind::SubgroupBlipMean:
            return subgroup_mean_value(psi, mapped, model, spec, row_weights);
        case EstimandKind::BlipValue: return blip_point_value(psi, mapped, model, spec);
    }
    throw Error(ErrorCode::ConfigError, "unknown estimand kind");
}

double evaluate_estimand(const EstimationResult& result, const MappedPanel& mapped,
                         const BlipModel& model, const EstimandSpec& spec) {
    return evaluate_estimand(result.psi_hat, mapped, model, spec, nullptr);
}

EstimandEstimate estimand_with_uncertainty(const EstimationResult& result,
                                           const MappedPanel& mapped, const BlipModel& model,
                                           const EstimandSpec& spec,
                                           const VarianceEstimate& variance) {
    const bool moving = variance.method == "moving-block-bootstrap";
    const bool spatial = variance.method == "spatial-block-bootstrap";
    if (!moving && !spatial)
        throw Error(ErrorCode::ConfigError,
                    "estimand uncertainty needs a bootstrap variance estimate; got '" +
                        variance.method + "'");
    const int b_count = static_cast<int>(variance.replicate_psi.rows());
    if (b_count < 2 || static_cast<int>(variance.replicate_attempts.size()) != b_count)
        throw Error(ErrorCode::InvalidSize,
                    "bootstrap replicate record is incomplete; re-run the bootstrap");

    const ReplicateEvaluator evaluator = build_evaluator(mapped, model, spec);

    EstimandEstimate out;
    out.spec = spec;
    out.label = estimand_label(spec);
    out.value = evaluator.eval(result.psi_hat, nullptr);

    const int n = mapped.unit_count();
    const int e_count = mapped.sampling_unit_count();
    std::vector<int> unit_of_row(n, 0);
    for (int e = 0; e < e_count; ++e)
        for (int i : mapped.sampling_units[e]) unit_of_row[i] = e;

    // Blip-value estimands read only psi, so the resample weights need not be
    // replayed for them.
    const bool needs_weights = spec.kind != EstimandKind::BlipValue;
    out.replicate_values.resize(b_count);
    Eigen::VectorXd row_w(n);
    for (int b = 0; b < b_count; ++b) {
        const Eigen::VectorXd* weights = nullptr;
        if (needs_weights) {
            const unsigned long long stream =
                derive_stream(variance.tuning.seed, static_cast<unsigned long long>(b),
                              static_cast<unsigned long long>(variance.replicate_attempts[b]));
            const Eigen::VectorXd we =
                moving ? moving_block_weights(e_count, variance.tuning.block_length, stream)
                       : block_draw_weights(variance.plan, e_count, stream);
            for (int i = 0; i < n; ++i) row_w(i) = we(unit_of_row[i]);
            weights = &row_w;
        }
        out.replicate_values(b) =
            evaluator.eval(variance.replicate_psi.row(b).transpose(), weights);
    }

    const double mean = out.replicate_values.mean();
    out.se = std::sqrt((out.replicate_values.array() - mean).square().sum() /
                       static_cast<double>(b_count - 1));
    std::vector<double> vals(out.replicate_values.data(),
                             out.replicate_values.data() + b_count);
    out.ci_lower = percentile(vals, 0.025);
    out.ci_upper = percentile(std::move(vals), 0.975);
    return out;
}

}  // namespace snmm
