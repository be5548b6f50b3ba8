#include "snmm/blip.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace snmm {

namespace {

struct Token {
    enum Kind { Ident, Int, Sym, End };
    Kind kind;
    std::string text;
    long value = 0;
    int line = 1;
    int col = 1;
};

std::vector<Token> lex(const std::string& text) {
    std::vector<Token> out;
    int line = 1, col = 1;
    std::size_t i = 0;
    const auto fail = [&](const std::string& msg) {
        throw Error(ErrorCode::SpecParseError, msg + " at line " + std::to_string(line) +
                                                   ", col " + std::to_string(col));
    };
    while (i < text.size()) {
        const char c = text[i];
        if (c == '\n') {
            ++line;
            col = 1;
            ++i;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++col;
            ++i;
            continue;
        }
        if (c == '#') {
            while (i < text.size() && text[i] != '\n') ++i;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            Token t{Token::Ident, "", 0, line, col};
            while (i < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) {
                t.text += text[i];
                ++i;
                ++col;
            }
            out.push_back(std::move(t));
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            Token t{Token::Int, "", 0, line, col};
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
                t.text += text[i];
                ++i;
                ++col;
            }
            t.value = std::stol(t.text);
            out.push_back(std::move(t));
            continue;
        }
        if (std::string("{}[]:;,*+-=").find(c) != std::string::npos) {
            out.push_back({Token::Sym, std::string(1, c), 0, line, col});
            ++i;
            ++col;
            continue;
        }
        fail(std::string("unexpected character '") + c + "'");
    }
    out.push_back({Token::End, "", 0, line, col});
    return out;
}

class Parser {
  public:
    explicit Parser(const std::string& text) : tokens_(lex(text)) {}

    BlipModel parse() {
        while (!at_end()) {
            if (peek().kind == Token::Ident && peek(1).kind == Token::Sym &&
                peek(1).text == ":") {
                // bare statement: goes into a trailing implicit "all" block
                if (model_.blocks.empty() || !implicit_trailing_)
                    open_implicit_block();
                parse_statement(model_.blocks.back());
            } else {
                implicit_trailing_ = false;
                parse_block();
            }
        }
        if (total_terms_ == 0)
            throw Error(ErrorCode::SpecParseError, "model defines no terms");
        return std::move(model_);
    }

  private:
    const Token& peek(int ahead = 0) const {
        const std::size_t at = std::min(pos_ + ahead, tokens_.size() - 1);
        return tokens_[at];
    }
    bool at_end() const { return peek().kind == Token::End; }
    Token take() { return tokens_[std::min(pos_++, tokens_.size() - 1)]; }

    [[noreturn]] void fail(const Token& t, const std::string& msg) const {
        throw Error(ErrorCode::SpecParseError, msg + " at line " + std::to_string(t.line) +
                                                   ", col " + std::to_string(t.col));
    }

    Token expect_sym(const std::string& s, const std::string& what) {
        Token t = take();
        if (t.kind != Token::Sym || t.text != s) fail(t, "expected '" + s + "' " + what);
        return t;
    }

    Token expect_int(const std::string& what) {
        Token t = take();
        if (t.kind != Token::Int) fail(t, "expected integer " + what);
        return t;
    }

    void open_implicit_block() {
        model_.blocks.emplace_back();
        implicit_trailing_ = true;
    }

    void parse_block() {
        Token head = peek();
        if (head.kind != Token::Ident) fail(head, "expected a block scope or 'label:'");
        BlipBlock block;
        if (head.text == "all") {
            take();
        } else {
            while (true) {
                Token key = take();
                if (key.kind != Token::Ident ||
                    (key.text != "m" && key.text != "k" && key.text != "j"))
                    fail(key, "expected scope key m, k, or j");
                expect_sym("=", "after scope key");
                Token val = expect_int("as scope value");
                std::optional<int>& slot = key.text == "m"   ? block.scope.m
                                           : key.text == "k" ? block.scope.k
                                                             : block.scope.j;
                if (slot) fail(key, "scope key '" + key.text + "' given twice");
                slot = static_cast<int>(val.value);
                if (peek().kind == Token::Sym && peek().text == ",") {
                    take();
                    continue;
                }
                break;
            }
        }
        if (block.scope.m && block.scope.k && *block.scope.k <= *block.scope.m)
            fail(head, "scope covers no valid (m,k): needs k > m");
        expect_sym("{", "to open the block");
        while (!(peek().kind == Token::Sym && peek().text == "}")) {
            if (at_end()) fail(peek(), "unterminated block (missing '}')");
            parse_statement(block);
        }
        take();  // '}'
        model_.blocks.push_back(std::move(block));
    }

    void parse_statement(BlipBlock& block) {
        Token label = take();
        if (label.kind != Token::Ident) fail(label, "expected a parameter label");
        expect_sym(":", "after parameter label");
        BlipTerm term;
        term.label = label.text;
        term.factors.push_back(parse_factor(block.scope));
        while (peek().kind == Token::Sym && peek().text == "*") {
            take();
            term.factors.push_back(parse_factor(block.scope));
        }
        check_zero_constraint(term, block.scope, label);
        auto [it, inserted] =
            param_index_.emplace(term.label, static_cast<int>(model_.param_labels.size()));
        if (inserted) model_.param_labels.push_back(term.label);
        term.param = it->second;
        block.terms.push_back(std::move(term));
        ++total_terms_;
        if (peek().kind == Token::Sym && peek().text == ";") {
            take();
        } else if (!(peek().kind == Token::Sym && peek().text == "}") && !at_end()) {
            fail(peek(), "expected ';' after term");
        }
    }

    TimeRef parse_time_index() {
        TimeRef ref;
        Token t = take();
        if (t.kind == Token::Int) {
            ref.symbolic = false;
            ref.absolute = static_cast<int>(t.value);
            return ref;
        }
        if (t.kind == Token::Ident && t.text == "m") {
            ref.symbolic = true;
            ref.offset = 0;
            if (peek().kind == Token::Sym && (peek().text == "+" || peek().text == "-")) {
                const bool plus = take().text == "+";
                Token off = expect_int("as time offset");
                ref.offset = plus ? static_cast<int>(off.value) : -static_cast<int>(off.value);
            }
            return ref;
        }
        fail(t, "expected time index: m, m+c, m-c, or integer");
    }

    Factor parse_factor(const BlockScope& scope) {
        Token t = take();
        if (t.kind != Token::Ident) fail(t, "expected a factor");
        Factor f;
        if (t.text == "lagsum_a") {
            f.kind = FactorKind::LagSumExposure;
            return f;
        }
        if (t.text == "timegap") {
            f.kind = FactorKind::TimeGap;
            return f;
        }
        if (t.text == "a" || t.text == "h" || t.text == "l") {
            f.kind = t.text == "a"   ? FactorKind::OwnExposure
                     : t.text == "h" ? FactorKind::MappedComponent
                                     : FactorKind::Covariate;
            expect_sym("[", "after factor name");
            f.time = parse_time_index();
            expect_sym("]", "to close time index");
            if (f.kind != FactorKind::OwnExposure) {
                expect_sym("[", "for the component index");
                Token comp = expect_int("as component index");
                f.component = static_cast<int>(comp.value);
                expect_sym("]", "to close component index");
            }
            // leakage decidable at parse time
            if (f.time.symbolic && f.time.offset > 0)
                throw Error(ErrorCode::LeakageError,
                            "factor references future time m+" + std::to_string(f.time.offset) +
                                " at line " + std::to_string(t.line));
            if (!f.time.symbolic && scope.m && f.time.absolute > *scope.m)
                throw Error(ErrorCode::LeakageError,
                            "factor references time " + std::to_string(f.time.absolute) +
                                " after block time m=" + std::to_string(*scope.m) + " at line " +
                                std::to_string(t.line));
            if (f.time.symbolic && scope.m && *scope.m + f.time.offset < 0)
                throw Error(ErrorCode::IndexError,
                            "factor time m" + std::to_string(f.time.offset) +
                                " is negative for block m=" + std::to_string(*scope.m) +
                                " at line " + std::to_string(t.line));
            return f;
        }
        fail(t, "unknown factor '" + t.text + "'");
    }

    // Every term must vanish when the time-m exposure is the zero element:
    // it needs an a/h factor pinned to time m for every m the block covers.
    void check_zero_constraint(const BlipTerm& term, const BlockScope& scope,
                               const Token& at) const {
        for (const Factor& f : term.factors) {
            if (f.kind != FactorKind::OwnExposure && f.kind != FactorKind::MappedComponent)
                continue;
            if (f.time.symbolic && f.time.offset == 0) return;
            if (!f.time.symbolic && scope.m && f.time.absolute == *scope.m) return;
        }
        throw Error(ErrorCode::ZeroConstraintViolation,
                    "term '" + term.label +
                        "' has no time-m exposure factor (a[m] or h[m][r]) at line " +
                        std::to_string(at.line));
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    BlipModel model_;
    std::unordered_map<std::string, int> param_index_;
    bool implicit_trailing_ = false;
    int total_terms_ = 0;
};

std::string time_ref_string(const TimeRef& t) {
    if (!t.symbolic) return std::to_string(t.absolute);
    if (t.offset == 0) return "m";
    if (t.offset > 0) return "m+" + std::to_string(t.offset);
    return "m-" + std::to_string(-t.offset);
}

std::string factor_string(const Factor& f) {
    switch (f.kind) {
        case FactorKind::OwnExposure: return "a[" + time_ref_string(f.time) + "]";
        case FactorKind::MappedComponent:
            return "h[" + time_ref_string(f.time) + "][" + std::to_string(f.component) + "]";
        case FactorKind::Covariate:
            return "l[" + time_ref_string(f.time) + "][" + std::to_string(f.component) + "]";
        case FactorKind::LagSumExposure: return "lagsum_a";
        case FactorKind::TimeGap: return "timegap";
    }
    return "?";
}

std::string scope_string(const BlockScope& s) {
    std::string out;
    if (s.m) out += "m=" + std::to_string(*s.m);
    if (s.k) out += (out.empty() ? "" : ", ") + std::string("k=") + std::to_string(*s.k);
    if (s.j) out += (out.empty() ? "" : ", ") + std::string("j=") + std::to_string(*s.j);
    return out.empty() ? "all" : out;
}

double factor_value(const Factor& f, int m, int k, const History& hist) {
    switch (f.kind) {
        case FactorKind::TimeGap:
            return static_cast<double>(k - m - 1);
        case FactorKind::LagSumExposure:
            return m == 0 ? 0.0 : hist.a.head(m).sum();
        default:
            break;
    }
    const int t = f.time.resolve(m);
    if (t > m)
        throw Error(ErrorCode::LeakageError,
                    "factor " + factor_string(f) + " resolves to future time " +
                        std::to_string(t) + " at m=" + std::to_string(m));
    if (t < 0)
        throw Error(ErrorCode::IndexError,
                    "factor " + factor_string(f) + " resolves to negative time at m=" +
                        std::to_string(m));
    switch (f.kind) {
        case FactorKind::OwnExposure:
            if (t >= hist.a.size())
                throw Error(ErrorCode::IndexError, "history too short for " + factor_string(f));
            return hist.a(t);
        case FactorKind::MappedComponent:
            if (f.component >= hist.h.rows() || t >= hist.h.cols())
                throw Error(ErrorCode::IndexError,
                            "mapped exposure lacks component/time for " + factor_string(f));
            return hist.h(f.component, t);
        case FactorKind::Covariate:
            if (f.component >= hist.l.rows() || t >= hist.l.cols())
                throw Error(ErrorCode::IndexError,
                            "covariates lack component/time for " + factor_string(f));
            return hist.l(f.component, t);
        default:
            return 0.0;  // unreachable
    }
}

}  // namespace

int BlipModel::param_index(const std::string& label) const {
    for (int i = 0; i < param_count(); ++i)
        if (param_labels[i] == label) return i;
    return -1;
}

BlipModel parse_blip_spec(const std::string& text) { return Parser(text).parse(); }

std::string print_blip_spec(const BlipModel& model) {
    std::ostringstream os;
    for (const auto& block : model.blocks) {
        os << scope_string(block.scope) << " {\n";
        for (const auto& term : block.terms) {
            os << "  " << term.label << ": ";
            for (std::size_t f = 0; f < term.factors.size(); ++f) {
                if (f) os << "*";
                os << factor_string(term.factors[f]);
            }
            os << ";\n";
        }
        os << "}\n";
    }
    return os.str();
}

void validate_blip_model(const BlipModel& model, int tau, int p, int n_cov, int members) {
    if (tau < 1) throw Error(ErrorCode::InvalidSize, "panel horizon must have tau >= 1");
    for (const auto& block : model.blocks) {
        const auto& scope = block.scope;
        if (scope.m && (*scope.m < 0 || *scope.m >= tau))
            throw Error(ErrorCode::IndexError,
                        "block scope m=" + std::to_string(*scope.m) +
                            " outside exposure times [0, " + std::to_string(tau) + ")");
        if (scope.k && (*scope.k < 1 || *scope.k > tau))
            throw Error(ErrorCode::IndexError,
                        "block scope k=" + std::to_string(*scope.k) +
                            " outside outcome times [1, " + std::to_string(tau) + "]");
        if (scope.j && (*scope.j < 0 || *scope.j >= members))
            throw Error(ErrorCode::IndexError,
                        "block scope j=" + std::to_string(*scope.j) + " outside member range [0, " +
                            std::to_string(members) + ")");
        for (int m = scope.m ? *scope.m : 0; m <= (scope.m ? *scope.m : tau - 1); ++m) {
            for (int k = scope.k ? *scope.k : m + 1; k <= (scope.k ? *scope.k : tau); ++k) {
                if (k <= m) continue;
                for (const auto& term : block.terms) {
                    bool zero_ok = false;
                    for (const auto& factor : term.factors) {
                        if (factor.kind == FactorKind::LagSumExposure ||
                            factor.kind == FactorKind::TimeGap)
                            continue;
                        const int t = factor.time.resolve(m);
                        if (t < 0)
                            throw Error(ErrorCode::IndexError,
                                        "term '" + term.label + "': factor " +
                                            factor_string(factor) +
                                            " resolves to negative time at m=" +
                                            std::to_string(m));
                        if (t > m)
                            throw Error(ErrorCode::LeakageError,
                                        "term '" + term.label + "': factor " +
                                            factor_string(factor) +
                                            " references future time at m=" + std::to_string(m));
                        if (factor.kind == FactorKind::MappedComponent && factor.component >= p)
                            throw Error(ErrorCode::IndexError,
                                        "term '" + term.label + "': h component " +
                                            std::to_string(factor.component) +
                                            " out of range (mapping provides " +
                                            std::to_string(p) + ")");
                        if (factor.kind == FactorKind::Covariate && factor.component >= n_cov)
                            throw Error(ErrorCode::IndexError,
                                        "term '" + term.label + "': covariate index " +
                                            std::to_string(factor.component) +
                                            " out of range (panel has " + std::to_string(n_cov) +
                                            ")");
                        if ((factor.kind == FactorKind::OwnExposure ||
                             factor.kind == FactorKind::MappedComponent) &&
                            t == m)
                            zero_ok = true;
                    }
                    if (!zero_ok)
                        throw Error(ErrorCode::ZeroConstraintViolation,
                                    "term '" + term.label +
                                        "' lacks a time-m exposure factor at covered m=" +
                                        std::to_string(m));
                }
            }
        }
    }
}

void validate_blip_model(const BlipModel& model, const MappedPanel& mapped) {
    validate_blip_model(model, mapped.tau(), mapped.p(), mapped.panel.covariate_count(),
                        mapped.rows_per_sampling_unit());
}

Eigen::VectorXd blip_features(const BlipModel& model, int m, int k, const History& hist,
                              int member) {
    if (k <= m)
        throw Error(ErrorCode::IndexError, "blip features need k > m, got m=" +
                                               std::to_string(m) + ", k=" + std::to_string(k));
    Eigen::VectorXd f = Eigen::VectorXd::Zero(model.param_count());
    for (const auto& block : model.blocks) {
        if (!block.scope.matches(m, k, member)) continue;
        for (const auto& term : block.terms) {
            double prod = 1.0;
            for (const auto& factor : term.factors) {
                prod *= factor_value(factor, m, k, hist);
                if (prod == 0.0) break;
            }
            f[term.param] += prod;
        }
    }
    return f;
}

double blip_value(const BlipModel& model, const Eigen::VectorXd& psi, int m, int k,
                  const History& hist, int member) {
    if (psi.size() != model.param_count())
        throw Error(ErrorCode::InvalidSize,
                    "psi has " + std::to_string(psi.size()) + " entries, model has " +
                        std::to_string(model.param_count()) + " parameters");
    return psi.dot(blip_features(model, m, k, hist, member));
}

Eigen::VectorXd blip_value_cluster(const BlipModel& model, const Eigen::VectorXd& psi, int m,
                                   int k, const std::vector<History>& histories) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(histories.size()));
    for (std::size_t j = 0; j < histories.size(); ++j)
        out[static_cast<Eigen::Index>(j)] =
            blip_value(model, psi, m, k, histories[j], static_cast<int>(j));
    return out;
}

BlippedOutcome blip_down(const BlipModel& model, const Eigen::VectorXd& psi,
                         const MappedPanel& mapped) {
    const int n = mapped.unit_count();
    const int tau = mapped.tau();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // gamma[m][k] per unit, for 0 <= m < k <= tau
    std::vector<std::vector<Eigen::VectorXd>> gamma(tau);
    for (int m = 0; m < tau; ++m) gamma[m].assign(tau + 1, Eigen::VectorXd());
    for (int i = 0; i < n; ++i) {
        const History hist = mapping_histories(mapped, i, tau - 1);
        const int member = mapped.member_index[i];
        for (int m = 0; m < tau; ++m)
            for (int k = m + 1; k <= tau; ++k) {
                if (gamma[m][k].size() == 0) gamma[m][k].setZero(n);
                gamma[m][k][i] = blip_value(model, psi, m, k, hist, member);
            }
    }

    BlippedOutcome out;
    out.H.assign(tau + 1, Eigen::MatrixXd::Constant(n, tau + 1, nan));
    for (int k = 0; k <= tau; ++k) out.H[k].col(k) = mapped.panel.outcome.col(k);
    for (int k = 1; k <= tau; ++k)
        for (int m = k - 1; m >= 0; --m)
            out.H[m].col(k) = out.H[m + 1].col(k) - gamma[m][k];
    return out;
}

}  // namespace snmm
