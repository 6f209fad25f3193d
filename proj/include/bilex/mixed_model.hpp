#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bilex/common.hpp"
#include "bilex/lexicon.hpp"
#include "bilex/model.hpp"
#include "bilex/probes.hpp"

namespace bilex {

// ---- distribution tails ----

// Two-sided normal p-value for a z statistic.
inline double normal_p_two_sided(double z) {
    return std::erfc(std::abs(z) * M_SQRT1_2);
}

namespace detail {

// Regularized upper incomplete gamma Q(a, x) by series / continued fraction.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        // series for P(a,x), return 1 - P
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        const double p = sum * std::exp(-x + a * std::log(x) - gln);
        return std::max(0.0, 1.0 - p);
    }
    // Lentz continued fraction for Q(a,x)
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

}  // namespace detail

// Upper-tail probability of a chi-square distribution.
inline double chi_square_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    return detail::gamma_q(df / 2.0, x / 2.0);
}

// ---- regression data and design ----

enum class Term { WordCategory, WordIndex, Vocabulary, FreqS, FreqO };

inline const char* term_name(Term t) {
    switch (t) {
        case Term::WordCategory: return "WordCategory";
        case Term::WordIndex: return "WordIndex";
        case Term::Vocabulary: return "Vocabulary";
        case Term::FreqS: return "FreqS";
        case Term::FreqO: return "FreqO";
    }
    return "?";
}

struct SurprisalObs {
    std::string item_id;
    WordCategory category = WordCategory::Experimental;
    Condition condition = Condition::A_full;
    std::string word;
    double surprisal_bits = 0.0;
    int word_index = 1;
    double word_index_norm = 0.0;  // position / sentence word count
    double freq_s = std::numeric_limits<double>::quiet_NaN();
    double freq_o = std::numeric_limits<double>::quiet_NaN();
};

struct RegressionSpec {
    std::vector<Term> fixed_terms;
    bool word_index_normalized = false;
};

struct Design {
    Matrix X;  // intercept column first
    Vector y;
    std::vector<int> group;              // item index per row
    std::vector<std::string> colnames;   // including "(Intercept)"
    std::vector<std::string> item_ids;   // per group index
    std::vector<std::string> warnings;   // dropped all-zero columns
};

// Builds the fixed-effects design: intercept, sum-coded WordCategory
// (+1 experimental / -1 control), sum-coded Vocabulary contrasts, raw or
// normalized word index, and pre-normalized frequency columns.
inline Design build_design(const std::vector<SurprisalObs>& records,
                           const RegressionSpec& spec) {
    if (records.empty()) throw DataError("build_design: no observations");
    {
        std::set<Term> seen;
        for (Term t : spec.fixed_terms)
            if (!seen.insert(t).second)
                throw DataError(std::string("duplicate term in spec: ") +
                                term_name(t));
    }
    const auto n = static_cast<Eigen::Index>(records.size());
    Design d;
    d.y.resize(n);
    std::map<std::string, int> item_index;
    d.group.resize(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        d.y(static_cast<Eigen::Index>(i)) = records[i].surprisal_bits;
        auto [it, inserted] = item_index.emplace(
            records[i].item_id, static_cast<int>(item_index.size()));
        if (inserted) d.item_ids.push_back(records[i].item_id);
        d.group[i] = it->second;
    }

    std::vector<std::pair<std::string, Vector>> cols;
    cols.emplace_back("(Intercept)", Vector::Ones(n));
    for (Term t : spec.fixed_terms) {
        switch (t) {
            case Term::WordCategory: {
                Vector c(n);
                for (size_t i = 0; i < records.size(); ++i)
                    c(static_cast<Eigen::Index>(i)) =
                        records[i].category == WordCategory::Experimental ? 1.0
                                                                          : -1.0;
                cols.emplace_back("WordCategory", std::move(c));
                break;
            }
            case Term::WordIndex: {
                Vector c(n);
                for (size_t i = 0; i < records.size(); ++i)
                    c(static_cast<Eigen::Index>(i)) =
                        spec.word_index_normalized
                            ? records[i].word_index_norm
                            : static_cast<double>(records[i].word_index);
                cols.emplace_back(spec.word_index_normalized ? "WordIndexNorm"
                                                             : "WordIndex",
                                  std::move(c));
                break;
            }
            case Term::Vocabulary: {
                std::set<Condition> levels_set;
                for (const auto& r : records) levels_set.insert(r.condition);
                std::vector<Condition> levels(levels_set.begin(),
                                              levels_set.end());
                for (size_t j = 0; j + 1 < levels.size(); ++j) {
                    Vector c = Vector::Zero(n);
                    for (size_t i = 0; i < records.size(); ++i) {
                        if (records[i].condition == levels[j])
                            c(static_cast<Eigen::Index>(i)) = 1.0;
                        else if (records[i].condition == levels.back())
                            c(static_cast<Eigen::Index>(i)) = -1.0;
                    }
                    cols.emplace_back(
                        std::string("Vocabulary") + condition_name(levels[j]),
                        std::move(c));
                }
                if (levels.size() < 2)
                    d.warnings.push_back(
                        "Vocabulary term dropped: single level in data");
                break;
            }
            case Term::FreqS:
            case Term::FreqO: {
                Vector c(n);
                for (size_t i = 0; i < records.size(); ++i) {
                    const double v = t == Term::FreqS ? records[i].freq_s
                                                      : records[i].freq_o;
                    if (std::isnan(v))
                        throw DataError(std::string("missing column: ") +
                                        term_name(t));
                    c(static_cast<Eigen::Index>(i)) = v;
                }
                cols.emplace_back(term_name(t), std::move(c));
                break;
            }
        }
    }

    // drop all-zero columns with a warning; non-intercept constant columns
    // are a rank deficiency
    std::vector<std::pair<std::string, Vector>> kept;
    for (size_t j = 0; j < cols.size(); ++j) {
        const auto& [name, c] = cols[j];
        if (j > 0) {
            if (c.isZero(0.0)) {
                d.warnings.push_back("dropped all-zero column: " + name);
                continue;
            }
            if ((c.array() == c(0)).all())
                throw DataError("rank deficiency: constant column " + name);
        }
        kept.push_back(cols[j]);
    }
    d.X.resize(n, static_cast<Eigen::Index>(kept.size()));
    for (size_t j = 0; j < kept.size(); ++j) {
        d.colnames.push_back(kept[j].first);
        d.X.col(static_cast<Eigen::Index>(j)) = kept[j].second;
    }
    return d;
}

// ---- the mixed model ----

enum class FitCriterion { ML, REML };

struct MixedModelFit {
    std::vector<std::string> terms;
    Vector beta;
    Vector se;
    double sigma2 = 0.0;
    double tau2 = 0.0;
    double theta = 0.0;  // tau2 / sigma2
    double deviance_ml = 0.0;
    double deviance_reml = 0.0;
    Matrix fixed_corr;
    Matrix cov_beta;
    int n_obs = 0;
    int n_items = 0;
    bool converged = false;
    FitCriterion criterion = FitCriterion::REML;
};

namespace detail {

struct GroupData {
    std::vector<Eigen::Index> rows;
};

struct ProfileResult {
    Vector beta;
    Matrix A;      // X' V^-1 X
    double q = 0;  // r' V^-1 r
    double logdet_v = 0;
};

// One evaluation of the profiled model at a given theta. V = I + theta*ZZ',
// inverted per group via the Woodbury identity.
inline ProfileResult profile_at(const Matrix& X, const Vector& y,
                                const std::vector<GroupData>& groups,
                                double theta) {
    const auto p = X.cols();
    ProfileResult res;
    res.A = Matrix::Zero(p, p);
    Vector b = Vector::Zero(p);
    res.logdet_v = 0.0;
    for (const auto& g : groups) {
        const auto nj = static_cast<double>(g.rows.size());
        const double cj = theta / (1.0 + theta * nj);
        res.logdet_v += std::log(1.0 + theta * nj);
        Vector xsum = Vector::Zero(p);
        double ysum = 0.0;
        for (auto r : g.rows) {
            res.A.noalias() += X.row(r).transpose() * X.row(r);
            b.noalias() += X.row(r).transpose() * y(r);
            xsum += X.row(r).transpose();
            ysum += y(r);
        }
        if (cj != 0.0) {
            res.A.noalias() -= cj * (xsum * xsum.transpose());
            b.noalias() -= cj * xsum * ysum;
        }
    }
    Eigen::LDLT<Matrix> ldlt(res.A);
    if (ldlt.info() != Eigen::Success)
        throw NumericError("singular design in mixed-model fit");
    res.beta = ldlt.solve(b);
    // quadratic form of the GLS residuals
    res.q = 0.0;
    for (const auto& g : groups) {
        const auto nj = static_cast<double>(g.rows.size());
        const double cj = theta / (1.0 + theta * nj);
        double rsum = 0.0;
        for (auto r : g.rows) {
            const double resid = y(r) - X.row(r).dot(res.beta);
            res.q += resid * resid;
            rsum += resid;
        }
        res.q -= cj * rsum * rsum;
    }
    return res;
}

inline double deviance_of(const ProfileResult& pr, Eigen::Index n,
                          Eigen::Index p, FitCriterion crit) {
    if (crit == FitCriterion::ML) {
        const double sigma2 = pr.q / static_cast<double>(n);
        return static_cast<double>(n) * std::log(2.0 * M_PI * sigma2) +
               pr.logdet_v + static_cast<double>(n);
    }
    const double m = static_cast<double>(n - p);
    const double sigma2 = pr.q / m;
    Eigen::LDLT<Matrix> ldlt(pr.A);
    const double logdet_a = ldlt.vectorD().array().log().sum();
    return m * std::log(2.0 * M_PI * sigma2) + pr.logdet_v + logdet_a + m;
}

}  // namespace detail

namespace detail {

inline std::vector<GroupData> collect_groups(const Design& design) {
    int n_groups = 0;
    for (int g : design.group) n_groups = std::max(n_groups, g + 1);
    std::vector<GroupData> groups(static_cast<size_t>(n_groups));
    for (size_t i = 0; i < design.group.size(); ++i)
        groups[static_cast<size_t>(design.group[i])].rows.push_back(
            static_cast<Eigen::Index>(i));
    return groups;
}

}  // namespace detail

// Profiled deviance at a fixed variance ratio (used by oracles and the
// local-optimality checks).
inline double profiled_deviance(const Design& design, double theta,
                                FitCriterion criterion) {
    auto groups = detail::collect_groups(design);
    return detail::deviance_of(
        detail::profile_at(design.X, design.y, groups, theta), design.X.rows(),
        design.X.cols(), criterion);
}

// Fit with theta held fixed (theta = 0 gives ordinary least squares).
inline MixedModelFit fit_mixed_at_theta(const Design& design, double theta,
                                        FitCriterion criterion) {
    const auto n = design.X.rows();
    const auto p = design.X.cols();
    auto groups = detail::collect_groups(design);
    auto pr = detail::profile_at(design.X, design.y, groups, theta);
    MixedModelFit fit;
    fit.terms = design.colnames;
    fit.criterion = criterion;
    fit.converged = true;
    fit.n_obs = static_cast<int>(n);
    fit.n_items = static_cast<int>(groups.size());
    fit.theta = theta;
    fit.beta = pr.beta;
    const double denom = criterion == FitCriterion::ML
                             ? static_cast<double>(n)
                             : static_cast<double>(n - p);
    fit.sigma2 = pr.q / denom;
    fit.tau2 = theta * fit.sigma2;
    fit.deviance_ml = detail::deviance_of(pr, n, p, FitCriterion::ML);
    fit.deviance_reml = detail::deviance_of(pr, n, p, FitCriterion::REML);
    Eigen::LDLT<Matrix> ldlt(pr.A);
    fit.cov_beta = fit.sigma2 * ldlt.solve(Matrix::Identity(p, p));
    fit.se.resize(p);
    for (Eigen::Index j = 0; j < p; ++j)
        fit.se(j) = std::sqrt(std::max(0.0, fit.cov_beta(j, j)));
    fit.fixed_corr.resize(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            fit.fixed_corr(i, j) =
                i == j ? 1.0
                       : (fit.se(i) * fit.se(j) > 0.0
                              ? fit.cov_beta(i, j) / (fit.se(i) * fit.se(j))
                              : 0.0);
    return fit;
}

// Random-intercept model y = X beta + Z b + e with b ~ N(0, tau2) per item.
// beta and sigma2 are profiled out; the scalar ratio theta = tau2/sigma2 is
// minimized by a log-spaced grid bracket followed by golden-section search
// on [0, 1e6] to relative tolerance 1e-10.
inline MixedModelFit fit_mixed(const Design& design,
                               FitCriterion criterion = FitCriterion::REML) {
    const auto n = design.X.rows();
    const auto p = design.X.cols();
    if (n <= p + 1)
        throw DataError("fit_mixed: need n_obs > n_fixed_terms + 1");
    {
        Eigen::ColPivHouseholderQR<Matrix> qr(design.X);
        qr.setThreshold(1e-10);
        if (qr.rank() < p) throw NumericError("singular design");
    }
    auto groups = detail::collect_groups(design);

    auto dev = [&](double theta) {
        return detail::deviance_of(
            detail::profile_at(design.X, design.y, groups, theta), n, p,
            criterion);
    };

    // coarse log-spaced bracket
    std::vector<double> grid = {0.0};
    for (int k = -8; k <= 6; ++k) grid.push_back(std::pow(10.0, k));
    size_t best_i = 0;
    double best_v = dev(grid[0]);
    for (size_t i = 1; i < grid.size(); ++i) {
        const double v = dev(grid[i]);
        if (v < best_v) {
            best_v = v;
            best_i = i;
        }
    }
    double lo = best_i == 0 ? 0.0 : grid[best_i - 1];
    double hi = best_i + 1 < grid.size() ? grid[best_i + 1] : 1e6;

    // golden-section
    constexpr double kInvPhi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - kInvPhi * (b - a);
    double x2 = a + kInvPhi * (b - a);
    double f1 = dev(x1), f2 = dev(x2);
    bool converged = false;
    for (int iter = 0; iter < 200; ++iter) {
        if (b - a <= 1e-10 * std::max(1.0, b)) {
            converged = true;
            break;
        }
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = dev(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = dev(x2);
        }
    }
    if (!converged)
        throw NumericError("fit_mixed: no convergence in 200 iterations");
    double theta = f1 < f2 ? x1 : x2;
    double theta_dev = std::min(f1, f2);
    // the boundary theta = 0 (no item variance) competes with the interior
    const double dev0 = dev(0.0);
    if (dev0 <= theta_dev) {
        theta = 0.0;
        theta_dev = dev0;
    }
    return fit_mixed_at_theta(design, theta, criterion);
}

struct WaldTest {
    std::string term;
    double beta = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;  // se == 0
};

// Normal-approximation Wald tests; the method label travels with the output.
inline constexpr const char* kWaldMethod = "wald_normal_approximation";

inline std::vector<WaldTest> wald_tests(const MixedModelFit& fit) {
    if (!fit.converged) throw NumericError("wald_tests: fit not converged");
    std::vector<WaldTest> out;
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
        WaldTest w;
        w.term = fit.terms[static_cast<size_t>(j)];
        w.beta = fit.beta(j);
        w.se = fit.se(j);
        if (w.se == 0.0) {
            w.degenerate = true;
            w.t = 0.0;
            w.p = w.beta == 0.0 ? 1.0 : 0.0;
        } else {
            w.t = w.beta / w.se;
            w.p = w.beta == 0.0 ? 1.0 : normal_p_two_sided(w.t);
        }
        out.push_back(w);
    }
    return out;
}

struct LrtResult {
    double chi2 = 0.0;
    int df = 0;
    double p_value = 1.0;
};

// Likelihood-ratio test between nested ML fits on the same data.
inline LrtResult lrt(const MixedModelFit& restricted,
                     const MixedModelFit& full) {
    if (restricted.criterion != FitCriterion::ML ||
        full.criterion != FitCriterion::ML)
        throw DataError("lrt: REML fits are invalid for fixed-effect LRT");
    if (restricted.n_obs != full.n_obs)
        throw DataError("lrt: fits use different data");
    for (const auto& t : restricted.terms) {
        if (std::find(full.terms.begin(), full.terms.end(), t) ==
            full.terms.end())
            throw DataError("lrt: models are not nested (term " + t + ")");
    }
    LrtResult res;
    res.df = static_cast<int>(full.terms.size() - restricted.terms.size());
    double chi2 = restricted.deviance_ml - full.deviance_ml;
    if (chi2 < -1e-6)
        throw NumericError("lrt: full model fits worse than restricted");
    res.chi2 = std::max(0.0, chi2);
    // df 0 (identical models) is a chi-square point mass at zero
    if (res.df == 0)
        res.p_value = res.chi2 == 0.0 ? 1.0 : 0.0;
    else
        res.p_value = res.chi2 == 0.0
                          ? 1.0
                          : chi_square_sf(res.chi2, static_cast<double>(res.df));
    return res;
}

inline Matrix fixed_corr(const MixedModelFit& fit) {
    if (!fit.converged) throw NumericError("fixed_corr: fit not converged");
    return fit.fixed_corr;
}

inline json fit_to_json(const MixedModelFit& fit) {
    json j;
    j["terms"] = fit.terms;
    auto vec = [](const Vector& v) {
        std::vector<double> out(static_cast<size_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i)
            out[static_cast<size_t>(i)] = v(i);
        return out;
    };
    j["beta"] = vec(fit.beta);
    j["se"] = vec(fit.se);
    auto tests = wald_tests(fit);
    std::vector<double> ts, ps;
    for (const auto& w : tests) {
        ts.push_back(w.t);
        ps.push_back(w.p);
    }
    j["t"] = ts;
    j["p"] = ps;
    j["p_method"] = kWaldMethod;
    j["tau2"] = fit.tau2;
    j["sigma2"] = fit.sigma2;
    j["deviance_ml"] = fit.deviance_ml;
    j["deviance_reml"] = fit.deviance_reml;
    std::vector<std::vector<double>> corr;
    for (Eigen::Index i = 0; i < fit.fixed_corr.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index k = 0; k < fit.fixed_corr.cols(); ++k)
            row.push_back(fit.fixed_corr(i, k));
        corr.push_back(std::move(row));
    }
    j["fixed_corr"] = corr;
    j["n_obs"] = fit.n_obs;
    j["n_items"] = fit.n_items;
    j["converged"] = fit.converged;
    j["criterion"] = fit.criterion == FitCriterion::ML ? "ML" : "REML";
    return j;
}

}  // namespace bilex
