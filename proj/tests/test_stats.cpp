#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bilex/mixed_model.hpp"
#include "bilex/rng.hpp"

using namespace bilex;

namespace {

// Balanced fixture: each item contributes one experimental and one control
// observation with a shared word index.
std::vector<SurprisalObs> balanced_obs(int n_items, double item_sd,
                                       double noise_sd, std::uint64_t seed,
                                       double effect = -0.8) {
    Rng rng(seed);
    std::vector<SurprisalObs> obs;
    for (int i = 0; i < n_items; ++i) {
        const double item_eff = item_sd * rng.next_normal();
        const int wi = 3 + (i % 4);
        for (int cat = 0; cat < 2; ++cat) {
            SurprisalObs o;
            o.item_id = "it" + std::to_string(i);
            o.category =
                cat ? WordCategory::Experimental : WordCategory::Control;
            o.word = (cat ? "e" : "c") + std::to_string(i);
            o.word_index = wi;
            o.word_index_norm = wi / 10.0;
            o.surprisal_bits = 6.0 + (cat ? effect : -effect) + item_eff +
                               0.05 * wi + noise_sd * rng.next_normal();
            obs.push_back(o);
        }
    }
    return obs;
}

// Independent chi-square upper tail: Simpson integration of the density
// after the substitution x = u^2, which removes the df=1 singularity.
double chi2_tail_by_integration(double x, int df) {
    const double a = df / 2.0;
    const double log_norm = a * std::log(2.0) + std::lgamma(a);
    auto integrand = [&](double u) {
        // f(u^2) * 2u
        const double logf =
            (a - 1.0) * std::log(u * u) - (u * u) / 2.0 - log_norm;
        return 2.0 * u * std::exp(logf);
    };
    const double lo = std::sqrt(x);
    const double hi = std::sqrt(x) + 40.0;
    const int n = 20000;  // even
    const double h = (hi - lo) / n;
    double sum = integrand(lo) + integrand(hi);
    for (int i = 1; i < n; ++i)
        sum += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

}  // namespace

TEST_CASE("build_design: sum coding of word category") {
    auto obs = balanced_obs(2, 0.0, 0.0, 1);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory};
    auto d = build_design(obs, spec);
    REQUIRE(d.X.rows() == 4);
    REQUIRE(d.X.cols() == 2);
    CHECK(d.colnames[0] == "(Intercept)");
    CHECK(d.colnames[1] == "WordCategory");
    // rows alternate control, experimental per item
    CHECK(d.X(0, 1) == -1.0);
    CHECK(d.X(1, 1) == 1.0);
    CHECK(d.X(2, 1) == -1.0);
    CHECK(d.X(3, 1) == 1.0);
    CHECK(d.group == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("build_design: duplicate terms and missing columns are errors") {
    auto obs = balanced_obs(3, 0.0, 0.1, 1);
    RegressionSpec dup;
    dup.fixed_terms = {Term::WordCategory, Term::WordCategory};
    CHECK_THROWS_WITH(build_design(obs, dup),
                      Catch::Matchers::ContainsSubstring("duplicate term"));
    RegressionSpec freq;
    freq.fixed_terms = {Term::FreqS};
    CHECK_THROWS_WITH(build_design(obs, freq),
                      Catch::Matchers::ContainsSubstring("missing column"));
}

TEST_CASE("build_design: vocabulary sum contrasts") {
    auto obs = balanced_obs(4, 0.0, 0.1, 2);
    obs[0].condition = obs[1].condition = Condition::A_full;
    obs[2].condition = obs[3].condition = Condition::B_friends;
    obs[4].condition = obs[5].condition = Condition::A_full;
    obs[6].condition = obs[7].condition = Condition::B_friends;
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory, Term::Vocabulary};
    auto d = build_design(obs, spec);
    REQUIRE(d.X.cols() == 3);  // intercept, category, one contrast
    CHECK(d.colnames[2] == "VocabularyA");
    CHECK(d.X(0, 2) == 1.0);   // condition A rows
    CHECK(d.X(2, 2) == -1.0);  // last level rows
}

TEST_CASE("build_design: single-level vocabulary is dropped with a warning") {
    auto obs = balanced_obs(4, 0.0, 0.1, 3);
    RegressionSpec with;
    with.fixed_terms = {Term::WordCategory, Term::Vocabulary, Term::WordIndex};
    auto d_with = build_design(obs, with);
    REQUIRE(!d_with.warnings.empty());
    RegressionSpec without;
    without.fixed_terms = {Term::WordCategory, Term::WordIndex};
    auto d_without = build_design(obs, without);
    // the dropped empty term changes nothing about the other columns
    REQUIRE(d_with.X.cols() == d_without.X.cols());
    auto f1 = fit_mixed(d_with, FitCriterion::ML);
    auto f2 = fit_mixed(d_without, FitCriterion::ML);
    for (Eigen::Index j = 0; j < f1.beta.size(); ++j)
        CHECK(f1.beta(j) == f2.beta(j));
}

TEST_CASE("tau2 = 0 data reproduce ordinary least squares") {
    auto obs = balanced_obs(10, 0.0, 0.4, 5);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory, Term::WordIndex};
    auto d = build_design(obs, spec);

    // OLS oracle via normal equations
    Matrix XtX = d.X.transpose() * d.X;
    Vector beta_ols = XtX.ldlt().solve(d.X.transpose() * d.y);
    Vector resid = d.y - d.X * beta_ols;
    const double rss = resid.squaredNorm();

    auto at0 = fit_mixed_at_theta(d, 0.0, FitCriterion::REML);
    CHECK((at0.beta - beta_ols).cwiseAbs().maxCoeff() < 1e-8);
    CHECK_THAT(at0.sigma2,
               Catch::Matchers::WithinAbs(
                   rss / static_cast<double>(d.X.rows() - d.X.cols()), 1e-8));
    auto at0_ml = fit_mixed_at_theta(d, 0.0, FitCriterion::ML);
    CHECK_THAT(at0_ml.sigma2,
               Catch::Matchers::WithinAbs(
                   rss / static_cast<double>(d.X.rows()), 1e-8));

    // the full optimizer on a balanced design also reproduces OLS betas
    auto fit = fit_mixed(d, FitCriterion::REML);
    CHECK((fit.beta - beta_ols).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("balanced intercept-only model recovers the grand mean") {
    auto obs = balanced_obs(6, 0.7, 0.3, 8);
    RegressionSpec spec;  // intercept only
    auto d = build_design(obs, spec);
    auto fit = fit_mixed(d, FitCriterion::REML);
    const double grand = d.y.mean();
    CHECK_THAT(fit.beta(0), Catch::Matchers::WithinAbs(grand, 1e-12));
}

TEST_CASE("optimizer matches a grid-scan deviance oracle") {
    // 6 items x 2 observations with genuine item variance
    auto obs = balanced_obs(6, 0.9, 0.25, 11);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory};
    auto d = build_design(obs, spec);
    for (auto crit : {FitCriterion::ML, FitCriterion::REML}) {
        auto fit = fit_mixed(d, crit);
        const double fit_dev = crit == FitCriterion::ML ? fit.deviance_ml
                                                        : fit.deviance_reml;
        // grid scan theta in {0, 1e-4 .. 1e3}, then bisection refinement
        double best_theta = 0.0;
        double best = profiled_deviance(d, 0.0, crit);
        for (double t = 1e-4; t <= 1e3; t *= 1.2589254117941673) {
            const double v = profiled_deviance(d, t, crit);
            if (v < best) {
                best = v;
                best_theta = t;
            }
        }
        double lo = best_theta / 1.26, hi = best_theta * 1.26;
        for (int it = 0; it < 200; ++it) {
            const double m1 = lo + (hi - lo) / 3.0;
            const double m2 = hi - (hi - lo) / 3.0;
            if (profiled_deviance(d, m1, crit) <
                profiled_deviance(d, m2, crit))
                hi = m2;
            else
                lo = m1;
        }
        const double oracle = profiled_deviance(d, (lo + hi) / 2.0, crit);
        CHECK(fit_dev <= oracle + 1e-6);
        CHECK(std::abs(fit_dev - oracle) < 1e-6);
    }
}

TEST_CASE("deviance at the chosen theta beats theta = 0 and theta = 1") {
    auto obs = balanced_obs(8, 0.8, 0.3, 13);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory};
    auto d = build_design(obs, spec);
    for (auto crit : {FitCriterion::ML, FitCriterion::REML}) {
        auto fit = fit_mixed(d, crit);
        const double at_fit = profiled_deviance(d, fit.theta, crit);
        CHECK(at_fit <= profiled_deviance(d, 0.0, crit) + 1e-9);
        CHECK(at_fit <= profiled_deviance(d, 1.0, crit) + 1e-9);
    }
}

TEST_CASE("wald tests: zero beta, the 1.96 quantile, degenerate se") {
    auto obs = balanced_obs(10, 0.0, 0.3, 17);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory};
    auto fit = fit_mixed(build_design(obs, spec), FitCriterion::REML);

    MixedModelFit fake = fit;
    fake.beta(1) = 0.0;
    auto tests = wald_tests(fake);
    CHECK(tests[1].p == 1.0);

    fake.beta(1) = 1.959964 * fake.se(1);
    tests = wald_tests(fake);
    CHECK_THAT(tests[1].p, Catch::Matchers::WithinAbs(0.05, 1e-4));

    fake.se(1) = 0.0;
    fake.beta(1) = 0.3;
    tests = wald_tests(fake);
    CHECK(tests[1].degenerate);
    CHECK(tests[1].p == 0.0);
}

TEST_CASE("chi-square tails match numeric integration") {
    CHECK_THAT(chi_square_sf(4.49, 1),
               Catch::Matchers::WithinAbs(chi2_tail_by_integration(4.49, 1),
                                          1e-6));
    // the documented reference pair: chi2(1) = 4.49 -> p = .034
    CHECK_THAT(chi_square_sf(4.49, 1),
               Catch::Matchers::WithinAbs(0.0341, 1e-3));
    CHECK_THAT(chi_square_sf(0.002, 1),
               Catch::Matchers::WithinAbs(chi2_tail_by_integration(0.002, 1),
                                          1e-6));
    CHECK_THAT(chi_square_sf(0.002, 1),
               Catch::Matchers::WithinAbs(0.97, 1e-2));
    // df = 2 has the closed form exp(-x/2)
    CHECK_THAT(chi_square_sf(3.4, 2),
               Catch::Matchers::WithinAbs(std::exp(-1.7), 1e-12));
    CHECK_THAT(chi_square_sf(7.7, 5),
               Catch::Matchers::WithinAbs(chi2_tail_by_integration(7.7, 5),
                                          1e-6));
}

TEST_CASE("likelihood-ratio test on nested fits") {
    auto obs = balanced_obs(12, 0.5, 0.3, 19);
    // inject a word-index effect so the full model wins
    for (auto& o : obs) o.surprisal_bits += 0.3 * o.word_index;
    RegressionSpec small;
    small.fixed_terms = {Term::WordCategory};
    RegressionSpec big;
    big.fixed_terms = {Term::WordCategory, Term::WordIndex};
    auto f_small = fit_mixed(build_design(obs, small), FitCriterion::ML);
    auto f_big = fit_mixed(build_design(obs, big), FitCriterion::ML);
    auto res = lrt(f_small, f_big);
    CHECK(res.df == 1);
    CHECK(res.chi2 > 0.0);
    CHECK(res.p_value < 0.05);
    CHECK_THAT(res.p_value,
               Catch::Matchers::WithinAbs(
                   chi2_tail_by_integration(res.chi2, 1), 1e-6));

    // identical fits: chi2 0, p 1
    auto same = lrt(f_small, f_small);
    CHECK(same.chi2 == 0.0);
    CHECK(same.p_value == 1.0);

    // REML fits are rejected
    auto f_reml = fit_mixed(build_design(obs, small), FitCriterion::REML);
    CHECK_THROWS_AS(lrt(f_reml, f_big), DataError);
    // non-nested specs are rejected
    RegressionSpec other;
    other.fixed_terms = {Term::WordIndex};
    auto f_other = fit_mixed(build_design(obs, other), FitCriterion::ML);
    CHECK_THROWS_AS(lrt(f_big, f_other), DataError);
}

TEST_CASE("fixed-effect correlations") {
    auto obs = balanced_obs(10, 0.4, 0.3, 23);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory};
    auto fit = fit_mixed(build_design(obs, spec), FitCriterion::REML);
    auto corr = fixed_corr(fit);
    for (Eigen::Index i = 0; i < corr.rows(); ++i)
        CHECK(corr(i, i) == 1.0);
    // balanced sum coding makes category orthogonal to the intercept
    CHECK_THAT(corr(0, 1), Catch::Matchers::WithinAbs(0.0, 1e-8));

    // collinear predictors show up as a strong beta correlation
    Rng rng(29);
    auto obs2 = balanced_obs(24, 0.0, 0.2, 31);
    for (auto& o : obs2) {
        const double cat =
            o.category == WordCategory::Experimental ? 1.0 : -1.0;
        o.freq_s = 0.99 * cat + 0.05 * rng.next_normal();
        o.freq_o = 0.0;
    }
    RegressionSpec spec2;
    spec2.fixed_terms = {Term::WordCategory, Term::FreqS};
    auto fit2 = fit_mixed(build_design(obs2, spec2), FitCriterion::ML);
    auto corr2 = fixed_corr(fit2);
    CHECK(std::abs(corr2(1, 2)) > 0.9);
}

TEST_CASE("flipping category labels negates only that coefficient") {
    auto obs = balanced_obs(9, 0.5, 0.3, 37);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory, Term::WordIndex};
    auto d1 = build_design(obs, spec);
    auto fit1 = fit_mixed(d1, FitCriterion::REML);
    for (auto& o : obs)
        o.category = o.category == WordCategory::Experimental
                         ? WordCategory::Control
                         : WordCategory::Experimental;
    auto fit2 = fit_mixed(build_design(obs, spec), FitCriterion::REML);
    CHECK_THAT(fit2.beta(1), Catch::Matchers::WithinAbs(-fit1.beta(1), 1e-10));
    CHECK_THAT(fit2.beta(0), Catch::Matchers::WithinAbs(fit1.beta(0), 1e-10));
    CHECK_THAT(fit2.beta(2), Catch::Matchers::WithinAbs(fit1.beta(2), 1e-10));
}

TEST_CASE("singular designs are rejected") {
    auto obs = balanced_obs(6, 0.2, 0.2, 41);
    // FreqS exactly duplicates the category column
    for (auto& o : obs)
        o.freq_s = o.category == WordCategory::Experimental ? 1.0 : -1.0;
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory, Term::FreqS};
    CHECK_THROWS_AS(fit_mixed(build_design(obs, spec), FitCriterion::ML),
                    NumericError);
}

TEST_CASE("fit report json carries the spec'd keys") {
    auto obs = balanced_obs(8, 0.4, 0.3, 43);
    RegressionSpec spec;
    spec.fixed_terms = {Term::WordCategory, Term::WordIndex};
    auto fit = fit_mixed(build_design(obs, spec), FitCriterion::REML);
    json j = fit_to_json(fit);
    for (const auto* key :
         {"terms", "beta", "se", "t", "p", "tau2", "sigma2", "deviance_ml",
          "deviance_reml", "fixed_corr", "n_obs", "n_items"})
        CHECK(j.contains(key));
    CHECK(j["n_obs"].get<int>() == 16);
    CHECK(j["n_items"].get<int>() == 8);
    CHECK(j["p_method"].get<std::string>() == kWaldMethod);
}
