#include "glvm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "glvm/errors.hpp"
#include "glvm/parallel.hpp"
#include "glvm/rng.hpp"
#include "glvm/stats.hpp"

namespace glvm {

namespace {

using nlohmann::json;

constexpr double kUnset = SimMetrics::unset;

// Scalar metric fields in one fixed order for persistence and aggregation.
struct ScalarField {
    const char* key;
    double SimMetrics::*member;
};
constexpr ScalarField kScalars[] = {
    {"type1", &SimMetrics::type1},
    {"power", &SimMetrics::power},
    {"mse_B", &SimMetrics::mse_B},
    {"coverage", &SimMetrics::coverage},
    {"align_err_U", &SimMetrics::align_err_U},
    {"align_err_Gamma", &SimMetrics::align_err_Gamma},
    {"beta_err_signal", &SimMetrics::beta_err_signal},
    {"pivot", &SimMetrics::pivot},
};

}  // namespace

std::vector<Cell> SimConfig::resolved_signal_cells() const {
    if (!signal_cells.empty()) return signal_cells;
    std::vector<Cell> cells;
    const Eigen::Index items = std::min<Eigen::Index>(J, 10);
    const Eigen::Index covs = std::min<Eigen::Index>(s, 10);
    for (Eigen::Index j = 0; j < items; ++j)
        for (Eigen::Index l = 0; l < covs; ++l) cells.push_back({j, l});
    return cells;
}

std::vector<Cell> SimConfig::resolved_null_cells() const {
    if (!null_cells.empty()) return null_cells;
    std::vector<Cell> cells;
    const Eigen::Index start =
        std::max<Eigen::Index>(J, static_cast<Eigen::Index>(std::llround(50.0 * q / 300.0)));
    const Eigen::Index stop = std::min<Eigen::Index>(start + 10, q);
    const Eigen::Index covs = std::min<Eigen::Index>(p, 10);
    for (Eigen::Index j = start; j < stop; ++j)
        for (Eigen::Index l = 0; l < covs; ++l) cells.push_back({j, l});
    return cells;
}

void SimConfig::validate() const {
    if (n < 2 || q < 1 || p < 1) throw UsageError("simulation needs n >= 2, q >= 1, p >= 1");
    if (K < 0) throw UsageError("latent dimension must be nonnegative");
    if (!(rho >= 0.0 && rho < 1.0)) throw UsageError("rho must lie in [0, 1)");
    if (J < 0 || J > q) throw UsageError("signal item count must lie in [0, q]");
    if (s < 0 || s > p) throw UsageError("signal covariate count must lie in [0, p]");
    if (reps < 1) throw UsageError("reps must be positive");
    Family::from_key(family);
    for (const Cell& c : resolved_signal_cells()) {
        if (c.first < 0 || c.first >= q || c.second < 0 || c.second >= p)
            throw UsageError("signal cell out of range");
        if (c.first >= J || c.second >= s) throw UsageError("signal cell outside the true support");
    }
    for (const Cell& c : resolved_null_cells()) {
        if (c.first < 0 || c.first >= q || c.second < 0 || c.second >= p)
            throw UsageError("null cell out of range");
        if (c.first < J && c.second < s) throw UsageError("null cell inside the true support");
    }
    if (null_cells.empty() && resolved_null_cells().empty())
        throw UsageError("no room for the default null cells; set them explicitly");
}

MatrixXd ar1_covariance(Eigen::Index d, double rho) {
    MatrixXd sigma(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) sigma(a, b) = std::pow(rho, std::abs(a - b));
    return sigma;
}

SimDraw generate(const SimConfig& cfg, std::uint64_t rep_index) {
    cfg.validate();
    Rng rng = Rng::stream(cfg.seed, rep_index);
    const Eigen::Index n = cfg.n, q = cfg.q, p = cfg.p, k = cfg.K;
    const double carry = cfg.rho;
    const double fresh = std::sqrt(1.0 - cfg.rho * cfg.rho);

    // Stationary AR(1) over the p + K coordinates of each row, covariates
    // first, exact for the rho^|a-b| covariance.
    MatrixXd x(n, p), u(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        double prev = 0.0;
        for (Eigen::Index a = 0; a < p + k; ++a) {
            double v = (a == 0) ? rng.normal() : carry * prev + fresh * rng.normal();
            (a < p ? x(i, a) : u(i, a - p)) = v;
            prev = v;
        }
    }

    ParamSet truth = ParamSet::zeros(n, q, p, cfg.K);
    truth.beta0.setConstant(cfg.intercept);
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index c = 0; c < k; ++c) truth.Gamma(j, c) = rng.normal();
    for (Eigen::Index j = 0; j < cfg.J; ++j)
        for (Eigen::Index l = 0; l < cfg.s; ++l) truth.B(j, l) = rng.uniform(cfg.a, cfg.a + 0.5);
    truth.U = u;

    Family fam = Family::from_key(cfg.family);
    DataSet data;
    data.X = std::move(x);
    data.mask = ArrayXXd::Ones(n, q);
    data.families.assign(static_cast<std::size_t>(q), fam);
    data.Y.resize(n, q);
    MatrixXd w = ((data.X * truth.B.transpose() + truth.U * truth.Gamma.transpose()).rowwise() +
                  truth.beta0.transpose());
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index i = 0; i < n; ++i) data.Y(i, j) = fam.draw(w(i, j), rng);
    data.validate();
    return {std::move(data), std::move(truth)};
}

AlignResult align(const MatrixXd& u_hat, const MatrixXd& u_true) {
    if (u_hat.rows() != u_true.rows() || u_hat.cols() != u_true.cols())
        throw UsageError("alignment inputs disagree in shape");
    const Eigen::Index n = u_hat.rows(), k = u_hat.cols();
    AlignResult out;
    out.G = MatrixXd::Identity(k, k);
    if (k == 0 || n == 0) return out;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(u_hat);
    if (qr.rank() < k) throw DataError("latent score matrix is rank deficient");
    out.G = qr.solve(u_true).transpose();
    out.err = (u_hat * out.G.transpose() - u_true).norm() / std::sqrt(static_cast<double>(n));
    return out;
}

double align_loadings(const MatrixXd& gamma_hat, const MatrixXd& gamma_true, const MatrixXd& G) {
    if (gamma_hat.rows() != gamma_true.rows() || gamma_hat.cols() != gamma_true.cols())
        throw UsageError("alignment inputs disagree in shape");
    if (G.rows() != gamma_hat.cols() || G.cols() != gamma_hat.cols())
        throw UsageError("alignment matrix does not match the loadings");
    const Eigen::Index q = gamma_hat.rows(), k = gamma_hat.cols();
    if (k == 0 || q == 0) return 0.0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(G.transpose());
    if (!qr.isInvertible()) throw NumericalError("alignment matrix is not invertible");
    MatrixXd mapped = qr.solve(gamma_hat.transpose()).transpose();
    return (mapped - gamma_true).norm() / std::sqrt(static_cast<double>(q));
}

SimMetrics evaluate(const SimConfig& cfg, const std::vector<DebiasTarget>& targets,
                    const ScreenResult& sr, const ParamSet& fitted, const ParamSet& truth) {
    if (sr.reports.size() != targets.size() || sr.errors.size() != targets.size() ||
        sr.flagged.size() != targets.size())
        throw UsageError("screen results disagree with the target list");
    if (fitted.B.rows() != truth.B.rows() || fitted.B.cols() != truth.B.cols())
        throw DataError("fitted and true effect matrices disagree in shape");
    if (truth.B.rows() != cfg.q || truth.B.cols() != cfg.p)
        throw DataError("true effects disagree with the config dimensions");

    SimMetrics m;
    m.rejections = ArrayXXd::Constant(cfg.q, cfg.p, kUnset);
    std::map<Cell, std::size_t> tested;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (!sr.errors[t].empty()) {
            ++m.failed_targets;
            continue;
        }
        tested[{targets[t].item, targets[t].covariate}] = t;
        m.rejections(targets[t].item, targets[t].covariate) = sr.flagged[t] ? 1.0 : 0.0;
    }

    auto rate_over = [&](const std::vector<Cell>& cells, auto&& value) {
        double sum = 0.0;
        int count = 0;
        for (const Cell& c : cells) {
            auto it = tested.find(c);
            if (it == tested.end()) continue;
            sum += value(it->second, c);
            ++count;
        }
        return count > 0 ? sum / count : kUnset;
    };
    auto rejected = [&](std::size_t t, const Cell&) { return sr.flagged[t] ? 1.0 : 0.0; };
    auto covered = [&](std::size_t t, const Cell& c) {
        double b = truth.B(c.first, c.second);
        return (sr.reports[t].ci_low <= b && b <= sr.reports[t].ci_high) ? 1.0 : 0.0;
    };
    const std::vector<Cell> signal = cfg.resolved_signal_cells();
    const std::vector<Cell> null_cells = cfg.resolved_null_cells();
    m.type1 = rate_over(null_cells, rejected);
    m.power = rate_over(signal, rejected);
    m.coverage = rate_over(signal, covered);

    m.mse_B = (fitted.B - truth.B).squaredNorm() / static_cast<double>(cfg.q * cfg.p);
    if (cfg.J > 0) {
        std::vector<double> errs;
        for (Eigen::Index j = 0; j < cfg.J; ++j)
            errs.push_back((fitted.B.row(j) - truth.B.row(j)).norm());
        m.beta_err_signal = median(std::move(errs));
    }
    if (fitted.K() > 0 && fitted.K() == truth.K()) {
        AlignResult al = align(fitted.U, truth.U);
        m.align_err_U = al.err;
        m.align_err_Gamma = align_loadings(fitted.Gamma, truth.Gamma, al.G);
    }
    if (!signal.empty()) {
        auto it = tested.find(signal.front());
        if (it != tested.end() && sr.reports[it->second].se > 0.0) {
            const DebiasReport& r = sr.reports[it->second];
            m.pivot = (r.beta_tilde - truth.B(signal.front().first, signal.front().second)) / r.se;
        }
    }
    return m;
}

namespace {

json scalar_or_null(double v) { return std::isnan(v) ? json() : json(v); }
double scalar_or_nan(const json& v) { return v.is_null() ? kUnset : v.get<double>(); }

/// Everything that changes the numbers of one replicate. Resume only trusts
/// a persisted file whose fingerprint matches exactly.
json run_fingerprint(const SimConfig& cfg, SimMethod method, const GridOptions& opt,
                     double lambda, double lambda_prime) {
    json cells_sig = json::array(), cells_null = json::array();
    for (const Cell& c : cfg.resolved_signal_cells()) cells_sig.push_back({c.first, c.second});
    for (const Cell& c : cfg.resolved_null_cells()) cells_null.push_back({c.first, c.second});
    return json{{"n", cfg.n},
                {"q", cfg.q},
                {"p", cfg.p},
                {"K", cfg.K},
                {"rho", cfg.rho},
                {"a", cfg.a},
                {"J", cfg.J},
                {"s", cfg.s},
                {"intercept", cfg.intercept},
                {"family", cfg.family},
                {"seed", cfg.seed},
                {"signal_cells", cells_sig},
                {"null_cells", cells_null},
                {"method", method == SimMethod::Latent ? "latent" : "baseline"},
                {"lambda", lambda},
                {"lambda_prime", lambda_prime},
                {"alpha", opt.alpha},
                {"bonferroni", opt.correction == Correction::Bonferroni},
                {"m1", opt.fit.m1},
                {"m2", opt.fit.m2},
                {"max_outer", opt.fit.max_outer},
                {"tol_outer", opt.fit.tol_outer},
                {"box_D", opt.fit.box_D},
                {"backtracking", opt.fit.step_rule == StepRule::Backtracking},
                {"debias_m1", opt.debias.m1},
                {"score_at_null", opt.debias.score_at_null}};
}

std::filesystem::path rep_path(const std::string& out_dir, const json& fingerprint,
                               std::uint64_t rep) {
    std::size_t h = std::hash<std::string>{}(fingerprint.dump());
    std::ostringstream name;
    name << "sim_" << std::hex << h << std::dec << "_rep" << rep << ".json";
    return std::filesystem::path(out_dir) / name.str();
}

void write_rep(const std::filesystem::path& path, const json& fingerprint, std::uint64_t rep,
               const SimMetrics& m) {
    json tested = json::array();
    for (Eigen::Index j = 0; j < m.rejections.rows(); ++j)
        for (Eigen::Index l = 0; l < m.rejections.cols(); ++l)
            if (!std::isnan(m.rejections(j, l)))
                tested.push_back({j, l, m.rejections(j, l) > 0.5 ? 1 : 0});
    json doc{{"config", fingerprint}, {"rep", rep}, {"failed_targets", m.failed_targets},
             {"tested", tested}};
    for (const ScalarField& f : kScalars) doc[f.key] = scalar_or_null(m.*(f.member));
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc.dump() << "\n";
}

std::optional<SimMetrics> load_rep(const std::filesystem::path& path, const json& fingerprint,
                                   Eigen::Index q, Eigen::Index p) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json doc;
    try {
        in >> doc;
    } catch (const json::exception&) {
        return std::nullopt;
    }
    if (!doc.contains("config") || doc["config"] != fingerprint) return std::nullopt;
    SimMetrics m;
    try {
        for (const ScalarField& f : kScalars) m.*(f.member) = scalar_or_nan(doc.at(f.key));
        m.failed_targets = doc.at("failed_targets").get<int>();
        m.rejections = ArrayXXd::Constant(q, p, kUnset);
        for (const json& cell : doc.at("tested")) {
            auto j = cell.at(0).get<Eigen::Index>();
            auto l = cell.at(1).get<Eigen::Index>();
            if (j < 0 || j >= q || l < 0 || l >= p) return std::nullopt;
            m.rejections(j, l) = cell.at(2).get<int>() > 0 ? 1.0 : 0.0;
        }
    } catch (const json::exception&) {
        return std::nullopt;
    }
    return m;
}

double slot_mean(const std::vector<const SimMetrics*>& reps, double SimMetrics::*f) {
    double sum = 0.0;
    int count = 0;
    for (const SimMetrics* m : reps) {
        double v = m->*f;
        if (std::isnan(v)) continue;
        sum += v;
        ++count;
    }
    return count > 0 ? sum / count : kUnset;
}

double slot_se(const std::vector<const SimMetrics*>& reps, double SimMetrics::*f, double mean) {
    if (std::isnan(mean)) return kUnset;
    double ss = 0.0;
    int count = 0;
    for (const SimMetrics* m : reps) {
        double v = m->*f;
        if (std::isnan(v)) continue;
        ss += (v - mean) * (v - mean);
        ++count;
    }
    if (count < 2) return kUnset;
    return std::sqrt(ss / (count - 1)) / std::sqrt(static_cast<double>(count));
}

}  // namespace

std::vector<SimRow> run_grid(const std::vector<SimConfig>& cfgs, SimMethod method,
                             const GridOptions& opt) {
    if (cfgs.empty()) throw UsageError("no configurations to run");
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
    for (const SimConfig& cfg : cfgs) {
        cfg.validate();
        if (method == SimMethod::Latent && cfg.K < 1)
            throw UsageError("the latent method needs K >= 1");
    }
    const bool persist = !opt.out_dir.empty();
    if (persist) std::filesystem::create_directories(opt.out_dir);

    std::vector<SimRow> rows;
    for (const SimConfig& cfg : cfgs) {
        SimRow row;
        row.cfg = cfg;
        row.method = method;

        std::vector<DebiasTarget> targets;
        for (const Cell& c : cfg.resolved_signal_cells()) targets.push_back({c.first, c.second});
        for (const Cell& c : cfg.resolved_null_cells()) targets.push_back({c.first, c.second});

        // Pilot phase: the first replicate's data picks one penalty (and,
        // under lambda_prime_cv, one decorrelation penalty) for the whole
        // study. Both methods cross-validate lambda the same way, the
        // latent method at its own K.
        const bool need_pilot = !opt.fit.lambda || (!opt.lambda_prime && opt.lambda_prime_cv);
        std::optional<SimDraw> pilot;
        if (need_pilot) pilot.emplace(generate(cfg, 0));
        if (opt.fit.lambda) {
            row.lambda = *opt.fit.lambda;
        } else {
            FitConfig cvcfg = opt.fit;
            cvcfg.lambda.reset();
            cvcfg.threads = 1;
            const int cv_k = method == SimMethod::Latent ? cfg.K : 0;
            row.lambda = cross_validate(pilot->data, cv_k, cvcfg).lambda_star;
        }
        if (opt.lambda_prime) {
            row.lambda_prime = *opt.lambda_prime;
        } else if (opt.lambda_prime_cv) {
            FitConfig fc = opt.fit;
            fc.lambda = row.lambda;
            fc.threads = 1;
            FitResult pilot_fit =
                method == SimMethod::Latent
                    ? fit_model(pilot->data, cfg.K, fc)
                    : fit_baseline(pilot->data, row.lambda, fc.resolved_m1(cfg.n), fc.step_rule, 1);
            row.lambda_prime = cv_lambda_prime(pilot->data, pilot_fit, targets, opt.debias);
        } else {
            row.lambda_prime = default_lambda_prime(static_cast<double>(cfg.n), cfg.q, cfg.p,
                                                    std::min<Eigen::Index>(cfg.s, cfg.p));
        }
        pilot.reset();

        const json fingerprint = run_fingerprint(cfg, method, opt, row.lambda, row.lambda_prime);
        std::vector<std::optional<SimMetrics>> results(static_cast<std::size_t>(cfg.reps));
        std::vector<std::string> errors(static_cast<std::size_t>(cfg.reps));

        parallel_for(cfg.reps, opt.threads, [&](std::ptrdiff_t r) {
            const auto rep = static_cast<std::uint64_t>(r);
            const auto slot = static_cast<std::size_t>(r);
            try {
                if (persist) {
                    auto cached = load_rep(rep_path(opt.out_dir, fingerprint, rep), fingerprint,
                                           cfg.q, cfg.p);
                    if (cached) {
                        results[slot] = std::move(*cached);
                        return;
                    }
                }
                SimDraw draw = generate(cfg, rep);
                FitResult fit;
                if (method == SimMethod::Latent) {
                    FitConfig fc = opt.fit;
                    fc.lambda = row.lambda;
                    fc.threads = 1;  // replicates already fill the cores
                    fit = fit_model(draw.data, cfg.K, fc);
                } else {
                    fit = fit_baseline(draw.data, row.lambda, opt.fit.resolved_m1(cfg.n),
                                       opt.fit.step_rule, 1);
                }
                ScreenResult sr = screen(draw.data, fit, targets, row.lambda_prime, opt.alpha,
                                         opt.correction, opt.debias, 1);
                SimMetrics m = evaluate(cfg, targets, sr, fit.params, draw.truth);
                if (persist) write_rep(rep_path(opt.out_dir, fingerprint, rep), fingerprint, rep, m);
                results[slot] = std::move(m);
            } catch (const std::exception& e) {
                errors[slot] = e.what();
            }
        });

        std::vector<const SimMetrics*> ok;
        ArrayXXd reject_sum = ArrayXXd::Zero(cfg.q, cfg.p);
        ArrayXXd reject_count = ArrayXXd::Zero(cfg.q, cfg.p);
        for (std::size_t r = 0; r < results.size(); ++r) {
            if (!errors[r].empty()) {
                ++row.reps_failed;
                row.failures.push_back("rep " + std::to_string(r) + ": " + errors[r]);
                continue;
            }
            const SimMetrics& m = *results[r];
            ok.push_back(&m);
            for (Eigen::Index j = 0; j < cfg.q; ++j)
                for (Eigen::Index l = 0; l < cfg.p; ++l)
                    if (!std::isnan(m.rejections(j, l))) {
                        reject_sum(j, l) += m.rejections(j, l);
                        reject_count(j, l) += 1.0;
                    }
        }
        row.reps_done = static_cast<int>(ok.size());
        for (const ScalarField& f : kScalars) {
            double mean = slot_mean(ok, f.member);
            row.mean.*(f.member) = mean;
            row.se.*(f.member) = slot_se(ok, f.member, mean);
        }
        for (const SimMetrics* m : ok) row.mean.failed_targets += m->failed_targets;
        row.mean.rejections = ArrayXXd::Constant(cfg.q, cfg.p, kUnset);
        for (Eigen::Index j = 0; j < cfg.q; ++j)
            for (Eigen::Index l = 0; l < cfg.p; ++l)
                if (reject_count(j, l) > 0.0)
                    row.mean.rejections(j, l) = reject_sum(j, l) / reject_count(j, l);
        if (opt.keep_reps) {
            row.per_rep.resize(results.size());
            for (std::size_t r = 0; r < results.size(); ++r)
                if (errors[r].empty()) row.per_rep[r] = std::move(*results[r]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace glvm
