#include "mecor/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mecor/stats.hpp"

namespace mecor {

namespace {

std::vector<Eigen::Index> free_indices(const std::vector<bool>& free) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < free.size(); ++i)
        if (free[i]) idx.push_back(static_cast<Eigen::Index>(i));
    return idx;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
    return out;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd out(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b)
            out(a, b) = m(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    return out;
}

void scatter(Eigen::VectorXd& full, const Eigen::VectorXd& part,
             const std::vector<Eigen::Index>& idx) {
    for (std::size_t k = 0; k < idx.size(); ++k) full[idx[k]] = part[static_cast<Eigen::Index>(k)];
}

double sup_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Inverse of -H when H is negative definite.
std::optional<Eigen::MatrixXd> neg_inverse(const Eigen::MatrixXd& h) {
    Eigen::LLT<Eigen::MatrixXd> llt(-h);
    if (llt.info() != Eigen::Success) return std::nullopt;
    return llt.solve(Eigen::MatrixXd::Identity(h.rows(), h.cols()));
}

}  // namespace

OptimResult maximize(const Objective& obj, const Eigen::VectorXd& start, const OptimOptions& opts) {
    return maximize(obj, start, std::vector<bool>(static_cast<std::size_t>(start.size()), true),
                    opts);
}

OptimResult maximize(const Objective& obj, const Eigen::VectorXd& start,
                     const std::vector<bool>& free, const OptimOptions& opts) {
    OptimResult res;
    const auto idx = free_indices(free);
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::VectorXd full = start;
    Eigen::VectorXd gfull(start.size());

    auto eval = [&](const Eigen::VectorXd& xf, Eigen::VectorXd& g) {
        Eigen::VectorXd w = full;
        scatter(w, xf, idx);
        const double v = obj.value(w, &gfull);
        ++res.evaluations;
        g = gather(gfull, idx);
        return v;
    };

    Eigen::VectorXd x = gather(start, idx);
    Eigen::VectorXd g(k);
    double f = eval(x, g);
    if (!std::isfinite(f)) {
        res.x = start;
        res.value = f;
        res.grad = gfull;
        res.trace.push_back("objective not finite at the starting point");
        return res;
    }

    Eigen::MatrixXd hinv;
    auto reset_hinv = [&] {
        Eigen::MatrixXd h;
        Eigen::VectorXd w = full;
        scatter(w, x, idx);
        if (obj.hessian(w, h)) {
            if (auto inv = neg_inverse(gather(h, idx))) {
                hinv = *inv;
                return;
            }
        }
        hinv = Eigen::MatrixXd::Identity(k, k) / std::max(1.0, sup_norm(g));
    };
    if (opts.initial_inverse_hessian && opts.initial_inverse_hessian->rows() == k)
        hinv = *opts.initial_inverse_hessian;
    else
        reset_hinv();

    int iter = 0;
    bool just_reset = false;
    for (; iter < opts.max_iter && sup_norm(g) >= opts.grad_tol; ++iter) {
        // Ascent direction for the maximization problem.
        Eigen::VectorXd p = hinv * g;
        if (!(g.dot(p) > 0.0)) {
            reset_hinv();
            p = hinv * g;
            if (!(g.dot(p) > 0.0)) p = g / std::max(1.0, sup_norm(g));
        }
        double step = 1.0;
        Eigen::VectorXd xn, gn(k);
        double fn = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        // Below the rounding noise of f, judge the step by the gradient.
        if (g.dot(p) < 1e-10 * (1.0 + std::abs(f))) {
            xn = x + p;
            fn = eval(xn, gn);
            accepted = std::isfinite(fn) && sup_norm(gn) < sup_norm(g);
        }
        for (int ls = 0; ls < 50 && !accepted; ++ls) {
            xn = x + step * p;
            fn = eval(xn, gn);
            if (std::isfinite(fn) && fn >= f + 1e-4 * step * g.dot(p)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (just_reset) {
                res.trace.push_back("line search failed after reset at iteration " +
                                    std::to_string(iter));
                break;
            }
            reset_hinv();
            just_reset = true;
            continue;
        }
        just_reset = false;
        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd yv = g - gn;  // gradient change of the minimization objective
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
            hinv = (I - rho * s * yv.transpose()) * hinv * (I - rho * yv * s.transpose()) +
                   rho * s * s.transpose();
        }
        x = xn;
        g = gn;
        f = fn;
    }

    // Newton polish with the analytic Hessian where available.
    for (int it = 0; it < opts.newton_polish && sup_norm(g) > 1e-3 * opts.grad_tol; ++it) {
        Eigen::MatrixXd h;
        Eigen::VectorXd w = full;
        scatter(w, x, idx);
        if (!obj.hessian(w, h)) break;
        const auto inv = neg_inverse(gather(h, idx));
        if (!inv) break;
        const Eigen::VectorXd p = (*inv) * g;
        Eigen::VectorXd xn, gn(k);
        double step = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 20; ++ls) {
            xn = x + step * p;
            const double fn = eval(xn, gn);
            if (std::isfinite(fn) && fn >= f - 1e-10 * (1.0 + std::abs(f)) &&
                sup_norm(gn) < sup_norm(g)) {
                x = xn;
                g = gn;
                f = fn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
    }

    scatter(full, x, idx);
    res.x = full;
    res.value = f;
    obj.value(full, &gfull);
    res.grad = gfull;
    res.iterations = iter;
    res.grad_norm = sup_norm(g);
    res.converged = res.grad_norm < opts.grad_tol;
    if (!res.converged) {
        std::ostringstream os;
        os << "stopped after " << iter << " iterations with gradient sup-norm " << res.grad_norm;
        res.trace.push_back(os.str());
    }
    return res;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& w, double rel_step) {
    Eigen::VectorXd g(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(w[i]));
        Eigen::VectorXd a = w, b = w;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

Eigen::MatrixXd numeric_hessian(const Objective& obj, const Eigen::VectorXd& w, double rel_step) {
    const Eigen::Index k = w.size();
    Eigen::MatrixXd h(k, k);
    Eigen::VectorXd ga(k), gb(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double step = rel_step * std::max(1.0, std::abs(w[i]));
        Eigen::VectorXd a = w, b = w;
        a[i] += step;
        b[i] -= step;
        obj.value(a, &ga);
        obj.value(b, &gb);
        h.col(i) = (ga - gb) / (2.0 * step);
    }
    return 0.5 * (h + h.transpose());
}

// ---------------------------------------------------------------------------

ProfileInterval profile_interval(const Objective& obj, const Eigen::VectorXd& mle,
                                 double max_value, Eigen::Index index, double se,
                                 const std::vector<bool>& free, const ProfileOptions& opts) {
    ProfileInterval out;
    out.level = opts.level;
    out.estimate = mle[index];
    const double drop = 0.5 * stats::chi_squared_quantile(opts.level, 1.0);
    const double target = max_value - drop;
    if (!(se > 0.0) || !std::isfinite(se)) se = std::max(1e-3, 1e-3 * std::abs(mle[index]));

    std::vector<bool> nuis = free;
    nuis[static_cast<std::size_t>(index)] = false;
    const auto nidx = free_indices(nuis);

    OptimOptions inner = opts.inner;
    {
        Eigen::MatrixXd h;
        if (obj.hessian(mle, h)) {
            if (auto inv = neg_inverse(gather(h, nidx))) inner.initial_inverse_hessian = *inv;
        }
    }

    // Profile value at b, warm-started from `warm`; updates warm to the optimum.
    auto profile = [&](double b, Eigen::VectorXd& warm) {
        Eigen::VectorXd start = warm;
        start[index] = b;
        OptimResult r = maximize(obj, start, nuis, inner);
        warm = r.x;
        return r.value;
    };

    for (int dir : {-1, +1}) {
        Eigen::VectorXd warm_in = mle;
        double b_in = mle[index];
        double h_in = max_value - target;
        double b_out = b_in, h_out = 0.0;
        Eigen::VectorXd warm_out;
        bool bracketed = false;
        double dist = se;
        while (dist <= opts.max_se_multiple * se) {
            const double b = mle[index] + dir * dist;
            Eigen::VectorXd warm = warm_in;
            const double hv = profile(b, warm) - target;
            if (hv < 0.0) {
                b_out = b;
                h_out = hv;
                warm_out = warm;
                bracketed = true;
                break;
            }
            b_in = b;
            h_in = hv;
            warm_in = warm;
            dist *= 2.0;
        }
        if (!bracketed) {
            const double bound = mle[index] + dir * opts.max_se_multiple * se;
            if (dir < 0) {
                out.lower = bound;
                out.lower_open = true;
            } else {
                out.upper = bound;
                out.upper_open = true;
            }
            continue;
        }
        // Illinois false position on h(b) = profile(b) - target, with a
        // bisection step whenever the bracket fails to halve.
        int side = 0;
        double prev_width = std::abs(b_out - b_in);
        for (int it = 0; it < 100 && std::abs(b_out - b_in) > opts.tol * se; ++it) {
            double b = b_in - h_in * (b_out - b_in) / (h_out - h_in);
            if (!(std::isfinite(b)) || (b - b_in) * (b - b_out) >= 0.0) b = 0.5 * (b_in + b_out);
            if (it % 3 == 2 && std::abs(b_out - b_in) > 0.5 * prev_width) b = 0.5 * (b_in + b_out);
            if (it % 3 == 2) prev_width = std::abs(b_out - b_in);
            Eigen::VectorXd warm = warm_in;
            const double hv = profile(b, warm) - target;
            if (std::abs(hv) < 1e-10) {
                b_in = b_out = b;
                break;
            }
            if (hv > 0.0) {
                b_in = b;
                h_in = hv;
                warm_in = warm;
                if (side == 1) h_out *= 0.5;
                side = 1;
            } else {
                b_out = b;
                h_out = hv;
                if (side == -1) h_in *= 0.5;
                side = -1;
            }
        }
        const double root = 0.5 * (b_in + b_out);
        if (dir < 0)
            out.lower = root;
        else
            out.upper = root;
    }
    return out;
}

}  // namespace mecor
