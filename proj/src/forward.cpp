#include "modepeel/forward.hpp"

#include <cmath>

#include "modepeel/util.hpp"

namespace modepeel::forward {

double WindowFn::operator()(double u) const {
    const double a = std::abs(u);
    if (a > 1.0) return 0.0;
    switch (kind) {
        case Kind::rectangular:
            return 1.0;
        case Kind::raised_cosine:
            return 0.5 * (1.0 + std::cos(M_PI * u));
        case Kind::gaussian: {
            const double s = u * gauss_nsigma;
            return std::exp(-0.5 * s * s);
        }
    }
    return 0.0;
}

double SpectrumGrid::half_width() const {
    return 0.5 * (omega(omega.size() - 1) - omega(0));
}

double SpectrumGrid::center() const {
    return 0.5 * (omega(omega.size() - 1) + omega(0));
}

void SpectrumGrid::validate() const {
    modes.validate();
    const int m = static_cast<int>(omega.size());
    if (m < 2) throw Error("SpectrumGrid: need at least two points");
    if (static_cast<int>(r.size()) != m)
        throw Error("SpectrumGrid: value/grid size mismatch");
    const double step = omega(1) - omega(0);
    if (!(step > 0)) throw Error("SpectrumGrid: grid must be increasing");
    for (int i = 1; i < m; ++i)
        if (std::abs(omega(i) - omega(i - 1) - step) >
            1e-6 * std::abs(step))
            throw Error("SpectrumGrid: grid must be uniform");
    for (const Mat& x : r) {
        if (x.rows() != modes.p || x.cols() != modes.p)
            throw Error("SpectrumGrid: matrix size mismatch");
        if (!x.allFinite())
            throw NonFiniteError("SpectrumGrid: non-finite spectrum");
    }
}

double principal_half_width(double n0, double dx, double c0) {
    if (!(n0 > 0) || !(dx > 0)) throw Error("principal_half_width: bad input");
    return M_PI * c0 / (2.0 * n0 * dx);
}

RVec make_grid(double center, double half_width, int m) {
    if (m < 2 || !(half_width > 0)) throw Error("make_grid: bad parameters");
    return RVec::LinSpaced(m, center - half_width, center + half_width);
}

BlockMatrix2P structure_transfer(const std::vector<Layer>& layers,
                                 const ModeSet& modes, double w) {
    modes.validate();
    BlockMatrix2P acc = BlockMatrix2P::identity_transfer(modes.p);
    const Vec beta = modes.phase_rates(w);
    for (const Layer& l : layers) {
        std::vector<core::BlockMatrix2P> pair{acc,
                                              core::layer_transfer(l, beta)};
        acc = core::compose(pair);
    }
    return acc;
}

double min_delay(const ModeSet& modes, double dx) {
    return modes.n.minCoeff() * dx / modes.c0;
}

double bandwidth_margin(const SpectrumGrid& spec, double dx) {
    return spec.half_width() * min_delay(spec.modes, dx);
}

SpectrumGrid simulate_reflection(const std::vector<Layer>& layers,
                                 const ModeSet& modes, const RVec& grid,
                                 int threads) {
    modes.validate();
    const int p = modes.p;
    const int nl = static_cast<int>(layers.size());
    const int m = static_cast<int>(grid.size());
    if (m < 1) throw Error("simulate_reflection: empty grid");
    for (const Layer& l : layers) {
        l.validate();
        if (l.rho.rows() != p)
            throw Error("simulate_reflection: layer size mismatch");
    }

    // Frequency-independent per-layer factors:
    //   T(w) = diag(Z^-1, Z) * [[K, -K Ups*], [-K* Ups, K*]],
    //   K = t^-1* Phi,  Ups = Phi^T rho Phi,  Z^-1 = exp(i beta dx).
    struct Fac {
        Mat a11, a12, a21, a22;
        double dx;
    };
    std::vector<Fac> fac(nl);
    for (int j = 0; j < nl; ++j) {
        const Layer& l = layers[j];
        const Mat k = l.t_inv().conjugate() * l.phi;
        const Mat ups = l.upsilon();
        fac[j].a11 = k;
        fac[j].a12 = -k * ups.conjugate();
        fac[j].a21 = -k.conjugate() * ups;
        fac[j].a22 = k.conjugate();
        fac[j].dx = l.dx;
    }

    SpectrumGrid out;
    out.modes = modes;
    out.omega = grid;
    out.r.assign(m, Mat());

    util::parallel_for(m, threads, [&](int begin, int end) {
        Mat top(p, 2 * p), bot(p, 2 * p), ntop(p, 2 * p), nbot(p, 2 * p);
        Vec zinv(p);
        for (int i = begin; i < end; ++i) {
            const double w = grid(i);
            const Vec beta = modes.phase_rates(w);
            top.setZero();
            bot.setZero();
            top.leftCols(p).setIdentity();
            bot.rightCols(p).setIdentity();
            double last_dx = -1.0;
            for (int j = 0; j < nl; ++j) {
                const Fac& f = fac[j];
                if (f.dx != last_dx) {
                    for (int q = 0; q < p; ++q)
                        zinv(q) = std::exp(cx(0, 1) * beta(q) * f.dx);
                    last_dx = f.dx;
                }
                ntop.noalias() = f.a11 * top;
                ntop.noalias() += f.a12 * bot;
                nbot.noalias() = f.a21 * top;
                nbot.noalias() += f.a22 * bot;
                for (int q = 0; q < p; ++q) {
                    ntop.row(q) *= zinv(q);
                    nbot.row(q) *= 1.0 / zinv(q);
                }
                top.swap(ntop);
                bot.swap(nbot);
            }
            // R = -T22^{-1} T21; for a passive structure sigma_min(T22) >= 1,
            // so a plain LU solve is safe.
            Mat r = -bot.rightCols(p).partialPivLu().solve(bot.leftCols(p));
            if (!r.allFinite())
                throw NonFiniteError("simulate_reflection: solve failed");
            out.r[i] = std::move(r);
        }
    });
    return out;
}

Mat zeroth_impulse_weight(const SpectrumGrid& spec, const WindowFn& window) {
    spec.validate();
    const int m = static_cast<int>(spec.omega.size());
    const double c = spec.center();
    const double hw = spec.half_width();
    Mat acc = Mat::Zero(spec.modes.p, spec.modes.p);
    double mass = 0.0;
    for (int i = 0; i < m; ++i) {
        const double trap = (i == 0 || i == m - 1) ? 0.5 : 1.0;
        const double wgt = trap * window((spec.omega(i) - c) / hw);
        if (wgt == 0.0) continue;
        acc += wgt * spec.r[i];
        mass += wgt;
    }
    if (!(mass > 1e-12 * m))
        throw DegenerateWindowError("zeroth_impulse_weight: window mass ~ 0");
    return acc / mass;
}

std::vector<Mat> impulse_response(const SpectrumGrid& spec,
                                  const WindowFn& window, const RVec& times) {
    spec.validate();
    const int m = static_cast<int>(spec.omega.size());
    const int p = spec.modes.p;
    const double c = spec.center();
    const double hw = spec.half_width();
    const double dw = (spec.omega(m - 1) - spec.omega(0)) / (m - 1);
    std::vector<Mat> h(times.size(), Mat::Zero(p, p));
    for (int k = 0; k < static_cast<int>(times.size()); ++k) {
        Mat acc = Mat::Zero(p, p);
        for (int i = 0; i < m; ++i) {
            const double trap = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            const double wgt = trap * window((spec.omega(i) - c) / hw);
            if (wgt == 0.0) continue;
            acc += (wgt * std::exp(cx(0, -spec.omega(i) * times(k)))) *
                   spec.r[i];
        }
        h[k] = acc * (dw / (2.0 * M_PI));
    }
    return h;
}

}  // namespace modepeel::forward
