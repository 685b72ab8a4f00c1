#include "modepeel/matfact.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <unsupported/Eigen/MatrixFunctions>

namespace modepeel::matfact {

namespace {

void require_square_finite(const Mat& a, const char* who) {
    if (a.rows() != a.cols())
        throw Error(std::string(who) + ": matrix must be square");
    if (!a.allFinite())
        throw NonFiniteError(std::string(who) + ": non-finite entries");
}

// Canonical +/-1 row signs: largest-magnitude entry of each row gets Re > 0,
// exact Re = 0 resolves toward +Im.  Only sign flips are allowed here (a row
// phase e^{i phi} would change U^T Sigma U unless phi in {0, pi}).
void canonicalize_row_signs(Mat& u) {
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        Eigen::Index jmax = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
            const double m = std::abs(u(r, j));
            if (m > best + 1e-15) {
                best = m;
                jmax = j;
            }
        }
        const cx s = u(r, jmax);
        const bool flip = (s.real() < 0.0) ||
                          (s.real() == 0.0 && s.imag() < 0.0);
        if (flip) u.row(r) = -u.row(r);
    }
}

}  // namespace

TakagiResult takagi(const Mat& a, double zero_rel, double degen_rel) {
    require_square_finite(a, "takagi");
    const int p = static_cast<int>(a.rows());

    const double anorm = a.norm();
    const double asym = (a - a.transpose()).norm();
    if (asym > tol::sym * std::max(1.0, anorm))
        throw AsymmetricInputError("takagi: input not symmetric (defect " +
                                   std::to_string(asym) + ")");
    const Mat s = 0.5 * (a + a.transpose());

    // Real-symmetric doubling: for A = X + iY the matrix M = [[X, Y],[Y, -X]]
    // is symmetric with spectrum {+/- sigma_k}; an eigenpair (sigma, [u; v])
    // with sigma > 0 yields the con-eigenvector w = u + iv, A w* = sigma w.
    // This route is backward stable for clustered singular values, where the
    // textbook SVD construction loses accuracy to cross-block coupling.
    RMat m2(2 * p, 2 * p);
    const RMat x = s.real(), y = s.imag();
    m2.topLeftCorner(p, p) = x;
    m2.topRightCorner(p, p) = y;
    m2.bottomLeftCorner(p, p) = y;
    m2.bottomRightCorner(p, p) = -x;

    Eigen::SelfAdjointEigenSolver<RMat> es(m2);
    if (es.info() != Eigen::Success)
        throw Error("takagi: eigensolver failed");
    const RVec lam = es.eigenvalues();  // ascending
    const RMat q = es.eigenvectors();

    const double sig_max = lam.cwiseAbs().maxCoeff();
    const double eps_sv = p * sig_max * 1e-12;

    // Partition the spectrum into balanced (+,-) halves and a zero cluster.
    std::vector<int> idx(2 * p);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<int> pos, neg, zer;
    for (int k : idx) {
        if (lam(k) > eps_sv)
            pos.push_back(k);
        else if (lam(k) < -eps_sv)
            neg.push_back(k);
        else
            zer.push_back(k);
    }
    // The +/- symmetry of the doubled spectrum can be broken at the threshold
    // boundary by roundoff; demote boundary values until counts balance.
    auto smallest_abs = [&](std::vector<int>& v) {
        auto it = std::min_element(v.begin(), v.end(), [&](int i, int j) {
            return std::abs(lam(i)) < std::abs(lam(j));
        });
        int k = *it;
        v.erase(it);
        return k;
    };
    while (pos.size() != neg.size()) {
        if (pos.size() > neg.size())
            zer.push_back(smallest_abs(pos));
        else
            zer.push_back(smallest_abs(neg));
    }
    const int nz = static_cast<int>(pos.size());

    // Nonzero part: one con-eigenvector per positive eigenvalue, descending.
    std::sort(pos.begin(), pos.end(),
              [&](int i, int j) { return lam(i) > lam(j); });
    Mat w(p, p);
    RVec sigma = RVec::Zero(p);
    for (int c = 0; c < nz; ++c) {
        const int k = pos[c];
        w.col(c) = q.col(k).head(p) + cx(0, 1) * q.col(k).tail(p);
        sigma(c) = lam(k);
    }

    // Zero cluster: the 2z-dimensional real null space is invariant under
    // J[u; v] = [v; -u] (J^2 = -I, exactly antisymmetric, so <e, Je> = 0).
    // Pairing each basis vector with its J image collapses the space to z
    // complex con-eigenvectors; both members of a pair map to the same
    // complex direction (J e ~ -i w_e), so each pair emits one column.
    if (!zer.empty()) {
        const int zdim = static_cast<int>(zer.size());  // == 2 * (p - nz)
        RMat b(2 * p, zdim);
        for (int c = 0; c < zdim; ++c) b.col(c) = q.col(zer[c]);
        int remaining = zdim;
        int out = nz;
        while (remaining >= 2) {
            RVec e = b.col(0);
            e.normalize();
            RVec je(2 * p);
            je.head(p) = e.tail(p);
            je.tail(p) = -e.head(p);
            // Project J e back onto the working span (the computed null space
            // is J-invariant only to roundoff).
            RVec f = b.leftCols(remaining) *
                     (b.leftCols(remaining).transpose() * je);
            f -= e * e.dot(f);
            if (f.norm() < 0.5) {
                // Degenerate projection fallback: use J e directly; the final
                // Loewdin polish restores orthonormality.
                f = je;
                f -= e * e.dot(f);
            }
            f.normalize();
            w.col(out) = e.head(p) + cx(0, 1) * e.tail(p);
            sigma(out) = 0.0;
            ++out;
            // Deflate both directions and re-thin the basis.
            RMat c2 = b.leftCols(remaining);
            c2 -= e * (e.transpose() * c2);
            c2 -= f * (f.transpose() * c2);
            Eigen::JacobiSVD<RMat> svd(c2, Eigen::ComputeThinU);
            const int keep = std::max(0, remaining - 2);
            b.leftCols(keep) = svd.matrixU().leftCols(keep);
            remaining = keep;
        }
    }

    // Loewdin orthonormalization: W <- W (W^H W)^{-1/2}.  Cheap, symmetric,
    // and leaves an already-orthonormal W untouched.
    {
        Eigen::SelfAdjointEigenSolver<Mat> g(w.adjoint() * w);
        const RVec gl = g.eigenvalues();
        Mat ginvh = g.eigenvectors() *
                    gl.cwiseMax(1e-30).cwiseSqrt().cwiseInverse().asDiagonal() *
                    g.eigenvectors().adjoint();
        w = w * ginvh;
    }

    TakagiResult out;
    out.sigma = sigma;
    out.u = w.transpose();
    canonicalize_row_signs(out.u);

    // Diagnostics: zero flags and degeneracy clusters, both relative to the
    // largest singular value.
    const double smax = sigma.size() ? sigma(0) : 0.0;
    out.cluster.assign(p, 0);
    int cid = 0;
    for (int i = 0; i < p; ++i) {
        if (i > 0 && sigma(i - 1) - sigma(i) > degen_rel * std::max(smax, 1e-300))
            ++cid;
        out.cluster[i] = cid;
    }
    out.zero_count = 0;
    for (int i = p - 1; i >= 0; --i) {
        if (sigma(i) <= zero_rel * smax)
            ++out.zero_count;
        else
            break;
    }
    if (smax == 0.0) out.zero_count = p;
    // Repeated nonzero values?
    for (int i = 0; i + 1 < p - out.zero_count; ++i)
        if (out.cluster[i] == out.cluster[i + 1]) out.degenerate = true;
    return out;
}

RMat joint_diag_commuting_sym(const RMat& x, const RMat& y) {
    const int n = static_cast<int>(x.rows());
    if (y.rows() != n || y.cols() != n || x.cols() != n)
        throw Error("joint_diag: dimension mismatch");
    // Fixed generic mixing angle; collisions of cos(t)a + sin(t)b for
    // distinct eigenpairs (a, b) are then non-generic, and the Jacobi sweeps
    // below resolve whatever the one-shot decomposition leaves mixed.
    constexpr double t0 = 0.5484547390518;
    Eigen::SelfAdjointEigenSolver<RMat> es(std::cos(t0) * x +
                                           std::sin(t0) * y);
    RMat q = es.eigenvectors();
    RMat xa = q.transpose() * x * q;
    RMat ya = q.transpose() * y * q;

    const double scale2 = x.squaredNorm() + y.squaredNorm();
    const double stop = 1e-30 * std::max(scale2, 1e-300);
    for (int sweep = 0; sweep < 30; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                off += xa(i, j) * xa(i, j) + ya(i, j) * ya(i, j);
        if (off <= stop) break;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                // Cardoso-Souloumiac pair rotation: principal eigenvector of
                // G = sum_A h h^T, h = [A_ii - A_jj, 2 A_ij].
                double g11 = 0, g12 = 0, g22 = 0;
                for (const RMat* m : {&xa, &ya}) {
                    const double hon = (*m)(i, i) - (*m)(j, j);
                    const double hoff = (*m)(i, j) + (*m)(j, i);
                    g11 += hon * hon;
                    g12 += hon * hoff;
                    g22 += hoff * hoff;
                }
                const double diff = g11 - g22;
                const double r = std::hypot(diff, 2.0 * g12);
                if (r < 1e-300) continue;
                // Principal eigenvector (xc, ys) of [[g11,g12],[g12,g22]].
                const double xc = 0.5 * (diff + r);
                const double ys = g12;
                const double nrm = std::hypot(xc, ys);
                if (nrm < 1e-300) continue;
                const double cos2t = xc / nrm;  // cos(2 theta)
                const double sin2t = ys / nrm;
                const double c = std::sqrt(0.5 * (1.0 + cos2t));
                const double sden = (c > 1e-150) ? (2.0 * c) : 1.0;
                const double ssin = sin2t / sden;
                if (std::abs(ssin) < 1e-18) continue;
                auto rot = [&](RMat& m) {
                    for (int k = 0; k < n; ++k) {
                        const double mi = m(k, i), mj = m(k, j);
                        m(k, i) = c * mi + ssin * mj;
                        m(k, j) = -ssin * mi + c * mj;
                    }
                    for (int k = 0; k < n; ++k) {
                        const double mi = m(i, k), mj = m(j, k);
                        m(i, k) = c * mi + ssin * mj;
                        m(j, k) = -ssin * mi + c * mj;
                    }
                };
                rot(xa);
                rot(ya);
                for (int k = 0; k < n; ++k) {
                    const double qi = q(k, i), qj = q(k, j);
                    q(k, i) = c * qi + ssin * qj;
                    q(k, j) = -ssin * qi + c * qj;
                }
            }
        }
    }
    return q;
}

SymUnitaryEig sym_unitary_eig(const Mat& w, double check_tol) {
    require_square_finite(w, "sym_unitary_eig");
    const int n = static_cast<int>(w.rows());
    const double scale = std::max(1.0, w.norm());
    if ((w - w.transpose()).norm() > check_tol * scale)
        throw AsymmetricInputError("sym_unitary_eig: input not symmetric");
    if ((w.adjoint() * w - Mat::Identity(n, n)).norm() > check_tol * scale)
        throw NotUnitaryError("sym_unitary_eig: input not unitary");

    // W symmetric unitary  =>  Re W and Im W commute and Re^2 + Im^2 = I;
    // a joint real orthogonal eigenbasis diagonalizes W itself.
    const Mat ws = 0.5 * (w + w.transpose());
    RMat q = joint_diag_commuting_sym(ws.real(), ws.imag());
    Vec lambda(n);
    for (int k = 0; k < n; ++k) {
        cx l = q.col(k).cast<cx>().dot(ws * q.col(k).cast<cx>());
        const double m = std::abs(l);
        if (m < 0.5)
            throw Error("sym_unitary_eig: eigenvalue collapsed off the unit circle");
        lambda(k) = l / m;
    }
    return {q, lambda};
}

OrthSymResult orth_sym_factor(const Mat& u, bool normalize_det) {
    require_square_finite(u, "orth_sym_factor");
    const int n = static_cast<int>(u.rows());
    if ((u.adjoint() * u - Mat::Identity(n, n)).norm() >
        1e-8 * std::max(1.0, std::sqrt(double(n))))
        throw NotUnitaryError("orth_sym_factor: input not unitary");

    // u^T u is symmetric unitary; its real orthogonal eigenbasis q and
    // principal square roots d_k of its eigenvalues give phi = q diag(d) q^T
    // and p = u q diag(conj(d)) q^T.  p is real for either branch of each
    // d_k; the principal branch keeps phi's eigenphases in (-pi/2, pi/2].
    SymUnitaryEig se = sym_unitary_eig(u.transpose() * u, 1e-7);
    const int sz = n;
    Vec d(sz);
    for (int k = 0; k < sz; ++k) {
        const double ang = std::arg(se.lambda(k));
        d(k) = std::polar(1.0, 0.5 * ang);  // Re >= 0; ang = pi -> +i
    }

    auto build = [&](const Vec& dd) {
        Mat phi = se.q.cast<cx>() * dd.asDiagonal() *
                  se.q.transpose().cast<cx>();
        phi = 0.5 * (phi + phi.transpose());
        Mat p2 = u * se.q.cast<cx>() * dd.conjugate().asDiagonal() *
                 se.q.transpose().cast<cx>();
        return std::make_pair(p2, phi);
    };

    auto [p2, phi] = build(d);
    if (p2.imag().norm() > 1e-6 * std::sqrt(double(n)))
        throw Error("orth_sym_factor: real factor did not realize");
    RMat p = p2.real();
    if (normalize_det && p.determinant() < 0.0) {
        int kmin = 0;
        double best = 1e300;
        for (int k = 0; k < sz; ++k) {
            if (std::abs(d(k).real()) < best) {
                best = std::abs(d(k).real());
                kmin = k;
            }
        }
        d(kmin) = -d(kmin);
        std::tie(p2, phi) = build(d);
        p = p2.real();
    }
    // Re-orthonormalize (polar projection) to scrub the eps-level drift.
    Eigen::JacobiSVD<RMat> svd(p, Eigen::ComputeFullU | Eigen::ComputeFullV);
    p = svd.matrixU() * svd.matrixV().transpose();
    return {p, phi};
}

Mat takagi_of_symmetric_unitary(const Mat& w, const RVec& d, double comm_tol) {
    require_square_finite(w, "takagi_of_symmetric_unitary");
    const int n = static_cast<int>(w.rows());
    if (d.size() != n)
        throw Error("takagi_of_symmetric_unitary: diagonal size mismatch");
    const double scale = std::max(1.0, w.norm());
    if ((w * d.asDiagonal() - d.asDiagonal() * w).norm() > comm_tol * scale)
        throw CommutationViolationError(
            "takagi_of_symmetric_unitary: input does not commute with diagonal");

    // Group indices by equal diagonal value; w is block diagonal on those
    // groups (up to the commutation tolerance), and the principal root is
    // taken per block so it commutes with diag(d) exactly by construction.
    const double dmax = std::max(1.0, d.cwiseAbs().maxCoeff());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return d(i) > d(j); });
    Mat root = Mat::Zero(n, n);
    int start = 0;
    while (start < n) {
        int stop = start + 1;
        while (stop < n &&
               d(order[start]) - d(order[stop]) <= 1e-8 * dmax)
            ++stop;
        const int bs = stop - start;
        Mat block(bs, bs);
        for (int i = 0; i < bs; ++i)
            for (int j = 0; j < bs; ++j)
                block(i, j) = w(order[start + i], order[start + j]);
        SymUnitaryEig se = sym_unitary_eig(block, 1e-6);
        Vec broot(bs);
        for (int k = 0; k < bs; ++k)
            broot(k) = std::polar(1.0, 0.5 * std::arg(se.lambda(k)));
        Mat rb = se.q.cast<cx>() * broot.asDiagonal() *
                 se.q.transpose().cast<cx>();
        for (int i = 0; i < bs; ++i)
            for (int j = 0; j < bs; ++j)
                root(order[start + i], order[start + j]) =
                    0.5 * (rb(i, j) + rb(j, i));
        start = stop;
    }
    return root;
}

Mat mat_exp(const Mat& a) {
    require_square_finite(a, "mat_exp");
    return a.exp();
}

Mat sqrt_psd(const Mat& h) {
    require_square_finite(h, "sqrt_psd");
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint()));
    if (es.info() != Eigen::Success) throw Error("sqrt_psd: eigensolver failed");
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().adjoint();
}

}  // namespace modepeel::matfact
