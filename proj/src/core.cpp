#include "modepeel/core.hpp"

#include <cmath>

#include "modepeel/matfact.hpp"

namespace modepeel::core {

namespace {

double op_norm(const Mat& a) { return a.operatorNorm(); }

// Inverse through SVD with a condition-number gate.
Mat gated_inverse(const Mat& a, const char* who, double* cond_out = nullptr) {
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    const double cond = (smin > 0) ? smax / smin : 1e300;
    if (cond_out) *cond_out = cond;
    if (!(smin > 0) || cond > tol::cond_max)
        throw SingularBlockError(std::string(who) +
                                 ": block inversion beyond condition limit");
    return svd.matrixV() * sv.cwiseInverse().asDiagonal() *
           svd.matrixU().adjoint();
}

}  // namespace

void ModeSet::validate() const {
    if (p < 1) throw ConfigError("ModeSet: p must be >= 1");
    if (n.size() != p) throw ConfigError("ModeSet: index vector size mismatch");
    for (int k = 0; k < p; ++k)
        if (!(n(k) > 0) || !std::isfinite(n(k)))
            throw ConfigError("ModeSet: indices must be positive finite");
    if (!(lambda_period >= 0))
        throw ConfigError("ModeSet: lambda_period must be >= 0");
    if (lambda_period > 0 && !(omega0 > 0))
        throw ConfigError("ModeSet: omega0 required with a carrier period");
    if (!(c0 > 0)) throw ConfigError("ModeSet: c0 must be > 0");
    if (loss.size() != 0 && loss.size() != p)
        throw ConfigError("ModeSet: loss vector size mismatch");
    for (int k = 0; k < static_cast<int>(loss.size()); ++k)
        if (loss(k) < 0 || !std::isfinite(loss(k)))
            throw ConfigError("ModeSet: loss must be nonnegative finite");
}

Vec ModeSet::phase_rates(double w) const {
    RVec re = real_phase_rates(w);
    Vec b(p);
    for (int k = 0; k < p; ++k)
        b(k) = cx(re(k), loss.size() ? loss(k) : 0.0);
    return b;
}

RVec ModeSet::real_phase_rates(double w) const {
    RVec b(p);
    if (lambda_period > 0) {
        const double carrier = M_PI / lambda_period;
        for (int k = 0; k < p; ++k) b(k) = n(k) * (omega0 + w) / c0 - carrier;
    } else {
        for (int k = 0; k < p; ++k) b(k) = n(k) * w / c0;
    }
    return b;
}

RVec ModeSet::delays() const { return n / c0; }

void Layer::validate(double margin) const {
    const int pp = static_cast<int>(rho.rows());
    if (rho.cols() != pp || phi.rows() != pp || phi.cols() != pp)
        throw Error("Layer: block shapes inconsistent");
    if (!rho.allFinite() || !phi.allFinite())
        throw NonFiniteError("Layer: non-finite entries");
    if (!(dx > 0)) throw Error("Layer: dx must be > 0");
    if ((rho - rho.transpose()).norm() > tol::sym * std::max(1.0, rho.norm()))
        throw AsymmetricInputError("Layer: rho must be symmetric");
    if ((phi.adjoint() * phi - Mat::Identity(pp, pp)).norm() >
        tol::sym * pp)
        throw NotUnitaryError("Layer: phi must be unitary");
    if ((phi - phi.transpose()).norm() > tol::sym * pp)
        throw AsymmetricInputError("Layer: phi must be symmetric");
    if (op_norm(rho) >= 1.0 - margin)
        throw ReflectorTooStrongError("Layer: ||rho|| reaches 1 within margin");
}

Mat Layer::t() const {
    const int pp = static_cast<int>(rho.rows());
    return matfact::sqrt_psd(Mat::Identity(pp, pp) - rho * rho.conjugate());
}

Mat Layer::t_inv() const {
    const int pp = static_cast<int>(rho.rows());
    Mat g = Mat::Identity(pp, pp) - rho * rho.conjugate();
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (g + g.adjoint()));
    if (es.eigenvalues().minCoeff() <= 0)
        throw ReflectorTooStrongError("Layer: transmission factor saturated");
    return es.eigenvectors() *
           es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().adjoint();
}

Mat Layer::upsilon() const { return phi.transpose() * rho * phi; }

Mat BlockMatrix2P::full() const {
    const int pp = p();
    Mat f(2 * pp, 2 * pp);
    f.topLeftCorner(pp, pp) = b11;
    f.topRightCorner(pp, pp) = b12;
    f.bottomLeftCorner(pp, pp) = b21;
    f.bottomRightCorner(pp, pp) = b22;
    return f;
}

BlockMatrix2P BlockMatrix2P::identity_transfer(int p) {
    return {Mat::Identity(p, p), Mat::Zero(p, p), Mat::Zero(p, p),
            Mat::Identity(p, p), BlockKind::transfer};
}

BlockMatrix2P layer_transfer(const Layer& layer, const Vec& beta) {
    const int pp = static_cast<int>(layer.rho.rows());
    if (beta.size() != pp) throw Error("layer_transfer: beta size mismatch");
    Vec zinv(pp);  // exp(i beta dx); forward decay for Im(beta) >= 0
    for (int k = 0; k < pp; ++k)
        zinv(k) = std::exp(cx(0, 1) * beta(k) * layer.dx);
    const Mat tinv = layer.t_inv();
    const Mat tinv_c = tinv.conjugate();
    BlockMatrix2P t;
    t.kind = BlockKind::transfer;
    t.b11 = zinv.asDiagonal() * (tinv_c * layer.phi);
    t.b12 = zinv.asDiagonal() *
            (-(tinv_c * layer.rho.conjugate()) * layer.phi.conjugate());
    t.b21 = zinv.cwiseInverse().asDiagonal() * (-(tinv * layer.rho) * layer.phi);
    t.b22 = zinv.cwiseInverse().asDiagonal() * (tinv * layer.phi.conjugate());
    return t;
}

BlockMatrix2P layer_scattering(const Layer& layer, const Vec& beta) {
    const int pp = static_cast<int>(layer.rho.rows());
    if (beta.size() != pp) throw Error("layer_scattering: beta size mismatch");
    Vec zinv(pp);
    for (int k = 0; k < pp; ++k)
        zinv(k) = std::exp(cx(0, 1) * beta(k) * layer.dx);
    const Mat t = layer.t();
    const Mat tinv_c = layer.t_inv().conjugate();
    BlockMatrix2P s;
    s.kind = BlockKind::scattering;
    s.b11 = layer.phi.transpose() * layer.rho * layer.phi;
    s.b12 = layer.phi.transpose() * t * zinv.asDiagonal();
    s.b21 = zinv.asDiagonal() * t.transpose() * layer.phi;
    s.b22 = -(zinv.asDiagonal() * (tinv_c * layer.rho.conjugate() * t) *
              zinv.asDiagonal());
    return s;
}

BlockMatrix2P transfer_to_scattering(const BlockMatrix2P& t) {
    if (t.kind != BlockKind::transfer)
        throw Error("transfer_to_scattering: input is not a transfer matrix");
    const Mat t22inv = gated_inverse(t.b22, "transfer_to_scattering");
    BlockMatrix2P s;
    s.kind = BlockKind::scattering;
    s.b11 = -t22inv * t.b21;
    s.b12 = t22inv;
    s.b21 = t.b11 - t.b12 * t22inv * t.b21;
    s.b22 = t.b12 * t22inv;
    return s;
}

BlockMatrix2P scattering_to_transfer(const BlockMatrix2P& s) {
    if (s.kind != BlockKind::scattering)
        throw Error("scattering_to_transfer: input is not a scattering matrix");
    const Mat s12inv = gated_inverse(s.b12, "scattering_to_transfer");
    BlockMatrix2P t;
    t.kind = BlockKind::transfer;
    t.b11 = s.b21 - s.b22 * s12inv * s.b11;
    t.b12 = s.b22 * s12inv;
    t.b21 = -s12inv * s.b11;
    t.b22 = s12inv;
    return t;
}

BlockMatrix2P compose(std::span<const BlockMatrix2P> transfers) {
    if (transfers.empty()) throw Error("compose: empty product");
    for (const auto& t : transfers)
        if (t.kind != BlockKind::transfer)
            throw Error("compose: inputs must be transfer matrices");
    BlockMatrix2P acc = transfers[0];
    for (size_t j = 1; j < transfers.size(); ++j) {
        const BlockMatrix2P& t = transfers[j];
        Mat a11 = t.b11 * acc.b11 + t.b12 * acc.b21;
        Mat a12 = t.b11 * acc.b12 + t.b12 * acc.b22;
        Mat a21 = t.b21 * acc.b11 + t.b22 * acc.b21;
        Mat a22 = t.b21 * acc.b12 + t.b22 * acc.b22;
        acc.b11 = std::move(a11);
        acc.b12 = std::move(a12);
        acc.b21 = std::move(a21);
        acc.b22 = std::move(a22);
    }
    return acc;
}

Sandwich sandwich_decompose(const BlockMatrix2P& s, double phys_tol) {
    if (s.kind != BlockKind::scattering)
        throw Error("sandwich_decompose: input is not a scattering matrix");
    const int pp = s.p();
    const Mat f = s.full();
    const double scale = std::max(1.0, f.norm());
    if ((f - f.transpose()).norm() > phys_tol * scale)
        throw NotReciprocalError("sandwich_decompose: S is not reciprocal");
    if ((f.adjoint() * f - Mat::Identity(2 * pp, 2 * pp)).norm() >
        phys_tol * scale)
        throw NotLosslessError("sandwich_decompose: S is not lossless");
    if (op_norm(s.b11) >= 1.0 - tol::margin)
        throw ReflectorTooStrongError(
            "sandwich_decompose: S11 is not strictly contractive");

    auto tak = matfact::takagi(0.5 * (s.b11 + s.b11.transpose()));
    Sandwich out;
    out.rho = tak.sigma;
    out.phi_l = tak.u;
    RVec tdiag = (RVec::Ones(pp) - out.rho.cwiseProduct(out.rho)).cwiseSqrt();
    // phi_r is fixed by S21 once phi_l is chosen; any valid Takagi factor
    // (including any J on degenerate subspaces) yields a unitary phi_r and
    // reproduces S22 automatically for reciprocal lossless input.
    out.phi_r =
        s.b21 * out.phi_l.adjoint() * tdiag.cwiseInverse().cast<cx>().asDiagonal();

    const double u_defect =
        (out.phi_r.adjoint() * out.phi_r - Mat::Identity(pp, pp)).norm();
    if (u_defect > 1e3 * phys_tol * pp)
        throw Error("sandwich_decompose: right factor failed unitarity");
    const double recon =
        (out.phi_r * tdiag.cast<cx>().asDiagonal() * out.phi_l - s.b21).norm() +
        (out.phi_l.transpose() * out.rho.cast<cx>().asDiagonal() * out.phi_l -
         s.b11)
            .norm() +
        (out.phi_r * out.rho.cast<cx>().asDiagonal() * out.phi_r.transpose() +
         s.b22)
            .norm();
    if (recon > 1e3 * phys_tol * scale)
        throw Error("sandwich_decompose: reconstruction failed");
    return out;
}

PhysReport check_physical(const BlockMatrix2P& s) {
    const Mat f = s.full();
    PhysReport r;
    r.reciprocity_defect = op_norm(f - f.transpose());
    r.unitarity_defect =
        op_norm(f.adjoint() * f - Mat::Identity(f.rows(), f.cols()));
    r.s11_norm = op_norm(s.b11);
    r.contraction_defect = std::max(0.0, r.s11_norm - 1.0);
    return r;
}

}  // namespace modepeel::core
