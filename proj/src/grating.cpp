#include "modepeel/grating.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "modepeel/matfact.hpp"
#include "modepeel/util.hpp"

namespace modepeel::grating {

namespace {

// tanh(t dx)/t, continuous through t = 0 (limit dx).
double tanh_over(double t, double dx) {
    const double y = t * dx;
    if (std::abs(y) < 1e-6) return dx * (1.0 - y * y / 3.0);
    return std::tanh(y) / t;
}

// atanh(t)/t, continuous through t = 0 (limit 1).
double atanh_over(double t) {
    if (std::abs(t) < 1e-6) return 1.0 + t * t / 3.0;
    return std::atanh(t) / t;
}

void require_symmetric(const Mat& a, const char* what) {
    if (a.rows() != a.cols()) throw Error(std::string(what) + ": not square");
    if (!a.allFinite())
        throw NonFiniteError(std::string(what) + ": non-finite entries");
    if ((a - a.transpose()).norm() > tol::sym * std::max(1.0, a.norm()))
        throw AsymmetricInputError(std::string(what) + ": not symmetric");
}

void require_eta(const RMat& eta, int p) {
    if (eta.rows() != p || eta.cols() != p)
        throw ConfigError("eta: expected " + std::to_string(p) + "x" +
                          std::to_string(p) + " matrix");
    if (!eta.allFinite()) throw ConfigError("eta: non-finite entries");
    const double scale = std::max(1.0, eta.norm());
    if ((eta - eta.transpose()).norm() > tol::sym * scale)
        throw ConfigError("eta: not symmetric");
    Eigen::SelfAdjointEigenSolver<RMat> es(eta, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol::sym * scale)
        throw ConfigError("eta: not positive semidefinite");
}

}  // namespace

void GratingProfile::validate() const {
    modes.validate();
    if (!(modes.lambda_period > 0))
        throw ConfigError(
            "GratingProfile: requires the carrier-referenced mode convention "
            "(lambda_period > 0)");
    require_eta(eta, modes.p);
    const int n = n_samples();
    if (n < 1) throw ConfigError("GratingProfile: no samples");
    if (dn_ac.size() != n || dn_dc.size() != n || theta_rate.size() != n)
        throw ConfigError("GratingProfile: envelope arrays must match x");
    if (!(dx > 0)) throw ConfigError("GratingProfile: dx must be > 0");
    if (!x.allFinite() || !dn_ac.allFinite() || !dn_dc.allFinite() ||
        !theta_rate.allFinite())
        throw ConfigError("GratingProfile: non-finite samples");
    for (int i = 0; i + 1 < n; ++i)
        if (std::abs(x(i + 1) - x(i) - dx) > 1e-6 * dx)
            throw ConfigError("GratingProfile: x grid not uniform with spacing dx");
    if (dn_ac.minCoeff() < 0)
        throw ConfigError("GratingProfile: dn_ac must be nonnegative");
}

CouplingPair coupling_at(const GratingProfile& profile, int i) {
    if (i < 0 || i >= profile.n_samples())
        throw Error("coupling_at: sample index out of range");
    CouplingPair out;
    out.kappa = cx(0, -0.5 * profile.dn_ac(i)) * profile.eta.cast<cx>();
    out.sigma = profile.dn_dc(i) * profile.eta;
    out.sigma.diagonal().array() -= 0.5 * profile.theta_rate(i);
    return out;
}

Layer layer_from_coupling(const Mat& kappa, const Mat& sigma, double dx) {
    require_symmetric(kappa, "layer_from_coupling: kappa");
    require_symmetric(sigma, "layer_from_coupling: sigma");
    if (kappa.rows() != sigma.rows())
        throw Error("layer_from_coupling: kappa and sigma sizes differ");
    if (!(dx > 0)) throw Error("layer_from_coupling: dx must be > 0");
    const int p = static_cast<int>(kappa.rows());

    // s = (kappa* kappa)^{1/2}; for symmetric kappa this is (kappa^H kappa)^{1/2}.
    const Mat s = matfact::sqrt_psd(kappa.adjoint() * kappa);
    Eigen::SelfAdjointEigenSolver<Mat> es(s);
    if (es.info() != Eigen::Success)
        throw Error("layer_from_coupling: eigensolver failed");
    RVec f(p);
    for (int k = 0; k < p; ++k)
        f(k) = tanh_over(std::max(0.0, es.eigenvalues()(k)), dx);
    const Mat u = es.eigenvectors();

    Layer layer;
    layer.dx = dx;
    layer.rho = cx(0, 1) * (u * f.cast<cx>().asDiagonal() * u.adjoint()) *
                kappa.conjugate();
    layer.rho = 0.5 * (layer.rho + layer.rho.transpose()).eval();
    layer.phi = matfact::mat_exp(cx(0, dx) * sigma);
    layer.validate();
    return layer;
}

Layer layer_from_coupling(const CouplingPair& coupling, double dx) {
    return layer_from_coupling(coupling.kappa, coupling.sigma.cast<cx>(), dx);
}

CouplingPair coupling_from_layer(const Layer& layer) {
    layer.validate();
    const int p = static_cast<int>(layer.rho.rows());

    // m = tanh(s dx) is the PSD square root of rho^H rho; undo the tanh.
    const Mat m = matfact::sqrt_psd(layer.rho.adjoint() * layer.rho);
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.info() != Eigen::Success)
        throw Error("coupling_from_layer: eigensolver failed");
    RVec g(p);
    for (int k = 0; k < p; ++k) {
        const double t = std::clamp(es.eigenvalues()(k), 0.0, 1.0 - 1e-15);
        g(k) = atanh_over(t);
    }
    const Mat u = es.eigenvectors();

    CouplingPair out;
    out.kappa = cx(0, 1.0 / layer.dx) *
                (u * g.cast<cx>().asDiagonal() * u.adjoint()) *
                layer.rho.conjugate();
    out.kappa = 0.5 * (out.kappa + out.kappa.transpose()).eval();

    const auto se = matfact::sym_unitary_eig(layer.phi);
    RVec phase(p);
    for (int k = 0; k < p; ++k) {
        phase(k) = std::arg(se.lambda(k));
        if (std::abs(phase(k)) >= M_PI * (1.0 - 1e-9))
            throw BranchOverflowError(
                "coupling_from_layer: eigenphase of Phi on the branch cut "
                "(codirectional rotation of pi per layer)");
    }
    out.sigma = se.q * (phase / layer.dx).asDiagonal() * se.q.transpose();
    return out;
}

std::vector<Layer> layers_from_profile(const GratingProfile& profile,
                                       std::vector<std::string>* warnings) {
    profile.validate();
    const int p = profile.modes.p;
    const int n = profile.n_samples();
    const double dx = profile.dx;

    Eigen::SelfAdjointEigenSolver<RMat> es(profile.eta);
    if (es.info() != Eigen::Success)
        throw Error("layers_from_profile: eigensolver failed");
    const RVec lam = es.eigenvalues();
    const Mat qc = es.eigenvectors().cast<cx>();
    const Mat qct = qc.transpose();
    const double lam_max = lam.cwiseAbs().maxCoeff();

    std::vector<Layer> layers;
    layers.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double a = 0.5 * profile.dn_ac(i);
        const double strength = a * lam_max * dx;
        if (strength >= 1.0)
            throw ReflectorTooStrongError(
                "layers_from_profile: ||kappa|| dx >= 1 at sample " +
                std::to_string(i));
        if (strength > 0.3 && warnings)
            warnings->push_back("sample " + std::to_string(i) +
                                ": ||kappa|| dx = " + std::to_string(strength) +
                                " > 0.3; layer model departs from the continuum");

        Layer layer;
        layer.dx = dx;
        RVec tv(p);
        Vec ev(p);
        for (int k = 0; k < p; ++k) {
            tv(k) = -std::tanh(a * lam(k) * dx);
            ev(k) = std::polar(1.0, profile.dn_dc(i) * lam(k) * dx);
        }
        layer.rho = qc * tv.cast<cx>().asDiagonal() * qct;
        layer.phi = std::polar(1.0, -0.5 * profile.theta_rate(i) * dx) *
                    (qc * ev.asDiagonal() * qct);
        layers.push_back(std::move(layer));
    }
    return layers;
}

ProfileFit profile_from_layers(const std::vector<Layer>& layers, const RMat& eta,
                               const ModeSet& modes, const FitOptions& options) {
    if (layers.empty()) throw ConfigError("profile_from_layers: no layers");
    modes.validate();
    const int p = modes.p;
    if (layers.front().rho.rows() != p)
        throw ConfigError("profile_from_layers: layer size does not match modes");
    require_eta(eta, p);
    const double dx = layers.front().dx;
    for (const Layer& l : layers)
        if (std::abs(l.dx - dx) > 1e-9 * dx)
            throw ConfigError("profile_from_layers: layers have unequal dx");

    const RVec u = eta.diagonal();
    const double su = u.sum();
    const double suu = u.squaredNorm();
    if (options.fit_dc && options.fit_chirp) {
        // Columns [diag(eta), -1/2]: separable only if diag(eta) is not constant.
        if (p < 2)
            throw UnderdeterminedFitError(
                "profile_from_layers: one mode cannot separate dc index from "
                "chirp");
        const double det = p * suu - su * su;  // 4 * Gram determinant
        if (det <= 1e-12 * std::max(1.0, p * suu))
            throw UnderdeterminedFitError(
                "profile_from_layers: diag(eta) is constant; dc index and chirp "
                "are not separable");
    }
    if (suu <= 0)
        throw UnderdeterminedFitError(
            "profile_from_layers: diag(eta) vanishes; dn fits are degenerate");

    const int n = static_cast<int>(layers.size());
    ProfileFit fit;
    fit.residual_ac = RVec::Zero(n);
    fit.residual_dc = RVec::Zero(n);
    GratingProfile& prof = fit.profile;
    prof.modes = modes;
    prof.eta = eta;
    prof.dx = dx;
    prof.x = RVec::LinSpaced(n, 0.5 * dx, (n - 0.5) * dx);
    prof.dn_ac = RVec::Zero(n);
    prof.dn_dc = RVec::Zero(n);
    prof.theta_rate = RVec::Zero(n);

    for (int j = 0; j < n; ++j) {
        const CouplingPair cp = coupling_from_layer(layers[j]);

        Eigen::SelfAdjointEigenSolver<RMat> esig(cp.sigma, Eigen::EigenvaluesOnly);
        fit.max_abs_phase = std::max(
            fit.max_abs_phase, esig.eigenvalues().cwiseAbs().maxCoeff() * dx);

        // dn_ac from diag(kappa) ~= -(i/2) dn_ac diag(eta), clamped at 0.
        double num = 0;
        for (int q = 0; q < p; ++q)
            num += 0.5 * u(q) * (-cp.kappa(q, q).imag());
        const double a = std::max(0.0, num / (0.25 * suu));
        prof.dn_ac(j) = a;
        double rac = 0;
        for (int q = 0; q < p; ++q)
            rac += std::norm(cp.kappa(q, q) + cx(0, 0.5 * a * u(q)));
        fit.residual_ac(j) = std::sqrt(rac);

        // (dn_dc, dtheta/dx) from diag(sigma) ~= dn_dc diag(eta) - theta'/2.
        const RVec b = cp.sigma.diagonal();
        double d = 0, th = 0;
        if (options.fit_dc && options.fit_chirp) {
            const double g11 = suu, g12 = -0.5 * su, g22 = 0.25 * p;
            const double r1 = u.dot(b), r2 = -0.5 * b.sum();
            const double det = g11 * g22 - g12 * g12;
            d = (r1 * g22 - g12 * r2) / det;
            th = (g11 * r2 - g12 * r1) / det;
        } else if (options.fit_dc) {
            d = u.dot(b) / suu;
        } else if (options.fit_chirp) {
            th = -2.0 * b.mean();
        }
        prof.dn_dc(j) = d;
        prof.theta_rate(j) = th;
        fit.residual_dc(j) = (b - d * u + RVec::Constant(p, 0.5 * th)).norm();
    }
    prof.validate();
    return fit;
}

GratingProfile example_profile_sec5() {
    GratingProfile prof;
    const double lambda0 = 1.55e-6;
    const double n0 = 0.5 * (1.449 + 1.437);
    const double length = 0.02;
    const int n = 2000;

    prof.modes.p = 4;
    prof.modes.n = RVec(4);
    prof.modes.n << 1.449, 1.444, 1.439, 1.437;
    prof.modes.lambda_period = lambda0 / (2.0 * n0);
    prof.modes.omega0 = 2.0 * M_PI * c_light / lambda0;
    prof.eta = eta_library().at("fourmode");

    prof.dx = length / n;
    prof.x = RVec::LinSpaced(n, 0.5 * prof.dx, length - 0.5 * prof.dx);
    prof.dn_ac = RVec(n);
    prof.dn_dc = RVec(n);
    prof.theta_rate = RVec(n);
    const double fwhm = 7e-3;
    // Linear chirp rate d(dtheta/dx)/dx in 1/m^2.  Calibrated so the
    // synthesized spectrum reproduces the example's reference peak
    // reflectivities [99.6, 99.6, 97.0, 83.0, 28.3] % for
    // |R11|, |R22|, |R33|, |R44|, |R14|; the match is sharp (a 3% change
    // in the rate moves the weakest peaks outside +-0.5 points).
    const double chirp_slope = (7.0 * M_PI / 32.0) * 1e7;
    for (int i = 0; i < n; ++i) {
        const double xi = prof.x(i);
        const double xc = xi - 0.5 * length;
        prof.dn_ac(i) = 1e-3 * 0.5 * (1.0 - std::cos(2.0 * M_PI * xi / length));
        prof.dn_dc(i) = 5e-4 *
                        std::exp(-4.0 * std::log(2.0) * xc * xc / (fwhm * fwhm)) *
                        std::sin(2.0 * M_PI * xi / 4e-3);
        prof.theta_rate(i) = chirp_slope * xc;
    }
    prof.validate();
    return prof;
}

std::map<std::string, RMat> eta_library() {
    std::map<std::string, RMat> lib;
    const double scale = 2.0 * M_PI / 1.55e-6;
    RMat four(4, 4);
    four << 0.957, 0.0, 0.0, -0.116,  //
        0.0, 0.874, 0.0, 0.0,         //
        0.0, 0.0, 0.707, 0.0,         //
        -0.116, 0.0, 0.0, 0.491;
    lib["fourmode"] = scale * four;
    RMat two(2, 2);
    two << 0.957, 0.0, 0.0, 0.874;
    lib["twomode"] = scale * two;
    return lib;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_num(const std::string& s, const char* ctx) {
    double v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw IngestionError(std::string("profile csv: bad number in ") + ctx +
                             ": '" + s + "'");
    return v;
}

}  // namespace

void write_profile_csv(const std::filesystem::path& path,
                       const GratingProfile& profile) {
    profile.validate();
    std::ofstream f(path);
    if (!f) throw Error("write_profile_csv: cannot open " + path.string());
    f << "x,dn_ac,dn_dc,dtheta_dx\n";
    for (int i = 0; i < profile.n_samples(); ++i)
        f << util::fmt_g17(profile.x(i)) << "," << util::fmt_g17(profile.dn_ac(i))
          << "," << util::fmt_g17(profile.dn_dc(i)) << ","
          << util::fmt_g17(profile.theta_rate(i)) << "\n";
    if (!f) throw Error("write_profile_csv: write failed");
}

GratingProfile read_profile_csv(const std::filesystem::path& path,
                                const ModeSet& modes, const RMat& eta) {
    std::ifstream f(path);
    if (!f) throw IngestionError("read_profile_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw IngestionError("profile csv: empty file");
    auto head = split_csv(line);
    if (head.size() != 4 || head[0] != "x" || head[1] != "dn_ac" ||
        head[2] != "dn_dc" || head[3] != "dtheta_dx")
        throw IngestionError("profile csv: bad header");

    std::vector<double> xs, ac, dc, th;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != 4)
            throw IngestionError("profile csv: wrong column count in row " +
                                 std::to_string(xs.size() + 2));
        xs.push_back(parse_num(cells[0], "x"));
        ac.push_back(parse_num(cells[1], "dn_ac"));
        dc.push_back(parse_num(cells[2], "dn_dc"));
        th.push_back(parse_num(cells[3], "dtheta_dx"));
    }
    if (xs.size() < 2)
        throw IngestionError("profile csv: need at least 2 samples");

    GratingProfile prof;
    prof.modes = modes;
    prof.eta = eta;
    prof.dx = xs[1] - xs[0];
    const auto n = static_cast<Eigen::Index>(xs.size());
    prof.x = Eigen::Map<RVec>(xs.data(), n);
    prof.dn_ac = Eigen::Map<RVec>(ac.data(), n);
    prof.dn_dc = Eigen::Map<RVec>(dc.data(), n);
    prof.theta_rate = Eigen::Map<RVec>(th.data(), n);
    try {
        prof.validate();
    } catch (const Error& e) {
        throw IngestionError(std::string("profile csv: ") + e.what());
    }
    return prof;
}

void write_eta_json(const std::filesystem::path& path, const RMat& eta) {
    require_eta(eta, static_cast<int>(eta.rows()));
    nlohmann::json j;
    j["schema_version"] = 1;
    j["p"] = eta.rows();
    j["units"] = "1/m";
    std::vector<double> vals;
    vals.reserve(eta.size());
    for (int r = 0; r < eta.rows(); ++r)
        for (int c = 0; c < eta.cols(); ++c) vals.push_back(eta(r, c));
    j["values"] = vals;
    std::ofstream f(path);
    if (!f) throw Error("write_eta_json: cannot open " + path.string());
    f << j.dump(2) << "\n";
    if (!f) throw Error("write_eta_json: write failed");
}

RMat read_eta_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IngestionError("read_eta_json: cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("eta json: parse error: ") + e.what());
    }
    if (!j.contains("p") || !j.contains("values"))
        throw IngestionError("eta json: missing p/values");
    const int p = j["p"].get<int>();
    if (p < 1) throw IngestionError("eta json: p must be >= 1");
    const auto& vals = j["values"];
    if (!vals.is_array() || vals.size() != static_cast<size_t>(p) * p)
        throw IngestionError("eta json: values must hold p*p numbers");
    RMat eta(p, p);
    size_t k = 0;
    for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) eta(r, c) = vals[k++].get<double>();
    try {
        require_eta(eta, p);
    } catch (const Error& e) {
        throw IngestionError(std::string("eta json: ") + e.what());
    }
    return eta;
}

}  // namespace modepeel::grating
