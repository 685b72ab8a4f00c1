#include "modepeel/inverse.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "modepeel/matfact.hpp"
#include "modepeel/util.hpp"

namespace modepeel::inverse {

using matfact::TakagiResult;

void InverseConfig::validate() const {
    if (n_layers < 1) throw ConfigError("InverseConfig: n_layers must be >= 1");
    if (!(dx > 0)) throw ConfigError("InverseConfig: dx must be > 0");
    if (!(n0 > 0)) throw ConfigError("InverseConfig: n0 must be > 0");
    if (!(continuity.sv_zero_threshold > 0) ||
        !(continuity.sv_degeneracy_threshold > 0))
        throw ConfigError("InverseConfig: thresholds must be positive");
    if (threads < 1) throw ConfigError("InverseConfig: threads must be >= 1");
}

namespace {

// ----------------------------------------------------------------- helpers

struct OrderedFactor {
    RVec sigma;
    Mat v;                      // rows permuted along with sigma
    std::vector<int> cluster;   // cluster id per row (equal id = degenerate)
    int zero_count = 0;
    bool degenerate = false;
};

// Reorder the descending Takagi output to track the previous layer's
// singular values (minimal-cost assignment); identity order otherwise.
OrderedFactor ordered_factor(const TakagiResult& tak, const RVec* prev_sigma) {
    const int p = static_cast<int>(tak.sigma.size());
    std::vector<int> perm(p);
    std::iota(perm.begin(), perm.end(), 0);
    if (prev_sigma && prev_sigma->size() == p) {
        RMat cost(p, p);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j)
                cost(i, j) = std::abs((*prev_sigma)(i) - tak.sigma(j));
        perm = util::min_cost_assignment(cost);
    }
    OrderedFactor out;
    out.sigma = RVec(p);
    out.v = Mat(p, p);
    out.cluster.resize(p);
    for (int i = 0; i < p; ++i) {
        out.sigma(i) = tak.sigma(perm[i]);
        out.v.row(i) = tak.u.row(perm[i]);
        out.cluster[i] = tak.cluster[perm[i]];
    }
    out.zero_count = tak.zero_count;
    out.degenerate = tak.degenerate;
    return out;
}

// Unitary (or real orthogonal) Procrustes polar factor of ref * cur^H,
// the J minimizing ||J*cur - ref||_F over the allowed class.
Mat procrustes_unitary(const Mat& m) {
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().adjoint();
}

RMat procrustes_orthogonal(const RMat& m) {
    Eigen::JacobiSVD<RMat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

// Align the rows of f.v with ref: per-row sign flips for isolated singular
// values, Procrustes block fixes for degenerate clusters (complex unitary on
// zero clusters, real orthogonal on repeated nonzero ones).  Without a
// usable reference the degenerate blocks are left as produced and flagged.
void align_rows(OrderedFactor& f, const Mat& ref, bool continuity_on,
                LayerDiagnostics& diag) {
    const int p = static_cast<int>(f.sigma.size());
    std::vector<char> done(p, 0);
    for (int i = 0; i < p; ++i) {
        if (done[i]) continue;
        std::vector<int> members;
        for (int k = 0; k < p; ++k)
            if (f.cluster[k] == f.cluster[i]) {
                members.push_back(k);
                done[k] = 1;
            }
        const bool zero_cluster = f.sigma(i) == 0.0;
        if (members.size() == 1 && !zero_cluster) {
            const cx dot = (f.v.row(i) * ref.row(i).adjoint())(0, 0);
            if (dot.real() < 0) {
                f.v.row(i) = -f.v.row(i);
                ++diag.sign_flips;
            }
            continue;
        }
        // Degenerate (or zero) cluster: gauge freedom is a block J.
        if (zero_cluster) diag.zero_flagged = true;
        if (!zero_cluster && members.size() > 1) diag.degenerate_flagged = true;
        if (!continuity_on) {
            diag.ambiguous = true;
            continue;
        }
        const int m = static_cast<int>(members.size());
        Mat cur(m, p), target(m, p);
        for (int k = 0; k < m; ++k) {
            cur.row(k) = f.v.row(members[k]);
            target.row(k) = ref.row(members[k]);
        }
        Mat fixed;
        if (zero_cluster) {
            // Any unitary mix keeps Ups; pick the one nearest the reference.
            fixed = procrustes_unitary(target * cur.adjoint()) * cur;
        } else {
            // Equal nonzero singular values: only a real orthogonal mix
            // preserves the factorization.
            RMat j = procrustes_orthogonal((target * cur.adjoint()).real());
            fixed = j.cast<cx>() * cur;
        }
        for (int k = 0; k < m; ++k) f.v.row(members[k]) = fixed.row(k);
        diag.j_fix_applied = true;
    }
}

[[noreturn]] void rethrow_with_layer(int j) {
    const std::string tag = "layer " + std::to_string(j) + ": ";
    try {
        throw;
    } catch (const NearSingularPeelError& e) {
        throw NearSingularPeelError(tag + e.what());
    } catch (const ReflectorTooStrongError& e) {
        throw ReflectorTooStrongError(tag + e.what());
    } catch (const DegenerateWindowError& e) {
        throw DegenerateWindowError(tag + e.what());
    } catch (const AsymmetricInputError& e) {
        throw AsymmetricInputError(tag + e.what());
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(tag + e.what());
    } catch (const Error& e) {
        throw Error(tag + e.what());
    }
}

}  // namespace

// -------------------------------------------------------------- operations

Identification identify_layer(const Mat& h0, const InverseConfig& cfg,
                              const Identification* prev) {
    cfg.validate();
    if (h0.rows() != h0.cols() || h0.rows() < 1)
        throw Error("identify_layer: h0 must be square");
    if (!h0.allFinite()) throw NonFiniteError("identify_layer: non-finite h0");
    const int p = static_cast<int>(h0.rows());
    const double asym = (h0 - h0.transpose()).norm();
    if (asym > tol::sym * std::max(1.0, h0.norm()))
        throw AsymmetricInputError("identify_layer: h0 is not symmetric");
    const Mat h = 0.5 * (h0 + h0.transpose());

    Identification out;
    out.diag.asymmetry = asym;
    out.diag.h0_norm = h.operatorNorm();
    if (out.diag.h0_norm >= 1.0 - tol::margin)
        throw ReflectorTooStrongError(
            "identify_layer: ||h0|| = " + std::to_string(out.diag.h0_norm) +
            " saturates the reflector bound");

    if (cfg.situation == Situation::A_no_codirectional) {
        out.rho = h;
        out.phi = Mat::Identity(p, p);
        // Report the singular values for diagnostics only.
        Eigen::JacobiSVD<Mat> svd(h);
        out.diag.sigma = svd.singularValues();
        out.sigma_ref = out.diag.sigma;
        out.u_ref = Mat::Identity(p, p);
        return out;
    }

    TakagiResult tak = matfact::takagi(h, cfg.continuity.sv_zero_threshold,
                                       cfg.continuity.sv_degeneracy_threshold);
    const bool cont = cfg.continuity.enabled;
    const RVec* prev_sigma =
        (cont && prev) ? &prev->sigma_ref : nullptr;
    OrderedFactor f = ordered_factor(tak, prev_sigma);

    if (cfg.situation == Situation::B_diagonal_rho) {
        Mat ref = (cont && prev) ? prev->u_ref : Mat::Identity(p, p);
        align_rows(f, ref, cont, out.diag);
        out.rho = f.sigma.cast<cx>().asDiagonal();
        out.phi = f.v;
        out.diag.sigma = f.sigma;
        out.sigma_ref = f.sigma;
        out.u_ref = f.v;
        return out;
    }

    // Situation C: V = P Phi (rho = +P^T Sigma P) or V = i P Phi
    // (rho = -P^T Sigma P); the eigenphases of V^T V = +-Phi^2 sit near 0 or
    // near +-pi and identify the family.
    const double family_trace = (f.v.transpose() * f.v).trace().real();
    const bool imaginary = family_trace < 0;
    out.diag.family_imaginary = imaginary;
    if (prev && prev->diag.family_imaginary != imaginary)
        out.diag.note = "factor family flipped relative to previous layer";

    Mat ref;
    if (cont && prev)
        ref = prev->u_ref;
    else
        ref = imaginary ? Mat(cx(0, 1) * Mat::Identity(p, p))
                        : Mat(Mat::Identity(p, p));
    align_rows(f, ref, cont, out.diag);

    Mat w = imaginary ? Mat(cx(0, -1) * f.v) : f.v;
    // Phi is known to be near identity here, so the principal branch picks
    // the physical pair; forcing det(P) = +1 could inject a spurious
    // reflection instead.
    matfact::OrthSymResult osf = matfact::orth_sym_factor(w, false);
    RMat rho_real =
        osf.p.transpose() * f.sigma.asDiagonal() * osf.p;
    if (imaginary) rho_real = -rho_real;
    out.rho = rho_real.cast<cx>();
    out.phi = osf.phi;
    out.diag.sigma = f.sigma;
    out.sigma_ref = f.sigma;
    out.u_ref = f.v;
    return out;
}

SpectrumGrid schur_step(const SpectrumGrid& r_j, const Layer& layer_j,
                        const ModeSet& modes, int threads) {
    r_j.validate();
    modes.validate();
    const int p = modes.p;
    if (r_j.modes.p != p)
        throw Error("schur_step: mode-count mismatch");
    if (layer_j.rho.rows() != p || layer_j.rho.cols() != p ||
        layer_j.phi.rows() != p || layer_j.phi.cols() != p)
        throw Error("schur_step: layer size mismatch");
    if (!layer_j.rho.allFinite() || !layer_j.phi.allFinite())
        throw NonFiniteError("schur_step: non-finite layer");
    if (!(layer_j.dx > 0)) throw Error("schur_step: layer dx must be > 0");
    // The peel stays exact for any *unitary* Phi (a J-gauge layer from a
    // degenerate identification is such), so only unitarity and a symmetric
    // reflector are demanded here, not a symmetric Phi.
    if ((layer_j.phi.adjoint() * layer_j.phi - Mat::Identity(p, p)).norm() >
        tol::sym * p)
        throw NotUnitaryError("schur_step: phi must be unitary");
    if ((layer_j.rho - layer_j.rho.transpose()).norm() >
        tol::sym * std::max(1.0, layer_j.rho.norm()))
        throw AsymmetricInputError("schur_step: rho must be symmetric");

    const Mat ups = layer_j.upsilon();
    const Mat ups_c = ups.conjugate();
    // K = conj(t)^{-1} Phi; the recursion applies conj(K) on the left and
    // K^{-1} = Phi^H conj(t) on the right.
    const Mat wl = layer_j.t_inv() * layer_j.phi.conjugate();
    const Mat wr = layer_j.phi.adjoint() * layer_j.t().conjugate();
    const double dx = layer_j.dx;
    const int m = static_cast<int>(r_j.omega.size());

    SpectrumGrid out;
    out.modes = r_j.modes;
    out.omega = r_j.omega;
    out.r.assign(m, Mat());

    util::parallel_for(m, threads, [&](int begin, int end) {
        Mat a(p, p), gt(p, p), x(p, p), tmp(p, p);
        Eigen::PartialPivLU<Mat> lu(p);
        Vec z(p);
        const Mat ups_ct = ups_c.transpose();
        for (int i = begin; i < end; ++i) {
            const Mat& r = r_j.r[i];
            // X = (R - Ups) [I - conj(Ups) R]^{-1}, via the transposed solve.
            a.noalias() = -r.transpose() * ups_ct;
            a.diagonal().array() += 1.0;
            lu.compute(a);
            // Pivot-ratio conditioning proxy; the absolute floor keeps a
            // fully cancelled (I - conj(Ups) R ~ 0) case from slipping
            // through as "well-scaled".
            const RVec udiag = lu.matrixLU().diagonal().cwiseAbs();
            if (udiag.minCoeff() <
                std::max(1.0, udiag.maxCoeff()) / tol::cond_max)
                throw NearSingularPeelError(
                    "schur_step: I - conj(Ups) R nearly singular at grid "
                    "index " +
                    std::to_string(i));
            gt.noalias() = (r - ups).transpose();
            x.noalias() = lu.solve(gt).transpose();
            tmp.noalias() = wl * x;
            x.noalias() = tmp * wr;
            const RVec beta = modes.real_phase_rates(r_j.omega(i));
            for (int q = 0; q < p; ++q)
                z(q) = std::exp(cx(0, -beta(q) * dx));
            out.r[i] = z.asDiagonal() * x * z.asDiagonal();
        }
    });
    return out;
}

RMat index_compensation(const SpectrumGrid& spec, const WindowFn& window,
                        const ModeSet& modes, double n0, double dx,
                        int n_echoes) {
    spec.validate();
    modes.validate();
    if (!(n0 > 0) || !(dx > 0) || n_echoes < 1)
        throw ConfigError("index_compensation: n0, dx, n_echoes must be > 0");
    const int m = static_cast<int>(spec.omega.size());
    const double hw = spec.half_width();
    const double center = spec.center();

    // S(tau) = sum over the echo raster of the normalized window response,
    //   S(tau) = 1 + 2 sum_{k=1..K} G(k tau),
    //   G(tau) = sum_i wt_i W_i cos((omega_i - center) tau) / sum_i wt_i W_i.
    // Swapping the sums turns the k-sum into a closed-form Dirichlet kernel,
    //   sum_{k=1..K} cos(k theta) = sin((K + 1/2) theta)/(2 sin(theta/2)) - 1/2,
    // so each raster costs one pass over the grid.  Computing G on the actual
    // discrete grid (trapezoid weights included) keeps the quadrature honest.
    // Echoes past half the grid's unambiguous delay range 2*pi/grid-spacing
    // are excluded: on an undersized grid they alias back onto the window's
    // passband, which is a sizing problem (reported via the bandwidth
    // margin), not a raster-density effect this factor should absorb.
    const double t_max = M_PI * (m - 1) / hw;
    auto raster_sum = [&](double tau) {
        const int k_eff = std::min<long long>(
            n_echoes,
            static_cast<long long>(std::floor(0.5 * t_max / tau)));
        if (k_eff < 1) return 1.0;
        const double kk = k_eff + 0.5;
        double mass = 0, acc = 0;
        for (int i = 0; i < m; ++i) {
            const double wq = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            const double wv = wq * window((spec.omega(i) - center) / hw);
            const double th = (spec.omega(i) - center) * tau;
            const double s = std::sin(0.5 * th);
            const double d = (s == 0.0) ? static_cast<double>(k_eff)
                                        : std::sin(kk * th) / (2.0 * s) - 0.5;
            mass += wv;
            acc += wv * d;
        }
        if (mass <= 0)
            throw DegenerateWindowError(
                "index_compensation: window mass vanished");
        return 1.0 + 2.0 * acc / mass;
    };

    const double tau0 = 2.0 * n0 * dx / modes.c0;
    const double s0 = raster_sum(tau0);
    RMat comp = RMat::Ones(modes.p, modes.p);
    for (int a = 0; a < modes.p; ++a)
        for (int b = a; b < modes.p; ++b) {
            const double tau = (modes.n(a) + modes.n(b)) * dx / modes.c0;
            const double spq = (tau == tau0) ? s0 : raster_sum(tau);
            if (!(spq > 0) || !std::isfinite(spq) || !std::isfinite(s0))
                throw Error(
                    "index_compensation: raster sum vanished; the "
                    "window/grid cannot support the correction");
            comp(a, b) = comp(b, a) = s0 / spq;
        }
    return comp;
}

StripResult layer_strip(const SpectrumGrid& spec, const InverseConfig& cfg,
                        const ModeSet& modes) {
    cfg.validate();
    spec.validate();
    modes.validate();
    const int p = modes.p;
    if (spec.modes.p != p)
        throw ConfigError("layer_strip: spectrum/mode-count mismatch");

    StripResult out;
    out.diag.input_norm = windowed_rms(spec, cfg.window);
    out.diag.bandwidth_margin = forward::bandwidth_margin(spec, cfg.dx);
    if (out.diag.bandwidth_margin < 10.0)
        out.diag.warnings.push_back(
            "bandwidth margin " + std::to_string(out.diag.bandwidth_margin) +
            " is below 10; the zeroth impulse weight may carry significant "
            "leakage from neighbouring layers");

    RMat comp;
    if (cfg.index_correction)
        comp = index_compensation(spec, cfg.window, modes, cfg.n0, cfg.dx,
                                  cfg.n_layers);

    SpectrumGrid r = spec;
    std::optional<Identification> prev;
    for (int j = 0; j < cfg.n_layers; ++j) {
        try {
            Mat h0 = forward::zeroth_impulse_weight(r, cfg.window);
            const double asym = (h0 - h0.transpose()).norm();
            Mat h = 0.5 * (h0 + h0.transpose());
            if (cfg.index_correction)
                for (int a = 0; a < p; ++a)
                    for (int b = 0; b < p; ++b) h(a, b) *= comp(a, b);
            Identification id =
                identify_layer(h, cfg, prev ? &*prev : nullptr);
            id.diag.asymmetry = asym;
            Layer lay;
            lay.rho = id.rho;
            lay.phi = id.phi;
            lay.dx = cfg.dx;
            r = schur_step(r, lay, modes, cfg.threads);
            out.layers.push_back(std::move(lay));
            out.diag.layers.push_back(id.diag);
            prev = std::move(id);
        } catch (...) {
            rethrow_with_layer(j);
        }
    }
    out.diag.residual_norm = windowed_rms(r, cfg.window);
    return out;
}

Mat born_leading_edge(const Mat& h0, const ModeSet& modes) {
    modes.validate();
    if (h0.rows() != modes.p || h0.cols() != modes.p)
        throw Error("born_leading_edge: size mismatch");
    Mat kappa(modes.p, modes.p);
    for (int a = 0; a < modes.p; ++a)
        for (int b = 0; b < modes.p; ++b)
            kappa(a, b) = std::conj(cx(0, -1) * h0(a, b) *
                                    (modes.n(a) + modes.n(b)) / modes.c0);
    return kappa;
}

double windowed_rms(const SpectrumGrid& spec, const WindowFn& window) {
    spec.validate();
    const int m = static_cast<int>(spec.omega.size());
    const double hw = spec.half_width();
    const double center = spec.center();
    double mass = 0, acc = 0;
    for (int i = 0; i < m; ++i) {
        const double wq = (i == 0 || i == m - 1) ? 0.5 : 1.0;
        const double wv = wq * window((spec.omega(i) - center) / hw);
        mass += wv;
        acc += wv * spec.r[i].squaredNorm();
    }
    if (mass <= 0) return 0.0;
    return std::sqrt(acc / mass);
}

// ---------------------------------------------------------------------- IO

void write_layers_csv(const std::filesystem::path& path,
                      const std::vector<Layer>& layers) {
    std::ofstream f(path);
    if (!f) throw Error("write_layers_csv: cannot open " + path.string());
    if (layers.empty()) throw Error("write_layers_csv: no layers");
    const int p = static_cast<int>(layers.front().rho.rows());
    f << "j,x";
    for (int a = 1; a <= p; ++a)
        for (int b = 1; b <= p; ++b)
            f << ",Re_rho_" << a << "_" << b << ",Im_rho_" << a << "_" << b;
    for (int a = 1; a <= p; ++a)
        for (int b = 1; b <= p; ++b)
            f << ",Re_phi_" << a << "_" << b << ",Im_phi_" << a << "_" << b;
    f << "\n";
    double x = 0;
    for (size_t j = 0; j < layers.size(); ++j) {
        f << j << "," << util::fmt_g17(x);
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b)
                f << "," << util::fmt_g17(layers[j].rho(a, b).real()) << ","
                  << util::fmt_g17(layers[j].rho(a, b).imag());
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b)
                f << "," << util::fmt_g17(layers[j].phi(a, b).real()) << ","
                  << util::fmt_g17(layers[j].phi(a, b).imag());
        f << "\n";
        x += layers[j].dx;
    }
    if (!f) throw Error("write_layers_csv: write failed");
}

std::vector<Layer> read_layers_csv(const std::filesystem::path& path, int p,
                                   double dx_fallback) {
    std::ifstream f(path);
    if (!f)
        throw IngestionError("read_layers_csv: cannot open " + path.string());
    const size_t ncol = 2 + 4 * size_t(p) * size_t(p);
    auto split = [](const std::string& line) {
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
    };
    auto num = [](const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size() || s.empty())
            throw IngestionError("layers csv: bad number '" + s + "'");
        return v;
    };
    std::string line;
    if (!std::getline(f, line)) throw IngestionError("layers csv: empty file");
    if (split(line).size() != ncol)
        throw IngestionError("layers csv: header does not match p=" +
                             std::to_string(p));
    std::vector<Layer> layers;
    std::vector<double> xs;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != ncol)
            throw IngestionError("layers csv: wrong column count in row " +
                                 std::to_string(layers.size() + 2));
        xs.push_back(num(cells[1]));
        Layer l;
        l.rho.resize(p, p);
        l.phi.resize(p, p);
        size_t c = 2;
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) {
                const double re = num(cells[c++]);
                l.rho(a, b) = cx(re, num(cells[c++]));
            }
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) {
                const double re = num(cells[c++]);
                l.phi(a, b) = cx(re, num(cells[c++]));
            }
        layers.push_back(std::move(l));
    }
    if (layers.empty()) throw IngestionError("layers csv: no layer rows");
    double dx = dx_fallback;
    if (xs.size() >= 2) dx = xs[1] - xs[0];
    if (!(dx > 0))
        throw IngestionError("layers csv: cannot determine dx");
    for (auto& l : layers) l.dx = dx;
    return layers;
}

void write_diagnostics_json(const std::filesystem::path& path,
                            const StripDiagnostics& diag) {
    nlohmann::json root;
    root["schema_version"] = 1;
    root["n_layers"] = diag.layers.size();
    root["input_norm"] = diag.input_norm;
    root["residual_norm"] = diag.residual_norm;
    root["bandwidth_margin"] = diag.bandwidth_margin;
    root["warnings"] = diag.warnings;
    auto layers = nlohmann::json::array();
    for (size_t j = 0; j < diag.layers.size(); ++j) {
        const LayerDiagnostics& d = diag.layers[j];
        nlohmann::json l;
        l["j"] = j;
        l["sigma"] = std::vector<double>(d.sigma.data(),
                                         d.sigma.data() + d.sigma.size());
        l["zero_flagged"] = d.zero_flagged;
        l["degenerate_flagged"] = d.degenerate_flagged;
        l["ambiguous"] = d.ambiguous;
        l["sign_flips"] = d.sign_flips;
        l["j_fix_applied"] = d.j_fix_applied;
        l["family_imaginary"] = d.family_imaginary;
        l["asymmetry"] = d.asymmetry;
        l["h0_norm"] = d.h0_norm;
        if (!d.note.empty()) l["note"] = d.note;
        layers.push_back(std::move(l));
    }
    root["layers"] = std::move(layers);
    std::ofstream f(path);
    if (!f)
        throw Error("write_diagnostics_json: cannot open " + path.string());
    f << root.dump(2) << "\n";
    if (!f) throw Error("write_diagnostics_json: write failed");
}

}  // namespace modepeel::inverse
