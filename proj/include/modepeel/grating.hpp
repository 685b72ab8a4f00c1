#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modepeel/core.hpp"

// Quasi-sinusoidal grating specialization.
//
// The refractive-index perturbation is modelled as
//
//     dn(x) = dn_ac(x) cos(2 pi x / Lambda + theta(x)) + dn_dc(x)
//
// with envelopes dn_ac, dn_dc, theta slowly varying on the carrier period
// Lambda.  In the co-rotating (envelope) frame the local coupling matrices
// become
//
//     kappa(x) = -i (dn_ac(x)/2) eta,
//     sigma(x) =  dn_dc(x) eta - (1/2) (dtheta/dx)(x) I,
//
// where eta is a fixed real symmetric positive semidefinite overlap matrix
// (units 1/m) describing how strongly each mode pair rides the perturbation.
// Because every kappa and sigma shares eta's eigenbasis, the exact layer
// factors  rho = i tanh(s dx) s^-1 kappa*  (s = (kappa* kappa)^{1/2})  and
// Phi = exp(i sigma dx) reduce to scalar functions of eta's eigenvalues: a
// single eigendecomposition serves the whole profile.
//
// The reverse direction inverts each layer back to (kappa, sigma) through
// atanh of the reflector's singular values and the principal matrix logarithm
// of Phi, then least-squares fits the envelope values from the diagonals:
// dn_ac from diag(kappa) against -(i/2) diag(eta), and (dn_dc, dtheta/dx)
// jointly from diag(sigma) against [diag(eta), -1/2].  The joint dc/chirp fit
// needs P >= 2 modes with non-constant diag(eta); a single-mode measurement
// cannot separate a dc index offset from a chirp.

namespace modepeel::grating {

using core::Layer;
using core::ModeSet;

struct GratingProfile {
    ModeSet modes;    // carrier-referenced convention (lambda_period > 0)
    RMat eta;         // P x P real symmetric PSD overlap matrix, 1/m
    double dx = 0.0;  // sample spacing = layer width, m
    RVec x;           // uniform sample positions (layer midpoints), m
    RVec dn_ac;       // ac modulation envelope, dimensionless, >= 0
    RVec dn_dc;       // dc index offset envelope, dimensionless
    RVec theta_rate;  // dtheta/dx, 1/m

    int n_samples() const { return static_cast<int>(x.size()); }
    void validate() const;  // ConfigError on any violated invariant
};

struct CouplingPair {
    Mat kappa;   // complex symmetric; i*kappa Hermitian PSD for dn_ac >= 0
    RMat sigma;  // real symmetric
};

// Exact elementwise evaluation of the coupling formulas at sample i.
CouplingPair coupling_at(const GratingProfile& profile, int i);

// Exact factors of one piecewise-constant layer with arbitrary (symmetric)
// coupling matrices; generic eigendecomposition route, independent of the
// shared-eigenbasis fast path below.
Layer layer_from_coupling(const Mat& kappa, const Mat& sigma, double dx);
Layer layer_from_coupling(const CouplingPair& coupling, double dx);

// Inverse of layer_from_coupling for a valid layer:
//   kappa = (i/dx) g(m) conj(rho),  m = (rho^H rho)^{1/2},  g(t) = atanh(t)/t,
//   sigma = -i Log(Phi) / dx       (principal branch).
// Throws BranchOverflowError when an eigenphase of Phi sits on the branch cut
// (a codirectional rotation of pi or more per layer cannot be represented).
CouplingPair coupling_from_layer(const Layer& layer);

// All layers of a profile, front to back, by the closed forms
//   rho_j  = -Q tanh((dn_ac/2) lambda dx) Q^T,
//   Phi_j  = e^{-i theta' dx / 2} Q exp(i dn_dc lambda dx) Q^T,
// with eta = Q diag(lambda) Q^T computed once.  Appends a warning per sample
// with ||kappa|| dx > 0.3 (discrete layers depart from the continuum there)
// and throws ReflectorTooStrongError at ||kappa|| dx >= 1.
std::vector<Layer> layers_from_profile(const GratingProfile& profile,
                                       std::vector<std::string>* warnings = nullptr);

struct FitOptions {
    bool fit_dc = true;     // estimate dn_dc (else reported as 0)
    bool fit_chirp = true;  // estimate dtheta/dx (else reported as 0)
};

struct ProfileFit {
    GratingProfile profile;
    RVec residual_ac;          // per sample: || diag(kappa) + (i/2) dn_ac diag(eta) ||_2
    RVec residual_dc;          // per sample: || diag(sigma) - dn_dc diag(eta) + theta_rate/2 ||_2
    double max_abs_phase = 0;  // largest |eigenphase| of any Phi (branch headroom to pi)
};

// Per-layer inversion to (kappa, sigma) followed by the diagonal least-squares
// fits.  dn_ac estimates are clamped at zero (amplitude convention; the phase
// lives in theta); residuals are computed against the returned values.  The
// reconstructed x grid is midpoint-based, x_i = (i + 1/2) dx.  Throws
// UnderdeterminedFitError when the requested fit is not separable (P = 1 with
// both dc and chirp, or diag(eta) constant).
ProfileFit profile_from_layers(const std::vector<Layer>& layers, const RMat& eta,
                               const ModeSet& modes, const FitOptions& options = {});

// Bundled four-mode example profile: L = 20 mm in N = 2000 layers of 10 um;
// raised-cosine ac envelope peaking at 1e-3; Gaussian (7 mm FWHM) dc envelope
// peaking at 5e-4, modulated by a sine of 4 mm period; linear chirp of
// dtheta/dx centred on x = L/2; four modes at 1.55 um with the overlap matrix
// eta_library()["fourmode"].
GratingProfile example_profile_sec5();

// Named overlap matrices (each real symmetric PSD).
std::map<std::string, RMat> eta_library();

// Profile samples as CSV `x,dn_ac,dn_dc,dtheta_dx`; eta as JSON (p, row-major
// values, units 1/m).  Reading re-validates everything and throws
// IngestionError on malformed input.
void write_profile_csv(const std::filesystem::path& path,
                       const GratingProfile& profile);
GratingProfile read_profile_csv(const std::filesystem::path& path,
                                const ModeSet& modes, const RMat& eta);
void write_eta_json(const std::filesystem::path& path, const RMat& eta);
RMat read_eta_json(const std::filesystem::path& path);

}  // namespace modepeel::grating
