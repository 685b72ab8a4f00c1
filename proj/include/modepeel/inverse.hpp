#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "modepeel/forward.hpp"

// Layer-stripping inversion.  The leading edge of the local impulse response
// depends only on the front layer (causality), so each round identifies the
// front reflector/rotator pair from the zeroth impulse weight and then peels
// the layer off the spectrum with the Schur-type recursion
//
//     R_{j+1} = Z K* [R_j - Ups][I - conj(Ups) R_j]^{-1} K^{-1} Z,
//
// K = conj(t)^{-1} Phi, Z = diag(exp(-i beta dx)).  Three identification
// models are supported:
//
//   A: Phi = I, rho = h0 directly (no codirectional coupling).
//   B: rho diagonal nonnegative; Takagi of h0 gives rho (singular values)
//      and Phi (con-eigenvector rows) up to order and row signs.
//   C: Phi symmetric, rho real with a definite sign; Takagi gives Sigma and
//      the unitary V = P Phi (rho = +-P^T Sigma P, P real orthogonal); an
//      orthogonal/symmetric splitting of V separates P from Phi.  When rho
//      is negative semidefinite the same data appears as the equivalent
//      factorization (-rho, i Phi); both phase families are detected and
//      mapped back to the physical pair.
//
// Order/sign/J ambiguities are resolved by continuity with the previous
// layer (minimal-cost singular-value matching, row-sign alignment and, on
// degenerate clusters, Procrustes fits); without continuity they are left
// arbitrary and flagged.

namespace modepeel::inverse {

using core::Layer;
using core::ModeSet;
using forward::SpectrumGrid;
using forward::WindowFn;

enum class Situation {
    A_no_codirectional,
    B_diagonal_rho,
    C_symmetric_phi_psd_rho,
};

struct ContinuityOptions {
    bool enabled = true;
    double sv_zero_threshold = tol::sv_zero_rel;        // relative to max sigma
    double sv_degeneracy_threshold = tol::sv_degen_rel; // relative gap
};

struct InverseConfig {
    int n_layers = 1;
    double dx = 0;
    Situation situation = Situation::A_no_codirectional;
    // Raised cosine over the whole grid keeps echo leakage O(1/k^3) even when
    // the modal indices differ; pair it with a grid spanning several (an even
    // number of) principal periods.  A rectangular window over exactly one
    // principal period is the better choice only when all indices are equal.
    WindowFn window = WindowFn::raised_cosine();
    // Rescale h0 element (p,q) for the mismatch between the pair's echo
    // raster (n_p + n_q) dx / c and the nominal raster 2 n0 dx / c; see
    // index_compensation below.  For a rectangular window spanning exactly
    // one principal period this is the factor (n_p + n_q)/(2 n0); on grids
    // wide enough to resolve the true delays it approaches a no-op.
    bool index_correction = true;
    double n0 = 1.0;
    ContinuityOptions continuity;
    int threads = 1;

    void validate() const;
};

struct LayerDiagnostics {
    RVec sigma;                    // singular values in the assigned order
    bool zero_flagged = false;     // a singular-value cluster at ~0
    bool degenerate_flagged = false;  // repeated nonzero singular values
    bool ambiguous = false;   // degeneracy present with continuity disabled
    int sign_flips = 0;       // row signs flipped for continuity
    bool j_fix_applied = false;    // Procrustes fix on a degenerate cluster
    bool family_imaginary = false; // situation C: data matched (-rho, i Phi)
    double asymmetry = 0;          // ||h0 - h0^T|| before symmetrization
    double h0_norm = 0;            // operator norm of the (corrected) h0
    std::string note;
};

struct StripDiagnostics {
    std::vector<LayerDiagnostics> layers;
    double input_norm = 0;     // windowed RMS of the input spectrum
    double residual_norm = 0;  // same measure after stripping all layers
    double bandwidth_margin = 0;
    std::vector<std::string> warnings;
};

// Identification result plus the continuity context consumed by the next
// layer (assigned singular values and the sign-fixed unitary rows).
struct Identification {
    Mat rho;
    Mat phi;
    LayerDiagnostics diag;
    RVec sigma_ref;
    Mat u_ref;
};

// Factor one zeroth weight h0 = Phi^T rho Phi under the configured model.
// prev supplies the previous layer's context (nullptr for the first layer:
// signs anchor to I, or to i*I for the imaginary family of situation C).
// Throws ReflectorTooStrongError when ||h0|| >= 1 - margin.
Identification identify_layer(const Mat& h0, const InverseConfig& cfg,
                              const Identification* prev);

// One peel: remove the known front layer from the local spectrum.
// Throws NearSingularPeelError when I - conj(Ups) R is too ill-conditioned.
SpectrumGrid schur_step(const SpectrumGrid& r_j, const Layer& layer_j,
                        const ModeSet& modes, int threads = 1);

struct StripResult {
    std::vector<Layer> layers;
    StripDiagnostics diag;
};

// The full loop: extract h0 (windowed zeroth weight, optional index
// correction), identify, peel; repeat n_layers times.  Errors from the
// steps are rethrown with the layer index prepended.
StripResult layer_strip(const SpectrumGrid& spec, const InverseConfig& cfg,
                        const ModeSet& modes);

// Index compensation matrix applied to h0 when index_correction is on.
//
// The echoes seen by mode pair (p,q) recur on the delay raster
// tau_pq = (n_p + n_q) dx / c, while the grid's principal period matches
// the nominal raster tau_0 = 2 n0 dx / c.  Whatever part of the echo
// train the window fails to reject is folded onto the zeroth lag with the
// aggregate weight S(tau) = sum_k G(k tau), where G is the normalized
// window response at delay tau (G(0) = 1); a raster mismatch therefore
// biases the folded-in mass by S(tau_pq)/S(tau_0).  The returned matrix
// C(p,q) = S(tau_0)/S(tau_pq) undoes that bias.  For a rectangular window
// over exactly one principal period, S(tau) = tau_0/tau by Poisson
// summation and C(p,q) = (n_p + n_q)/(2 n0); for a window spanning many
// periods all S -> 1 and C -> ones.  n_echoes bounds the raster sums (use
// the layer count); echoes past half the grid's unambiguous delay range
// are excluded, so an undersized grid degrades toward no compensation
// instead of an aliased one.  Equal-index mode sets always yield ones.
RMat index_compensation(const SpectrumGrid& spec, const WindowFn& window,
                        const ModeSet& modes, double n0, double dx,
                        int n_echoes);

// Born-approximation leading edge: kappa_pq = conj(-i h0_pq (n_p+n_q)/c)
// from the t -> 0+ impulse response of a continuous structure.
Mat born_leading_edge(const Mat& h0, const ModeSet& modes);

// Windowed RMS norm used for the input/residual diagnostics.
double windowed_rms(const SpectrumGrid& spec, const WindowFn& window);

void write_layers_csv(const std::filesystem::path& path,
                      const std::vector<Layer>& layers);

// Inverse of write_layers_csv.  dx is taken from the x column spacing when
// the file has at least two rows, else from dx_fallback (> 0 required then).
// No Layer::validate on the way in: audit tools must be able to load files
// that violate the contraction or symmetry invariants.
std::vector<Layer> read_layers_csv(const std::filesystem::path& path, int p,
                                   double dx_fallback = 0);
void write_diagnostics_json(const std::filesystem::path& path,
                            const StripDiagnostics& diag);

}  // namespace modepeel::inverse
