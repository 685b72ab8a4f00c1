#pragma once

#include <span>
#include <vector>

#include "modepeel/types.hpp"

// Discrete model of a 1-D structure carrying P coupled modes per direction.
//
// State vector E = [u; v] stacks the P forward and P backward mode envelopes.
// A layer of width dx acts by the transfer factorization
//
//     T = T_Z T_rho T_Phi,
//     T_Z   = [[Z^-1, 0], [0, Z]],          Z^-1 = exp(i beta dx)   (diagonal)
//     T_rho = [[t^-1*, -t^-1* rho*], [-t^-1 rho, t^-1]]
//     T_Phi = [[Phi, 0], [0, Phi*]]
//
// with rho the (complex symmetric) local reflector, t = sqrt(I - rho rho*)
// Hermitian positive, and Phi the symmetric unitary co-propagation phase.
// T_rho = exp(i C_kappa dx) and T_Phi = exp(i C_sigma dx) exactly, so the
// factorization is the exact solution of piecewise-constant coupling with the
// three generators applied in sequence; rho = i tanh(s dx) s^-1 kappa* with
// s = (kappa* kappa)^{1/2}, Phi = exp(i sigma dx).

namespace modepeel::core {

struct ModeSet {
    int p = 1;                  // modes per direction
    RVec n;                     // effective indices, > 0 (size p)
    double lambda_period = 0.0; // carrier period; > 0 selects the detuning convention
    double omega0 = 0.0;        // design angular frequency (used when lambda_period > 0)
    double c0 = c_light;
    RVec loss;                  // nonnegative Im(beta), 1/m; synthesis only (empty = lossless)

    void validate() const;

    // Per-mode complex phase rate at grid value w:
    //   lambda_period > 0:  delta_p = n_p (omega0 + w)/c0 - pi/lambda_period + i loss_p
    //   lambda_period = 0:  beta_p  = n_p w / c0 + i loss_p
    Vec phase_rates(double w) const;
    RVec real_phase_rates(double w) const;  // loss dropped (inverse direction)
    RVec delays() const;                    // n_p / c0, s/m
};

struct Layer {
    Mat phi;        // symmetric unitary
    Mat rho;        // complex symmetric, strictly contractive
    double dx = 0;  // width, m

    void validate(double margin = tol::margin) const;
    Mat t() const;        // Hermitian sqrt(I - rho rho*), the transmission factor
    Mat t_inv() const;    // its inverse (throws ReflectorTooStrongError if saturated)
    Mat upsilon() const;  // phi^T rho phi, the dressed reflector seen from the left
};

enum class BlockKind { transfer, scattering };

// 2P x 2P matrix stored as four P x P blocks, tagged by interpretation.
struct BlockMatrix2P {
    Mat b11, b12, b21, b22;
    BlockKind kind = BlockKind::transfer;

    int p() const { return static_cast<int>(b11.rows()); }
    Mat full() const;
    static BlockMatrix2P identity_transfer(int p);
};

// Transfer matrix of one layer at phase rates beta (= phase_rates(w)).
BlockMatrix2P layer_transfer(const Layer& layer, const Vec& beta);

// Scattering matrix of one layer (same conventions; closed forms).
BlockMatrix2P layer_scattering(const Layer& layer, const Vec& beta);

// Conversions.  The inverted block (T22 resp. S12) is condition-checked and
// SingularBlockError is thrown beyond tol::cond_max.
BlockMatrix2P transfer_to_scattering(const BlockMatrix2P& t);
BlockMatrix2P scattering_to_transfer(const BlockMatrix2P& s);

// Product T_{N-1} ... T_1 T_0 for layers listed front (x=0) to back.
BlockMatrix2P compose(std::span<const BlockMatrix2P> transfers);

// Reciprocal lossless scattering matrices factor as
//   S11 = phi_l^T diag(rho) phi_l,   S22 = -phi_r diag(rho) phi_r^T,
//   S21 = phi_r diag(t) phi_l,       S12 = S21^T,     t = sqrt(1 - rho^2).
struct Sandwich {
    Mat phi_l;  // unitary
    RVec rho;   // nonnegative, descending
    Mat phi_r;  // unitary
};
Sandwich sandwich_decompose(const BlockMatrix2P& s, double phys_tol = tol::sym);

struct PhysReport {
    double reciprocity_defect = 0;  // || S - S^T ||_2
    double unitarity_defect = 0;    // || S^H S - I ||_2
    double contraction_defect = 0;  // max(0, ||S11||_2 - 1)
    double s11_norm = 0;            // ||S11||_2
};
PhysReport check_physical(const BlockMatrix2P& s);

}  // namespace modepeel::core
