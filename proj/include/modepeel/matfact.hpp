#pragma once

#include <vector>

#include "modepeel/types.hpp"

// Factorizations of small complex matrices that drive the layer
// identification machinery:
//
//   takagi                — symmetric factorization  A = U^T diag(sigma) U
//   orth_sym_factor       — unitary split            U = P * Phi,
//                           P real orthogonal, Phi symmetric unitary
//   sym_unitary_eig       — W = Q diag(lambda) Q^T with Q real orthogonal
//   takagi_of_symmetric_unitary — principal square root of a symmetric
//                           unitary constrained to commute with a given
//                           real diagonal
//
// All routines are deterministic (fixed seed-free algorithms, LAPACK-ordered
// spectra, canonical sign conventions) so repeated runs give identical bits.

namespace modepeel::matfact {

struct TakagiResult {
    RVec sigma;  // singular values, descending, >= 0; zero-cluster entries set to 0
    Mat u;       // unitary; A = u^T * diag(sigma) * u
    // Diagnostics: cluster id per position (equal ids = degenerate within the
    // relative threshold), count of singular values treated as zero (trailing),
    // and whether any nonzero value is repeated.
    std::vector<int> cluster;
    int zero_count = 0;
    bool degenerate = false;
};

// Symmetric (con-eigenvalue) factorization of a complex symmetric matrix.
// Rows of u are sign-canonicalized: the largest-magnitude entry of each row
// has Re > 0 (ties broken toward +Im).  For repeated or zero singular values
// the factor is unique only up to a block unitary J with J^T J = I on the
// degenerate subspace; the diagnostics flag those positions and any such J
// gives the same reconstruction.
TakagiResult takagi(const Mat& a,
                    double zero_rel = tol::sv_zero_rel,
                    double degen_rel = tol::sv_degen_rel);

struct OrthSymResult {
    RMat p;   // real orthogonal
    Mat phi;  // symmetric unitary, eigenphases in (-pi/2, pi/2]
};

// Splits a unitary u into u = p * phi.  The branch of each eigenphase of phi
// is principal (real part of the square root >= 0; exactly zero resolves to
// +i).  With normalize_det the determinant of p is forced to +1 by flipping
// the branch with the smallest |Re|; leave it off when phi is known a priori
// to have eigenphases strictly inside (-pi/2, pi/2), in which case the
// principal branch alone already selects the physical factor pair.
OrthSymResult orth_sym_factor(const Mat& u, bool normalize_det = true);

struct SymUnitaryEig {
    RMat q;      // real orthogonal
    Vec lambda;  // unit-modulus eigenvalues; w = q * diag(lambda) * q^T
};
SymUnitaryEig sym_unitary_eig(const Mat& w, double check_tol = tol::sym);

// Principal symmetric unitary square root of w.  w must commute with diag(d)
// (d real); the root is built per commuting block, so it commutes with the
// same diagonal by construction.
Mat takagi_of_symmetric_unitary(const Mat& w, const RVec& d,
                                double comm_tol = tol::sym);

// Matrix exponential (scaling-and-squaring Pade).
Mat mat_exp(const Mat& a);

// Principal square root of a Hermitian PSD matrix; eigenvalues below zero by
// roundoff are clamped.
Mat sqrt_psd(const Mat& h);

// Orthogonal Q jointly diagonalizing two commuting real symmetric matrices
// (one-shot eigendecomposition of a fixed generic combination, then Jacobi
// sweeps minimizing the joint off-diagonal energy).
RMat joint_diag_commuting_sym(const RMat& x, const RMat& y);

}  // namespace modepeel::matfact
