#pragma once

// Shared deterministic random-matrix generators for the unit tests.  All
// draws go through std::mt19937_64 with explicit seeds so every run (and
// every platform with the same libstdc++) sees identical inputs.

#include <random>

#include "modepeel/types.hpp"

namespace testutil {

using modepeel::cx;
using modepeel::Mat;
using modepeel::RMat;
using modepeel::RVec;
using modepeel::Vec;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Mat gauss_mat(int r, int c, std::mt19937_64& g) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = cx(n(g), n(g));
    return m;
}

inline RMat gauss_rmat(int r, int c, std::mt19937_64& g) {
    std::normal_distribution<double> n(0.0, 1.0);
    RMat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = n(g);
    return m;
}

// Complex symmetric matrix with entries O(scale).
inline Mat rand_symmetric(int p, std::mt19937_64& g, double scale = 1.0) {
    Mat a = gauss_mat(p, p, g);
    return scale * 0.5 * (a + a.transpose());
}

// Haar-distributed unitary (QR of a Ginibre matrix, R-diagonal phases fixed).
inline Mat rand_unitary(int p, std::mt19937_64& g) {
    Mat a = gauss_mat(p, p, g);
    Eigen::HouseholderQR<Mat> qr(a);
    Mat q = qr.householderQ();
    Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int k = 0; k < p; ++k) {
        cx d = r(k, k);
        q.col(k) *= (std::abs(d) > 0) ? d / std::abs(d) : cx(1, 0);
    }
    return q;
}

// Real orthogonal with det +1.
inline RMat rand_rotation(int p, std::mt19937_64& g) {
    RMat a = gauss_rmat(p, p, g);
    Eigen::HouseholderQR<RMat> qr(a);
    RMat q = qr.householderQ();
    RMat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int k = 0; k < p; ++k)
        if (r(k, k) < 0) q.col(k) = -q.col(k);
    if (q.determinant() < 0) q.col(0) = -q.col(0);
    return q;
}

// Symmetric unitary with eigenphases drawn in (-phase_max, phase_max).
inline Mat rand_sym_unitary(int p, std::mt19937_64& g, double phase_max = 1.2) {
    RMat q = rand_rotation(p, g);
    std::uniform_real_distribution<double> u(-phase_max, phase_max);
    Vec d(p);
    for (int k = 0; k < p; ++k) d(k) = std::polar(1.0, u(g));
    Mat w = q.cast<cx>() * d.asDiagonal() * q.transpose().cast<cx>();
    return 0.5 * (w + w.transpose());
}

}  // namespace testutil
