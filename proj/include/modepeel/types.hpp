#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace modepeel {

using cx = std::complex<double>;
using Mat = Eigen::MatrixXcd;   // dense complex, column-major, value semantics
using RMat = Eigen::MatrixXd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double c_light = 2.99792458e8;  // vacuum speed of light, m/s

// Error taxonomy.  Every throwing precondition in the library maps to one of
// these, so callers (and the CLI) can distinguish bad input from numerical
// breakdown without string matching.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define MODEPEEL_DEFINE_ERROR(NAME)          \
    struct NAME : Error {                    \
        using Error::Error;                  \
    }

MODEPEEL_DEFINE_ERROR(NonFiniteError);        // NaN/Inf in an input
MODEPEEL_DEFINE_ERROR(AsymmetricInputError);  // matrix required symmetric is not
MODEPEEL_DEFINE_ERROR(NotUnitaryError);       // matrix required unitary is not
MODEPEEL_DEFINE_ERROR(CommutationViolationError);
MODEPEEL_DEFINE_ERROR(ReflectorTooStrongError);  // ||rho|| >= 1 - margin
MODEPEEL_DEFINE_ERROR(SingularBlockError);       // block inversion beyond cond limit
MODEPEEL_DEFINE_ERROR(NotReciprocalError);
MODEPEEL_DEFINE_ERROR(NotLosslessError);
MODEPEEL_DEFINE_ERROR(DegenerateWindowError);  // window weight sums to ~zero
MODEPEEL_DEFINE_ERROR(NearSingularPeelError);  // peel-step solve beyond cond limit
MODEPEEL_DEFINE_ERROR(BranchOverflowError);    // matrix log/atanh off principal branch
MODEPEEL_DEFINE_ERROR(UnderdeterminedFitError);
MODEPEEL_DEFINE_ERROR(IngestionError);  // malformed or unphysical file content
MODEPEEL_DEFINE_ERROR(ConfigError);

#undef MODEPEEL_DEFINE_ERROR

// Shared tolerance constants.  Factorization defects are held to tol::fact;
// symmetry of ingested reflection data to tol::sym; physical-classification
// defects (reciprocity/unitarity of synthesized spectra) to tol::phys.
namespace tol {
inline constexpr double fact = 1e-10;      // factorization residuals
inline constexpr double sym = 1e-8;        // symmetric-input acceptance
inline constexpr double phys = 1e-6;       // ingestion-level physicality checks
inline constexpr double margin = 1e-6;     // strict-contraction margin on ||rho||
inline constexpr double cond_max = 1e12;   // abort threshold for block inversions
inline constexpr double sv_zero_rel = 1e-6;   // sigma treated as zero, rel. to max
inline constexpr double sv_degen_rel = 1e-4;  // sigma cluster gap, rel. to max
}  // namespace tol

}  // namespace modepeel
