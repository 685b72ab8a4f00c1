#pragma once

#include <filesystem>

#include "modepeel/forward.hpp"

// Reflection-spectrum CSV: header
//   omega,Re_R_1_1,Im_R_1_1,...,Re_R_P_P,Im_R_P_P
// one row per grid point, elements row-major (p outer, q inner, 1-based),
// values at full double precision (17 significant digits), omega in rad/s
// (absolute or detuning per the mode convention; the run manifest says which).

namespace modepeel::forward {

void write_spectrum_csv(const std::filesystem::path& path,
                        const SpectrumGrid& spec);

// Reads a spectrum for the given mode set.  Enforces element count, finite
// values, grid monotonicity, and reciprocity |R - R^T| <= tol (IngestionError
// otherwise); the returned matrices are symmetrized.  When raw_asymmetry is
// non-null the reciprocity check is skipped and the largest |R - R^T| entry
// seen is reported there instead (for physicality audits).
SpectrumGrid read_spectrum_csv(const std::filesystem::path& path,
                               const core::ModeSet& modes,
                               double recip_tol = tol::phys,
                               double* raw_asymmetry = nullptr);

}  // namespace modepeel::forward
