#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "modepeel/core.hpp"

// Forward (direct) solver: reflection spectra of a layered structure and the
// windowed zeroth impulse weight
//
//     h0 ~ ( sum_i w_i W(omega_i) R(omega_i) ) / ( sum_i w_i W(omega_i) ),
//
// trapezoid weights w_i.  On a grid spanning exactly the principal band of
// the dx-discretized model (half-width pi c / (2 n0 dx)) with a rectangular
// window this is the DFT-bin average, and h0 equals the front layer's dressed
// reflector up to out-of-band leakage from later arrivals.

namespace modepeel::forward {

using core::BlockMatrix2P;
using core::Layer;
using core::ModeSet;

struct WindowFn {
    enum class Kind { rectangular, raised_cosine, gaussian };
    Kind kind = Kind::raised_cosine;
    double gauss_nsigma = 3.0;  // gaussian: sigma = half_width / nsigma

    // Weight at offset u = (omega - center)/half_width, u in [-1, 1];
    // normalized so the center weight is 1 and W >= 0.
    double operator()(double u) const;
    static WindowFn rectangular() { return {Kind::rectangular, 3.0}; }
    static WindowFn raised_cosine() { return {Kind::raised_cosine, 3.0}; }
};

struct SpectrumGrid {
    ModeSet modes;
    RVec omega;              // uniform grid values (absolute or detuning), rad/s
    std::vector<Mat> r;      // reflection matrix per grid point
    double half_width() const;
    double center() const;
    void validate() const;
};

// Principal half-bandwidth of the dx-discretized model: pi c / (2 n0 dx).
double principal_half_width(double n0, double dx, double c0 = c_light);

// Uniform symmetric grid of m points on [center - hw, center + hw].
RVec make_grid(double center, double half_width, int m);

// Accumulated transfer matrix of the whole structure at grid value w.
BlockMatrix2P structure_transfer(const std::vector<Layer>& layers,
                                 const ModeSet& modes, double w);

// Reflection spectrum R(w) = S11(w) seen from x = 0.  Layers are listed
// front to back.  threads > 1 splits the grid (deterministic per-slot
// writes, result independent of the split).
SpectrumGrid simulate_reflection(const std::vector<Layer>& layers,
                                 const ModeSet& modes, const RVec& grid,
                                 int threads = 1);

// Smallest one-way delay rate among the modes times dx: min_p n_p dx / c.
double min_delay(const ModeSet& modes, double dx);

// Ratio  half_width * min one-way layer delay; below ~10 the zeroth impulse
// weight carries visible leakage from the neighbouring layers.
double bandwidth_margin(const SpectrumGrid& spec, double dx);

// Windowed average of the spectrum (trapezoid quadrature).  Throws
// DegenerateWindowError if the window mass vanishes.
Mat zeroth_impulse_weight(const SpectrumGrid& spec, const WindowFn& window);

// Windowed inverse Fourier transform on the supplied time grid (diagnostic).
std::vector<Mat> impulse_response(const SpectrumGrid& spec,
                                  const WindowFn& window, const RVec& times);

}  // namespace modepeel::forward
