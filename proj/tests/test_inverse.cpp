#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "modepeel/inverse.hpp"
#include "modepeel/matfact.hpp"
#include "test_helpers.hpp"

using namespace modepeel;
using namespace modepeel::core;
using namespace modepeel::forward;
using namespace modepeel::inverse;
using testutil::rng;

namespace {

ModeSet equal_modes(int p, double n) {
    ModeSet m;
    m.p = p;
    m.n = RVec::Constant(p, n);
    return m;
}

Layer make_layer(const Mat& rho, const Mat& phi, double dx) {
    Layer l;
    l.rho = rho;
    l.phi = phi;
    l.dx = dx;
    return l;
}

// Random complex symmetric reflector clamped below a norm bound.
Mat bounded_symmetric(int p, std::mt19937_64& g, double bound) {
    Mat a = testutil::rand_symmetric(p, g, bound);
    const double nrm = a.operatorNorm();
    if (nrm > bound) a *= bound / nrm;
    return a;
}

// Near-identity real rotation and real symmetric generator helpers.
RMat small_rotation(int p, std::mt19937_64& g, double scale) {
    RMat b = testutil::gauss_rmat(p, p, g);
    RMat a = scale * 0.5 * (b - b.transpose());
    return matfact::mat_exp(a.cast<cx>()).real();
}

Mat small_sym_unitary(int p, std::mt19937_64& g, double scale) {
    RMat b = testutil::gauss_rmat(p, p, g);
    RMat s = scale * 0.5 * (b + b.transpose());
    return matfact::mat_exp(cx(0, 1) * s.cast<cx>());
}

// Max over rows of the distance to the target row modulo a sign.
double row_defect_up_to_sign(const Mat& got, const Mat& want) {
    double worst = 0;
    for (int i = 0; i < got.rows(); ++i) {
        const double d = std::min((got.row(i) - want.row(i)).norm(),
                                  (got.row(i) + want.row(i)).norm());
        worst = std::max(worst, d);
    }
    return worst;
}

// Commensurate principal-band grid: with equal indices every echo delay is a
// multiple of 2 n dx / c, and a rectangular window over exactly this band
// averages all echo harmonics to zero (up to harmonics aliased at m-1).
SpectrumGrid simulate_equal(const std::vector<Layer>& layers, const ModeSet& m,
                            double dx, int npts = 257) {
    const double hw = principal_half_width(m.n(0), dx);
    return simulate_reflection(layers, m, make_grid(0.0, hw, npts));
}

InverseConfig strip_config(Situation s, int n_layers, double dx, double n0) {
    InverseConfig cfg;
    cfg.situation = s;
    cfg.n_layers = n_layers;
    cfg.dx = dx;
    cfg.n0 = n0;
    cfg.window = WindowFn::rectangular();
    return cfg;
}

}  // namespace

TEST_CASE("schur_step: a single layer peels to the zero spectrum") {
    auto g = rng(2001);
    ModeSet m = equal_modes(2, 1.5);
    const double dx = 1e-5;
    Mat rho = bounded_symmetric(2, g, 0.35);
    Layer lay = make_layer(rho, testutil::rand_sym_unitary(2, g, 0.6), dx);
    auto spec = simulate_equal({lay}, m, dx, 65);
    auto peeled = schur_step(spec, lay, m);
    for (const Mat& r : peeled.r) CHECK(r.norm() < 1e-13);
}

TEST_CASE("schur_step: a transparent layer unwinds the propagation phase") {
    ModeSet m;
    m.p = 2;
    m.n = RVec(2);
    m.n << 1.3, 1.7;
    const double dx = 2e-6;
    auto g = rng(2002);
    // Arbitrary symmetric synthetic data; the peel of (rho=0, phi=I) must be
    // R'(w) = Z R(w) Z elementwise.
    SpectrumGrid spec;
    spec.modes = m;
    spec.omega = make_grid(0.0, 1e12, 11);
    for (int i = 0; i < 11; ++i)
        spec.r.push_back(bounded_symmetric(2, g, 0.4));
    Layer lay = make_layer(Mat::Zero(2, 2), Mat::Identity(2, 2), dx);
    auto peeled = schur_step(spec, lay, m);
    for (int i = 0; i < 11; ++i) {
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                const double ph = -(m.n(a) + m.n(b)) * spec.omega(i) * dx /
                                  c_light;
                const cx want = spec.r[i](a, b) * std::exp(cx(0, ph));
                CHECK(std::abs(peeled.r[i](a, b) - want) < 1e-14);
            }
    }
}

TEST_CASE("schur_step: peeling layer 0 of a two-layer stack leaves layer 1") {
    auto g = rng(2003);
    ModeSet m;
    m.p = 3;
    m.n = RVec(3);
    m.n << 1.47, 1.44, 1.40;
    const double dx = 1e-5;
    std::vector<Layer> both;
    for (int j = 0; j < 2; ++j)
        both.push_back(make_layer(bounded_symmetric(3, g, 0.3),
                                  testutil::rand_sym_unitary(3, g, 0.5), dx));
    RVec grid = make_grid(0.0, 4e12, 33);
    auto spec2 = simulate_reflection(both, m, grid);
    auto spec1 = simulate_reflection({both[1]}, m, grid);
    auto peeled = schur_step(spec2, both[0], m);
    for (int i = 0; i < grid.size(); ++i)
        CHECK((peeled.r[i] - spec1.r[i]).norm() < 1e-10);
}

TEST_CASE("schur_step: inconsistent data trips the conditioning gate") {
    ModeSet m = equal_modes(1, 1.5);
    SpectrumGrid spec;
    spec.modes = m;
    spec.omega = make_grid(0.0, 1e12, 5);
    spec.r.assign(5, Mat::Constant(1, 1, cx(1.0 / 0.9, 0)));
    Layer lay = make_layer(Mat::Constant(1, 1, cx(0.9, 0)),
                           Mat::Identity(1, 1), 1e-5);
    CHECK_THROWS_AS(schur_step(spec, lay, m), NearSingularPeelError);
}

TEST_CASE("schur_step: thread count does not change a single bit") {
    auto g = rng(2004);
    ModeSet m = equal_modes(2, 1.5);
    std::vector<Layer> layers;
    for (int j = 0; j < 2; ++j)
        layers.push_back(make_layer(bounded_symmetric(2, g, 0.35),
                                    testutil::rand_sym_unitary(2, g, 0.4),
                                    1e-5));
    auto spec = simulate_equal(layers, m, 1e-5, 101);
    auto p1 = schur_step(spec, layers[0], m, 1);
    auto p3 = schur_step(spec, layers[0], m, 3);
    for (size_t i = 0; i < p1.r.size(); ++i)
        CHECK((p1.r[i] - p3.r[i]).norm() == 0.0);
}

TEST_CASE("identify_layer: situation A returns h0 and the identity") {
    Mat h0(2, 2);
    h0 << cx(0, 0), cx(0.2, 0), cx(0.2, 0), cx(0, 0);
    InverseConfig cfg = strip_config(Situation::A_no_codirectional, 1, 1e-5, 1.5);
    auto id = identify_layer(h0, cfg, nullptr);
    CHECK((id.rho - h0).norm() == 0.0);
    CHECK((id.phi - Mat::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("identify_layer: situation B build-then-identify round trip") {
    auto g = rng(2005);
    Mat u = testutil::rand_unitary(2, g);
    RVec sig(2);
    sig << 0.4, 0.1;
    Mat h0 = u.transpose() * sig.asDiagonal() * u;
    InverseConfig cfg = strip_config(Situation::B_diagonal_rho, 1, 1e-5, 1.5);

    auto id = identify_layer(h0, cfg, nullptr);
    CHECK((id.rho - Mat(sig.cast<cx>().asDiagonal())).norm() < 1e-12);
    CHECK(row_defect_up_to_sign(id.phi, u) < 1e-10);
    CHECK((id.phi.transpose() * sig.asDiagonal() * id.phi - h0).norm() < 1e-12);

    // With the true factor supplied as the previous context the signs are
    // pinned exactly.
    Identification prev;
    prev.sigma_ref = sig;
    prev.u_ref = u;
    auto id2 = identify_layer(h0, cfg, &prev);
    CHECK((id2.phi - u).norm() < 1e-10);
}

TEST_CASE("identify_layer: situation C recovers both phase families") {
    auto g = rng(2006);
    const int p = 3;
    RVec sig(p);
    sig << 0.3, 0.17, 0.05;
    RMat prot = small_rotation(p, g, 0.25);
    Mat phi = small_sym_unitary(p, g, 0.2);
    InverseConfig cfg =
        strip_config(Situation::C_symmetric_phi_psd_rho, 1, 1e-5, 1.5);

    // Positive-semidefinite reflector.
    Mat rho_psd = (prot.transpose() * sig.asDiagonal() * prot).cast<cx>();
    Mat h0 = phi.transpose() * rho_psd * phi;
    auto id = identify_layer(h0, cfg, nullptr);
    CHECK_FALSE(id.diag.family_imaginary);
    CHECK((id.rho - rho_psd).norm() < 1e-9);
    CHECK((id.phi - phi).norm() < 1e-9);

    // Negative-semidefinite reflector: the same data appears as the
    // factorization (-rho, i*Phi) and must map back to the physical pair.
    Mat rho_nsd = -rho_psd;
    Mat h1 = phi.transpose() * rho_nsd * phi;
    auto id2 = identify_layer(h1, cfg, nullptr);
    CHECK(id2.diag.family_imaginary);
    CHECK((id2.rho - rho_nsd).norm() < 1e-9);
    CHECK((id2.phi - phi).norm() < 1e-9);
}

TEST_CASE("identify_layer: diagonal example with small codirectional phases") {
    auto g = rng(2007);
    RVec sig(2);
    sig << 0.3, 0.05;
    Mat phi = small_sym_unitary(2, g, 0.15);
    Mat h0 = phi.transpose() * sig.cast<cx>().asDiagonal() * phi;
    InverseConfig cfg =
        strip_config(Situation::C_symmetric_phi_psd_rho, 1, 1e-5, 1.5);
    auto id = identify_layer(h0, cfg, nullptr);
    CHECK((id.rho - Mat(sig.cast<cx>().asDiagonal())).norm() < 1e-9);
    CHECK((id.phi - phi).norm() < 1e-9);
}

TEST_CASE("identify_layer: rejects saturated and asymmetric input") {
    InverseConfig cfg = strip_config(Situation::A_no_codirectional, 1, 1e-5, 1.5);
    Mat strong = Mat::Identity(2, 2) * cx(1.0 - 1e-8, 0);
    CHECK_THROWS_AS(identify_layer(strong, cfg, nullptr),
                    ReflectorTooStrongError);
    Mat asym(2, 2);
    asym << cx(0, 0), cx(0.2, 0), cx(0.1, 0), cx(0, 0);
    CHECK_THROWS_AS(identify_layer(asym, cfg, nullptr), AsymmetricInputError);
}

TEST_CASE("layer_strip: N=1 structures come back exactly (all situations)") {
    auto g = rng(2008);
    const double dx = 1e-5, n = 1.5;
    ModeSet m = equal_modes(2, n);

    // A: complex symmetric reflector, identity rotator.
    Mat rho_a = bounded_symmetric(2, g, 0.35);
    auto spec_a = simulate_equal({make_layer(rho_a, Mat::Identity(2, 2), dx)},
                                 m, dx);
    auto res_a = layer_strip(
        spec_a, strip_config(Situation::A_no_codirectional, 1, dx, n), m);
    CHECK((res_a.layers[0].rho - rho_a).norm() < 1e-10);

    // B: diagonal reflector with distinct entries.
    RVec sig(2);
    sig << 0.4, 0.15;
    Mat phi_b = small_sym_unitary(2, g, 0.2);
    auto spec_b = simulate_equal(
        {make_layer(sig.cast<cx>().asDiagonal(), phi_b, dx)}, m, dx);
    auto res_b = layer_strip(
        spec_b, strip_config(Situation::B_diagonal_rho, 1, dx, n), m);
    CHECK((res_b.layers[0].rho - Mat(sig.cast<cx>().asDiagonal())).norm() <
          1e-10);
    CHECK((res_b.layers[0].phi - phi_b).norm() < 1e-9);

    // C: NSD real reflector with a near-identity rotation factor.
    RMat prot = small_rotation(2, g, 0.2);
    Mat rho_c = (-(prot.transpose() * sig.asDiagonal() * prot)).cast<cx>();
    Mat phi_c = small_sym_unitary(2, g, 0.15);
    auto spec_c = simulate_equal({make_layer(rho_c, phi_c, dx)}, m, dx);
    auto res_c = layer_strip(
        spec_c, strip_config(Situation::C_symmetric_phi_psd_rho, 1, dx, n), m);
    CHECK((res_c.layers[0].rho - rho_c).norm() < 1e-9);
    CHECK((res_c.layers[0].phi - phi_c).norm() < 1e-9);
}

TEST_CASE("layer_strip: situation A recovers a 5-layer stack to 1e-8") {
    auto g = rng(2009);
    const double dx = 1e-5, n = 1.45;
    ModeSet m = equal_modes(3, n);
    std::vector<Layer> truth;
    for (int j = 0; j < 5; ++j)
        truth.push_back(make_layer(bounded_symmetric(3, g, 0.35),
                                   Mat::Identity(3, 3), dx));
    auto spec = simulate_equal(truth, m, dx);
    auto res = layer_strip(
        spec, strip_config(Situation::A_no_codirectional, 5, dx, n), m);
    for (int j = 0; j < 5; ++j)
        CHECK((res.layers[j].rho - truth[j].rho).norm() < 1e-8);
    CHECK(res.diag.residual_norm < 1e-3 * res.diag.input_norm);
}

TEST_CASE("layer_strip: situation B recovers a 10-layer stack to 1e-6") {
    auto g = rng(2010);
    const double dx = 1e-5, n = 1.5;
    const int p = 3, nlay = 10;
    ModeSet m = equal_modes(p, n);
    RVec base(p);
    base << 0.45, 0.28, 0.12;  // separated so the assignment tracks smoothly
    std::uniform_real_distribution<double> jitter(-0.03, 0.03);
    std::vector<Layer> truth;
    for (int j = 0; j < nlay; ++j) {
        RVec sig = base;
        for (int k = 0; k < p; ++k) sig(k) += jitter(g);
        truth.push_back(make_layer(sig.cast<cx>().asDiagonal(),
                                   small_sym_unitary(p, g, 0.18), dx));
    }
    auto spec = simulate_equal(truth, m, dx);
    auto res = layer_strip(
        spec, strip_config(Situation::B_diagonal_rho, nlay, dx, n), m);
    for (int j = 0; j < nlay; ++j) {
        CHECK((res.layers[j].rho - truth[j].rho).norm() < 1e-6);
        CHECK((res.layers[j].phi - truth[j].phi).norm() < 1e-6);
        CHECK_FALSE(res.diag.layers[j].zero_flagged);
        CHECK_FALSE(res.diag.layers[j].degenerate_flagged);
    }
    CHECK(res.diag.residual_norm < 1e-3 * res.diag.input_norm);
}

TEST_CASE("layer_strip: situation C recovers an 8-layer stack to 1e-6") {
    auto g = rng(2011);
    const double dx = 1e-5, n = 1.5;
    const int p = 3, nlay = 8;
    ModeSet m = equal_modes(p, n);
    RVec base(p);
    base << 0.42, 0.26, 0.11;
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    for (int family = 0; family < 2; ++family) {
        std::vector<Layer> truth;
        for (int j = 0; j < nlay; ++j) {
            RVec sig = base;
            for (int k = 0; k < p; ++k) sig(k) += jitter(g);
            RMat prot = small_rotation(p, g, 0.2);
            RMat rr = prot.transpose() * sig.asDiagonal() * prot;
            if (family == 1) rr = -rr;
            truth.push_back(make_layer(rr.cast<cx>(),
                                       small_sym_unitary(p, g, 0.15), dx));
        }
        auto spec = simulate_equal(truth, m, dx);
        auto res = layer_strip(
            spec,
            strip_config(Situation::C_symmetric_phi_psd_rho, nlay, dx, n), m);
        for (int j = 0; j < nlay; ++j) {
            CHECK((res.layers[j].rho - truth[j].rho).norm() < 1e-6);
            CHECK((res.layers[j].phi - truth[j].phi).norm() < 1e-6);
            CHECK(res.diag.layers[j].family_imaginary == (family == 1));
        }
        CHECK(res.diag.residual_norm < 1e-3 * res.diag.input_norm);
    }
}

TEST_CASE("layer_strip: a planted zero singular value is flagged and "
          "contained") {
    auto g = rng(2012);
    const double dx = 1e-5, n = 1.5;
    const int p = 2, nlay = 6, planted = 2;
    ModeSet m = equal_modes(p, n);
    std::vector<Layer> truth;
    for (int j = 0; j < nlay; ++j) {
        RVec sig(p);
        sig << 0.42 + 0.01 * j, 0.15 - 0.01 * j;
        if (j == planted) sig(1) = 0.0;  // rank-deficient reflector
        truth.push_back(make_layer(sig.cast<cx>().asDiagonal(),
                                   small_sym_unitary(p, g, 0.15), dx));
    }
    auto spec = simulate_equal(truth, m, dx);
    auto res = layer_strip(
        spec, strip_config(Situation::B_diagonal_rho, nlay, dx, n), m);

    for (int j = 0; j < nlay; ++j) {
        CHECK(res.diag.layers[j].zero_flagged == (j == planted));
        // The reflector comes back everywhere; only the rotator at and next
        // to the planted layer may absorb the gauge.
        CHECK((res.layers[j].rho - truth[j].rho).norm() < 1e-5);
    }
    CHECK(res.diag.layers[planted].j_fix_applied);
    for (int j = 0; j < planted; ++j)
        CHECK((res.layers[j].phi - truth[j].phi).norm() < 1e-6);
    for (int j = planted + 2; j < nlay; ++j)
        CHECK((res.layers[j].phi - truth[j].phi).norm() < 1e-5);
}

TEST_CASE("layer_strip: disabled continuity flags ambiguity on degeneracy") {
    auto g = rng(2013);
    const double dx = 1e-5, n = 1.5;
    ModeSet m = equal_modes(2, n);
    RVec sig(2);
    sig << 0.3, 0.3;  // repeated nonzero singular value
    std::vector<Layer> truth{
        make_layer(sig.cast<cx>().asDiagonal(), small_sym_unitary(2, g, 0.1),
                   dx)};
    auto spec = simulate_equal(truth, m, dx);
    InverseConfig cfg = strip_config(Situation::B_diagonal_rho, 1, dx, n);
    cfg.continuity.enabled = false;
    auto res = layer_strip(spec, cfg, m);
    CHECK(res.diag.layers[0].degenerate_flagged);
    CHECK(res.diag.layers[0].ambiguous);
    // rho is still unambiguous.
    CHECK((res.layers[0].rho - truth[0].rho).norm() < 1e-9);
}

TEST_CASE("born_leading_edge: formula inversion") {
    ModeSet m1 = equal_modes(1, 1.5);
    Mat zero = Mat::Zero(1, 1);
    CHECK(born_leading_edge(zero, m1).norm() == 0.0);
    Mat h0(1, 1);
    h0(0, 0) = cx(0, 1) * 0.5 * c_light / (2.0 * 1.5);
    Mat k = born_leading_edge(h0, m1);
    CHECK(std::abs(k(0, 0) - cx(0.5, 0)) < 1e-15);
}

TEST_CASE("inverse IO: layers csv and diagnostics json") {
    auto g = rng(2014);
    const double dx = 1e-5, n = 1.5;
    ModeSet m = equal_modes(2, n);
    std::vector<Layer> truth;
    for (int j = 0; j < 3; ++j)
        truth.push_back(make_layer(bounded_symmetric(2, g, 0.35),
                                   Mat::Identity(2, 2), dx));
    auto spec = simulate_equal(truth, m, dx);
    auto res = layer_strip(
        spec, strip_config(Situation::A_no_codirectional, 3, dx, n), m);

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "modepeel_test_inv";
    fs::create_directories(dir);
    write_layers_csv(dir / "layers.csv", res.layers);
    write_diagnostics_json(dir / "diag.json", res.diag);

    std::ifstream csv(dir / "layers.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("j,x,Re_rho_1_1,Im_rho_1_1", 0) == 0);
    int rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    std::ifstream jf(dir / "diag.json");
    nlohmann::json doc = nlohmann::json::parse(jf);
    CHECK(doc["schema_version"] == 1);
    CHECK(doc["layers"].size() == 3);
    CHECK(doc["layers"][0].contains("sigma"));
    CHECK(doc.contains("residual_norm"));
}

TEST_CASE("index compensation: one-period rectangular grid gives the pair-index factor, wide grids none") {
    ModeSet m;
    m.p = 3;
    m.n.resize(3);
    m.n << 1.449, 1.443, 1.437;
    const double dx = 1e-5, n0 = 1.443;
    const double hw = principal_half_width(n0, dx);

    auto grid_of = [&](double q, int npts) {
        SpectrumGrid s;
        s.modes = m;
        s.omega = make_grid(0.0, q * hw, npts);
        s.r.assign(npts, Mat::Zero(3, 3));
        return s;
    };

    // One principal period, rectangular window: the Poisson sum over each
    // pair's echo raster collapses to the raster-density ratio, so the
    // compensation must reproduce (n_a + n_b)/(2 n0) per element.
    RMat c1 = index_compensation(grid_of(1.0, 8001), WindowFn::rectangular(),
                                 m, n0, dx, 2000);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            const double want = (m.n(a) + m.n(b)) / (2.0 * n0);
            CHECK(std::abs(c1(a, b) - want) < 5e-4);
        }
    CHECK(std::abs(c1(0, 0) - 1.0) > 3e-3);  // actually distinguishes pairs

    // Eight periods with a raised cosine: every raster sum is already ~1,
    // so the compensation collapses to a no-op.
    RMat c8 = index_compensation(grid_of(8.0, 8001), WindowFn::raised_cosine(),
                                 m, n0, dx, 2000);
    CHECK((c8 - RMat::Ones(3, 3)).cwiseAbs().maxCoeff() < 1e-3);

    // Equal indices: exact ones for any window or span.
    ModeSet eq = equal_modes(3, 1.45);
    SpectrumGrid s1 = grid_of(1.0, 513);
    s1.modes = eq;
    RMat ce = index_compensation(s1, WindowFn::rectangular(), eq, 1.45, dx, 64);
    CHECK((ce - RMat::Ones(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}
