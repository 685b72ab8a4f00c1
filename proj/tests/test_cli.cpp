// End-to-end tests of the command-line binary: artifact layout, exit codes,
// determinism, and agreement between reports and the files they describe.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "modepeel/grating.hpp"
#include "modepeel/inverse.hpp"
#include "modepeel/spectrum_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace modepeel;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "modepeel_test_cli";

fs::path fresh_dir(const std::string& name) {
    fs::path d = kRoot / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run_cli(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(MODEPEEL_BIN) + " " + args + " >" +
                      log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void dump(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    REQUIRE(f.good());
    f << text;
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

// A minimal one-mode absolute-frequency mode section.
json modes1() {
    return {{"n", {1.5}}};
}

json grid_small(int points) {
    return {{"center", 0.0}, {"half_width", 1.0e12}, {"points", points}};
}

core::ModeSet modeset_p(int p, double n) {
    core::ModeSet m;
    m.p = p;
    m.n = RVec::Constant(p, n);
    return m;
}

}  // namespace

TEST_CASE("simulate: empty structure gives an all-zero spectrum") {
    fs::path dir = fresh_dir("empty");
    json cfg = {{"schema_version", 1},
                {"modes", modes1()},
                {"grid", grid_small(5)},
                {"structure",
                 {{"type", "layers"}, {"dx", 1e-4}, {"layers", json::array()}}}};
    dump(dir / "cfg.json", cfg.dump(2));
    int rc = run_cli("simulate --config " + (dir / "cfg.json").string() +
                         " --out-dir " + (dir / "out").string(),
                     dir / "log.txt");
    CHECK(rc == 0);

    std::string csv = slurp(dir / "out" / "spectrum.csv");
    CHECK(csv.rfind("omega,Re_R_1_1,Im_R_1_1\n", 0) == 0);
    auto spec = forward::read_spectrum_csv(dir / "out" / "spectrum.csv",
                                           modeset_p(1, 1.5));
    REQUIRE(spec.omega.size() == 5);
    for (const auto& r : spec.r) CHECK(r.cwiseAbs().maxCoeff() == 0.0);

    CHECK(fs::exists(dir / "out" / "manifest.json"));
    json man = load_json(dir / "out" / "manifest.json");
    CHECK(man["command"] == "simulate");
    CHECK(man["schema_version"] == 1);
}

TEST_CASE("simulate: single reflector gives constant rows; reruns are byte-identical") {
    fs::path dir = fresh_dir("single");
    json cfg = {{"schema_version", 1},
                {"modes", {{"n", {1.5, 1.5}}}},
                {"grid", grid_small(7)},
                {"structure",
                 {{"type", "layers"},
                  {"dx", 1e-4},
                  {"layers",
                   {{{"rho", {{0.0, 0.3}, {0.3, 0.0}}}}}}}}};
    dump(dir / "cfg.json", cfg.dump(2));
    std::string base = "simulate --config " + (dir / "cfg.json").string();
    CHECK(run_cli(base + " --out-dir " + (dir / "a").string(),
                  dir / "log1.txt") == 0);
    CHECK(run_cli(base + " --out-dir " + (dir / "b").string(),
                  dir / "log2.txt") == 0);

    auto spec = forward::read_spectrum_csv(dir / "a" / "spectrum.csv",
                                           modeset_p(2, 1.5));
    REQUIRE(spec.omega.size() == 7);
    for (const auto& r : spec.r) {
        CHECK(std::abs(r(0, 1) - cx(0.3, 0.0)) < 1e-15);
        CHECK(std::abs(r(0, 0)) < 1e-15);
        CHECK((r - spec.r.front()).cwiseAbs().maxCoeff() < 1e-15);
    }
    CHECK(slurp(dir / "a" / "spectrum.csv") == slurp(dir / "b" / "spectrum.csv"));
}

TEST_CASE("invert: a one-layer spectrum reproduces the configured reflector") {
    fs::path dir = fresh_dir("invert1");
    json sim_cfg = {{"schema_version", 1},
                    {"modes", {{"n", {1.5, 1.5}}}},
                    {"grid",
                     {{"center", 0.0},
                      {"half_width", "principal"},
                      {"points", 64}}},
                    {"structure",
                     {{"type", "layers"},
                      {"dx", 1e-4},
                      {"layers",
                       {{{"rho", {{0.3, 0.0}, {0.0, 0.2}}}}}}}}};
    dump(dir / "sim.json", sim_cfg.dump(2));
    REQUIRE(run_cli("simulate --config " + (dir / "sim.json").string() +
                        " --out-dir " + (dir / "fwd").string(),
                    dir / "log1.txt") == 0);

    json inv_cfg = {{"schema_version", 1},
                    {"modes", {{"n", {1.5, 1.5}}}},
                    {"inversion",
                     {{"n_layers", 1}, {"dx", 1e-4}, {"situation", "b"}}}};
    dump(dir / "inv.json", inv_cfg.dump(2));
    int rc = run_cli("invert --config " + (dir / "inv.json").string() +
                         " --spectrum " + (dir / "fwd" / "spectrum.csv").string() +
                         " --out-dir " + (dir / "rec").string(),
                     dir / "log2.txt");
    CHECK(rc == 0);

    auto layers = inverse::read_layers_csv(dir / "rec" / "layers.csv", 2, 1e-4);
    REQUIRE(layers.size() == 1);
    CHECK(std::abs(layers[0].rho(0, 0) - cx(0.3, 0.0)) < 1e-9);
    CHECK(std::abs(layers[0].rho(1, 1) - cx(0.2, 0.0)) < 1e-9);
    CHECK((layers[0].phi - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);

    json diag = load_json(dir / "rec" / "diagnostics.json");
    CHECK(diag["n_layers"] == 1);
    CHECK(diag["layers"].size() == 1);
    CHECK(fs::exists(dir / "rec" / "manifest.json"));
}

TEST_CASE("invert: tampered asymmetric spectrum exits with the ingestion code") {
    fs::path dir = fresh_dir("tamper");
    // Two-mode spectrum with R12 != R21 in every row.
    std::string csv =
        "omega,Re_R_1_1,Im_R_1_1,Re_R_1_2,Im_R_1_2,Re_R_2_1,Im_R_2_1,Re_R_2_2,Im_R_2_2\n";
    csv += "-1e10,0.1,0,0.2,0,0.25,0,0.1,0\n";
    csv += "1e10,0.1,0,0.2,0,0.25,0,0.1,0\n";
    dump(dir / "bad.csv", csv);
    json cfg = {{"schema_version", 1},
                {"modes", {{"n", {1.5, 1.5}}}},
                {"inversion",
                 {{"n_layers", 1}, {"dx", 1e-4}, {"situation", "b"}}}};
    dump(dir / "cfg.json", cfg.dump(2));
    int rc = run_cli("invert --config " + (dir / "cfg.json").string() +
                         " --spectrum " + (dir / "bad.csv").string() +
                         " --out-dir " + (dir / "out").string(),
                     dir / "log.txt");
    CHECK(rc == 3);
    CHECK(slurp(dir / "log.txt").find("reciprocity") != std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
    fs::path dir = fresh_dir("badcfg");
    dump(dir / "nomodes.json", R"({"schema_version": 1})");
    CHECK(run_cli("simulate --config " + (dir / "nomodes.json").string() +
                      " --out-dir " + (dir / "o1").string(),
                  dir / "l1.txt") == 2);

    dump(dir / "notjson.json", "{ this is not json");
    CHECK(run_cli("simulate --config " + (dir / "notjson.json").string() +
                      " --out-dir " + (dir / "o2").string(),
                  dir / "l2.txt") == 2);

    CHECK(run_cli("simulate --example sec7 --out-dir " + (dir / "o3").string(),
                  dir / "l3.txt") == 2);

    CHECK(run_cli("simulate --out-dir " + (dir / "o4").string(),
                  dir / "l4.txt") == 2);  // neither --config nor --example
}

TEST_CASE("roundtrip: zero profile reports zero errors everywhere") {
    fs::path dir = fresh_dir("rtzero");
    core::ModeSet modes;
    modes.p = 2;
    modes.n = RVec::Constant(2, 1.46);
    modes.lambda_period = 1.55e-6 / (2 * 1.46);
    modes.omega0 = 2 * M_PI * c_light / 1.55e-6;

    grating::GratingProfile prof;
    prof.modes = modes;
    prof.eta = 1e6 * (RMat(2, 2) << 1.0, 0.2, 0.2, 0.8).finished();
    prof.dx = 5e-5;
    const int n = 16;
    prof.x = RVec::LinSpaced(n, 0.5 * prof.dx, (n - 0.5) * prof.dx);
    prof.dn_ac = RVec::Zero(n);
    prof.dn_dc = RVec::Zero(n);
    prof.theta_rate = RVec::Zero(n);
    grating::write_profile_csv(dir / "profile.csv", prof);
    grating::write_eta_json(dir / "eta.json", prof.eta);

    json cfg = {{"schema_version", 1},
                {"modes",
                 {{"n", {1.46, 1.46}},
                  {"lambda_period", modes.lambda_period},
                  {"omega0", modes.omega0}}},
                {"grid",
                 {{"center", 0.0},
                  {"half_width", "principal"},
                  {"points", 128}}},
                {"structure",
                 {{"type", "profile"},
                  {"profile_csv", "profile.csv"},
                  {"eta_json", "eta.json"}}},
                {"inversion", {{"situation", "c"}}}};
    dump(dir / "cfg.json", cfg.dump(2));
    int rc = run_cli("roundtrip --config " + (dir / "cfg.json").string() +
                         " --out-dir " + (dir / "out").string(),
                     dir / "log.txt");
    CHECK(rc == 0);

    json rep = load_json(dir / "out" / "report.json");
    CHECK(rep["layer_defects"]["rho"].get<double>() == 0.0);
    CHECK(rep["layer_defects"]["phi"].get<double>() == 0.0);
    CHECK(rep["profile_errors"]["dn_ac"].get<double>() == 0.0);
    CHECK(rep["profile_errors"]["dn_dc"].get<double>() == 0.0);
    CHECK(rep["profile_errors"]["dtheta_dx"].get<double>() == 0.0);
}

TEST_CASE("roundtrip: smooth profile reconstructs and the report matches the artifacts") {
    fs::path dir = fresh_dir("rtsmooth");
    core::ModeSet modes;
    modes.p = 2;
    modes.n = RVec::Constant(2, 1.46);
    modes.lambda_period = 1.55e-6 / (2 * 1.46);
    modes.omega0 = 2 * M_PI * c_light / 1.55e-6;

    grating::GratingProfile prof;
    prof.modes = modes;
    prof.eta = 4e6 * (RMat(2, 2) << 0.957, 0.1, 0.1, 0.874).finished();
    prof.dx = 1e-5;
    const int n = 24;
    const double length = n * prof.dx;
    prof.x = RVec::LinSpaced(n, 0.5 * prof.dx, (n - 0.5) * prof.dx);
    prof.dn_ac.resize(n);
    prof.dn_dc.resize(n);
    prof.theta_rate.resize(n);
    for (int i = 0; i < n; ++i) {
        const double u = prof.x(i) / length;
        prof.dn_ac(i) = 2e-4 * 0.5 * (1 - std::cos(2 * M_PI * u));
        prof.dn_dc(i) = 1e-4 * std::sin(2 * M_PI * u);
        prof.theta_rate(i) = 3e3 * (u - 0.5);
    }
    grating::write_profile_csv(dir / "profile.csv", prof);
    grating::write_eta_json(dir / "eta.json", prof.eta);

    // The default raised-cosine window wants a grid spanning several full
    // principal periods (an even count makes the echo cancellation exact).
    const double hw8 = 8.0 * forward::principal_half_width(1.46, prof.dx);
    json cfg = {{"schema_version", 1},
                {"modes",
                 {{"n", {1.46, 1.46}},
                  {"lambda_period", modes.lambda_period},
                  {"omega0", modes.omega0}}},
                {"grid",
                 {{"center", 0.0},
                  {"half_width", hw8},
                  {"points", 1024}}},
                {"structure",
                 {{"type", "profile"},
                  {"profile_csv", "profile.csv"},
                  {"eta_json", "eta.json"}}},
                {"inversion", {{"situation", "c"}}}};
    dump(dir / "cfg.json", cfg.dump(2));
    int rc = run_cli("roundtrip --config " + (dir / "cfg.json").string() +
                         " --out-dir " + (dir / "out").string(),
                     dir / "log.txt");
    CHECK(rc == 0);

    json rep = load_json(dir / "out" / "report.json");
    CHECK(rep["layer_defects"]["rho"].get<double>() < 1e-6);
    CHECK(rep["layer_defects"]["phi"].get<double>() < 1e-6);
    CHECK(rep["profile_errors"]["dn_ac"].get<double>() < 5e-8);
    CHECK(rep["profile_errors"]["dn_dc"].get<double>() < 5e-7);
    CHECK(rep["profile_errors"]["dtheta_dx"].get<double>() < 5e-2);

    // The report must equal an external diff of the artifacts it describes.
    const fs::path out = dir / "out";
    auto lt = inverse::read_layers_csv(out / "layers_true.csv", 2, prof.dx);
    auto lr = inverse::read_layers_csv(out / "layers.csv", 2, prof.dx);
    REQUIRE(lt.size() == lr.size());
    double rho_err = 0, phi_err = 0;
    for (size_t j = 0; j < lt.size(); ++j) {
        rho_err = std::max(rho_err,
                           (lr[j].rho - lt[j].rho).jacobiSvd().singularValues()(0));
        phi_err = std::max(phi_err,
                           (lr[j].phi - lt[j].phi).jacobiSvd().singularValues()(0));
    }
    CHECK(rep["layer_defects"]["rho"].get<double>() == rho_err);
    CHECK(rep["layer_defects"]["phi"].get<double>() == phi_err);

    auto pt = grating::read_profile_csv(out / "profile_true.csv", modes, prof.eta);
    auto pr = grating::read_profile_csv(out / "profile.csv", modes, prof.eta);
    CHECK(rep["profile_errors"]["dn_ac"].get<double>() ==
          (pr.dn_ac - pt.dn_ac).cwiseAbs().maxCoeff());
    CHECK(rep["profile_errors"]["dn_dc"].get<double>() ==
          (pr.dn_dc - pt.dn_dc).cwiseAbs().maxCoeff());
    CHECK(rep["profile_errors"]["dtheta_dx"].get<double>() ==
          (pr.theta_rate - pt.theta_rate).cwiseAbs().maxCoeff());
}

TEST_CASE("check: lossless, scaled, and lossy spectra are classified correctly") {
    fs::path dir = fresh_dir("check");

    // Lossless single reflector, config carries the structure.
    json lossless = {{"schema_version", 1},
                     {"modes", {{"n", {1.5, 1.5}}}},
                     {"grid", grid_small(9)},
                     {"structure",
                      {{"type", "layers"},
                       {"dx", 1e-4},
                       {"layers",
                        {{{"rho", {{0.25, 0.0}, {0.0, 0.1}}}}}}}}};
    dump(dir / "lossless.json", lossless.dump(2));
    REQUIRE(run_cli("simulate --config " + (dir / "lossless.json").string() +
                        " --out-dir " + (dir / "fwd").string(),
                    dir / "l1.txt") == 0);
    REQUIRE(run_cli("check --config " + (dir / "lossless.json").string() +
                        " --spectrum " + (dir / "fwd" / "spectrum.csv").string() +
                        " --out-dir " + (dir / "chk1").string(),
                    dir / "l2.txt") == 0);
    json rep1 = load_json(dir / "chk1" / "physicality.json");
    CHECK(rep1["file"]["reciprocity_defect"].get<double>() < 1e-9);
    CHECK(rep1["file"]["contraction_defect"].get<double>() < 1e-9);
    CHECK(rep1["model"]["reciprocity_defect"].get<double>() < 1e-9);
    CHECK(rep1["model"]["unitarity_defect"].get<double>() < 1e-9);
    CHECK(rep1["match_defect"].get<double>() < 1e-12);

    // Scaled (nonphysical) spectrum: |R| > 1 must show up as contraction.
    std::string csv = "omega,Re_R_1_1,Im_R_1_1\n-1e10,1.2,0\n1e10,1.2,0\n";
    dump(dir / "scaled.csv", csv);
    json cfg1 = {{"schema_version", 1}, {"modes", modes1()}};
    dump(dir / "p1.json", cfg1.dump(2));
    REQUIRE(run_cli("check --config " + (dir / "p1.json").string() +
                        " --spectrum " + (dir / "scaled.csv").string() +
                        " --out-dir " + (dir / "chk2").string(),
                    dir / "l3.txt") == 0);
    json rep2 = load_json(dir / "chk2" / "physicality.json");
    CHECK(rep2["file"]["contraction_defect"].get<double>() ==
          doctest::Approx(0.2).epsilon(1e-9));

    // Lossy structure: model unitarity defect > 0, reciprocity still clean.
    json lossy = lossless;
    lossy["modes"]["loss"] = {500.0, 500.0};
    dump(dir / "lossy.json", lossy.dump(2));
    REQUIRE(run_cli("simulate --config " + (dir / "lossy.json").string() +
                        " --out-dir " + (dir / "fwd2").string(),
                    dir / "l4.txt") == 0);
    REQUIRE(run_cli("check --config " + (dir / "lossy.json").string() +
                        " --spectrum " + (dir / "fwd2" / "spectrum.csv").string() +
                        " --out-dir " + (dir / "chk3").string(),
                    dir / "l5.txt") == 0);
    json rep3 = load_json(dir / "chk3" / "physicality.json");
    CHECK(rep3["model"]["unitarity_defect"].get<double>() > 1e-3);
    CHECK(rep3["model"]["reciprocity_defect"].get<double>() < 1e-9);
    CHECK(rep3["file"]["reciprocity_defect"].get<double>() < 1e-9);
}

TEST_CASE("example: emits an editable copy of the bundled four-mode example") {
    fs::path dir = fresh_dir("example");
    int rc = run_cli("example --out-dir " + (dir / "out").string(),
                     dir / "log.txt");
    CHECK(rc == 0);

    RMat eta = grating::read_eta_json(dir / "out" / "eta.json");
    CHECK(eta.rows() == 4);
    grating::GratingProfile ref = grating::example_profile_sec5();
    auto prof = grating::read_profile_csv(dir / "out" / "profile.csv",
                                          ref.modes, eta);
    CHECK(prof.n_samples() == 2000);
    CHECK((prof.dn_ac - ref.dn_ac).cwiseAbs().maxCoeff() == 0.0);
    CHECK((eta - ref.eta).cwiseAbs().maxCoeff() == 0.0);

    json cfg = load_json(dir / "out" / "config.json");
    CHECK(cfg["schema_version"] == 1);
    CHECK(cfg["structure"]["type"] == "profile");
    CHECK(cfg["inversion"]["n_layers"] == 2000);
    CHECK(fs::exists(dir / "out" / "manifest.json"));
}
