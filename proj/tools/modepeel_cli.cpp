// modepeel command-line front end.
//
//   simulate   structure config -> reflection spectrum CSV
//   invert     spectrum CSV     -> layers CSV + fitted profile CSV + diagnostics
//   roundtrip  simulate + invert in one process, artifact-level error report
//   check      physicality audit of a spectrum file
//   example    emit the bundled four-mode example as editable files
//
// Config files are JSON (schema_version 1); all quantities SI, frequencies in
// rad/s.  Every run writes exactly one manifest.json into --out-dir.  CSV
// artifacts are deterministic: a fixed config produces byte-identical bytes.
// Exit codes: 0 success, 2 config error, 3 ingestion error, 4 numerical
// failure (context, including the layer index, goes to stderr).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "modepeel/forward.hpp"
#include "modepeel/grating.hpp"
#include "modepeel/inverse.hpp"
#include "modepeel/spectrum_io.hpp"
#include "modepeel/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace modepeel;
using core::Layer;
using core::ModeSet;
using forward::SpectrumGrid;
using forward::WindowFn;

namespace {

// ------------------------------------------------------------------ helpers

std::string fnv1a_hex(std::string_view bytes) {
    unsigned long long h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", h);
    return buf;
}

double op_norm(const Mat& a) {
    return a.jacobiSvd().singularValues()(0);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double lap() {
        auto t1 = std::chrono::steady_clock::now();
        double dt = std::chrono::duration<double>(t1 - t0).count();
        t0 = t1;
        return dt;
    }
};

// ------------------------------------------------------------ configuration

WindowFn parse_window(const std::string& name) {
    if (name == "rect") return WindowFn::rectangular();
    if (name == "raised-cosine") return WindowFn::raised_cosine();
    throw ConfigError("window must be 'rect' or 'raised-cosine', got '" +
                      name + "'");
}

inverse::Situation parse_situation(const std::string& name) {
    if (name == "a") return inverse::Situation::A_no_codirectional;
    if (name == "b") return inverse::Situation::B_diagonal_rho;
    if (name == "c") return inverse::Situation::C_symmetric_phi_psd_rho;
    throw ConfigError("situation must be 'a', 'b' or 'c', got '" + name + "'");
}

enum class StructKind { none, layers, profile, example };

struct RunConfig {
    std::string text;  // exact bytes the config hash covers
    fs::path base_dir; // relative paths resolve against this

    ModeSet modes;
    double n0 = 0;

    bool has_grid = false;
    double grid_center = 0;
    double grid_half_width = 0;  // 0 with grid_principal set: derive from dx
    bool grid_principal = false;
    int grid_points = 0;

    std::string window_name = "raised-cosine";

    StructKind skind = StructKind::none;
    double struct_dx = 0;                 // layers kind
    std::vector<Layer> literal_layers;    // layers kind
    fs::path profile_csv, eta_json;       // profile kind
    std::string example_name;             // example kind

    bool has_inversion = false;
    int inv_n_layers = 0;                 // 0: take from the structure
    double inv_dx = 0;                    // 0: take from the structure
    std::string situation_name = "c";
    bool index_correction = true;
    bool continuity = true;
    bool fit_enabled = true;
    bool fit_dc = true;
    bool fit_chirp = true;
    fs::path inv_eta_json;                // optional, for the profile fit

    double recip_tol = tol::phys;
    int threads = 1;
};

const json& need(const json& j, const char* key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError("config: missing '" + std::string(key) + "' in " +
                          ctx);
    return *it;
}

double need_double(const json& j, const char* key, const std::string& ctx) {
    const json& v = need(j, key, ctx);
    if (!v.is_number())
        throw ConfigError("config: '" + std::string(key) + "' in " + ctx +
                          " must be a number");
    return v.get<double>();
}

cx json_cx(const json& v, const std::string& ctx) {
    if (v.is_number()) return cx(v.get<double>(), 0.0);
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
        return cx(v[0].get<double>(), v[1].get<double>());
    throw ConfigError("config: " + ctx +
                      " entries must be numbers or [re, im] pairs");
}

Mat json_mat(const json& v, int p, const std::string& ctx) {
    if (!v.is_array() || static_cast<int>(v.size()) != p)
        throw ConfigError("config: " + ctx + " must be a " + std::to_string(p) +
                          "-row matrix");
    Mat m(p, p);
    for (int a = 0; a < p; ++a) {
        const json& row = v[a];
        if (!row.is_array() || static_cast<int>(row.size()) != p)
            throw ConfigError("config: " + ctx + " rows must have " +
                              std::to_string(p) + " entries");
        for (int b = 0; b < p; ++b) m(a, b) = json_cx(row[b], ctx);
    }
    return m;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.text = text;
    cfg.base_dir = base_dir;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    try {
        if (need(root, "schema_version", "top level").get<int>() != 1)
            throw ConfigError("config: unsupported schema_version");

        const json& jm = need(root, "modes", "top level");
        const json& jn = need(jm, "n", "modes");
        if (!jn.is_array() || jn.empty())
            throw ConfigError("config: modes.n must be a nonempty array");
        cfg.modes.p = static_cast<int>(jn.size());
        cfg.modes.n.resize(cfg.modes.p);
        for (int i = 0; i < cfg.modes.p; ++i)
            cfg.modes.n(i) = jn[i].get<double>();
        cfg.modes.lambda_period = jm.value("lambda_period", 0.0);
        cfg.modes.omega0 = jm.value("omega0", 0.0);
        if (jm.contains("loss")) {
            const json& jl = jm["loss"];
            if (!jl.is_array() || static_cast<int>(jl.size()) != cfg.modes.p)
                throw ConfigError("config: modes.loss must list one value per mode");
            cfg.modes.loss.resize(cfg.modes.p);
            for (int i = 0; i < cfg.modes.p; ++i)
                cfg.modes.loss(i) = jl[i].get<double>();
        }
        cfg.modes.validate();

        cfg.n0 = root.value("n0", cfg.modes.n.mean());
        if (!(cfg.n0 > 0)) throw ConfigError("config: n0 must be > 0");

        if (root.contains("grid")) {
            const json& jg = root["grid"];
            cfg.has_grid = true;
            cfg.grid_center = jg.value("center", 0.0);
            const json& hw = need(jg, "half_width", "grid");
            if (hw.is_string() && hw.get<std::string>() == "principal")
                cfg.grid_principal = true;
            else if (hw.is_number())
                cfg.grid_half_width = hw.get<double>();
            else
                throw ConfigError(
                    "config: grid.half_width must be a number or 'principal'");
            cfg.grid_points = need(jg, "points", "grid").get<int>();
            if (cfg.grid_points < 2)
                throw ConfigError("config: grid.points must be >= 2");
        }

        cfg.window_name = root.value("window", std::string("raised-cosine"));
        parse_window(cfg.window_name);  // validate early

        if (root.contains("structure")) {
            const json& js = root["structure"];
            const std::string type =
                need(js, "type", "structure").get<std::string>();
            if (type == "layers") {
                cfg.skind = StructKind::layers;
                cfg.struct_dx = need_double(js, "dx", "structure");
                if (!(cfg.struct_dx > 0))
                    throw ConfigError("config: structure.dx must be > 0");
                const json& jl = need(js, "layers", "structure");
                if (!jl.is_array())
                    throw ConfigError("config: structure.layers must be an array");
                const int p = cfg.modes.p;
                for (size_t k = 0; k < jl.size(); ++k) {
                    const std::string ctx =
                        "structure.layers[" + std::to_string(k) + "]";
                    Layer l;
                    l.dx = cfg.struct_dx;
                    l.rho = json_mat(need(jl[k], "rho", ctx), p, ctx + ".rho");
                    l.phi = jl[k].contains("phi")
                                ? json_mat(jl[k]["phi"], p, ctx + ".phi")
                                : Mat(Mat::Identity(p, p));
                    try {
                        l.validate();
                    } catch (const Error& e) {
                        throw ConfigError("config: " + ctx + ": " + e.what());
                    }
                    cfg.literal_layers.push_back(std::move(l));
                }
            } else if (type == "profile") {
                cfg.skind = StructKind::profile;
                cfg.profile_csv = base_dir / fs::path(need(js, "profile_csv",
                                                           "structure")
                                                          .get<std::string>());
                cfg.eta_json = base_dir / fs::path(need(js, "eta_json",
                                                        "structure")
                                                       .get<std::string>());
            } else if (type == "example") {
                cfg.skind = StructKind::example;
                cfg.example_name = need(js, "name", "structure").get<std::string>();
                if (cfg.example_name != "sec5")
                    throw ConfigError("config: unknown example '" +
                                      cfg.example_name + "'");
            } else {
                throw ConfigError("config: unknown structure.type '" + type + "'");
            }
        }

        if (root.contains("inversion")) {
            const json& ji = root["inversion"];
            cfg.has_inversion = true;
            cfg.inv_n_layers = ji.value("n_layers", 0);
            cfg.inv_dx = ji.value("dx", 0.0);
            cfg.situation_name = ji.value("situation", std::string("c"));
            parse_situation(cfg.situation_name);  // validate early
            cfg.index_correction = ji.value("index_correction", true);
            cfg.continuity = ji.value("continuity", true);
            if (ji.contains("fit")) {
                const json& jf = ji["fit"];
                if (jf.is_boolean()) {
                    cfg.fit_enabled = jf.get<bool>();
                } else if (jf.is_object()) {
                    cfg.fit_dc = jf.value("dc", true);
                    cfg.fit_chirp = jf.value("chirp", true);
                } else {
                    throw ConfigError(
                        "config: inversion.fit must be a bool or an object");
                }
            }
            if (ji.contains("eta_json"))
                cfg.inv_eta_json =
                    base_dir / fs::path(ji["eta_json"].get<std::string>());
        }

        cfg.recip_tol = root.value("reciprocity_tol", tol::phys);
        cfg.threads = root.value("threads", 1);
        if (cfg.threads < 1)
            throw ConfigError("config: threads must be >= 1");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad field type: ") + e.what());
    }
    return cfg;
}

// The built-in example as a config document; also what `--example sec5`
// parses, so the flag and an on-disk copy behave identically.
json example_config_json(const std::string& name) {
    if (name != "sec5") throw ConfigError("unknown example '" + name + "'");
    grating::GratingProfile prof = grating::example_profile_sec5();
    json root;
    root["schema_version"] = 1;
    root["modes"]["n"] = std::vector<double>(
        prof.modes.n.data(), prof.modes.n.data() + prof.modes.p);
    root["modes"]["lambda_period"] = prof.modes.lambda_period;
    root["modes"]["omega0"] = prof.modes.omega0;
    root["n0"] = 1.443;
    // Fourteen principal periods with a raised-cosine window: an even number
    // of full periods makes the windowed zeroth-bin average cancel every echo
    // of the equal-index part exactly, the index-mismatch leakage of the far
    // echoes falls off with the cube of the span, and fourteen periods put
    // omega_max * min mode delay at ~22 (the sizing rule asks for >= 20).
    // 112000 points leave the full echo train (2N layer round trips) a
    // factor ~2 inside the unambiguous delay range 2*pi/grid-spacing.
    root["grid"] = {
        {"center", 0.0},
        {"half_width", 14.0 * forward::principal_half_width(1.443, prof.dx)},
        {"points", 112000}};
    root["window"] = "raised-cosine";
    root["structure"] = {{"type", "example"}, {"name", name}};
    root["inversion"] = {{"n_layers", prof.n_samples()},
                         {"dx", prof.dx},
                         {"situation", "c"},
                         {"index_correction", true},
                         {"fit", {{"dc", true}, {"chirp", true}}}};
    return root;
}

// ------------------------------------------------------------- the structure

struct BuiltStructure {
    std::vector<Layer> layers;
    double dx = 0;  // 0 when the structure is empty and has no dx of its own
    std::optional<grating::GratingProfile> profile;  // profile/example kinds
    RMat eta;                                        // valid when profile is
    std::vector<std::string> warnings;
};

BuiltStructure build_structure(const RunConfig& cfg) {
    BuiltStructure out;
    switch (cfg.skind) {
        case StructKind::none:
            throw ConfigError("config: this command needs a 'structure' section");
        case StructKind::layers:
            out.layers = cfg.literal_layers;
            out.dx = cfg.struct_dx;
            return out;
        case StructKind::profile: {
            RMat eta = grating::read_eta_json(cfg.eta_json);
            grating::GratingProfile prof =
                grating::read_profile_csv(cfg.profile_csv, cfg.modes, eta);
            out.layers = grating::layers_from_profile(prof, &out.warnings);
            out.dx = prof.dx;
            out.eta = eta;
            out.profile = std::move(prof);
            return out;
        }
        case StructKind::example: {
            grating::GratingProfile prof = grating::example_profile_sec5();
            out.layers = grating::layers_from_profile(prof, &out.warnings);
            out.dx = prof.dx;
            out.eta = prof.eta;
            out.profile = std::move(prof);
            return out;
        }
    }
    throw Error("build_structure: unreachable");
}

RVec resolve_grid(const RunConfig& cfg, double struct_dx) {
    if (!cfg.has_grid)
        throw ConfigError("config: this command needs a 'grid' section");
    double hw = cfg.grid_half_width;
    if (cfg.grid_principal) {
        if (!(struct_dx > 0))
            throw ConfigError(
                "config: grid.half_width 'principal' needs a structure with dx");
        hw = forward::principal_half_width(cfg.n0, struct_dx);
    }
    return forward::make_grid(cfg.grid_center, hw, cfg.grid_points);
}

inverse::InverseConfig
make_inverse_config(const RunConfig& cfg, const BuiltStructure* truth) {
    inverse::InverseConfig ic;
    ic.n_layers = cfg.inv_n_layers;
    ic.dx = cfg.inv_dx;
    if (truth) {
        if (ic.n_layers == 0)
            ic.n_layers = static_cast<int>(truth->layers.size());
        if (ic.dx == 0) ic.dx = truth->dx;
    }
    if (ic.n_layers == 0 || !(ic.dx > 0))
        throw ConfigError(
            "config: inversion.n_layers and inversion.dx are required");
    ic.situation = parse_situation(cfg.situation_name);
    ic.window = parse_window(cfg.window_name);
    ic.index_correction = cfg.index_correction;
    ic.n0 = cfg.n0;
    ic.continuity.enabled = cfg.continuity;
    ic.threads = cfg.threads;
    return ic;
}

// ---------------------------------------------------------------- manifests

json tolerances_json(const RunConfig& cfg) {
    return {{"reciprocity_ingest", cfg.recip_tol},
            {"physical", tol::phys},
            {"symmetry", tol::sym},
            {"factorization", tol::fact}};
}

void write_manifest(const fs::path& out_dir, json m) {
    m["schema_version"] = 1;
    std::ofstream f(out_dir / "manifest.json");
    if (!f)
        throw Error("cannot write manifest to " + out_dir.string());
    f << m.dump(2) << "\n";
    if (!f) throw Error("manifest write failed");
}

json grid_json(const RVec& omega) {
    const double lo = omega(0), hi = omega(omega.size() - 1);
    return {{"center", 0.5 * (lo + hi)},
            {"half_width", 0.5 * (hi - lo)},
            {"points", omega.size()}};
}

fs::path prepare_out_dir(const std::string& out_dir) {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ConfigError("cannot create out-dir " + dir.string() + ": " +
                          ec.message());
    return dir;
}

// ------------------------------------------------------------ the commands

struct CommonArgs {
    std::string config_path;
    std::string example_name;
    std::string spectrum_path;
    std::string out_dir;
    int threads = 0;
    std::string window_flag;
    std::string situation_flag;
    bool no_index_correction = false;
};

RunConfig load_config(const CommonArgs& a, bool allow_example) {
    RunConfig cfg;
    if (!a.config_path.empty()) {
        fs::path p(a.config_path);
        cfg = parse_config(read_file(p), p.has_parent_path()
                                            ? p.parent_path()
                                            : fs::path("."));
    } else if (allow_example && !a.example_name.empty()) {
        cfg = parse_config(example_config_json(a.example_name).dump(2),
                           fs::path("."));
    } else {
        throw ConfigError(allow_example
                              ? "either --config or --example is required"
                              : "--config is required");
    }
    if (a.threads > 0) cfg.threads = a.threads;
    if (!a.window_flag.empty()) {
        parse_window(a.window_flag);
        cfg.window_name = a.window_flag;
    }
    if (!a.situation_flag.empty()) {
        parse_situation(a.situation_flag);
        cfg.situation_name = a.situation_flag;
    }
    if (a.no_index_correction) cfg.index_correction = false;
    return cfg;
}

int cmd_simulate(const CommonArgs& args) {
    RunConfig cfg = load_config(args, /*allow_example=*/true);
    fs::path out = prepare_out_dir(args.out_dir);
    Timer timer;
    BuiltStructure st = build_structure(cfg);
    RVec wgrid = resolve_grid(cfg, st.dx);
    const double t_build = timer.lap();
    SpectrumGrid spec =
        forward::simulate_reflection(st.layers, cfg.modes, wgrid, cfg.threads);
    const double t_sim = timer.lap();
    forward::write_spectrum_csv(out / "spectrum.csv", spec);

    double max_norm = 0;
    for (const auto& r : spec.r) max_norm = std::max(max_norm, op_norm(r));

    json m;
    m["command"] = "simulate";
    m["config_hash"] = fnv1a_hex(cfg.text);
    m["grid"] = grid_json(spec.omega);
    m["window"] = cfg.window_name;
    m["threads"] = cfg.threads;
    m["tolerances"] = tolerances_json(cfg);
    m["timings_s"] = {{"build", t_build}, {"simulate", t_sim}};
    m["residuals"] = {{"max_reflection_norm", max_norm}};
    m["warnings"] = st.warnings;
    m["outputs"] = {"spectrum.csv"};
    write_manifest(out, m);

    std::cout << "simulate: " << st.layers.size() << " layers, "
              << spec.omega.size() << " grid points, max |R| op-norm "
              << max_norm << "\n";
    std::cout << "wrote " << (out / "spectrum.csv").string() << "\n";
    return 0;
}

struct InvertArtifacts {
    inverse::StripResult strip;
    std::optional<grating::ProfileFit> fit;
    double t_strip = 0, t_fit = 0;
};

// Shared by invert and roundtrip: strip, optionally fit, write artifacts.
InvertArtifacts run_inversion(const RunConfig& cfg, const SpectrumGrid& spec,
                              const inverse::InverseConfig& ic,
                              const RMat* eta, const fs::path& out) {
    InvertArtifacts art;
    Timer timer;
    art.strip = inverse::layer_strip(spec, ic, cfg.modes);
    art.t_strip = timer.lap();
    inverse::write_layers_csv(out / "layers.csv", art.strip.layers);
    inverse::write_diagnostics_json(out / "diagnostics.json", art.strip.diag);
    if (cfg.fit_enabled && eta) {
        grating::FitOptions fo;
        fo.fit_dc = cfg.fit_dc;
        fo.fit_chirp = cfg.fit_chirp;
        art.fit = grating::profile_from_layers(art.strip.layers, *eta,
                                               cfg.modes, fo);
        art.t_fit = timer.lap();
        grating::write_profile_csv(out / "profile.csv", art.fit->profile);
    }
    return art;
}

json strip_residuals_json(const inverse::StripDiagnostics& d) {
    int zero_flagged = 0, ambiguous = 0;
    for (const auto& l : d.layers) {
        zero_flagged += l.zero_flagged ? 1 : 0;
        ambiguous += l.ambiguous ? 1 : 0;
    }
    return {{"input_norm", d.input_norm},
            {"residual_norm", d.residual_norm},
            {"bandwidth_margin", d.bandwidth_margin},
            {"zero_flagged_layers", zero_flagged},
            {"ambiguous_layers", ambiguous}};
}

int cmd_invert(const CommonArgs& args) {
    RunConfig cfg = load_config(args, /*allow_example=*/false);
    if (args.spectrum_path.empty())
        throw ConfigError("--spectrum is required for invert");
    fs::path out = prepare_out_dir(args.out_dir);
    Timer timer;
    SpectrumGrid spec = forward::read_spectrum_csv(args.spectrum_path,
                                                   cfg.modes, cfg.recip_tol);
    const double t_read = timer.lap();
    inverse::InverseConfig ic = make_inverse_config(cfg, nullptr);

    std::optional<RMat> eta;
    if (!cfg.inv_eta_json.empty())
        eta = grating::read_eta_json(cfg.inv_eta_json);
    else if (cfg.skind == StructKind::example)
        eta = grating::example_profile_sec5().eta;

    InvertArtifacts art =
        run_inversion(cfg, spec, ic, eta ? &*eta : nullptr, out);

    json m;
    m["command"] = "invert";
    m["config_hash"] = fnv1a_hex(cfg.text);
    m["grid"] = grid_json(spec.omega);
    m["window"] = cfg.window_name;
    m["situation"] = cfg.situation_name;
    m["index_correction"] = cfg.index_correction;
    m["n0"] = cfg.n0;
    m["threads"] = cfg.threads;
    m["tolerances"] = tolerances_json(cfg);
    m["timings_s"] = {{"ingest", t_read},
                      {"strip", art.t_strip},
                      {"fit", art.t_fit}};
    m["residuals"] = strip_residuals_json(art.strip.diag);
    m["warnings"] = art.strip.diag.warnings;
    json outputs = {"layers.csv", "diagnostics.json"};
    if (art.fit) outputs.push_back("profile.csv");
    m["outputs"] = outputs;
    write_manifest(out, m);

    std::cout << "invert: " << art.strip.layers.size() << " layers, residual "
              << art.strip.diag.residual_norm << " (input "
              << art.strip.diag.input_norm << "), bandwidth margin "
              << art.strip.diag.bandwidth_margin << "\n";
    if (art.fit)
        std::cout << "profile fit: max |kappa residual| "
                  << (art.fit->residual_ac.size()
                          ? art.fit->residual_ac.maxCoeff()
                          : 0.0)
                  << "\n";
    return 0;
}

// Max-error table computed from the artifacts on disk, so an external diff
// of the *_true.csv / recovered files reproduces exactly these numbers.
json roundtrip_report(const fs::path& out, const RunConfig& cfg,
                      const BuiltStructure& st, bool fitted) {
    const int p = cfg.modes.p;
    auto truth =
        inverse::read_layers_csv(out / "layers_true.csv", p, st.dx);
    auto rec = inverse::read_layers_csv(out / "layers.csv", p, st.dx);
    if (truth.size() != rec.size())
        throw Error("roundtrip: layer-count mismatch between artifacts");
    double rho_err = 0, phi_err = 0;
    for (size_t j = 0; j < truth.size(); ++j) {
        rho_err = std::max(rho_err, op_norm(rec[j].rho - truth[j].rho));
        phi_err = std::max(phi_err, op_norm(rec[j].phi - truth[j].phi));
    }
    json rep;
    rep["schema_version"] = 1;
    rep["layer_defects"] = {{"rho", rho_err}, {"phi", phi_err}};
    if (st.profile && fitted) {
        grating::GratingProfile pt = grating::read_profile_csv(
            out / "profile_true.csv", cfg.modes, st.eta);
        grating::GratingProfile pr = grating::read_profile_csv(
            out / "profile.csv", cfg.modes, st.eta);
        if (pt.n_samples() != pr.n_samples())
            throw Error("roundtrip: profile-length mismatch between artifacts");
        const int n = pt.n_samples();
        const int skip = std::max(1, n / 50);  // outermost 2% per side
        auto max_err = [](const RVec& a, const RVec& b, int lo, int hi) {
            double e = 0;
            for (int i = lo; i < hi; ++i) e = std::max(e, std::abs(a(i) - b(i)));
            return e;
        };
        rep["profile_errors"] = {
            {"dn_ac", max_err(pr.dn_ac, pt.dn_ac, 0, n)},
            {"dn_dc", max_err(pr.dn_dc, pt.dn_dc, 0, n)},
            {"dtheta_dx", max_err(pr.theta_rate, pt.theta_rate, 0, n)},
            {"interior",
             {{"dn_ac", max_err(pr.dn_ac, pt.dn_ac, skip, n - skip)},
              {"dn_dc", max_err(pr.dn_dc, pt.dn_dc, skip, n - skip)},
              {"dtheta_dx",
               max_err(pr.theta_rate, pt.theta_rate, skip, n - skip)},
              {"skipped_per_side", skip}}}};
    }
    return rep;
}

int cmd_roundtrip(const CommonArgs& args) {
    RunConfig cfg = load_config(args, /*allow_example=*/true);
    fs::path out = prepare_out_dir(args.out_dir);
    Timer timer;
    BuiltStructure st = build_structure(cfg);
    if (st.layers.empty())
        throw ConfigError("roundtrip needs a structure with at least one layer");
    RVec wgrid = resolve_grid(cfg, st.dx);
    SpectrumGrid spec =
        forward::simulate_reflection(st.layers, cfg.modes, wgrid, cfg.threads);
    const double t_sim = timer.lap();
    forward::write_spectrum_csv(out / "spectrum.csv", spec);
    inverse::write_layers_csv(out / "layers_true.csv", st.layers);
    if (st.profile)
        grating::write_profile_csv(out / "profile_true.csv", *st.profile);

    // Honest pipeline: invert what was written, not the in-memory spectrum.
    SpectrumGrid rspec = forward::read_spectrum_csv(out / "spectrum.csv",
                                                    cfg.modes, cfg.recip_tol);
    inverse::InverseConfig ic = make_inverse_config(cfg, &st);
    const RMat* eta = st.profile ? &st.eta : nullptr;
    InvertArtifacts art = run_inversion(cfg, rspec, ic, eta, out);

    json rep = roundtrip_report(out, cfg, st, art.fit.has_value());
    rep["residual_norm"] = art.strip.diag.residual_norm;
    {
        std::ofstream f(out / "report.json");
        if (!f) throw Error("cannot write report.json");
        f << rep.dump(2) << "\n";
    }

    json m;
    m["command"] = "roundtrip";
    m["config_hash"] = fnv1a_hex(cfg.text);
    m["grid"] = grid_json(spec.omega);
    m["window"] = cfg.window_name;
    m["situation"] = cfg.situation_name;
    m["index_correction"] = cfg.index_correction;
    m["n0"] = cfg.n0;
    m["threads"] = cfg.threads;
    m["tolerances"] = tolerances_json(cfg);
    m["timings_s"] = {{"simulate", t_sim},
                      {"strip", art.t_strip},
                      {"fit", art.t_fit}};
    m["residuals"] = strip_residuals_json(art.strip.diag);
    m["warnings"] = st.warnings;
    json outputs = {"spectrum.csv", "layers_true.csv", "layers.csv",
                    "diagnostics.json", "report.json"};
    if (st.profile) outputs.push_back("profile_true.csv");
    if (art.fit) outputs.push_back("profile.csv");
    m["outputs"] = outputs;
    write_manifest(out, m);

    std::cout << "roundtrip max errors\n";
    std::cout << "  rho defect        " << rep["layer_defects"]["rho"].get<double>()
              << "\n";
    std::cout << "  phi defect        " << rep["layer_defects"]["phi"].get<double>()
              << "\n";
    if (rep.contains("profile_errors")) {
        const json& pe = rep["profile_errors"];
        std::cout << "  dn_ac             " << pe["dn_ac"].get<double>() << "\n";
        std::cout << "  dn_dc             " << pe["dn_dc"].get<double>() << "\n";
        std::cout << "  dtheta_dx         " << pe["dtheta_dx"].get<double>()
                  << "\n";
        std::cout << "  interior dn_ac    "
                  << pe["interior"]["dn_ac"].get<double>() << "\n";
        std::cout << "  interior dn_dc    "
                  << pe["interior"]["dn_dc"].get<double>() << "\n";
        std::cout << "  interior dtheta   "
                  << pe["interior"]["dtheta_dx"].get<double>() << "\n";
    }
    return 0;
}

int cmd_check(const CommonArgs& args) {
    RunConfig cfg = load_config(args, /*allow_example=*/false);
    if (args.spectrum_path.empty())
        throw ConfigError("--spectrum is required for check");
    fs::path out = prepare_out_dir(args.out_dir);

    double raw_asym = 0;
    SpectrumGrid spec = forward::read_spectrum_csv(
        args.spectrum_path, cfg.modes, cfg.recip_tol, &raw_asym);
    double contraction = 0;
    for (const auto& r : spec.r)
        contraction = std::max(contraction, op_norm(r) - 1.0);
    contraction = std::max(contraction, 0.0);

    json rep;
    rep["schema_version"] = 1;
    rep["file"] = {{"points", spec.omega.size()},
                   {"reciprocity_defect", raw_asym},
                   {"contraction_defect", contraction}};

    // With a structure in the config the full scattering matrix is available
    // and unitarity can be audited too.
    if (cfg.skind != StructKind::none) {
        BuiltStructure st = build_structure(cfg);
        double s_recip = 0, s_unit = 0, s_contr = 0, match = 0;
        for (int i = 0; i < spec.omega.size(); ++i) {
            auto tr = forward::structure_transfer(st.layers, cfg.modes,
                                                  spec.omega(i));
            auto sm = core::transfer_to_scattering(tr);
            core::PhysReport pr = core::check_physical(sm);
            s_recip = std::max(s_recip, pr.reciprocity_defect);
            s_unit = std::max(s_unit, pr.unitarity_defect);
            s_contr = std::max(s_contr, pr.contraction_defect);
            match = std::max(match, (spec.r[i] - sm.b11).cwiseAbs().maxCoeff());
        }
        rep["model"] = {{"reciprocity_defect", s_recip},
                        {"unitarity_defect", s_unit},
                        {"contraction_defect", s_contr}};
        rep["match_defect"] = match;
    }

    {
        std::ofstream f(out / "physicality.json");
        if (!f) throw Error("cannot write physicality.json");
        f << rep.dump(2) << "\n";
    }
    json m;
    m["command"] = "check";
    m["config_hash"] = fnv1a_hex(cfg.text);
    m["grid"] = grid_json(spec.omega);
    m["window"] = cfg.window_name;
    m["threads"] = cfg.threads;
    m["tolerances"] = tolerances_json(cfg);
    m["timings_s"] = json::object();
    m["residuals"] = rep;
    m["outputs"] = {"physicality.json"};
    write_manifest(out, m);

    std::cout << "check: reciprocity defect " << raw_asym
              << ", contraction defect " << contraction << "\n";
    if (rep.contains("model"))
        std::cout << "model: unitarity defect "
                  << rep["model"]["unitarity_defect"].get<double>()
                  << ", reciprocity defect "
                  << rep["model"]["reciprocity_defect"].get<double>()
                  << ", file/model mismatch "
                  << rep["match_defect"].get<double>() << "\n";
    return 0;
}

int cmd_example(const std::string& name, const std::string& out_dir) {
    fs::path out = prepare_out_dir(out_dir);
    if (name != "sec5") throw ConfigError("unknown example '" + name + "'");
    grating::GratingProfile prof = grating::example_profile_sec5();
    grating::write_profile_csv(out / "profile.csv", prof);
    grating::write_eta_json(out / "eta.json", prof.eta);

    json cfgj = example_config_json(name);
    cfgj["structure"] = {{"type", "profile"},
                         {"profile_csv", "profile.csv"},
                         {"eta_json", "eta.json"}};
    cfgj["inversion"]["eta_json"] = "eta.json";
    {
        std::ofstream f(out / "config.json");
        if (!f) throw Error("cannot write config.json");
        f << cfgj.dump(2) << "\n";
    }

    json m;
    m["command"] = "example";
    m["config_hash"] = fnv1a_hex(cfgj.dump(2));
    m["window"] = cfgj["window"];
    m["tolerances"] = {{"physical", tol::phys},
                       {"symmetry", tol::sym},
                       {"factorization", tol::fact}};
    m["timings_s"] = json::object();
    m["residuals"] = json::object();
    m["outputs"] = {"profile.csv", "eta.json", "config.json"};
    write_manifest(out, m);

    std::cout << "wrote " << (out / "profile.csv").string() << ", "
              << (out / "eta.json").string() << ", "
              << (out / "config.json").string() << "\n";
    std::cout << "run: modepeel simulate --config " << (out / "config.json").string()
              << " --out-dir <dir>\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "modepeel: direct and inverse scattering for 1-D multimode structures"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string example_name = "sec5";

    auto add_common = [&](CLI::App* c, bool spectrum, bool example) {
        c->add_option("--out-dir", args.out_dir, "output directory")->required();
        c->add_option("--threads", args.threads, "worker thread cap");
        if (spectrum)
            c->add_option("--spectrum", args.spectrum_path,
                          "input spectrum CSV");
        c->add_option("--config", args.config_path, "JSON config file");
        if (example)
            c->add_option("--example", args.example_name,
                          "use a built-in example config (sec5)");
    };

    CLI::App* sim = app.add_subcommand(
        "simulate", "synthesize a reflection spectrum from a structure");
    add_common(sim, false, true);

    CLI::App* inv = app.add_subcommand(
        "invert", "reconstruct layers (and a profile) from a spectrum");
    add_common(inv, true, false);
    inv->add_option("--window", args.window_flag,
                    "impulse window: rect | raised-cosine");
    inv->add_option("--situation", args.situation_flag,
                    "identification assumptions: a | b | c");
    inv->add_flag("--no-index-correction", args.no_index_correction,
                  "disable the per-pair index (echo raster) compensation");

    CLI::App* rt = app.add_subcommand(
        "roundtrip", "simulate then invert; report artifact-level max errors");
    add_common(rt, false, true);
    rt->add_option("--window", args.window_flag,
                   "impulse window: rect | raised-cosine");
    rt->add_option("--situation", args.situation_flag,
                   "identification assumptions: a | b | c");
    rt->add_flag("--no-index-correction", args.no_index_correction,
                 "disable the per-pair index (echo raster) compensation");

    CLI::App* chk = app.add_subcommand(
        "check", "physicality audit of a spectrum file");
    add_common(chk, true, false);

    CLI::App* ex = app.add_subcommand(
        "example", "emit the bundled four-mode example as editable files");
    ex->add_option("--out-dir", args.out_dir, "output directory")->required();
    ex->add_option("--name", example_name, "example name (sec5)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(args);
        if (inv->parsed()) return cmd_invert(args);
        if (rt->parsed()) return cmd_roundtrip(args);
        if (chk->parsed()) return cmd_check(args);
        if (ex->parsed()) return cmd_example(example_name, args.out_dir);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const IngestionError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
