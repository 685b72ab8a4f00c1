#include "modepeel/spectrum_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "modepeel/util.hpp"

namespace modepeel::forward {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_num(const std::string& s, const char* ctx) {
    double v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw IngestionError(std::string("spectrum csv: bad number in ") + ctx +
                             ": '" + s + "'");
    return v;
}

}  // namespace

void write_spectrum_csv(const std::filesystem::path& path,
                        const SpectrumGrid& spec) {
    spec.validate();
    std::ofstream f(path);
    if (!f) throw Error("write_spectrum_csv: cannot open " + path.string());
    const int p = spec.modes.p;
    f << "omega";
    for (int a = 1; a <= p; ++a)
        for (int b = 1; b <= p; ++b)
            f << ",Re_R_" << a << "_" << b << ",Im_R_" << a << "_" << b;
    f << "\n";
    for (int i = 0; i < spec.omega.size(); ++i) {
        f << util::fmt_g17(spec.omega(i));
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b)
                f << "," << util::fmt_g17(spec.r[i](a, b).real()) << ","
                  << util::fmt_g17(spec.r[i](a, b).imag());
        f << "\n";
    }
    if (!f) throw Error("write_spectrum_csv: write failed");
}

SpectrumGrid read_spectrum_csv(const std::filesystem::path& path,
                               const core::ModeSet& modes, double recip_tol,
                               double* raw_asymmetry) {
    if (raw_asymmetry) *raw_asymmetry = 0;
    modes.validate();
    std::ifstream f(path);
    if (!f)
        throw IngestionError("read_spectrum_csv: cannot open " + path.string());
    const int p = modes.p;
    const size_t ncol = 1 + 2 * size_t(p) * size_t(p);
    std::string line;
    if (!std::getline(f, line))
        throw IngestionError("spectrum csv: empty file");
    auto head = split_csv(line);
    if (head.size() != ncol || head[0] != "omega")
        throw IngestionError(
            "spectrum csv: header does not match the mode count");

    SpectrumGrid out;
    out.modes = modes;
    std::vector<double> omegas;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != ncol)
            throw IngestionError("spectrum csv: wrong column count in row " +
                                 std::to_string(omegas.size() + 2));
        omegas.push_back(parse_num(cells[0], "omega"));
        Mat r(p, p);
        size_t c = 1;
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) {
                const double re = parse_num(cells[c++], "Re");
                const double im = parse_num(cells[c++], "Im");
                r(a, b) = cx(re, im);
            }
        if (!r.allFinite())
            throw IngestionError("spectrum csv: non-finite entries");
        const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
        const double asym = (r - r.transpose()).cwiseAbs().maxCoeff();
        if (raw_asymmetry)
            *raw_asymmetry = std::max(*raw_asymmetry, asym);
        else if (asym > recip_tol * scale)
            throw IngestionError(
                "spectrum csv: reciprocity violation (R != R^T) at row " +
                std::to_string(omegas.size() + 1));
        out.r.push_back(0.5 * (r + r.transpose()));
    }
    out.omega = Eigen::Map<RVec>(omegas.data(), omegas.size());
    out.validate();
    return out;
}

}  // namespace modepeel::forward
