#include "homopursuit/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "homopursuit/errors.hpp"

namespace homopursuit::io {

std::string format_double(double v) {
    char buf[40];
    const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(len));
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& doc) {
    write_text(path, doc.dump(2) + "\n");
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

namespace {

std::vector<double> parse_row(const std::string& line, const fs::path& file, Index lineno) {
    std::vector<double> out;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
        double v = 0.0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc()) {
            throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": not a number");
        }
        out.push_back(v);
        p = next;
        while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
        if (p < end) {
            if (*p != ',') throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": expected ','");
            ++p;
        }
    }
    return out;
}

std::vector<std::vector<double>> read_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("missing dataset file " + file.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    Index lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        rows.push_back(parse_row(line, file, lineno));
    }
    return rows;
}

Index get_index(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number_integer()) {
        throw ConfigError(where + ": '" + key + "' must be an integer");
    }
    return obj[key].get<Index>();
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& data, LinkKind model) {
    fs::create_directories(dir);
    json files = json::array();
    json ms = json::array();
    const Index p1 = data.p1(), p2 = data.p2();
    for (Index i = 0; i < data.n(); ++i) {
        const std::string xname = "X_" + std::to_string(i + 1) + ".csv";
        const std::string yname = "y_" + std::to_string(i + 1) + ".csv";
        const Individual& ind = data.individual(i);
        std::string xs, ys;
        for (Index j = 0; j < ind.samples(); ++j) {
            // design is column-major vec(X); files hold the row-major vec.
            for (Index a = 0; a < p1; ++a) {
                for (Index b = 0; b < p2; ++b) {
                    if (a + b > 0) xs += ',';
                    xs += format_double(ind.design(j, a + p1 * b));
                }
            }
            xs += '\n';
            ys += format_double(ind.y(j)) + '\n';
        }
        write_text(dir / xname, xs);
        write_text(dir / yname, ys);
        files.push_back({{"X", xname}, {"y", yname}});
        ms.push_back(ind.samples());
    }
    json manifest = {{"format", "homopursuit-dataset"}, {"version", kVersion}, {"n", data.n()},
                     {"p1", p1},  {"p2", p2},  {"m", ms},  {"model", std::string(to_string(model))},
                     {"x_layout", "row-major"}, {"files", files}};
    write_json(dir / "manifest.json", manifest);
}

DatasetFiles read_dataset(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw ConfigError("missing dataset file " + mpath.string());
    const json man = read_json(mpath);
    const std::string where = mpath.string();
    reject_unknown_keys(man, {"format", "version", "n", "p1", "p2", "m", "model", "x_layout", "files"}, where);
    if (man.value("format", "") != "homopursuit-dataset") throw ConfigError(where + ": not a dataset manifest");
    const Index n = get_index(man, "n", where), p1 = get_index(man, "p1", where), p2 = get_index(man, "p2", where);
    if (n < 1 || p1 < 1 || p2 < 1) throw ConfigError(where + ": n, p1, p2 must be positive");
    if (man.value("x_layout", "row-major") != "row-major") throw ConfigError(where + ": unsupported x_layout");
    DatasetFiles out;
    try {
        out.model = parse_link(man.value("model", "linear"));
    } catch (const ArgumentError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    if (!man.contains("m") || !man["m"].is_array() || static_cast<Index>(man["m"].size()) != n) {
        throw ConfigError(where + ": 'm' must list n sample counts");
    }
    const bool listed = man.contains("files");
    if (listed && (!man["files"].is_array() || static_cast<Index>(man["files"].size()) != n)) {
        throw ConfigError(where + ": 'files' must list n entries");
    }
    std::vector<Individual> inds(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Index m = man["m"][k].get<Index>();
        std::string xname = "X_" + std::to_string(i + 1) + ".csv";
        std::string yname = "y_" + std::to_string(i + 1) + ".csv";
        if (listed) {
            xname = man["files"][k].value("X", xname);
            yname = man["files"][k].value("y", yname);
        }
        const auto xrows = read_csv(dir / xname);
        const auto yrows = read_csv(dir / yname);
        if (static_cast<Index>(xrows.size()) != m || static_cast<Index>(yrows.size()) != m) {
            throw ConfigError((dir / xname).string() + ": row count does not match m_i=" + std::to_string(m));
        }
        Individual& ind = inds[k];
        ind.design.resize(m, p1 * p2);
        ind.y.resize(m);
        for (Index j = 0; j < m; ++j) {
            const auto& xr = xrows[static_cast<std::size_t>(j)];
            const auto& yr = yrows[static_cast<std::size_t>(j)];
            if (static_cast<Index>(xr.size()) != p1 * p2) {
                throw ConfigError((dir / xname).string() + ": row " + std::to_string(j + 1) + " needs p1*p2 values");
            }
            if (yr.size() != 1) throw ConfigError((dir / yname).string() + ": one value per row expected");
            for (Index a = 0; a < p1; ++a) {
                for (Index b = 0; b < p2; ++b) ind.design(j, a + p1 * b) = xr[static_cast<std::size_t>(a * p2 + b)];
            }
            ind.y(j) = yr[0];
        }
    }
    out.data = Dataset(p1, p2, std::move(inds));
    return out;
}

namespace {

void put_le(std::string& buf, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
        buf.push_back(static_cast<char>(bits & 0xFFu));
        bits >>= 8;
    }
}

void put_block(std::string& buf, const Matrix& m) {
    for (Index k = 0; k < m.size(); ++k) put_le(buf, m.data()[k]);
}

class BinReader {
public:
    BinReader(std::string bytes, fs::path file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

    Matrix block(Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = next();
        return m;
    }

    void finish() const {
        if (pos_ != bytes_.size()) throw ConfigError(file_.string() + ": trailing bytes");
    }

private:
    double next() {
        if (pos_ + 8 > bytes_.size()) throw ConfigError(file_.string() + ": truncated");
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(b)]);
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    std::string bytes_;
    fs::path file_;
    std::size_t pos_ = 0;
};

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("missing file " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json base_meta(const std::string& layout) {
    return {{"format", "homopursuit-theta"}, {"version", kVersion}, {"layout", layout},
            {"dtype", "float64"}, {"byte_order", "little"}, {"order", "column-major"}};
}

void merge_extra(json& meta, const json& extra) {
    for (const auto& [k, v] : extra.items()) meta[k] = v;
}

}  // namespace

void write_theta(const fs::path& dir, const ParameterSet& theta, const json& extra) {
    theta.validate();
    fs::create_directories(dir);
    std::string buf;
    put_block(buf, theta.C);
    put_block(buf, theta.R);
    for (Index i = 0; i < theta.n(); ++i) {
        put_block(buf, theta.L1[static_cast<std::size_t>(i)]);
        put_block(buf, theta.L2[static_cast<std::size_t>(i)]);
    }
    write_text(dir / "theta.bin", buf);
    json meta = base_meta("shared");
    meta["p1"] = theta.p1();
    meta["p2"] = theta.p2();
    meta["K1"] = theta.K1();
    meta["K2"] = theta.K2();
    meta["r"] = theta.r();
    meta["n"] = theta.n();
    meta["blocks"] = "C, R, then L1_i, L2_i for i = 1..n";
    merge_extra(meta, extra);
    write_json(dir / "theta.meta.json", meta);
}

void write_hetero(const fs::path& dir, const HeteroFit& fit, const json& extra) {
    if (fit.n() < 1) throw ArgumentError("write_hetero: empty fit");
    fs::create_directories(dir);
    std::string buf;
    for (Index i = 0; i < fit.n(); ++i) {
        put_block(buf, fit.C[static_cast<std::size_t>(i)]);
        put_block(buf, fit.R[static_cast<std::size_t>(i)]);
    }
    write_text(dir / "theta.bin", buf);
    json meta = base_meta("individual");
    meta["p1"] = fit.C.front().rows();
    meta["p2"] = fit.R.front().rows();
    meta["r"] = fit.rank();
    meta["n"] = fit.n();
    meta["blocks"] = "C_i, R_i for i = 1..n";
    merge_extra(meta, extra);
    write_json(dir / "theta.meta.json", meta);
}

ThetaFiles read_theta(const fs::path& dir) {
    const fs::path mpath = dir / "theta.meta.json";
    if (!fs::exists(mpath)) throw ConfigError("missing file " + mpath.string());
    ThetaFiles out;
    out.meta = read_json(mpath);
    const std::string where = mpath.string();
    if (out.meta.value("format", "") != "homopursuit-theta") throw ConfigError(where + ": not a theta meta file");
    if (out.meta.value("byte_order", "little") != "little" || out.meta.value("dtype", "float64") != "float64") {
        throw ConfigError(where + ": unsupported encoding");
    }
    out.layout = out.meta.value("layout", "");
    const Index p1 = get_index(out.meta, "p1", where), p2 = get_index(out.meta, "p2", where);
    const Index r = get_index(out.meta, "r", where), n = get_index(out.meta, "n", where);
    BinReader rd(slurp(dir / "theta.bin"), dir / "theta.bin");
    if (out.layout == "shared") {
        const Index K1 = get_index(out.meta, "K1", where), K2 = get_index(out.meta, "K2", where);
        out.shared.C = rd.block(p1, K1);
        out.shared.R = rd.block(p2, K2);
        for (Index i = 0; i < n; ++i) {
            out.shared.L1.push_back(rd.block(K1, r));
            out.shared.L2.push_back(rd.block(K2, r));
        }
    } else if (out.layout == "individual") {
        for (Index i = 0; i < n; ++i) {
            out.individual.C.push_back(rd.block(p1, r));
            out.individual.R.push_back(rd.block(p2, r));
        }
    } else {
        throw ConfigError(where + ": unknown layout '" + out.layout + "'");
    }
    rd.finish();
    return out;
}

Tensor3 coefficients(const ThetaFiles& t) {
    return t.layout == "shared" ? coefficient_tensor(t.shared) : t.individual.coefficient_tensor();
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw std::logic_error("CsvTable: row width does not match header");
    rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
    std::string out;
    const auto line = [&out](const std::vector<std::string>& cells) {
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k) out += ',';
            out += cells[k];
        }
        out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
}

void CsvTable::write(const fs::path& path) const {
    write_text(path, str());
}

}  // namespace homopursuit::io
