#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "homopursuit/optim.hpp"

namespace homopursuit::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

/// printf("%.17g") of a double; round-trips exactly.
std::string format_double(double v);

/// Reads a JSON file; ConfigError naming the file if missing or malformed.
json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& doc);
void write_text(const fs::path& path, const std::string& text);

/// Throws ConfigError listing any key of `obj` not in `allowed`.
void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where);

/**
 * Dataset directory layout:
 *   manifest.json   {"format":"homopursuit-dataset","n","p1","p2","m":[m_1..m_n],
 *                    "model","x_layout":"row-major","files":[{"X","y"},...]}
 *   X_<i>.csv       m_i rows, p1*p2 columns; column a*p2 + b holds X_ij(a, b)
 *   y_<i>.csv       m_i rows, one response each
 * Individuals are numbered from 1 in file names.
 */
struct DatasetFiles {
    Dataset data;
    LinkKind model = LinkKind::Linear;
};

void write_dataset(const fs::path& dir, const Dataset& data, LinkKind model);
DatasetFiles read_dataset(const fs::path& dir);

/**
 * Parameter files.  theta.bin is a flat little-endian float64 stream of
 * column-major blocks; theta.meta.json names the layout:
 *   "shared":     C (p1 x K1), R (p2 x K2), then L1_i (K1 x r), L2_i (K2 x r)
 *                 for i = 1..n
 *   "individual": C_i (p1 x r), R_i (p2 x r) for i = 1..n
 */
void write_theta(const fs::path& dir, const ParameterSet& theta, const json& extra = json::object());
void write_hetero(const fs::path& dir, const HeteroFit& fit, const json& extra = json::object());

struct ThetaFiles {
    std::string layout;  // "shared" or "individual"
    ParameterSet shared;
    HeteroFit individual;
    json meta;
};

ThetaFiles read_theta(const fs::path& dir);

/// Stack of B_i from either layout.
Tensor3 coefficients(const ThetaFiles& t);

/// A CSV table with a fixed header; values are written verbatim.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);
    void add_row(std::vector<std::string> row);
    std::string str() const;
    void write(const fs::path& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace homopursuit::io
