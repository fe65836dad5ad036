#pragma once

#include "sfldp/errors.hpp"
#include "sfldp/path.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef SFLDP_VERSION
#define SFLDP_VERSION "0.1.0"
#endif

namespace sfldp::io {

namespace fs = std::filesystem;

inline constexpr const char* version = SFLDP_VERSION;
inline constexpr int csv_header_lines = 8;

/// Shortest round-trip-safe text form (17 significant digits).
/// Parses a whole string as a double; accepts subnormals, inf and nan.
inline double parse_double(const std::string& s) {
    if (s.empty()) throw std::invalid_argument("parse_double: empty");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw std::invalid_argument("parse_double: '" + s + "'");
    return v;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + p.string());
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------- config

/**
 * @brief Flat INI-style configuration: `[section]` headers and `key = value` lines.
 *
 * Comments start with `#` or `;`. Keys outside any section live in section "".
 * Lookups report failures as ConfigError with the `section.key` path.
 */
class Config {
public:
    using Section = std::map<std::string, std::string>;

    static Config parse(std::string_view text) {
        Config c;
        std::string section;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string s = trim(strip_comment(line));
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError("line " + std::to_string(lineno), "unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                if (section.empty() || section.find_first_of(".[]= ") != std::string::npos)
                    throw ConfigError("line " + std::to_string(lineno), "bad section name");
                c.sections_[section];
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key = value");
            const std::string key = trim(s.substr(0, eq));
            if (key.empty() || key.find_first_of(".[] ") != std::string::npos)
                throw ConfigError("line " + std::to_string(lineno), "bad key");
            c.sections_[section][key] = trim(s.substr(eq + 1));
        }
        return c;
    }

    static Config load(const fs::path& p) { return parse(read_file(p)); }

    /// Canonical text: sections and keys sorted, one blank line between sections.
    std::string to_string() const {
        std::ostringstream out;
        bool first = true;
        for (const auto& [name, keys] : sections_) {
            if (!first) out << '\n';
            first = false;
            if (!name.empty()) out << '[' << name << "]\n";
            for (const auto& [k, v] : keys) out << k << " = " << v << '\n';
        }
        return out.str();
    }

    std::string hash() const { return sha256_hex(to_string()); }

    bool has(const std::string& section, const std::string& key) const {
        auto it = sections_.find(section);
        return it != sections_.end() && it->second.count(key);
    }

    void set(const std::string& section, const std::string& key, std::string value) {
        sections_[section][key] = std::move(value);
    }

    void set(const std::string& section, const std::string& key, double value) {
        set(section, key, format_double(value));
    }

    std::string get_string(const std::string& section, const std::string& key) const {
        auto it = sections_.find(section);
        if (it == sections_.end() || !it->second.count(key)) throw ConfigError(path(section, key), "missing");
        return it->second.at(key);
    }

    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
        return has(section, key) ? get_string(section, key) : fallback;
    }

    double get_double(const std::string& section, const std::string& key) const {
        return to_double(get_string(section, key), path(section, key));
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? get_double(section, key) : fallback;
    }

    long long get_int(const std::string& section, const std::string& key) const {
        const std::string s = get_string(section, key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(path(section, key), "expected an integer, got '" + s + "'");
        }
    }

    long long get_int(const std::string& section, const std::string& key, long long fallback) const {
        return has(section, key) ? get_int(section, key) : fallback;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string s = get_string(section, key);
        try {
            std::size_t pos = 0;
            if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
            const unsigned long long v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(path(section, key), "expected an unsigned integer, got '" + s + "'");
        }
    }

    std::vector<double> get_list(const std::string& section, const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(get_string(section, key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), path(section, key)));
        if (out.empty()) throw ConfigError(path(section, key), "empty list");
        return out;
    }

    std::vector<double> get_list(const std::string& section, const std::string& key,
                                 const std::vector<double>& fallback) const {
        return has(section, key) ? get_list(section, key) : fallback;
    }

    const std::map<std::string, Section>& sections() const { return sections_; }

    friend bool operator==(const Config&, const Config&) = default;

private:
    std::map<std::string, Section> sections_;

    static std::string path(const std::string& s, const std::string& k) { return s.empty() ? k : s + "." + k; }

    static std::string strip_comment(const std::string& line) {
        const auto p = line.find_first_of("#;");
        return p == std::string::npos ? line : line.substr(0, p);
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static double to_double(const std::string& s, const std::string& field) {
        try {
            return parse_double(s);
        } catch (const std::exception&) {
            throw ConfigError(field, "expected a number, got '" + s + "'");
        }
    }
};

inline std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

// ---------------------------------------------------------------- csv

/// Provenance stamped into the 8 commented header lines of every CSV.
struct CsvHeader {
    std::string kind;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> meta;  // one line, key=value pairs separated by ';'
};

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add(std::vector<double> row) {
        if (row.size() != columns.size()) throw std::invalid_argument("CsvTable: row width mismatch");
        rows.push_back(std::move(row));
    }

    std::size_t column(const std::string& name) const {
        auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw std::out_of_range("CsvTable: no column " + name);
        return static_cast<std::size_t>(it - columns.begin());
    }
};

/**
 * Layout: 8 lines starting with '#'
 *   format, kind, config_sha256, seed, version, meta, rows, columns
 * then one plain line of column names, then the data rows.
 */
inline std::string csv_to_string(const CsvHeader& h, const CsvTable& t) {
    std::ostringstream out;
    std::string meta;
    for (const auto& [k, v] : h.meta) meta += (meta.empty() ? "" : ";") + k + "=" + v;
    std::string cols;
    for (std::size_t i = 0; i < t.columns.size(); ++i) cols += (i ? "," : "") + t.columns[i];
    out << "# format: sfldp-csv 1\n"
        << "# kind: " << h.kind << '\n'
        << "# config_sha256: " << h.config_hash << '\n'
        << "# seed: " << h.seed << '\n'
        << "# version: " << version << '\n'
        << "# meta: " << meta << '\n'
        << "# rows: " << t.rows.size() << '\n'
        << "# columns: " << cols << '\n'
        << cols << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
        out << '\n';
    }
    return out.str();
}

inline void write_csv(const fs::path& p, const CsvHeader& h, const CsvTable& t) { write_file(p, csv_to_string(h, t)); }

struct CsvDocument {
    CsvHeader header;
    CsvTable table;
};

inline CsvDocument parse_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<std::string> head;
    for (int i = 0; i < csv_header_lines; ++i) {
        if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw std::runtime_error("csv: bad header line");
        const auto colon = line.find(": ");
        head.push_back(colon == std::string::npos ? std::string() : line.substr(colon + 2));
        if (colon == std::string::npos && line.back() == ':') head.back().clear();
    }
    CsvDocument d;
    d.header.kind = head[1];
    d.header.config_hash = head[2];
    d.header.seed = std::stoull(head[3]);
    {
        std::stringstream ms(head[5]);
        std::string kv;
        while (std::getline(ms, kv, ';')) {
            const auto eq = kv.find('=');
            if (eq != std::string::npos) d.header.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
    }
    if (!std::getline(in, line)) throw std::runtime_error("csv: missing column row");
    {
        std::stringstream cs(line);
        std::string c;
        while (std::getline(cs, c, ',')) d.table.columns.push_back(c);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream rs(line);
        std::string cell;
        while (std::getline(rs, cell, ',')) row.push_back(parse_double(cell));
        d.table.add(std::move(row));
    }
    const std::size_t declared = std::stoull(head[6]);
    if (declared != d.table.rows.size()) throw std::runtime_error("csv: row count does not match header");
    return d;
}

inline CsvDocument read_csv(const fs::path& p) { return parse_csv(read_file(p)); }

/// Long-format trajectory table: one row per (node, mode).
inline CsvTable path_table(const PathH& p) {
    CsvTable t{{"t", "mode", "coeff"}, {}};
    for (int k = 0; k < p.n_nodes(); ++k)
        for (int i = 0; i < p.basis().n_modes; ++i) t.add({p.grid().time(k), double(i + 1), p.data()(i, k)});
    return t;
}

// ---------------------------------------------------------------- binary trajectories

inline constexpr char binary_magic[8] = {'S', 'F', 'L', 'D', 'P', 'T', 'R', '1'};

/**
 * Binary trajectory record: 8-byte magic "SFLDPTR1", uint32 N, uint32 n_steps,
 * double T, then (n_steps + 1) x N doubles, row k holding the coefficients at
 * t_k. Native little-endian byte order.
 */
inline std::string path_to_binary(const PathH& p) {
    std::string out(binary_magic, 8);
    auto put = [&](const void* src, std::size_t n) { out.append(static_cast<const char*>(src), n); };
    const std::uint32_t n = static_cast<std::uint32_t>(p.basis().n_modes);
    const std::uint32_t steps = static_cast<std::uint32_t>(p.grid().n_steps);
    const double T = p.grid().T;
    put(&n, 4);
    put(&steps, 4);
    put(&T, 8);
    for (int k = 0; k < p.n_nodes(); ++k)
        for (int i = 0; i < p.basis().n_modes; ++i) {
            const double v = p.data()(i, k);
            put(&v, 8);
        }
    return out;
}

inline PathH path_from_binary(std::string_view bytes, double length = 3.14159265358979323846) {
    if (bytes.size() < 24 || std::memcmp(bytes.data(), binary_magic, 8) != 0)
        throw std::runtime_error("binary path: bad magic");
    std::uint32_t n = 0, steps = 0;
    double T = 0.0;
    std::memcpy(&n, bytes.data() + 8, 4);
    std::memcpy(&steps, bytes.data() + 12, 4);
    std::memcpy(&T, bytes.data() + 16, 8);
    const std::size_t expected = 24 + std::size_t(steps + 1) * n * 8;
    if (bytes.size() != expected) throw std::runtime_error("binary path: truncated record");
    PathH p(TimeGrid{T, static_cast<int>(steps)}, BasisSpec{length, static_cast<int>(n)});
    const char* src = bytes.data() + 24;
    for (std::uint32_t k = 0; k <= steps; ++k)
        for (std::uint32_t i = 0; i < n; ++i, src += 8) std::memcpy(&p.data()(i, k), src, 8);
    return p;
}

// ---------------------------------------------------------------- manifest

struct ManifestEntry {
    std::string path;  // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

/**
 * @brief manifest.json of a run directory.
 *
 * Lists every artifact with its SHA-256 and size. No timestamps, so identical
 * runs give identical manifests.
 */
struct Manifest {
    std::string kind;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string status = "ok";  // "ok" or "partial"
    std::vector<std::string> notes;
    std::vector<ManifestEntry> files;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["format"] = "sfldp-manifest 1";
        j["version"] = version;
        j["kind"] = kind;
        j["config_sha256"] = config_hash;
        j["seed"] = seed;
        j["status"] = status;
        j["notes"] = notes;
        j["files"] = nlohmann::ordered_json::array();
        for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
        return j;
    }

    static Manifest from_json(const nlohmann::json& j) {
        Manifest m;
        m.kind = j.at("kind").get<std::string>();
        m.config_hash = j.at("config_sha256").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.status = j.at("status").get<std::string>();
        m.notes = j.at("notes").get<std::vector<std::string>>();
        for (const auto& f : j.at("files"))
            m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                               f.at("bytes").get<std::uintmax_t>()});
        return m;
    }
};

inline constexpr const char* manifest_name = "manifest.json";

/**
 * @brief Collects artifacts for one run directory and writes the manifest last.
 */
class ArtifactWriter {
public:
    ArtifactWriter(fs::path dir, std::string kind, std::string config_hash, std::uint64_t seed) : dir_(std::move(dir)) {
        fs::create_directories(dir_);
        m_.kind = std::move(kind);
        m_.config_hash = std::move(config_hash);
        m_.seed = seed;
    }

    const fs::path& dir() const { return dir_; }

    CsvHeader header(std::map<std::string, std::string> meta = {}) const {
        return CsvHeader{m_.kind, m_.config_hash, m_.seed, std::move(meta)};
    }

    void write(const std::string& rel, std::string_view bytes) {
        write_file(dir_ / rel, bytes);
        m_.files.push_back({rel, sha256_hex(bytes), bytes.size()});
    }

    void csv(const std::string& rel, const CsvTable& t, std::map<std::string, std::string> meta = {}) {
        write(rel, csv_to_string(header(std::move(meta)), t));
    }

    void json(const std::string& rel, const nlohmann::ordered_json& j) { write(rel, j.dump(2) + "\n"); }

    void mark_partial(const std::string& note) {
        m_.status = "partial";
        m_.notes.push_back(note);
    }

    void note(const std::string& n) { m_.notes.push_back(n); }

    const Manifest& manifest() const { return m_; }

    /// Writes manifest.json with entries sorted by path.
    void finish() {
        std::sort(m_.files.begin(), m_.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
        write_file(dir_ / manifest_name, m_.to_json().dump(2) + "\n");
    }

private:
    fs::path dir_;
    Manifest m_;
};

inline Manifest read_manifest(const fs::path& dir) {
    return Manifest::from_json(nlohmann::json::parse(read_file(dir / manifest_name)));
}

/// Paths whose checksum or size no longer matches the manifest (missing files included).
inline std::vector<std::string> verify_manifest(const fs::path& dir) {
    const Manifest m = read_manifest(dir);
    std::vector<std::string> bad;
    for (const auto& f : m.files) {
        const fs::path p = dir / f.path;
        if (!fs::exists(p) || fs::file_size(p) != f.bytes || sha256_file(p) != f.sha256) bad.push_back(f.path);
    }
    return bad;
}

}  // namespace sfldp::io
