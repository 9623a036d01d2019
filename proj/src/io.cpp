#include "megenum/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace megenum {

void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    fs::create_directories(parent);
    const fs::path tmp = parent / ("." + path.filename().string() + ".tmp" + std::to_string(std::random_device{}()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

std::string short_number(double v) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}


std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    return out;
}

std::optional<double> to_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) return std::nullopt;
    return v;
}

template <class T>
std::optional<T> to_integer(const std::string& s) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Line reader that tracks 1-based line numbers and skips blank lines.
class Lines {
public:
    Lines(const std::string& text, std::string source) : in_(text), source_(std::move(source)) {}

    bool next(std::string& line) {
        while (std::getline(in_, line)) {
            ++number_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!trim(line).empty()) return true;
        }
        return false;
    }
    std::string require(const std::string& what) {
        std::string line;
        if (!next(line)) fail("unexpected end of file, expected " + what);
        return line;
    }
    [[noreturn]] void fail(const std::string& message) const { throw ParseError(source_, number_, message); }
    double number(const std::string& tok) const {
        const auto v = to_double(tok);
        if (!v) fail("not a number: '" + tok + "'");
        return *v;
    }
    long integer(const std::string& tok) const {
        const auto v = to_integer<long>(tok);
        if (!v) fail("not an integer: '" + tok + "'");
        return *v;
    }
    int line_number() const { return number_; }

private:
    std::istringstream in_;
    std::string source_;
    int number_ = 0;
};

void append_matrix(std::string& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ' ';
            out += num(m(i, j));
        }
        out += '\n';
    }
}

Matrix read_matrix(Lines& lines, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto toks = split_ws(lines.require("row " + std::to_string(i + 1) + " of " + std::to_string(rows)));
        if (static_cast<Eigen::Index>(toks.size()) != cols)
            lines.fail("expected " + std::to_string(cols) + " values, found " + std::to_string(toks.size()));
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = lines.number(toks[static_cast<std::size_t>(j)]);
            if (!std::isfinite(m(i, j))) lines.fail("non-finite value in data");
        }
    }
    return m;
}

void expect_end(Lines& lines) {
    std::string extra;
    if (lines.next(extra)) lines.fail("unexpected trailing content");
}

std::vector<std::string> csv_header(Lines& lines, const std::vector<std::vector<std::string>>& accepted) {
    const auto cols = split(lines.require("CSV header"), ',');
    for (const auto& a : accepted)
        if (cols == a) return cols;
    std::string expected;
    for (const auto& c : accepted.front()) expected += (expected.empty() ? "" : ",") + c;
    lines.fail("unexpected header; expected " + expected);
}

}  // namespace

std::string format_measurement(const MeasurementSet& measurement) {
    const Matrix& d = measurement.data;
    std::string out = std::to_string(d.rows()) + ' ' + std::to_string(d.cols()) + ' ' +
                      num(measurement.sampling_rate_hz) + '\n';
    append_matrix(out, d);
    return out;
}

MeasurementSet parse_measurement(const std::string& text, const std::string& source) {
    Lines lines(text, source);
    const auto head = split_ws(lines.require("header 'M N sampling_rate_hz'"));
    if (head.size() != 3) lines.fail("header must be 'M N sampling_rate_hz'");
    const long m = lines.integer(head[0]);
    const long n = lines.integer(head[1]);
    const double fs = lines.number(head[2]);
    if (m < 1 || n < 1) lines.fail("dimensions must be positive");
    if (!(fs > 0.0)) lines.fail("sampling rate must be positive");
    MeasurementSet out;
    out.sampling_rate_hz = fs;
    out.data = read_matrix(lines, m, n);
    expect_end(lines);
    return out;
}

std::string format_trials(const TrialSet& trials) {
    if (trials.trials.empty()) throw InvalidInput("no trials to write");
    const Matrix& first = trials.trials.front();
    std::string out = std::to_string(trials.trials.size()) + ' ' + std::to_string(first.rows()) + ' ' +
                      std::to_string(first.cols()) + ' ' + std::to_string(trials.baseline_samples) + '\n';
    for (const auto& t : trials.trials) append_matrix(out, t);
    return out;
}

TrialSet parse_trials(const std::string& text, const std::string& source) {
    Lines lines(text, source);
    const auto head = split_ws(lines.require("header 'T M N_total baseline_samples'"));
    if (head.size() != 4) lines.fail("header must be 'T M N_total baseline_samples'");
    const long t = lines.integer(head[0]);
    const long m = lines.integer(head[1]);
    const long n = lines.integer(head[2]);
    const long b = lines.integer(head[3]);
    if (t < 1 || m < 1 || n < 1) lines.fail("dimensions must be positive");
    if (b < 0 || b >= n) lines.fail("baseline_samples must lie in [0, N_total)");
    TrialSet out;
    out.baseline_samples = static_cast<int>(b);
    for (long i = 0; i < t; ++i) out.trials.push_back(read_matrix(lines, m, n));
    expect_end(lines);
    return out;
}

std::string format_sensors(const SensorArray& sensors) {
    std::string out = "x,y,z,ox,oy,oz\n";
    for (std::size_t i = 0; i < sensors.size(); ++i) {
        const Vec3& p = sensors.positions[i];
        const Vec3& o = sensors.orientations[i];
        out += num(p.x()) + ',' + num(p.y()) + ',' + num(p.z()) + ',' + num(o.x()) + ',' + num(o.y()) + ',' +
               num(o.z()) + '\n';
    }
    return out;
}

SensorArray parse_sensors(const std::string& text, const std::string& source) {
    Lines lines(text, source);
    csv_header(lines, {{"x", "y", "z", "ox", "oy", "oz"}});
    SensorArray out;
    std::string line;
    while (lines.next(line)) {
        const auto f = split(line, ',');
        if (f.size() != 6) lines.fail("expected 6 fields");
        out.positions.emplace_back(lines.number(f[0]), lines.number(f[1]), lines.number(f[2]));
        out.orientations.emplace_back(lines.number(f[3]), lines.number(f[4]), lines.number(f[5]));
    }
    if (out.size() == 0) lines.fail("no sensors");
    return out;
}

std::string format_grid(const SourceGrid& grid) {
    const bool oriented = grid.fixed_orientations.has_value();
    std::string out = oriented ? "x,y,z,ox,oy,oz\n" : "x,y,z\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec3& p = grid.points[i];
        out += num(p.x()) + ',' + num(p.y()) + ',' + num(p.z());
        if (oriented) {
            const Vec3& o = (*grid.fixed_orientations)[i];
            out += ',' + num(o.x()) + ',' + num(o.y()) + ',' + num(o.z());
        }
        out += '\n';
    }
    return out;
}

SourceGrid parse_grid(const std::string& text, const std::string& source) {
    Lines lines(text, source);
    const auto cols = csv_header(lines, {{"x", "y", "z"}, {"x", "y", "z", "ox", "oy", "oz"}});
    SourceGrid out;
    if (cols.size() == 6) out.fixed_orientations.emplace();
    std::string line;
    while (lines.next(line)) {
        const auto f = split(line, ',');
        if (f.size() != cols.size()) lines.fail("expected " + std::to_string(cols.size()) + " fields");
        out.points.emplace_back(lines.number(f[0]), lines.number(f[1]), lines.number(f[2]));
        if (out.fixed_orientations)
            out.fixed_orientations->emplace_back(lines.number(f[3]), lines.number(f[4]), lines.number(f[5]));
    }
    if (out.size() == 0) lines.fail("no grid points");
    return out;
}

std::string format_thresholds(const ThresholdTable& table) {
    std::string out = "snr_db,k_reduced,threshold,mean_accuracy\n";
    for (const auto& [key, e] : table.entries())
        out += short_number(key.first) + ',' + std::to_string(key.second) + ',' + num(e.threshold) + ',' +
               (std::isnan(e.mean_accuracy) ? std::string() : short_number(e.mean_accuracy)) + '\n';
    return out;
}

ThresholdTable parse_thresholds(const std::string& text, const std::string& source) {
    Lines lines(text, source);
    const auto cols = csv_header(lines, {{"snr_db", "k_reduced", "threshold", "mean_accuracy"},
                                         {"snr_db", "k_reduced", "threshold"}});
    ThresholdTable out;
    std::string line;
    while (lines.next(line)) {
        const auto f = split(line, ',');
        if (f.size() != cols.size()) lines.fail("expected " + std::to_string(cols.size()) + " fields");
        const double snr = lines.number(f[0]);
        const long k = lines.integer(f[1]);
        const double t = lines.number(f[2]);
        const double acc = cols.size() == 4 && !f[3].empty() ? lines.number(f[3]) : std::nan("");
        try {
            out.set(snr, static_cast<int>(k), t, acc);
        } catch (const InvalidInput& e) {
            lines.fail(e.what());
        }
    }
    if (out.empty()) lines.fail("threshold table has no rows");
    return out;
}

std::string format_curves(const std::vector<AccuracyCurve>& curves) {
    std::string out = "snr_db,q_true,threshold,accuracy\n";
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.thresholds.size(); ++i)
            out += short_number(c.snr_db) + ',' + std::to_string(c.q_true) + ',' + num(c.thresholds[i]) + ',' +
                   short_number(c.accuracy_at(i)) + '\n';
    return out;
}

std::string format_results(const std::vector<ComparisonRow>& rows) {
    std::string out = std::string(kResultsHeader) + '\n';
    for (const auto& r : rows)
        out += std::to_string(r.run_id) + ',' + std::to_string(r.seed) + ',' + std::to_string(r.q_true) + ',' +
               short_number(r.rho) + ',' + short_number(r.snr_db) + ',' + short_number(r.model_error_mm.x()) + ',' +
               short_number(r.model_error_mm.y()) + ',' + short_number(r.model_error_mm.z()) + ',' +
               std::to_string(r.q_hat_fratio) + ',' + std::to_string(r.q_hat_aic) + ',' +
               std::to_string(r.q_hat_mdl) + '\n';
    return out;
}

std::string format_truth(const ScenarioSpec& spec, const SourceSet& truth, const SourceGrid& grid) {
    std::string out;
    out += "q_true=" + std::to_string(spec.q_true) + '\n';
    out += "seed=" + std::to_string(spec.seed) + '\n';
    out += "snr_db=" + short_number(spec.snr_db) + '\n';
    out += "orientation_mode=" + std::string(to_string(spec.orientation_mode)) + '\n';
    out += "model_error_mm=" + short_number(spec.model_error_mm.x()) + ',' + short_number(spec.model_error_mm.y()) + ',' +
           short_number(spec.model_error_mm.z()) + '\n';
    out += "\nindex,x,y,z,ox,oy,oz\n";
    for (std::size_t i = 0; i < truth.point_indices.size(); ++i) {
        const Vec3& p = grid.points[truth.point_indices[i]];
        const Vec3& o = truth.orientations[i];
        out += std::to_string(truth.point_indices[i]) + ',' + num(p.x()) + ',' + num(p.y()) + ',' + num(p.z()) + ',' +
               num(o.x()) + ',' + num(o.y()) + ',' + num(o.z()) + '\n';
    }
    return out;
}

std::string format_enumeration(const EnumerationResult& result) {
    std::string out;
    out += "method=" + std::string(to_string(result.method)) + '\n';
    out += "q_hat=" + std::to_string(result.q_hat) + '\n';
    out += std::string("saturated=") + (result.saturated ? "true" : "false") + '\n';
    if (!std::isnan(result.snr_bin)) out += "snr_bin_db=" + short_number(result.snr_bin) + '\n';
    if (!result.steps.empty()) {
        out += "\nk_reduced,f_value,threshold,decision,dof_reduced,dof_full,ss_reduced,ss_full,flags\n";
        for (const auto& s : result.steps) {
            std::string flags;
            if (s.f.perfect_full_fit) flags += "perfect_full_fit";
            if (s.f.non_nested) flags += std::string(flags.empty() ? "" : ";") + "non_nested";
            out += std::to_string(s.k_reduced) + ',' + num(s.f.value) + ',' + num(s.threshold) + ',' +
                   (s.reject ? "reject" : "accept") + ',' + std::to_string(s.dof_reduced) + ',' +
                   std::to_string(s.dof_full) + ',' + num(s.ss_reduced) + ',' + num(s.ss_full) + ',' + flags + '\n';
        }
    }
    return out;
}

Config Config::parse(const std::string& text, const std::string& source) {
    Config c;
    c.source_ = source;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(source, number, "expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        if (key.empty()) throw ParseError(source, number, "missing key before '='");
        if (c.entries_.count(key))
            throw ParseError(source, number,
                             "duplicate key '" + key + "' (first set on line " + std::to_string(c.entries_[key].line) + ")");
        c.entries_[key] = Entry{trim(body.substr(eq + 1)), source, number};
    }
    return c;
}

Config Config::load(const fs::path& path) { return parse(read_file(path), path.string()); }

void Config::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
        throw InvalidInput("override '" + assignment + "' must look like key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value, const std::string& origin) {
    entries_[key] = Entry{value, origin, 0};
}

void Config::merge(const Config& other) {
    for (const auto& [k, e] : other.entries_) entries_[k] = e;
    if (other.source_ != "<config>") source_ = other.source_;
}

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

const Config::Entry* Config::lookup(const std::string& key) const {
    used_.insert(key);
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

void Config::fail(const std::string& key, const std::string& message) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError(source_, 0, "key '" + key + "': " + message);
    throw ParseError(it->second.origin, it->second.line, "key '" + key + "': " + message);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const Entry* e = lookup(key);
    return e ? e->value : fallback;
}

std::string Config::require_string(const std::string& key) const {
    const Entry* e = lookup(key);
    if (!e) fail(key, "required but missing");
    return e->value;
}

double Config::get_double(const std::string& key, double fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    const auto v = to_double(e->value);
    if (!v) fail(key, "expected a number, got '" + e->value + "'");
    return *v;
}

double Config::require_double(const std::string& key) const {
    if (!lookup(key)) fail(key, "required but missing");
    return get_double(key, 0.0);
}

int Config::get_int(const std::string& key, int fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    const auto v = to_integer<int>(e->value);
    if (!v) fail(key, "expected an integer, got '" + e->value + "'");
    return *v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    const auto v = to_integer<std::uint64_t>(e->value);
    if (!v) fail(key, "expected an unsigned integer, got '" + e->value + "'");
    return *v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(key, "expected true or false, got '" + e->value + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    std::vector<double> out;
    if (e->value.empty()) return out;
    for (const auto& tok : split(e->value, ',')) {
        const auto v = to_double(tok);
        if (!v) fail(key, "expected a comma-separated list of numbers, got '" + tok + "'");
        out.push_back(*v);
    }
    return out;
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    std::vector<int> out;
    if (e->value.empty()) return out;
    for (const auto& tok : split(e->value, ',')) {
        const auto v = to_integer<int>(tok);
        if (!v) fail(key, "expected a comma-separated list of integers, got '" + tok + "'");
        out.push_back(*v);
    }
    return out;
}

std::vector<Vec3> Config::get_vec3s(const std::string& key, const std::vector<Vec3>& fallback) const {
    const Entry* e = lookup(key);
    if (!e) return fallback;
    std::vector<Vec3> out;
    if (e->value.empty()) return out;
    for (const auto& triple : split(e->value, ';')) {
        const auto parts = split(triple, ',');
        if (parts.size() != 3) fail(key, "expected x,y,z triples separated by ';', got '" + triple + "'");
        Vec3 v;
        for (int i = 0; i < 3; ++i) {
            const auto d = to_double(parts[static_cast<std::size_t>(i)]);
            if (!d) fail(key, "not a number: '" + parts[static_cast<std::size_t>(i)] + "'");
            v(i) = *d;
        }
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> Config::unused_keys(const std::string& origin) const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries_)
        if (e.origin == origin && !used_.count(k)) out.push_back(k);
    return out;
}

std::map<std::string, std::string> Config::snapshot() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, e] : entries_) out[k] = e.value;
    return out;
}

}  // namespace megenum
