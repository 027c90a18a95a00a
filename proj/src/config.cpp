#include "dartlab/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"

namespace dartlab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& body) {
    std::map<std::string, std::string> kv;
    std::istringstream in(body);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" +
                              line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key on config line " + std::to_string(lineno));
        kv[key] = val;
    }
    return kv;
}

std::string Params::take(const std::string& key, bool* found) {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        *found = false;
        return "";
    }
    *found = true;
    std::string v = it->second;
    kv_.erase(it);
    return v;
}

long long Params::get_int(const std::string& key, long long fallback, long long lo, long long hi) {
    bool found = false;
    std::string v = take(key, &found);
    long long out = fallback;
    if (found) {
        try {
            std::size_t pos = 0;
            out = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
        }
    }
    if (out < lo || out > hi)
        throw ConfigError("key '" + key + "' = " + std::to_string(out) + " outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
    resolved_[key] = std::to_string(out);
    return out;
}

double Params::get_real(const std::string& key, double fallback, double lo, double hi) {
    bool found = false;
    std::string v = take(key, &found);
    double out = fallback;
    if (found) {
        try {
            std::size_t pos = 0;
            out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a real number, got '" + v + "'");
        }
    }
    if (!(out >= lo && out <= hi))
        throw ConfigError("key '" + key + "' = " + format_double(out) + " outside [" +
                          format_double(lo) + ", " + format_double(hi) + "]");
    resolved_[key] = format_double(out);
    return out;
}

bool Params::get_bool(const std::string& key, bool fallback) {
    bool found = false;
    std::string v = take(key, &found);
    bool out = fallback;
    if (found) {
        if (v == "true" || v == "1")
            out = true;
        else if (v == "false" || v == "0")
            out = false;
        else
            throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
    }
    resolved_[key] = out ? "true" : "false";
    return out;
}

std::string Params::get_string(const std::string& key, const std::string& fallback) {
    bool found = false;
    std::string v = take(key, &found);
    std::string out = found ? v : fallback;
    resolved_[key] = out;
    return out;
}

std::vector<double> Params::get_real_list(const std::string& key, std::vector<double> fallback) {
    bool found = false;
    std::string v = take(key, &found);
    std::vector<double> out;
    if (!found) {
        out = std::move(fallback);
    } else {
        std::istringstream in(v);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) continue;
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "' has a non-numeric entry '" + tok + "'");
            }
        }
        if (out.empty()) throw ConfigError("key '" + key + "' expects a comma-separated list");
    }
    std::string echo;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i) echo += ',';
        echo += format_double(out[i]);
    }
    resolved_[key] = echo;
    return out;
}

std::vector<long long> Params::get_int_list(const std::string& key,
                                            std::vector<long long> fallback) {
    std::vector<double> defaults;
    for (long long v : fallback) defaults.push_back(double(v));
    std::vector<double> reals = get_real_list(key, defaults);
    std::vector<long long> out;
    std::string echo;
    for (double v : reals) {
        long long n = static_cast<long long>(v);
        if (double(n) != v) throw ConfigError("key '" + key + "' expects integers");
        out.push_back(n);
        if (!echo.empty()) echo += ',';
        echo += std::to_string(n);
    }
    resolved_[key] = echo;
    return out;
}

void Params::reject_unknown() const {
    if (!kv_.empty())
        throw ConfigError("unknown config key '" + kv_.begin()->first + "'");
}

std::string Params::resolved_text() const {
    std::string out;
    for (const auto& [k, v] : resolved_) out += k + " = " + v + "\n";
    return out;
}

const std::vector<std::string>& known_kinds() {
    static const std::vector<std::string> kinds = {
        "prop1",  "corollary", "prop2", "prop3",      "barrier", "flatness",
        "trajectory", "dart",  "erm",   "mtbench",    "balance"};
    return kinds;
}

ExperimentConfig parse_config(const std::string& path_or_empty,
                              const std::vector<std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!path_or_empty.empty()) kv = parse_kv_text(read_text_file(path_or_empty));
    for (const std::string& ov : overrides) {
        auto one = parse_kv_text(ov);
        for (auto& [k, v] : one) kv[k] = v;  // flags win over file values
    }

    ExperimentConfig cfg;
    if (auto it = kv.find("kind"); it != kv.end()) {
        cfg.kind = it->second;
        kv.erase(it);
    }
    if (cfg.kind.empty()) throw ConfigError("missing required key 'kind'");
    if (std::find(known_kinds().begin(), known_kinds().end(), cfg.kind) == known_kinds().end()) {
        std::string names;
        for (const std::string& k : known_kinds()) names += k + " ";
        throw ConfigError("unknown experiment kind '" + cfg.kind + "' (expected one of: " +
                          names + ")");
    }
    if (auto it = kv.find("out"); it != kv.end()) {
        cfg.out_dir = it->second;
        kv.erase(it);
    }
    if (auto it = kv.find("master_seed"); it != kv.end()) {
        try {
            cfg.master_seed = std::stoull(it->second);
        } catch (const std::exception&) {
            throw ConfigError("key 'master_seed' expects an unsigned integer");
        }
        kv.erase(it);
    }
    cfg.kv = std::move(kv);
    return cfg;
}

}  // namespace dartlab
