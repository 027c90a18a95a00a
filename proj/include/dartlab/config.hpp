#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dartlab {

/// Flat key=value configuration with dotted sections (e.g. dart.lambda=50).
/// '#' starts a comment; blank lines are ignored.
std::map<std::string, std::string> parse_kv_text(const std::string& body);

/// Typed view over resolved key=value pairs. Reads consume keys so unknown
/// leftovers can be rejected; every value that influenced the run is
/// recorded in `resolved` for the summary echo.
class Params {
public:
    explicit Params(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    long long get_int(const std::string& key, long long fallback, long long lo, long long hi);
    double get_real(const std::string& key, double fallback,
                    double lo = -1e300, double hi = 1e300);
    bool get_bool(const std::string& key, bool fallback);
    std::string get_string(const std::string& key, const std::string& fallback);
    std::vector<double> get_real_list(const std::string& key, std::vector<double> fallback);
    std::vector<long long> get_int_list(const std::string& key,
                                        std::vector<long long> fallback);

    /// Throws ConfigError naming the first unconsumed key.
    void reject_unknown() const;

    const std::map<std::string, std::string>& resolved() const { return resolved_; }
    /// Canonical text form of the resolved configuration (sorted keys).
    std::string resolved_text() const;

private:
    std::string take(const std::string& key, bool* found);
    std::map<std::string, std::string> kv_;
    std::map<std::string, std::string> resolved_;
};

struct ExperimentConfig {
    std::string kind;
    std::string out_dir = ".";
    std::uint64_t master_seed = 1;
    std::map<std::string, std::string> kv;  // kind-specific keys
};

/// Builds the experiment configuration from an optional config file plus
/// command-line overrides (flag values win over file values).
ExperimentConfig parse_config(const std::string& path_or_empty,
                              const std::vector<std::string>& overrides);

const std::vector<std::string>& known_kinds();

}  // namespace dartlab
