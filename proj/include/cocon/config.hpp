#pragma once

// Run configuration: a flat key=value file merged with command-line
// overrides (overrides win). Every key a command consumes is declared up
// front with a default; unknown keys are a hard error. The effective
// configuration is echoed to the output directory so any run can be
// reproduced from its artifacts.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cocon/kvfile.hpp"

namespace cocon {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string def;
    std::string help;
};

using ConfigSchema = std::map<std::string, ConfigKey>;

class RunConfig {
public:
    static RunConfig load(const ConfigSchema& schema, const std::string& config_path,
                          const std::vector<std::string>& overrides) {
        RunConfig rc;
        rc.schema_ = schema;
        for (const auto& [k, v] : schema) rc.values_[k] = v.def;
        if (!config_path.empty()) {
            for (const auto& [k, v] : read_kv_file(config_path)) {
                if (!schema.count(k)) {
                    throw ConfigError("unknown config key '" + k + "' in " + config_path);
                }
                rc.values_[k] = v;
            }
        }
        for (const auto& kv : overrides) {
            auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw ConfigError("override must be key=value, got '" + kv + "'");
            }
            std::string k = kv.substr(0, eq);
            if (!schema.count(k)) throw ConfigError("unknown config key '" + k + "'");
            rc.values_[k] = kv.substr(eq + 1);
        }
        return rc;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("undeclared config key '" + key + "'");
        return it->second;
    }

    bool empty(const std::string& key) const { return str(key).empty(); }

    uint64_t u64(const std::string& key) const {
        const std::string& v = str(key);
        try {
            if (v.empty() || v.find('-') != std::string::npos) throw std::invalid_argument(v);
            size_t used = 0;
            uint64_t out = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" +
                              v + "'");
        }
    }

    double f64(const std::string& key) const {
        try {
            return std::stod(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + str(key) +
                              "'");
        }
    }

    bool flag(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
    }

    void echo(const std::string& path) const {
        std::map<std::string, std::string> kv(values_.begin(), values_.end());
        write_kv_file(path, kv);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    ConfigSchema schema_;
    std::map<std::string, std::string> values_;
};

// Output root: --out beats the environment variable beats ./runs.
inline std::string output_root(const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (const char* env = std::getenv("COCONDENSER_OUT")) {
        if (*env) return env;
    }
    return "runs";
}

inline std::string ensure_out_dir(const std::string& root, const std::string& name) {
    std::filesystem::path dir = std::filesystem::path(root) / name;
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace cocon
