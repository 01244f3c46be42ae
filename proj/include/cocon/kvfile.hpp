#pragma once

// Flat key=value text files: config sidecars and effective-config echoes.
// Keys are written sorted so identical content means identical bytes.

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace cocon {

inline void write_kv_file(const std::string& path, const std::map<std::string, std::string>& kv) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("kvfile: cannot open " + path);
    for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("kvfile: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value, got '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace cocon
