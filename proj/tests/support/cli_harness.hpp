#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vmus/cli.hpp"

namespace vmus::test {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

inline CliResult run_cli_capture(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Every regular file under dir except the resolved config, keyed by relative path.
inline std::map<std::string, std::string> outputs(const std::filesystem::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = std::filesystem::relative(e.path(), dir).string();
        if (rel == "config.json") continue;
        files[rel] = slurp(e.path());
    }
    return files;
}

}  // namespace vmus::test
