#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rporag/error.hpp"

namespace rporag {

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

inline std::vector<nlohmann::json> read_jsonl(std::istream& in, const std::string& source) {
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(source, number, e.what());
        }
    }
    return out;
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_jsonl(in, path.string());
}

// Writes through a sibling temp file and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& write) {
    auto tmp = path;
    tmp.replace_filename("." + path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw WriteError("cannot open " + tmp.string());
        write(out);
        out.flush();
        if (!out) throw WriteError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw WriteError("cannot rename into " + path.string());
    }
}

}  // namespace rporag
