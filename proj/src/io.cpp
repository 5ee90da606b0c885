#include "varhor/io.hpp"

#include <cstdio>
#include <stdexcept>

namespace varhor {

std::string sig17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), width_(header.size()) {
    if (!out_)
        throw std::runtime_error("cannot open output file: " + path);
    for (size_t i = 0; i < header.size(); ++i)
        out_ << header[i] << (i + 1 < header.size() ? "," : "\n");
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != width_)
        throw std::runtime_error("CSV row width mismatch");
    for (size_t i = 0; i < fields.size(); ++i)
        out_ << fields[i] << (i + 1 < fields.size() ? "," : "\n");
}

} // namespace varhor
