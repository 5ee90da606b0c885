#ifndef VARHOR_IO_HPP
#define VARHOR_IO_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace varhor {

// shortest decimal form that round-trips a double (17 significant digits)
std::string sig17(double x);

// FNV-1a hash of a string, hex-encoded (used as the config fingerprint)
std::string fnv1a_hex(const std::string& s);

// Writes one CSV file: fixed header, rows of preformatted fields.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);
    bool good() const { return out_.good(); }

  private:
    std::ofstream out_;
    size_t width_;
};

} // namespace varhor

#endif
