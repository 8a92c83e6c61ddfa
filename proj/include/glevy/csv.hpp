#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glevy {

// Floating-point cells are printed with 12 significant digits; the rendered
// text is the stable byte-level contract of every report file.
inline std::string csv_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

class CsvBuilder {
public:
    CsvBuilder& cell(const std::string& s) {
        if (!line_empty_) out_ += ',';
        out_ += s;
        line_empty_ = false;
        return *this;
    }
    CsvBuilder& cell(const char* s) { return cell(std::string(s)); }
    CsvBuilder& cell(double v) { return cell(csv_number(v)); }
    CsvBuilder& cell(long v) { return cell(std::to_string(v)); }
    CsvBuilder& cell(int v) { return cell(std::to_string(v)); }
    CsvBuilder& cell(bool v) { return cell(std::string(v ? "1" : "0")); }
    CsvBuilder& endrow() {
        out_ += '\n';
        line_empty_ = true;
        return *this;
    }
    const std::string& str() const { return out_; }

private:
    std::string out_;
    bool line_empty_ = true;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << content;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace glevy
