#pragma once

// Binary checkpoint encoding and small file helpers shared by all modules.

#include "fairflow/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fairflow::io {

// Little-endian binary encoder for versioned checkpoint files.
class BinaryWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(std::string_view s);
    void fixed_str(std::string_view s, std::size_t width);  // zero-padded
    void doubles(const std::vector<double>& v);
    void matrix(const Matrix& m);
    void raw(const void* data, std::size_t n);

    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::string bytes) : buf_(std::move(bytes)) {}

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::string fixed_str(std::size_t width);
    std::vector<double> doubles();
    Matrix matrix();
    void expect_magic(std::string_view magic);
    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void take(void* out, std::size_t n);

    std::string buf_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace fairflow::io
