#include "fairflow/io.hpp"

#include "fairflow/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes little-endian");

namespace fairflow::io {

void BinaryWriter::raw(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
}

void BinaryWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }

void BinaryWriter::str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
}

void BinaryWriter::fixed_str(std::string_view s, std::size_t width) {
    if (s.size() >= width) throw Error("string '" + std::string(s) + "' exceeds fixed field width");
    raw(s.data(), s.size());
    buf_.append(width - s.size(), '\0');
}

void BinaryWriter::doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
}

void BinaryWriter::matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    raw(m.data().data(), m.size() * sizeof(double));
}

void BinaryReader::take(void* out, std::size_t n) {
    if (remaining() < n) throw Error("truncated binary file");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}

std::uint32_t BinaryReader::u32() {
    std::uint32_t v;
    take(&v, sizeof v);
    return v;
}

std::uint64_t BinaryReader::u64() {
    std::uint64_t v;
    take(&v, sizeof v);
    return v;
}

double BinaryReader::f64() {
    double v;
    take(&v, sizeof v);
    return v;
}

std::string BinaryReader::str() {
    const auto n = u64();
    if (remaining() < n) throw Error("truncated binary file");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
}

std::string BinaryReader::fixed_str(std::size_t width) {
    if (remaining() < width) throw Error("truncated binary file");
    std::string s(buf_.data() + pos_, width);
    pos_ += width;
    s.resize(std::strlen(s.c_str()));
    return s;
}

std::vector<double> BinaryReader::doubles() {
    const auto n = u64();
    if (remaining() / sizeof(double) < n) throw Error("truncated binary file");
    std::vector<double> v(n);
    take(v.data(), n * sizeof(double));
    return v;
}

Matrix BinaryReader::matrix() {
    const auto r = u64();
    const auto c = u64();
    if (c != 0 && remaining() / sizeof(double) / c < r) throw Error("truncated binary file");
    std::vector<double> v(r * c);
    take(v.data(), v.size() * sizeof(double));
    return Matrix(r, c, std::move(v));
}

void BinaryReader::expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    take(got.data(), got.size());
    if (got != magic) throw Error("bad file magic: expected " + std::string(magic));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace fairflow::io
