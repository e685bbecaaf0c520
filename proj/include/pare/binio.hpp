#pragma once
// Little-endian binary stream helpers shared by the PARE and checkpoint readers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace pare::binio {

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("cannot open file: " + path);
    }

    std::uint64_t offset() const { return offset_; }

    void read_bytes(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw std::runtime_error(path_ + ": truncated file reading " + what + " at byte offset " +
                                     std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint8_t read_u8(const char* what) {
        std::uint8_t v;
        read_bytes(&v, 1, what);
        return v;
    }

    std::uint16_t read_u16(const char* what) {
        std::uint16_t v;
        read_bytes(&v, 2, what);
        return v;
    }

    std::uint32_t read_u32(const char* what) {
        std::uint32_t v;
        read_bytes(&v, 4, what);
        return v;
    }

    std::string read_string(std::size_t n, const char* what) {
        std::string s(n, '\0');
        if (n > 0) read_bytes(s.data(), n, what);
        return s;
    }

    void read_f32(float* dst, std::size_t count, const char* what) {
        read_bytes(dst, count * sizeof(float), what);
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    std::string path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open file for writing: " + path);
    }

    void write_bytes(const void* src, std::size_t n) {
        out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
    }

    void write_u8(std::uint8_t v) { write_bytes(&v, 1); }
    void write_u16(std::uint16_t v) { write_bytes(&v, 2); }
    void write_u32(std::uint32_t v) { write_bytes(&v, 4); }
    void write_string(const std::string& s) { write_bytes(s.data(), s.size()); }
    void write_f32(const float* src, std::size_t count) { write_bytes(src, count * sizeof(float)); }

    void finish() {
        out_.flush();
        if (!out_) throw std::runtime_error("write failed: " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

}  // namespace pare::binio
