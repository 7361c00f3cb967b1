#include "octseg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace octseg {

namespace {

std::uint16_t to_u16(double v) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void png_chunk(std::ofstream& os, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> buf;
    put_be32(buf, static_cast<std::uint32_t>(data.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), data.begin(), data.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, buf.data() + 4, static_cast<uInt>(buf.size() - 4)));
    put_be32(buf, crc);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm16: cannot write " + path.string());
    os << "P5\n" << img.cols << " " << img.rows << "\n65535\n";
    for (double v : img.pixels) {
        const std::uint16_t u = to_u16(v);
        os.put(static_cast<char>(u >> 8));
        os.put(static_cast<char>(u & 0xff));
    }
}

void write_pgm8(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm8: cannot write " + path.string());
    os << "P5\n" << img.cols << " " << img.rows << "\n255\n";
    for (double v : img.pixels) os.put(static_cast<char>(to_u8(v)));
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM: " + path.string());
    int cols = 0, rows = 0, maxval = 0;
    // Netpbm allows # comments between header tokens.
    auto next_int = [&is, &path]() {
        for (;;) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        int v;
        if (!(is >> v)) throw std::runtime_error("read_pgm: bad header in " + path.string());
        return v;
    };
    cols = next_int();
    rows = next_int();
    maxval = next_int();
    is.get();  // single whitespace after maxval
    GrayImage img;
    img.rows = rows;
    img.cols = cols;
    img.pixels.resize(static_cast<size_t>(rows) * cols);
    if (maxval < 256) {
        std::vector<std::uint8_t> raw(img.pixels.size());
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / static_cast<double>(maxval);
    } else {
        std::vector<std::uint8_t> raw(img.pixels.size() * 2);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            const int v = (raw[2 * i] << 8) | raw[2 * i + 1];
            img.pixels[i] = v / static_cast<double>(maxval);
        }
    }
    if (!is) throw std::runtime_error("read_pgm: truncated data in " + path.string());
    return img;
}

void RgbImage::set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
    const size_t i = (static_cast<size_t>(r) * cols + c) * 3;
    pixels[i] = red;
    pixels[i + 1] = green;
    pixels[i + 2] = blue;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_png: cannot write " + path.string());
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.cols));
    put_be32(ihdr, static_cast<std::uint32_t>(img.rows));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    png_chunk(os, "IHDR", ihdr);

    // Filter byte 0 per scanline, then one zlib stream.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.rows) * (1 + static_cast<size_t>(img.cols) * 3));
    for (int r = 0; r < img.rows; ++r) {
        raw.push_back(0);
        const std::uint8_t* row = &img.pixels[static_cast<size_t>(r) * img.cols * 3];
        raw.insert(raw.end(), row, row + static_cast<size_t>(img.cols) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK) {
        throw std::runtime_error("write_png: deflate failed");
    }
    compressed.resize(bound);
    png_chunk(os, "IDAT", compressed);
    png_chunk(os, "IEND", {});
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot write " + path.string());
    os << "P6\n" << img.cols << " " << img.rows << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
}

void write_boundary_csv(const std::filesystem::path& path, const Tensor& positions) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_boundary_csv: cannot write " + path.string());
    positions.to_csv(os);
}

Tensor read_boundary_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_boundary_csv: cannot open " + path.string());
    std::vector<double> values;
    std::string line;
    int rows = 0;
    int cols = -1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int c = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++c;
        }
        if (cols < 0) cols = c;
        if (c != cols) {
            throw std::runtime_error("read_boundary_csv: ragged row in " + path.string());
        }
        ++rows;
    }
    return Tensor::from_data({rows, cols}, std::move(values));
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_json: cannot open " + path.string());
    nlohmann::json j;
    is >> j;
    return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_json: cannot write " + path.string());
    os << j.dump(2) << "\n";
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const nlohmann::json& config) {
    nlohmann::json j;
    j["tool"] = "octseg";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["config"] = config;
    write_json(dir / "manifest.json", j);
}

}  // namespace octseg
