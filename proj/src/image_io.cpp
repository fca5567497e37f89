#include "qlife/image_io.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qlife/errors.hpp"

namespace qlife {

namespace {

constexpr std::array<unsigned char, 8> kPngSignature = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& payload) {
    put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_begin = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + crc_begin, static_cast<uInt>(out.size() - crc_begin)));
    put_u32_be(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png_gray(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw DataError("write_png_gray: expected a [1, h, w] tensor, got " + image.shape_str());
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> raw;
    raw.reserve(h * (w + 1));
    for (std::size_t y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        for (std::size_t x = 0; x < w; ++x) {
            float v = image[y * w + x];
            v = std::min(1.0f, std::max(0.0f, v));
            raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
        }
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(comp_len);
    if (compress2(compressed.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw DataError("write_png_gray: deflate failed for " + path);
    }
    compressed.resize(comp_len);

    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(w));
    put_u32_be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace

    std::vector<unsigned char> file(kPngSignature.begin(), kPngSignature.end());
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", compressed);
    append_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw DataError("write failed: " + path);
}

Tensor read_png_gray(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (file.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), file.begin())) {
        throw DataError("not a PNG file: " + path);
    }

    std::size_t pos = 8;
    std::uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0, interlace = 0;
    bool saw_ihdr = false;
    std::vector<unsigned char> idat;
    while (pos + 12 <= file.size()) {
        const std::uint32_t len = get_u32_be(&file[pos]);
        if (pos + 12 + len > file.size()) throw DataError("truncated PNG chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const unsigned char* payload = &file[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("malformed IHDR in " + path);
            width = get_u32_be(payload);
            height = get_u32_be(payload + 4);
            bit_depth = payload[8];
            color_type = payload[9];
            interlace = payload[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width == 0 || height == 0) throw DataError("missing image header in " + path);
    if (bit_depth != 8) {
        throw DataError("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " + path +
                        " (only 8-bit supported)");
    }
    if (interlace != 0) throw DataError("interlaced PNG not supported: " + path);
    int channels;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw DataError("unsupported PNG color type in " + path);
    }

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    const std::size_t raw_len = static_cast<std::size_t>(height) * (stride + 1);
    std::vector<unsigned char> raw(raw_len);
    uLongf dest_len = static_cast<uLongf>(raw_len);
    if (uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        dest_len != raw_len) {
        throw DataError("corrupt PNG image data in " + path);
    }

    // Undo per-row filters in place (prev starts as a zero row).
    std::vector<unsigned char> pixels(static_cast<std::size_t>(height) * stride);
    std::vector<unsigned char> prev(stride, 0);
    for (std::size_t y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = &raw[y * (stride + 1) + 1];
        unsigned char* dst = &pixels[y * stride];
        for (std::size_t x = 0; x < stride; ++x) {
            const int left = x >= static_cast<std::size_t>(channels) ? dst[x - channels] : 0;
            const int up = prev[x];
            const int ul = x >= static_cast<std::size_t>(channels) ? prev[x - channels] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw DataError("unknown PNG filter type in " + path);
            }
            dst[x] = static_cast<unsigned char>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }

    Tensor image({1, height, width});
    const int color_channels = (channels == 2) ? 1 : (channels == 4 ? 3 : channels);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const unsigned char* px = &pixels[(y * width + x) * channels];
            int sum = 0;
            for (int c = 0; c < color_channels; ++c) sum += px[c];
            image[y * width + x] =
                static_cast<float>(sum) / (255.0f * static_cast<float>(color_channels));
        }
    }
    return image;
}

FeatureTable read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty feature table: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t dim = 0;
    int class_col = -1, domain_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "class") {
            class_col = static_cast<int>(i);
        } else if (header[i] == "domain") {
            domain_col = static_cast<int>(i);
        } else if (header[i] == "f" + std::to_string(dim)) {
            ++dim;
        } else {
            throw DataError("unexpected feature table column '" + header[i] + "' in " + path);
        }
    }
    if (dim == 0) throw DataError("feature table has no f0.. columns: " + path);

    std::vector<float> values;
    FeatureTable table;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (static_cast<int>(col) == class_col) {
                table.class_labels.push_back(cell);
            } else if (static_cast<int>(col) == domain_col) {
                table.domain_labels.push_back(cell);
            } else {
                try {
                    values.push_back(std::stof(cell));
                } catch (...) {
                    throw DataError("non-numeric value '" + cell + "' at row " +
                                    std::to_string(rows + 2) + " in " + path);
                }
            }
            ++col;
        }
        if (col != header.size()) {
            throw DataError("row " + std::to_string(rows + 2) + " has " + std::to_string(col) +
                            " cells, expected " + std::to_string(header.size()) + " in " + path);
        }
        ++rows;
    }
    if (rows == 0) throw DataError("feature table has no data rows: " + path);
    table.features = Tensor({rows, dim}, std::move(values));
    return table;
}

void write_feature_csv(const std::string& path, const Tensor& features,
                       const std::vector<std::string>& class_labels,
                       const std::vector<std::string>& domain_labels) {
    if (features.rank() != 2) throw DataError("write_feature_csv: features must be [n, d]");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (!class_labels.empty() && class_labels.size() != n) {
        throw DataError("write_feature_csv: class label count mismatch");
    }
    if (!domain_labels.empty() && domain_labels.size() != n) {
        throw DataError("write_feature_csv: domain label count mismatch");
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (std::size_t j = 0; j < d; ++j) {
        if (j) out << ",";
        out << "f" << j;
    }
    if (!class_labels.empty()) out << ",class";
    if (!domain_labels.empty()) out << ",domain";
    out << "\n";
    out.precision(9);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (j) out << ",";
            out << features[i * d + j];
        }
        if (!class_labels.empty()) out << "," << class_labels[i];
        if (!domain_labels.empty()) out << "," << domain_labels[i];
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace qlife
