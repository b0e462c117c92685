#include "regsynth/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <zlib.h>

#include "json.hpp"

namespace regsynth {

namespace {

std::uint8_t to_byte(double v) {
  return std::uint8_t(std::clamp(std::lround(v), 0l, 255l));
}

void write_sidecar(const std::string& image_path, double spacing_mm) {
  nlohmann::json j;
  j["spacing_mm"] = spacing_mm;
  std::ofstream f(sidecar_path(image_path));
  if (!f) throw std::runtime_error("cannot write sidecar for " + image_path);
  f << j.dump(2) << "\n";
}

double read_sidecar(const std::string& image_path) {
  std::ifstream f(sidecar_path(image_path));
  if (!f) return 1.0;
  nlohmann::json j;
  f >> j;
  return j.value("spacing_mm", 1.0);
}

void append_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

std::uint32_t read_u32be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  append_u32be(out, std::uint32_t(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = std::uint32_t(
      crc32(0, out.data() + crc_start, uInt(out.size() - crc_start)));
  append_u32be(out, crc);
}

std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
  uLongf bound = compressBound(uLong(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, in.data(), uLong(in.size()), 6) != Z_OK)
    throw std::runtime_error("zlib compression failed");
  out.resize(bound);
  return out;
}

std::vector<std::uint8_t> zlib_decompress(const std::uint8_t* data, std::size_t n,
                                          std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf len = uLongf(expected);
  if (uncompress(out.data(), &len, data, uLong(n)) != Z_OK || len != expected)
    throw std::runtime_error("zlib decompression failed");
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

} // namespace

std::string sidecar_path(const std::string& image_path) {
  const auto slash = image_path.find_last_of("/\\");
  const auto dot = image_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return image_path + ".json";
  return image_path.substr(0, dot) + ".json";
}

void write_pgm(const Image2D& img, const std::string& path) {
  img.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(std::size_t(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) row[std::size_t(x)] = to_byte(img.at(x, y));
    f.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
  write_sidecar(path, img.spacing);
}

void write_png(const Image2D& img, const std::string& path) {
  img.validate();
  // filter type 0 on every scanline
  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(img.height) * (std::size_t(img.width) + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.width; ++x) raw.push_back(to_byte(img.at(x, y)));
  }
  const auto idat = zlib_compress(raw);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  append_u32be(ihdr, std::uint32_t(img.width));
  append_u32be(ihdr, std::uint32_t(img.height));
  ihdr.push_back(8); // bit depth
  ihdr.push_back(0); // grayscale
  ihdr.push_back(0); // deflate
  ihdr.push_back(0); // filter method
  ihdr.push_back(0); // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", idat);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  write_sidecar(path, img.spacing);
}

namespace {

Image2D read_pgm(std::ifstream& f, const std::string& path) {
  auto next_token = [&f, &path]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string line;
        std::getline(f, line);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("truncated PGM header in " + path);
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("only 8-bit PGM supported: " + path);
  f.get(); // single whitespace after header
  Image2D img(w, h, read_sidecar(path));
  std::vector<std::uint8_t> buf(std::size_t(w) * h);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!f) throw std::runtime_error("truncated PGM data in " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = double(buf[i]);
  return img;
}

Image2D read_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < 8 + 25) throw std::runtime_error("truncated PNG: " + path);
  std::size_t pos = 8;
  int w = 0, h = 0;
  bool have_header = false;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32be(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("truncated PNG: " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* payload = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = int(read_u32be(payload));
      h = int(read_u32be(payload + 4));
      if (payload[8] != 8 || payload[9] != 0 || payload[12] != 0)
        throw std::runtime_error("only 8-bit grayscale non-interlaced PNG supported: " + path);
      have_header = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!have_header || w <= 0 || h <= 0)
    throw std::runtime_error("invalid PNG header: " + path);

  const std::size_t stride = std::size_t(w) + 1;
  const auto raw = zlib_decompress(idat.data(), idat.size(), stride * std::size_t(h));

  Image2D img(w, h, read_sidecar(path));
  std::vector<std::uint8_t> prev(std::size_t(w), 0);
  std::vector<std::uint8_t> cur(std::size_t(w), 0);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[std::size_t(y) * stride];
    const std::uint8_t* src = &raw[std::size_t(y) * stride + 1];
    for (int x = 0; x < w; ++x) {
      const int a = x > 0 ? cur[std::size_t(x - 1)] : 0;
      const int b = prev[std::size_t(x)];
      const int c = x > 0 ? prev[std::size_t(x - 1)] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("unsupported PNG filter in " + path);
      }
      cur[std::size_t(x)] = std::uint8_t(v & 0xff);
      img.at(x, y) = double(cur[std::size_t(x)]);
    }
    std::swap(prev, cur);
  }
  return img;
}

} // namespace

void write_raw_raster(const Image2D& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  std::vector<float> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = float(img.data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  nlohmann::json j;
  j["width"] = img.width;
  j["height"] = img.height;
  j["spacing_mm"] = img.spacing;
  std::ofstream sf(sidecar_path(path));
  if (!sf) throw std::runtime_error("cannot write sidecar for " + path);
  sf << j.dump(2) << "\n";
}

Image2D read_raw_raster(const std::string& path) {
  std::ifstream sf(sidecar_path(path));
  if (!sf) throw std::runtime_error("missing raster sidecar for " + path);
  nlohmann::json j;
  sf >> j;
  Image2D img(j.at("width").get<int>(), j.at("height").get<int>(),
              j.at("spacing_mm").get<double>());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<float> buf(img.size());
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated raster file " + path);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = double(buf[i]);
  return img;
}

Image2D read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  if (magic[0] == 'P' && magic[1] == '5') return read_pgm(f, path);
  f.seekg(0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  static const std::uint8_t png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_magic, 8) == 0)
    return read_png(bytes, path);
  throw std::runtime_error("unrecognised image format: " + path);
}

} // namespace regsynth
