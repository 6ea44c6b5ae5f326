#include "bpeq/png.hpp"

#include <zlib.h>

#include <array>
#include <cstring>

#include "bpeq/error.hpp"

namespace bpeq {

namespace {

constexpr std::array<unsigned char, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  if (pos + 4 > s.size()) {
    throw FormatError("truncated PNG");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(s.data() + pos);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const RgbImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw InvalidArgument("invalid RGB image");
  }
  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (1 + 3 * static_cast<std::size_t>(image.width)));
  const std::size_t stride = 3 * static_cast<std::size_t>(image.width);
  for (int y = 0; y < image.height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(image.pixels.data()) + y * stride, stride);
  }
  uLongf zsize = ::compressBound(static_cast<uLong>(raw.size()));
  std::string z(zsize, '\0');
  if (::compress2(reinterpret_cast<Bytef*>(z.data()), &zsize, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error("zlib compression failed");
  }
  z.resize(zsize);

  std::string out(kSignature.begin(), kSignature.end());
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // depth 8, RGB, deflate, filter 0, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

RgbImage decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature.data(), 8) != 0) {
    throw FormatError("not a PNG");
  }
  RgbImage img;
  std::string idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(bytes, pos);
    const std::string type = bytes.substr(pos + 4, 4);
    if (pos + 12 + len > bytes.size()) {
      throw FormatError("truncated PNG chunk");
    }
    const std::string data = bytes.substr(pos + 8, len);
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(bytes.data() + pos + 4), static_cast<uInt>(len + 4)));
    if (crc != get_u32(bytes, pos + 8 + len)) {
      throw FormatError("PNG chunk CRC mismatch");
    }
    if (type == "IHDR") {
      if (len < 13) throw FormatError("truncated PNG header");
      img.width = static_cast<int>(get_u32(data, 0));
      img.height = static_cast<int>(get_u32(data, 4));
      if (data[8] != 8 || data[9] != 2 || data[12] != 0) {
        throw FormatError("only 8-bit non-interlaced RGB PNGs are supported");
      }
    } else if (type == "IDAT") {
      idat += data;
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0) {
    throw FormatError("PNG without a usable IHDR");
  }
  const std::size_t stride = 3 * static_cast<std::size_t>(img.width);
  uLongf raw_size = static_cast<uLongf>((stride + 1) * img.height);
  std::string raw(raw_size, '\0');
  if (::uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_size, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw FormatError("corrupt PNG image data");
  }
  img.pixels.resize(stride * img.height);
  for (int y = 0; y < img.height; ++y) {
    if (raw[y * (stride + 1)] != 0) {
      throw FormatError("unsupported PNG row filter");
    }
    std::memcpy(img.pixels.data() + y * stride, raw.data() + y * (stride + 1) + 1, stride);
  }
  return img;
}

}  // namespace bpeq
