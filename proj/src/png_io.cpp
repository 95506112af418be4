#include "arnet/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace arnet {

namespace {

const unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void write_chunk(std::ofstream& f, const char type[4], const unsigned char* data,
                 std::uint32_t len) {
  std::vector<unsigned char> head;
  put_be32(head, len);
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  f.write(type, 4);
  if (len) f.write(reinterpret_cast<const char*>(data), len);
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (len) crc = crc32(crc, data, len);
  std::vector<unsigned char> tail;
  put_be32(tail, static_cast<std::uint32_t>(crc));
  f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open image: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() > 8 && std::memcmp(bytes.data(), kSig, 8) == 0,
          "not a png file: " + path);

  std::size_t at = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<unsigned char> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (at + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = be32(&bytes[at]);
    require(at + 12 + len <= bytes.size(), "corrupt png: " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[at + 4]);
    const unsigned char* data = &bytes[at + 8];
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, &bytes[at + 4], 4 + len);
    require(static_cast<std::uint32_t>(crc) == be32(&bytes[at + 8 + len]),
            "corrupt png (bad checksum): " + path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      require(len == 13, "corrupt png: " + path);
      width = static_cast<int>(be32(data));
      height = static_cast<int>(be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    at += 12 + len;
  }
  require(saw_ihdr && saw_iend && width > 0 && height > 0, "corrupt png: " + path);
  require(bit_depth == 8, "unsupported png (only 8-bit supported): " + path);
  require(interlace == 0, "unsupported png (interlaced): " + path);
  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 4: channels = 2; break;
    case 6: channels = 4; break;
    default:
      throw DataError("unsupported png (palette or unknown color type): " + path);
  }

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_size = (stride + 1) * static_cast<std::size_t>(height);
  std::vector<unsigned char> raw(raw_size);
  uLongf out_len = raw_size;
  const int zrc = uncompress(raw.data(), &out_len, idat.data(),
                             static_cast<uLong>(idat.size()));
  require(zrc == Z_OK && out_len == raw_size, "corrupt png (bad image data): " + path);

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.resize(stride * static_cast<std::size_t>(height));

  const int bpp = channels;  // bytes per pixel at 8-bit depth
  for (int y = 0; y < height; ++y) {
    const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    const int filter = row[0];
    unsigned char* cur = img.data.data() + static_cast<std::size_t>(y) * stride;
    const unsigned char* up =
        y > 0 ? img.data.data() + static_cast<std::size_t>(y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int x = row[1 + i];
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v;
      switch (filter) {
        case 0: v = x; break;
        case 1: v = x + a; break;
        case 2: v = x + b; break;
        case 3: v = x + (a + b) / 2; break;
        case 4: v = x + paeth(a, b, c); break;
        default: throw DataError("corrupt png (unknown filter): " + path);
      }
      cur[i] = static_cast<unsigned char>(v & 0xff);
    }
  }
  return img;
}

void write_png(const std::string& path, const ImageU8& image) {
  require(image.width > 0 && image.height > 0, "cannot write empty image");
  require(image.channels == 1 || image.channels == 3 || image.channels == 4,
          "png writer supports 1, 3 or 4 channels");
  require(image.data.size() == static_cast<std::size_t>(image.width) * image.height *
                                   image.channels,
          "image buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write image: " + path);
  f.write(reinterpret_cast<const char*>(kSig), 8);

  unsigned char ihdr[13];
  std::vector<unsigned char> tmp;
  put_be32(tmp, static_cast<std::uint32_t>(image.width));
  put_be32(tmp, static_cast<std::uint32_t>(image.height));
  std::memcpy(ihdr, tmp.data(), 8);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = image.channels == 1 ? 0 : (image.channels == 3 ? 2 : 6);
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter method
  ihdr[12] = 0;  // no interlace
  write_chunk(f, "IHDR", ihdr, 13);

  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    row[0] = 0;  // filter: none
    std::memcpy(row + 1, image.data.data() + static_cast<std::size_t>(y) * stride, stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> packed(bound);
  const int zrc = compress2(packed.data(), &bound, raw.data(),
                            static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION);
  require(zrc == Z_OK, "png compression failed");
  write_chunk(f, "IDAT", packed.data(), static_cast<std::uint32_t>(bound));
  write_chunk(f, "IEND", nullptr, 0);
  require(f.good(), "cannot write image: " + path);
}

std::uint64_t pixel_hash(const ImageU8& image) {
  std::uint64_t h = fnv1a_bytes(&image.width, sizeof image.width);
  h = fnv1a_bytes(&image.height, sizeof image.height, h);
  h = fnv1a_bytes(&image.channels, sizeof image.channels, h);
  return fnv1a_bytes(image.data.data(), image.data.size(), h);
}

}  // namespace arnet
