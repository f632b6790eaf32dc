#include "topkast/data.hpp"

#include <zlib.h>

#include <fstream>
#include <memory>

namespace topkast {

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file(gzopen(path.c_str(), "rb"), &gzclose);
  if (!file) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  for (;;) {
    const int got = gzread(file.get(), chunk, sizeof(chunk));
    if (got < 0) throw IoError("read error in " + path);
    if (got == 0) break;
    out.insert(out.end(), chunk, chunk + got);
  }
  return out;
}

}  // namespace

IdxFile read_idx(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_all(path);
  if (bytes.size() < 4) throw TruncationError(path + ": file shorter than the IDX magic");
  IdxFile f;
  f.magic = read_be32(bytes.data());
  std::size_t rank = 0;
  if (f.magic == kIdxImageMagic) {
    rank = 3;
  } else if (f.magic == kIdxLabelMagic) {
    rank = 1;
  } else {
    char buf[11];
    std::snprintf(buf, sizeof(buf), "0x%08x", f.magic);
    throw FormatError(path + ": unsupported IDX magic " + buf);
  }
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw TruncationError(path + ": truncated IDX header");
  std::uint64_t expected = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::uint32_t dim = read_be32(bytes.data() + 4 + 4 * d);
    if (dim == 0) throw FormatError(path + ": zero IDX dimension");
    f.dims.push_back(dim);
    expected *= dim;
  }
  if (bytes.size() - header != expected) {
    throw TruncationError(path + ": payload holds " + std::to_string(bytes.size() - header) + " bytes, header declares " +
                          std::to_string(expected));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return f;
}

void write_idx(const std::string& path, const IdxFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  auto put32 = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
  };
  put32(file.magic);
  for (Index d : file.dims) put32(static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(file.payload.data()), static_cast<std::streamsize>(file.payload.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace topkast
