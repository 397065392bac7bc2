#include "facefusion/binary_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace facefusion::io {

std::string Header::get(const std::string& key) const {
  for (const auto& [k, v] : echo)
    if (k == key) return v;
  fail(ErrorKind::Format, "header key '" + key + "' missing");
}

void ByteWriter::put_string(const std::string& s) {
  put<std::uint64_t>(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::put_doubles(const double* data, std::size_t n) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + n * sizeof(double));
}

void ByteWriter::put_matrix(const Matrix& m) {
  put<std::uint64_t>(m.rows());
  put<std::uint64_t>(m.cols());
  put_doubles(m.data(), m.size());
}

void ByteWriter::put_vector(const Vector& v) {
  put<std::uint64_t>(v.size());
  put_doubles(v.data(), v.size());
}

void ByteReader::need(std::size_t n) const {
  if (n > bytes_.size() - pos_) fail(ErrorKind::Format, "payload ends prematurely");
}

std::string ByteReader::get_string() {
  const auto n = get<std::uint64_t>();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::get_doubles(double* out, std::size_t n) {
  need(n * sizeof(double));
  std::memcpy(out, bytes_.data() + pos_, n * sizeof(double));
  pos_ += n * sizeof(double);
}

Matrix ByteReader::get_matrix() {
  const auto rows = get<std::uint64_t>();
  const auto cols = get<std::uint64_t>();
  if (cols != 0 && rows > (bytes_.size() - pos_) / sizeof(double) / cols)
    fail(ErrorKind::Format, "matrix larger than payload");
  Matrix m(rows, cols);
  get_doubles(m.data(), m.size());
  return m;
}

Vector ByteReader::get_vector() {
  const auto n = get<std::uint64_t>();
  need(n * sizeof(double));
  Vector v(n);
  get_doubles(v.data(), n);
  return v;
}

void ByteReader::expect_end() const {
  if (!at_end()) fail(ErrorKind::Format, "trailing bytes after payload");
}

std::uint32_t crc32(const std::vector<std::uint8_t>& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed in chunks for large payloads.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_container(const std::filesystem::path& path, const Header& header,
                     const std::vector<std::uint8_t>& body) {
  std::ostringstream head;
  head << header.magic << ' ' << header.version << '\n';
  for (const auto& [k, v] : header.echo) head << k << ' ' << v << '\n';
  char crc_hex[16];
  std::snprintf(crc_hex, sizeof crc_hex, "%08x", crc32(body));
  head << "body_bytes " << body.size() << '\n' << "crc32 " << crc_hex << '\n' << "END\n";

  // Write to a sibling temp file and rename so readers never observe a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + tmp.string() + "' for writing");
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorKind::Io, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "rename to '" + path.string() + "' failed: " + ec.message());
}

std::pair<Header, ByteReader> read_container(const std::filesystem::path& path,
                                             const std::string& magic,
                                             std::uint32_t version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read of '" + path.string() + "' failed");

  // Header is line-oriented text terminated by "END\n".
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    const std::size_t start = pos;
    while (pos < raw.size() && raw[pos] != '\n') ++pos;
    if (pos >= raw.size()) return false;
    line.assign(reinterpret_cast<const char*>(raw.data() + start), pos - start);
    ++pos;
    return true;
  };

  Header header;
  std::string line;
  if (!next_line(line)) fail(ErrorKind::Checksum, "'" + path.string() + "' is truncated inside the header");
  {
    std::istringstream first(line);
    first >> header.magic >> header.version;
    if (header.magic != magic)
      fail(ErrorKind::FormatVersion, "'" + path.string() + "' is not a " + magic + " file");
    if (header.version != version)
      fail(ErrorKind::FormatVersion, "'" + path.string() + "' has version " +
                                         std::to_string(header.version) + ", expected " +
                                         std::to_string(version));
  }
  bool ended = false;
  while (next_line(line)) {
    if (line == "END") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    if (sp == std::string::npos) fail(ErrorKind::Format, "malformed header line '" + line + "'");
    header.echo.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  if (!ended) fail(ErrorKind::Checksum, "'" + path.string() + "' is truncated inside the header");

  const std::size_t body_bytes = std::stoull(header.get("body_bytes"));
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(std::stoul(header.get("crc32"), nullptr, 16));
  if (raw.size() - pos != body_bytes)
    fail(ErrorKind::Checksum, "'" + path.string() + "' body has " + std::to_string(raw.size() - pos) +
                                  " bytes, header says " + std::to_string(body_bytes));
  std::vector<std::uint8_t> body(raw.begin() + static_cast<std::ptrdiff_t>(pos), raw.end());
  if (crc32(body) != stored_crc) fail(ErrorKind::Checksum, "'" + path.string() + "' checksum mismatch");
  return {std::move(header), ByteReader(std::move(body))};
}

}  // namespace facefusion::io
