#include "gwgrid/stream.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

namespace gwgrid {

namespace detail {

// Thin RAII wrapper over a POSIX fd.  pread/pwrite keep handles stateless,
// which is what lets the engine issue reads from several threads through
// cloned handles.
class FileHandle {
 public:
  enum class Mode { read, create, readwrite };

  FileHandle(const std::filesystem::path& path, Mode mode) : path_(path) {
    switch (mode) {
      case Mode::read:
        fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        break;
      case Mode::create:
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC,
                     0644);
        break;
      case Mode::readwrite:
        fd_ = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
        break;
    }
    if (fd_ < 0) {
      throw IoError("cannot open " + path.string() + ": " +
                    std::strerror(errno));
    }
  }

  ~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;

  void pread_exact(void* dst, std::size_t bytes, std::uint64_t offset) const {
    auto* p = static_cast<unsigned char*>(dst);
    while (bytes > 0) {
      ssize_t got = ::pread(fd_, p, bytes, static_cast<off_t>(offset));
      if (got < 0) {
        if (errno == EINTR) continue;
        throw IoError("read failed on " + path_.string() + ": " +
                      std::strerror(errno));
      }
      if (got == 0) {
        throw TruncatedFileError("unexpected end of file in " +
                                 path_.string() + " at offset " +
                                 std::to_string(offset));
      }
      p += got;
      bytes -= static_cast<std::size_t>(got);
      offset += static_cast<std::uint64_t>(got);
    }
  }

  void pwrite_exact(const void* src, std::size_t bytes,
                    std::uint64_t offset) const {
    const auto* p = static_cast<const unsigned char*>(src);
    while (bytes > 0) {
      ssize_t put = ::pwrite(fd_, p, bytes, static_cast<off_t>(offset));
      if (put < 0) {
        if (errno == EINTR) continue;
        throw IoError("write failed on " + path_.string() + ": " +
                      std::strerror(errno));
      }
      p += put;
      bytes -= static_cast<std::size_t>(put);
      offset += static_cast<std::uint64_t>(put);
    }
  }

  void truncate(std::uint64_t size) const {
    if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
      throw IoError("cannot size " + path_.string() + ": " +
                    std::strerror(errno));
    }
  }

  std::uint64_t size() const {
    struct stat st{};
    if (::fstat(fd_, &st) != 0) {
      throw IoError("cannot stat " + path_.string() + ": " +
                    std::strerror(errno));
    }
    return static_cast<std::uint64_t>(st.st_size);
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace detail

namespace {

constexpr char kMagic[4] = {'G', 'W', 'G', '1'};

void put_u16(unsigned char* p, std::uint16_t v) {
  p[0] = static_cast<unsigned char>(v & 0xff);
  p[1] = static_cast<unsigned char>(v >> 8);
}

void put_u64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

bool known_kind(std::uint8_t k) { return k >= 1 && k <= 4; }

const char* kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::snp: return "variant stream";
    case StreamKind::trait: return "trait stream";
    case StreamKind::result: return "result grid";
    case StreamKind::operand: return "operand matrix";
  }
  return "?";
}

}  // namespace

std::uint64_t StreamHeader::payload_bytes() const {
  const std::uint64_t d0 = dims[0], d1 = dims[1], d2 = dims[2];
  switch (kind) {
    case StreamKind::snp:
    case StreamKind::operand:
      return d0 * d1 * 8;
    case StreamKind::trait:
      return d1 * (d0 + 2) * 8;  // columns plus two appended scalar arrays
    case StreamKind::result:
      return d0 * d1 * d2 * 8;
  }
  return 0;
}

void StreamHeader::validate_dims(const std::string& where) const {
  // Operand matrices may be empty in the column dimension (a fit with no
  // shared covariates has a 0-column block); everything else needs at least
  // one column.
  const std::uint64_t min_cols = kind == StreamKind::operand ? 0 : 1;
  if (dims[0] < 1 || dims[1] < min_cols) {
    throw StreamFormatError("non-positive dims in " + where);
  }
  if (kind == StreamKind::result) {
    if (dims[2] < 1)
      throw StreamFormatError("result stream needs coeff dim >= 1 in " + where);
  } else if (dims[2] != 0) {
    throw StreamFormatError("third dim must be 0 for non-result stream in " +
                            where);
  }
}

std::array<unsigned char, StreamHeader::kBytes> StreamHeader::serialize()
    const {
  std::array<unsigned char, kBytes> buf{};
  std::memcpy(buf.data(), kMagic, 4);
  put_u16(buf.data() + 4, kVersion);
  buf[6] = static_cast<unsigned char>(kind);
  buf[7] = 0;  // element type: float64
  put_u64(buf.data() + 8, dims[0]);
  put_u64(buf.data() + 16, dims[1]);
  put_u64(buf.data() + 24, dims[2]);
  buf[32] = 0;  // layout: column-major slabs
  buf[33] = complete ? 0 : 1;
  return buf;
}

StreamHeader StreamHeader::parse(const unsigned char* buf,
                                 const std::string& where) {
  if (std::memcmp(buf, kMagic, 4) != 0) {
    throw BadMagicError("bad magic in " + where + " (not a GWG1 stream)");
  }
  const std::uint16_t version = get_u16(buf + 4);
  if (version != kVersion) {
    throw VersionMismatchError("unsupported stream version " +
                               std::to_string(version) + " in " + where +
                               " (expected " + std::to_string(kVersion) + ")");
  }
  if (!known_kind(buf[6])) {
    throw StreamFormatError("unknown stream kind " + std::to_string(buf[6]) +
                            " in " + where);
  }
  if (buf[7] != 0) {
    throw StreamFormatError("unsupported element type " +
                            std::to_string(buf[7]) + " in " + where);
  }
  if (buf[32] != 0) {
    throw StreamFormatError("unsupported layout " + std::to_string(buf[32]) +
                            " in " + where);
  }
  StreamHeader h;
  h.kind = static_cast<StreamKind>(buf[6]);
  h.dims = {get_u64(buf + 8), get_u64(buf + 16), get_u64(buf + 24)};
  h.complete = buf[33] == 0;
  h.validate_dims(where);
  return h;
}

// ---------------------------------------------------------------------------
// InputStream
// ---------------------------------------------------------------------------

InputStream::InputStream(InputStream&&) noexcept = default;
InputStream& InputStream::operator=(InputStream&&) noexcept = default;
InputStream::~InputStream() = default;

InputStream InputStream::open(const std::filesystem::path& path,
                              StreamKind expected_kind, RunCounters* counters) {
  InputStream s;
  s.path_ = path;
  s.counters_ = counters;
  s.fd_ = std::make_unique<detail::FileHandle>(
      path, detail::FileHandle::Mode::read);

  const std::uint64_t file_size = s.fd_->size();
  if (file_size < StreamHeader::kBytes) {
    throw TruncatedFileError(path.string() + " is shorter than the header (" +
                             std::to_string(file_size) + " of " +
                             std::to_string(StreamHeader::kBytes) + " bytes)");
  }
  unsigned char buf[StreamHeader::kBytes];
  s.fd_->pread_exact(buf, StreamHeader::kBytes, 0);
  s.header_ = StreamHeader::parse(buf, path.string());

  if (s.header_.kind != expected_kind) {
    throw KindMismatchError(path.string() + " holds a " +
                            kind_name(s.header_.kind) + ", expected a " +
                            kind_name(expected_kind));
  }
  if (!s.header_.complete) {
    throw IncompleteStreamError(path.string() +
                                " was never finalized by its writer");
  }
  const std::uint64_t expected =
      StreamHeader::kBytes + s.header_.payload_bytes();
  if (file_size != expected) {
    throw TruncatedFileError(path.string() + " has " +
                             std::to_string(file_size) + " bytes, header "
                             "promises " + std::to_string(expected));
  }
  return s;
}

InputStream InputStream::clone() const {
  return open(path_, header_.kind, counters_);
}

void InputStream::read_columns(std::int64_t start, std::int64_t width,
                               double* dst) const {
  if (header_.kind == StreamKind::result) {
    throw DimensionError("read_columns is not defined for result grids");
  }
  if (start < 0 || width < 0 || start + width > count()) {
    throw DimensionError("column range [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") out of bounds in " +
                         path_.string());
  }
  const std::uint64_t bytes =
      static_cast<std::uint64_t>(width) * rows() * sizeof(double);
  fd_->pread_exact(dst, bytes,
                   StreamHeader::kBytes +
                       static_cast<std::uint64_t>(start) * rows() *
                           sizeof(double));
  if (counters_) counters_->add_bytes_loaded(bytes);
}

void InputStream::read_scalars(std::int64_t start, std::int64_t width,
                               double* h2, double* sigma2) const {
  if (header_.kind != StreamKind::trait) {
    throw DimensionError("scalars exist only in trait streams");
  }
  if (start < 0 || width < 0 || start + width > count()) {
    throw DimensionError("scalar range out of bounds in " + path_.string());
  }
  const std::uint64_t base =
      StreamHeader::kBytes +
      static_cast<std::uint64_t>(rows()) * count() * sizeof(double);
  const std::uint64_t bytes = static_cast<std::uint64_t>(width) * sizeof(double);
  fd_->pread_exact(h2, bytes, base + static_cast<std::uint64_t>(start) * 8);
  fd_->pread_exact(
      sigma2, bytes,
      base + static_cast<std::uint64_t>(count() + start) * sizeof(double));
  if (counters_) counters_->add_bytes_loaded(2 * bytes);
}

void InputStream::read_result_cell(std::int64_t i, std::int64_t j,
                                   double* dst) const {
  if (header_.kind != StreamKind::result) {
    throw DimensionError("read_result_cell needs a result grid");
  }
  if (i < 0 || i >= rows() || j < 0 || j >= count()) {
    throw DimensionError("cell (" + std::to_string(i) + ", " +
                         std::to_string(j) + ") out of bounds in " +
                         path_.string());
  }
  const std::uint64_t bytes =
      static_cast<std::uint64_t>(coeffs()) * sizeof(double);
  fd_->pread_exact(dst, bytes,
                   StreamHeader::kBytes +
                       (static_cast<std::uint64_t>(j) * rows() + i) * coeffs() *
                           sizeof(double));
  if (counters_) counters_->add_bytes_loaded(bytes);
}

// ---------------------------------------------------------------------------
// OutputStream
// ---------------------------------------------------------------------------

OutputStream::OutputStream(OutputStream&&) noexcept = default;
OutputStream& OutputStream::operator=(OutputStream&&) noexcept = default;
OutputStream::~OutputStream() = default;

OutputStream OutputStream::create(const std::filesystem::path& path,
                                  const StreamHeader& header,
                                  RunCounters* counters) {
  header.validate_dims(path.string());
  OutputStream s;
  s.path_ = path;
  s.header_ = header;
  s.header_.complete = false;
  s.counters_ = counters;
  s.owns_completion_ = true;
  s.fd_ = std::make_unique<detail::FileHandle>(
      path, detail::FileHandle::Mode::create);
  const auto buf = s.header_.serialize();
  s.fd_->pwrite_exact(buf.data(), buf.size(), 0);
  s.fd_->truncate(StreamHeader::kBytes + s.header_.payload_bytes());
  return s;
}

OutputStream OutputStream::open_existing(const std::filesystem::path& path,
                                         StreamKind expected_kind,
                                         RunCounters* counters) {
  OutputStream s;
  s.path_ = path;
  s.counters_ = counters;
  s.fd_ = std::make_unique<detail::FileHandle>(
      path, detail::FileHandle::Mode::readwrite);
  unsigned char buf[StreamHeader::kBytes];
  s.fd_->pread_exact(buf, StreamHeader::kBytes, 0);
  s.header_ = StreamHeader::parse(buf, path.string());
  if (s.header_.kind != expected_kind) {
    throw KindMismatchError(path.string() + " holds a " +
                            kind_name(s.header_.kind) + ", expected a " +
                            kind_name(expected_kind));
  }
  return s;
}

OutputStream OutputStream::open_for_rewrite(const std::filesystem::path& path,
                                            StreamKind expected_kind,
                                            RunCounters* counters) {
  OutputStream s = open_existing(path, expected_kind, counters);
  s.owns_completion_ = true;
  unsigned char one = 1;
  s.fd_->pwrite_exact(&one, 1, 33);
  s.header_.complete = false;
  return s;
}

void OutputStream::write_columns(std::int64_t start, std::int64_t width,
                                 const double* src) {
  if (header_.kind == StreamKind::result) {
    throw DimensionError("write_columns is not defined for result grids");
  }
  if (start < 0 || width < 0 || start + width > count()) {
    throw DimensionError("column range out of bounds in " + path_.string());
  }
  const std::uint64_t bytes =
      static_cast<std::uint64_t>(width) * rows() * sizeof(double);
  fd_->pwrite_exact(src, bytes,
                    StreamHeader::kBytes +
                        static_cast<std::uint64_t>(start) * rows() *
                            sizeof(double));
  if (counters_) counters_->add_bytes_stored(bytes);
}

void OutputStream::write_trait_scalars(const double* h2,
                                       const double* sigma2) {
  if (header_.kind != StreamKind::trait) {
    throw DimensionError("scalars exist only in trait streams");
  }
  const std::uint64_t base =
      StreamHeader::kBytes +
      static_cast<std::uint64_t>(rows()) * count() * sizeof(double);
  const std::uint64_t bytes =
      static_cast<std::uint64_t>(count()) * sizeof(double);
  fd_->pwrite_exact(h2, bytes, base);
  fd_->pwrite_exact(sigma2, bytes, base + bytes);
  if (counters_) counters_->add_bytes_stored(2 * bytes);
}

void OutputStream::write_result_cells(std::int64_t i0, std::int64_t j0,
                                      std::int64_t rows_, std::int64_t cols,
                                      const double* data) {
  if (header_.kind != StreamKind::result) {
    throw DimensionError("write_result_cells needs a result grid");
  }
  const std::int64_t m = rows();
  const std::int64_t p = coeffs();
  if (i0 < 0 || j0 < 0 || rows_ < 1 || cols < 1 || i0 + rows_ > m ||
      j0 + cols > count()) {
    throw DimensionError("cell rectangle out of bounds in " + path_.string());
  }
  // One contiguous run per local column.
  const std::uint64_t run =
      static_cast<std::uint64_t>(rows_) * p * sizeof(double);
  for (std::int64_t jl = 0; jl < cols; ++jl) {
    const std::uint64_t off =
        StreamHeader::kBytes +
        (static_cast<std::uint64_t>(j0 + jl) * m + i0) * p * sizeof(double);
    fd_->pwrite_exact(data + static_cast<std::uint64_t>(jl) * rows_ * p, run,
                      off);
  }
  if (counters_)
    counters_->add_bytes_stored(run * static_cast<std::uint64_t>(cols));
}

void OutputStream::finalize() {
  if (finalized_) return;
  unsigned char zero = 0;
  fd_->pwrite_exact(&zero, 1, 33);
  finalized_ = true;
}

// ---------------------------------------------------------------------------
// Convenience helpers
// ---------------------------------------------------------------------------

Eigen::MatrixXd read_dense(const std::filesystem::path& path,
                           StreamKind expected_kind, RunCounters* counters) {
  InputStream in = InputStream::open(path, expected_kind, counters);
  Eigen::MatrixXd out(in.rows(), in.count());
  in.read_columns(0, in.count(), out.data());
  return out;
}

void write_operand(const std::filesystem::path& path,
                   const Eigen::MatrixXd& values, RunCounters* counters) {
  StreamHeader h;
  h.kind = StreamKind::operand;
  h.dims = {static_cast<std::uint64_t>(values.rows()),
            static_cast<std::uint64_t>(values.cols()), 0};
  OutputStream out = OutputStream::create(path, h, counters);
  out.write_columns(0, values.cols(), values.data());
  out.finalize();
}

}  // namespace gwgrid
