#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>

#include <Eigen/Dense>

#include "gwgrid/counters.hpp"
#include "gwgrid/types.hpp"

namespace gwgrid {

// ---------------------------------------------------------------------------
// GWG1 binary stream format.
//
// Fixed 64-byte little-endian header followed by a packed float64 payload:
//
//   offset  size  field
//        0     4  magic "GWG1"
//        4     2  format version (1)
//        6     1  kind: 1 = variant stream, 2 = trait stream, 3 = result
//                 grid, 4 = dense operand matrix
//        7     1  element type: 0 = float64 (only value)
//        8    24  dims, three uint64:
//                   kind 1: (n, m, 0)      payload n*m column-major
//                   kind 2: (n, t, 0)      payload n*t column-major, then two
//                                          appended length-t arrays: h2 and
//                                          sigma2
//                   kind 3: (m, t, p)      payload m*t*p, coefficient fastest,
//                                          then variant index i, then trait
//                                          index j (so cell (i,j) starts at
//                                          element (j*m+i)*p)
//                   kind 4: (rows, cols, 0) payload column-major
//       32     1  layout: 0 = column-major slabs (only value)
//       33     1  completeness: 0 = complete, nonzero = writer never
//                 finalized (readers reject such files)
//       34    30  zero padding
//
// Counter accounting: payload bytes only (headers are metadata).
// ---------------------------------------------------------------------------

enum class StreamKind : std::uint8_t {
  snp = 1,
  trait = 2,
  result = 3,
  operand = 4,
};

struct StreamHeader {
  static constexpr std::size_t kBytes = 64;
  static constexpr std::uint16_t kVersion = 1;

  StreamKind kind = StreamKind::snp;
  std::array<std::uint64_t, 3> dims = {0, 0, 0};
  bool complete = true;

  std::uint64_t payload_bytes() const;
  std::array<unsigned char, kBytes> serialize() const;
  // Throws the precise StreamFormatError subtype for each defect.  `where`
  // is the file path, used in messages only.
  static StreamHeader parse(const unsigned char* buf, const std::string& where);
  void validate_dims(const std::string& where) const;
};

namespace detail {
class FileHandle;  // RAII POSIX fd with positional read/write
}

// Read-only stream.  Positional reads, safe for concurrent use at disjoint
// offsets through independent handles (see clone()).
class InputStream {
 public:
  InputStream(InputStream&&) noexcept;
  InputStream& operator=(InputStream&&) noexcept;
  ~InputStream();

  // Validates magic, version, element type, layout, completeness, expected
  // kind, dims, and exact file length.
  static InputStream open(const std::filesystem::path& path,
                          StreamKind expected_kind,
                          RunCounters* counters = nullptr);

  StreamKind kind() const { return header_.kind; }
  std::int64_t rows() const {
    return static_cast<std::int64_t>(header_.dims[0]);
  }
  std::int64_t count() const {
    return static_cast<std::int64_t>(header_.dims[1]);
  }
  std::int64_t coeffs() const {
    return static_cast<std::int64_t>(header_.dims[2]);
  }
  const std::filesystem::path& path() const { return path_; }

  // Column payload (kinds 1, 2, 4): columns [start, start+width) into dst,
  // packed rows()-major.
  void read_columns(std::int64_t start, std::int64_t width, double* dst) const;

  // Trait scalars (kind 2): entries [start, start+width) of both arrays.
  void read_scalars(std::int64_t start, std::int64_t width, double* h2,
                    double* sigma2) const;

  // Result cells (kind 3): the coeffs() coefficients of cell (i, j).
  void read_result_cell(std::int64_t i, std::int64_t j, double* dst) const;

  // Independent handle on the same file (own fd, same validation already
  // done); handles are not shareable across threads, clones are.
  InputStream clone() const;

 private:
  InputStream() = default;

  std::filesystem::path path_;
  StreamHeader header_;
  std::unique_ptr<detail::FileHandle> fd_;
  RunCounters* counters_ = nullptr;
};

// Write side.  create() writes a header marked incomplete and preallocates
// the full payload, so crashed runs leave a file that readers reject;
// finalize() flips the completeness byte once content is fully written.
class OutputStream {
 public:
  OutputStream(OutputStream&&) noexcept;
  OutputStream& operator=(OutputStream&&) noexcept;
  ~OutputStream();

  static OutputStream create(const std::filesystem::path& path,
                             const StreamHeader& header,
                             RunCounters* counters = nullptr);

  // Attach a second handle to a stream being written (e.g. one per worker;
  // a single handle must not be shared for concurrent writes).  Does not
  // require the completeness byte to be clear.
  static OutputStream open_existing(const std::filesystem::path& path,
                                    StreamKind expected_kind,
                                    RunCounters* counters = nullptr);

  // Reopen a finalized stream for in-place rewriting.  The completeness
  // byte is cleared immediately, so a crash mid-rewrite leaves a file that
  // readers reject; call finalize() once the new content is fully written.
  static OutputStream open_for_rewrite(const std::filesystem::path& path,
                                       StreamKind expected_kind,
                                       RunCounters* counters = nullptr);

  StreamKind kind() const { return header_.kind; }
  std::int64_t rows() const {
    return static_cast<std::int64_t>(header_.dims[0]);
  }
  std::int64_t count() const {
    return static_cast<std::int64_t>(header_.dims[1]);
  }
  std::int64_t coeffs() const {
    return static_cast<std::int64_t>(header_.dims[2]);
  }
  const std::filesystem::path& path() const { return path_; }

  // Column payload (kinds 1, 2, 4).
  void write_columns(std::int64_t start, std::int64_t width,
                     const double* src);

  // Trait scalars (kind 2), full arrays of length count().
  void write_trait_scalars(const double* h2, const double* sigma2);

  // Result cells (kind 3): a (rows x cols) rectangle of cells with origin
  // (i0, j0); data packed coefficient-fastest, then local row, then local
  // column.  Each written cell column is one contiguous range in the file,
  // so rectangles at disjoint origins never overlap.
  void write_result_cells(std::int64_t i0, std::int64_t j0, std::int64_t rows,
                          std::int64_t cols, const double* data);

  void finalize();

 private:
  OutputStream() = default;

  std::filesystem::path path_;
  StreamHeader header_;
  std::unique_ptr<detail::FileHandle> fd_;
  RunCounters* counters_ = nullptr;
  bool finalized_ = false;
  bool owns_completion_ = false;
};

// Convenience: whole dense operand (kind 4) or column payload as a matrix.
Eigen::MatrixXd read_dense(const std::filesystem::path& path,
                           StreamKind expected_kind,
                           RunCounters* counters = nullptr);

// Convenience: write a dense matrix as a kind-4 operand file.
void write_operand(const std::filesystem::path& path,
                   const Eigen::MatrixXd& values,
                   RunCounters* counters = nullptr);

}  // namespace gwgrid
