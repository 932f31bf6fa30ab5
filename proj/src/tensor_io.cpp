#include "phlat/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace phlat::io {

namespace {

[[noreturn]] void fail(const std::string& path, std::uint64_t offset,
                       const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at byte " +
                           std::to_string(offset));
}

class Writer {
 public:
  explicit Writer(const std::string& path)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error(path + ": cannot open for writing");
  }
  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    offset_ += n;
  }
  void u16(std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error(path_ + ": write failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error(path + ": cannot open");
  }
  std::uint64_t offset() const { return offset_; }
  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      fail(path_, offset_, std::string("truncated ") + what);
    offset_ += n;
  }
  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void expect_magic(const char magic[4]) {
    char got[4];
    bytes(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) fail(path_, 0, "bad magic");
  }
  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) fail(path_, offset_, "trailing data");
  }
  [[noreturn]] void error(const std::string& what) { fail(path_, offset_, what); }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

constexpr std::uint16_t kTensorVersion = 1;
constexpr std::uint16_t kKernelVersion = 1;

}  // namespace

void write_tensor(const std::string& path, const TensorData& tensor) {
  if (tensor.count() != tensor.values.size())
    throw std::invalid_argument(path + ": dims/payload mismatch");
  Writer w(path);
  w.bytes("PHLT", 4);
  w.u16(kTensorVersion);
  w.u16(static_cast<std::uint16_t>(tensor.dims.size()));
  for (std::uint64_t d : tensor.dims) w.u64(d);
  for (double v : tensor.values) w.f64(v);
  w.close();
}

TensorData read_tensor(const std::string& path) {
  Reader r(path);
  r.expect_magic("PHLT");
  const std::uint16_t version = r.u16("version");
  if (version != kTensorVersion) r.error("unsupported version");
  const std::uint16_t rank = r.u16("rank");
  TensorData t;
  t.dims.resize(rank);
  for (int i = 0; i < rank; ++i) t.dims[i] = r.u64("dims");
  const std::uint64_t count = t.count();
  if (count > (std::uint64_t{1} << 32)) r.error("payload too large");
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) t.values[i] = r.f64("payload");
  r.expect_eof();
  return t;
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  TensorData t;
  t.dims = {static_cast<std::uint64_t>(m.rows()),
            static_cast<std::uint64_t>(m.cols())};
  t.values.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
  write_tensor(path, t);
}

Eigen::MatrixXd read_matrix(const std::string& path) {
  const TensorData t = read_tensor(path);
  if (t.dims.size() != 2)
    throw std::runtime_error(path + ": expected a rank-2 tensor, got rank " +
                             std::to_string(t.dims.size()));
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.values[at++];
  return m;
}

void write_kernel_checkpoint(const std::string& path,
                             const PermutohedralKernel& kernel,
                             const Eigen::VectorXd& scales) {
  if (scales.size() != kernel.d())
    throw std::invalid_argument(path + ": scales must have d entries");
  Writer w(path);
  w.bytes("PHLK", 4);
  w.u16(kKernelVersion);
  w.u32(static_cast<std::uint32_t>(kernel.d()));
  w.u32(static_cast<std::uint32_t>(kernel.s()));
  w.u32(static_cast<std::uint32_t>(kernel.c_in()));
  w.u32(static_cast<std::uint32_t>(kernel.c_out()));
  for (Eigen::Index i = 0; i < scales.size(); ++i) w.f64(scales[i]);
  // Weights row-major over (out-channel, in-channel, offset).
  for (int a = 0; a < kernel.c_out(); ++a)
    for (int b = 0; b < kernel.c_in(); ++b)
      for (int o = 0; o < kernel.t(); ++o) w.f64(kernel.at(a, b, o));
  w.close();
}

KernelCheckpoint read_kernel_checkpoint(const std::string& path) {
  Reader r(path);
  r.expect_magic("PHLK");
  const std::uint16_t version = r.u16("version");
  if (version != kKernelVersion) r.error("unsupported version");
  const int d = static_cast<int>(r.u32("d"));
  const int s = static_cast<int>(r.u32("s"));
  const int c_in = static_cast<int>(r.u32("c_in"));
  const int c_out = static_cast<int>(r.u32("c_out"));
  if (d < 1 || d > 64 || s < 0 || s > 16 || c_in < 1 || c_out < 1)
    r.error("implausible kernel header");
  KernelCheckpoint ckpt;
  ckpt.scales.resize(d);
  for (int i = 0; i < d; ++i) ckpt.scales[i] = r.f64("scales");
  ckpt.kernel = PermutohedralKernel(d, s, c_in, c_out);
  for (int a = 0; a < c_out; ++a)
    for (int b = 0; b < c_in; ++b)
      for (int o = 0; o < ckpt.kernel.t(); ++o)
        ckpt.kernel.at(a, b, o) = r.f64("weights");
  r.expect_eof();
  return ckpt;
}

}  // namespace phlat::io
