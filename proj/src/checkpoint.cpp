#include "hgwm/checkpoint.hpp"

#include <bit>
#include <cstdint>

#include "hgwm/errors.hpp"
#include "hgwm/io.hpp"

namespace hgwm::ad {

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* s) { out_ += s; }
  std::string take() { return std::move(out_); }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("truncated tensor archive");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_archive(const Archive& archive) {
  Writer w;
  w.raw("HGTA");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
  }
  for (const auto& entry : archive.tensors) {
    for (double v : entry.second.data()) w.f64(v);
  }
  return w.take();
}

Archive decode_archive(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "HGTA") throw FormatError("not a tensor archive");
  if (r.u32() != kVersion) throw FormatError("unsupported tensor archive version");
  Archive a;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    a.meta[k] = r.str();
  }
  const std::uint32_t n = r.u32();
  std::vector<std::pair<std::string, Shape>> headers;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape s;
    for (std::uint32_t d = 0; d < rank; ++d) s.push_back(static_cast<std::size_t>(r.u64()));
    headers.emplace_back(std::move(name), std::move(s));
  }
  for (auto& [name, shape] : headers) {
    std::vector<double> data(numel(shape));
    for (double& v : data) v = r.f64();
    a.tensors.emplace_back(name, Tensor::from(shape, std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor archive payload");
  return a;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  io::write_file(path, encode_archive(archive));
}

Archive load_archive(const std::filesystem::path& path) { return decode_archive(io::read_file(path)); }

}  // namespace hgwm::ad
