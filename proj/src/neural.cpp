#include "livemap/neural.hpp"

#include <array>
#include <cstring>

namespace livemap::neural {

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  std::array<char, 8> bytes;
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(bytes.data(), 8);
}

template <typename T>
T read_le(std::istream& in) {
  std::array<unsigned char, 8> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), 8)) throw Error(ErrorKind::kIo, "truncated model file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, 8);
  return value;
}

}  // namespace

void save_params(const std::vector<int>& dims, const std::vector<double>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_le<std::uint64_t>(out, dims.size());
  for (int d : dims) write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (double p : params) write_le<double>(out, p);
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::pair<std::vector<int>, std::vector<double>> load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingCheckpoint, "cannot open " + path.string());
  const auto n_dims = read_le<std::uint64_t>(in);
  if (n_dims < 2 || n_dims > 64) throw Error(ErrorKind::kIo, "bad layer count in " + path.string());
  std::vector<int> dims;
  std::size_t n_params = 0;
  for (std::uint64_t i = 0; i < n_dims; ++i) {
    const auto d = read_le<std::uint64_t>(in);
    if (d == 0 || d > (1u << 20)) throw Error(ErrorKind::kIo, "bad layer dim in " + path.string());
    dims.push_back(static_cast<int>(d));
  }
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n_params += static_cast<std::size_t>(dims[l + 1]) * (static_cast<std::size_t>(dims[l]) + 1);
  std::vector<double> params(n_params);
  for (auto& p : params) p = read_le<double>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::kIo, "trailing bytes in " + path.string());
  return {std::move(dims), std::move(params)};
}

}  // namespace livemap::neural
