#include "serialize.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "error.hpp"

namespace mitodet {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'D', 'W'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) fail(ErrorCode::Parse, origin_ + ": truncated weights file");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::Parse, origin_ + ": truncated weights file");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string serialize_params(const nn::ParamSet& params) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kWeightsVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.var->value.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put<std::int32_t>(out, d);
    for (double v : p.var->value.values()) put<double>(out, v);
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

void deserialize_params(std::string_view bytes, nn::ParamSet& params, const std::string& origin) {
  if (bytes.size() < 4 + 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorCode::Parse, origin + ": not a weights file");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a64(bytes.substr(0, bytes.size() - 8))) {
    fail(ErrorCode::Parse, origin + ": checksum mismatch (corrupt file)");
  }
  Reader r(bytes.substr(0, bytes.size() - 8), origin);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kWeightsVersion) {
    fail(ErrorCode::Version, origin + ": weights version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(kWeightsVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>();
  if (count != params.items().size()) {
    fail(ErrorCode::Parse, origin + ": expected " + std::to_string(params.items().size()) +
                               " tensors, found " + std::to_string(count));
  }
  for (auto& p : params.items()) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name(r.take(name_len));
    if (name != p.name) fail(ErrorCode::Parse, origin + ": expected tensor '" + p.name + "', found '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = r.get<std::int32_t>();
    if (shape != p.var->value.shape()) {
      fail(ErrorCode::Parse, origin + ": shape mismatch for '" + name + "': " +
                                 nn::shape_string(shape) + " vs " +
                                 nn::shape_string(p.var->value.shape()));
    }
    for (double& v : p.var->value.values()) v = r.get<double>();
  }
}

std::string params_hash(const nn::ParamSet& params) {
  return hex64(fnv1a64(serialize_params(params)));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::NotFound, "file not found: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

void write_params(const std::string& path, const nn::ParamSet& params) {
  write_text(path, serialize_params(params));
}

void read_params(const std::string& path, nn::ParamSet& params) {
  deserialize_params(read_text(path), params, path);
}

}  // namespace mitodet
