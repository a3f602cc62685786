// SPDX-License-Identifier: Apache-2.0
#include "s2kg/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "s2kg/error.hpp"

namespace s2kg::nn {

namespace {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r{};
    for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xFF));
    return r;
  }
  return v;
}

template <class U>
void put(std::string& out, U v) {
  v = to_little(v);
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_little(v);
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error("checkpoint " + where_ + " truncated while reading " + what);
    }
  }

  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterSet<float>& params, const Json& metadata) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.all()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint64_t>(out, p.value.rows());
    put<std::uint64_t>(out, p.value.cols());
  }
  for (const auto& p : params.all()) {
    for (const float v : p.value.span()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& where) {
  Reader r(bytes, where);
  if (r.take(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw Error("checkpoint " + where + " has bad magic bytes");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint " + where + " has format version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  if (meta_len > r.remaining()) throw Error("checkpoint " + where + " truncated while reading metadata");
  Checkpoint ck;
  try {
    ck.metadata = Json::parse(r.take(static_cast<std::size_t>(meta_len), "metadata"));
  } catch (const Json::parse_error& e) {
    throw Error("checkpoint " + where + " metadata is not JSON: " + e.what());
  }
  const auto count = r.get<std::uint32_t>("parameter count");
  struct Entry {
    std::string name;
    std::uint64_t rows, cols;
  };
  std::vector<Entry> index;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("parameter name length");
    Entry e;
    e.name = r.take(len, "parameter name");
    e.rows = r.get<std::uint64_t>("parameter rows");
    e.cols = r.get<std::uint64_t>("parameter cols");
    if (e.cols != 0 && e.rows > (r.remaining() / 4) / e.cols) {
      throw Error("checkpoint " + where + " truncated: parameter '" + e.name + "' larger than file");
    }
    index.push_back(std::move(e));
  }
  for (const auto& e : index) {
    const auto n = static_cast<std::size_t>(e.rows * e.cols);
    std::vector<float> values(n);
    for (std::size_t j = 0; j < n; ++j) values[j] = std::bit_cast<float>(r.get<std::uint32_t>("parameter payload"));
    ck.params.add(e.name, Tensor<float>(static_cast<std::size_t>(e.rows), static_cast<std::size_t>(e.cols), std::move(values)));
  }
  if (r.remaining() != 0) throw Error("checkpoint " + where + " has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params, const Json& metadata) {
  const std::string bytes = encode_checkpoint(params, metadata);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace s2kg::nn
