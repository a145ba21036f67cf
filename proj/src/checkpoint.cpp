#include "cpql/checkpoint.hpp"

#include <cstring>

#include "byteio.hpp"
#include "cpql/errors.hpp"

namespace cpql {

using byteio::get_f32;
using byteio::get_le;
using byteio::put_f32;
using byteio::put_le;

const NetRecord& Checkpoint::net(const std::string& name) const {
  for (const auto& n : nets)
    if (n.name == name) return n;
  throw FormatError("checkpoint has no network named '" + name + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string config;
  for (const auto& [k, v] : ckpt.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw UsageError("checkpoint config entry '" + k + "' cannot be encoded");
    config += k + "=" + v + "\n";
  }
  std::string buf(kCheckpointMagic, 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint32_t>(buf, std::uint32_t(config.size()));
  buf += config;
  put_le<std::uint32_t>(buf, std::uint32_t(ckpt.nets.size()));
  for (const auto& n : ckpt.nets) {
    put_le<std::uint32_t>(buf, std::uint32_t(n.name.size()));
    buf += n.name;
    put_le<std::uint32_t>(buf, std::uint32_t(n.widths.size()));
    for (int w : n.widths) put_le<std::uint32_t>(buf, std::uint32_t(w));
    buf.push_back(n.layernorm ? 1 : 0);
    put_le<std::uint64_t>(buf, std::uint64_t(n.params.size()));
    for (float x : n.params) put_f32(buf, x);
  }
  byteio::spit(path, buf);
}

namespace {

// Bounds-checked cursor over the file bytes.
class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  const unsigned char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw TruncatedFileError("'" + path_ + "' is truncated while reading " + what);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) { return get_le<std::uint32_t>(take(4, what)); }
  std::uint64_t u64(const char* what) { return get_le<std::uint64_t>(take(8, what)); }
  std::string str(std::size_t n, const char* what) {
    const auto* p = take(n, what);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint read_checkpoint(const std::string& path) {
  const std::string bytes = byteio::slurp(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw BadMagicError("'" + path + "' is not a checkpoint file (bad magic)");
  Reader r(bytes, path);
  r.take(4, "magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw VersionMismatchError("'" + path + "' has checkpoint version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  const std::string config = r.str(r.u32("config length"), "config block");
  std::size_t start = 0;
  while (start < config.size()) {
    const auto end = config.find('\n', start);
    if (end == std::string::npos) throw FormatError("'" + path + "' config block lacks a final newline");
    const std::string line = config.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("'" + path + "' config line '" + line + "' lacks '='");
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }

  const auto count = r.u32("network count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NetRecord n;
    n.name = r.str(r.u32("network name length"), "network name");
    const auto depth = r.u32("network depth");
    if (depth < 2 || depth > 64) throw FormatError("'" + path + "' network '" + n.name + "' has invalid depth");
    for (std::uint32_t j = 0; j < depth; ++j) {
      const auto w = r.u32("network widths");
      if (w == 0 || w > (1u << 20)) throw FormatError("'" + path + "' network '" + n.name + "' has invalid width");
      n.widths.push_back(int(w));
    }
    const auto ln = *r.take(1, "layernorm flag");
    if (ln > 1) throw FormatError("'" + path + "' network '" + n.name + "' has invalid layernorm flag");
    n.layernorm = ln == 1;
    const auto params = r.u64("parameter count");
    std::uint64_t expected = 0;
    for (std::size_t l = 0; l + 1 < n.widths.size(); ++l) {
      expected += std::uint64_t(n.widths[l]) * n.widths[l + 1] + n.widths[l + 1];
      if (n.layernorm && l + 2 < n.widths.size()) expected += 2ull * n.widths[l + 1];
    }
    if (params != expected)
      throw FormatError("'" + path + "' network '" + n.name + "' parameter count " + std::to_string(params) +
                        " does not match its widths (" + std::to_string(expected) + ")");
    if (params > r.remaining() / 4)
      throw TruncatedFileError("'" + path + "' is truncated inside network '" + n.name + "'");
    const auto* p = r.take(4 * params, "parameters");
    n.params.resize(Eigen::Index(params));
    for (std::uint64_t j = 0; j < params; ++j) n.params[Eigen::Index(j)] = get_f32(p + 4 * j);
    ckpt.nets.push_back(std::move(n));
  }
  if (!r.done()) throw FormatError("'" + path + "' has trailing bytes");
  return ckpt;
}

}  // namespace cpql
