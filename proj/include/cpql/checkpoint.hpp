#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cpql {

struct NetRecord {
  std::string name;
  std::vector<int> widths;
  bool layernorm = false;
  Eigen::VectorXf params;
};

/// Full parameter dump plus the config echo needed to rebuild the run.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<NetRecord> nets;

  /// Throws FormatError if absent.
  const NetRecord& net(const std::string& name) const;
};

// Binary checkpoint format ("CPC1", little-endian):
//   magic[4] | u32 version=1 | u32 config_bytes | config (UTF-8 "key=value\n" lines)
//   | u32 net_count | per net: u32 name_len | name | u32 depth | u32 widths[depth]
//   | u8 layernorm | u64 param_count | f32 params[param_count]
inline constexpr char kCheckpointMagic[4] = {'C', 'P', 'C', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace cpql
