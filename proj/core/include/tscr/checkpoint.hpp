#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tscr/optim.hpp"
#include "tscr/tensor.hpp"

namespace tscr {

/// Binary tensor container:
///   "TSCRCKPT" | u32 version | per tensor:
///   u32 name_len | name bytes (UTF-8) | u32 rank | u64 extents[rank] | f32 payload
/// All integers and floats little-endian. Tensors run until end of file.
inline constexpr char kContainerMagic[8] = {'T', 'S', 'C', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_tensor_container(const std::filesystem::path& path,
                            const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_container(const std::filesystem::path& path);

void save_parameters(const ParameterSet& params, const std::filesystem::path& path);
/// Overwrites every parameter in `params` from the file. Names and shapes
/// must match exactly; extra or missing tensors are an error.
void load_parameters_into(ParameterSet& params, const std::filesystem::path& path);

/// Plain-text key=value blocks used for configs and checkpoint metadata.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues read_key_values(const std::filesystem::path& path);
KeyValues parse_key_values(const std::string& text);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

/// FNV-1a 64 over a file's bytes, hex encoded.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace tscr
