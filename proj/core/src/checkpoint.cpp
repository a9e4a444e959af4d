#include "tscr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tscr {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <class U>
void put(std::ostream& os, U value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <class U>
bool get(std::istream& is, U& value) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&value), sizeof(U)));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_tensor_container(const std::filesystem::path& path,
                            const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kContainerMagic, sizeof(kContainerMagic));
  put<std::uint32_t>(os, kContainerVersion);
  for (const auto& t : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.value.data().data()),
             static_cast<std::streamsize>(t.value.numel() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedTensor> read_tensor_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kContainerMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
    throw FormatError(path.string() + ": not a tensor container (bad magic)");
  std::uint32_t version = 0;
  if (!get(is, version) || version != kContainerVersion)
    throw FormatError(path.string() + ": unsupported container version " +
                      std::to_string(version));
  std::vector<NamedTensor> out;
  while (true) {
    std::uint32_t name_len = 0;
    if (!get(is, name_len)) break;
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get(is, rank))
      throw FormatError(path.string() + ": truncated tensor header");
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!get(is, v)) throw FormatError(path.string() + ": truncated extents for " + name);
      e = static_cast<std::size_t>(v);
    }
    std::vector<float> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float))))
      throw FormatError(path.string() + ": truncated payload for " + name);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params.items()) tensors.push_back({p.name, p.value});
  write_tensor_container(path, tensors);
}

void load_parameters_into(ParameterSet& params, const std::filesystem::path& path) {
  auto tensors = read_tensor_container(path);
  if (tensors.size() != params.size())
    throw FormatError(path.string() + ": holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  for (auto& t : tensors) {
    if (!params.contains(t.name)) throw FormatError(path.string() + ": unexpected tensor " + t.name);
    auto& dst = params.get(t.name);
    if (dst.shape() != t.value.shape())
      throw FormatError(path.string() + ": tensor " + t.name + " has shape " +
                        shape_string(t.value.shape()) + ", model expects " +
                        shape_string(dst.shape()));
    dst = std::move(t.value);
  }
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw FormatError("line " + std::to_string(line_no) + ": expected key=value");
    kv.emplace_back(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  try {
    return parse_key_values(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace tscr
