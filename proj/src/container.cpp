#include "relic/container.hpp"

#include <fstream>

#include "relic/io_util.hpp"

namespace relic {

static constexpr char kMagic[4] = {'R', 'L', 'C', 'K'};
static constexpr uint32_t kVersion = 1;

void save_container(const TensorContainer& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, uint32_t(c.entries.size()));
  for (const auto& [name, t] : c.entries) {
    if (name.size() > 0xffff) throw std::runtime_error("container: tensor name too long");
    write_u16(os, uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u8(os, uint8_t(t.dims.size()));
    for (int d : t.dims) write_u32(os, uint32_t(d));
    for (float v : t.values) write_f32(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

TensorContainer load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4)) truncated("container magic");
  if (std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error(path + ": bad magic, not a RLCK container");
  uint32_t version = read_u32(is, "container version");
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported container version " + std::to_string(version));
  uint32_t count = read_u32(is, "tensor count");
  TensorContainer c;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = read_u16(is, "tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) truncated("tensor name");
    uint8_t rank = read_u8(is, "tensor rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = int(read_u32(is, "tensor dims"));
    Tensor t(dims);
    for (auto& v : t.values) v = read_f32(is, ("tensor '" + name + "' payload").c_str());
    c.put(name, std::move(t));
  }
  return c;
}

}  // namespace relic
