#include "partseg/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace partseg {

namespace {
constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'A', 'R', '0', '1'};
}

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  throw CorruptArchive("archive has no array named \"" + name + "\"");
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return true;
  return false;
}

void save_archive(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& arrays,
                  std::uint64_t step, const std::string& config_hash) {
  nlohmann::ordered_json manifest;
  manifest["step"] = step;
  manifest["config_hash"] = config_hash;
  manifest["arrays"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : arrays) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["count"] = t.size();
    e["fnv"] = to_hex(t.checksum());
    manifest["arrays"].push_back(e);
    offset += static_cast<std::uint64_t>(t.size());
  }
  std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write archive: " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t mlen = mtext.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(lenbuf), 8);
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& [name, t] : arrays)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(double))));
  if (!out) throw Error("short write on archive: " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptArchive("cannot open archive: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();

  if (bytes.size() < sizeof(kMagic) + 8) throw CorruptArchive("archive too short: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CorruptArchive("bad archive magic: " + path);
  std::uint64_t mlen = 0;
  for (int i = 7; i >= 0; --i)
    mlen = (mlen << 8) | static_cast<unsigned char>(bytes[sizeof(kMagic) + i]);
  std::size_t mstart = sizeof(kMagic) + 8;
  if (bytes.size() < mstart + mlen) throw CorruptArchive("truncated archive manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(mstart, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchive(std::string("archive manifest unparsable: ") + e.what());
  }
  Archive a;
  a.step = manifest.value("step", std::uint64_t{0});
  a.config_hash = manifest.value("config_hash", std::string{});
  std::size_t payload = mstart + mlen;

  for (const auto& e : manifest.at("arrays")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    std::uint64_t count = e.at("count").get<std::uint64_t>();
    std::size_t start = payload + offset * sizeof(double);
    std::size_t len = count * sizeof(double);
    if (bytes.size() < start + len)
      throw CorruptArchive("truncated array \"" + name + "\" in " + path);
    Tensor t(shape);
    if (static_cast<std::uint64_t>(t.size()) != count)
      throw CorruptArchive("shape/count mismatch for \"" + name + "\" in " + path);
    std::memcpy(t.data(), bytes.data() + start, len);
    if (to_hex(t.checksum()) != e.at("fnv").get<std::string>())
      throw CorruptArchive("checksum mismatch for \"" + name + "\" in " + path);
    a.arrays.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace partseg
