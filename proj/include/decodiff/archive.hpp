#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace decodiff {

struct ArchiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Single-file checkpoint container: an 8-byte magic, a little-endian u64
/// header length, a JSON header (metadata plus tensor directory), then the raw
/// little-endian tensor payloads in directory order.
class Archive {
 public:
  struct Blob {
    std::vector<int> shape;
    bool wide = false;  // f64 payload when set, f32 otherwise
    std::vector<double> values;
  };

  static constexpr char kMagic[8] = {'D', 'C', 'D', 'F', 'A', 'R', 'C', '1'};

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, std::vector<int> shape, std::vector<double> values, bool wide = false) {
    blobs_[name] = Blob{std::move(shape), wide, std::move(values)};
  }
  template <class It>
  void put_range(const std::string& name, std::vector<int> shape, It first, It last, bool wide = false) {
    put(name, std::move(shape), std::vector<double>(first, last), wide);
  }
  bool has(const std::string& name) const { return blobs_.count(name) != 0; }
  const Blob& get(const std::string& name) const {
    auto it = blobs_.find(name);
    if (it == blobs_.end()) throw ArchiveError("archive has no tensor '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Blob>& blobs() const { return blobs_; }

  void save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, b] : blobs_) {
      header["tensors"].push_back({{"name", name},
                                   {"shape", b.shape},
                                   {"dtype", b.wide ? "f64" : "f32"},
                                   {"offset", offset},
                                   {"count", b.values.size()}});
      offset += b.values.size() * (b.wide ? 8 : 4);
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw ArchiveError("cannot write " + tmp);
      out.write(kMagic, 8);
      write_u64(out, text.size());
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
      for (const auto& [_, b] : blobs_) {
        if (b.wide) {
          out.write(reinterpret_cast<const char*>(b.values.data()),
                    static_cast<std::streamsize>(b.values.size() * 8));
        } else {
          std::vector<float> f(b.values.begin(), b.values.end());
          out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
        }
      }
      if (!out) throw ArchiveError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open archive " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ArchiveError(path.string() + " is not a checkpoint archive");
    const std::uint64_t len = read_u64(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ArchiveError("truncated archive header in " + path.string());
    Archive a;
    auto header = nlohmann::json::parse(text);
    a.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Blob b;
      b.shape = t.at("shape").get<std::vector<int>>();
      b.wide = t.at("dtype").get<std::string>() == "f64";
      const auto count = t.at("count").get<std::size_t>();
      if (b.wide) {
        b.values.resize(count);
        in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(count * 8));
      } else {
        std::vector<float> f(count);
        in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * 4));
        b.values.assign(f.begin(), f.end());
      }
      if (!in) throw ArchiveError("truncated payload for '" + t.at("name").get<std::string>() + "'");
      a.blobs_[t.at("name").get<std::string>()] = std::move(b);
    }
    return a;
  }

 private:
  static void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::map<std::string, Blob> blobs_;
};

/// FNV-1a over bytes; used for codec fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace decodiff
