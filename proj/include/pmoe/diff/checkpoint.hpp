#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/diff/mlp.hpp"
#include "pmoe/diff/tensor.hpp"

namespace pmoe {

// Binary container: magic, format version, free-form metadata text, then
// named tensors as (rank, extents, raw little-endian IEEE-754 doubles).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr char kMagic[8] = {'P', 'M', 'O', 'E', 'C', 'K', 'P', 'T'};

  struct Entry {
    std::string name;
    Tensor tensor;
  };

  std::uint32_t version = kFormatVersion;
  std::string metadata;
  std::vector<Entry> entries;

  void add(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) entries.push_back({p.name, *p.tensor});
  }

  const Tensor& get(const std::string& name) const {
    for (const Entry& e : entries) {
      if (e.name == name) return e.tensor;
    }
    throw UsageError("checkpoint has no tensor named " + name);
  }

  // Copies stored values into `params`, checking names and shapes.
  void restore(const std::vector<ParamRef>& params) const {
    for (const ParamRef& p : params) {
      const Tensor& t = get(p.name);
      if (t.shape() != p.tensor->shape()) {
        throw UsageError("checkpoint tensor " + p.name + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string(p.tensor->shape()));
      }
      *p.tensor = t;
    }
  }

  void save(const std::string& path) const {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, version);
    write_string(out, metadata);
    write_u64(out, entries.size());
    for (const Entry& e : entries) {
      write_string(out, e.name);
      write_u64(out, e.tensor.rank());
      for (std::size_t extent : e.tensor.shape()) write_u64(out, extent);
      out.write(reinterpret_cast<const char*>(e.tensor.data().data()),
                static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
    }
    if (!out) throw UsageError("short write on checkpoint " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open checkpoint " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw UsageError(path + " is not a checkpoint");
    Checkpoint ck;
    ck.version = static_cast<std::uint32_t>(read_u64(in));
    if (ck.version != kFormatVersion) {
      throw UsageError("unsupported checkpoint version " + std::to_string(ck.version));
    }
    ck.metadata = read_string(in);
    const std::uint64_t count = read_u64(in);
    for (std::uint64_t i = 0; i < count; ++i) {
      Entry e;
      e.name = read_string(in);
      Shape shape(read_u64(in));
      for (std::size_t& extent : shape) extent = read_u64(in);
      e.tensor = Tensor(shape);
      in.read(reinterpret_cast<char*>(e.tensor.data().data()),
              static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
      if (!in) throw UsageError("truncated checkpoint " + path);
      ck.entries.push_back(std::move(e));
    }
    return ck;
  }

 private:
  static void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw UsageError("truncated checkpoint");
    return v;
  }
  static void write_string(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_string(std::ifstream& in) {
    std::string s(read_u64(in), '\0');
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in) throw UsageError("truncated checkpoint");
    return s;
  }
};

}  // namespace pmoe
