#include "debias/util/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace debias {
namespace {

constexpr char kMagic[8] = {'D', 'E', 'B', 'I', 'A', 'S', 'C', 'K'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint " + path.string());
  return to_little(v);
}

void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) {
    put<std::uint64_t>(out, s.size());
  } else {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  }
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path, bool wide) {
  const std::uint64_t n = wide ? get<std::uint64_t>(in, path) : get<std::uint32_t>(in, path);
  if (n > (1ULL << 32)) throw std::runtime_error("corrupt checkpoint " + path.string());
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& hyperparams,
                      std::span<const ad::Tensor* const> blocks) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, kind, false);
    put_string(out, hyperparams.dump(), true);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
    for (const ad::Tensor* t : blocks) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape().size()));
      for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
      for (double v : t->data()) put<double>(out, v);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = get_string(in, path, false);
  if (ck.kind != expected_kind) {
    throw std::runtime_error(path.string() + ": expected a " + expected_kind + " checkpoint, found " + ck.kind);
  }
  ck.hyperparams = nlohmann::json::parse(get_string(in, path, true));
  const auto n_blocks = get<std::uint32_t>(in, path);
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    const auto rank = get<std::uint32_t>(in, path);
    ad::Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, path));
    ad::Tensor t(shape);
    for (double& v : t.data()) v = get<double>(in, path);
    ck.blocks.push_back(std::move(t));
  }
  return ck;
}

void load_blocks(const Checkpoint& ckpt, std::span<ad::Tensor* const> into) {
  if (ckpt.blocks.size() != into.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ckpt.blocks.size()) + " blocks, model expects " +
                             std::to_string(into.size()));
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (ckpt.blocks[i].shape() != into[i]->shape()) {
      throw std::runtime_error("checkpoint block " + std::to_string(i) + " has shape " +
                               ad::to_string(ckpt.blocks[i].shape()) + ", model expects " +
                               ad::to_string(into[i]->shape()));
    }
    std::copy(ckpt.blocks[i].data().begin(), ckpt.blocks[i].data().end(), into[i]->data().begin());
  }
}

}  // namespace debias
