#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"

namespace trackgpt::gptcore {
namespace {

constexpr std::array<char, 8> kMagic = {'T', 'R', 'K', 'G', 'P', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxString = 1u << 20;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw Error(ErrorCode::Parse, "truncated checkpoint");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  if (n > kMaxString) throw Error(ErrorCode::Parse, "checkpoint string too long");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw Error(ErrorCode::Parse, "truncated checkpoint");
  return s;
}

void put_tensor(std::ostream& out, const std::string& name, const TensorSlot& slot, const float* data) {
  put_string(out, name);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(slot.shape.size()));
  for (auto d : slot.shape) put_le<std::uint64_t>(out, d);
  for (std::size_t i = 0; i < slot.size; ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(data[i]));
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const ParamLayout layout(ckpt.config);
  if (ckpt.weights.size() != layout.total()) throw Error(ErrorCode::Input, "checkpoint weights do not match config");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_string(out, ckpt.config.to_record());
  put_string(out, ckpt.codec.to_record());
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(ckpt.dt));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.step));
  const std::size_t groups = ckpt.optimizer ? 3 : 1;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.slots().size() * groups));
  for (const auto& slot : layout.slots()) put_tensor(out, slot.name, slot, ckpt.weights.data() + slot.offset);
  if (ckpt.optimizer) {
    for (const auto& slot : layout.slots()) put_tensor(out, "opt.m." + slot.name, slot, ckpt.optimizer->m.data() + slot.offset);
    for (const auto& slot : layout.slots()) put_tensor(out, "opt.v." + slot.name, slot, ckpt.optimizer->v.data() + slot.offset);
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw Error(ErrorCode::Parse, "not a checkpoint file");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw Error(ErrorCode::Parse, "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config = ModelConfig::parse_record(get_string(in));
  ckpt.codec = geocodec::CodecConfig::parse_record(get_string(in));
  ckpt.dt = std::bit_cast<double>(get_le<std::uint64_t>(in));
  ckpt.step = static_cast<std::int64_t>(get_le<std::uint64_t>(in));
  const ParamLayout layout(ckpt.config);
  std::map<std::string, const TensorSlot*> by_name;
  for (const auto& slot : layout.slots()) by_name[slot.name] = &slot;

  ckpt.weights.assign(layout.total(), 0.0f);
  AdamState opt{ParamVector(layout.total(), 0.0f), ParamVector(layout.total(), 0.0f)};
  std::size_t seen_weights = 0, seen_opt = 0;

  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = get_string(in);
    ParamVector* target = &ckpt.weights;
    std::string base = name;
    if (name.rfind("opt.m.", 0) == 0) {
      target = &opt.m;
      base = name.substr(6);
    } else if (name.rfind("opt.v.", 0) == 0) {
      target = &opt.v;
      base = name.substr(6);
    }
    const auto it = by_name.find(base);
    if (it == by_name.end()) throw Error(ErrorCode::Parse, "unknown tensor '" + name + "' in checkpoint");
    const TensorSlot& slot = *it->second;
    const auto rank = get_le<std::uint32_t>(in);
    if (rank != slot.shape.size()) throw Error(ErrorCode::Parse, "tensor '" + name + "' has the wrong rank");
    for (std::uint32_t r = 0; r < rank; ++r) {
      if (get_le<std::uint64_t>(in) != slot.shape[r]) throw Error(ErrorCode::Parse, "tensor '" + name + "' has the wrong shape");
    }
    float* dst = target->data() + slot.offset;
    for (std::size_t i = 0; i < slot.size; ++i) dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(in));
    (target == &ckpt.weights ? seen_weights : seen_opt)++;
  }
  if (seen_weights != layout.slots().size()) throw Error(ErrorCode::Parse, "checkpoint is missing weight tensors");
  if (seen_opt != 0) {
    if (seen_opt != 2 * layout.slots().size()) throw Error(ErrorCode::Parse, "checkpoint has partial optimizer state");
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace trackgpt::gptcore
