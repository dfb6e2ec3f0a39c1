#include "jst/trainer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "jst/error.hpp"

namespace jst::trainer {

namespace {

constexpr char magic[4] = {'B', 'M', 'T', 'C'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8(const char* what) { return take(1, what)[0]; }

  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string meta_path(const std::filesystem::path& path) { return path.string() + ".meta"; }

}  // namespace

const CheckpointTensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InitError("checkpoint has no tensor named " + name);
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(magic), std::end(magic));
  put_u32(out, Checkpoint::format_version);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name.substr(0, 32), out.size());
    if (tensor.shape.size() > 0xFF) throw FormatError("tensor rank too large for " + name, out.size());
    if (ad::shape_size(tensor.shape) != tensor.values.size()) {
      throw FormatError("tensor " + name + " payload does not match its shape", out.size());
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, static_cast<std::uint8_t>(tensor.shape.size()));
    for (auto d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto head = in.take(4, "magic");
  if (std::memcmp(head.data(), magic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = in.offset();
  const auto version = in.u32("version");
  if (version != Checkpoint::format_version) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto count = in.u32("record count");
  Checkpoint ckpt;
  std::string previous;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::size_t record_at = in.offset();
    const auto name_len = in.u16("name length");
    auto name_bytes = in.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (r > 0 && !(previous < name)) throw FormatError("records not sorted by unique name at " + name, record_at);
    const auto rank = in.u8("rank");
    CheckpointTensor t;
    for (std::uint8_t i = 0; i < rank; ++i) t.shape.push_back(in.u32("dimension"));
    const auto n = ad::shape_size(t.shape);
    auto payload = in.take(n * 4, "payload");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
      t.values[i] = std::bit_cast<float>(bits);
    }
    previous = name;
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after last record", in.offset());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
  }
  std::ofstream meta(meta_path(path), std::ios::trunc);
  if (!meta) throw IoError("cannot open " + meta_path(path) + " for writing");
  for (const auto& [k, v] : ckpt.metadata) meta << k << " = " << v << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ckpt = decode_checkpoint(bytes);
  std::ifstream meta(meta_path(path));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return ckpt;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw AveragingError("no checkpoints to average");
  const Checkpoint& first = checkpoints.front();
  for (std::size_t c = 1; c < checkpoints.size(); ++c) {
    const auto& other = checkpoints[c].tensors;
    auto a = first.tensors.begin();
    auto b = other.begin();
    for (; a != first.tensors.end() && b != other.end(); ++a, ++b) {
      if (a->first != b->first) {
        throw AveragingError("checkpoint " + std::to_string(c) + " name set differs at " +
                             std::min(a->first, b->first));
      }
      if (a->second.shape != b->second.shape) {
        throw AveragingError("checkpoint " + std::to_string(c) + " shape differs for " + a->first);
      }
    }
    if (a != first.tensors.end()) throw AveragingError("checkpoint " + std::to_string(c) + " lacks " + a->first);
    if (b != other.end()) throw AveragingError("checkpoint " + std::to_string(c) + " has extra " + b->first);
  }
  // Sums in double, in a fixed (sorted) order, so the mean does not depend on
  // the order of the inputs beyond rounding of the double accumulator.
  Checkpoint out;
  const auto count = static_cast<double>(checkpoints.size());
  for (const auto& [name, tensor] : first.tensors) {
    CheckpointTensor mean{tensor.shape, std::vector<float>(tensor.values.size())};
    std::vector<double> stack(checkpoints.size());
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      for (std::size_t c = 0; c < checkpoints.size(); ++c) stack[c] = checkpoints[c].tensors.at(name).values[i];
      std::sort(stack.begin(), stack.end());
      double total = 0.0;
      for (double v : stack) total += v;
      mean.values[i] = static_cast<float>(total / count);
    }
    out.tensors.emplace(name, std::move(mean));
  }
  out.metadata["averaged_count"] = std::to_string(checkpoints.size());
  return out;
}

Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<Checkpoint> loaded;
  loaded.reserve(paths.size());
  for (const auto& p : paths) loaded.push_back(load_checkpoint(p));
  Checkpoint out = average_checkpoints(std::span<const Checkpoint>(loaded));
  std::string sources;
  for (const auto& p : paths) {
    if (!sources.empty()) sources += ",";
    sources += p.filename().string();  // names only, so outputs do not depend on the run location
  }
  out.metadata["averaged_from"] = sources;
  return out;
}

}  // namespace jst::trainer
