#include "vegas/pipeline/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace vegas::pipeline {

namespace {

constexpr std::uint8_t kMagic[4] = {'V', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const char* what) { return *take(1, what); }
  std::uint16_t u16(const char* what) {
    const auto* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    const auto* p = take(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::size_t StoredTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name.substr(0, 32));
    if (t.dims.size() > 0xff) throw FormatError("tensor rank too large: " + t.name);
    if (t.data.size() != t.element_count() * dtype_size(t.dtype))
      throw FormatError("tensor " + t.name + ": data size does not match its dims");
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u8(out, static_cast<std::uint8_t>(t.dtype));
    put_u8(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    out.insert(out.end(), t.data.begin(), t.data.end());
  }
  // fixed key order keeps the bytes stable
  nlohmann::ordered_json meta;
  meta["stage"] = ckpt.meta.stage;
  meta["step"] = ckpt.meta.step;
  meta["seed"] = ckpt.meta.seed;
  meta["config_hash"] = ckpt.meta.config_hash;
  const std::string text = meta.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto* magic = r.take(4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32("tensor count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = r.u16("name length");
    const auto* name = r.take(len, "tensor name");
    t.name.assign(name, name + len);
    const auto code = r.u8("dtype");
    if (code > 1) throw FormatError("tensor " + t.name + ": unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<DType>(code);
    const auto rank = r.u8("rank");
    for (int d = 0; d < rank; ++d) t.dims.push_back(r.u32("dims"));
    // guard the multiplication before trusting the dims
    std::size_t n = dtype_size(t.dtype);
    for (auto d : t.dims) {
      if (d != 0 && n > bytes.size() / d) throw FormatError("tensor " + t.name + ": dims exceed file size");
      n *= d;
    }
    const auto* data = r.take(n, "tensor data");
    t.data.assign(data, data + n);
    c.tensors.push_back(std::move(t));
  }
  const auto meta_len = r.u32("metadata length");
  const auto* meta = r.take(meta_len, "metadata");
  if (!r.done()) throw FormatError("trailing bytes after checkpoint metadata");
  try {
    auto j = nlohmann::json::parse(meta, meta + meta_len);
    c.meta.stage = j.at("stage").get<std::string>();
    c.meta.step = j.at("step").get<int>();
    c.meta.seed = j.at("seed").get<std::uint64_t>();
    c.meta.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  // write beside the target, then rename, so a crash never leaves half a file
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vegas::pipeline
