#include "dino/checkpoint.hpp"

#include <algorithm>
#include <map>

#include "dino/bytes.hpp"

namespace dino {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <typename T>
void put_array(bytes::Writer& w, const std::string& name, const Tensor<T>& t) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (T v : t.values()) {
    if constexpr (sizeof(T) == 4) {
      w.f32(v);
    } else {
      w.f64(v);
    }
  }
}

void put_counter(bytes::Writer& w, const std::string& name, std::uint64_t v) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(DType::u64));
  w.u32(1);
  w.u32(1);
  w.u64(v);
}

struct RawArray {
  ArrayInfo info;
  const std::uint8_t* data = nullptr;
  std::size_t offset = 0;
};

std::vector<RawArray> parse(const std::vector<std::uint8_t>& buf, std::string* config_text) {
  bytes::Reader r(buf);
  const auto* magic = r.raw(4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("bad magic, expected DCK1", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported DCK1 version " + std::to_string(version), version_at);
  std::string config = r.str("config text");
  if (config_text) *config_text = std::move(config);
  const std::uint32_t count = r.u32();
  std::vector<RawArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawArray a;
    a.info.name = r.str("array name");
    const std::size_t tag_at = r.offset();
    const std::uint8_t tag = r.u8();
    if (tag < 1 || tag > 3) throw FormatError("unknown dtype tag " + std::to_string(tag), tag_at);
    a.info.dtype = static_cast<DType>(tag);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank), r.offset() - 4);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.info.shape.push_back(r.u32());
      n *= a.info.shape.back();
    }
    a.offset = r.offset();
    const std::size_t width = dtype_size(a.info.dtype);
    if (n > r.remaining() / width) r.need(r.remaining() + 1, "array data");
    a.data = r.raw(n * width, "array data");
    out.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last array", r.offset());
  return out;
}

template <typename T>
Tensor<T> to_tensor(const RawArray& a) {
  if (a.info.dtype != dtype_of<T>()) {
    throw FormatError("array " + a.info.name + " has the wrong dtype for this precision", a.offset);
  }
  std::size_t n = 1;
  for (std::size_t d : a.info.shape) n *= d;
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<std::uint64_t>(a.data[i * sizeof(T) + b]) << (8 * b);
    if constexpr (sizeof(T) == 4) {
      v[i] = std::bit_cast<float>(static_cast<std::uint32_t>(bits));
    } else {
      v[i] = std::bit_cast<double>(bits);
    }
  }
  return Tensor<T>(a.info.shape, std::move(v));
}

std::uint64_t to_counter(const RawArray& a) {
  if (a.info.dtype != DType::u64 || a.info.shape != std::vector<std::size_t>{1}) {
    throw FormatError("counter " + a.info.name + " must be a single u64", a.offset);
  }
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(a.data[b]) << (8 * b);
  return v;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& c) {
  bytes::Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.str(c.config_text);
  const std::uint32_t count = static_cast<std::uint32_t>(4 + c.student.size() + c.teacher.size() + c.adam_m.size() +
                                                         c.adam_v.size());
  w.u32(count);
  put_counter(w, "step", c.step);
  put_counter(w, "epoch", c.epoch);
  put_counter(w, "optimizer_steps", c.optimizer_steps);
  put_array(w, "center", c.center);
  for (const auto& [name, t] : c.student) put_array(w, "student/" + name, t);
  for (const auto& [name, t] : c.teacher) put_array(w, "teacher/" + name, t);
  for (const auto& [name, t] : c.adam_m) put_array(w, "adam_m/" + name, t);
  for (const auto& [name, t] : c.adam_v) put_array(w, "adam_v/" + name, t);
  return std::move(w.buffer());
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Checkpoint<T> c;
  const auto arrays = parse(bytes, &c.config_text);
  std::map<std::string, bool> seen;
  for (const auto& a : arrays) {
    const std::string& name = a.info.name;
    if (seen[name]) throw FormatError("duplicate array " + name, a.offset);
    seen[name] = true;
    const auto slash = name.find('/');
    const std::string group = slash == std::string::npos ? name : name.substr(0, slash);
    const std::string rest = slash == std::string::npos ? std::string() : name.substr(slash + 1);
    if (name == "step") {
      c.step = to_counter(a);
    } else if (name == "epoch") {
      c.epoch = to_counter(a);
    } else if (name == "optimizer_steps") {
      c.optimizer_steps = to_counter(a);
    } else if (name == "center") {
      c.center = to_tensor<T>(a);
    } else if (group == "student") {
      c.student.add(rest, to_tensor<T>(a).set_requires_grad(true));
    } else if (group == "teacher") {
      c.teacher.add(rest, to_tensor<T>(a));
    } else if (group == "adam_m") {
      c.adam_m.add(rest, to_tensor<T>(a));
    } else if (group == "adam_v") {
      c.adam_v.add(rest, to_tensor<T>(a));
    } else {
      throw FormatError("unexpected array " + name, a.offset);
    }
  }
  for (const char* required : {"step", "epoch", "optimizer_steps", "center"}) {
    if (!seen[required]) throw FormatError(std::string("missing array ") + required, bytes.size());
  }
  if (c.student.size() == 0 || !c.student.structurally_equal(c.teacher)) {
    throw FormatError("student and teacher parameter sets do not match", bytes.size());
  }
  if ((c.adam_m.size() || c.adam_v.size()) &&
      !(c.adam_m.structurally_equal(c.student) && c.adam_v.structurally_equal(c.student))) {
    throw FormatError("optimizer moments do not match the student", bytes.size());
  }
  return c;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  bytes::write_file_atomic(path, encode_checkpoint(ckpt));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(bytes::read_file(path));
}

std::vector<ArrayInfo> list_checkpoint(const std::vector<std::uint8_t>& bytes, std::string* config_text) {
  std::vector<ArrayInfo> out;
  for (auto& a : parse(bytes, config_text)) out.push_back(std::move(a.info));
  return out;
}

template <typename T>
bool checkpoints_equal(const Checkpoint<T>& a, const Checkpoint<T>& b) {
  return encode_checkpoint(a) == encode_checkpoint(b);
}

#define DINO_INSTANTIATE(T)                                                              \
  template std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>&);            \
  template Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>&);            \
  template void save_checkpoint(const Checkpoint<T>&, const std::filesystem::path&);     \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);                  \
  template bool checkpoints_equal(const Checkpoint<T>&, const Checkpoint<T>&);
DINO_INSTANTIATE(float)
DINO_INSTANTIATE(double)
#undef DINO_INSTANTIATE

}  // namespace dino
