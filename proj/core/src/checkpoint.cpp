#include "aaf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "aaf/error.hpp"

namespace aaf {

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::Format, "checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string after(const std::string& s, const std::string& prefix) { return s.substr(prefix.size()); }

}  // namespace

Checkpoint Checkpoint::from_model(const AsrModel& model, std::uint64_t config_hash, std::string stamp) {
  Checkpoint c{config_hash, std::move(stamp), {}};
  model.for_each_parameter([&](const ParamInfo& info, const Tensor& t) {
    auto v = t.data();
    c.entries.push_back({info.name, t.shape(), {v.begin(), v.end()}});
  });
  return c;
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes("AAF1");
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.config_hash);
  if (ckpt.stamp.size() > 0xffff) fail(ErrorKind::Format, "checkpoint stamp too long");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ckpt.stamp.size()));
  w.put_bytes(ckpt.stamp);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xffff || e.shape.size() > 0xff) fail(ErrorKind::Format, "entry " + e.name + " too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    std::size_t n = 1;
    for (auto d : e.shape) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
      n *= d;
    }
    if (n != e.values.size()) fail(ErrorKind::Format, "entry " + e.name + " shape does not match its values");
    for (double v : e.values) w.put_f64(v);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.get_bytes(4) != "AAF1") fail(ErrorKind::Format, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.stamp = r.get_bytes(r.get<std::uint16_t>());
  const auto count = r.get<std::uint32_t>();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.get_bytes(r.get<std::uint16_t>());
    if (!seen.insert(e.name).second) fail(ErrorKind::Format, "duplicate checkpoint entry " + e.name);
    const auto ndim = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < ndim; ++k) {
      e.shape.push_back(r.get<std::uint32_t>());
      n *= e.shape.back();
    }
    e.values.resize(n);
    for (double& v : e.values) v = r.get_f64();
    c.entries.push_back(std::move(e));
  }
  if (!r.done()) fail(ErrorKind::Format, "trailing bytes after checkpoint entries");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

AsrModel restore_model(const Checkpoint& ckpt, const ModelConfig& config) {
  AsrModel m = AsrModel::init(config, 0);
  Rng rng(0);
  const std::string adapter_prefix = "layer.0.adapter.";
  for (const auto& e : ckpt.entries)
    if (e.name.starts_with(adapter_prefix) && e.name.ends_with(".W_down")) {
      const std::string rest = after(e.name, adapter_prefix);
      m.add_adapter(rest.substr(0, rest.size() - std::strlen(".W_down")), rng);
    }
  if (ckpt.find("fusion.0.ln.gamma")) {
    AggregationMethod method = AggregationMethod::Avg;
    if (ckpt.find("fusion.0.w")) method = AggregationMethod::WAvg;
    if (ckpt.find("fusion.0.W_Q")) method = AggregationMethod::AAF;
    m.add_fusion(method, rng);
  }

  std::size_t used = 0;
  m.for_each_parameter([&](const ParamInfo& info, Tensor& t) {
    const auto* e = ckpt.find(info.name);
    if (!e) fail(ErrorKind::Format, "checkpoint lacks parameter " + info.name);
    if (e->shape != t.shape())
      fail(ErrorKind::Format, "parameter " + info.name + " has shape " + shape_string(e->shape) + ", model expects " +
                                  shape_string(t.shape()));
    t.assign(Tensor(e->shape, e->values));
    ++used;
  });
  if (used != ckpt.entries.size())
    fail(ErrorKind::Format, "checkpoint has " + std::to_string(ckpt.entries.size() - used) +
                                " entries that do not belong to the model");
  return m;
}

}  // namespace aaf
