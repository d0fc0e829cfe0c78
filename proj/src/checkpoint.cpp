#include "kpl/train/checkpoint.hpp"

#include "kpl/io/config_json.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace kpl {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace {

constexpr char kMagic[8] = {'K', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

enum class Kind : uint8_t { param = 0, buffer = 1, adam_m = 2, adam_v = 3 };

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_tensor(std::ostream& out, const std::string& name, Kind kind, const Tensor<float>& t) {
  put<uint16_t>(out, (uint16_t)name.size());
  out.write(name.data(), (std::streamsize)name.size());
  put<uint8_t>(out, (uint8_t)kind);
  put<uint8_t>(out, 0);  // dtype: f32
  put<uint32_t>(out, (uint32_t)t.rank());
  for (int i = 0; i < t.rank(); ++i) put<int32_t>(out, t.dim(i));
  out.write(reinterpret_cast<const char*>(t.data()), (std::streamsize)(t.size() * sizeof(float)));
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return {{"format_version", 1},
          {"keypoint_net", m.kp},
          {"ionet", m.io},
          {"has_ionet", m.has_ionet},
          {"epoch", m.epoch},
          {"step", m.step},
          {"variant", m.variant},
          {"seed", m.seed},
          {"lr", m.lr},
          {"init", m.init}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != 1) throw std::runtime_error("checkpoint: unsupported format version");
  CheckpointMeta m;
  j.at("keypoint_net").get_to(m.kp);
  j.at("ionet").get_to(m.io);
  j.at("has_ionet").get_to(m.has_ionet);
  j.at("epoch").get_to(m.epoch);
  j.at("step").get_to(m.step);
  j.at("variant").get_to(m.variant);
  j.at("seed").get_to(m.seed);
  j.at("lr").get_to(m.lr);
  j.at("init").get_to(m.init);
  return m;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  nlohmann::json meta = meta_to_json(ck.meta);
  meta["adam_t"] = ck.adam_t;
  const std::string js = meta.dump();
  put<uint64_t>(out, js.size());
  out.write(js.data(), (std::streamsize)js.size());
  const uint32_t count =
      (uint32_t)(ck.params.size() + ck.buffers.size() + ck.adam_m.size() + ck.adam_v.size());
  put<uint32_t>(out, count);
  for (const auto& [name, t] : ck.params) put_tensor(out, name, Kind::param, t);
  for (const auto& [name, t] : ck.buffers) put_tensor(out, name, Kind::buffer, t);
  for (const auto& [name, t] : ck.adam_m) put_tensor(out, name, Kind::adam_m, t);
  for (const auto& [name, t] : ck.adam_v) put_tensor(out, name, Kind::adam_v, t);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint64_t jlen = get<uint64_t>(in);
  std::string js(jlen, '\0');
  in.read(js.data(), (std::streamsize)jlen);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json meta = nlohmann::json::parse(js);
  Checkpoint ck;
  ck.meta = meta_from_json(meta);
  if (meta.contains("adam_t")) meta.at("adam_t").get_to(ck.adam_t);

  const uint32_t count = get<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = get<uint16_t>(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const Kind kind = (Kind)get<uint8_t>(in);
    const uint8_t dtype = get<uint8_t>(in);
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
    const uint32_t ndim = get<uint32_t>(in);
    Shape shape((size_t)ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = get<int32_t>(in);
    Tensor<float> t = Tensor<float>::uninit(shape);
    in.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(t.size() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
    switch (kind) {
      case Kind::param: ck.params.emplace(name, std::move(t)); break;
      case Kind::buffer: ck.buffers.emplace(name, std::move(t)); break;
      case Kind::adam_m: ck.adam_m.emplace(name, std::move(t)); break;
      case Kind::adam_v: ck.adam_v.emplace(name, std::move(t)); break;
      default: throw std::runtime_error("checkpoint: unknown tensor kind");
    }
  }
  return ck;
}

void fill_params(ag::ParamStore<float>& store, const Checkpoint& ck) {
  for (auto& [name, var] : store.params) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape() != var.value().shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + " (" + shape_str(it->second.shape()) +
                               " vs " + shape_str(var.value().shape()) + ")");
    var.value() = it->second;
  }
  for (auto& [name, buf] : store.buffers) {
    auto it = ck.buffers.find(name);
    if (it == ck.buffers.end()) throw std::runtime_error("checkpoint: missing buffer " + name);
    if (it->second.shape() != buf->shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    *buf = it->second;
  }
}

std::pair<KeypointNet<float>, CheckpointMeta> load_keypoint_net(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  Rng rng(0);
  KeypointNet<float> net(ck.meta.kp, rng);
  ag::ParamStore<float> store;
  net.collect(store);
  fill_params(store, ck);
  return {std::move(net), ck.meta};
}

}  // namespace kpl
