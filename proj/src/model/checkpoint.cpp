#include "agadapt/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "agadapt/error.hpp"

namespace agadapt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'G', 'C', 'K'};
constexpr const char* kMetaName = "meta.config";

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("truncated checkpoint: " + path.string());
  return v;
}

Tensor config_tensor(const ModelConfig& c) {
  return Tensor::vector({static_cast<double>(c.enc_layers), static_cast<double>(c.dec_layers),
                         static_cast<double>(c.heads), static_cast<double>(c.width),
                         static_cast<double>(c.ffn_width), static_cast<double>(c.adapter_dim),
                         static_cast<double>(c.feat_dim), static_cast<double>(c.max_frames),
                         static_cast<double>(c.max_tokens), static_cast<double>(c.words_a),
                         static_cast<double>(c.words_b)});
}

ModelConfig config_from_tensor(const Tensor& t) {
  if (t.size() != 11) throw DataError("checkpoint: malformed meta.config");
  auto at = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  ModelConfig c;
  c.enc_layers = at(0);
  c.dec_layers = at(1);
  c.heads = at(2);
  c.width = at(3);
  c.ffn_width = at(4);
  c.adapter_dim = at(5);
  c.feat_dim = at(6);
  c.max_frames = at(7);
  c.max_tokens = at(8);
  c.words_a = at(9);
  c.words_b = at(10);
  return c;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw DataError("tensor name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw DataError("tensor rank too large");
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not an AGCK checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is, path);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(is, path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = get<std::uint8_t>(is, path);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = get<std::uint32_t>(is, path);
      n *= d;
    }
    std::vector<double> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint: " + path.string());
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_model(const std::filesystem::path& path, const Transformer& model) {
  NamedTensors tensors;
  tensors.emplace_back(kMetaName, config_tensor(model.config()));
  for (const auto& p : model.params().items()) tensors.emplace_back(p.name, p.value);
  write_tensors(path, tensors);
}

Transformer load_model(const std::filesystem::path& path) {
  auto tensors = read_tensors(path);
  if (tensors.empty() || tensors.front().first != kMetaName) throw DataError("checkpoint lacks meta.config");
  ModelConfig cfg = config_from_tensor(tensors.front().second);
  Transformer model = Transformer::empty(cfg);
  bool adapters_seen = false;
  for (std::size_t i = 1; i < tensors.size(); ++i) {
    if (is_adapter_param(tensors[i].first)) {
      if (!adapters_seen) model.init_adapters(0);
      adapters_seen = true;
    }
  }
  std::size_t restored = 0;
  for (std::size_t i = 1; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    Parameter* p = model.params().find(name);
    if (!p) throw DataError("checkpoint has unknown tensor " + name);
    if (!p->value.same_shape(t)) throw DataError("checkpoint shape mismatch for " + name);
    p->value = std::move(t);
    ++restored;
  }
  if (restored != model.params().size()) throw DataError("checkpoint is missing parameters");
  model.set_trainable([](const std::string&) { return false; });
  return model;
}

}  // namespace agadapt
