#include "realanon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "realanon/errors.hpp"

namespace realanon {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'N', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes little-endian hosts");

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Json header = ckpt.header;
  Json index = Json::array();
  for (const auto& [name, data] : ckpt.blobs) index.push_back({{"name", name}, {"count", data.size()}});
  header["blobs"] = index;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, data] : ckpt.blobs)
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError("not a checkpoint: " + path);
  if (len > (1u << 30)) throw IoError("corrupt checkpoint header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  try {
    ckpt.header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  for (const auto& entry : ckpt.header.at("blobs")) {
    std::vector<float> data(entry.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    ckpt.blobs.emplace(entry.at("name").get<std::string>(), std::move(data));
  }
  ckpt.header.erase("blobs");
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const std::string& group, const nn::ParameterRefs<float>& params) {
  for (const auto* p : params) ckpt.blobs[group + "/" + p->name] = p->value;
}

void load_parameters(const Checkpoint& ckpt, const std::string& group, const nn::ParameterRefs<float>& params) {
  for (auto* p : params) {
    auto it = ckpt.blobs.find(group + "/" + p->name);
    if (it == ckpt.blobs.end()) throw ShapeError("checkpoint lacks " + group + "/" + p->name);
    if (it->second.size() != p->value.size()) throw ShapeError("checkpoint size mismatch for " + p->name);
    p->value = it->second;
  }
}

namespace {

std::string to_string(Conditioning c) { return c == Conditioning::DenseEmbedding ? "cse" : "none"; }

Conditioning conditioning_from(const std::string& s) {
  if (s == "cse") return Conditioning::DenseEmbedding;
  if (s == "none") return Conditioning::None;
  throw ConfigError("unknown conditioning: " + s);
}

}  // namespace

Json to_json(const GeneratorConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"n_downsamples", c.n_downsamples},
          {"condition", to_string(c.condition)},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"z_dim", c.z_dim},
          {"w_dim", c.w_dim},
          {"mapping_layers", c.mapping_layers},
          {"embedding_channels", c.embedding_channels}};
}

GeneratorConfig generator_config_from_json(const Json& j) {
  GeneratorConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.n_downsamples = j.value("n_downsamples", c.n_downsamples);
  c.condition = conditioning_from(j.value("condition", std::string("cse")));
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.z_dim = j.value("z_dim", c.z_dim);
  c.w_dim = j.value("w_dim", c.w_dim);
  c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
  c.embedding_channels = j.value("embedding_channels", c.embedding_channels);
  c.validate();
  return c;
}

Json to_json(const DiscriminatorConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"n_downsamples", c.n_downsamples},
          {"condition", to_string(c.condition)},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"embedding_channels", c.embedding_channels}};
}

DiscriminatorConfig discriminator_config_from_json(const Json& j) {
  DiscriminatorConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.n_downsamples = j.value("n_downsamples", c.n_downsamples);
  c.condition = conditioning_from(j.value("condition", std::string("cse")));
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.embedding_channels = j.value("embedding_channels", c.embedding_channels);
  c.validate();
  return c;
}

void save_generator(const std::string& path, Generator<float>& generator) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "generator";
  ckpt.header["generator"] = to_json(generator.config());
  store_parameters(ckpt, "G", generator.parameters());
  write_checkpoint(path, ckpt);
}

Generator<float> load_generator(const std::string& path, bool prefer_ema) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.header.contains("generator")) throw IoError("checkpoint has no generator config: " + path);
  Generator<float> g(generator_config_from_json(ckpt.header.at("generator")), 0);
  const bool has_ema = ckpt.blobs.count("G_ema/" + g.parameters().front()->name) > 0;
  load_parameters(ckpt, prefer_ema && has_ema ? "G_ema" : "G", g.parameters());
  return g;
}

}  // namespace realanon
