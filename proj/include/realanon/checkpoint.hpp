#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/discriminator.hpp"
#include "realanon/generator.hpp"

namespace realanon {

using Json = nlohmann::json;

/**
 * Self-describing weight container: an 8-byte magic, a JSON header and
 * raw little-endian float32 blobs. The header lists every blob by name
 * with its element count; anything else (configs, step, RNG state) is
 * free-form header content.
 */
struct Checkpoint {
  Json header = Json::object();
  std::map<std::string, std::vector<float>> blobs;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Copies parameter values into blobs named "<group>/<parameter name>".
void store_parameters(Checkpoint& ckpt, const std::string& group, const nn::ParameterRefs<float>& params);
/// Throws ShapeError when a blob is missing or has the wrong size.
void load_parameters(const Checkpoint& ckpt, const std::string& group, const nn::ParameterRefs<float>& params);

Json to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const Json& j);
Json to_json(const DiscriminatorConfig& c);
DiscriminatorConfig discriminator_config_from_json(const Json& j);

/// Inference-only checkpoint holding one generator.
void save_generator(const std::string& path, Generator<float>& generator);
/// Loads the EMA weights when present (and `prefer_ema`), else the raw ones.
Generator<float> load_generator(const std::string& path, bool prefer_ema = true);

}  // namespace realanon
