#ifndef ATTNAD_CHECKPOINT_HPP
#define ATTNAD_CHECKPOINT_HPP

// Checkpoint container:
//
//   bytes 0..7    magic "ATTNADCK"
//   bytes 8..11   format version, uint32 little-endian
//   bytes 12..19  header length in bytes, uint64 little-endian
//   header        UTF-8 JSON: format_version, dtype, model (ModelConfig),
//                 step, optimizer state summary, run (caller metadata or null),
//                 tensors [{name, shape, offset, count}]
//   payload       raw little-endian tensor data; offsets are relative to the payload start
//
// Parameters are stored under their model names, Adam moments under
// "adam.m.<name>" and "adam.v.<name>". Loading restores every bit.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "attnad/config.hpp"

namespace attnad {

inline constexpr char kCheckpointMagic[8] = {'A', 'T', 'T', 'N', 'A', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else return "float64";
}

/// Model configuration, step counter and every tensor of a training state.
/// `run` is stored verbatim for tooling (training settings, seed).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& state, const Json& run = nullptr) {
  const auto& named = state.model.named_parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  for (const auto& [name, var] : named) tensors.emplace_back(name, &var.value());
  const auto& m = state.optimizer.first_moments();
  const auto& v = state.optimizer.second_moments();
  const bool has_moments = m.size() == named.size() && v.size() == named.size();
  if (has_moments) {
    for (std::size_t i = 0; i < named.size(); ++i) tensors.emplace_back("adam.m." + named[i].first, &m[i]);
    for (std::size_t i = 0; i < named.size(); ++i) tensors.emplace_back("adam.v." + named[i].first, &v[i]);
  }
  Json list = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    list.push_back(Json{{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"count", t->size()}});
    offset += static_cast<std::uint64_t>(t->size()) * sizeof(T);
  }
  const AdamConfig& ac = state.optimizer.config();
  Json header{{"format_version", kCheckpointVersion},
              {"dtype", dtype_name<T>()},
              {"model", to_json(state.model.config())},
              {"step", state.step},
              {"optimizer",
               has_moments ? Json{{"kind", "adam"},
                                  {"steps", state.optimizer.steps()},
                                  {"learning_rate", ac.learning_rate},
                                  {"beta1", ac.beta1},
                                  {"beta2", ac.beta2},
                                  {"epsilon", ac.epsilon}}
                           : Json(nullptr)},
              {"run", run},
              {"tensors", std::move(list)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

struct CheckpointHeader {
  std::uint32_t version = 0;
  nlohmann::json json;
  std::uint64_t payload_offset = 0;
};

inline CheckpointHeader read_checkpoint_header(std::istream& in, const std::string& where) {
  char magic[8];
  CheckpointHeader h;
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(where + ": not a checkpoint file");
  if (!in.read(reinterpret_cast<char*>(&h.version), sizeof h.version) ||
      !in.read(reinterpret_cast<char*>(&len), sizeof len))
    throw DataError(where + ": truncated checkpoint header");
  if (h.version != kCheckpointVersion)
    throw DataError(where + ": unsupported checkpoint version " + std::to_string(h.version));
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError(where + ": truncated checkpoint header");
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": corrupt checkpoint header: " + e.what());
  }
  h.payload_offset = 20 + len;
  return h;
}

/// Restores model, optimizer moments and step. The optimizer takes `adam`
/// hyperparameters when given, otherwise the stored ones.
template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, std::optional<AdamConfig> adam = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const auto where = path.string();
  CheckpointHeader h = read_checkpoint_header(in, where);
  const auto& j = h.json;
  if (j.value("dtype", "") != dtype_name<T>())
    throw DataError(where + ": stored dtype " + j.value("dtype", "?") + ", requested " + dtype_name<T>());
  TrainState<T> state;
  state.model = Vae<T>(model_from_json(j.at("model")));
  state.step = j.at("step").get<std::int64_t>();

  std::map<std::string, std::pair<Shape, std::uint64_t>> index;
  for (const auto& e : j.at("tensors"))
    index[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(), e.at("offset").get<std::uint64_t>()};
  auto fetch = [&](const std::string& name, Tensor<T>& dst) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError(where + ": missing tensor " + name);
    if (it->second.first != dst.shape())
      throw DataError(where + ": tensor " + name + " has shape " + shape_str(it->second.first) + ", expected " +
                      shape_str(dst.shape()));
    in.seekg(static_cast<std::streamoff>(h.payload_offset + it->second.second));
    if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(T))))
      throw DataError(where + ": truncated tensor " + name);
  };
  for (const auto& [name, var] : state.model.named_parameters()) {
    Var<T> v = var;
    fetch(name, v.mutable_value());
  }

  const auto& opt = j.at("optimizer");
  AdamConfig ac;
  if (!opt.is_null()) {
    ac = AdamConfig{opt.at("learning_rate").get<double>(), opt.at("beta1").get<double>(),
                    opt.at("beta2").get<double>(), opt.at("epsilon").get<double>()};
  }
  state.optimizer = Adam<T>(state.model.parameters(), adam.value_or(ac));
  if (!opt.is_null()) {
    const auto& named = state.model.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
      fetch("adam.m." + named[i].first, state.optimizer.first_moments()[i]);
      fetch("adam.v." + named[i].first, state.optimizer.second_moments()[i]);
    }
    state.optimizer.set_steps(opt.at("steps").get<std::int64_t>());
  }
  return state;
}

/// Header JSON only; used by tooling that inspects checkpoints.
inline nlohmann::json checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint_header(in, path.string()).json;
}

}  // namespace attnad

#endif  // ATTNAD_CHECKPOINT_HPP
