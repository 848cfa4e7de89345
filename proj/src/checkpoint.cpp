#include "seqrank/checkpoint.hpp"

#include <cstring>
#include <filesystem>

#include "seqrank/config.hpp"

namespace seqrank {

std::string checkpoint_stem(const std::string& path) {
  const std::string ext = ".json";
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
    return path.substr(0, path.size() - ext.size());
  return path;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params, const ModelConfig& config) {
  const std::string stem = checkpoint_stem(path);
  auto slots = param_slots(const_cast<ModelParams<float>&>(params));
  Json index = Json::array();
  std::vector<std::byte> blob;
  for (const auto& s : slots) {
    index.push_back({{"name", s.name}, {"offset", blob.size() / 4}, {"rows", s.rows}, {"cols", s.cols}});
    for (Index k = 0; k < s.size(); ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(s.data[k]);
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<std::byte>((bits >> (8 * b)) & 0xff));
    }
  }
  write_file(stem + ".bin", blob);
  write_json(stem + ".json", {{"format", "seqrank-checkpoint"},
                              {"version", 1},
                              {"model", to_json(config)},
                              {"parameters", index},
                              {"blob", std::filesystem::path(stem + ".bin").filename().string()}});
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string stem = checkpoint_stem(path);
  const Json j = read_json(stem + ".json");
  require(j.value("format", "") == "seqrank-checkpoint", ErrorKind::Format, "'" + stem + ".json' is not a checkpoint");
  Checkpoint ck;
  ck.config = model_config_from_json(j.at("model"));
  ck.config.validate();
  ck.params = init_model<float>(ck.config, 0);
  const auto blob = read_file(stem + ".bin");
  auto slots = param_slots(ck.params);
  const Json& index = j.at("parameters");
  require(index.size() == slots.size(), ErrorKind::DimMismatch,
          "checkpoint has " + std::to_string(index.size()) + " tensors, the config implies " +
              std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Json& e = index[i];
    require(e.at("name").get<std::string>() == slots[i].name, ErrorKind::DimMismatch,
            "tensor " + std::to_string(i) + " is '" + e.at("name").get<std::string>() + "', expected '" +
                slots[i].name + "'");
    require(e.at("rows").get<Index>() == slots[i].rows && e.at("cols").get<Index>() == slots[i].cols,
            ErrorKind::DimMismatch, "shape of '" + slots[i].name + "' differs from the config");
    const std::size_t offset = e.at("offset").get<std::size_t>();
    require((offset + static_cast<std::size_t>(slots[i].size())) * 4 <= blob.size(), ErrorKind::Truncation,
            "checkpoint blob too short for '" + slots[i].name + "'");
    for (Index k = 0; k < slots[i].size(); ++k)
      slots[i].data[k] = detail::load_le<float>(blob.data() + (offset + static_cast<std::size_t>(k)) * 4);
  }
  return ck;
}

}  // namespace seqrank
