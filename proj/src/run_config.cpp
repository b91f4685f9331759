#include "takand/run_config.hpp"

namespace takand {

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config: top level must be an object");
  RunConfig c;
  auto text = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_string()) throw InputError("config: key '" + key + "' must be a string");
    return v.get<std::string>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "data_dir") c.data_dir = text(value, key);
    else if (key == "out_dir") c.out_dir = text(value, key);
    else if (key == "embeddings") c.embeddings = text(value, key);
    else if (key == "checkpoint") c.checkpoint = text(value, key);
    else if (key == "split") c.split = std::string(split_name(parse_split(text(value, key))));
    else if (key == "train") c.train = train_config_from_json(value);
    else throw InputError("config: unknown key '" + key + "'");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json_file(path));
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"data_dir", c.data_dir.string()},
          {"out_dir", c.out_dir.string()},
          {"embeddings", c.embeddings.string()},
          {"checkpoint", c.checkpoint_path().string()},
          {"split", c.split},
          {"train", to_json(c.train)}};
}

}  // namespace takand
