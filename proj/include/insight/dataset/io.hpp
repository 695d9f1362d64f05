#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "insight/core/archive.hpp"
#include "insight/dataset/dataset.hpp"

// Dataset directory:
//   manifest.json  schema "fsd-v1", env config, counts, object names, split
//   frames.bin     uint8 pixels, sample-major then frame, row, column
//   symbols.jsonl  one line per sample: {"i": n, "frames": [record, ...]}

namespace insight {

inline constexpr const char* kDatasetSchema = "fsd-v1";

namespace detail {

inline nlohmann::json record_json(const SymbolRecord& s) {
  nlohmann::json exist = nlohmann::json::array(), coords = nlohmann::json::array(), sizes = nlohmann::json::array();
  for (std::size_t j = 0; j < s.objects(); ++j) {
    exist.push_back(int(s.exist[j]));
    coords.push_back({s.coords[j][0], s.coords[j][1]});
    sizes.push_back({s.sizes[j][0], s.sizes[j][1]});
  }
  return {{"exist", exist}, {"coords", coords}, {"sizes", sizes}};
}

inline SymbolRecord record_from_json(const nlohmann::json& j, std::size_t objects) {
  SymbolRecord s(objects);
  const auto& e = j.at("exist");
  const auto& c = j.at("coords");
  const auto& z = j.at("sizes");
  if (e.size() != objects || c.size() != objects || z.size() != objects) {
    throw FormatError("symbol record has the wrong object count");
  }
  for (std::size_t k = 0; k < objects; ++k) {
    s.exist[k] = static_cast<std::uint8_t>(e[k].get<int>());
    s.coords[k] = {c[k][0].get<double>(), c[k][1].get<double>()};
    s.sizes[k] = {z[k][0].get<double>(), z[k][1].get<double>()};
  }
  return s;
}

inline nlohmann::json parse_json(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(source + ": malformed JSON at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json env_config_json(const EnvConfig& c) {
  return {{"env_id", to_string(c.env_id)}, {"frame_size", c.frame_size},   {"frame_stack", c.frame_stack},
          {"max_objects", c.max_objects},  {"seed", c.seed},               {"max_steps", c.max_steps},
          {"points_to_win", c.points_to_win}};
}

inline EnvConfig env_config_from_json(const nlohmann::json& j) {
  EnvConfig c;
  c.env_id = parse_env_id(j.at("env_id").get<std::string>());
  c.frame_size = j.at("frame_size").get<std::size_t>();
  c.frame_stack = j.at("frame_stack").get<std::size_t>();
  c.max_objects = j.at("max_objects").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.points_to_win = j.at("points_to_win").get<int>();
  return c;
}

inline void save_dataset(const FrameSymbolDataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

  nlohmann::json manifest = {
      {"schema", kDatasetSchema},
      {"byte_order", "little"},
      {"env", env_config_json(d.env)},
      {"n_frames", d.size()},
      {"objects", d.objects()},
      {"frame_stack", d.stack()},
      {"frame_size", d.env.frame_size},
      {"object_names", d.object_names},
      {"behavior_policy", d.policy},
      {"seed", d.seed},
      {"split", {{"train", d.train.size()}, {"test", d.test.size()}, {"train_indices", d.train}, {"test_indices", d.test}}},
  };
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file((fs::path(dir) / "manifest.json").string(), std::vector<char>(text.begin(), text.end()));

  std::vector<char> blob;
  blob.reserve(d.size() * d.stack() * d.env.frame_size * d.env.frame_size);
  for (const auto& f : d.frames) blob.insert(blob.end(), f.pixels.begin(), f.pixels.end());
  detail::write_file((fs::path(dir) / "frames.bin").string(), blob);

  std::string lines;
  for (std::size_t i = 0; i < d.size(); ++i) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& s : d.symbols[i]) frames.push_back(detail::record_json(s));
    lines += nlohmann::json{{"i", i}, {"frames", frames}}.dump() + "\n";
  }
  detail::write_file((fs::path(dir) / "symbols.jsonl").string(), std::vector<char>(lines.begin(), lines.end()));
}

inline FrameSymbolDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  if (!fs::exists(manifest_path)) {
    throw ArtifactError("no dataset at " + dir + " (missing manifest.json); run `insight gen-dataset` first");
  }
  const auto mbytes = detail::read_file(manifest_path);
  const auto m = detail::parse_json(std::string(mbytes.begin(), mbytes.end()), manifest_path);
  const std::string schema = m.value("schema", std::string("<none>"));
  if (schema != kDatasetSchema) {
    throw FormatError(manifest_path + ": schema '" + schema + "' is not the supported '" + kDatasetSchema + "'");
  }
  if (m.value("byte_order", std::string()) != "little") throw FormatError(manifest_path + ": unsupported byte order");

  FrameSymbolDataset d;
  try {
    d.env = env_config_from_json(m.at("env"));
    d.object_names = m.at("object_names").get<std::vector<std::string>>();
    d.policy = m.at("behavior_policy").get<std::string>();
    d.seed = m.at("seed").get<std::uint64_t>();
    d.train = m.at("split").at("train_indices").get<std::vector<std::size_t>>();
    d.test = m.at("split").at("test_indices").get<std::vector<std::size_t>>();
    const auto n = m.at("n_frames").get<std::size_t>();
    if (m.at("objects").get<std::size_t>() != d.objects() || m.at("frame_stack").get<std::size_t>() != d.stack() ||
        m.at("frame_size").get<std::size_t>() != d.env.frame_size || d.object_names.size() != d.objects()) {
      throw FormatError(manifest_path + ": header counts disagree with the env config");
    }

    const std::string frames_path = (fs::path(dir) / "frames.bin").string();
    const auto blob = detail::read_file(frames_path);
    const std::size_t per = d.stack() * d.env.frame_size * d.env.frame_size;
    if (blob.size() != n * per) {
      const std::size_t offset = std::min(blob.size(), n * per);
      throw FormatError(frames_path + ": expected " + std::to_string(n * per) + " bytes, data ends at byte offset " +
                        std::to_string(offset) + " of " + std::to_string(blob.size()));
    }
    d.frames.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& f = d.frames[i];
      f.frames = d.stack();
      f.size = d.env.frame_size;
      f.pixels.assign(reinterpret_cast<const std::uint8_t*>(blob.data()) + i * per,
                      reinterpret_cast<const std::uint8_t*>(blob.data()) + (i + 1) * per);
    }

    const std::string symbols_path = (fs::path(dir) / "symbols.jsonl").string();
    const auto sbytes = detail::read_file(symbols_path);
    const std::string text(sbytes.begin(), sbytes.end());
    std::size_t pos = 0;
    d.symbols.reserve(n);
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) {
        throw FormatError(symbols_path + ": truncated record at byte offset " + std::to_string(pos));
      }
      const auto line = detail::parse_json(text.substr(pos, end - pos), symbols_path + " (line at byte offset " +
                                                                            std::to_string(pos) + ")");
      if (line.at("i").get<std::size_t>() != d.symbols.size()) {
        throw FormatError(symbols_path + ": record out of order at byte offset " + std::to_string(pos));
      }
      std::vector<SymbolRecord> recs;
      for (const auto& r : line.at("frames")) recs.push_back(detail::record_from_json(r, d.objects()));
      if (recs.size() != d.stack()) throw FormatError(symbols_path + ": wrong frame count at byte offset " + std::to_string(pos));
      d.symbols.push_back(std::move(recs));
      pos = end + 1;
    }
    if (d.symbols.size() != n) {
      throw FormatError(symbols_path + ": " + std::to_string(d.symbols.size()) + " records, manifest says " +
                        std::to_string(n) + " (file ends at byte offset " + std::to_string(text.size()) + ")");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + ": invalid dataset metadata: " + e.what());
  }
  check_split(d);
  return d;
}

}  // namespace insight
