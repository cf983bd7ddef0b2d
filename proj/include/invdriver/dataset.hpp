#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "invdriver/scene.hpp"

namespace invd::scene {

inline constexpr const char* kSceneSchema = "invdriver-scene";
inline constexpr int kSceneSchemaVersion = 1;

struct Dataset {
  SceneGenConfig config;
  std::vector<VectorScene> scenes;
};

// JSON Lines: a header record followed by one scene per line. Coordinates are
// written in shortest round-trip decimal form, so reading back is bitwise exact.
void write_dataset(const std::vector<VectorScene>& scenes, const SceneGenConfig& cfg, const std::filesystem::path& path);

// Throws ParseError (with the 1-based line number) on malformed records and
// VersionError on a schema or version mismatch.
Dataset read_dataset(const std::filesystem::path& path);

// Hex SHA-256 of the file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace invd::scene
