#include "invdriver/dataset.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "invdriver/errors.hpp"
#include "invdriver/json_io.hpp"

namespace invd::scene {

using nlohmann::json;

namespace {

json scene_to_json(const VectorScene& s) {
  json j;
  j["seed"] = s.seed;
  j["command"] = to_string(s.command);
  json map = json::array();
  for (const auto& line : s.map) {
    json pts = json::array();
    for (const auto& p : line.points) pts.push_back({p.x, p.y});
    map.push_back({{"class", to_string(line.cls)}, {"pts", std::move(pts)}});
  }
  j["map"] = std::move(map);
  json agents = json::array();
  for (const auto& a : s.agents) {
    json hist = json::array(), fut = json::array();
    for (const auto& p : a.history) hist.push_back({p.x, p.y, p.heading});
    for (const auto& p : a.future) fut.push_back({p.x, p.y, p.heading});
    agents.push_back({{"lw", {a.length, a.width}}, {"hist", std::move(hist)}, {"fut", std::move(fut)}});
  }
  j["agents"] = std::move(agents);
  json ego = json::array();
  for (const auto& p : s.ego_future) ego.push_back({p.x, p.y});
  j["ego_fut"] = std::move(ego);
  return j;
}

Point2 read_point(const json& j) {
  if (!j.is_array() || j.size() != 2) throw InputError("expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

Pose read_pose(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected [x, y, heading]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

VectorScene scene_from_json(const json& j) {
  VectorScene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.command = command_from_string(j.at("command").get<std::string>());
  for (const auto& m : j.at("map")) {
    Polyline line;
    line.cls = map_class_from_string(m.at("class").get<std::string>());
    for (const auto& p : m.at("pts")) line.points.push_back(read_point(p));
    s.map.push_back(std::move(line));
  }
  for (const auto& a : j.at("agents")) {
    AgentTrack t;
    const auto& lw = a.at("lw");
    if (!lw.is_array() || lw.size() != 2) throw InputError("expected lw = [length, width]");
    t.length = lw[0].get<double>();
    t.width = lw[1].get<double>();
    for (const auto& p : a.at("hist")) t.history.push_back(read_pose(p));
    for (const auto& p : a.at("fut")) t.future.push_back(read_pose(p));
    s.agents.push_back(std::move(t));
  }
  for (const auto& p : j.at("ego_fut")) s.ego_future.push_back(read_point(p));
  return s;
}

}  // namespace

void write_dataset(const std::vector<VectorScene>& scenes, const SceneGenConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  json header{{"schema", kSceneSchema}, {"version", kSceneSchemaVersion}, {"config", cfg}};
  out << header.dump() << '\n';
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
  if (!out) throw RuntimeFailure("write to " + path.string() + " failed");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!have_header) {
      if (!j.is_object() || j.value("schema", std::string{}) != kSceneSchema)
        throw VersionError("line 1: not an " + std::string(kSceneSchema) + " file");
      if (j.value("version", -1) != kSceneSchemaVersion)
        throw VersionError("unsupported " + std::string(kSceneSchema) + " version " + j.value("version", json(-1)).dump());
      try {
        ds.config = j.at("config").get<SceneGenConfig>();
      } catch (const json::exception& e) {
        throw ParseError(lineno, std::string("bad config: ") + e.what());
      }
      have_header = true;
      continue;
    }
    try {
      ds.scenes.push_back(scene_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("malformed scene record: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(lineno, std::string("malformed scene record: ") + e.what());
    }
  }
  if (!have_header) throw ParseError(lineno + 1, "missing header record");
  return ds;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in.read(buf.data(), buf.size()) || in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

}  // namespace invd::scene
