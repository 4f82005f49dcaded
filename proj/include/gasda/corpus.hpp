#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gasda/config.hpp"
#include "gasda/error.hpp"
#include "gasda/image_io.hpp"
#include "gasda/synthworld.hpp"

namespace gasda::corpus {

// Scene indices of the held-out split start here, far from any training index.
inline constexpr std::uint64_t kTestOffset = 1'000'000;

struct Corpus {
  world::WorldConfig world{};
  std::vector<world::StereoSample<Standard>> source;
  std::vector<world::StereoSample<Standard>> target;
  std::vector<Tensor<Standard>> target_depth;  // evaluation labels; empty unless requested
};

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

// Writes `count` source scenes (indices offset..offset+count-1) and `count`
// target scenes (the next `count` indices, domain shifted) under `root`:
//   source/<id>_{left,right}.ppm, source/<id>_depth.pfm
//   target/<id>_{left,right}.ppm, target/<id>_depth.pfm (evaluation only)
//   manifest.json
inline void write_corpus(const std::string& root, const world::WorldConfig& cfg, std::size_t count,
                         std::uint64_t offset = 0) {
  cfg.validate();
  if (count == 0) throw ConfigError("corpus: count must be > 0");
  const fs::path base(root);
  ensure_dir(base / "source");
  ensure_dir(base / "target");
  Json src_ids = Json::array(), tgt_ids = Json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = world::generate_scene<Standard>(cfg, offset + i);
    const std::string stem = (base / "source" / s.id).string();
    io::save_image(s.left, stem + "_left.ppm");
    io::save_image(s.right, stem + "_right.ppm");
    io::save_depth(s.gt_depth, stem + "_depth.pfm");
    src_ids.push_back(s.id);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t index = offset + count + i;
    auto scene = world::generate_scene<Standard>(cfg, index);
    scene.id = world::sample_id(world::Domain::kTarget, index);
    const auto t = world::shift_domain(scene, cfg);
    const std::string stem = (base / "target" / t.id).string();
    io::save_image(t.left, stem + "_left.ppm");
    io::save_image(t.right, stem + "_right.ppm");
    io::save_depth(scene.gt_depth, stem + "_depth.pfm");
    tgt_ids.push_back(t.id);
  }
  Json m{{"format", 1},
         {"count", count},
         {"offset", offset},
         {"rig", Json{{"focal_px", cfg.rig.focal_px}, {"baseline_m", cfg.rig.baseline_m}, {"width_px", cfg.rig.width_px}}},
         {"world", to_json(cfg)},
         {"source", src_ids},
         {"target", tgt_ids}};
  std::ofstream f(base / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write '" + (base / "manifest.json").string() + "'");
  f << dump_json(m);
  if (!f) throw IoError("write failed for '" + (base / "manifest.json").string() + "'");
}

inline Json read_manifest(const std::string& root) {
  const fs::path p = fs::path(root) / "manifest.json";
  std::ifstream f(p);
  if (!f) throw DataError("no corpus at '" + root + "' (missing manifest.json)");
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// Loads the corpus images. `with_target_depth` also reads the target labels
// (evaluation); training never requests them.
inline Corpus load_corpus(const std::string& root, bool with_target_depth = false) {
  const Json m = read_manifest(root);
  Corpus c;
  try {
    from_json_into(m.at("world"), "manifest.world", c.world);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(root + "/manifest.json: " + e.what());
  }
  const fs::path base(root);
  auto need = [](const fs::path& p) {
    if (!fs::exists(p)) throw DataError("corpus file missing: '" + p.string() + "'");
    return p.string();
  };
  for (const auto& id : m.value("source", Json::array())) {
    world::StereoSample<Standard> s;
    s.id = id.get<std::string>();
    s.domain = world::Domain::kSource;
    s.rig = c.world.rig;
    const fs::path stem = base / "source" / s.id;
    s.left = io::load_image<Standard>(need(stem.string() + "_left.ppm"));
    s.right = io::load_image<Standard>(need(stem.string() + "_right.ppm"));
    s.gt_depth = io::load_depth<Standard>(need(stem.string() + "_depth.pfm"));
    c.source.push_back(std::move(s));
  }
  for (const auto& id : m.value("target", Json::array())) {
    world::StereoSample<Standard> s;
    s.id = id.get<std::string>();
    s.domain = world::Domain::kTarget;
    s.rig = c.world.rig;
    const fs::path stem = base / "target" / s.id;
    s.left = io::load_image<Standard>(need(stem.string() + "_left.ppm"));
    s.right = io::load_image<Standard>(need(stem.string() + "_right.ppm"));
    if (with_target_depth) c.target_depth.push_back(io::load_depth<Standard>(need(stem.string() + "_depth.pfm")));
    c.target.push_back(std::move(s));
  }
  for (const auto* group : {&c.source, &c.target}) {
    for (const auto& s : *group) {
      const Shape ls = s.left.shape();
      if (ls.h != c.world.height || ls.w != c.world.width || s.right.shape() != ls) {
        throw ParseError("corpus sample '" + s.id + "' does not match the manifest resolution");
      }
    }
  }
  return c;
}

}  // namespace gasda::corpus
