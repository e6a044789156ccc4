#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuralmat/brdf.hpp"

namespace neuralmat {

struct Fixture {
  std::string name;
  MaterialMaps maps;
};

/// Names of the built-in procedural materials, in generation order.
const std::vector<std::string>& procedural_fixture_names();

/// One stationary procedural material. Throws std::invalid_argument for an
/// unknown name.
MaterialMaps procedural_material(const std::string& name, int width, int height, std::uint64_t seed);

/// The first `count` procedural materials (all of them when count <= 0).
std::vector<Fixture> make_fixtures(int width, int height, std::uint64_t seed, int count = 0);

/// Map set stored as diffuse.png, specular.png, roughness.png and either
/// height.png or normal.png. Height PNGs map [0, 1] to [-height_max, height_max].
MaterialMaps load_map_set(const std::filesystem::path& dir, double height_max = 2.0);

/// Every subdirectory of `root` holding a map set, sorted by name.
std::vector<Fixture> load_fixture_dir(const std::filesystem::path& root, double height_max = 2.0);

}  // namespace neuralmat
