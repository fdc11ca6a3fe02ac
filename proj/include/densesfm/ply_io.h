#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "densesfm/common.h"

namespace densesfm {

// Vertex properties of a PLY file as doubles, keyed by property name. Reads
// ascii and binary_little_endian; elements after "vertex" are ignored.
struct PlyVertices {
  std::size_t count = 0;
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> columns;

  const std::vector<double>& Column(const std::string& name) const;
};

PlyVertices ReadPlyVertices(const std::filesystem::path& path);

// Binary little-endian point cloud with double x y z.
void WritePointCloudPly(const std::filesystem::path& path, const std::vector<Vec3>& points);
std::vector<Vec3> ReadPointCloudPly(const std::filesystem::path& path);

}  // namespace densesfm
