#include "densesfm/ply_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "densesfm/io_util.h"

namespace densesfm {

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

int TypeSize(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32") {
    return 4;
  }
  if (type == "double" || type == "float64") return 8;
  Fail(ErrorCode::kParse, "unknown PLY type " + type);
}

double ReadBinaryValue(std::istream& in, const std::string& type) {
  unsigned char b[8] = {0};
  const int n = TypeSize(type);
  in.read(reinterpret_cast<char*>(b), n);
  std::uint64_t u = 0;
  for (int i = n - 1; i >= 0; --i) u = (u << 8) | b[i];
  if (type == "float" || type == "float32") return std::bit_cast<float>(static_cast<std::uint32_t>(u));
  if (type == "double" || type == "float64") return std::bit_cast<double>(u);
  if (type == "char" || type == "int8") return static_cast<std::int8_t>(u);
  if (type == "short" || type == "int16") return static_cast<std::int16_t>(u);
  if (type == "int" || type == "int32") return static_cast<std::int32_t>(u);
  return static_cast<double>(u);
}

}  // namespace

const std::vector<double>& PlyVertices::Column(const std::string& name) const {
  auto it = columns.find(name);
  if (it == columns.end()) Fail(ErrorCode::kParse, "PLY vertex has no property " + name);
  return it->second;
}

PlyVertices ReadPlyVertices(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) Fail(ErrorCode::kParse, "not a PLY file: " + path.string());

  std::string format;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::string word;
    row >> word;
    if (word == "format") {
      row >> format;
    } else if (word == "element") {
      PlyElement e;
      row >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) Fail(ErrorCode::kParse, "property before element");
      PlyProperty p;
      std::string type;
      row >> type;
      if (type == "list") {
        p.is_list = true;
        row >> p.count_type >> p.type >> p.name;
      } else {
        p.type = type;
        row >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (word == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian") {
    Fail(ErrorCode::kParse, "unsupported PLY format " + format);
  }

  PlyVertices out;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    if (is_vertex) {
      out.count = e.count;
      for (const auto& p : e.properties) {
        if (p.is_list) Fail(ErrorCode::kParse, "list properties on vertices are not supported");
        out.names.push_back(p.name);
        out.columns[p.name].reserve(e.count);
      }
    }
    for (std::size_t i = 0; i < e.count; ++i) {
      if (format == "ascii") {
        if (!std::getline(in, line)) Fail(ErrorCode::kParse, "truncated PLY body");
        if (!is_vertex) continue;
        std::istringstream row(line);
        for (const auto& p : e.properties) {
          double v;
          if (!(row >> v)) Fail(ErrorCode::kParse, "bad PLY vertex row");
          out.columns[p.name].push_back(v);
        }
      } else {
        for (const auto& p : e.properties) {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(ReadBinaryValue(in, p.count_type));
            for (std::size_t j = 0; j < n; ++j) ReadBinaryValue(in, p.type);
            continue;
          }
          const double v = ReadBinaryValue(in, p.type);
          if (is_vertex) out.columns[p.name].push_back(v);
        }
        if (!in) Fail(ErrorCode::kParse, "truncated PLY body");
      }
    }
    if (is_vertex) break;
  }
  return out;
}

void WritePointCloudPly(const std::filesystem::path& path, const std::vector<Vec3>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& p : points) {
    for (int i = 0; i < 3; ++i) {
      const auto u = std::bit_cast<std::uint64_t>(p(i));
      WriteU32(out, static_cast<std::uint32_t>(u & 0xffffffffu));
      WriteU32(out, static_cast<std::uint32_t>(u >> 32));
    }
  }
  if (!out) Fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<Vec3> ReadPointCloudPly(const std::filesystem::path& path) {
  const PlyVertices v = ReadPlyVertices(path);
  const auto& x = v.Column("x");
  const auto& y = v.Column("y");
  const auto& z = v.Column("z");
  std::vector<Vec3> points(v.count);
  for (std::size_t i = 0; i < v.count; ++i) points[i] = Vec3(x[i], y[i], z[i]);
  return points;
}

}  // namespace densesfm
