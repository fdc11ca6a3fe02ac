#include "densesfm/colmap_io.h"

#include <fstream>
#include <sstream>

#include "densesfm/io_util.h"

namespace densesfm {

namespace fs = std::filesystem;

namespace {

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::ifstream OpenIn(const fs::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

// Next non-comment line; empty lines are data (an image may have no points).
bool NextDataLine(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    return true;
  }
  return false;
}

struct ImageRecord {
  ImageId image = 0;
  std::vector<Vec2> points2d;
};

}  // namespace

void WriteColmapText(const fs::path& dir, const SceneModel& model) {
  fs::create_directories(dir);

  // Per-image 2D point lists, ordered by point id then observation order.
  std::map<ImageId, std::vector<std::pair<Vec2, PointId>>> points2d;
  std::map<PointId, std::vector<std::pair<ImageId, std::size_t>>> elements;
  for (const auto& [image, cam] : model.cameras) points2d[image];
  for (const auto& [id, track] : model.tracks) {
    for (const auto& obs : track.observations) {
      auto& list = points2d[obs.image];
      elements[id].emplace_back(obs.image, list.size());
      list.emplace_back(obs.pixel, id);
    }
  }

  {
    auto out = OpenOut(dir / "cameras.txt");
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        << "# Number of cameras: " << model.cameras.size() << '\n';
    for (const auto& [image, cam] : model.cameras) {
      const auto& k = cam.intrinsics;
      out << image << " PINHOLE " << k.width << ' ' << k.height << ' ' << FormatDouble(k.fx)
          << ' ' << FormatDouble(k.fy) << ' ' << FormatDouble(k.cx) << ' ' << FormatDouble(k.cy)
          << '\n';
    }
  }
  {
    std::size_t total = 0;
    for (const auto& [image, list] : points2d) total += list.size();
    auto out = OpenOut(dir / "images.txt");
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
        << "# Number of images: " << model.cameras.size()
        << ", mean observations per image: "
        << (model.cameras.empty() ? 0.0 : static_cast<double>(total) / model.cameras.size())
        << '\n';
    for (const auto& [image, cam] : model.cameras) {
      const auto& q = cam.pose.quaternion();
      const auto& t = cam.pose.translation();
      const std::string name = cam.name.empty() ? std::to_string(image) + ".png" : cam.name;
      out << image << ' ' << FormatDouble(q.w()) << ' ' << FormatDouble(q.x()) << ' '
          << FormatDouble(q.y()) << ' ' << FormatDouble(q.z()) << ' ' << FormatDouble(t.x())
          << ' ' << FormatDouble(t.y()) << ' ' << FormatDouble(t.z()) << ' ' << image << ' '
          << name << '\n';
      bool first = true;
      for (const auto& [pixel, id] : points2d[image]) {
        if (!first) out << ' ';
        first = false;
        out << FormatDouble(pixel.x()) << ' ' << FormatDouble(pixel.y()) << ' ' << id;
      }
      out << '\n';
    }
  }
  {
    auto out = OpenOut(dir / "points3D.txt");
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        << "# Number of points: " << model.points.size() << '\n';
    for (const auto& [id, xyz] : model.points) {
      double error = 0.0;
      auto track = model.tracks.find(id);
      if (track != model.tracks.end() && !track->second.observations.empty()) {
        std::size_t n = 0;
        for (const auto& obs : track->second.observations) {
          const auto& cam = model.Camera(obs.image);
          if (auto p = TryProject(xyz, cam.pose, cam.intrinsics)) {
            error += (*p - obs.pixel).norm();
            ++n;
          }
        }
        if (n > 0) error /= static_cast<double>(n);
      }
      out << id << ' ' << FormatDouble(xyz.x()) << ' ' << FormatDouble(xyz.y()) << ' '
          << FormatDouble(xyz.z()) << " 128 128 128 " << FormatDouble(error);
      for (const auto& [image, idx] : elements[id]) out << ' ' << image << ' ' << idx;
      out << '\n';
    }
  }
  {
    auto out = OpenOut(dir / "tracks_meta.txt");
    out << "# POINT3D_ID, REFERENCE_IMAGE_ID (-1 if unset), PROVENANCE[] in track order\n";
    for (const auto& [id, track] : model.tracks) {
      out << id << ' ';
      if (track.reference) {
        out << *track.reference;
      } else {
        out << -1;
      }
      for (const auto& obs : track.observations) out << ' ' << ProvenanceName(obs.provenance);
      out << '\n';
    }
  }
}

SceneModel ReadColmapText(const fs::path& dir) {
  SceneModel model;
  std::map<std::uint64_t, CameraIntrinsics> intrinsics;
  std::string line;
  {
    auto in = OpenIn(dir / "cameras.txt");
    while (NextDataLine(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::uint64_t id;
      std::string kind;
      CameraIntrinsics k;
      if (!(row >> id >> kind >> k.width >> k.height)) {
        Fail(ErrorCode::kParse, "bad camera record: " + line);
      }
      if (kind == "PINHOLE") {
        row >> k.fx >> k.fy >> k.cx >> k.cy;
      } else if (kind == "SIMPLE_PINHOLE") {
        row >> k.fx >> k.cx >> k.cy;
        k.fy = k.fx;
      } else {
        Fail(ErrorCode::kParse, "unsupported camera model " + kind);
      }
      if (!row) Fail(ErrorCode::kParse, "bad camera parameters: " + line);
      intrinsics[id] = k;
    }
  }

  std::map<ImageId, ImageRecord> images;
  {
    auto in = OpenIn(dir / "images.txt");
    while (NextDataLine(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      ImageId image;
      double qw, qx, qy, qz;
      Vec3 t;
      std::uint64_t camera_id;
      std::string name;
      if (!(row >> image >> qw >> qx >> qy >> qz >> t.x() >> t.y() >> t.z() >> camera_id >> name)) {
        Fail(ErrorCode::kParse, "bad image record: " + line);
      }
      auto k = intrinsics.find(camera_id);
      if (k == intrinsics.end()) Fail(ErrorCode::kParse, "image references unknown camera");
      CameraView view;
      view.pose = CameraPose(Eigen::Quaterniond(qw, qx, qy, qz), t);
      view.intrinsics = k->second;
      view.name = name;
      model.cameras[image] = view;

      ImageRecord record;
      record.image = image;
      if (std::getline(in, line)) {
        std::istringstream pts(line);
        double x, y;
        long long pid;
        while (pts >> x >> y >> pid) record.points2d.emplace_back(x, y);
      }
      images[image] = std::move(record);
    }
  }
  {
    auto in = OpenIn(dir / "points3D.txt");
    while (NextDataLine(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      PointId id;
      Vec3 xyz;
      int r, g, b;
      double error;
      if (!(row >> id >> xyz.x() >> xyz.y() >> xyz.z() >> r >> g >> b >> error)) {
        Fail(ErrorCode::kParse, "bad point record: " + line);
      }
      model.points[id] = xyz;
      Track track;
      track.point_id = id;
      ImageId image;
      std::size_t idx;
      while (row >> image >> idx) {
        auto rec = images.find(image);
        if (rec == images.end() || idx >= rec->second.points2d.size()) {
          Fail(ErrorCode::kParse, "track element references a missing 2D point");
        }
        track.observations.push_back({image, rec->second.points2d[idx], Provenance::kMatched});
      }
      if (!track.observations.empty()) model.tracks[id] = std::move(track);
    }
  }
  if (fs::exists(dir / "tracks_meta.txt")) {
    auto in = OpenIn(dir / "tracks_meta.txt");
    while (NextDataLine(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      PointId id;
      long long reference;
      if (!(row >> id >> reference)) Fail(ErrorCode::kParse, "bad tracks_meta record");
      auto it = model.tracks.find(id);
      if (it == model.tracks.end()) continue;
      if (reference >= 0) it->second.reference = static_cast<ImageId>(reference);
      std::string prov;
      for (auto& obs : it->second.observations) {
        if (!(row >> prov)) break;
        obs.provenance = ParseProvenance(prov);
      }
    }
  }
  return model;
}

}  // namespace densesfm
