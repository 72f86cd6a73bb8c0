#include "meshsplat/mesh_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace meshsplat {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw MeshError(path.string() + ": " + what);
}

// Parses the vertex index of an OBJ face token ("7", "7/2", "7//3", "-1").
int obj_index(const std::string& token, int vertex_count, const fs::path& path, int line) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    fail(path, "line " + std::to_string(line) + ": bad face index '" + token + "'");
  }
  if (idx < 0) idx = vertex_count + idx + 1;
  return idx - 1;
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(buf, sizeof(T));
}

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType ply_type(const std::string& name, const fs::path& path) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  fail(path, "unsupported PLY type '" + name + "'");
}

double read_ply_value(std::istream& in, PlyType t, bool binary) {
  if (!binary) {
    double v = 0.0;
    in >> v;
    return v;
  }
  switch (t) {
    case PlyType::Int8: return read_le<std::int8_t>(in);
    case PlyType::UInt8: return read_le<std::uint8_t>(in);
    case PlyType::Int16: return read_le<std::int16_t>(in);
    case PlyType::UInt16: return read_le<std::uint16_t>(in);
    case PlyType::Int32: return read_le<std::int32_t>(in);
    case PlyType::UInt32: return read_le<std::uint32_t>(in);
    case PlyType::Float32: return read_le<float>(in);
    case PlyType::Float64: return read_le<double>(in);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

std::string lower_ext(const fs::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace

TriangleMesh load_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) fail(path, "line " + std::to_string(line_no) + ": malformed vertex");
      vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string token;
      while (ss >> token) poly.push_back(obj_index(token, static_cast<int>(vertices.size()), path, line_no));
      if (poly.size() < 3) fail(path, "line " + std::to_string(line_no) + ": face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) faces.push_back({poly[0], poly[k], poly[k + 1]});
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

TriangleMesh load_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) fail(path, "missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt == "ascii") binary = false;
      else fail(path, "unsupported PLY format '" + fmt + "'");
    } else if (word == "element") {
      PlyElement el;
      ss >> el.name >> el.count;
      elements.push_back(el);
    } else if (word == "property") {
      if (elements.empty()) fail(path, "property before element");
      PlyProperty prop;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string ct, it;
        ss >> ct >> it >> prop.name;
        prop.is_list = true;
        prop.count_type = ply_type(ct, path);
        prop.type = ply_type(it, path);
      } else {
        prop.type = ply_type(type, path);
        ss >> prop.name;
      }
      elements.back().props.push_back(prop);
    } else if (word == "end_header") {
      break;
    }
  }

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  for (const PlyElement& el : elements) {
    for (std::size_t row = 0; row < el.count; ++row) {
      Vec3 p = Vec3::Zero();
      for (const PlyProperty& prop : el.props) {
        if (prop.is_list) {
          const auto n = static_cast<std::size_t>(read_ply_value(in, prop.count_type, binary));
          std::vector<int> poly(n);
          for (std::size_t k = 0; k < n; ++k) poly[k] = static_cast<int>(read_ply_value(in, prop.type, binary));
          if (el.name == "face" && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
            if (n < 3) fail(path, "face " + std::to_string(row) + " has fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < n; ++k) faces.push_back({poly[0], poly[k], poly[k + 1]});
          }
        } else {
          const double v = read_ply_value(in, prop.type, binary);
          if (el.name == "vertex") {
            if (prop.name == "x") p.x() = v;
            else if (prop.name == "y") p.y() = v;
            else if (prop.name == "z") p.z() = v;
          }
        }
      }
      if (!in) fail(path, "truncated data in element '" + el.name + "' row " + std::to_string(row));
      if (el.name == "vertex") vertices.push_back(p);
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

TriangleMesh load_mesh(const fs::path& path, const std::optional<fs::path>& weights_path) {
  const std::string ext = lower_ext(path);
  TriangleMesh mesh;
  if (ext == ".obj") mesh = load_obj(path);
  else if (ext == ".ply") mesh = load_ply(path);
  else fail(path, "unknown mesh extension '" + ext + "'");
  if (weights_path) {
    SkinWeightTable table = load_skin_weights(*weights_path);
    if (table.weights.size() != mesh.vertex_count() * static_cast<std::size_t>(table.bones)) {
      fail(*weights_path, "has " + std::to_string(table.weights.size() / static_cast<std::size_t>(table.bones)) +
                              " rows, mesh has " + std::to_string(mesh.vertex_count()) + " vertices");
    }
    mesh.set_skin_weights(std::move(table.weights), table.bones);
  }
  return mesh;
}

void save_obj(const TriangleMesh& mesh, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(path, "cannot write");
  out << std::setprecision(17);
  for (const Vec3& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void save_ply(const TriangleMesh& mesh, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot write");
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertex_count() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "element face " << mesh.face_count() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (const Vec3& v : mesh.vertices())
    for (int k = 0; k < 3; ++k) write_le<double>(out, v[k]);
  for (const Face& f : mesh.faces()) {
    write_le<std::uint8_t>(out, 3);
    for (int k = 0; k < 3; ++k) write_le<std::int32_t>(out, f[k]);
  }
}

void save_mesh(const TriangleMesh& mesh, const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".ply") save_ply(mesh, path);
  else save_obj(mesh, path);
}

SkinWeightTable load_skin_weights(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  SkinWeightTable table;
  if (!(in >> table.bones) || table.bones <= 0) fail(path, "line 1 must hold a positive bone count");
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<double> row;
    double w = 0.0;
    while (ss >> w) row.push_back(w);
    if (row.empty()) continue;
    if (row.size() != static_cast<std::size_t>(table.bones))
      fail(path, "line " + std::to_string(line_no) + ": expected " + std::to_string(table.bones) + " weights");
    table.weights.insert(table.weights.end(), row.begin(), row.end());
  }
  return table;
}

void save_skin_weights(const TriangleMesh& mesh, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(path, "cannot write");
  out << mesh.bone_count() << '\n' << std::setprecision(17);
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
    const auto w = mesh.skin_weights(static_cast<int>(v));
    for (std::size_t b = 0; b < w.size(); ++b) out << (b ? " " : "") << w[b];
    out << '\n';
  }
}

}  // namespace meshsplat
