#include "meshsplat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace meshsplat {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'S', 'P', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw Error("cannot write checkpoint: " + path);
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void f64(const std::string& name, const double* data, std::size_t count) { section(name, 0, data, count, 8); }
  void i32(const std::string& name, const std::int32_t* data, std::size_t count) { section(name, 1, data, count, 4); }
  void finish() {
    out_.flush();
    if (!out_) throw Error("failed writing checkpoint: " + path_);
  }

 private:
  void section(const std::string& name, std::uint8_t type, const void* data, std::size_t count, std::size_t size) {
    pod(static_cast<std::uint32_t>(name.size()));
    out_.write(name.data(), static_cast<std::streamsize>(name.size()));
    pod(type);
    pod(static_cast<std::uint64_t>(count));
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(count * size));
  }
  std::ofstream out_;
  std::string path_;
};

struct Section {
  std::uint8_t type = 0;
  std::vector<double> f64;
  std::vector<std::int32_t> i32;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error("cannot open checkpoint: " + path);
  }
  template <typename T>
  T pod() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw Error("truncated checkpoint: " + path_);
    return v;
  }
  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw Error("truncated checkpoint: " + path_);
  }
  std::pair<std::string, Section> section() {
    const auto len = pod<std::uint32_t>();
    if (len > 4096) throw Error("corrupt checkpoint section name in " + path_);
    std::string name(len, '\0');
    bytes(name.data(), len);
    Section s;
    s.type = pod<std::uint8_t>();
    const auto count = pod<std::uint64_t>();
    if (count > (std::uint64_t(1) << 34)) throw Error("corrupt checkpoint section size in " + path_);
    if (s.type == 0) {
      s.f64.resize(count);
      bytes(reinterpret_cast<char*>(s.f64.data()), count * 8);
    } else if (s.type == 1) {
      s.i32.resize(count);
      bytes(reinterpret_cast<char*>(s.i32.data()), count * 4);
    } else {
      throw Error("unknown checkpoint section type in " + path_);
    }
    return {std::move(name), std::move(s)};
  }

 private:
  std::ifstream in_;
  std::string path_;
};

template <typename V>
std::vector<double> flatten(const std::vector<V>& v) {
  std::vector<double> out;
  out.reserve(v.size() * V::SizeAtCompileTime);
  for (const V& x : v)
    for (int k = 0; k < V::SizeAtCompileTime; ++k) out.push_back(x[k]);
  return out;
}

template <typename V>
std::vector<V> unflatten(const std::vector<double>& d, std::size_t count, const std::string& name) {
  constexpr int n = V::SizeAtCompileTime;
  if (d.size() != count * n) throw Error("checkpoint section " + name + " has the wrong length");
  std::vector<V> out(count);
  for (std::size_t i = 0; i < count; ++i)
    for (int k = 0; k < n; ++k) out[i][k] = d[i * n + k];
  return out;
}

void write_bindings(Writer& w, const std::vector<BindingRecord>& b) {
  std::vector<std::int32_t> face;
  std::vector<double> bary, height;
  for (const BindingRecord& r : b) {
    face.push_back(r.face);
    bary.insert(bary.end(), {r.bary.a1, r.bary.a2, r.bary.a3});
    height.push_back(r.signed_height);
  }
  w.i32("g.face", face.data(), face.size());
  w.f64("g.bary", bary.data(), bary.size());
  w.f64("g.height", height.data(), height.size());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const Scene& sc = ckpt.scene;
  Writer w(path);
  w.pod(kMagic);
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint32_t>(sc.stage));
  w.pod(static_cast<std::uint64_t>(sc.mesh.vertex_count()));
  w.pod(static_cast<std::uint64_t>(sc.mesh.face_count()));
  w.pod(static_cast<std::uint32_t>(sc.mesh.bone_count()));
  w.pod(static_cast<std::uint64_t>(sc.size()));
  w.pod(ckpt.iteration);
  const bool adhered = sc.stage == Stage::Adhered;
  const std::uint32_t sections = 7 + (adhered ? 4 : 5) + static_cast<std::uint32_t>(ckpt.extra.size());
  w.pod(sections);

  const auto verts = flatten(sc.mesh.vertices());
  const auto rest = flatten(sc.mesh.rest_vertices());
  std::vector<std::int32_t> faces;
  for (const Face& f : sc.mesh.faces()) faces.insert(faces.end(), f.begin(), f.end());
  w.f64("mesh.vertices", verts.data(), verts.size());
  w.f64("mesh.rest_vertices", rest.data(), rest.size());
  w.i32("mesh.faces", faces.data(), faces.size());
  w.f64("mesh.skin", sc.mesh.skin_weight_table().data(), sc.mesh.skin_weight_table().size());

  if (adhered) {
    const AdheredSet& g = sc.adhered;
    write_bindings(w, g.binding);
    const auto ls = flatten(g.log_scale);
    w.f64("g.log_scale", ls.data(), ls.size());
    w.f64("g.beta", g.beta.data(), g.beta.size());
    w.f64("g.opacity", g.opacity_logit.data(), g.opacity_logit.size());
    const auto col = flatten(g.color_logit);
    w.f64("g.color", col.data(), col.size());
  } else {
    const DetachedSet& g = sc.detached;
    write_bindings(w, g.binding);
    const auto c = flatten(g.center);
    const auto ls = flatten(g.log_scale);
    const auto q = flatten(g.rotation);
    w.f64("g.center", c.data(), c.size());
    w.f64("g.log_scale", ls.data(), ls.size());
    w.f64("g.rotation", q.data(), q.size());
    w.f64("g.opacity", g.opacity_logit.data(), g.opacity_logit.size());
    const auto col = flatten(g.color_logit);
    w.f64("g.color", col.data(), col.size());
  }
  for (const auto& [name, data] : ckpt.extra) w.f64(name, data.data(), data.size());
  w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw Error("not a checkpoint file: " + path);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto stage = r.pod<std::uint32_t>();
  if (stage > 1) throw Error("corrupt checkpoint stage tag in " + path);
  const auto nv = r.pod<std::uint64_t>();
  const auto nf = r.pod<std::uint64_t>();
  const auto bones = r.pod<std::uint32_t>();
  const auto ng = r.pod<std::uint64_t>();
  Checkpoint ckpt;
  ckpt.iteration = r.pod<std::uint64_t>();
  const auto nsec = r.pod<std::uint32_t>();

  std::map<std::string, Section> sec;
  for (std::uint32_t i = 0; i < nsec; ++i) {
    auto [name, s] = r.section();
    sec[name] = std::move(s);
  }
  auto f64 = [&](const std::string& name) -> std::vector<double>& {
    auto it = sec.find(name);
    if (it == sec.end() || it->second.type != 0) throw Error("checkpoint is missing section " + name);
    return it->second.f64;
  };
  auto i32 = [&](const std::string& name) -> std::vector<std::int32_t>& {
    auto it = sec.find(name);
    if (it == sec.end() || it->second.type != 1) throw Error("checkpoint is missing section " + name);
    return it->second.i32;
  };

  const auto& fi = i32("mesh.faces");
  if (fi.size() != nf * 3) throw Error("checkpoint face section has the wrong length");
  std::vector<Face> faces(nf);
  for (std::size_t f = 0; f < nf; ++f) faces[f] = {fi[3 * f], fi[3 * f + 1], fi[3 * f + 2]};
  Scene& sc = ckpt.scene;
  sc.mesh = TriangleMesh(unflatten<Vec3>(f64("mesh.rest_vertices"), nv, "mesh.rest_vertices"), std::move(faces));
  sc.mesh.set_vertices(unflatten<Vec3>(f64("mesh.vertices"), nv, "mesh.vertices"));
  if (bones > 0) sc.mesh.set_skin_weights(f64("mesh.skin"), static_cast<int>(bones));

  const auto& face = i32("g.face");
  const auto& bary = f64("g.bary");
  const auto& height = f64("g.height");
  if (face.size() != ng || bary.size() != 3 * ng || height.size() != ng)
    throw Error("checkpoint binding sections have the wrong length");
  std::vector<BindingRecord> bindings(ng);
  for (std::size_t i = 0; i < ng; ++i) {
    if (face[i] < 0 || static_cast<std::uint64_t>(face[i]) >= nf) throw Error("checkpoint binding references a bad face");
    bindings[i].face = face[i];
    bindings[i].bary = {bary[3 * i], bary[3 * i + 1], bary[3 * i + 2]};
    bindings[i].signed_height = height[i];
  }
  auto scalars = [&](const std::string& name) {
    auto& v = f64(name);
    if (v.size() != ng) throw Error("checkpoint section " + name + " has the wrong length");
    return v;
  };

  sc.stage = static_cast<Stage>(stage);
  if (sc.stage == Stage::Adhered) {
    AdheredSet& g = sc.adhered;
    g.binding = std::move(bindings);
    g.log_scale = unflatten<Vec2>(f64("g.log_scale"), ng, "g.log_scale");
    g.beta = scalars("g.beta");
    g.opacity_logit = scalars("g.opacity");
    g.color_logit = unflatten<Vec3>(f64("g.color"), ng, "g.color");
  } else {
    DetachedSet& g = sc.detached;
    g.binding = std::move(bindings);
    g.center = unflatten<Vec3>(f64("g.center"), ng, "g.center");
    g.log_scale = unflatten<Vec3>(f64("g.log_scale"), ng, "g.log_scale");
    g.rotation = unflatten<Vec4>(f64("g.rotation"), ng, "g.rotation");
    g.opacity_logit = scalars("g.opacity");
    g.color_logit = unflatten<Vec3>(f64("g.color"), ng, "g.color");
  }
  for (auto& [name, s] : sec) {
    if (name.rfind("mesh.", 0) == 0 || name.rfind("g.", 0) == 0) continue;
    if (s.type != 0) throw Error("checkpoint extra section " + name + " is not f64");
    ckpt.extra[name] = std::move(s.f64);
  }
  return ckpt;
}

}  // namespace meshsplat
