#pragma once

// Dataset utilities: fixed-bounds normalization, context-window extraction,
// train/val splits, and the chunked binary episode container (magic "A4RD").
// The byte layout is documented in docs/FORMATS.md.

#include "trackctl/episode.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace trackctl {

using json = nlohmann::json;

constexpr std::uint32_t kDatasetVersion = 1;
constexpr char kDatasetMagic[5] = "A4RD";

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed normalization constants shared by every stage so that point-track
// and state representations stay aligned across transfers.
struct NormalizationSpec {
  Vector3d pos_lo = {-0.36, -0.36, -0.02};  // effector position bounds, world
  Vector3d pos_hi = {0.36, 0.36, 0.55};
  double point_lateral = 4.0;   // |x|,|y| bound for camera-frame points
  double point_z_max = 4.0;     // z bound for camera-frame points
  double max_depth = 2.5;       // depth raster range / far plane

  bool operator==(const NormalizationSpec& o) const {
    return pos_lo == o.pos_lo && pos_hi == o.pos_hi && point_lateral == o.point_lateral &&
           point_z_max == o.point_z_max && max_depth == o.max_depth;
  }

  json to_json() const {
    return json{{"pos_lo", {pos_lo.x(), pos_lo.y(), pos_lo.z()}},
                {"pos_hi", {pos_hi.x(), pos_hi.y(), pos_hi.z()}},
                {"point_lateral", point_lateral},
                {"point_z_max", point_z_max},
                {"max_depth", max_depth}};
  }
  static NormalizationSpec from_json(const json& j) {
    NormalizationSpec n;
    for (int i = 0; i < 3; ++i) {
      n.pos_lo[i] = j.at("pos_lo")[std::size_t(i)].get<double>();
      n.pos_hi[i] = j.at("pos_hi")[std::size_t(i)].get<double>();
    }
    n.point_lateral = j.at("point_lateral").get<double>();
    n.point_z_max = j.at("point_z_max").get<double>();
    n.max_depth = j.at("max_depth").get<double>();
    return n;
  }
};

// ---- normalization ----------------------------------------------------------

namespace norm {

inline double to_unit(double v, double lo, double hi) { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
inline double from_unit(double v, double lo, double hi) { return lo + (v + 1.0) * (hi - lo) / 2.0; }

}  // namespace norm

inline Eigen::MatrixX3d normalize_points(const Eigen::MatrixX3d& p, const NormalizationSpec& n) {
  Eigen::MatrixX3d out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out(i, 0) = norm::to_unit(p(i, 0), -n.point_lateral, n.point_lateral);
    out(i, 1) = norm::to_unit(p(i, 1), -n.point_lateral, n.point_lateral);
    out(i, 2) = norm::to_unit(p(i, 2), 0.0, n.point_z_max);
  }
  return out;
}

inline Eigen::MatrixX3d denormalize_points(const Eigen::MatrixX3d& p,
                                           const NormalizationSpec& n) {
  Eigen::MatrixX3d out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out(i, 0) = norm::from_unit(p(i, 0), -n.point_lateral, n.point_lateral);
    out(i, 1) = norm::from_unit(p(i, 1), -n.point_lateral, n.point_lateral);
    out(i, 2) = norm::from_unit(p(i, 2), 0.0, n.point_z_max);
  }
  return out;
}

inline Eigen::Matrix<double, 7, 1> normalize_state(const ProprioState& s,
                                                   const NormalizationSpec& n) {
  Eigen::Matrix<double, 7, 1> v;
  for (int i = 0; i < 3; ++i) v[i] = norm::to_unit(s.position[i], n.pos_lo[i], n.pos_hi[i]);
  for (int i = 0; i < 3; ++i) v[3 + i] = s.euler[i] / M_PI;
  v[6] = s.gripper;
  return v;
}

inline ProprioState denormalize_state(const Eigen::Matrix<double, 7, 1>& v,
                                      const NormalizationSpec& n) {
  ProprioState s;
  for (int i = 0; i < 3; ++i) s.position[i] = norm::from_unit(v[i], n.pos_lo[i], n.pos_hi[i]);
  for (int i = 0; i < 3; ++i) s.euler[i] = v[3 + i] * M_PI;
  s.gripper = v[6];
  return s;
}

// Build-time bounds check; slack is a fraction of the normalized range.
inline std::optional<std::string> bounds_violation(const Episode& ep,
                                                   const NormalizationSpec& n,
                                                   double slack = 0.1) {
  const double lim = 1.0 + slack;
  for (std::size_t t = 0; t < ep.frames.size(); ++t) {
    const Frame& f = ep.frames[t];
    Eigen::MatrixX3d pn = normalize_points(f.points.coords, n);
    if (pn.cwiseAbs().maxCoeff() > lim)
      return "frame " + std::to_string(t) + ": point coordinate outside bounds (+slack)";
    Eigen::Matrix<double, 7, 1> sv = normalize_state(f.state, n);
    for (int i = 0; i < 6; ++i)
      if (std::abs(sv[i]) > lim)
        return "frame " + std::to_string(t) + ": state coordinate outside bounds (+slack)";
  }
  return std::nullopt;
}

// ---- manifest and container ---------------------------------------------

struct EpisodeEntry {
  std::uint64_t offset = 0;  // payload start, from file begin
  std::uint64_t length = 0;  // payload bytes (without trailing crc)
};

struct DatasetManifest {
  std::uint32_t version = kDatasetVersion;
  int episode_count = 0;
  int g = 16;
  int views = 1;
  double fps = 10.0;
  Regime regime = Regime::robot;
  NormalizationSpec norm;
  std::vector<EpisodeEntry> episodes;
  std::vector<std::string> vocabulary;  // word list; index = token id; [0] = <unk>

  json to_json() const {
    json j;
    j["version"] = version;
    j["episode_count"] = episode_count;
    j["g"] = g;
    j["views"] = views;
    j["fps"] = fps;
    j["regime"] = to_string(regime);
    j["normalization"] = norm.to_json();
    json eps = json::array();
    for (const auto& e : episodes) eps.push_back({{"offset", e.offset}, {"length", e.length}});
    j["episodes"] = eps;
    j["vocabulary"] = vocabulary;
    return j;
  }
  static DatasetManifest from_json(const json& j) {
    DatasetManifest m;
    m.version = j.at("version").get<std::uint32_t>();
    m.episode_count = j.at("episode_count").get<int>();
    m.g = j.at("g").get<int>();
    m.views = j.at("views").get<int>();
    m.fps = j.at("fps").get<double>();
    m.regime = regime_from_string(j.at("regime").get<std::string>());
    m.norm = NormalizationSpec::from_json(j.at("normalization"));
    for (const auto& e : j.at("episodes"))
      m.episodes.push_back({e.at("offset").get<std::uint64_t>(), e.at("length").get<std::uint64_t>()});
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    return m;
  }
};

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::istringstream iss(s);
  std::string w;
  while (iss >> w) words.push_back(w);
  return words;
}

inline std::vector<std::string> build_vocabulary(const std::vector<Episode>& eps) {
  std::set<std::string> words;
  for (const auto& ep : eps)
    for (const auto& w : split_words(ep.instruction)) words.insert(w);
  std::vector<std::string> vocab = {"<unk>"};
  vocab.insert(vocab.end(), words.begin(), words.end());
  return vocab;
}

inline std::vector<int> tokenize(const std::string& instruction,
                                 const std::vector<std::string>& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(instruction)) {
    int id = 0;  // <unk>
    for (std::size_t i = 1; i < vocab.size(); ++i)
      if (vocab[i] == w) {
        id = int(i);
        break;
      }
    ids.push_back(id);
  }
  return ids;
}

namespace detail {

inline void write_transform(ByteWriter& w, const kin::RigidTransform& g) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.f64(g.R(r, c));
  for (int i = 0; i < 3; ++i) w.f64(g.t[i]);
}
inline kin::RigidTransform read_transform(ByteReader& r) {
  kin::RigidTransform g;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) g.R(i, c) = r.f64();
  for (int i = 0; i < 3; ++i) g.t[i] = r.f64();
  return g;
}

inline std::vector<std::uint8_t> encode_episode(const Episode& ep) {
  ByteWriter w;
  w.str(ep.instruction);
  w.u8(std::uint8_t(ep.regime));
  w.u8(std::uint8_t(ep.task_kind));
  w.u64(ep.seed);
  w.f64(ep.fps);
  w.u32(std::uint32_t(ep.length()));
  w.u32(std::uint32_t(ep.grid_size));
  w.u32(std::uint32_t(ep.views));
  w.u32(std::uint32_t(ep.raster_width));
  w.u32(std::uint32_t(ep.raster_height));
  w.u32(std::uint32_t(ep.n_objects));
  w.u32(std::uint32_t(ep.n_links));
  for (const auto& at : ep.attachments) {
    w.u8(std::uint8_t(at.kind));
    w.i32(at.index);
    w.i32(at.body_id);
    for (int i = 0; i < 3; ++i) w.f64(at.body_point[i]);
  }
  w.u32(std::uint32_t(ep.grasps.size()));
  for (const auto& gi : ep.grasps) {
    w.i32(gi.object_index);
    w.i32(gi.start_frame);
    w.i32(gi.end_frame);
    write_transform(w, gi.rel);
  }
  for (const auto& f : ep.frames) {
    w.i32(f.time_index);
    for (const auto& cp : f.camera_pose) write_transform(w, cp);
    for (const auto& bp : f.body_poses) write_transform(w, bp);
    // depth stays f32 (sensor-style raster); points/states are f64 so the
    // stored tracks satisfy the kinematic-oracle identity losslessly
    for (const auto& d : f.depth) w.raw(d.data(), d.size() * sizeof(float));
    for (Eigen::Index i = 0; i < f.points.coords.rows(); ++i)
      for (int c = 0; c < 3; ++c) w.f64(f.points.coords(i, c));
    Eigen::Matrix<double, 7, 1> sv = f.state.vector();
    for (int i = 0; i < 7; ++i) w.f64(sv[i]);
  }
  return w.take();
}

inline Episode decode_episode(ByteReader& r) {
  Episode ep;
  ep.instruction = r.str();
  ep.regime = Regime(r.u8());
  ep.task_kind = TaskKind(r.u8());
  ep.seed = r.u64();
  ep.fps = r.f64();
  std::uint32_t T = r.u32();
  ep.grid_size = int(r.u32());
  ep.views = int(r.u32());
  ep.raster_width = int(r.u32());
  ep.raster_height = int(r.u32());
  ep.n_objects = int(r.u32());
  ep.n_links = int(r.u32());
  ep.attachments.resize(std::size_t(ep.n_points()));
  for (auto& at : ep.attachments) {
    at.kind = AttachKind(r.u8());
    at.index = r.i32();
    at.body_id = r.i32();
    for (int i = 0; i < 3; ++i) at.body_point[i] = r.f64();
  }
  std::uint32_t n_grasps = r.u32();
  for (std::uint32_t i = 0; i < n_grasps; ++i) {
    GraspInterval gi;
    gi.object_index = r.i32();
    gi.start_frame = r.i32();
    gi.end_frame = r.i32();
    gi.rel = read_transform(r);
    ep.grasps.push_back(gi);
  }
  const std::size_t raster = std::size_t(ep.raster_width) * ep.raster_height;
  for (std::uint32_t t = 0; t < T; ++t) {
    Frame f;
    f.time_index = r.i32();
    for (int v = 0; v < ep.views; ++v) f.camera_pose.push_back(read_transform(r));
    for (int b = 0; b < ep.n_bodies(); ++b) f.body_poses.push_back(read_transform(r));
    for (int v = 0; v < ep.views; ++v) {
      std::vector<float> d(raster);
      r.raw(d.data(), raster * sizeof(float));
      f.depth.push_back(std::move(d));
    }
    f.points.coords.resize(ep.n_points(), 3);
    for (int i = 0; i < ep.n_points(); ++i)
      for (int c = 0; c < 3; ++c) f.points.coords(i, c) = r.f64();
    Eigen::Matrix<double, 7, 1> sv;
    for (int i = 0; i < 7; ++i) sv[i] = r.f64();
    f.state = ProprioState::from_vector(sv);
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

}  // namespace detail

// Layout: "A4RD" | u32 version | u64 manifest_len | manifest JSON (UTF-8) |
// per episode: u64 payload_len | payload | u32 crc32(payload).
inline void write_dataset(const std::string& path, const std::vector<Episode>& episodes,
                          const NormalizationSpec& norm) {
  if (episodes.empty()) throw DatasetError("refusing to write an empty dataset");
  DatasetManifest m;
  m.episode_count = int(episodes.size());
  m.g = episodes[0].grid_size;
  m.views = episodes[0].views;
  m.fps = episodes[0].fps;
  m.regime = episodes[0].regime;
  m.norm = norm;
  m.vocabulary = build_vocabulary(episodes);

  std::vector<std::vector<std::uint8_t>> payloads;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Episode& ep = episodes[i];
    if (ep.length() < 2)
      throw DatasetError("episode " + std::to_string(i) + " is shorter than 2 frames");
    if (ep.grid_size != m.g || ep.views != m.views || ep.fps != m.fps || ep.regime != m.regime)
      throw DatasetError("episode " + std::to_string(i) + " disagrees with dataset header");
    if (auto err = bounds_violation(ep, norm))
      throw DatasetError("episode " + std::to_string(i) + ": " + *err);
    payloads.push_back(detail::encode_episode(ep));
  }

  // compute offsets: header + manifest, then length-prefixed payload blocks
  std::string manifest_str;
  std::uint64_t base = 0;
  for (int pass = 0; pass < 2; ++pass) {
    m.episodes.clear();
    std::uint64_t off = base;
    for (const auto& p : payloads) {
      off += 8;  // length prefix
      m.episodes.push_back({off, p.size()});
      off += p.size() + 4;  // payload + crc
    }
    manifest_str = m.to_json().dump();
    std::uint64_t new_base = 4 + 4 + 8 + manifest_str.size();
    if (new_base == base) break;
    base = new_base;
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open for writing: " + path);
  out.write(kDatasetMagic, 4);
  std::uint32_t ver = kDatasetVersion;
  out.write(reinterpret_cast<const char*>(&ver), 4);
  std::uint64_t mlen = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&mlen), 8);
  out.write(manifest_str.data(), std::streamsize(manifest_str.size()));
  for (const auto& p : payloads) {
    std::uint64_t len = p.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(reinterpret_cast<const char*>(p.data()), std::streamsize(p.size()));
    std::uint32_t crc = crc32_bytes(p.data(), p.size());
    out.write(reinterpret_cast<const char*>(&crc), 4);
  }
  if (!out) throw DatasetError("write failure: " + path);
}

inline DatasetManifest read_manifest(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw DatasetError("bad magic (not a dataset file): " + path);
  std::uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kDatasetVersion)
    throw DatasetError("dataset version mismatch: file has " + std::to_string(ver) +
                       ", expected " + std::to_string(kDatasetVersion));
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), std::streamsize(mlen));
  if (!in) throw DatasetError("truncated manifest: " + path);
  DatasetManifest m = DatasetManifest::from_json(json::parse(mstr));
  if (int(m.episodes.size()) != m.episode_count)
    throw DatasetError("manifest episode_count (" + std::to_string(m.episode_count) +
                       ") does not match manifest entry count (" +
                       std::to_string(m.episodes.size()) + ")");
  return m;
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open: " + path);
  return read_manifest(in, path);
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<Episode> episodes;
};

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open: " + path);
  Dataset ds;
  ds.manifest = read_manifest(in, path);
  for (int i = 0; i < ds.manifest.episode_count; ++i) {
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in) throw DatasetError("truncated file at episode " + std::to_string(i));
    if (len != ds.manifest.episodes[std::size_t(i)].length)
      throw DatasetError("payload length mismatch at episode " + std::to_string(i));
    std::vector<std::uint8_t> payload(len);
    in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(len));
    std::uint32_t crc_stored = 0;
    in.read(reinterpret_cast<char*>(&crc_stored), 4);
    if (!in) throw DatasetError("truncated file at episode " + std::to_string(i));
    if (crc32_bytes(payload.data(), payload.size()) != crc_stored)
      throw DatasetError("checksum failure at episode " + std::to_string(i));
    ByteReader r(payload);
    ds.episodes.push_back(detail::decode_episode(r));
  }
  if (int(ds.episodes.size()) != ds.manifest.episode_count)
    throw DatasetError("episode count mismatch after read");
  return ds;
}

// Deterministic shuffle split; disjoint and exhaustive.
inline std::pair<std::vector<int>, std::vector<int>> split_dataset(int episode_count,
                                                                   double val_fraction,
                                                                   std::uint64_t seed) {
  if (val_fraction < 0 || val_fraction > 1)
    throw std::invalid_argument("val_fraction must be in [0,1]");
  std::vector<int> ids(static_cast<std::size_t>(episode_count), 0);
  for (int i = 0; i < episode_count; ++i) ids[std::size_t(i)] = i;
  Rng rng(sub_seed(seed, 0x59117ull));
  rng.shuffle(ids);
  int n_val = int(std::lround(val_fraction * episode_count));
  std::vector<int> val(ids.begin(), ids.begin() + n_val);
  std::vector<int> train(ids.begin() + n_val, ids.end());
  return {train, val};
}

}  // namespace trackctl
