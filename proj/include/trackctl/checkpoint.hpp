#pragma once

// Checkpoint container (magic "A4RC"): versioned JSON header, named-tensor
// table, optional optimizer moments, trailing CRC32. Save -> load -> save is
// bitwise idempotent. Layout documented in docs/FORMATS.md.

#include "trackctl/model.hpp"
#include "trackctl/optim.hpp"

#include <fstream>

namespace trackctl {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[5] = "A4RC";

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S>
struct Checkpoint {
  ModelConfig config;
  Parameters<S> params;
  AdamWState<S> opt;
  bool has_optimizer = false;
  json provenance = json::array();  // one record per completed stage

  explicit Checkpoint(const ModelConfig& cfg) : config(cfg), params(cfg) {}
  explicit Checkpoint(Parameters<S> p) : config(p.cfg), params(std::move(p)) {}
};

namespace detail {

template <class S>
void write_tensor(ByteWriter& w, const std::string& name, const Mat<S>& m) {
  w.str(name);
  w.u8(sizeof(S));
  w.u32(std::uint32_t(m.rows()));
  w.u32(std::uint32_t(m.cols()));
  w.raw(m.data(), std::size_t(m.size()) * sizeof(S));
}

template <class S>
void read_tensor(ByteReader& r, const std::string& expect_name, Mat<S>& m) {
  std::string name = r.str();
  if (name != expect_name)
    throw CheckpointError("tensor order mismatch: expected '" + expect_name + "', found '" +
                          name + "'");
  if (r.u8() != sizeof(S)) throw CheckpointError("tensor dtype mismatch for '" + name + "'");
  std::uint32_t rows = r.u32(), cols = r.u32();
  if (int(rows) != m.rows() || int(cols) != m.cols())
    throw CheckpointError("tensor shape mismatch for '" + name + "'");
  r.raw(m.data(), std::size_t(m.size()) * sizeof(S));
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const Checkpoint<S>& ck) {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  json header{{"config", ck.config.to_json()},
              {"provenance", ck.provenance},
              {"has_optimizer", ck.has_optimizer},
              {"opt_step", ck.opt.step},
              {"dtype", int(sizeof(S))}};
  w.str(header.dump());
  std::uint32_t count = 0;
  ck.params.for_each([&](const std::string&, const Mat<S>&, bool) { ++count; });
  w.u32(count);
  ck.params.for_each(
      [&](const std::string& n, const Mat<S>& m, bool) { detail::write_tensor(w, n, m); });
  if (ck.has_optimizer) {
    std::size_t i = 0;
    ck.params.for_each([&](const std::string& n, const Mat<S>&, bool) {
      detail::write_tensor(w, n + ".m", ck.opt.m[i]);
      detail::write_tensor(w, n + ".v", ck.opt.v[i]);
      ++i;
    });
  }
  std::uint32_t crc = crc32_bytes(w.bytes().data(), w.bytes().size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), std::streamsize(w.bytes().size()));
  if (!out) throw CheckpointError("write failure: " + path);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open: " + path);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  if (bytes.size() < 12) throw CheckpointError("truncated checkpoint: " + path);
  std::uint32_t crc_stored;
  std::memcpy(&crc_stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_bytes(bytes.data(), bytes.size() - 4) != crc_stored)
    throw CheckpointError("checksum failure: " + path);

  ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("bad magic (not a checkpoint): " + path);
  if (r.u32() != kCheckpointVersion) throw CheckpointError("checkpoint version mismatch");
  json header = json::parse(r.str());
  if (header.at("dtype").get<int>() != int(sizeof(S)))
    throw CheckpointError("checkpoint scalar width mismatch");

  Checkpoint<S> ck(ModelConfig::from_json(header.at("config")));
  ck.provenance = header.at("provenance");
  ck.has_optimizer = header.at("has_optimizer").get<bool>();
  ck.opt.step = header.at("opt_step").get<std::int64_t>();

  std::uint32_t count = r.u32();
  std::uint32_t expect = 0;
  ck.params.for_each([&](const std::string&, const Mat<S>&, bool) { ++expect; });
  if (count != expect) throw CheckpointError("tensor count mismatch");
  ck.params.for_each(
      [&](const std::string& n, Mat<S>& m, bool) { detail::read_tensor(r, n, m); });
  if (ck.has_optimizer) {
    ck.opt.init(ck.params);
    std::size_t i = 0;
    ck.params.for_each([&](const std::string& n, Mat<S>&, bool) {
      detail::read_tensor(r, n + ".m", ck.opt.m[i]);
      detail::read_tensor(r, n + ".v", ck.opt.v[i]);
      ++i;
    });
  }
  return ck;
}

}  // namespace trackctl
