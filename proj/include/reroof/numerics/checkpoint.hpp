#pragma once

// Checkpoint file layout (format version 1), one file per model:
//
//   reroof-checkpoint
//   version 1
//   model_kind <kind>
//   meta <key> <value>                    (zero or more)
//   adam_step <n>
//   entries <count>
//   tensor <name> <role> <rank> <d0> .. <dk> offset <bytes> length <bytes>
//   ...
//   blob <total bytes>
//   <total bytes of little-endian f32, concatenated in entry order>
//
// The manifest is ASCII, one record per line, fields separated by single
// spaces. <role> is `param`, `adam_m` or `adam_v`; moment entries follow
// all param entries and are present only when optimizer state was saved.
// Offsets are relative to the first blob byte and must be contiguous.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "reroof/numerics/params.hpp"

namespace reroof::nn {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string model_kind;
  std::map<std::string, std::string> meta;
  ParamStore store;
};

namespace detail {

inline void append_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw CheckpointError(std::string("checkpoint ") + what + " must be a non-empty token: '" +
                          s + "'");
  }
}

}  // namespace detail

/// Serialises a store. Returns the exact bytes written.
inline std::string serialize_checkpoint(const ParamStore& store, const std::string& model_kind,
                                        const std::map<std::string, std::string>& meta = {},
                                        bool with_optimizer_state = true) {
  detail::check_token(model_kind, "model_kind");
  struct Item {
    const std::string* name;
    const char* role;
    const Tensor* tensor;
  };
  std::vector<Item> items;
  for (const auto& e : store.entries()) items.push_back({&e.name, "param", &e.var.value()});
  if (with_optimizer_state) {
    for (const auto& e : store.entries()) items.push_back({&e.name, "adam_m", &e.first_moment});
    for (const auto& e : store.entries()) items.push_back({&e.name, "adam_v", &e.second_moment});
  }

  std::ostringstream head;
  head << "reroof-checkpoint\n";
  head << "version " << kCheckpointVersion << "\n";
  head << "model_kind " << model_kind << "\n";
  for (const auto& [k, v] : meta) {
    detail::check_token(k, "meta key");
    detail::check_token(v, "meta value");
    head << "meta " << k << ' ' << v << "\n";
  }
  head << "adam_step " << store.step() << "\n";
  head << "entries " << items.size() << "\n";
  std::size_t offset = 0;
  for (const auto& it : items) {
    const std::size_t len = it.tensor->size() * 4;
    head << "tensor " << *it.name << ' ' << it.role << ' ' << it.tensor->rank();
    for (auto d : it.tensor->shape()) head << ' ' << d;
    head << " offset " << offset << " length " << len << "\n";
    offset += len;
  }
  head << "blob " << offset << "\n";

  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& it : items)
    for (float v : it.tensor->values()) detail::append_f32_le(out, v);
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError("checkpoint manifest is truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto expect = [](std::istringstream& is, const char* key) {
    std::string k;
    is >> k;
    if (k != key) {
      throw CheckpointError(std::string("checkpoint manifest: expected '") + key +
                            "', found '" + k + "'");
    }
  };

  if (next_line() != "reroof-checkpoint") throw CheckpointError("not a reroof checkpoint");
  {
    std::istringstream is(next_line());
    expect(is, "version");
    int version = -1;
    is >> version;
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) +
                            ", reader supports " + std::to_string(kCheckpointVersion));
    }
  }
  Checkpoint ck;
  {
    std::istringstream is(next_line());
    expect(is, "model_kind");
    is >> ck.model_kind;
  }
  std::string line = next_line();
  while (line.rfind("meta ", 0) == 0) {
    std::istringstream is(line);
    std::string tag, k, v;
    is >> tag >> k >> v;
    ck.meta[k] = v;
    line = next_line();
  }
  std::uint64_t step = 0;
  {
    std::istringstream is(line);
    expect(is, "adam_step");
    if (!(is >> step)) throw CheckpointError("checkpoint manifest: bad adam_step");
  }
  std::size_t count = 0;
  {
    std::istringstream is(next_line());
    expect(is, "entries");
    if (!(is >> count)) throw CheckpointError("checkpoint manifest: bad entry count");
  }

  struct Record {
    std::string name, role;
    Shape shape;
    std::size_t offset, length;
  };
  std::vector<Record> records;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream is(next_line());
    Record r;
    std::size_t rank = 0;
    expect(is, "tensor");
    is >> r.name >> r.role >> rank;
    r.shape.resize(rank);
    for (auto& d : r.shape) is >> d;
    expect(is, "offset");
    is >> r.offset;
    expect(is, "length");
    if (!(is >> r.length)) throw CheckpointError("checkpoint manifest: malformed tensor record");
    for (auto d : r.shape)
      if (d == 0) throw CheckpointError("checkpoint manifest: zero dimension in '" + r.name + "'");
    if (r.length != shape_numel(r.shape) * 4) {
      throw CheckpointError("checkpoint manifest/blob disagreement: '" + r.name + "' declares " +
                            std::to_string(r.length) + " bytes for shape " +
                            shape_string(r.shape));
    }
    if (r.offset != expected_offset) {
      throw CheckpointError("checkpoint manifest: non-contiguous offset for '" + r.name + "'");
    }
    expected_offset += r.length;
    records.push_back(std::move(r));
  }
  std::size_t blob_len = 0;
  {
    std::istringstream is(next_line());
    expect(is, "blob");
    if (!(is >> blob_len)) throw CheckpointError("checkpoint manifest: bad blob length");
  }
  if (blob_len != expected_offset) {
    throw CheckpointError("checkpoint manifest/blob disagreement: entries cover " +
                          std::to_string(expected_offset) + " bytes, blob declares " +
                          std::to_string(blob_len));
  }
  const std::size_t available = bytes.size() - pos;
  if (available < blob_len) {
    throw CheckpointError("checkpoint blob truncated: expected " + std::to_string(blob_len) +
                          " bytes, found " + std::to_string(available));
  }
  if (available > blob_len) {
    throw CheckpointError("checkpoint blob has " + std::to_string(available - blob_len) +
                          " trailing bytes");
  }

  const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  auto decode = [&](const Record& r) {
    std::vector<float> values(r.length / 4);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = detail::read_f32_le(blob + r.offset + 4 * i);
    return Tensor(r.shape, std::move(values));
  };
  for (const auto& r : records) {
    if (r.role == "param") ck.store.add(r.name, decode(r));
  }
  for (const auto& r : records) {
    if (r.role == "param") continue;
    if (r.role != "adam_m" && r.role != "adam_v") {
      throw CheckpointError("checkpoint manifest: unknown role '" + r.role + "'");
    }
    if (!ck.store.contains(r.name)) {
      throw CheckpointError("checkpoint manifest: optimizer state for unknown '" + r.name + "'");
    }
    auto& e = ck.store.entry(r.name);
    Tensor t = decode(r);
    if (t.shape() != e.var.shape()) {
      throw CheckpointError("checkpoint manifest: moment shape mismatch for '" + r.name + "'");
    }
    (r.role == "adam_m" ? e.first_moment : e.second_moment) = std::move(t);
  }
  ck.store.set_step(step);
  return ck;
}

inline void save_params(const ParamStore& store, const std::filesystem::path& path,
                        const std::string& model_kind,
                        const std::map<std::string, std::string>& meta = {},
                        bool with_optimizer_state = true) {
  const std::string bytes = serialize_checkpoint(store, model_kind, meta, with_optimizer_state);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace reroof::nn
