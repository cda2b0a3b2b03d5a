// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dcp/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace dcp {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename T>
  void pod(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    written_ += sizeof(T);
  }
  void bytes(const void* p, std::size_t n) {
    os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    written_ += n;
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    if (!t.defined()) {
      pod<std::uint8_t>(0);
      return;
    }
    pod<std::uint8_t>(1);
    for (auto e : t.shape().extents) pod<std::int64_t>(e);
    pod<std::uint64_t>(static_cast<std::uint64_t>(t.numel()));
    bytes(t.values().data(), sizeof(double) * static_cast<std::size_t>(t.numel()));
  }
  std::uint64_t written() const { return written_; }

 private:
  std::ostream& os_;
  std::uint64_t written_ = 0;
};

class Reader {
 public:
  Reader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw DataError("truncated checkpoint file: " + path_);
    read_ += sizeof(T);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    is_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is_) throw DataError("truncated checkpoint file: " + path_);
    read_ += n;
  }
  std::string str() {
    const auto len = pod<std::uint32_t>();
    if (len > (1u << 20)) throw DataError("corrupt string length in checkpoint: " + path_);
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  Tensor tensor() {
    const auto present = pod<std::uint8_t>();
    if (present == 0) return Tensor();
    Shape shape;
    for (auto& e : shape.extents) e = pod<std::int64_t>();
    const auto count = pod<std::uint64_t>();
    if (static_cast<std::int64_t>(count) != shape.numel()) {
      throw DataError("tensor length field disagrees with its shape in checkpoint: " + path_);
    }
    std::vector<double> vals(count);
    bytes(vals.data(), sizeof(double) * count);
    return Tensor::from(shape, std::move(vals));
  }
  std::uint64_t read_bytes() const { return read_; }
  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

 private:
  std::istream& is_;
  std::string path_;
  std::uint64_t read_ = 0;
};

}  // namespace

void save_checkpoint(const NetworkDef& net, const std::string& path, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint path for writing: " + path);

  Writer w(os);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kVersion);
  w.str(net.arch);
  for (auto e : net.input_shape.extents) w.pod<std::int64_t>(e);
  w.pod<std::int32_t>(net.num_classes);
  w.pod<std::uint64_t>(meta.seed);
  w.str(meta.config_hash);
  w.pod<std::int32_t>(meta.epoch);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(net.nodes.size()));
  for (const auto& n : net.nodes) {
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(n.kind));
    w.pod<std::uint8_t>(n.prunable ? 1 : 0);
    w.pod<std::uint8_t>(n.block_end ? 1 : 0);
    w.pod<std::int32_t>(n.stride);
    w.pod<std::int32_t>(n.padding);
    w.pod<std::int32_t>(n.window);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(n.inputs.size()));
    for (int p : n.inputs) w.pod<std::int32_t>(p);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(n.input_select.size()));
    for (int p : n.input_select) w.pod<std::int32_t>(p);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(n.input_mask.size()));
    if (!n.input_mask.empty()) w.bytes(n.input_mask.data(), n.input_mask.size());
    w.tensor(n.weight);
    w.tensor(n.gamma);
    w.tensor(n.beta);
    w.tensor(n.bn.mean);
    w.tensor(n.bn.var);
    w.tensor(n.theta);
  }
  const std::uint64_t payload = w.written();
  w.pod<std::uint64_t>(payload);
  os.flush();
  if (!os) throw DataError("failed writing checkpoint: " + path);

  nlohmann::json sidecar;
  sidecar["format_version"] = kVersion;
  sidecar["arch"] = net.arch;
  sidecar["num_classes"] = net.num_classes;
  sidecar["seed"] = meta.seed;
  sidecar["config_hash"] = meta.config_hash;
  sidecar["epoch"] = meta.epoch;
  sidecar["params"] = count_params(net);
  std::ofstream js(path + ".json", std::ios::trunc);
  if (js) js << sidecar.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint file: " + path);

  Reader r(is, path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a dcp checkpoint (bad magic): " + path);
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path +
                    " (this build reads version " + std::to_string(kVersion) + ")");
  }

  LoadedCheckpoint out;
  out.net.arch = r.str();
  for (auto& e : out.net.input_shape.extents) e = r.pod<std::int64_t>();
  out.net.num_classes = r.pod<std::int32_t>();
  out.meta.seed = r.pod<std::uint64_t>();
  out.meta.config_hash = r.str();
  out.meta.epoch = r.pod<std::int32_t>();

  const auto node_count = r.pod<std::uint32_t>();
  out.net.nodes.reserve(node_count);
  for (std::uint32_t i = 0; i < node_count; ++i) {
    LayerNode n;
    n.kind = static_cast<LayerKind>(r.pod<std::uint8_t>());
    n.prunable = r.pod<std::uint8_t>() != 0;
    n.block_end = r.pod<std::uint8_t>() != 0;
    n.stride = r.pod<std::int32_t>();
    n.padding = r.pod<std::int32_t>();
    n.window = r.pod<std::int32_t>();
    const auto n_inputs = r.pod<std::uint32_t>();
    n.inputs.clear();
    for (std::uint32_t t = 0; t < n_inputs; ++t) n.inputs.push_back(r.pod<std::int32_t>());
    const auto n_select = r.pod<std::uint32_t>();
    for (std::uint32_t t = 0; t < n_select; ++t) n.input_select.push_back(r.pod<std::int32_t>());
    const auto n_mask = r.pod<std::uint32_t>();
    n.input_mask.assign(n_mask, 0);
    if (n_mask > 0) r.bytes(n.input_mask.data(), n_mask);
    n.weight = r.tensor();
    n.gamma = r.tensor();
    n.beta = r.tensor();
    n.bn.mean = r.tensor();
    n.bn.var = r.tensor();
    n.theta = r.tensor();
    out.net.nodes.push_back(std::move(n));
  }

  const std::uint64_t payload = r.read_bytes();
  const auto footer = r.pod<std::uint64_t>();
  if (footer != payload) {
    throw DataError("checkpoint footer length mismatch in " + path + ": header sections cover " +
                    std::to_string(payload) + " bytes, footer says " + std::to_string(footer));
  }
  if (!r.at_eof()) throw DataError("trailing bytes after checkpoint footer: " + path);

  out.net.validate();
  return out;
}

}  // namespace dcp
