#include "lesact/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace lesact::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'A', 'C', 'K', 'P', 'T', '0', '1'};

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

template <typename Scalar>
constexpr const char* scalar_name() {
  return sizeof(Scalar) == 4 ? "float32" : "float64";
}

class Writer {
 public:
  explicit Writer(const fs::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw FormatError("cannot write checkpoint '" + p.string() + "'");
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename Scalar>
  void matrix(const Matrix<Scalar>& m) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()));
  }
  void finish(const fs::path& p) {
    out_.flush();
    if (!out_) throw FormatError("failed writing checkpoint '" + p.string() + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& p) : path_(p), in_(p, std::ios::binary) {
    if (!in_) throw FormatError("cannot open checkpoint '" + p.string() + "'");
  }
  template <typename T>
  T pod(const char* what) {
    T v{};
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError("checkpoint '" + path_.string() + "' truncated while reading " + what);
  }
  template <typename Scalar>
  Matrix<Scalar> matrix(Index rows, Index cols, const std::string& name) {
    const auto r = pod<std::uint64_t>("rows"), c = pod<std::uint64_t>("cols");
    if (static_cast<Index>(r) != rows || static_cast<Index>(c) != cols)
      throw FormatError("checkpoint '" + path_.string() + "': shape mismatch for " + name);
    Matrix<Scalar> m(rows, cols);
    bytes(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), name.c_str());
    return m;
  }

 private:
  fs::path path_;
  std::ifstream in_;
};

}  // namespace

std::vector<std::string> config_differences(const NetworkConfig& a, const NetworkConfig& b) {
  const json ja = a, jb = b;
  std::vector<std::string> out;
  for (const auto& [key, value] : ja.items())
    if (!jb.contains(key) || jb.at(key) != value) out.push_back(key);
  for (const auto& [key, value] : jb.items())
    if (!ja.contains(key)) out.push_back(key);
  return out;
}

template <typename Scalar>
void save_checkpoint(const fs::path& path, const Network<Scalar>& net, int epoch, const AdamState<Scalar>* optimizer,
                     const json& extra) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    Writer w(path);
    w.bytes(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(sizeof(Scalar));
    std::vector<const Parameter<Scalar>*> params;
    net.visit([&](const Parameter<Scalar>& p) { params.push_back(&p); });
    w.pod<std::uint64_t>(params.size());
    for (const auto* p : params) {
      w.pod<std::uint32_t>(static_cast<std::uint32_t>(p->name.size()));
      w.bytes(p->name.data(), p->name.size());
      w.matrix(p->value);
    }
    w.pod<std::uint8_t>(optimizer ? 1 : 0);
    if (optimizer) {
      if (optimizer->m.size() != params.size()) throw InvalidArgument("checkpoint: optimizer state size mismatch");
      w.pod<std::int64_t>(optimizer->step);
      for (std::size_t i = 0; i < params.size(); ++i) {
        w.matrix(optimizer->m[i]);
        w.matrix(optimizer->v[i]);
      }
    }
    w.finish(path);
  }
  const json meta = {{"format", "lesact-checkpoint"},
                     {"version", 1},
                     {"scalar", scalar_name<Scalar>()},
                     {"epoch", epoch},
                     {"network", net.config()},
                     {"extra", extra}};
  std::ofstream side(sidecar(path));
  if (!side) throw FormatError("cannot write checkpoint sidecar '" + sidecar(path).string() + "'");
  side << meta.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  const fs::path side = sidecar(path);
  std::ifstream in(side);
  if (!in) throw FormatError("cannot open checkpoint sidecar '" + side.string() + "'");
  try {
    json j;
    in >> j;
    CheckpointInfo info;
    info.config = j.at("network").get<NetworkConfig>();
    info.epoch = j.at("epoch").get<int>();
    info.scalar = j.at("scalar").get<std::string>();
    info.extra = j.value("extra", json::object());
    return info;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint sidecar '" + side.string() + "': " + e.what());
  }
}

template <typename Scalar>
Network<Scalar> load_checkpoint(const fs::path& path, CheckpointInfo* info_out, AdamState<Scalar>* optimizer,
                                const std::optional<NetworkConfig>& expected) {
  CheckpointInfo info = read_checkpoint_info(path);
  if (expected) {
    const auto diff = config_differences(*expected, info.config);
    if (!diff.empty()) {
      std::string fields;
      for (const auto& d : diff) fields += (fields.empty() ? "" : ", ") + d;
      throw ConfigError("checkpoint '" + path.string() + "' was trained with a different network config (fields: " +
                        fields + ")");
    }
  }
  Network<Scalar> net(info.config);
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("'" + path.string() + "' is not a checkpoint");
  const auto width = r.pod<std::uint32_t>("scalar width");
  if (width != sizeof(Scalar))
    throw FormatError("checkpoint '" + path.string() + "' stores " + std::to_string(width * 8) +
                      "-bit parameters, requested " + std::to_string(sizeof(Scalar) * 8) + "-bit");
  const auto params = net.parameters();
  const auto count = r.pod<std::uint64_t>("parameter count");
  if (count != params.size())
    throw FormatError("checkpoint '" + path.string() + "' holds " + std::to_string(count) + " tensors, network expects " +
                      std::to_string(params.size()));
  for (auto* p : params) {
    const auto len = r.pod<std::uint32_t>("name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "name");
    if (name != p->name)
      throw FormatError("checkpoint '" + path.string() + "': expected tensor " + p->name + ", found " + name);
    p->value = r.matrix<Scalar>(p->value.rows(), p->value.cols(), name);
  }
  const auto has_optimizer = r.pod<std::uint8_t>("optimizer flag");
  if (optimizer) {
    if (!has_optimizer) throw FormatError("checkpoint '" + path.string() + "' has no optimizer state");
    optimizer->step = r.pod<std::int64_t>("optimizer step");
    optimizer->m.clear();
    optimizer->v.clear();
    for (auto* p : params) {
      optimizer->m.push_back(r.matrix<Scalar>(p->value.rows(), p->value.cols(), p->name + " (m)"));
      optimizer->v.push_back(r.matrix<Scalar>(p->value.rows(), p->value.cols(), p->name + " (v)"));
    }
  }
  if (info_out) *info_out = std::move(info);
  return net;
}

template void save_checkpoint<float>(const fs::path&, const Network<float>&, int, const AdamState<float>*, const json&);
template void save_checkpoint<double>(const fs::path&, const Network<double>&, int, const AdamState<double>*,
                                      const json&);
template Network<float> load_checkpoint<float>(const fs::path&, CheckpointInfo*, AdamState<float>*,
                                               const std::optional<NetworkConfig>&);
template Network<double> load_checkpoint<double>(const fs::path&, CheckpointInfo*, AdamState<double>*,
                                                 const std::optional<NetworkConfig>&);

}  // namespace lesact::nn
