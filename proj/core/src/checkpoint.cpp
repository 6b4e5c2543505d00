#include "tqnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <json.hpp>

#include "tqnet/training.hpp"

namespace tqnet {
namespace {

constexpr char kMagic[4] = {'T', 'Q', 'N', 'C'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void scalar(U v) {
    v = to_little(v);
    bytes(&v, sizeof(U));
  }
  void string(const std::string& s) {
    scalar(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  void bytes(void* out, std::size_t n) {
    if (n > end_ - pos_) {
      throw CheckpointError("checkpoint '" + path_ + "' is truncated (integrity check failed)");
    }
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U scalar() {
    U v;
    bytes(&v, sizeof(U));
    return to_little(v);
  }
  std::string string() {
    const auto n = scalar<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

struct StoredParam {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

struct Decoded {
  CheckpointHeader header;
  std::vector<StoredParam> params;
};

Decoded decode(const std::filesystem::path& path, bool with_values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string p = path.string();
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + p + "' is not a tqnet checkpoint (bad magic)");
  }
  if (buf.size() < sizeof(kMagic) + 4 + 8) {
    throw CheckpointError("checkpoint '" + p + "' is truncated (integrity check failed)");
  }
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, 8);
  stored = to_little(stored);
  if (fnv1a64({buf.data(), body}) != stored) {
    throw CheckpointError("checkpoint '" + p + "' failed its checksum (truncated or corrupt)");
  }

  Reader r(buf, body, p);
  char magic[4];
  r.bytes(magic, 4);
  Decoded d;
  d.header.version = r.scalar<std::uint32_t>();
  if (d.header.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint '" + p + "' has version " + std::to_string(d.header.version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  parse_model_config_json(r.string(), d.header.config, d.header.variant);
  d.header.parameter_count = r.scalar<std::uint32_t>();
  if (!with_values) return d;
  for (std::size_t k = 0; k < d.header.parameter_count; ++k) {
    StoredParam sp;
    sp.name = r.string();
    sp.rows = r.scalar<std::uint32_t>();
    sp.cols = r.scalar<std::uint32_t>();
    sp.values.resize(static_cast<std::size_t>(sp.rows) * sp.cols);
    for (float& v : sp.values) v = r.scalar<float>();
    d.params.push_back(std::move(sp));
  }
  if (!r.done()) throw CheckpointError("checkpoint '" + p + "' has trailing bytes");
  return d;
}

}  // namespace

std::string model_config_json(const ModelConfig& c, const VariantSpec& variant) {
  nlohmann::ordered_json j;
  j["channels"] = c.channels;
  j["lookback"] = c.lookback;
  j["horizon"] = c.horizon;
  j["period"] = c.period;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["heads"] = c.heads;
  j["attn_dropout"] = c.attn_dropout;
  j["out_dropout"] = c.out_dropout;
  j["use_instance_norm"] = c.use_instance_norm;
  j["norm_eps"] = c.norm_eps;
  j["scale_by_head_dim"] = c.scale_by_head_dim;
  j["seed"] = c.seed;
  j["variant"] = variant.name();
  return j.dump();
}

void parse_model_config_json(const std::string& text, ModelConfig& c, VariantSpec& variant) {
  try {
    const auto j = nlohmann::json::parse(text);
    c.channels = j.at("channels").get<std::size_t>();
    c.lookback = j.at("lookback").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.period = j.at("period").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.attn_dropout = j.at("attn_dropout").get<double>();
    c.out_dropout = j.at("out_dropout").get<double>();
    c.use_instance_norm = j.at("use_instance_norm").get<bool>();
    c.norm_eps = j.at("norm_eps").get<double>();
    c.scale_by_head_dim = j.at("scale_by_head_dim").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    variant = VariantSpec::from_name(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is malformed: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const TQNet<T>& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.string(model_config_json(model.config(), model.variant()));
  const auto params = model.parameters();
  w.scalar(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.string(p.name);
    w.scalar(static_cast<std::uint32_t>(p.tensor.rows()));
    w.scalar(static_cast<std::uint32_t>(p.tensor.cols()));
    for (T v : p.tensor.values()) w.scalar(static_cast<float>(v));
  }
  auto& buf = w.buffer();
  w.scalar(fnv1a64({buf.data(), buf.size()}));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

template <typename T>
void load_parameters(TQNet<T>& model, const std::filesystem::path& path) {
  const Decoded d = decode(path, true);
  auto params = model.parameters();
  if (d.params.size() != params.size()) {
    throw CheckpointError("checkpoint '" + path.string() + "' holds " +
                          std::to_string(d.params.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const StoredParam& sp = d.params[k];
    DiffTensor<T>& t = params[k].tensor;
    if (sp.name != params[k].name) {
      throw CheckpointError("parameter " + params[k].name + ": checkpoint has '" + sp.name +
                            "' in its place");
    }
    if (sp.rows != t.rows() || sp.cols != t.cols()) {
      throw CheckpointError("parameter " + sp.name + ": shape mismatch, model expects " +
                            t.shape_string() + ", checkpoint has [" + std::to_string(sp.rows) +
                            "x" + std::to_string(sp.cols) + "]");
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(d.params[k].values[i]);
  }
}

template <typename T>
TQNet<T> load_checkpoint(const std::filesystem::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  TQNet<T> model(h.config, h.variant);
  load_parameters(model, path);
  return model;
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  return decode(path, false).header;
}

template void save_checkpoint(const TQNet<float>&, const std::filesystem::path&);
template void save_checkpoint(const TQNet<double>&, const std::filesystem::path&);
template void load_parameters(TQNet<float>&, const std::filesystem::path&);
template void load_parameters(TQNet<double>&, const std::filesystem::path&);
template TQNet<float> load_checkpoint(const std::filesystem::path&);
template TQNet<double> load_checkpoint(const std::filesystem::path&);

}  // namespace tqnet
