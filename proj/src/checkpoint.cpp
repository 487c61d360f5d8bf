#include "despeckle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "despeckle/error.hpp"

namespace despeckle {
namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

template <typename T, typename Range>
void put_block(std::vector<unsigned char>& out, const Range& values) {
  for (T v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}
  template <typename T, typename Range>
  void read_block(Range&& dst, const std::string& what) {
    const std::size_t need = dst.size() * 4;
    if (pos_ + need > bytes_.size())
      throw LengthError("checkpoint payload truncated while reading " + what);
    for (auto& v : dst) {
      v = static_cast<T>(std::bit_cast<float>(get_u32(&bytes_[pos_])));
      pos_ += 4;
    }
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_;
};

}  // namespace

template <typename T>
std::vector<unsigned char> encode_checkpoint(const Model<T>& model,
                                             const std::vector<AdamState<T>>* adam,
                                             const CheckpointMeta& meta) {
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  nlohmann::json header;
  header["config"] = model.config().to_json();
  header["epoch"] = meta.epoch;
  header["rng"] = {{"seed", meta.rng_seed}, {"epoch", meta.epoch}};
  header["divisor"] = meta.divisor;
  header["looks"] = meta.looks;
  header["training"] = meta.training;
  std::size_t floats = 0;
  header["blocks"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    header["blocks"].push_back({{"name", names[i]}, {"length", params[i].numel()}});
    floats += params[i].numel();
  }
  nlohmann::json bn = nlohmann::json::array();
  for (const auto& s : model.bn_states()) {
    bn.push_back({{"updates", s.updates},
                  {"channels", s.running_mean.size()},
                  {"momentum", static_cast<double>(s.momentum)},
                  {"eps", static_cast<double>(s.eps)}});
    floats += 2 * s.running_mean.size();
  }
  header["bn"] = bn;
  if (adam) {
    if (adam->size() != params.size()) throw StateError("checkpoint: Adam state count mismatch");
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : *adam) {
      a.push_back({{"t", s.t},
                   {"lr", s.hyper.lr},
                   {"beta1", s.hyper.beta1},
                   {"beta2", s.hyper.beta2},
                   {"eps", s.hyper.eps}});
      floats += 2 * s.m.size();
    }
    header["adam"] = a;
  } else {
    header["adam"] = nullptr;
  }
  header["payload_floats"] = floats;

  const std::string text = header.dump();
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + floats * 4);
  for (const auto& p : params) put_block<T>(out, p.data());
  for (const auto& s : model.bn_states()) {
    put_block<T>(out, s.running_mean);
    put_block<T>(out, s.running_var);
  }
  if (adam)
    for (const auto& s : *adam) {
      put_block<T>(out, s.m);
      put_block<T>(out, s.v);
    }
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a despeckle checkpoint (bad magic)");
  if (bytes.size() < 12) throw LengthError("checkpoint header truncated");
  const std::uint32_t version = get_u32(&bytes[4]);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t header_len = get_u32(&bytes[8]);
  if (12 + static_cast<std::size_t>(header_len) > bytes.size())
    throw LengthError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  try {
    NetworkConfig config = NetworkConfig::from_json(header.at("config"));
    Checkpoint<T> ck{Model<T>(config), std::nullopt, {}};
    ck.meta.epoch = header.at("epoch").get<std::uint64_t>();
    ck.meta.rng_seed = header.at("rng").at("seed").get<std::uint64_t>();
    ck.meta.divisor = header.at("divisor").get<double>();
    ck.meta.looks = header.at("looks").get<int>();
    ck.meta.training = header.value("training", nlohmann::json::object());

    const std::size_t floats = header.at("payload_floats").get<std::size_t>();
    const std::size_t start = 12 + header_len;
    if (start + floats * 4 > bytes.size())
      throw LengthError("checkpoint payload truncated: expected " + std::to_string(floats) +
                        " floats");

    Reader rd(bytes, start);
    auto params = ck.model.parameters();
    const auto& blocks = header.at("blocks");
    if (blocks.size() != params.size()) throw FormatError("checkpoint block count does not match config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (blocks[i].at("length").get<std::size_t>() != params[i].numel())
        throw FormatError("checkpoint block length mismatch for " + blocks[i].value("name", std::string{}));
      rd.read_block<T>(params[i].mutable_data(), "parameters");
    }
    const auto& bn = header.at("bn");
    auto& states = ck.model.bn_states();
    if (bn.size() != states.size()) throw FormatError("checkpoint BN layer count mismatch");
    for (std::size_t i = 0; i < states.size(); ++i) {
      states[i].updates = bn[i].at("updates").get<std::size_t>();
      states[i].momentum = static_cast<T>(bn[i].value("momentum", 0.9));
      states[i].eps = static_cast<T>(bn[i].value("eps", 1e-5));
      rd.read_block<T>(states[i].running_mean, "BN statistics");
      rd.read_block<T>(states[i].running_var, "BN statistics");
    }
    if (header.contains("adam") && !header["adam"].is_null()) {
      const auto& a = header["adam"];
      if (a.size() != params.size()) throw FormatError("checkpoint Adam state count mismatch");
      std::vector<AdamState<T>> adam;
      for (std::size_t i = 0; i < params.size(); ++i) {
        AdamHyper h{a[i].at("lr").get<double>(), a[i].at("beta1").get<double>(),
                    a[i].at("beta2").get<double>(), a[i].at("eps").get<double>()};
        AdamState<T> s(params[i].numel(), h);
        s.t = a[i].at("t").get<std::uint64_t>();
        rd.read_block<T>(s.m, "Adam moments");
        rd.read_block<T>(s.v, "Adam moments");
        adam.push_back(std::move(s));
      }
      ck.adam = std::move(adam);
    }
    if (rd.pos() != start + floats * 4) throw FormatError("checkpoint payload size disagrees with header");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid network config: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const std::vector<AdamState<T>>* adam, const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(model, adam, meta);
  // Written to a sibling temp file, then renamed over `path`.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

#define DESPECKLE_INSTANTIATE_CKPT(T)                                                          \
  template std::vector<unsigned char> encode_checkpoint(const Model<T>&,                       \
                                                        const std::vector<AdamState<T>>*,      \
                                                        const CheckpointMeta&);                \
  template Checkpoint<T> decode_checkpoint<T>(const std::vector<unsigned char>&);              \
  template void save_checkpoint(const std::filesystem::path&, const Model<T>&,                 \
                                const std::vector<AdamState<T>>*, const CheckpointMeta&);      \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

DESPECKLE_INSTANTIATE_CKPT(float)
DESPECKLE_INSTANTIATE_CKPT(double)

}  // namespace despeckle
