#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "csrec/error.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::seqmodel {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

constexpr std::array<char, 8> kMagic{'C', 'S', 'R', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorKind::Io, path + ": truncated checkpoint");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const RecommenderModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  const ModelConfig& cfg = model.config();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.architecture));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.num_items));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.max_len));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.heads));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.gru_layers));
  put<std::uint32_t>(out, cfg.tie_weights ? 1U : 0U);
  put<float>(out, static_cast<float>(cfg.dropout));
  put<std::uint64_t>(out, cfg.seed);
  put<std::uint64_t>(out, model.parameter_count());
  std::vector<float> buf;
  for (const Parameter* p : model.parameters()) {
    buf.resize(static_cast<std::size_t>(p->value.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

RecommenderModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(ErrorKind::Io, path + ": not a checkpoint file");
  if (get<std::uint32_t>(in, path) != kVersion)
    throw Error(ErrorKind::Io, path + ": unsupported checkpoint version");
  ModelConfig cfg;
  cfg.architecture = static_cast<Architecture>(get<std::uint32_t>(in, path));
  cfg.num_items = static_cast<int>(get<std::uint32_t>(in, path));
  cfg.dim = static_cast<int>(get<std::uint32_t>(in, path));
  cfg.max_len = static_cast<int>(get<std::uint32_t>(in, path));
  cfg.heads = static_cast<int>(get<std::uint32_t>(in, path));
  cfg.gru_layers = static_cast<int>(get<std::uint32_t>(in, path));
  cfg.tie_weights = get<std::uint32_t>(in, path) != 0;
  cfg.dropout = static_cast<double>(get<float>(in, path));
  cfg.seed = get<std::uint64_t>(in, path);
  const auto count = get<std::uint64_t>(in, path);
  RecommenderModel model(cfg);
  if (count != model.parameter_count())
    throw Error(ErrorKind::Consistency, path + ": parameter count does not match architecture");
  std::vector<float> buf;
  for (Parameter* p : model.parameters()) {
    buf.resize(static_cast<std::size_t>(p->value.size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw Error(ErrorKind::Io, path + ": truncated checkpoint");
    for (std::size_t i = 0; i < buf.size(); ++i) p->value.data()[i] = static_cast<double>(buf[i]);
  }
  return model;
}

}  // namespace csrec::seqmodel
