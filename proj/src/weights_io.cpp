#include "bimanual/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "bimanual/errors.hpp"
#include "bimanual/io_util.hpp"

namespace bimanual {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'M', 'G', 'N', 'W', 'G', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "weight files assume little endian");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw DataError("weight file truncated");
  return value;
}

json manifest_for(const NetworkShape& s) {
  json m;
  m["format"] = "bimanual-graph-net";
  m["version"] = kWeightFormatVersion;
  m["actions"] = json(std::vector<std::string>(kActionNames.begin(), kActionNames.end()));
  m["objects"] = json(std::vector<std::string>(kObjectNames.begin(), kObjectNames.end()));
  m["relations"] = json(std::vector<std::string>(kRelationNames.begin(), kRelationNames.end()));
  m["temporal_slot"] = kTemporalSlot;
  m["shape"] = {{"edge_in", s.edge_in}, {"node_in", s.node_in}, {"global_in", s.global_in},
                {"latent", s.latent},   {"layers", s.layers},   {"steps", s.steps},
                {"outputs", s.outputs}};
  return m;
}

}  // namespace

void save_weights(std::ostream& out, const GraphNetWeights<double>& w) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kWeightFormatVersion);
  const std::string manifest = manifest_for(w.shape).dump();
  put<std::uint64_t>(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));

  std::uint32_t count = 0;
  w.for_each([&](const std::string&, const Mat<double>&) { ++count; });
  put<std::uint32_t>(out, count);
  w.for_each([&](const std::string& name, const Mat<double>& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  });
  if (!out) throw DataError("failed to write weight file");
}

GraphNetWeights<double> load_weights(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a weight file (bad magic)");
  const auto version = take<std::uint32_t>(in);
  if (version != kWeightFormatVersion)
    throw DataError("manifest mismatch: unsupported weight format version " + std::to_string(version));

  const auto manifest_len = take<std::uint64_t>(in);
  if (manifest_len > (1u << 24)) throw DataError("weight file manifest too large");
  std::string text(manifest_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_len)))
    throw DataError("weight file truncated");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception&) {
    throw DataError("manifest mismatch: manifest is not valid JSON");
  }

  NetworkShape shape;
  try {
    const json& s = manifest.at("shape");
    shape.edge_in = s.at("edge_in").get<int>();
    shape.node_in = s.at("node_in").get<int>();
    shape.global_in = s.at("global_in").get<int>();
    shape.latent = s.at("latent").get<int>();
    shape.layers = s.at("layers").get<int>();
    shape.steps = s.at("steps").get<int>();
    shape.outputs = s.at("outputs").get<int>();
  } catch (const json::exception&) {
    throw DataError("manifest mismatch: missing network shape");
  }
  const json expected = manifest_for(shape);
  for (const char* key : {"format", "actions", "objects", "relations", "temporal_slot"}) {
    if (!manifest.contains(key) || manifest.at(key) != expected.at(key))
      throw DataError(std::string("manifest mismatch: ") + key);
  }
  try {
    shape.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("manifest mismatch: ") + e.what());
  }

  GraphNetWeights<double> w = init_weights<double>(shape, 0).zeros_like();
  const auto count = take<std::uint32_t>(in);
  std::uint32_t expected_count = 0;
  w.for_each([&](const std::string&, Mat<double>&) { ++expected_count; });
  if (count != expected_count) throw DataError("manifest mismatch: tensor count");

  w.for_each([&](const std::string& name, Mat<double>& m) {
    const auto len = take<std::uint32_t>(in);
    if (len > 4096) throw DataError("weight file tensor name too long");
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw DataError("weight file truncated");
    if (stored != name) throw DataError("manifest mismatch: expected tensor " + name + ", found " + stored);
    const auto rows = take<std::uint64_t>(in);
    const auto cols = take<std::uint64_t>(in);
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
      throw DataError("manifest mismatch: shape of tensor " + name);
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size()))))
      throw DataError("weight file truncated");
  });
  if (!w.all_finite()) throw DataError("weight file contains non-finite values");
  return w;
}

void save_weights(const std::filesystem::path& path, const GraphNetWeights<double>& w) {
  write_atomically(path, [&](std::ostream& out) { save_weights(out, w); }, std::ios::binary);
}

GraphNetWeights<double> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  return load_weights(in);
}

}  // namespace bimanual
