#include <bit>
#include <cstring>
#include <fstream>

#include "repairlab/errors.hpp"
#include "repairlab/policy.hpp"

namespace repairlab {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

Json header_for(const Network& net, const std::string& tag) {
  Json reg = Json::array();
  for (const auto& s : net.registry()) reg.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  return {{"format_version", kFormatVersion},
          {"tag", tag},
          {"head", net.head() == HeadKind::lm ? "lm" : "scalar"},
          {"shape", net.shape().to_json()},
          {"adapter", net.adapter_spec().to_json()},
          {"vocab_size", net.shape().vocab_size},
          {"context_window", net.shape().context_window},
          {"parameter_count", net.parameter_count()},
          {"registry", reg}};
}

struct RawCheckpoint {
  Json header;
  std::vector<double> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, const std::string& expected_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ValidationError(path.string() + " is not a checkpoint");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  RawCheckpoint raw;
  raw.header = Json::parse(header);
  if (raw.header.value("format_version", 0) != kFormatVersion)
    throw ValidationError("unsupported checkpoint format version in " + path.string());
  if (raw.header.value("tag", std::string()) != expected_tag)
    throw ValidationError("checkpoint " + path.string() + " has tag '" + raw.header.value("tag", std::string()) +
                          "', expected '" + expected_tag + "'");
  const auto count = raw.header.at("parameter_count").get<std::size_t>();
  raw.payload.resize(count);
  in.read(reinterpret_cast<char*>(raw.payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw ValidationError("truncated checkpoint payload in " + path.string());
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const std::string& tag) {
  const std::string header = dump_json(header_for(net, tag));
  std::string bytes(kMagic, 8);
  const std::uint64_t len = header.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += header;
  bytes.append(reinterpret_cast<const char*>(net.params().data()), net.params().size() * sizeof(double));
  write_file_atomic(path, bytes);
}

Network load_checkpoint(const std::filesystem::path& path, const std::string& expected_tag) {
  RawCheckpoint raw = read_raw(path, expected_tag);
  const HeadKind head = raw.header.at("head") == "lm" ? HeadKind::lm : HeadKind::scalar;
  Network net(ModelShape::from_json(raw.header.at("shape")), head, AdapterSpec::from_json(raw.header.at("adapter")),
              0, 0.0);
  if (header_for(net, expected_tag) != raw.header)
    throw ValidationError("checkpoint registry does not match its declared shape: " + path.string());
  net.params() = std::move(raw.payload);
  return net;
}

void load_checkpoint_into(const std::filesystem::path& path, Network& net, const std::string& expected_tag) {
  RawCheckpoint raw = read_raw(path, expected_tag);
  if (header_for(net, expected_tag) != raw.header)
    throw ValidationError("checkpoint registry does not match the target model: " + path.string());
  net.params() = std::move(raw.payload);
}

}  // namespace repairlab
