#include "physinstruct/dataset_io.hpp"

#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "physinstruct/errors.hpp"

namespace physinstruct {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
constexpr const char* kFormat = "physinstruct-dataset";
constexpr int kVersion = 1;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}
}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  if (data.samples.empty()) throw ContractViolation("write_dataset: no samples");
  const Index h = data.samples.front().height(), w = data.samples.front().width();
  const Index c = channel_count(data.kind) + data.extra_channels;
  for (const auto& s : data.samples) {
    if (s.kind != data.kind || !(s.channels.shape == Shape{c, h, w})) {
      throw ContractViolation("write_dataset: samples differ in kind or shape");
    }
  }
  nlohmann::json body = {{"format", kFormat},
                         {"version", kVersion},
                         {"kind", std::string(to_string(data.kind))},
                         {"height", h},
                         {"width", w},
                         {"channels", c},
                         {"count", data.samples.size()},
                         {"seed", data.seed},
                         {"extra_channels", data.extra_channels}};
  const std::string dumped = body.dump();
  nlohmann::json header = {{"checksum", hex64(fnv1a64(dumped))}, {"body", body}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open dataset for writing: " + path.string());
  out << header.dump() << '\n';
  std::vector<float> buf;
  for (const auto& s : data.samples) {
    buf.assign(s.channels.data.begin(), s.channels.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw FormatError("failed writing dataset: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("dataset not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file: " + path.string());

  Dataset ds;
  Index h = 0, w = 0, c = 0, count = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    const auto& body = header.at("body");
    if (header.at("checksum").get<std::string>() != hex64(fnv1a64(body.dump()))) {
      throw FormatError("dataset header checksum mismatch in " + path.string());
    }
    if (body.at("format") != kFormat) throw FormatError("not a dataset file: " + path.string());
    if (body.at("version") != kVersion) throw FormatError("unsupported dataset version in " + path.string());
    ds.kind = parse_pde_kind(body.at("kind").get<std::string>());
    h = body.at("height").get<Index>();
    w = body.at("width").get<Index>();
    c = body.at("channels").get<Index>();
    count = body.at("count").get<Index>();
    ds.seed = body.at("seed").get<std::uint64_t>();
    ds.extra_channels = body.at("extra_channels").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset header in " + path.string() + ": " + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError("malformed dataset header in " + path.string() + ": " + e.what());
  }
  if (h < 1 || w < 1 || count < 1 || c != channel_count(ds.kind) + ds.extra_channels) {
    throw FormatError("inconsistent dataset header in " + path.string());
  }

  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg() - start);
  in.seekg(start);
  const std::uint64_t per = static_cast<std::uint64_t>(c * h * w);
  if (bytes != per * static_cast<std::uint64_t>(count) * sizeof(float)) {
    throw FormatError("dataset payload length disagrees with header sample count in " + path.string());
  }
  std::vector<float> buf(static_cast<std::size_t>(per * static_cast<std::uint64_t>(count)));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("truncated dataset payload in " + path.string());

  ds.samples.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    Tensor t(Shape{c, h, w});
    for (Index j = 0; j < t.numel(); ++j) t.data[j] = static_cast<double>(buf[static_cast<std::size_t>(i * c * h * w + j)]);
    ds.samples.push_back({ds.kind, std::move(t)});
  }
  return ds;
}

}  // namespace physinstruct
