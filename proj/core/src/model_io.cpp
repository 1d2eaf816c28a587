#include "nncov/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <vector>

#include "nncov/errors.hpp"

namespace nncov {

namespace {

constexpr std::string_view kMagic = "nncov-model";

void append_le64(std::vector<std::uint8_t>& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double read_le64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[b]} << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string join_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(part, &used);
      if (used != part.size() || v == 0) throw FormatError("");
      shape.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw FormatError("model manifest: bad shape '" + text + "'");
    }
  }
  if (shape.empty()) throw FormatError("model manifest: empty shape");
  return shape;
}

std::string layer_line(const LayerSpec& s) {
  std::ostringstream out;
  out << "layer " << layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::kDense:
      out << " in=" << s.in_units << " out=" << s.out_units << " weight=" << s.weight_name
          << " bias=" << s.bias_name;
      break;
    case LayerKind::kConv2D:
      out << " in=" << s.in_channels << " out=" << s.out_channels << " kh=" << s.kernel_h
          << " kw=" << s.kernel_w << " stride=" << s.stride << " weight=" << s.weight_name
          << " bias=" << s.bias_name;
      break;
    case LayerKind::kMaxPool2D:
      out << " window=" << s.window << " stride=" << s.pool_stride;
      break;
    default:
      break;
  }
  return out.str();
}

LayerSpec parse_layer(std::istringstream& in) {
  std::string kind;
  in >> kind;
  std::map<std::string, std::string> kv;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw FormatError("model manifest: bad layer field '" + token + "'");
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto num = [&](const std::string& key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("model manifest: " + kind + " layer lacks '" + key + "'");
    return parse_shape(it->second).front();
  };
  auto str = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("model manifest: " + kind + " layer lacks '" + key + "'");
    return it->second;
  };
  if (kind == "dense") return LayerSpec::dense(num("in"), num("out"), str("weight"), str("bias"));
  if (kind == "conv2d") {
    return LayerSpec::conv2d(num("in"), num("out"), num("kh"), num("kw"), num("stride"),
                             str("weight"), str("bias"));
  }
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "maxpool2d") return LayerSpec::max_pool(num("window"), num("stride"));
  if (kind == "flatten") return LayerSpec::flatten();
  if (kind == "softmax") return LayerSpec::softmax();
  throw FormatError("model manifest: unknown layer kind '" + kind + "'");
}

struct ArrayEntry {
  std::string name;
  std::size_t offset = 0;
  Shape shape;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string serialize_model(const Network& net) {
  if (net.model_id().empty() ||
      net.model_id().find_first_of(" \t\r\n") != std::string::npos) {
    throw FormatError("model id must be a non-empty token without whitespace");
  }
  std::vector<std::uint8_t> blob;
  std::ostringstream manifest;
  manifest << kMagic << ' ' << kModelFormatVersion << '\n';
  manifest << "model_id " << net.model_id() << '\n';
  manifest << "input_shape " << join_shape(net.input_shape()) << '\n';
  manifest << "layers " << net.layers().size() << '\n';
  for (const LayerSpec& spec : net.layers()) manifest << layer_line(spec) << '\n';
  manifest << "arrays " << net.params().size() << '\n';
  for (const auto& [name, tensor] : net.params()) {
    manifest << "array " << name << " offset=" << blob.size()
             << " shape=" << join_shape(tensor.shape()) << '\n';
    for (double v : tensor.data()) append_le64(blob, v);
  }
  manifest << "blob_bytes " << blob.size() << '\n';
  manifest << "checksum fnv1a64 " << std::hex << std::setw(16) << std::setfill('0')
           << fnv1a64(blob) << std::dec << '\n';
  manifest << "end\n";
  std::string out = manifest.str();
  out.append(reinterpret_cast<const char*>(blob.data()), blob.size());
  return out;
}

Network deserialize_model(std::string_view bytes) {
  const std::string_view end_marker = "\nend\n";
  const auto end_pos = bytes.find(end_marker);
  if (end_pos == std::string_view::npos) throw FormatError("model file: manifest has no end line");
  std::istringstream manifest(std::string(bytes.substr(0, end_pos + 1)));
  const auto* blob = reinterpret_cast<const std::uint8_t*>(bytes.data()) + end_pos + end_marker.size();
  const std::size_t blob_available = bytes.size() - end_pos - end_marker.size();

  auto next_line = [&](std::string_view expect_key) {
    std::string line;
    if (!std::getline(manifest, line)) {
      throw FormatError("model manifest: missing '" + std::string(expect_key) + "' line");
    }
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key != expect_key) {
      throw FormatError("model manifest: expected '" + std::string(expect_key) + "', found '" +
                        key + "'");
    }
    std::string rest;
    std::getline(fields >> std::ws, rest);
    return rest;
  };

  const std::string version = next_line(kMagic);
  if (version != std::to_string(kModelFormatVersion)) {
    throw FormatError("model file: version mismatch (file " + version + ", reader " +
                      std::to_string(kModelFormatVersion) + ")");
  }
  const std::string model_id = next_line("model_id");
  const Shape input_shape = parse_shape(next_line("input_shape"));
  const std::size_t layer_count = parse_shape(next_line("layers")).front();
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < layer_count; ++i) {
    std::istringstream fields(next_line("layer"));
    layers.push_back(parse_layer(fields));
  }
  const std::string array_count_text = next_line("arrays");
  const std::size_t array_count = array_count_text == "0" ? 0 : parse_shape(array_count_text).front();
  std::vector<ArrayEntry> entries;
  for (std::size_t i = 0; i < array_count; ++i) {
    std::istringstream fields(next_line("array"));
    ArrayEntry entry;
    std::string offset_field, shape_field;
    fields >> entry.name >> offset_field >> shape_field;
    if (offset_field.rfind("offset=", 0) != 0 || shape_field.rfind("shape=", 0) != 0) {
      throw FormatError("model manifest: malformed array line for '" + entry.name + "'");
    }
    try {
      entry.offset = std::stoull(offset_field.substr(7));
    } catch (const std::exception&) {
      throw FormatError("model manifest: bad offset for '" + entry.name + "'");
    }
    entry.shape = parse_shape(shape_field.substr(6));
    entries.push_back(std::move(entry));
  }
  std::size_t blob_bytes = 0;
  try {
    blob_bytes = std::stoull(next_line("blob_bytes"));
  } catch (const std::invalid_argument&) {
    throw FormatError("model manifest: bad blob_bytes");
  }
  std::istringstream checksum_fields(next_line("checksum"));
  std::string algorithm, hex;
  checksum_fields >> algorithm >> hex;
  if (algorithm != "fnv1a64") throw FormatError("model manifest: unknown checksum '" + algorithm + "'");
  if (blob_available != blob_bytes) {
    throw FormatError("model file: blob has " + std::to_string(blob_available) +
                      " bytes, manifest says " + std::to_string(blob_bytes));
  }
  std::uint64_t expected = 0;
  try {
    expected = std::stoull(hex, nullptr, 16);
  } catch (const std::exception&) {
    throw FormatError("model manifest: bad checksum value");
  }
  if (fnv1a64({blob, blob_bytes}) != expected) throw FormatError("model file: checksum failure");

  std::map<std::string, Tensor> params;
  for (const ArrayEntry& entry : entries) {
    const std::size_t count = element_count(entry.shape);
    if (entry.offset % 8 != 0 || entry.offset + count * 8 > blob_bytes) {
      throw FormatError("model file: array '" + entry.name + "' lies outside the blob");
    }
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) values[k] = read_le64(blob + entry.offset + 8 * k);
    params.emplace(entry.name, Tensor(entry.shape, std::move(values)));
  }
  for (const LayerSpec& spec : layers) {
    if (!spec.is_parametric()) continue;
    for (const std::string& name : {spec.weight_name, spec.bias_name}) {
      if (!params.contains(name)) throw FormatError("model file: missing array '" + name + "'");
    }
  }
  try {
    return Network(model_id, input_shape, std::move(layers), std::move(params));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

void save_model(const Network& net, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace nncov
