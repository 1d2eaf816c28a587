#include "nncov/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "nncov/errors.hpp"

namespace nncov {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kMaxLabel = 9;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

IdxHeader parse_header(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < 4) throw FormatError(path.string() + ": truncated IDX header");
  IdxHeader header;
  header.magic = read_be32(bytes, 0);
  if ((header.magic >> 16) != 0 || ((header.magic >> 8) & 0xff) != 0x08) {
    throw FormatError(path.string() + ": wrong magic, not an unsigned-byte IDX file");
  }
  const std::size_t ndims = header.magic & 0xff;
  if (bytes.size() < 4 + 4 * ndims) throw FormatError(path.string() + ": truncated IDX header");
  for (std::size_t d = 0; d < ndims; ++d) header.dims.push_back(read_be32(bytes, 4 + 4 * d));
  return header;
}

void open_for_write(std::ofstream& out, const std::filesystem::path& path) {
  out.open(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

Dataset::Dataset(Tensor inputs, std::vector<std::size_t> labels)
    : inputs_(std::move(inputs)), labels_(std::move(labels)) {
  if (inputs_.rank() < 2 || inputs_.shape()[0] != labels_.size()) {
    throw ShapeError("dataset inputs " + shape_string(inputs_.shape()) + " do not match " +
                     std::to_string(labels_.size()) + " labels");
  }
}

Dataset Dataset::from_samples(const std::vector<Tensor>& samples, std::vector<std::size_t> labels) {
  if (samples.empty()) throw ShapeError("dataset needs at least one sample");
  Shape shape = samples.front().shape();
  std::vector<double> data;
  data.reserve(samples.size() * samples.front().size());
  for (const Tensor& s : samples) {
    if (s.shape() != shape) throw ShapeError("dataset samples have differing shapes");
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  shape.insert(shape.begin(), samples.size());
  return Dataset(Tensor(std::move(shape), std::move(data)), std::move(labels));
}

Shape Dataset::sample_shape() const {
  if (inputs_.rank() < 2) return {};
  return Shape(inputs_.shape().begin() + 1, inputs_.shape().end());
}

std::size_t Dataset::sample_size() const { return element_count(sample_shape()); }

std::span<const double> Dataset::sample_data(std::size_t i) const {
  const std::size_t n = sample_size();
  return inputs_.data().subspan(i * n, n);
}

Tensor Dataset::sample(std::size_t i) const {
  auto d = sample_data(i);
  return Tensor(sample_shape(), std::vector<double>(d.begin(), d.end()));
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return subset(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Shape shape = sample_shape();
  const std::size_t n = sample_size();
  std::vector<double> data;
  data.reserve(indices.size() * n);
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("dataset index out of range");
    auto d = sample_data(i);
    data.insert(data.end(), d.begin(), d.end());
    labels.push_back(labels_[i]);
  }
  shape.insert(shape.begin(), indices.size());
  return Dataset(Tensor(std::move(shape), std::move(data)), std::move(labels));
}

Dataset Dataset::with_labels(std::vector<std::size_t> labels) const {
  return Dataset(inputs_, std::move(labels));
}

Dataset Dataset::concat(const Dataset& other) const {
  if (empty()) return other;
  if (other.empty()) return *this;
  if (other.sample_shape() != sample_shape()) throw ShapeError("concat: sample shapes differ");
  std::vector<double> data(inputs_.data().begin(), inputs_.data().end());
  data.insert(data.end(), other.inputs_.data().begin(), other.inputs_.data().end());
  std::vector<std::size_t> labels = labels_;
  labels.insert(labels.end(), other.labels_.begin(), other.labels_.end());
  Shape shape = sample_shape();
  shape.insert(shape.begin(), labels.size());
  return Dataset(Tensor(std::move(shape), std::move(data)), std::move(labels));
}

IdxHeader read_idx_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes(4 + 4 * 255);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  return parse_header(bytes, path);
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  const IdxHeader images = parse_header(image_bytes, images_path);
  const IdxHeader labels = parse_header(label_bytes, labels_path);
  if (images.magic != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": wrong magic for an image file");
  }
  if (labels.magic != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": wrong magic for a label file");
  }
  const std::size_t count = images.dims[0];
  const std::size_t rows = images.dims[1];
  const std::size_t cols = images.dims[2];
  if (labels.dims[0] != count) {
    throw FormatError("count mismatch: " + std::to_string(count) + " images vs " +
                      std::to_string(labels.dims[0]) + " labels");
  }
  const std::size_t image_offset = 16;
  const std::size_t label_offset = 8;
  if (image_bytes.size() < image_offset + count * rows * cols) {
    throw FormatError(images_path.string() + ": truncated payload");
  }
  if (label_bytes.size() < label_offset + count) {
    throw FormatError(labels_path.string() + ": truncated payload");
  }
  std::vector<double> pixels(count * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(image_bytes[image_offset + i]) / 255.0;
  }
  std::vector<std::size_t> label_values(count);
  for (std::size_t i = 0; i < count; ++i) {
    label_values[i] = label_bytes[label_offset + i];
    if (label_values[i] > kMaxLabel) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(label_values[i]) +
                        " at index " + std::to_string(i) + " is not a digit");
    }
  }
  return Dataset(Tensor({count, 1, rows, cols}, std::move(pixels)), std::move(label_values));
}

std::uint8_t quantize_pixel(double value) {
  const double scaled = std::round(value * 255.0);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

void write_idx_images(const std::filesystem::path& path, const Dataset& data) {
  const Shape shape = data.sample_shape();
  if (shape.size() < 2) throw ShapeError("IDX images need at least two spatial dimensions");
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape[shape.size() - 1];
  if (rows * cols != data.sample_size()) throw ShapeError("IDX images must be single-channel");
  std::ofstream out;
  open_for_write(out, path);
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  std::vector<char> bytes(data.inputs().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(quantize_pixel(data.inputs()[i]));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::size_t> labels) {
  std::ofstream out;
  open_for_write(out, path);
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t label : labels) out.put(static_cast<char>(label));
  if (!out) throw IoError("error writing " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  const bool plain = s.size() == 2;
  const bool single_channel = s.size() == 3 && s[0] == 1;
  if (!plain && !single_channel) throw ShapeError("PGM export needs an H x W or 1 x H x W tensor");
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s[s.size() - 1];
  std::ofstream out;
  open_for_write(out, path);
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (double v : image.data()) out.put(static_cast<char>(quantize_pixel(v)));
  if (!out) throw IoError("error writing " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  std::size_t cols = 0, rows = 0, maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (!in || magic != "P5" || maxval != 255 || rows == 0 || cols == 0) {
    throw FormatError(path.string() + ": not a P5 PGM with maxval 255");
  }
  const std::size_t payload = static_cast<std::size_t>(in.tellg()) + 1;
  if (bytes.size() < payload + rows * cols) throw FormatError(path.string() + ": truncated PGM");
  std::vector<double> pixels(rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = bytes[payload + i] / 255.0;
  return Tensor({1, rows, cols}, std::move(pixels));
}

}  // namespace nncov
