#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nncov/tensor.hpp"

namespace nncov {

/// A batch of inputs with integer class labels.
///
/// `inputs` has shape [N, ...sample_shape]. Pixel data is kept normalized
/// to [0, 1].
class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor inputs, std::vector<std::size_t> labels);
  static Dataset from_samples(const std::vector<Tensor>& samples, std::vector<std::size_t> labels);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  const Tensor& inputs() const { return inputs_; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  Shape sample_shape() const;
  std::size_t sample_size() const;

  std::span<const double> sample_data(std::size_t i) const;
  Tensor sample(std::size_t i) const;
  std::size_t label(std::size_t i) const { return labels_[i]; }

  Dataset slice(std::size_t begin, std::size_t end) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset with_labels(std::vector<std::size_t> labels) const;
  Dataset concat(const Dataset& other) const;

 private:
  Tensor inputs_;
  std::vector<std::size_t> labels_;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Bytes are scaled to [0, 1] by dividing by 255; each image becomes a
/// 1 x rows x cols sample. Throws FormatError on a wrong magic, truncated
/// payload, count mismatch or label above 9, IoError if a file cannot be read.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

struct IdxHeader {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
};

IdxHeader read_idx_header(const std::filesystem::path& path);

// Writers quantize to bytes with round(x * 255), clamped to [0, 255].
void write_idx_images(const std::filesystem::path& path, const Dataset& data);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::size_t> labels);

std::uint8_t quantize_pixel(double value);

/// Binary PGM (P5, maxval 255) of a single-channel image tensor (H x W or 1 x H x W).
void write_pgm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace nncov
