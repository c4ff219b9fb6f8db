#pragma once

// Creative images for multimodal prompts: decode, resize to 512x512, PNG,
// base64. Needs OpenCV (link mindfuse::imaging).

#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mindfuse/error.hpp"
#include "mindfuse/telemetry.hpp"
#include "mindfuse/util/hash.hpp"

namespace mindfuse {

inline constexpr int kCreativeSide = 512;

/// Decoded and resized pixels; an image already at 512x512 is passed through
/// untouched. Aspect ratio is not preserved.
inline cv::Mat prepare_creative(const std::vector<unsigned char>& bytes, const std::string& label) {
  if (bytes.empty()) throw Error(ErrorCode::kUndecodableImage, label + ": empty file");
  cv::Mat img = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(ErrorCode::kUndecodableImage, label);
  if (img.cols == kCreativeSide && img.rows == kCreativeSide) return img;
  cv::Mat out;
  cv::resize(img, out, cv::Size(kCreativeSide, kCreativeSide), 0, 0, cv::INTER_LINEAR);
  return out;
}

inline EncodedCreative encode_creative_bytes(const std::string& creative_id,
                                             const std::vector<unsigned char>& bytes) {
  const cv::Mat img = prepare_creative(bytes, creative_id);
  std::vector<unsigned char> png;
  // Fixed compression level keeps the output a pure function of the pixels.
  if (!cv::imencode(".png", img, png, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw Error(ErrorCode::kUndecodableImage, creative_id + ": cannot encode");
  }
  EncodedCreative e;
  e.creative_id = creative_id;
  e.width = img.cols;
  e.height = img.rows;
  e.mime = "image/png";
  e.base64 = hash::base64_encode(std::span<const unsigned char>(png.data(), png.size()));
  return e;
}

/// The creative id is the file stem.
inline EncodedCreative encode_creative(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return encode_creative_bytes(file.stem().string(), bytes);
}

}  // namespace mindfuse
