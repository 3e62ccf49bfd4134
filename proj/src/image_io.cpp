#include "imuge/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "imuge/errors.hpp"

namespace imuge {

namespace fs = std::filesystem;

ImageFormat format_from_path(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".bmp") return ImageFormat::bmp;
  if (ext == ".jpg" || ext == ".jpeg") return ImageFormat::jpeg;
  throw IoError("unsupported output format: " + path.string());
}

namespace {

torch::Tensor chw(const torch::Tensor& image) {
  if (!image.defined()) throw ShapeError("image: undefined tensor");
  auto t = image.detach();
  if (t.dim() == 4 && t.size(0) == 1) t = t[0];
  if (t.dim() != 3 || (t.size(0) != 3 && t.size(0) != 1)) throw ShapeError("image: expected [3,H,W] or [1,H,W]");
  return t;
}

std::vector<uint8_t> to_bytes(const torch::Tensor& chw_image, double scale, double offset) {
  const auto hwc = chw_image.to(torch::kFloat64).permute({1, 2, 0}).contiguous();
  const double* v = hwc.data_ptr<double>();
  std::vector<uint8_t> out(static_cast<size_t>(hwc.numel()));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::clamp(std::round(scale * (v[i] + offset)), 0.0, 255.0));
  }
  return out;
}

// Interleaved RGB (or gray) bytes to an OpenCV BGR (or gray) matrix.
cv::Mat to_mat(const std::vector<uint8_t>& bytes, int64_t h, int64_t w, int64_t c) {
  cv::Mat mat(static_cast<int>(h), static_cast<int>(w), c == 3 ? CV_8UC3 : CV_8UC1);
  uint8_t* dst = mat.data;
  for (size_t i = 0; i < bytes.size(); i += static_cast<size_t>(c)) {
    for (int64_t k = 0; k < c; ++k) dst[i + k] = bytes[i + (c - 1 - k)];
  }
  return mat;
}

torch::Tensor from_mat(cv::Mat decoded) {
  if (decoded.depth() == CV_16U) {
    decoded.convertTo(decoded, CV_8U, 1.0 / 257.0);
  } else if (decoded.depth() != CV_8U) {
    throw IoError("unsupported image bit depth");
  }
  if (!decoded.isContinuous()) decoded = decoded.clone();
  const int channels = decoded.channels();
  const size_t pixels = decoded.total();
  std::vector<uint8_t> rgb(pixels * 3);
  const uint8_t* src = decoded.data;
  for (size_t i = 0; i < pixels; ++i) {
    for (int k = 0; k < 3; ++k) {
      // OpenCV stores BGR(A); gray replicates.
      rgb[3 * i + k] = channels == 1 ? src[i] : src[i * channels + (2 - k)];
    }
  }
  return bytes_to_image(rgb, decoded.rows, decoded.cols, 3);
}

}  // namespace

std::vector<uint8_t> quantize_to_bytes(const torch::Tensor& image) { return to_bytes(chw(image), 127.5, 1.0); }

torch::Tensor bytes_to_image(const std::vector<uint8_t>& bytes, int64_t height, int64_t width, int64_t channels) {
  if (static_cast<int64_t>(bytes.size()) != height * width * channels) throw ShapeError("bytes_to_image: size mismatch");
  auto t = torch::empty({height, width, channels}, torch::kUInt8);
  std::copy(bytes.begin(), bytes.end(), t.data_ptr<uint8_t>());
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor load_image(const fs::path& path) {
  cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (decoded.empty()) throw IoError("cannot decode image: " + path.string());
  return from_mat(decoded);
}

torch::Tensor load_mask(const fs::path& path) {
  cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (decoded.empty()) throw IoError("cannot decode mask: " + path.string());
  auto t = torch::empty({decoded.rows, decoded.cols}, torch::kUInt8);
  std::copy(decoded.data, decoded.data + decoded.total(), t.data_ptr<uint8_t>());
  return t.to(torch::kFloat32).div(255.0).unsqueeze(0);
}

void save_image(const fs::path& path, const torch::Tensor& image, ImageFormat format, std::optional<int> quality) {
  const auto t = chw(image);
  const auto bytes = quantize_to_bytes(t);
  cv::Mat mat = to_mat(bytes, t.size(1), t.size(2), t.size(0));
  std::vector<int> params;
  if (format == ImageFormat::jpeg) {
    if (!quality) throw ContractError("save_image: JPEG output needs a quality factor");
    params = {cv::IMWRITE_JPEG_QUALITY, *quality};
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat, params);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

void save_mask(const fs::path& path, const torch::Tensor& mask) {
  const auto t = chw(mask);
  if (t.size(0) != 1) throw ShapeError("save_mask: expected a single-channel mask");
  cv::Mat mat = to_mat(to_bytes(t, 255.0, 0.0), t.size(1), t.size(2), 1);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw IoError("cannot write " + path.string());
}

std::vector<uint8_t> encode_jpeg(const torch::Tensor& image, int quality) {
  const auto t = chw(image);
  if (t.size(0) != 3) throw ShapeError("encode_jpeg: expected an RGB image");
  cv::Mat mat = to_mat(quantize_to_bytes(t), t.size(1), t.size(2), 3);
  std::vector<uint8_t> buffer;
  if (!cv::imencode(".jpg", mat, buffer, {cv::IMWRITE_JPEG_QUALITY, quality})) throw IoError("JPEG encoding failed");
  return buffer;
}

torch::Tensor jpeg_roundtrip(const torch::Tensor& image, int quality) {
  const auto buffer = encode_jpeg(image, quality);
  cv::Mat decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  if (decoded.empty()) throw IoError("JPEG decoding failed");
  return from_mat(decoded);
}

}  // namespace imuge
