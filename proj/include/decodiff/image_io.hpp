#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/tensor.hpp"

namespace decodiff {

struct ImageReadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline cv::Mat read_raw(const std::filesystem::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw ImageReadError("cannot read image " + path.string());
  return m;
}

/// Converts an 8- or 16-bit BGR(A)/gray matrix to an RGB ImageTensor in [0,1].
inline ImageTensor from_mat(const cv::Mat& in) {
  cv::Mat m = in;
  if (m.channels() == 1) cv::cvtColor(m, m, cv::COLOR_GRAY2BGR);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f;
  m.convertTo(f, CV_64FC3, scale);
  ImageTensor img(3, f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) {
      const auto& p = f.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(p[2 - c]);
    }
  return img;
}

inline cv::Mat to_mat8(const ImageTensor& img) {
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        m.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(img.at(0, y, x) * 255.0));
        continue;
      }
      auto& p = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) p[2 - c] = cv::saturate_cast<std::uint8_t>(std::lround(img.at(c, y, x) * 255.0));
    }
  return m;
}

inline void write_png(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

inline void write_image(const std::filesystem::path& path, const ImageTensor& img) { write_png(path, to_mat8(img)); }

inline ImageTensor read_image(const std::filesystem::path& path) {
  return from_mat(read_raw(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR));
}

/// Scores in [0,1] as 16-bit grayscale (value * 65535, rounded).
inline void write_map16(const std::filesystem::path& path, const Map2D& map) {
  cv::Mat m(map.height, map.width, CV_16UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      m.at<std::uint16_t>(y, x) =
          static_cast<std::uint16_t>(std::lround(std::clamp(map.at(y, x), 0.0, 1.0) * 65535.0));
  write_png(path, m);
}

inline Map2D read_map16(const std::filesystem::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  Map2D out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      out.at(y, x) = (m.depth() == CV_16U ? m.at<std::uint16_t>(y, x) / 65535.0 : m.at<std::uint8_t>(y, x) / 255.0);
  return out;
}

inline cv::Mat map_to_gray8(const Map2D& map) {
  cv::Mat m(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      m.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(std::clamp(map.at(y, x), 0.0, 1.0) * 255.0));
  return m;
}

/// Input blended with a JET-coloured score map.
inline cv::Mat overlay(const ImageTensor& img, const Map2D& map, double alpha = 0.5) {
  cv::Mat base = to_mat8(img), heat;
  cv::applyColorMap(map_to_gray8(map), heat, cv::COLORMAP_JET);
  cv::Mat out;
  cv::addWeighted(base, 1.0 - alpha, heat, alpha, 0.0, out);
  return out;
}

}  // namespace decodiff
