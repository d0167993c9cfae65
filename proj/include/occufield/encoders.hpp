// SPDX-License-Identifier: Apache-2.0
//
// Small trainable conv stacks: a strided 2D encoder for pixel-aligned
// features and a same-resolution 3D encoder for voxel-aligned features.

#pragma once

#include <string>
#include <vector>

#include "occufield/checkpoint.hpp"
#include "occufield/nn.hpp"
#include "occufield/rng.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

struct ImageEncoderConfig {
  std::vector<int> channels{8, 16, 16};
  std::vector<int> strides{2, 2, 1};
  int kernel = 3;
  int in_channels = 3;

  int out_channels() const { return channels.empty() ? 0 : channels.back(); }
  int downsample() const {
    int f = 1;
    for (int s : strides) f *= s;
    return f;
  }
  void validate() const {
    if (channels.empty() || channels.size() != strides.size())
      fail("image encoder: channel list (" + std::to_string(channels.size()) +
           ") and stride list (" + std::to_string(strides.size()) + ") do not match");
    for (int c : channels)
      if (c <= 0) fail("image encoder: channel counts must be positive");
    for (int s : strides)
      if (s != 1 && s != 2) fail("image encoder: strides must be 1 or 2");
    if (kernel % 2 == 0) fail("image encoder: kernel must be odd");
  }
};

struct ImageEncoder {
  ImageEncoderConfig cfg;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static ImageEncoder create(const ImageEncoderConfig& cfg, RngStream rng) {
    cfg.validate();
    ImageEncoder enc;
    enc.cfg = cfg;
    int in = cfg.in_channels;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      const int out = cfg.channels[i];
      const double stdev = std::sqrt(2.0 / (in * cfg.kernel * cfg.kernel));
      RngStream layer = rng.child("img_layer", i);
      enc.weights.push_back(
          Tensor::randn({out, in, cfg.kernel, cfg.kernel}, layer, stdev, true));
      enc.biases.push_back(Tensor::zeros({out}, true));
      in = out;
    }
    return enc;
  }

  Tensor forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg.in_channels)
      fail("image encoder: expected [" + std::to_string(cfg.in_channels) +
           ",H,W] input, got " + shape_str(image.shape()));
    Tensor x = image;
    for (size_t i = 0; i < weights.size(); ++i)
      x = leaky_relu(conv2d(x, weights[i], biases[i], cfg.strides[i], cfg.kernel / 2), 0.2);
    return x;
  }

  void collect_params(const std::string& prefix, NamedTensors& out) const {
    for (size_t i = 0; i < weights.size(); ++i) {
      out.emplace_back(prefix + "conv" + std::to_string(i) + "/w", weights[i]);
      out.emplace_back(prefix + "conv" + std::to_string(i) + "/b", biases[i]);
    }
  }
  void load_params(const std::string& prefix, const NamedTensors& items) {
    for (size_t i = 0; i < weights.size(); ++i) {
      Tensor w = require_tensor(items, prefix + "conv" + std::to_string(i) + "/w");
      Tensor b = require_tensor(items, prefix + "conv" + std::to_string(i) + "/b");
      if (w.shape() != weights[i].shape())
        fail("image encoder: checkpoint shape " + shape_str(w.shape()) + " != " +
             shape_str(weights[i].shape()));
      weights[i].impl()->data = w.values();
      biases[i].impl()->data = b.values();
    }
  }
  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

struct VolumeEncoderConfig {
  std::vector<int> channels{8, 8};
  int kernel = 3;
  int in_channels = 1;

  int out_channels() const { return channels.empty() ? 0 : channels.back(); }
  void validate() const {
    if (channels.empty()) fail("volume encoder: empty channel list");
    for (int c : channels)
      if (c <= 0) fail("volume encoder: channel counts must be positive");
    if (kernel % 2 == 0) fail("volume encoder: kernel must be odd");
  }
};

struct VolumeEncoder {
  VolumeEncoderConfig cfg;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static VolumeEncoder create(const VolumeEncoderConfig& cfg, RngStream rng) {
    cfg.validate();
    VolumeEncoder enc;
    enc.cfg = cfg;
    int in = cfg.in_channels;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      const int out = cfg.channels[i];
      const double stdev = std::sqrt(2.0 / (in * cfg.kernel * cfg.kernel * cfg.kernel));
      RngStream layer = rng.child("vol_layer", i);
      enc.weights.push_back(
          Tensor::randn({out, in, cfg.kernel, cfg.kernel, cfg.kernel}, layer, stdev, true));
      enc.biases.push_back(Tensor::zeros({out}, true));
      in = out;
    }
    return enc;
  }

  Tensor forward(const Tensor& volume) const {
    if (volume.rank() != 4 || volume.dim(0) != cfg.in_channels)
      fail("volume encoder: expected [" + std::to_string(cfg.in_channels) +
           ",D,H,W] input, got " + shape_str(volume.shape()));
    Tensor x = volume;
    for (size_t i = 0; i < weights.size(); ++i)
      x = leaky_relu(conv3d(x, weights[i], biases[i], 1, cfg.kernel / 2), 0.2);
    return x;
  }

  void collect_params(const std::string& prefix, NamedTensors& out) const {
    for (size_t i = 0; i < weights.size(); ++i) {
      out.emplace_back(prefix + "conv" + std::to_string(i) + "/w", weights[i]);
      out.emplace_back(prefix + "conv" + std::to_string(i) + "/b", biases[i]);
    }
  }
  void load_params(const std::string& prefix, const NamedTensors& items) {
    for (size_t i = 0; i < weights.size(); ++i) {
      Tensor w = require_tensor(items, prefix + "conv" + std::to_string(i) + "/w");
      Tensor b = require_tensor(items, prefix + "conv" + std::to_string(i) + "/b");
      if (w.shape() != weights[i].shape())
        fail("volume encoder: checkpoint shape mismatch");
      weights[i].impl()->data = w.values();
      biases[i].impl()->data = b.values();
    }
  }
  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

}  // namespace occufield
