/*
 * Copyright 2026 PulseUQ Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "pulseuq/nn/layers.hpp"

namespace pulseuq::nn {

enum class Task { kClassification, kRegression };

struct ModelConfig {
  Task task = Task::kClassification;
  float dropout_rate = 0.05f;
  bool batchnorm_enabled = true;  // regression network only
  int head_count = 4;
  std::int64_t input_len = 0;  // 0: task default (800 / 1250)

  std::int64_t resolved_input_len() const {
    if (input_len > 0) return input_len;
    return task == Task::kClassification ? 800 : 1250;
  }
};

/// Bounds on the raw log-variance heads of the classifier; keeps
/// exp(logvar) finite under badly scaled parameters.
inline constexpr float kLogVarMin = -15.0f;
inline constexpr float kLogVarMax = 15.0f;

/// Five conv stages (kernel length 8, activation maps 128-64-32-16-1), each
/// LeakyReLU(0.01) + dropout + maxpool(2, 2), then a dense layer to four
/// outputs: two logit means and two logit log-variances, no activation.
class ConvClassifier {
 public:
  static constexpr std::array<std::int64_t, 6> kChannels{1, 128, 64, 32, 16, 1};
  static constexpr std::int64_t kKernel = 8;

  ConvClassifier(const ModelConfig& cfg, RngStream init_rng) : cfg_(cfg) {
    check_arg(cfg.head_count == 4,
              "classifier needs four heads (two logit means, two variances)");
    input_len_ = cfg.resolved_input_len();
    std::int64_t len = input_len_;
    for (int i = 0; i < 5; ++i) {
      len = conv1d_out_len(len, kKernel, 1, 0);
      if (len >= 1) len = (len - 2) / 2 + 1;  // maxpool k2 s2
      check_arg(len >= 1,
                "input length " + std::to_string(input_len_) +
                    " too short for five conv+pool stages (fails at stage " +
                    std::to_string(i + 1) + ")");
      convs_[i] = Conv1dLayer(kChannels[i], kChannels[i + 1], kKernel, 1, 0,
                              init_rng);
    }
    flatten_len_ = len * kChannels[5];
    fc_ = DenseLayer(flatten_len_, 4, init_rng);
    // Variance heads start small (sigma = e^-3) so early training behaves
    // like plain cross-entropy; the logit noise grows where the data needs it.
    fc_.b.data()[2] = kLogVarInit;
    fc_.b.data()[3] = kLogVarInit;
    for (int i = 0; i < 5; ++i)
      convs_[i].register_params(params_, "conv" + std::to_string(i + 1));
    fc_.register_params(params_, "fc");
  }

  static constexpr float kLogVarInit = -6.0f;

  /// x: (B, 1, L) -> (B, 4).
  Tensor forward(const Tensor& x, const ForwardMode& mode) {
    check_arg(x.shape().size() == 3 && x.size(1) == 1 &&
                  x.size(2) == input_len_,
              "classifier expects (B, 1, " + std::to_string(input_len_) +
                  "), got " + shape_str(x.shape()));
    check_arg(!mode.dropout_active || mode.dropout_rng != nullptr,
              "dropout_active requires a dropout stream");
    Tensor h = x;
    for (int i = 0; i < 5; ++i) {
      h = leaky_relu(convs_[i].forward(h), 0.01f);
      if (mode.dropout_active)
        h = dropout(h, cfg_.dropout_rate, *mode.dropout_rng, true);
      h = maxpool1d(h, 2, 2);
    }
    h = reshape(h, {h.size(0), flatten_len_});
    return fc_.forward(h);  // no activation or dropout on the outputs
  }

  ParamSet& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  std::int64_t input_len() const { return input_len_; }
  std::int64_t flatten_len() const { return flatten_len_; }

 private:
  ModelConfig cfg_;
  std::int64_t input_len_ = 0;
  std::int64_t flatten_len_ = 0;
  std::array<Conv1dLayer, 5> convs_;
  DenseLayer fc_;
  ParamSet params_;
};

/// Splits classifier outputs into logit means and variances.
/// Raw third/fourth outputs are read as log-variance and exponentiated, so
/// sigma^2 stays positive; the raw values are clamped to keep exp finite.
inline std::pair<Tensor, Tensor> classifier_heads(const Tensor& out) {
  Tensor f = slice_cols(out, 0, 2);
  Tensor logvar = clamp(slice_cols(out, 2, 2), kLogVarMin, kLogVarMax);
  Tensor sigma = exp(mul_scalar(logvar, 0.5f));
  return {f, sigma};
}

/// One residual stage: conv(k9, s1) -> BN -> dropout -> ReLU,
/// conv(k9, s2) -> BN -> dropout, plus a 1x1 stride-2 conv + BN shortcut;
/// ReLU after the add.
struct ResBlock {
  Conv1dLayer conv1, conv2, down_conv;
  BatchNorm1dLayer bn1, bn2, down_bn;

  ResBlock() = default;
  ResBlock(std::int64_t c_in, std::int64_t c_out, RngStream& rng)
      : conv1(c_in, c_out, 9, 1, 4, rng),
        conv2(c_out, c_out, 9, 2, 4, rng),
        down_conv(c_in, c_out, 1, 2, 0, rng),
        bn1(c_out),
        bn2(c_out),
        down_bn(c_out) {}

  Tensor downsample_only(const Tensor& x, bool bn_training) {
    return down_bn.forward(down_conv.forward(x), bn_training);
  }

  Tensor forward(const Tensor& x, float rate, const ForwardMode& mode) {
    Tensor h = bn1.forward(conv1.forward(x), mode.bn_training);
    if (mode.dropout_active) h = dropout(h, rate, *mode.dropout_rng, true);
    h = relu(h);
    h = bn2.forward(conv2.forward(h), mode.bn_training);
    if (mode.dropout_active) h = dropout(h, rate, *mode.dropout_rng, true);
    return relu(add(h, downsample_only(x, mode.bn_training)));
  }

  void register_params(ParamSet& ps, const std::string& prefix) {
    conv1.register_params(ps, prefix + ".conv1");
    bn1.register_params(ps, prefix + ".bn1");
    conv2.register_params(ps, prefix + ".conv2");
    bn2.register_params(ps, prefix + ".bn2");
    down_conv.register_params(ps, prefix + ".down.conv");
    down_bn.register_params(ps, prefix + ".down.bn");
  }
};

/// Stem conv (kernel 7, stride 2, 64 maps) -> BN -> dropout -> ReLU ->
/// maxpool(3, 2, pad 1), then eight residual blocks with activation-map
/// schedule 64-64-128-128-256-256-1-1, average pooling to 100 bins per map,
/// and a dense head with four Softplus outputs
/// (mu_SBP, mu_DBP, sigma2_SBP, sigma2_DBP).
class ResNet1d {
 public:
  static constexpr std::array<std::int64_t, 8> kBlockChannels{
      64, 64, 128, 128, 256, 256, 1, 1};
  static constexpr std::int64_t kPooledLen = 100;

  /// Softplus-inverted so initial head outputs sit at physiological scale.
  static constexpr std::array<float, 4> kHeadInit{115.48f, 62.92f, 25.0f,
                                                  25.0f};

  ResNet1d(const ModelConfig& cfg, RngStream init_rng) : cfg_(cfg) {
    check_arg(cfg.head_count == 4,
              "regression network needs four heads (two means, two variances)");
    input_len_ = cfg.resolved_input_len();
    stem_ = Conv1dLayer(1, 64, 7, 2, 3, init_rng);
    stem_bn_ = BatchNorm1dLayer(64);
    std::int64_t len = conv1d_out_len(input_len_, 7, 2, 3);
    check_arg(len >= 1, "input too short for the stem convolution");
    len = (len + 2 - 3) / 2 + 1;  // maxpool k3 s2 pad 1
    std::int64_t c_in = 64;
    for (int i = 0; i < 8; ++i) {
      blocks_[i] = ResBlock(c_in, kBlockChannels[i], init_rng);
      c_in = kBlockChannels[i];
      len = conv1d_out_len(len, 9, 2, 4);
      check_arg(len >= 1, "input length " + std::to_string(input_len_) +
                              " too short for eight stride-2 blocks (fails "
                              "at block " +
                              std::to_string(i + 1) + ")");
    }
    final_len_ = len;
    head_ = DenseLayer(kBlockChannels[7] * kPooledLen, 4, init_rng);
    for (int i = 0; i < 4; ++i) {
      // inverse softplus: log(exp(y) - 1)
      const double y = kHeadInit[i];
      head_.b.data()[i] =
          static_cast<float>(y + std::log1p(-std::exp(-y)));
    }
    stem_.register_params(params_, "stem.conv");
    stem_bn_.register_params(params_, "stem.bn");
    for (int i = 0; i < 8; ++i)
      blocks_[i].register_params(params_, "block" + std::to_string(i + 1));
    head_.register_params(params_, "head");
  }

  /// x: (B, 1, L) -> (B, 4), all outputs strictly positive.
  Tensor forward(const Tensor& x, const ForwardMode& mode) {
    check_arg(x.shape().size() == 3 && x.size(1) == 1 &&
                  x.size(2) == input_len_,
              "regression network expects (B, 1, " +
                  std::to_string(input_len_) + "), got " +
                  shape_str(x.shape()));
    check_arg(!mode.dropout_active || mode.dropout_rng != nullptr,
              "dropout_active requires a dropout stream");
    Tensor h = stem_bn_.forward(stem_.forward(x), mode.bn_training);
    if (mode.dropout_active)
      h = dropout(h, cfg_.dropout_rate, *mode.dropout_rng, true);
    h = relu(h);
    h = maxpool1d(h, 3, 2, 1);
    for (auto& block : blocks_)
      h = block.forward(h, cfg_.dropout_rate, mode);
    h = avgpool1d(h, kPooledLen);
    h = reshape(h, {h.size(0), kBlockChannels[7] * kPooledLen});
    return softplus(head_.forward(h));
  }

  ParamSet& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  std::int64_t input_len() const { return input_len_; }
  std::int64_t final_len() const { return final_len_; }
  ResBlock& block(int i) { return blocks_.at(i); }

 private:
  ModelConfig cfg_;
  std::int64_t input_len_ = 0;
  std::int64_t final_len_ = 0;
  Conv1dLayer stem_;
  BatchNorm1dLayer stem_bn_;
  std::array<ResBlock, 8> blocks_;
  DenseLayer head_;
  ParamSet params_;
};

}  // namespace pulseuq::nn
