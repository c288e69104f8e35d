#pragma once

#include <cstdint>
#include <vector>

#include "dataset.hpp"
#include "nn.hpp"

namespace mitodet {

struct FalcnnConfig {
  int input_size = kPatchSize;
  std::vector<int> widths{16, 32, 64};  // 2x pooling between stages
  int num_classes = 2;
  int feedback_cycles = 1;

  void validate() const;
};

struct FalcnnOutput {
  double p_mitosis = 0.0;
  std::vector<double> logits;
  // Normalized per-stage maps, shallowest first; the last one is 14x14.
  std::vector<nn::Tensor> attention_maps;

  const nn::Tensor& deepest_attention() const { return attention_maps.back(); }
};

// Graph-level view of one batched forward pass.
struct FalcnnTrace {
  nn::Var logits;                    // final pass, [N, num_classes]
  nn::Var first_pass_logits;         // plain feedforward, [N, num_classes]
  std::vector<nn::Var> attention;    // final cycle's normalized maps, [N,1,H,W] each
  std::vector<nn::Var> raw_saliency; // final cycle's raw maps
};

class Falcnn {
 public:
  Falcnn(FalcnnConfig config, std::uint64_t seed);

  const FalcnnConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  FalcnnTrace forward_graph(const nn::Var& patches) const;
  std::vector<FalcnnOutput> infer(const std::vector<const Patch*>& patches) const;
  FalcnnOutput infer(const Patch& patch) const;

  // Sets every feedback-path parameter to zero.
  void zero_feedback();

 private:
  struct Pass {
    nn::Var logits;
    std::vector<nn::Var> features;  // gated stage activations before pooling
  };
  Pass feedforward(const nn::Var& x, const std::vector<nn::Var>* gates) const;

  FalcnnConfig config_;
  nn::ParamSet params_;
};

nn::Tensor patch_batch(const std::vector<const Patch*>& patches);

// (v - min) / (max - min) over a whole map; constant maps become zeros.
nn::Tensor normalize_attention(const nn::Tensor& raw);

// Mean cross entropy of softmax(logits) against labels.
double falcnn_loss(const nn::Tensor& logits, const std::vector<int>& labels);

}  // namespace mitodet
