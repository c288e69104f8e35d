#include "falcnn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace mitodet {

namespace {

nn::Tensor random_tensor(Rng& rng, std::vector<int> shape, double sd) {
  nn::Tensor t(std::move(shape));
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

std::string stage(std::size_t i) { return "stage" + std::to_string(i); }
std::string mirror(std::size_t i) { return "feedback" + std::to_string(i); }

}  // namespace

void FalcnnConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "classifier config: " + what); };
  if (widths.size() != 3) bad("exactly three stages (two poolings) are required");
  for (int w : widths) {
    if (w <= 0) bad("widths must be positive");
  }
  if (input_size != kPatchSize) bad("input_size must be 56");
  if (num_classes != 2) bad("num_classes must be 2");
  if (feedback_cycles < 0) bad("feedback_cycles must be >= 0");
}

Falcnn::Falcnn(FalcnnConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    const int out = config_.widths[i];
    params_.add(stage(i) + ".w", random_tensor(rng, {out, in, 3, 3}, std::sqrt(2.0 / (in * 9))));
    params_.add(stage(i) + ".b", nn::Tensor({out}, 0.0));
    in = out;
  }
  params_.add("fc.w", random_tensor(rng, {config_.num_classes, in}, std::sqrt(1.0 / in)));
  params_.add("fc.b", nn::Tensor({config_.num_classes}, 0.0));
  // Mirror chain, deepest first: a 3x3 same-size map, then 2x upsampling per pooling.
  for (std::size_t i = config_.widths.size(); i-- > 0;) {
    const bool deepest = i + 1 == config_.widths.size();
    const int k = deepest ? 3 : 4;
    params_.add(mirror(i) + ".w", random_tensor(rng, {1, 1, k, k}, 0.3));
    params_.add(mirror(i) + ".b", nn::Tensor({1}, 0.0));
  }
}

void Falcnn::zero_feedback() {
  for (auto& p : params_.items()) {
    if (p.name.rfind("feedback", 0) == 0) p.var->value.fill(0.0);
  }
}

Falcnn::Pass Falcnn::feedforward(const nn::Var& x, const std::vector<nn::Var>* gates) const {
  Pass pass;
  nn::Var h = x;
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    if (i > 0) h = nn::max_pool2(h);
    h = nn::relu(nn::conv2d(h, params_.get(stage(i) + ".w"), params_.get(stage(i) + ".b"), 1, 1));
    if (gates) h = nn::attention_gate(h, (*gates)[i]);
    pass.features.push_back(h);
  }
  pass.logits = nn::linear(nn::global_avg_pool(h), params_.get("fc.w"), params_.get("fc.b"));
  return pass;
}

FalcnnTrace Falcnn::forward_graph(const nn::Var& patches) const {
  const auto& x = patches->value;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_size ||
      x.dim(3) != config_.input_size) {
    fail(ErrorCode::InvalidArgument,
         "classifier: expected [N,3,56,56] patches, got " + nn::shape_string(x.shape()));
  }
  FalcnnTrace trace;
  Pass pass = feedforward(patches, nullptr);
  trace.first_pass_logits = pass.logits;

  for (int cycle = 0; cycle < config_.feedback_cycles; ++cycle) {
    const nn::Tensor& logits = pass.logits->value;
    std::vector<int> predicted(logits.dim(0));
    for (int n = 0; n < logits.dim(0); ++n) {
      predicted[n] = logits[n * logits.dim(1) + 1] > logits[n * logits.dim(1)] ? 1 : 0;
    }
    nn::Var signal = nn::class_activation_map(pass.features.back(), params_.get("fc.w"), predicted);
    const std::size_t stages = config_.widths.size();
    std::vector<nn::Var> raw(stages), gates(stages);
    for (std::size_t i = stages; i-- > 0;) {
      const bool deepest = i + 1 == stages;
      signal = nn::conv_transpose2d(signal, params_.get(mirror(i) + ".w"),
                                    params_.get(mirror(i) + ".b"), deepest ? 1 : 2, 1);
      raw[i] = signal;
      gates[i] = nn::minmax_normalize(signal);
    }
    pass = feedforward(patches, &gates);
    trace.attention = std::move(gates);
    trace.raw_saliency = std::move(raw);
  }
  if (config_.feedback_cycles == 0) {
    for (const auto& f : pass.features) {
      trace.attention.push_back(nn::constant(
          nn::Tensor({f->value.dim(0), 1, f->value.dim(2), f->value.dim(3)}, 0.0)));
    }
  }
  trace.logits = pass.logits;
  return trace;
}

nn::Tensor patch_batch(const std::vector<const Patch*>& patches) {
  if (patches.empty()) fail(ErrorCode::InvalidArgument, "patch_batch: empty batch");
  const int s = patches[0]->size;
  nn::Tensor t({static_cast<int>(patches.size()), 3, s, s});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const Patch& p = *patches[n];
    if (p.size != s || p.pixels.size() != static_cast<std::size_t>(s) * s * 3) {
      fail(ErrorCode::InvalidArgument, "patch_batch: inconsistent patch size");
    }
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          t.at(static_cast<int>(n), c, y, x) = p.pixels[(static_cast<std::size_t>(y) * s + x) * 3 + c];
        }
      }
    }
  }
  return t;
}

std::vector<FalcnnOutput> Falcnn::infer(const std::vector<const Patch*>& patches) const {
  if (patches.empty()) return {};
  nn::NoGradGuard no_grad;
  FalcnnTrace trace = forward_graph(nn::constant(patch_batch(patches)));
  const nn::Tensor& logits = trace.logits->value;
  const int k = logits.dim(1);
  std::vector<FalcnnOutput> out(patches.size());
  for (std::size_t n = 0; n < patches.size(); ++n) {
    FalcnnOutput& o = out[n];
    o.logits.assign(logits.data() + n * k, logits.data() + (n + 1) * k);
    const double zmax = *std::max_element(o.logits.begin(), o.logits.end());
    double denom = 0.0;
    for (double z : o.logits) denom += std::exp(z - zmax);
    o.p_mitosis = std::exp(o.logits[static_cast<int>(Label::Mitotic)] - zmax) / denom;
    for (const auto& a : trace.attention) {
      const int h = a->value.dim(2), w = a->value.dim(3);
      nn::Tensor map({h, w});
      std::copy_n(a->value.data() + n * static_cast<std::size_t>(h) * w,
                  static_cast<std::size_t>(h) * w, map.data());
      o.attention_maps.push_back(std::move(map));
    }
  }
  return out;
}

FalcnnOutput Falcnn::infer(const Patch& patch) const { return infer({&patch}).front(); }

nn::Tensor normalize_attention(const nn::Tensor& raw) {
  for (double v : raw.values()) {
    if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "normalize_attention: non-finite value");
  }
  std::vector<int> shape4{1, 1, 1, static_cast<int>(raw.size())};
  if (raw.rank() == 2) shape4 = {1, 1, raw.dim(0), raw.dim(1)};
  nn::Tensor t(shape4);
  std::copy(raw.values().begin(), raw.values().end(), t.data());
  nn::NoGradGuard no_grad;
  nn::Tensor out = nn::minmax_normalize(nn::constant(std::move(t)))->value;
  nn::Tensor result(raw.shape());
  std::copy(out.values().begin(), out.values().end(), result.data());
  return result;
}

double falcnn_loss(const nn::Tensor& logits, const std::vector<int>& labels) {
  nn::NoGradGuard no_grad;
  return nn::softmax_cross_entropy(nn::constant(logits), labels)->value[0];
}

}  // namespace mitodet
