#pragma once

// Sparse convolutional autoencoder over 64x64 binary patches.
//
// Encoder: three 3x3 stride-2 convolutions (64 -> 32 -> 16 -> 8) with ReLU,
// flatten, linear projection to a d-dimensional latent (no activation).
// Decoder: linear expansion with ReLU, three 3x3 stride-2 transposed
// convolutions (8 -> 16 -> 32 -> 64), ReLU on hidden layers and a sigmoid
// on the reconstruction.
//
// Gradients are written out by hand. Training runs in float; loss and
// gradient evaluation for checks run the same kernels in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bob/pagegrid.hpp"

namespace bob {

struct EncoderArch {
  int d = 128;
  std::array<int, 3> conv_channels{16, 32, 64};
  int kernel = 3;
  int stride = 2;
  int padding = 1;

  void validate() const;
  int flatten_size() const { return conv_channels[2] * 8 * 8; }
  friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

void to_json(nlohmann::json& j, const EncoderArch& a);
void from_json(const nlohmann::json& j, EncoderArch& a);

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;  // row-major in `shape`

  std::size_t numel() const;
};

// Tensor order (and on-disk layout):
//   conv{1,2,3}.weight   [3, 3, Cin, Cout]     conv{1,2,3}.bias   [Cout]
//   enc_linear.weight    [flatten, d]          enc_linear.bias    [d]
//   dec_linear.weight    [d, flatten]          dec_linear.bias    [flatten]
//   deconv{3,2,1}.weight [Cin, 3, 3, Cout]     deconv{3,2,1}.bias [Cout]
// Flattened features are ordered (y, x, channel).
struct EncoderParams {
  EncoderArch arch;
  std::vector<NamedTensor> tensors;
  int version = 1;
  std::uint64_t rng_seed = 0;

  std::size_t parameter_count() const;
  const NamedTensor& tensor(const std::string& name) const;
  NamedTensor& tensor(const std::string& name);
  bool all_finite() const;
};

// Shapes only, every value zero.
EncoderParams zero_params(const EncoderArch& arch);
// Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight tensor, zero biases.
EncoderParams init_params(const EncoderArch& arch, std::uint64_t seed);

struct TrainConfig {
  double lambda_sparsity = 1e-5;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  int epochs = 50;
  std::size_t max_patches_per_image = 300;
  int early_stop_patience = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool sparsity_enabled = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Embedding {
  std::vector<float> vector;
  std::string page_id;
  int component_label = 0;
};

using Reconstruction = std::array<float, kPatchPixels>;

// Patches become {0.0, 1.0} inputs. Batch order is preserved.
std::vector<Embedding> encode(const EncoderParams& params, std::span<const Patch> batch);
std::vector<Reconstruction> decode(const EncoderParams& params,
                                   std::span<const std::vector<float>> latents);

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;     // mean over patches of the per-patch squared error sum
  double sparsity = 0.0;  // mean over patches of the latent L1 norm
};

LossTerms loss(const EncoderParams& params, std::span<const Patch> batch, const TrainConfig& cfg);
// Same, on arbitrary real-valued 64x64 inputs (row-major, one array per sample).
LossTerms loss_on_inputs(const EncoderParams& params, std::span<const Reconstruction> inputs,
                         const TrainConfig& cfg);
// Analytic gradient of the total loss in 64-bit, one vector per tensor.
std::vector<std::vector<double>> loss_gradient(const EncoderParams& params,
                                               std::span<const Reconstruction> inputs,
                                               const TrainConfig& cfg, LossTerms* terms = nullptr);

struct EpochRecord {
  int epoch = 0;
  double recon = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool early_stopped = false;
  std::size_t n_training_patches = 0;

  std::string to_jsonl() const;
};

struct TrainResult {
  EncoderParams params;
  TrainingLog log;
};

// Excluded pages are skipped. Throws DataError when no patch remains.
TrainResult train(std::span<const PageExtraction> pages, const TrainConfig& cfg,
                  const EncoderArch& arch, std::uint64_t seed);
// Trains on an explicit patch list (no per-page cap).
TrainResult train_on_patches(std::span<const Patch> patches, const TrainConfig& cfg,
                             const EncoderArch& arch, std::uint64_t seed);

// Max relative error between the analytic gradient of the total loss
// (64-bit backprop) and central finite differences on `n_coords` sampled
// parameters, spread round-robin over all tensors. The difference quotients
// are evaluated in extended precision so cancellation in a loss of order
// 1e3 does not swamp gradients of order 1e-5.
double grad_check(const EncoderParams& params, std::span<const Patch> batch,
                  const TrainConfig& cfg, double epsilon, std::size_t n_coords,
                  std::uint64_t seed = 0);

struct CoordinateCheck {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double step = 0.0;
  double rel_error = 0.0;
};

struct FiniteDifferenceReport {
  double max_rel_error = 0.0;
  std::vector<CoordinateCheck> coords;
  std::size_t n_checked = 0;
  std::size_t n_step_reduced = 0;  // coordinates whose step was shrunk
  std::size_t n_unresolved = 0;    // never found a kink-free step
};

// Central finite differences against an analytic gradient. `f(c, v)`
// evaluates the function with coordinate `c` set to `v` (all others at
// `x`) and returns {value, region id}; the region id identifies the piece
// of a piecewise-smooth function (ReLU on/off states, signs under |.|).
// When a +-h probe leaves the base region the step is divided by 4, down
// to `epsilon * 1e-4`, since a difference straddling a kink measures no
// derivative. Relative error is |a - n| / max(|a|, |n|); coordinates where
// both are exactly zero count as exact.
template <typename F>
FiniteDifferenceReport finite_difference_check(F&& f, std::span<const double> grad,
                                               std::span<const double> x, double epsilon,
                                               std::span<const std::size_t> coords) {
  FiniteDifferenceReport rep;
  if (coords.empty()) return rep;
  const std::uint64_t base_region = f(coords.front(), x[coords.front()]).second;
  for (std::size_t c : coords) {
    const double orig = x[c];
    double h = epsilon;
    bool resolved = false;
    double numeric = 0.0;
    for (; h >= epsilon * 1e-4; h /= 4.0) {
      const auto [fp, rp] = f(c, orig + h);
      const auto [fm, rm] = f(c, orig - h);
      if (rp == base_region && rm == base_region) {
        // Divide by the representable step actually taken.
        numeric = static_cast<double>((fp - fm) / ((orig + h) - (orig - h)));
        resolved = true;
        break;
      }
    }
    if (!resolved) {
      ++rep.n_unresolved;
      continue;
    }
    if (h < epsilon) ++rep.n_step_reduced;
    ++rep.n_checked;
    const double denom = std::max(std::abs(numeric), std::abs(grad[c]));
    const double rel = denom == 0.0 ? 0.0 : std::abs(numeric - grad[c]) / denom;
    rep.coords.push_back({c, grad[c], numeric, h, rel});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
  }
  return rep;
}

// Full report behind `grad_check`.
FiniteDifferenceReport grad_check_report(const EncoderParams& params, std::span<const Patch> batch,
                                         const TrainConfig& cfg, double epsilon,
                                         std::size_t n_coords, std::uint64_t seed = 0);

// Checkpoint: "BOBE", u32 version, u32 header-length, JSON header, raw f32.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const nlohmann::json& extra = {});
EncoderParams load_checkpoint(const std::filesystem::path& path, nlohmann::json* header = nullptr);

namespace layers {

// Single-sample reference entry points onto the batched kernels. Tensors are
// [C][H][W] row-major; weights use the EncoderParams layouts above.
std::vector<double> conv3x3_s2(const std::vector<double>& x, int cin, int h, int w,
                               const std::vector<double>& weight, const std::vector<double>& bias,
                               int cout);
std::vector<double> conv_transpose3x3_s2(const std::vector<double>& x, int cin, int h, int w,
                                         const std::vector<double>& weight,
                                         const std::vector<double>& bias, int cout);

}  // namespace layers

}  // namespace bob
