#include "bob/encoder.hpp"

#include <Eigen/Dense>

#include <limits>
#include <utility>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"

namespace bob {
namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

enum TensorId : int {
  kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B,
  kEncW, kEncB, kDecW, kDecB,
  kDeconv3W, kDeconv3B, kDeconv2W, kDeconv2B, kDeconv1W, kDeconv1B,
  kNumTensors
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  int fan_in = 0;
  int fan_out = 0;
  bool is_bias = false;
};

std::vector<TensorSpec> tensor_specs(const EncoderArch& a) {
  const int c1 = a.conv_channels[0], c2 = a.conv_channels[1], c3 = a.conv_channels[2];
  const int flat = a.flatten_size();
  return {
      {"conv1.weight", {3, 3, 1, c1}, 9, 9 * c1, false},
      {"conv1.bias", {c1}, 0, 0, true},
      {"conv2.weight", {3, 3, c1, c2}, 9 * c1, 9 * c2, false},
      {"conv2.bias", {c2}, 0, 0, true},
      {"conv3.weight", {3, 3, c2, c3}, 9 * c2, 9 * c3, false},
      {"conv3.bias", {c3}, 0, 0, true},
      {"enc_linear.weight", {flat, a.d}, flat, a.d, false},
      {"enc_linear.bias", {a.d}, 0, 0, true},
      {"dec_linear.weight", {a.d, flat}, a.d, flat, false},
      {"dec_linear.bias", {flat}, 0, 0, true},
      {"deconv3.weight", {c3, 3, 3, c2}, 9 * c3, 9 * c2, false},
      {"deconv3.bias", {c2}, 0, 0, true},
      {"deconv2.weight", {c2, 3, 3, c1}, 9 * c2, 9 * c1, false},
      {"deconv2.bias", {c1}, 0, 0, true},
      {"deconv1.weight", {c1, 3, 3, 1}, 9 * c1, 9, false},
      {"deconv1.bias", {1}, 0, 0, true},
  };
}

// 3x3, stride 2, pad 1 windows between a big x big grid and a (big/2)^2 grid.
// Activations are (channels, batch*pixels) column-major, so each pixel's
// channel vector is contiguous. Column rows are ordered (ky, kx, channel).
template <typename S>
void im2col(const S* x, int channels, int big, Index batch, Mat<S>& col) {
  const int small = big / 2;
  col.resize(9 * channels, batch * small * small);
  const std::size_t run = static_cast<std::size_t>(channels);
  for (Index b = 0; b < batch; ++b) {
    for (int sy = 0; sy < small; ++sy) {
      for (int sx = 0; sx < small; ++sx) {
        S* dst = col.data() + ((b * small + sy) * small + sx) * col.rows();
        for (int ky = 0; ky < 3; ++ky) {
          const int by = 2 * sy - 1 + ky;
          for (int kx = 0; kx < 3; ++kx) {
            const int bx = 2 * sx - 1 + kx;
            S* out = dst + (ky * 3 + kx) * channels;
            if (channels == 1) {
              *out = (by < 0 || by >= big || bx < 0 || bx >= big) ? S(0)
                                                                  : x[(b * big + by) * big + bx];
            } else if (by < 0 || by >= big || bx < 0 || bx >= big) {
              std::fill_n(out, run, S(0));
            } else {
              std::copy_n(x + ((b * big + by) * big + bx) * channels, run, out);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the big grid.
template <typename S>
void col2im(const Mat<S>& col, int channels, int big, Index batch, S* y) {
  const int small = big / 2;
  for (Index b = 0; b < batch; ++b) {
    for (int sy = 0; sy < small; ++sy) {
      for (int sx = 0; sx < small; ++sx) {
        const S* src = col.data() + ((b * small + sy) * small + sx) * col.rows();
        for (int ky = 0; ky < 3; ++ky) {
          const int by = 2 * sy - 1 + ky;
          if (by < 0 || by >= big) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int bx = 2 * sx - 1 + kx;
            if (bx < 0 || bx >= big) continue;
            S* dst = y + ((b * big + by) * big + bx) * channels;
            const S* s = src + (ky * 3 + kx) * channels;
            for (int c = 0; c < channels; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
}

template <typename S>
void relu_inplace(Mat<S>& m) {
  m = m.cwiseMax(S(0));
}

template <typename S>
void relu_mask(Mat<S>& grad, const Mat<S>& act) {
  grad.array() *= (act.array() > S(0)).template cast<S>();
}

template <typename S>
struct Cache {
  Mat<S> col1, a1, col2, a2, col3, a3;
  Mat<S> latent, hidden, g1, g2, out;
};

template <typename S>
class Network {
 public:
  explicit Network(const EncoderArch& arch, std::vector<Vec<S>> weights)
      : c1_(arch.conv_channels[0]),
        c2_(arch.conv_channels[1]),
        c3_(arch.conv_channels[2]),
        d_(arch.d),
        flat_(arch.flatten_size()),
        w_(std::move(weights)) {}

  static Network from_params(const EncoderParams& p) {
    std::vector<Vec<S>> w;
    for (const auto& t : p.tensors)
      w.push_back(Eigen::Map<const Vec<float>>(t.values.data(), static_cast<Index>(t.values.size()))
                      .template cast<S>());
    return Network(p.arch, std::move(w));
  }

  // input: (4096, B) column-major, one patch per column.
  void encode(const Mat<S>& input, Cache<S>& c) const {
    const Index batch = input.cols();
    im2col(input.data(), 1, 64, batch, c.col1);
    c.a1.noalias() = W(kConv1W, c1_, 9) * c.col1;
    c.a1.colwise() += w_[kConv1B];
    relu_inplace(c.a1);
    im2col(c.a1.data(), c1_, 32, batch, c.col2);
    c.a2.noalias() = W(kConv2W, c2_, 9 * c1_) * c.col2;
    c.a2.colwise() += w_[kConv2B];
    relu_inplace(c.a2);
    im2col(c.a2.data(), c2_, 16, batch, c.col3);
    c.a3.noalias() = W(kConv3W, c3_, 9 * c2_) * c.col3;
    c.a3.colwise() += w_[kConv3B];
    relu_inplace(c.a3);
    const Eigen::Map<const Mat<S>> flat(c.a3.data(), flat_, batch);
    c.latent.noalias() = W(kEncW, d_, flat_) * flat;
    c.latent.colwise() += w_[kEncB];
  }

  void decode(Cache<S>& c) const {
    const Index batch = c.latent.cols();
    c.hidden.noalias() = W(kDecW, flat_, d_) * c.latent;
    c.hidden.colwise() += w_[kDecB];
    relu_inplace(c.hidden);
    const Eigen::Map<const Mat<S>> g0(c.hidden.data(), c3_, batch * 64);

    Mat<S> col;
    col.noalias() = W(kDeconv3W, 9 * c2_, c3_) * g0;
    c.g1.setZero(c2_, batch * 256);
    col2im(col, c2_, 16, batch, c.g1.data());
    c.g1.colwise() += w_[kDeconv3B];
    relu_inplace(c.g1);

    col.noalias() = W(kDeconv2W, 9 * c1_, c2_) * c.g1;
    c.g2.setZero(c1_, batch * 1024);
    col2im(col, c1_, 32, batch, c.g2.data());
    c.g2.colwise() += w_[kDeconv2B];
    relu_inplace(c.g2);

    col.noalias() = W(kDeconv1W, 9, c1_) * c.g2;
    c.out.setZero(1, batch * 4096);
    col2im(col, 1, 64, batch, c.out.data());
    c.out.array() += w_[kDeconv1B](0);
    c.out = (S(1) / (S(1) + (-c.out.array()).exp())).matrix();
  }

  // Loss terms in double; fills `grads` (same layout as weights) if given.
  LossTerms forward_backward(const Mat<S>& input, double lambda, bool sparsity_enabled,
                             std::vector<Vec<S>>* grads, std::uint64_t* pattern = nullptr,
                             long double* total_wide = nullptr) const {
    Cache<S> c;
    encode(input, c);
    decode(c);
    if (pattern) *pattern = activation_pattern(c);
    const Index batch = input.cols();
    const Eigen::Map<const Mat<S>> target(input.data(), 1, batch * 4096);

    using Acc = long double;
    Acc sq = 0.0L;
    for (Index i = 0; i < c.out.size(); ++i) {
      const Acc e = static_cast<Acc>(c.out(i)) - static_cast<Acc>(target(i));
      sq += e * e;
    }
    Acc l1 = 0.0L;
    for (Index i = 0; i < c.latent.size(); ++i) l1 += std::abs(static_cast<Acc>(c.latent(i)));

    const Acc recon = sq / static_cast<Acc>(batch);
    const Acc sparsity = l1 / static_cast<Acc>(batch);
    const Acc total = recon + (sparsity_enabled ? static_cast<Acc>(lambda) * sparsity : 0.0L);
    if (total_wide) *total_wide = total;
    LossTerms terms;
    terms.recon = static_cast<double>(recon);
    terms.sparsity = static_cast<double>(sparsity);
    terms.total = static_cast<double>(total);
    if (grads == nullptr) return terms;

    auto& g = *grads;
    g.resize(kNumTensors);
    for (int i = 0; i < kNumTensors; ++i) g[i].resize(w_[i].size());
    auto G = [&](int id, Index rows, Index cols) {
      return Eigen::Map<Mat<S>>(g[id].data(), rows, cols);
    };
    const S inv_b = S(1) / static_cast<S>(batch);

    // d/d(pre-sigmoid)
    Mat<S> dout = (S(2) * inv_b) * (c.out - target);
    dout.array() *= c.out.array() * (S(1) - c.out.array());
    g[kDeconv1B](0) = dout.sum();

    Mat<S> dcol;
    im2col(dout.data(), 1, 64, batch, dcol);
    G(kDeconv1W, 9, c1_).noalias() = dcol * c.g2.transpose();
    Mat<S> dg2 = W(kDeconv1W, 9, c1_).transpose() * dcol;
    relu_mask(dg2, c.g2);
    g[kDeconv2B] = dg2.rowwise().sum();

    im2col(dg2.data(), c1_, 32, batch, dcol);
    G(kDeconv2W, 9 * c1_, c2_).noalias() = dcol * c.g1.transpose();
    Mat<S> dg1 = W(kDeconv2W, 9 * c1_, c2_).transpose() * dcol;
    relu_mask(dg1, c.g1);
    g[kDeconv3B] = dg1.rowwise().sum();

    im2col(dg1.data(), c2_, 16, batch, dcol);
    const Eigen::Map<const Mat<S>> g0(c.hidden.data(), c3_, batch * 64);
    G(kDeconv3W, 9 * c2_, c3_).noalias() = dcol * g0.transpose();
    Mat<S> dh(flat_, batch);
    Eigen::Map<Mat<S>>(dh.data(), c3_, batch * 64).noalias() =
        W(kDeconv3W, 9 * c2_, c3_).transpose() * dcol;
    relu_mask(dh, c.hidden);
    g[kDecB] = dh.rowwise().sum();
    G(kDecW, flat_, d_).noalias() = dh * c.latent.transpose();

    Mat<S> dlat = W(kDecW, flat_, d_).transpose() * dh;
    if (sparsity_enabled && lambda != 0.0) {
      // Subgradient of |z| at 0 is taken as 0.
      dlat.array() += (static_cast<S>(lambda) * inv_b) * c.latent.array().sign();
    }
    g[kEncB] = dlat.rowwise().sum();
    const Eigen::Map<const Mat<S>> flat(c.a3.data(), flat_, batch);
    G(kEncW, d_, flat_).noalias() = dlat * flat.transpose();

    Mat<S> da3(c3_, batch * 64);
    Eigen::Map<Mat<S>>(da3.data(), flat_, batch).noalias() = W(kEncW, d_, flat_).transpose() * dlat;
    relu_mask(da3, c.a3);
    g[kConv3B] = da3.rowwise().sum();
    G(kConv3W, c3_, 9 * c2_).noalias() = da3 * c.col3.transpose();

    dcol.noalias() = W(kConv3W, c3_, 9 * c2_).transpose() * da3;
    Mat<S> da2 = Mat<S>::Zero(c2_, batch * 256);
    col2im(dcol, c2_, 16, batch, da2.data());
    relu_mask(da2, c.a2);
    g[kConv2B] = da2.rowwise().sum();
    G(kConv2W, c2_, 9 * c1_).noalias() = da2 * c.col2.transpose();

    dcol.noalias() = W(kConv2W, c2_, 9 * c1_).transpose() * da2;
    Mat<S> da1 = Mat<S>::Zero(c1_, batch * 1024);
    col2im(dcol, c1_, 32, batch, da1.data());
    relu_mask(da1, c.a1);
    g[kConv1B] = da1.rowwise().sum();
    G(kConv1W, c1_, 9).noalias() = da1 * c.col1.transpose();
    return terms;
  }

  // Hash of every ReLU on/off state and latent sign: the linear region of
  // the loss. Finite differences are only meaningful inside one region.
  static std::uint64_t activation_pattern(const Cache<S>& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Mat<S>& m) {
      for (Index i = 0; i < m.size(); ++i) {
        h ^= m(i) > S(0) ? 1u : (m(i) < S(0) ? 2u : 3u);
        h *= 0x100000001b3ULL;
      }
    };
    mix(c.a1);
    mix(c.a2);
    mix(c.a3);
    mix(c.latent);
    mix(c.hidden);
    mix(c.g1);
    mix(c.g2);
    return h;
  }

  std::vector<Vec<S>>& weights() { return w_; }
  const std::vector<Vec<S>>& weights() const { return w_; }

 private:
  Eigen::Map<const Mat<S>> W(int id, Index rows, Index cols) const {
    return Eigen::Map<const Mat<S>>(w_[id].data(), rows, cols);
  }

  int c1_, c2_, c3_, d_, flat_;
  std::vector<Vec<S>> w_;
};

template <typename S, typename Range>
Mat<S> patches_to_input(const Range& patches) {
  Mat<S> m(kPatchPixels, static_cast<Index>(std::size(patches)));
  Index j = 0;
  for (const auto& p : patches) {
    for (int i = 0; i < kPatchPixels; ++i) m(i, j) = static_cast<S>(p.data[static_cast<std::size_t>(i)]);
    ++j;
  }
  return m;
}

template <typename S>
Mat<S> arrays_to_input(std::span<const Reconstruction> inputs) {
  Mat<S> m(kPatchPixels, static_cast<Index>(inputs.size()));
  for (std::size_t j = 0; j < inputs.size(); ++j)
    for (int i = 0; i < kPatchPixels; ++i) m(i, static_cast<Index>(j)) = static_cast<S>(inputs[j][static_cast<std::size_t>(i)]);
  return m;
}

void check_params(const EncoderParams& p) {
  p.arch.validate();
  const auto specs = tensor_specs(p.arch);
  if (p.tensors.size() != specs.size())
    throw DataError("encoder params: expected " + std::to_string(specs.size()) + " tensors");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& t = p.tensors[i];
    if (t.name != specs[i].name || t.shape != specs[i].shape || t.values.size() != t.numel())
      throw DataError("encoder params: tensor '" + t.name + "' does not match architecture");
  }
}

constexpr std::size_t kEncodeChunk = 32;
constexpr std::size_t kTrainChunk = 16;

}  // namespace

void EncoderArch::validate() const {
  if (d < 1) throw ConfigError("encoder: latent dimension d must be >= 1");
  for (int c : conv_channels)
    if (c < 1) throw ConfigError("encoder: conv channel counts must be >= 1");
  if (kernel != 3 || stride != 2 || padding != 1)
    throw ConfigError("encoder: only kernel=3, stride=2, padding=1 is supported");
}

void to_json(nlohmann::json& j, const EncoderArch& a) {
  j = {{"d", a.d},
       {"conv_channels", a.conv_channels},
       {"kernel", a.kernel},
       {"stride", a.stride},
       {"padding", a.padding}};
}

void from_json(const nlohmann::json& j, EncoderArch& a) {
  EncoderArch def;
  a.d = j.value("d", def.d);
  a.conv_channels = j.value("conv_channels", def.conv_channels);
  a.kernel = j.value("kernel", def.kernel);
  a.stride = j.value("stride", def.stride);
  a.padding = j.value("padding", def.padding);
}

std::size_t NamedTensor::numel() const {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

const NamedTensor& EncoderParams::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("encoder params: no tensor named '" + name + "'");
}

NamedTensor& EncoderParams::tensor(const std::string& name) {
  return const_cast<NamedTensor&>(std::as_const(*this).tensor(name));
}

bool EncoderParams::all_finite() const {
  for (const auto& t : tensors)
    for (float v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

EncoderParams zero_params(const EncoderArch& arch) {
  arch.validate();
  EncoderParams p;
  p.arch = arch;
  for (auto& s : tensor_specs(arch)) {
    NamedTensor t{s.name, s.shape, {}};
    t.values.assign(t.numel(), 0.0f);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

EncoderParams init_params(const EncoderArch& arch, std::uint64_t seed) {
  EncoderParams p = zero_params(arch);
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  const auto specs = tensor_specs(arch);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].is_bias) continue;
    const double bound = std::sqrt(6.0 / (specs[i].fan_in + specs[i].fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& v : p.tensors[i].values) v = static_cast<float>(dist(rng));
  }
  return p;
}

void TrainConfig::validate() const {
  if (lambda_sparsity < 0.0) throw ConfigError("train: lambda_sparsity must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be > 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (max_patches_per_image == 0) throw ConfigError("train: max_patches_per_image must be > 0");
  if (early_stop_patience < 0) throw ConfigError("train: early_stop_patience must be >= 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in (0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda_sparsity", c.lambda_sparsity},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"max_patches_per_image", c.max_patches_per_image},
       {"early_stop_patience", c.early_stop_patience},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed},
       {"sparsity_enabled", c.sparsity_enabled}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lambda_sparsity = j.value("lambda_sparsity", d.lambda_sparsity);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.max_patches_per_image = j.value("max_patches_per_image", d.max_patches_per_image);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
  c.sparsity_enabled = j.value("sparsity_enabled", d.sparsity_enabled);
}

std::vector<Embedding> encode(const EncoderParams& params, std::span<const Patch> batch) {
  check_params(params);
  const auto net = Network<float>::from_params(params);
  std::vector<Embedding> out;
  out.reserve(batch.size());
  Cache<float> cache;
  for (std::size_t start = 0; start < batch.size(); start += kEncodeChunk) {
    const auto chunk = batch.subspan(start, std::min(kEncodeChunk, batch.size() - start));
    // Every chunk is padded to the same width so a patch's embedding does
    // not depend on how many others share its GEMM.
    Mat<float> input = Mat<float>::Zero(kPatchPixels, static_cast<Index>(kEncodeChunk));
    input.leftCols(static_cast<Index>(chunk.size())) = patches_to_input<float>(chunk);
    net.encode(input, cache);
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      Embedding e;
      e.page_id = chunk[j].page_id;
      e.component_label = chunk[j].component_label;
      const auto col = cache.latent.col(static_cast<Index>(j));
      e.vector.assign(col.data(), col.data() + col.size());
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<Reconstruction> decode(const EncoderParams& params,
                                   std::span<const std::vector<float>> latents) {
  check_params(params);
  const auto net = Network<float>::from_params(params);
  std::vector<Reconstruction> out;
  out.reserve(latents.size());
  Cache<float> cache;
  for (std::size_t start = 0; start < latents.size(); start += kEncodeChunk) {
    const std::size_t n = std::min(kEncodeChunk, latents.size() - start);
    cache.latent.setZero(params.arch.d, static_cast<Index>(kEncodeChunk));
    for (std::size_t j = 0; j < n; ++j) {
      const auto& z = latents[start + j];
      if (z.size() != static_cast<std::size_t>(params.arch.d))
        throw DataError("decode: latent has dimension " + std::to_string(z.size()) +
                        ", expected " + std::to_string(params.arch.d));
      for (int i = 0; i < params.arch.d; ++i) cache.latent(i, static_cast<Index>(j)) = z[static_cast<std::size_t>(i)];
    }
    net.decode(cache);
    for (std::size_t j = 0; j < n; ++j) {
      Reconstruction r;
      std::copy_n(cache.out.data() + j * kPatchPixels, kPatchPixels, r.begin());
      out.push_back(r);
    }
  }
  return out;
}

LossTerms loss(const EncoderParams& params, std::span<const Patch> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw DataError("loss: empty batch");
  check_params(params);
  const auto net = Network<double>::from_params(params);
  return net.forward_backward(patches_to_input<double>(batch), cfg.lambda_sparsity,
                              cfg.sparsity_enabled, nullptr);
}

LossTerms loss_on_inputs(const EncoderParams& params, std::span<const Reconstruction> inputs,
                         const TrainConfig& cfg) {
  if (inputs.empty()) throw DataError("loss: empty batch");
  check_params(params);
  const auto net = Network<double>::from_params(params);
  return net.forward_backward(arrays_to_input<double>(inputs), cfg.lambda_sparsity,
                              cfg.sparsity_enabled, nullptr);
}

std::vector<std::vector<double>> loss_gradient(const EncoderParams& params,
                                               std::span<const Reconstruction> inputs,
                                               const TrainConfig& cfg, LossTerms* terms) {
  if (inputs.empty()) throw DataError("loss: empty batch");
  check_params(params);
  const auto net = Network<double>::from_params(params);
  std::vector<Vec<double>> g;
  const auto t = net.forward_backward(arrays_to_input<double>(inputs), cfg.lambda_sparsity,
                                      cfg.sparsity_enabled, &g);
  if (terms) *terms = t;
  std::vector<std::vector<double>> out;
  for (const auto& v : g) out.emplace_back(v.data(), v.data() + v.size());
  return out;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"recon", r.recon}, {"sparsity", r.sparsity}, {"total", r.total}, {"lr", r.lr}};
}

std::string TrainingLog::to_jsonl() const {
  std::string s;
  for (const auto& e : epochs) s += nlohmann::json(e).dump() + "\n";
  return s;
}

TrainResult train_on_patches(std::span<const Patch> patches, const TrainConfig& cfg,
                             const EncoderArch& arch, std::uint64_t seed) {
  cfg.validate();
  arch.validate();
  if (patches.empty()) throw DataError("train: empty training set");

  TrainResult result;
  result.params = init_params(arch, seed);
  result.log.n_training_patches = patches.size();
  auto net = Network<float>::from_params(result.params);
  auto& w = net.weights();

  std::vector<Vec<float>> m1, m2;
  for (const auto& t : w) {
    m1.push_back(Vec<float>::Zero(t.size()));
    m2.push_back(Vec<float>::Zero(t.size()));
  }
  std::vector<Vec<float>> best = w;
  double best_recon = std::numeric_limits<double>::infinity();
  int wait = 0;
  long step = 0;

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Mat<float> input, chunk;
  std::vector<Vec<float>> grads, chunk_grads;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double recon_sum = 0.0, sparsity_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      input.resize(kPatchPixels, static_cast<Index>(n));
      for (std::size_t j = 0; j < n; ++j) {
        const auto& p = patches[order[start + j]];
        for (int i = 0; i < kPatchPixels; ++i) input(i, static_cast<Index>(j)) = p.data[static_cast<std::size_t>(i)];
      }
      // Sub-batches keep the column buffers cache-resident; the chunk
      // gradients are averaged back to the full-batch mean.
      for (auto& g : grads) g.setZero();
      for (std::size_t c0 = 0; c0 < n; c0 += kTrainChunk) {
        const std::size_t nc = std::min(kTrainChunk, n - c0);
        chunk = input.middleCols(static_cast<Index>(c0), static_cast<Index>(nc));
        const auto terms =
            net.forward_backward(chunk, cfg.lambda_sparsity, cfg.sparsity_enabled, &chunk_grads);
        const float wgt = static_cast<float>(nc) / static_cast<float>(n);
        if (grads.empty())
          for (const auto& g : chunk_grads) grads.push_back(Vec<float>::Zero(g.size()));
        for (std::size_t t = 0; t < grads.size(); ++t) grads[t] += wgt * chunk_grads[t];
        recon_sum += terms.recon * static_cast<double>(nc);
        sparsity_sum += terms.sparsity * static_cast<double>(nc);
      }

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      const float b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
      const float step_size = static_cast<float>(cfg.lr / bc1);
      const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
      const float eps = static_cast<float>(cfg.adam_eps);
      for (std::size_t t = 0; t < w.size(); ++t) {
        m1[t] = b1 * m1[t] + (1.0f - b1) * grads[t];
        m2[t] = b2 * m2[t] + (1.0f - b2) * grads[t].cwiseProduct(grads[t]);
        w[t].array() -= step_size * m1[t].array() /
                        ((m2[t].array().sqrt() * inv_sqrt_bc2) + eps);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.recon = recon_sum / static_cast<double>(order.size());
    rec.sparsity = sparsity_sum / static_cast<double>(order.size());
    rec.total = rec.recon + (cfg.sparsity_enabled ? cfg.lambda_sparsity * rec.sparsity : 0.0);
    rec.lr = cfg.lr;
    result.log.epochs.push_back(rec);

    if (rec.recon < best_recon) {
      best_recon = rec.recon;
      best = w;
      result.log.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= cfg.early_stop_patience) {
      result.log.early_stopped = true;
      break;
    }
  }

  for (std::size_t t = 0; t < best.size(); ++t)
    std::copy_n(best[t].data(), best[t].size(), result.params.tensors[t].values.data());
  result.params.rng_seed = seed;
  return result;
}

TrainResult train(std::span<const PageExtraction> pages, const TrainConfig& cfg,
                  const EncoderArch& arch, std::uint64_t seed) {
  cfg.validate();
  std::vector<Patch> pool;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const auto& page = pages[i];
    if (page.excluded) continue;
    std::vector<std::size_t> idx(page.patches.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > cfg.max_patches_per_image) {
      std::mt19937_64 rng(seed * 0x100000001b3ULL + i + 1);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(cfg.max_patches_per_image);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t k : idx) pool.push_back(page.patches[k]);
  }
  if (pool.empty()) throw DataError("train: empty training set (no patches on non-excluded pages)");
  return train_on_patches(pool, cfg, arch, seed);
}

FiniteDifferenceReport grad_check_report(const EncoderParams& params, std::span<const Patch> batch,
                                         const TrainConfig& cfg, double epsilon,
                                         std::size_t n_coords, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be > 0");
  if (batch.empty()) throw DataError("grad_check: empty batch");
  check_params(params);
  const auto input = patches_to_input<double>(batch);

  std::vector<std::size_t> offsets;
  std::vector<double> flat;
  for (const auto& t : params.tensors) {
    offsets.push_back(flat.size());
    flat.insert(flat.end(), t.values.begin(), t.values.end());
  }
  offsets.push_back(flat.size());

  std::vector<Vec<double>> base;
  for (const auto& t : params.tensors)
    base.push_back(Eigen::Map<const Vec<float>>(t.values.data(), static_cast<Index>(t.values.size()))
                       .cast<double>());

  Network<double> net(params.arch, base);
  std::vector<Vec<double>> g;
  net.forward_backward(input, cfg.lambda_sparsity, cfg.sparsity_enabled, &g);
  std::vector<double> grad;
  for (const auto& v : g) grad.insert(grad.end(), v.data(), v.data() + v.size());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> coords;
  const std::size_t n_tensors = params.tensors.size();
  for (std::size_t i = 0; i < n_coords; ++i) {
    const std::size_t t = i % n_tensors;
    std::uniform_int_distribution<std::size_t> pick(offsets[t], offsets[t + 1] - 1);
    coords.push_back(pick(rng));
  }

  using Wide = long double;
  std::vector<Vec<Wide>> wide;
  for (const auto& v : base) wide.push_back(v.cast<Wide>());
  Network<Wide> probe(params.arch, std::move(wide));
  const Mat<Wide> wide_input = input.cast<Wide>();
  auto f = [&](std::size_t c, double value) {
    const auto t = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), c) - offsets.begin() - 1);
    auto& slot = probe.weights()[t](static_cast<Index>(c - offsets[t]));
    const Wide saved = slot;
    slot = static_cast<Wide>(value);
    std::uint64_t region = 0;
    long double v = 0.0L;
    probe.forward_backward(wide_input, cfg.lambda_sparsity, cfg.sparsity_enabled, nullptr, &region,
                           &v);
    slot = saved;
    return std::pair<long double, std::uint64_t>{v, region};
  };
  return finite_difference_check(f, grad, flat, epsilon, coords);
}

double grad_check(const EncoderParams& params, std::span<const Patch> batch,
                  const TrainConfig& cfg, double epsilon, std::size_t n_coords,
                  std::uint64_t seed) {
  return grad_check_report(params, batch, cfg, epsilon, n_coords, seed).max_rel_error;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const nlohmann::json& extra) {
  check_params(params);
  nlohmann::json header;
  header["arch"] = params.arch;
  header["version"] = params.version;
  header["seed"] = params.rng_seed;
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : params.tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size() * sizeof(float);
  }
  header["tensors"] = manifest;
  if (!extra.is_null())
    for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();

  io::Writer w;
  w.magic("BOBE");
  w.u32(1);
  w.json_header(header);
  for (const auto& t : params.tensors) w.f32s(t.values);
  w.save(path);
}

EncoderParams load_checkpoint(const std::filesystem::path& path, nlohmann::json* header_out) {
  auto r = io::Reader::open(path);
  r.expect_magic("BOBE");
  const auto version = r.u32();
  if (version != 1) throw DataError("unsupported checkpoint version in " + path.string());
  const auto header = r.json_header();
  EncoderParams p;
  try {
    p.arch = header.at("arch").get<EncoderArch>();
    p.version = header.value("version", 1);
    p.rng_seed = header.value("seed", std::uint64_t{0});
    for (const auto& t : header.at("tensors")) {
      NamedTensor nt{t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>(), {}};
      nt.values = r.f32s(nt.numel());
      p.tensors.push_back(std::move(nt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (!r.at_end()) throw DataError("trailing bytes in checkpoint " + path.string());
  check_params(p);
  if (!p.all_finite()) throw DataError("non-finite weights in checkpoint " + path.string());
  if (header_out) *header_out = header;
  return p;
}

namespace layers {
namespace {

// [C][H][W] -> (C, H*W) column-major
Mat<double> chw_to_internal(const std::vector<double>& x, int c, int h, int w) {
  Mat<double> m(c, static_cast<Index>(h) * w);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p) m(ch, p) = x[static_cast<std::size_t>(ch) * h * w + p];
  return m;
}

std::vector<double> internal_to_chw(const Mat<double>& m, int c, int hw) {
  std::vector<double> out(static_cast<std::size_t>(c) * hw);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p) out[static_cast<std::size_t>(ch) * hw + p] = m(ch, p);
  return out;
}

}  // namespace

std::vector<double> conv3x3_s2(const std::vector<double>& x, int cin, int h, int w,
                               const std::vector<double>& weight, const std::vector<double>& bias,
                               int cout) {
  if (h != w || h % 2 != 0) throw ConfigError("conv3x3_s2: square even input required");
  const Mat<double> in = chw_to_internal(x, cin, h, w);
  Mat<double> col;
  im2col(in.data(), cin, h, 1, col);
  const Eigen::Map<const Mat<double>> wm(weight.data(), cout, 9 * cin);
  Mat<double> out = wm * col;
  out.colwise() += Eigen::Map<const Vec<double>>(bias.data(), cout);
  return internal_to_chw(out, cout, (h / 2) * (w / 2));
}

std::vector<double> conv_transpose3x3_s2(const std::vector<double>& x, int cin, int h, int w,
                                         const std::vector<double>& weight,
                                         const std::vector<double>& bias, int cout) {
  if (h != w) throw ConfigError("conv_transpose3x3_s2: square input required");
  const Mat<double> in = chw_to_internal(x, cin, h, w);
  const Eigen::Map<const Mat<double>> wm(weight.data(), 9 * cout, cin);
  const Mat<double> col = wm * in;
  Mat<double> out = Mat<double>::Zero(cout, static_cast<Index>(4) * h * w);
  col2im(col, cout, 2 * h, 1, out.data());
  out.colwise() += Eigen::Map<const Vec<double>>(bias.data(), cout);
  return internal_to_chw(out, cout, 4 * h * w);
}

}  // namespace layers
}  // namespace bob
