#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reroof/data/augment.hpp"
#include "reroof/data/image.hpp"
#include "reroof/numerics/adam.hpp"
#include "reroof/numerics/checkpoint.hpp"
#include "reroof/numerics/layers.hpp"

namespace reroof::vae {

inline constexpr std::size_t kLatentDim = 128;
inline constexpr float kLogVarMin = -10.0f;
inline constexpr float kLogVarMax = 10.0f;

/// Encoder conv widths; the decoder mirrors them. Four stride-2 layers take
/// 64x64 down to 4x4.
struct VaeArch {
  std::vector<std::size_t> channels{32, 64, 128, 256};
  std::size_t residual_blocks = 3;

  void validate() const {
    if (channels.size() != 4) throw ConfigError("vae: exactly four conv widths are required");
    for (auto c : channels)
      if (c == 0) throw ConfigError("vae: conv widths must be positive");
  }

  std::string channels_token() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
    return os.str();
  }

  static VaeArch from_meta(const std::map<std::string, std::string>& meta) {
    VaeArch a;
    if (auto it = meta.find("channels"); it != meta.end()) {
      a.channels.clear();
      std::istringstream is(it->second);
      std::string tok;
      while (std::getline(is, tok, ',')) a.channels.push_back(std::stoul(tok));
    }
    if (auto it = meta.find("residual_blocks"); it != meta.end()) {
      a.residual_blocks = std::stoul(it->second);
    }
    a.validate();
    return a;
  }
};

template <class T>
struct BasicLatentCode {
  std::vector<T> mu;
  std::vector<T> log_var;
};
using LatentCode = BasicLatentCode<float>;

struct ElboTerms {
  double reconstruction_term = 0.0;
  double kl_term = 0.0;
  double beta = 1.0;

  double loss() const { return reconstruction_term + beta * kl_term; }
};

/// Encoder/decoder parameters. Layers are re-bound from the store on every
/// call, so copies are independent.
template <class T>
class BasicVae {
public:
  using Store = nn::BasicParamStore<T>;

  BasicVae() = default;
  BasicVae(VaeArch arch, Store store) : arch_(std::move(arch)), store_(std::move(store)) {
    arch_.validate();
    check_store();
  }

  /// Fresh parameters. Draw order: encoder convs, encoder dense, residual
  /// blocks, head, decoder dense, decoder transposed convs.
  static BasicVae init(const VaeArch& arch, Rng& rng) {
    arch.validate();
    Store s;
    const auto& ch = arch.channels;
    std::size_t in = data::kChannels;
    for (std::size_t i = 0; i < 4; ++i) {
      nn::Conv2dLayer<T>::create(s, "enc.conv" + std::to_string(i + 1), in, ch[i], 4, 2, 1, rng);
      in = ch[i];
    }
    nn::DenseLayer<T>::create(s, "enc.fc", ch[3] * 16, kLatentDim, rng);
    for (std::size_t i = 0; i < arch.residual_blocks; ++i)
      nn::ResidualBlock<T>::create(s, "enc.res" + std::to_string(i + 1), kLatentDim, rng);
    nn::DenseLayer<T>::create(s, "enc.head", kLatentDim, 2 * kLatentDim, rng);
    nn::DenseLayer<T>::create(s, "dec.fc", kLatentDim, ch[3] * 16, rng);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t from = ch[3 - i];
      const std::size_t to = i == 3 ? data::kChannels : ch[2 - i];
      nn::ConvTranspose2dLayer<T>::create(s, "dec.deconv" + std::to_string(i + 1), from, to, 4,
                                          2, 1, rng);
    }
    // Small head weights keep the initial posterior near the prior.
    for (auto& v : s.entry("enc.head.weight").var.mutable_value().values()) v *= T(0.1);
    return BasicVae(arch, std::move(s));
  }

  const VaeArch& arch() const { return arch_; }
  Store& store() { return store_; }
  const Store& store() const { return store_; }

  struct Posterior {
    nn::Var<T> mu;
    nn::Var<T> log_var;
  };

  /// images [B, 3, 64, 64] -> mu, log_var [B, 128].
  Posterior encode_graph(const nn::Var<T>& images) const {
    const auto& shape = images.shape();
    if (shape.size() != 4 || shape[1] != data::kChannels || shape[2] != data::kImageSize ||
        shape[3] != data::kImageSize) {
      throw DimensionError("vae encode: expected [B,3,64,64], got " + nn::shape_string(shape));
    }
    nn::Var<T> h = images;
    for (std::size_t i = 0; i < 4; ++i) {
      h = nn::relu(nn::Conv2dLayer<T>::bind(store_, "enc.conv" + std::to_string(i + 1), 2, 1)(h));
    }
    h = nn::reshape(h, nn::Shape{shape[0], arch_.channels[3] * 16});
    h = nn::relu(nn::DenseLayer<T>::bind(store_, "enc.fc")(h));
    for (std::size_t i = 0; i < arch_.residual_blocks; ++i)
      h = nn::ResidualBlock<T>::bind(store_, "enc.res" + std::to_string(i + 1))(h);
    h = nn::DenseLayer<T>::bind(store_, "enc.head")(h);
    return {nn::slice_cols(h, 0, kLatentDim),
            nn::clamp(nn::slice_cols(h, kLatentDim, kLatentDim), T(kLogVarMin), T(kLogVarMax))};
  }

  /// z [B, 128] -> reconstruction [B, 3, 64, 64] in (0, 1).
  nn::Var<T> decode_graph(const nn::Var<T>& z) const {
    if (z.value().rank() != 2 || z.shape()[1] != kLatentDim) {
      throw DimensionError("vae decode: expected [B,128], got " + nn::shape_string(z.shape()));
    }
    const std::size_t batch = z.shape()[0];
    nn::Var<T> h = nn::relu(nn::DenseLayer<T>::bind(store_, "dec.fc")(z));
    h = nn::reshape(h, nn::Shape{batch, arch_.channels[3], 4, 4});
    for (std::size_t i = 0; i < 4; ++i) {
      h = nn::ConvTranspose2dLayer<T>::bind(store_, "dec.deconv" + std::to_string(i + 1), 2, 1)(h);
      h = i == 3 ? nn::sigmoid(h) : nn::relu(h);
    }
    return h;
  }

  /// Posterior mean and log-variance of each image in [B,3,64,64].
  std::vector<BasicLatentCode<T>> encode_batch(const nn::BasicTensor<T>& images) const {
    nn::NoGradGuard guard;
    auto post = encode_graph(nn::constant(images));
    const std::size_t batch = images.dim(0);
    std::vector<BasicLatentCode<T>> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* m = post.mu.value().data() + b * kLatentDim;
      const T* l = post.log_var.value().data() + b * kLatentDim;
      out[b].mu.assign(m, m + kLatentDim);
      out[b].log_var.assign(l, l + kLatentDim);
    }
    return out;
  }

private:
  void check_store() const {
    for (const char* name : {"enc.conv1.weight", "enc.fc.weight", "enc.head.weight",
                             "dec.fc.weight", "dec.deconv4.weight"}) {
      if (!store_.contains(name)) {
        throw CheckpointError(std::string("vae parameters missing '") + name + "'");
      }
    }
    if (store_.var("enc.head.weight").shape() != nn::Shape{kLatentDim, 2 * kLatentDim}) {
      throw DimensionError("vae head must produce 2x128 outputs");
    }
  }

  VaeArch arch_;
  Store store_;
};

using Vae = BasicVae<float>;

/// Posterior of one [3,64,64] image.
template <class T>
BasicLatentCode<T> encode(const BasicVae<T>& vae, const nn::BasicTensor<T>& image) {
  if (image.shape() != nn::Shape{3, 64, 64}) {
    throw DimensionError("encode: expected a [3,64,64] image, got " +
                         nn::shape_string(image.shape()));
  }
  return vae.encode_batch(image.reshaped(nn::Shape{1, 3, 64, 64})).front();
}

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I), drawn row-major.
template <class T>
nn::Var<T> reparameterize(const nn::Var<T>& mu, const nn::Var<T>& log_var, Rng& rng) {
  nn::BasicTensor<T> eps(mu.shape());
  for (auto& e : eps.values()) e = static_cast<T>(rng.normal());
  return nn::add(mu, nn::mul(nn::exp(nn::scale(log_var, T(0.5))), nn::constant(std::move(eps))));
}

template <class T>
std::vector<T> reparameterize(const BasicLatentCode<T>& code, Rng& rng) {
  nn::NoGradGuard guard;
  const auto n = code.mu.size();
  auto mu = nn::constant(nn::BasicTensor<T>(nn::Shape{1, n}, code.mu));
  auto lv = nn::constant(nn::BasicTensor<T>(nn::Shape{1, n}, code.log_var));
  auto lv_clamped = nn::clamp(lv, T(kLogVarMin), T(kLogVarMax));
  auto z = reparameterize(mu, lv_clamped, rng);
  return z.value().storage();
}

/// Closed-form KL of one diagonal Gaussian against N(0, I).
template <class T>
T kl_term(std::span<const T> mu, std::span<const T> log_var) {
  T s = T(0);
  for (std::size_t i = 0; i < mu.size(); ++i)
    s += T(0.5) * (mu[i] * mu[i] + std::exp(log_var[i]) - T(1) - log_var[i]);
  return s;
}

template <class T>
struct ElboResult {
  nn::Var<T> loss;
  ElboTerms terms;
};

/// Negative beta-ELBO for a batch [B,3,64,64]: per-example summed squared
/// reconstruction error plus beta times the closed-form KL, both averaged
/// over the batch. Minimising it maximises the ELBO.
template <class T>
ElboResult<T> elbo_loss(const BasicVae<T>& vae, const nn::BasicTensor<T>& images, double beta,
                        Rng& rng) {
  if (!(beta >= 0.0)) throw PreconditionError("elbo_loss: beta must be >= 0");
  auto x = nn::constant(images);
  auto post = vae.encode_graph(x);
  auto z = reparameterize(post.mu, post.log_var, rng);
  auto recon = vae.decode_graph(z);
  auto rec = nn::sse_per_example(recon, images);
  auto kl = nn::gaussian_kl(post.mu, post.log_var);
  ElboTerms terms{static_cast<double>(rec.value().item()), static_cast<double>(kl.value().item()),
                  beta};
  if (!std::isfinite(terms.reconstruction_term)) {
    throw TrainingError("non-finite reconstruction term in ELBO");
  }
  if (!std::isfinite(terms.kl_term)) throw TrainingError("non-finite KL term in ELBO");
  nn::Var<T> loss = beta == 0.0 ? rec : nn::add(rec, nn::scale(kl, static_cast<T>(beta)));
  return {loss, terms};
}

// ---------------------------------------------------------------------------
// Training

struct VaeTrainConfig {
  nn::AdamConfig adam{3e-4f};
  double beta = 1.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  bool augment = true;
  data::AugmentConfig augmentation;

  void validate() const {
    adam.validate();
    if (!(beta >= 0.0)) throw ConfigError("vae: beta must be >= 0");
    if (batch_size == 0) throw ConfigError("vae: batch_size must be positive");
    augmentation.validate();
  }
};

struct VaeEpochLog {
  std::size_t epoch = 0;
  ElboTerms train;
  ElboTerms validation;
};

struct VaeTrainResult {
  Vae vae;
  std::vector<VaeEpochLog> log;
  std::size_t best_epoch = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Mean ELBO terms over `images` with a fixed noise stream and no updates.
inline ElboTerms evaluate_elbo(const Vae& vae, const std::vector<const data::Image*>& images,
                               double beta, std::size_t batch_size, std::uint64_t noise_seed) {
  ElboTerms total{0.0, 0.0, beta};
  if (images.empty()) return total;
  nn::NoGradGuard guard;
  Rng rng(noise_seed);
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<const data::Image*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                          images.begin() + static_cast<std::ptrdiff_t>(end));
    auto res = elbo_loss(vae, data::stack_images(chunk), beta, rng);
    const double w = static_cast<double>(end - start);
    total.reconstruction_term += res.terms.reconstruction_term * w;
    total.kl_term += res.terms.kl_term * w;
  }
  total.reconstruction_term /= static_cast<double>(images.size());
  total.kl_term /= static_cast<double>(images.size());
  return total;
}

/// Trains from `initial` and returns the parameters of the epoch with the
/// lowest validation loss (training loss when there is no validation set).
///
/// Epoch 0 in the log is the untrained model. Each epoch draws, in order:
/// one shuffle of the training indices, then per image three augmentation
/// uniforms, then per batch the reparameterisation normals.
inline VaeTrainResult train_vae(Vae initial, const std::vector<const data::Image*>& train,
                                const std::vector<const data::Image*>& validation,
                                const VaeTrainConfig& cfg, Rng& rng,
                                const std::function<void(const VaeEpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("train_vae: training set is empty");
  const std::uint64_t eval_seed = rng.next_u64();

  VaeTrainResult result;
  result.vae = std::move(initial);
  Vae& vae = result.vae;

  auto record = [&](std::size_t epoch, ElboTerms train_terms) {
    VaeEpochLog entry{epoch, train_terms,
                      validation.empty() ? ElboTerms{0.0, 0.0, cfg.beta}
                                         : evaluate_elbo(vae, validation, cfg.beta,
                                                         cfg.batch_size, eval_seed)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    return validation.empty() ? train_terms.loss() : entry.validation.loss();
  };

  double best = record(0, evaluate_elbo(vae, train, cfg.beta, cfg.batch_size, eval_seed));
  auto best_values = vae.store().snapshot_values();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    ElboTerms acc{0.0, 0.0, cfg.beta};
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<data::Image> augmented;
        augmented.reserve(end - start);
        std::vector<const data::Image*> batch;
        for (std::size_t i = start; i < end; ++i) {
          const data::Image& src = *train[order[i]];
          if (cfg.augment) {
            augmented.push_back(data::augment(src, cfg.augmentation, rng));
            batch.push_back(&augmented.back());
          } else {
            batch.push_back(&src);
          }
        }
        vae.store().zero_grad();
        auto res = elbo_loss(vae, data::stack_images(batch), cfg.beta, rng);
        nn::backward(res.loss);
        nn::adam_step(vae.store(), cfg.adam);
        const double w = static_cast<double>(end - start);
        acc.reconstruction_term += res.terms.reconstruction_term * w;
        acc.kl_term += res.terms.kl_term * w;
      }
    } catch (const TrainingError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    acc.reconstruction_term /= static_cast<double>(order.size());
    acc.kl_term /= static_cast<double>(order.size());

    double current = 0.0;
    try {
      current = record(epoch, acc);
    } catch (const TrainingError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + " validation: " + e.what();
      break;
    }
    if (current < best) {
      best = current;
      best_values = vae.store().snapshot_values();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  vae.store().restore_values(best_values);
  return result;
}

inline void save_vae(const Vae& vae, const std::filesystem::path& path) {
  nn::save_params(vae.store(), path, "vae",
                  {{"channels", vae.arch().channels_token()},
                   {"latent_dim", std::to_string(kLatentDim)},
                   {"residual_blocks", std::to_string(vae.arch().residual_blocks)}},
                  false);
}

inline Vae load_vae(const std::filesystem::path& path) {
  auto ck = nn::load_params(path);
  if (ck.model_kind != "vae") {
    throw CheckpointError(path.string() + ": expected model_kind vae, found " + ck.model_kind);
  }
  return Vae(VaeArch::from_meta(ck.meta), std::move(ck.store));
}

}  // namespace reroof::vae
