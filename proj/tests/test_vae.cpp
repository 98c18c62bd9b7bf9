#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "reroof/data/synth.hpp"
#include "reroof/vae.hpp"

namespace fs = std::filesystem;
namespace nn = reroof::nn;
namespace vae = reroof::vae;
namespace data = reroof::data;
using reroof::Rng;

namespace {

const vae::VaeArch kSmall{{4, 4, 4, 4}, 1};

std::vector<data::Image> synthetic_images(std::size_t buildings, std::uint64_t seed) {
  data::SynthConfig cfg;
  cfg.num_buildings = buildings;
  cfg.seed = seed;
  std::vector<data::Image> out;
  for (std::size_t i = 0; i < buildings; ++i) {
    auto s = data::generate_building(cfg, i);
    out.push_back(s.images.front());
    out.push_back(s.images.back());
  }
  return out;
}

std::vector<const data::Image*> pointers(const std::vector<data::Image>& v) {
  std::vector<const data::Image*> p;
  for (const auto& i : v) p.push_back(&i);
  return p;
}

double mean_recon_mse(const vae::Vae& model, const std::vector<const data::Image*>& imgs) {
  // Decode the posterior mean, no sampling noise.
  nn::NoGradGuard guard;
  auto x = data::stack_images(imgs);
  auto post = model.encode_graph(nn::constant(x));
  auto r = model.decode_graph(post.mu).value();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += (r[i] - x[i]) * (r[i] - x[i]);
  return s / static_cast<double>(r.size());
}

}  // namespace

TEST(Encode, IdenticalImagesGiveIdenticalCodes) {
  Rng rng(1);
  auto model = vae::Vae::init(kSmall, rng);
  auto imgs = synthetic_images(1, 5);
  auto copy = imgs[0];
  auto a = vae::encode(model, imgs[0]);
  auto b = vae::encode(model, copy);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.log_var, b.log_var);
  auto c = vae::encode(model, imgs[0]);
  EXPECT_EQ(a.mu, c.mu);
}

TEST(Encode, ZeroHeadGivesStandardPosterior) {
  Rng rng(2);
  auto model = vae::Vae::init(kSmall, rng);
  model.store().entry("enc.head.weight").var.mutable_value().fill(0.0f);
  model.store().entry("enc.head.bias").var.mutable_value().fill(0.0f);
  for (const auto& img : synthetic_images(2, 6)) {
    auto code = vae::encode(model, img);
    for (float m : code.mu) EXPECT_EQ(m, 0.0f);
    for (float l : code.log_var) EXPECT_EQ(l, 0.0f);
  }
}

TEST(Encode, DefaultArchitectureShapes) {
  Rng rng(3);
  auto model = vae::Vae::init(vae::VaeArch{}, rng);
  auto imgs = synthetic_images(1, 7);
  auto code = vae::encode(model, imgs[0]);
  ASSERT_EQ(code.mu.size(), 128u);
  ASSERT_EQ(code.log_var.size(), 128u);
  for (float m : code.mu) EXPECT_TRUE(std::isfinite(m));
  nn::NoGradGuard guard;
  auto recon = model.decode_graph(nn::constant(nn::Tensor(nn::Shape{2, 128}))).value();
  EXPECT_EQ(recon.shape(), (nn::Shape{2, 3, 64, 64}));
  for (float v : recon.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Encode, WrongShapeRejected) {
  Rng rng(4);
  auto model = vae::Vae::init(kSmall, rng);
  EXPECT_THROW(vae::encode(model, data::make_image(32, 32)), reroof::DimensionError);
}

TEST(Reparameterize, FloorClampCollapsesToMean) {
  vae::BasicLatentCode<float> code;
  code.mu.assign(128, 0.7f);
  code.log_var.assign(128, -std::numeric_limits<float>::infinity());
  Rng rng(5);
  auto z = vae::reparameterize(code, rng);
  // exp(-10/2) noise is tiny but nonzero at the clamp; the limit is the mean.
  for (float v : z) EXPECT_NEAR(v, 0.7f, 5 * std::exp(-5.0));
}

TEST(Reparameterize, StandardNormalMoments) {
  vae::BasicLatentCode<float> code;
  code.mu.assign(128, 0.0f);
  code.log_var.assign(128, 0.0f);
  Rng rng(6);
  const std::size_t n = 100000;
  std::vector<double> sum(128, 0.0), sq(128, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = vae::reparameterize(code, rng);
    for (std::size_t d = 0; d < 128; ++d) {
      sum[d] += z[d];
      sq[d] += static_cast<double>(z[d]) * z[d];
    }
  }
  // se(mean) = 1/sqrt(n); se(variance) = sqrt(2/n) for a unit normal.
  // 256 checks at 3 sigma expect ~0.7 exceedances; more than 4 has
  // probability below 1e-3, and nothing may pass 4.5 sigma.
  std::size_t beyond3 = 0;
  for (std::size_t d = 0; d < 128; ++d) {
    const double mean = sum[d] / n;
    const double var = sq[d] / n - mean * mean;
    const double zm = std::abs(mean) * std::sqrt(n);
    const double zv = std::abs(var - 1.0) / std::sqrt(2.0 / n);
    beyond3 += (zm >= 3.0) + (zv >= 3.0);
    EXPECT_LT(zm, 4.5) << d;
    EXPECT_LT(zv, 4.5) << d;
  }
  EXPECT_LE(beyond3, 4u);
}

TEST(Reparameterize, FixedSeedReproducible) {
  vae::BasicLatentCode<float> code;
  code.mu.assign(128, 0.1f);
  code.log_var.assign(128, -1.0f);
  Rng a(7), b(7);
  EXPECT_EQ(vae::reparameterize(code, a), vae::reparameterize(code, b));
}

TEST(Kl, ClosedFormExamples) {
  std::vector<double> mu(128, 0.0), lv(128, 0.0);
  EXPECT_EQ(vae::kl_term<double>(mu, lv), 0.0);
  mu[17] = 1.0;
  EXPECT_DOUBLE_EQ(vae::kl_term<double>(mu, lv), 0.5);
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    for (auto& m : mu) m = rng.uniform(-2, 2);
    for (auto& l : lv) l = rng.uniform(-3, 3);
    EXPECT_GT(vae::kl_term<double>(mu, lv), 0.0);
  }
}

TEST(Kl, GraphMatchesClosedForm) {
  Rng rng(9);
  auto mu = gradcheck::random_tensor({2, 128}, rng);
  auto lv = gradcheck::random_tensor({2, 128}, rng);
  auto kl = nn::gaussian_kl(nn::constant(mu), nn::constant(lv)).value().item();
  const double row0 = vae::kl_term<double>(std::span(mu.data(), 128), std::span(lv.data(), 128));
  const double row1 = vae::kl_term<double>(std::span(mu.data() + 128, 128), std::span(lv.data() + 128, 128));
  EXPECT_NEAR(kl, (row0 + row1) / 2.0, 1e-12);
}

TEST(Elbo, BetaOneIsAdditive) {
  Rng rng(10);
  auto model = vae::Vae::init(kSmall, rng);
  auto imgs = synthetic_images(2, 11);
  auto x = data::stack_images(pointers(imgs));
  Rng noise(12);
  auto r = vae::elbo_loss(model, x, 1.0, noise);
  EXPECT_FLOAT_EQ(r.loss.value().item(),
                  static_cast<float>(r.terms.reconstruction_term) + static_cast<float>(r.terms.kl_term));
  EXPECT_DOUBLE_EQ(r.terms.loss(), r.terms.reconstruction_term + r.terms.kl_term);
}

TEST(Elbo, BetaZeroIgnoresKl) {
  Rng rng(13);
  auto model = vae::Vae::init(kSmall, rng);
  // Push the posterior away from the prior so the KL term is large.
  for (auto& v : model.store().entry("enc.head.bias").var.mutable_value().values()) v = 1.5f;
  auto imgs = synthetic_images(2, 14);
  auto x = data::stack_images(pointers(imgs));
  Rng n0(15), n1(15);
  auto r0 = vae::elbo_loss(model, x, 0.0, n0);
  EXPECT_GT(r0.terms.kl_term, 1.0);
  EXPECT_EQ(r0.loss.value().item(), static_cast<float>(r0.terms.reconstruction_term));

  // Gradients at beta=0 equal the gradient of the reconstruction alone.
  model.store().zero_grad();
  nn::backward(r0.loss);
  auto g0 = model.store().entry("enc.head.bias").var.grad();
  model.store().zero_grad();
  {
    auto xv = nn::constant(x);
    auto post = model.encode_graph(xv);
    auto z = vae::reparameterize(post.mu, post.log_var, n1);
    nn::backward(nn::sse_per_example(model.decode_graph(z), x));
  }
  EXPECT_EQ(model.store().entry("enc.head.bias").var.grad(), g0);
}

TEST(Elbo, NegativeBetaRejected) {
  Rng rng(16);
  auto model = vae::Vae::init(kSmall, rng);
  auto imgs = synthetic_images(1, 17);
  EXPECT_THROW(vae::elbo_loss(model, data::stack_images(pointers(imgs)), -1.0, rng), reroof::PreconditionError);
}

TEST(Elbo, NonFiniteInputRaisesTrainingError) {
  Rng rng(18);
  auto model = vae::Vae::init(kSmall, rng);
  auto imgs = synthetic_images(1, 19);
  imgs[0][0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(vae::elbo_loss(model, data::stack_images(pointers(imgs)), 1.0, rng), reroof::TrainingError);
}

TEST(Elbo, GradientMatchesFiniteDifferences) {
  Rng init(20);
  auto model = vae::BasicVae<double>::init(vae::VaeArch{{2, 2, 2, 2}, 1}, init);
  // Moderate head weights so the KL and log-variance paths carry signal.
  for (auto& v : model.store().entry("enc.head.weight").var.mutable_value().values()) v *= 5.0;
  // Zero biases put dead ReLU inputs exactly on the kink.
  Rng bias(24);
  for (auto& e : model.store().entries())
    if (e.name.size() > 5 && e.name.ends_with(".bias"))
      for (auto& v : e.var.mutable_value().values()) v = bias.uniform(-0.1, 0.1);
  Rng pix(21);
  auto x = gradcheck::random_tensor({2, 3, 64, 64}, pix, 0.0, 1.0);
  auto loss = [&] {
    Rng noise(22);
    return vae::elbo_loss(model, x, 1.0, noise).loss;
  };
  // The loss sums ~25k pixels; h=1e-6 lets summation roundoff dominate.
  Rng pick(23);
  auto r = gradcheck::check_store(loss, model.store(), 1e-5, 6, pick);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.worst_rel, 1e-3) << r.worst_where;
}

TEST(Train, EmptyTrainingSetRejected) {
  Rng rng(24);
  auto model = vae::Vae::init(kSmall, rng);
  EXPECT_THROW(vae::train_vae(model, {}, {}, vae::VaeTrainConfig{}, rng), reroof::PreconditionError);
}

TEST(Train, FiftyImagesImproveWithinThirtyEpochs) {
  auto train_imgs = synthetic_images(25, 30);
  auto val_imgs = synthetic_images(5, 31);
  Rng rng(32);
  auto model = vae::Vae::init(vae::VaeArch{}, rng);
  vae::VaeTrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 10;
  auto res = vae::train_vae(std::move(model), pointers(train_imgs), pointers(val_imgs), cfg, rng);
  ASSERT_FALSE(res.aborted) << res.abort_reason;
  ASSERT_GE(res.log.size(), 2u);
  EXPECT_GT(res.best_epoch, 0u);
  EXPECT_LT(res.log[res.best_epoch].validation.loss(), res.log[0].validation.loss());
  // Returned parameters are those of the best epoch.
  auto again = vae::evaluate_elbo(res.vae, pointers(val_imgs), 1.0, cfg.batch_size, 1);
  EXPECT_LT(again.loss(), res.log[0].validation.loss());
}

TEST(Train, BetaZeroOverfitsFiveImages) {
  auto imgs = synthetic_images(3, 40);
  imgs.pop_back();
  auto ptrs = pointers(imgs);
  Rng rng(41);
  auto model = vae::Vae::init(vae::VaeArch{{16, 32, 64, 64}, 1}, rng);
  vae::VaeTrainConfig cfg;
  cfg.beta = 0.0;
  cfg.augment = false;
  cfg.batch_size = 5;
  cfg.adam.learning_rate = 2e-3f;
  cfg.max_epochs = 50;
  cfg.patience = 1000;

  std::vector<double> mse{mean_recon_mse(model, ptrs)};
  for (int round = 0; round < 20 && mse.back() >= 0.01; ++round) {
    auto res = vae::train_vae(std::move(model), ptrs, {}, cfg, rng);
    ASSERT_FALSE(res.aborted) << res.abort_reason;
    model = std::move(res.vae);
    mse.push_back(mean_recon_mse(model, ptrs));
  }
  for (std::size_t i = 1; i < mse.size(); ++i) EXPECT_LT(mse[i], mse[i - 1]) << "round " << i;
  EXPECT_LT(mse.back(), 0.01);
}

TEST(Checkpoint, SaveLoadPreservesEncoding) {
  Rng rng(50);
  auto model = vae::Vae::init(kSmall, rng);
  const auto path = fs::temp_directory_path() / "reroof_tests" / "vae_small.ckpt";
  fs::create_directories(path.parent_path());
  vae::save_vae(model, path);
  auto loaded = vae::load_vae(path);
  EXPECT_EQ(loaded.arch().channels, kSmall.channels);
  EXPECT_EQ(loaded.arch().residual_blocks, 1u);
  auto imgs = synthetic_images(1, 51);
  EXPECT_EQ(vae::encode(model, imgs[0]).mu, vae::encode(loaded, imgs[0]).mu);
}
