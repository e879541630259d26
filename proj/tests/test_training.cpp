#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "support.hpp"
#include "tbigan/errors.hpp"
#include "tbigan/training.hpp"

using namespace tbigan;
using tbigan::testing::check_gradients;
using tbigan::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1, bool sn = true) {
  ModelConfig c;
  c.feature_dim = 3;
  c.window_len = 4;
  c.model_dim = 4;
  c.latent_dim = 2;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.attn_window = 2;
  c.disc_blocks = 1;
  c.spectral_norm = sn;
  c.init_seed = seed;
  return c;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

// Moves every parameter off its structured init (zero projections etc.) so
// the gradient check exercises all paths.
void perturb(TBiGanModel& m, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.mutable_data()) v += g(rng);
}

std::vector<double> flat_values(const std::vector<NamedTensor>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

// Toy windows: phase-shifted sinusoids, a few features, plus mild noise.
std::vector<PmuWindow> sinusoid_windows(std::size_t count, std::size_t t, std::size_t f,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<PmuWindow> out;
  for (std::size_t i = 0; i < count; ++i) {
    PmuWindow w;
    w.start_index = i;
    w.length = t;
    w.features = f;
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < f; ++j) {
        const double phase = 0.3 * static_cast<double>(i + s) + 0.7 * static_cast<double>(j);
        w.data.push_back(std::sin(phase) + noise(rng));
      }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST_CASE("reconstruction loss is the mean absolute error") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(loss_reconstruction(x, x).item() == 0.0);
  Tensor shifted({2, 3}, {2, 3, 4, 5, 6, 7});
  CHECK(loss_reconstruction(x, shifted).item() == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  Tensor a = random_tensor({4, 5, 6}, rng, 1.0, false);
  Tensor b = random_tensor({4, 5, 6}, rng, 1.0, false);
  double oracle = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) oracle += std::abs(a[i] - b[i]);
  oracle /= static_cast<double>(a.numel());
  CHECK(loss_reconstruction(a, b).item() == doctest::Approx(oracle).epsilon(1e-13));
  CHECK_THROWS_AS(loss_reconstruction(a, Tensor::zeros({4, 5})), ShapeError);
}

TEST_CASE("latent loss is the squared distance, batch-averaged") {
  CHECK(loss_latent(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})).item() == 2.0);
  Tensor e({2, 2}, {1, 0, 0, 0});
  Tensor eh({2, 2}, {0, 1, 3, 0});
  // (2 + 9) / 2
  CHECK(loss_latent(e, eh).item() == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("discriminator loss at an indifferent discriminator is 2 ln 2") {
  Tensor zeros = Tensor::zeros({5});
  CHECK(loss_discriminator(zeros, zeros, 1.0).item() ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-14));
}

TEST_CASE("discriminator loss without smoothing equals the minimax value function") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor real = random_tensor({16}, rng, 3.0, false);
    Tensor fake = random_tensor({16}, rng, 3.0, false);
    // -( E log D(x, E(x)) + E log(1 - D(G(z), z)) )
    double v = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      const double dr = 1.0 / (1.0 + std::exp(-real[i]));
      const double df = 1.0 / (1.0 + std::exp(-fake[i]));
      v += std::log(dr) / 16.0 + std::log(1.0 - df) / 16.0;
    }
    CHECK(std::abs(loss_discriminator(real, fake, 1.0).item() - (-v)) < 1e-12);
  }
}

TEST_CASE("label smoothing moves the real target") {
  // BCE(0.5 prob, target s) = ln 2 for every s; a confident logit shows it.
  Tensor real({1}, {4.0});
  Tensor fake({1}, {-50.0});
  const double p = 1.0 / (1.0 + std::exp(-4.0));
  const double expected = -(0.9 * std::log(p) + 0.1 * std::log(1.0 - p));
  CHECK(loss_discriminator(real, fake, 0.9).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("encoder/generator adversarial loss examples") {
  // D fooled completely and nothing else weighted: loss 0.
  Tensor confident = Tensor::full({4}, 60.0);
  CHECK(loss_adversarial_eg(confident, Tensor(), 0.0).item() < 1e-20);
  // D = 0.5 on fakes, encoder term off: ln 2.
  CHECK(loss_adversarial_eg(Tensor::zeros({4}), Tensor(), 0.0).item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-14));
  // Encoder term adds BCE(real, 0), ln 2 again at D = 0.5.
  CHECK(loss_adversarial_eg(Tensor::zeros({4}), Tensor::zeros({4}), 1.0).item() ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-14));
}

TEST_CASE("full encoder/generator loss reduces to its parts") {
  TBiGanModel m(tiny_config());
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 4, 3}, rng, 1.0, false);
  Tensor z = random_tensor({3, 2}, rng, 1.0, false);
  EGTerms t = loss_encoder_generator(m, x, z, 10.0, 1.0, 1.0);
  CHECK(t.total.item() ==
        doctest::Approx(t.adv.item() + 10.0 * t.rec.item() + t.latent.item()).epsilon(1e-13));
  EGTerms adv_only = loss_encoder_generator(m, x, z, 0.0, 0.0, 1.0);
  CHECK(adv_only.total.item() == doctest::Approx(adv_only.adv.item()).epsilon(1e-14));
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool sn : {false, true}) {
      CAPTURE(seed);
      CAPTURE(sn);
      TBiGanModel m(tiny_config(seed, sn));
      std::mt19937_64 rng(seed * 7);
      perturb(m, rng, 0.3);
      Tensor x = random_tensor({2, 4, 3}, rng, 1.0, false);
      Tensor z = random_tensor({2, 2}, rng, 1.0, false);
      if (sn) tbigan::testing::settle_spectral_state(m, x, z);

      auto eg = tensors_of(m.parameters(Part::kEncoder));
      for (auto& g : tensors_of(m.parameters(Part::kGenerator))) eg.push_back(g);
      auto eg_check = check_gradients(
          [&] { return loss_encoder_generator(m, x, z, 2.0, 0.5, 1.0).total; }, eg);
      CHECK(eg_check.max_rel_error < 1e-4);

      auto disc = tensors_of(m.parameters(Part::kDiscriminator));
      Tensor ex, gz;
      {
        NoGradGuard ng;
        ex = m.encode(x);
        gz = m.generate(z);
      }
      auto d_check = check_gradients(
          [&] {
            return loss_discriminator(m.discriminate_logits(x, ex), m.discriminate_logits(gz, z),
                                      0.9);
          },
          disc);
      CHECK(d_check.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("gradient penalty of a unit-norm linear critic is zero") {
  std::mt19937_64 rng(2);
  Tensor wx = random_tensor({4, 3}, rng, 1.0, false);
  Tensor wz = random_tensor({2}, rng, 1.0, false);
  double n2 = 0.0;
  for (double v : wx.data()) n2 += v * v;
  for (double v : wz.data()) n2 += v * v;
  wx = mul_scalar(wx, 1.0 / std::sqrt(n2));
  wz = mul_scalar(wz, 1.0 / std::sqrt(n2));
  Critic critic = [&](const Tensor& x, const Tensor& z) {
    return add(sum_axis(reshape(mul(x, wx), {x.size(0), 12}), 1), sum_axis(mul(z, wz), 1));
  };
  Tensor xr = random_tensor({3, 4, 3}, rng, 1.0, false), xf = random_tensor({3, 4, 3}, rng, 1.0, false);
  Tensor zr = random_tensor({3, 2}, rng, 1.0, false), zf = random_tensor({3, 2}, rng, 1.0, false);
  CHECK(gradient_penalty(critic, xr, zr, xf, zf, rng).item() < 1e-20);
}

TEST_CASE("gradient penalty of 2 x_1 is one") {
  Critic critic = [](const Tensor& x, const Tensor&) {
    return mul_scalar(reshape(slice_axis(reshape(x, {x.size(0), 12}), 1, 0, 1), {x.size(0)}), 2.0);
  };
  std::mt19937_64 rng(4);
  Tensor xr = random_tensor({5, 4, 3}, rng, 1.0, false), xf = random_tensor({5, 4, 3}, rng, 1.0, false);
  Tensor zr = random_tensor({5, 2}, rng, 1.0, false), zf = random_tensor({5, 2}, rng, 1.0, false);
  CHECK(gradient_penalty(critic, xr, zr, xf, zf, rng).item() ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradient penalty matches a finite-difference input-gradient oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    TBiGanModel m(tiny_config(seed, false));
    std::mt19937_64 rng(seed + 100);
    perturb(m, rng, 0.3);
    const std::size_t b = 3;
    Tensor xr = random_tensor({b, 4, 3}, rng, 1.0, false), xf = random_tensor({b, 4, 3}, rng, 1.0, false);
    Tensor zr = random_tensor({b, 2}, rng, 1.0, false), zf = random_tensor({b, 2}, rng, 1.0, false);
    const std::vector<double> alpha{0.2, 0.5, 0.9};
    Critic critic = [&](const Tensor& x, const Tensor& z) { return m.discriminate_logits(x, z); };
    const double gp = gradient_penalty(critic, xr, zr, xf, zf, alpha).item();
    GradTape::current().reset();

    // Per-sample input gradients by central differences on one sample at a time.
    NoGradGuard ng;
    double oracle = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> xs(12), zs(2);
      for (std::size_t k = 0; k < 12; ++k)
        xs[k] = alpha[i] * xr[i * 12 + k] + (1 - alpha[i]) * xf[i * 12 + k];
      for (std::size_t k = 0; k < 2; ++k)
        zs[k] = alpha[i] * zr[i * 2 + k] + (1 - alpha[i]) * zf[i * 2 + k];
      auto d = [&] { return m.discriminate_logits(Tensor({1, 4, 3}, xs), Tensor({1, 2}, zs)).item(); };
      const double h = 1e-5;
      double sq = 0.0;
      for (auto* v : {&xs, &zs})
        for (auto& e : *v) {
          const double orig = e;
          e = orig + h;
          const double up = d();
          e = orig - h;
          const double down = d();
          e = orig;
          const double g = (up - down) / (2 * h);
          sq += g * g;
        }
      oracle += (std::sqrt(sq) - 1.0) * (std::sqrt(sq) - 1.0) / static_cast<double>(b);
    }
    CHECK(std::abs(gp - oracle) <= 1e-4 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("gradient penalty is differentiable in the critic parameters") {
  TBiGanModel m(tiny_config(9, false));
  std::mt19937_64 rng(19);
  perturb(m, rng, 0.3);
  Tensor xr = random_tensor({2, 4, 3}, rng, 1.0, false), xf = random_tensor({2, 4, 3}, rng, 1.0, false);
  Tensor zr = random_tensor({2, 2}, rng, 1.0, false), zf = random_tensor({2, 2}, rng, 1.0, false);
  const std::vector<double> alpha{0.3, 0.6};
  Critic critic = [&](const Tensor& x, const Tensor& z) { return m.discriminate_logits(x, z); };
  auto disc = tensors_of(m.parameters(Part::kDiscriminator));
  auto chk = check_gradients([&] { return gradient_penalty(critic, xr, zr, xf, zf, alpha); }, disc);
  CHECK(chk.checked > 50);
  CHECK(chk.max_rel_error < 1e-4);
}

TEST_CASE("adam: zero gradient leaves parameters, first step moves by lr") {
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  AdamState st;
  AdamParams hp;
  hp.lr = 0.01;
  p.zero_grad();
  REQUIRE(adam_step({p}, st, hp));
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);

  Tensor q({3}, {1.0, -2.0, 0.5}, true);
  AdamState st2;
  backward(sum(mul(q, Tensor({3}, {3.0, -0.2, 40.0}))));
  GradTape::current().reset();
  REQUIRE(adam_step({q}, st2, hp));
  CHECK(q[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-8));
  CHECK(q[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-8));
  CHECK(q[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-8));
}

TEST_CASE("adam minimizes a quadratic bowl") {
  // f(w) = |w|^2 from |w0| = 1, default moments (beta1 = 0.5).
  Tensor w({3}, {0.6, -0.48, 0.64}, true);
  AdamState st;
  AdamParams hp;
  hp.lr = 0.05;
  for (int step = 0; step < 100; ++step) {
    w.zero_grad();
    backward(sum(square(w)));
    GradTape::current().reset();
    REQUIRE(adam_step({w}, st, hp));
  }
  CHECK(st.step == 100);
  CHECK(std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) < 1e-3);
}

TEST_CASE("adam refuses a non-finite gradient") {
  Tensor p({2}, {1.0, 2.0}, true);
  backward(sum(mul(p, Tensor({2}, {std::numeric_limits<double>::quiet_NaN(), 1.0}))));
  GradTape::current().reset();
  AdamState st;
  CHECK_FALSE(adam_step({p}, st, AdamParams{}));
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  CHECK(st.step == 0);
}

TEST_CASE("zero epochs leaves the model untouched") {
  TBiGanModel m(tiny_config());
  const auto before = m.hash();
  TrainConfig tc;
  tc.epochs = 0;
  auto r = train(m, sinusoid_windows(8, 4, 3, 1), tc);
  CHECK(r.history.empty());
  CHECK(m.hash() == before);
}

TEST_CASE("training rejects mismatched windows") {
  TBiGanModel m(tiny_config());
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(m, sinusoid_windows(4, 5, 3, 1), tc), ShapeError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 42;
  const auto windows = sinusoid_windows(12, 4, 3, 2);
  TBiGanModel a(tiny_config(7)), b(tiny_config(7));
  auto ra = train(a, windows, tc);
  auto rb = train(b, windows, tc);
  CHECK(a.hash() == b.hash());
  CHECK(format_loss_csv(ra.history) == format_loss_csv(rb.history));
}

TEST_CASE("discriminator and encoder/generator steps touch only their own parameters") {
  TBiGanModel m(tiny_config(3));
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.grad_penalty = 10.0;
  auto eg_values = [&] {
    auto v = flat_values(m.parameters(Part::kEncoder));
    auto g = flat_values(m.parameters(Part::kGenerator));
    v.insert(v.end(), g.begin(), g.end());
    return v;
  };
  auto d_values = [&] { return flat_values(m.parameters(Part::kDiscriminator)); };
  auto eg = eg_values();
  auto d = d_values();
  std::size_t d_steps = 0, eg_steps = 0, violations = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const char* phase) {
    const auto eg_now = eg_values();
    const auto d_now = d_values();
    if (std::string(phase) == "D") {
      ++d_steps;
      if (eg_now != eg) ++violations;
      if (d_now == d) ++violations;
    } else {
      ++eg_steps;
      if (d_now != d) ++violations;
      if (eg_now == eg) ++violations;
    }
    eg = eg_now;
    d = d_now;
  };
  train(m, sinusoid_windows(12, 4, 3, 3), tc, hooks);
  CHECK(d_steps == 6);
  CHECK(eg_steps == 6);
  CHECK(violations == 0);
}

TEST_CASE("spectral norm keeps discriminator weights near unit gain during training") {
  TBiGanModel m(tiny_config(4, true));
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  double worst = 0.0;
  TrainHooks hooks;
  hooks.on_step = [&](const char* phase) {
    if (std::string(phase) == "D") worst = std::max(worst, m.max_spectral_sigma());
  };
  auto r = train(m, sinusoid_windows(16, 4, 3, 4), tc, hooks);
  CHECK_FALSE(r.halted);
  CHECK(worst <= 1.01);
}

TEST_CASE("reconstruction loss halves on a toy sinusoid") {
  ModelConfig mc = tiny_config(5);
  mc.feature_dim = 4;
  mc.window_len = 8;
  mc.model_dim = 16;
  mc.latent_dim = 4;
  mc.attn_window = 4;
  TBiGanModel m(mc);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.lr = 1e-3;
  tc.lambda_rec = 25;
  auto r = train(m, sinusoid_windows(128, 8, 4, 5), tc);
  REQUIRE(r.history.size() == 20);
  for (const auto& h : r.history) {
    CHECK(std::isfinite(h.l_d));
    CHECK(std::isfinite(h.l_adv));
    CHECK(std::isfinite(h.l_rec));
    CHECK(std::isfinite(h.l_latent));
  }
  CHECK(r.history.back().l_rec <= 0.5 * r.history.front().l_rec);
}

TEST_CASE("early stopping restores the best epoch") {
  TBiGanModel m(tiny_config(6));
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 4;
  tc.patience = 2;
  std::uint64_t hash_after_first = 0;
  std::size_t calls = 0;
  TrainHooks hooks;
  hooks.validate = [&](TBiGanModel& model) {
    ++calls;
    if (calls == 1) hash_after_first = model.hash();
    return 1.0 / static_cast<double>(calls);  // only the first epoch is best
  };
  auto r = train(m, sinusoid_windows(8, 4, 3, 6), tc, hooks);
  CHECK(r.epochs_run == 3);
  REQUIRE(r.best_epoch.has_value());
  CHECK(*r.best_epoch == 1);
  CHECK(m.hash() == hash_after_first);
  CHECK(r.history.front().val_ap.value() == 1.0);
}

TEST_CASE("non-finite data halts training with a diagnostic") {
  TBiGanModel m(tiny_config(8));
  auto windows = sinusoid_windows(8, 4, 3, 8);
  windows[3].data[5] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  auto r = train(m, windows, tc);
  CHECK(r.halted);
  CHECK(r.diagnostic.find("non-finite") != std::string::npos);
}

TEST_CASE("loss history CSV has one row per epoch") {
  std::vector<LossRecord> h(3);
  for (std::size_t i = 0; i < 3; ++i) h[i].epoch = i + 1;
  h[1].val_ap = 0.5;
  const auto text = format_loss_csv(h);
  CHECK(text.rfind("epoch,l_d,l_adv,l_rec,l_latent,l_eg,val_ap\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.find(",0.5\n") != std::string::npos);
}

TEST_CASE("train config validation and key-value round trip") {
  KeyValueConfig kv;
  TrainConfig c;
  c.lr = 1.25e-4;
  c.lambda_rec = 25;
  c.seed = 99;
  c.to_kv(kv);
  TrainConfig back = TrainConfig::from_kv(kv);
  CHECK(back.lr == c.lr);
  CHECK(back.lambda_rec == 25);
  CHECK(back.seed == 99);

  KeyValueConfig bad;
  bad.set("train.label_smooth", "1.5");
  CHECK_THROWS_AS(TrainConfig::from_kv(bad), ConfigError);
  KeyValueConfig neg;
  neg.set("train.epochs", "-1");
  CHECK_THROWS_AS(TrainConfig::from_kv(neg), ConfigError);
}

TEST_CASE("search over a single-point space returns that point") {
  SearchSpace s;
  s.lr_min = s.lr_max = 2e-4;
  s.dropout = {0.1};
  s.lambda_rec = {5};
  s.lambda_z = {0.5};
  s.alpha = {0.8};
  s.label_smooth = {1.0};
  s.spectral_norm = {true};
  s.grad_penalty = {10};
  std::size_t calls = 0;
  auto r = hyperparam_search(s, 3, 2, [&](const SearchSetting&, std::uint64_t) {
    ++calls;
    return TrialScore{0.5, 0.5, 1};
  }, 1);
  CHECK(calls == 6);
  CHECK(r.trials.size() == 6);
  CHECK(r.best.lr == 2e-4);
  CHECK(r.best.lambda_rec == 5);
  CHECK(r.best.alpha == 0.8);
  CHECK(r.best.grad_penalty == 10);
}

TEST_CASE("search picks the dominant setting") {
  SearchSpace s;
  auto r = hyperparam_search(s, 40, 1, [](const SearchSetting& st, std::uint64_t) {
    return TrialScore{st.lambda_rec == 25 && st.alpha == 0.4 ? 0.9 : 0.1, 0.5, 1};
  }, 7);
  CHECK(r.best.lambda_rec == 25);
  CHECK(r.best.alpha == 0.4);
  CHECK(r.best_ap == 0.9);
  for (const auto& t : r.trials) {
    CHECK(t.setting.lr >= 1e-5);
    CHECK(t.setting.lr <= 5e-4);
  }
}

TEST_CASE("search breaks AP ties with ROC-AUC") {
  SearchSpace s;
  auto r = hyperparam_search(s, 12, 1, [](const SearchSetting& st, std::uint64_t) {
    return TrialScore{0.7, st.lambda_z, 1};  // equal AP; AUC tracks lambda_z
  }, 3);
  double max_lz = 0.0;
  for (const auto& t : r.trials) max_lz = std::max(max_lz, t.setting.lambda_z);
  CHECK(r.best.lambda_z == max_lz);
  CHECK(r.best_ap == 0.7);
}

TEST_CASE("search rejects an empty space or budget") {
  SearchSpace s;
  auto obj = [](const SearchSetting&, std::uint64_t) { return TrialScore{}; };
  CHECK_THROWS_AS(hyperparam_search(s, 0, 1, obj, 1), ConfigError);
  CHECK_THROWS_AS(hyperparam_search(s, 1, 0, obj, 1), ConfigError);
  s.alpha.clear();
  CHECK_THROWS_AS(hyperparam_search(s, 1, 1, obj, 1), ConfigError);
}
