#include "tbigan/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tbigan/errors.hpp"

namespace tbigan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

std::size_t batch_of(const Tensor& t) { return t.dim() <= 1 ? 1 : t.size(0); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(const std::vector<Tensor>& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    std::copy(values[i].begin(), values[i].end(), p.mutable_data().begin());
  }
}

Tensor stack_windows(const std::vector<PmuWindow>& windows, std::span<const std::size_t> idx) {
  const std::size_t t = windows.front().length, f = windows.front().features;
  std::vector<double> data;
  data.reserve(idx.size() * t * f);
  for (std::size_t i : idx) data.insert(data.end(), windows[i].data.begin(), windows[i].data.end());
  return Tensor({idx.size(), t, f}, std::move(data));
}

// Activation buffers are a few MB and churn every op; keep freed blocks in
// the heap instead of round-tripping through mmap/munmap.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

Tensor sample_latent(std::size_t batch, std::size_t dim, std::mt19937_64& rng) {
  return Tensor::randn({batch, dim}, rng, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  require(lr > 0.0, "train.lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "train.beta1/beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "train.adam_eps must be positive");
  require(batch_size > 0, "train.batch_size must be positive");
  require(lambda_rec >= 0.0 && lambda_z >= 0.0, "loss weights must be non-negative");
  require(label_smooth > 0.0 && label_smooth <= 1.0, "train.label_smooth must lie in (0, 1]");
  require(grad_penalty >= 0.0, "train.grad_penalty must be non-negative");
  require(encoder_adv_weight >= 0.0, "train.encoder_adv_weight must be non-negative");
  require(d_steps > 0, "train.d_steps must be positive");
  require(stride > 0, "train.stride must be positive");
}

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv) { return from_kv(kv, TrainConfig{}); }

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv, TrainConfig c) {
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.lr = kv.get_double("train.lr", c.lr);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.adam_eps = kv.get_double("train.adam_eps", c.adam_eps);
  c.batch_size = size("train.batch_size", c.batch_size);
  c.epochs = size("train.epochs", c.epochs);
  c.lambda_rec = kv.get_double("train.lambda_rec", c.lambda_rec);
  c.lambda_z = kv.get_double("train.lambda_z", c.lambda_z);
  c.label_smooth = kv.get_double("train.label_smooth", c.label_smooth);
  c.grad_penalty = kv.get_double("train.grad_penalty", c.grad_penalty);
  c.encoder_adv_weight = kv.get_double("train.encoder_adv_weight", c.encoder_adv_weight);
  c.d_steps = size("train.d_steps", c.d_steps);
  c.clip_norm = kv.get_double("train.clip_norm", c.clip_norm);
  c.patience = size("train.patience", c.patience);
  c.stride = size("train.stride", c.stride);
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(c.seed)));
  c.validate();
  return c;
}

void TrainConfig::to_kv(KeyValueConfig& kv) const {
  kv.set("train.lr", format_double(lr));
  kv.set("train.beta1", format_double(beta1));
  kv.set("train.beta2", format_double(beta2));
  kv.set("train.adam_eps", format_double(adam_eps));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.lambda_rec", format_double(lambda_rec));
  kv.set("train.lambda_z", format_double(lambda_z));
  kv.set("train.label_smooth", format_double(label_smooth));
  kv.set("train.grad_penalty", format_double(grad_penalty));
  kv.set("train.encoder_adv_weight", format_double(encoder_adv_weight));
  kv.set("train.d_steps", std::to_string(d_steps));
  kv.set("train.clip_norm", format_double(clip_norm));
  kv.set("train.patience", std::to_string(patience));
  kv.set("train.stride", std::to_string(stride));
  kv.set("train.seed", std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Losses

Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat) {
  check_same_shape(x, x_hat, "loss_reconstruction");
  return mean(abs(sub(x, x_hat)));
}

Tensor loss_latent(const Tensor& e_x, const Tensor& e_x_hat) {
  check_same_shape(e_x, e_x_hat, "loss_latent");
  return mul_scalar(sum(square(sub(e_x_hat, e_x))), 1.0 / static_cast<double>(batch_of(e_x)));
}

Tensor loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits, double smooth) {
  return add(mean(bce_with_logits(real_logits, smooth)), mean(bce_with_logits(fake_logits, 0.0)));
}

Tensor loss_adversarial_eg(const Tensor& fake_logits, const Tensor& real_logits,
                           double encoder_weight) {
  Tensor adv = mean(bce_with_logits(fake_logits, 1.0));
  if (encoder_weight > 0.0) {
    adv = add(adv, mul_scalar(mean(bce_with_logits(real_logits, 0.0)), encoder_weight));
  }
  return adv;
}

EGTerms loss_encoder_generator(TBiGanModel& model, const Tensor& x, const Tensor& z,
                               double lambda_rec, double lambda_z, double encoder_weight) {
  EGTerms t;
  Tensor e_x = model.encode(x);
  Tensor x_hat = model.generate(e_x);
  t.rec = loss_reconstruction(x, x_hat);
  t.latent = lambda_z > 0.0 ? loss_latent(e_x, model.encode(x_hat)) : Tensor::scalar(0.0);
  Tensor fake = model.discriminate_logits(model.generate(z), z);
  Tensor real = encoder_weight > 0.0 ? model.discriminate_logits(x, e_x) : Tensor();
  t.adv = loss_adversarial_eg(fake, real, encoder_weight);
  t.total = add(add(t.adv, mul_scalar(t.rec, lambda_rec)), mul_scalar(t.latent, lambda_z));
  return t;
}

Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& z_real,
                        const Tensor& x_fake, const Tensor& z_fake,
                        std::span<const double> alpha) {
  check_same_shape(x_real, x_fake, "gradient_penalty");
  check_same_shape(z_real, z_fake, "gradient_penalty");
  const std::size_t b = batch_of(x_real);
  if (alpha.size() != b || batch_of(z_real) != b) {
    throw ShapeError("gradient_penalty: need one interpolation coefficient per sample");
  }
  auto mix = [&](const Tensor& r, const Tensor& f) {
    const std::size_t per = r.numel() / b;
    std::vector<double> out(r.numel());
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t j = i * per + k;
        out[j] = alpha[i] * r[j] + (1.0 - alpha[i]) * f[j];
      }
    }
    return Tensor(r.shape(), std::move(out), true);
  };
  Tensor xi = mix(x_real, x_fake);
  Tensor zi = mix(z_real, z_fake);
  GradModeGuard enable(true);
  Tensor out = critic(xi, zi);
  auto grads = grad(sum(out), {xi, zi}, true);
  auto per_sample = [&](const Tensor& g) {
    return sum_axis(reshape(square(g), {b, g.numel() / b}), 1);
  };
  Tensor norm = sqrt(add_scalar(add(per_sample(grads[0]), per_sample(grads[1])), 1e-12));
  return mean(square(add_scalar(norm, -1.0)));
}

Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& z_real,
                        const Tensor& x_fake, const Tensor& z_fake, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> alpha(batch_of(x_real));
  for (auto& a : alpha) a = u(rng);
  return gradient_penalty(critic, x_real, z_real, x_fake, z_fake, alpha);
}

// ---------------------------------------------------------------------------
// Adam

double global_grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

bool adam_step(const std::vector<Tensor>& params, AdamState& state, const AdamParams& hp,
               double grad_scale) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ShapeError("adam_step: moment shape changed");
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? g[k] * grad_scale : 0.0;
      m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * gk;
      v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * gk * gk;
      w[k] -= hp.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hp.eps);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Training loop

std::string format_loss_csv(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,l_d,l_adv,l_rec,l_latent,l_eg,val_ap\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.l_d << ',' << r.l_adv << ',' << r.l_rec << ',' << r.l_latent
        << ',' << r.l_eg << ',';
    if (r.val_ap) out << *r.val_ap;
    out << '\n';
  }
  return out.str();
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << format_loss_csv(history);
}

TrainResult train(TBiGanModel& model, const std::vector<PmuWindow>& windows,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  TrainResult result;
  const ModelConfig& mc = model.config();
  for (const auto& w : windows) {
    if (w.length != mc.window_len || w.features != mc.feature_dim) {
      throw ShapeError("train: window shape (" + std::to_string(w.length) + ", " +
                       std::to_string(w.features) + ") does not match the model (" +
                       std::to_string(mc.window_len) + ", " + std::to_string(mc.feature_dim) +
                       ")");
    }
  }
  if (config.epochs == 0) return result;
  if (windows.empty()) throw DataError("train: no training windows");

  tune_allocator();
  std::mt19937_64 rng(config.seed);
  model.seed_dropout(config.seed ^ 0x5851f42d4c957f2dULL);
  auto enc = tensors_of(model.parameters(Part::kEncoder));
  auto gen = tensors_of(model.parameters(Part::kGenerator));
  auto disc = tensors_of(model.parameters(Part::kDiscriminator));
  std::vector<Tensor> eg = enc;
  eg.insert(eg.end(), gen.begin(), gen.end());
  std::vector<Tensor> all = eg;
  all.insert(all.end(), disc.begin(), disc.end());

  const AdamParams hp{config.lr, config.beta1, config.beta2, config.adam_eps};
  AdamState adam_d, adam_eg;
  const bool clip = !mc.spectral_norm && config.clip_norm > 0.0;
  auto& tape = GradTape::current();

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  std::optional<double> best_ap;
  std::vector<std::vector<double>> best_params;
  std::vector<SpectralState> best_sn;
  std::size_t since_best = 0;

  auto halt = [&](const std::string& why) {
    result.halted = true;
    result.diagnostic = why;
    spdlog::error("training halted: {}", why);
    tape.reset();
    model.set_requires_grad(Part::kEncoder, true);
    model.set_requires_grad(Part::kGenerator, true);
    model.set_requires_grad(Part::kDiscriminator, true);
    model.zero_grad();
    model.set_training(false);
  };
  auto grad_scale = [&](const std::vector<Tensor>& params) {
    if (!clip) return 1.0;
    const double n = global_grad_norm(params);
    return n > config.clip_norm ? config.clip_norm / n : 1.0;
  };

  model.set_training(true);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      const Tensor x = stack_windows(windows, {order.data() + start, b});
      std::ostringstream where;
      where << "epoch " << epoch << ", batch " << batches;

      // Discriminator: real (x, E(x)) against fake (G(z), z); E and G fixed.
      model.set_requires_grad(Part::kEncoder, false);
      model.set_requires_grad(Part::kGenerator, false);
      model.set_requires_grad(Part::kDiscriminator, true);
      double l_d = 0.0;
      for (std::size_t s = 0; s < config.d_steps; ++s) {
        Tensor e_x, z, g_z;
        {
          NoGradGuard ng;
          e_x = model.encode(x);
          z = sample_latent(b, mc.latent_dim, rng);
          g_z = model.generate(z);
        }
        Tensor loss = loss_discriminator(model.discriminate_logits(x, e_x),
                                         model.discriminate_logits(g_z, z), config.label_smooth);
        if (config.grad_penalty > 0.0) {
          Critic critic = [&](const Tensor& xi, const Tensor& zi) {
            return model.discriminate_logits(xi, zi);
          };
          loss = add(loss, mul_scalar(gradient_penalty(critic, x, e_x, g_z, z, rng),
                                      config.grad_penalty));
        }
        l_d = loss.item();
        if (!std::isfinite(l_d)) {
          halt("non-finite discriminator loss at " + where.str());
          return result;
        }
        for (auto& p : disc) p.zero_grad();
        backward(loss);
        tape.reset();
        if (!adam_step(disc, adam_d, hp, grad_scale(disc))) {
          halt("non-finite discriminator gradient at " + where.str());
          return result;
        }
        if (hooks.on_step) hooks.on_step("D");
      }

      // Encoder + generator against a fixed discriminator.
      model.set_requires_grad(Part::kDiscriminator, false);
      model.set_requires_grad(Part::kEncoder, true);
      model.set_requires_grad(Part::kGenerator, true);
      Tensor z = sample_latent(b, mc.latent_dim, rng);
      EGTerms terms = loss_encoder_generator(model, x, z, config.lambda_rec, config.lambda_z,
                                             config.encoder_adv_weight);
      const double l_eg = terms.total.item();
      if (!std::isfinite(l_eg)) {
        halt("non-finite encoder/generator loss at " + where.str());
        return result;
      }
      for (auto& p : eg) p.zero_grad();
      backward(terms.total);
      tape.reset();
      if (!adam_step(eg, adam_eg, hp, grad_scale(eg))) {
        halt("non-finite encoder/generator gradient at " + where.str());
        return result;
      }
      if (hooks.on_step) hooks.on_step("EG");

      rec.l_d += l_d;
      rec.l_adv += terms.adv.item();
      rec.l_rec += terms.rec.item();
      rec.l_latent += terms.latent.item();
      rec.l_eg += l_eg;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.l_d /= nb;
    rec.l_adv /= nb;
    rec.l_rec /= nb;
    rec.l_latent /= nb;
    rec.l_eg /= nb;
    model.set_requires_grad(Part::kDiscriminator, true);
    model.zero_grad();

    bool stop = false;
    if (hooks.validate) {
      model.set_training(false);
      const double ap = hooks.validate(model);
      model.set_training(true);
      rec.val_ap = ap;
      if (!best_ap || ap > *best_ap) {
        best_ap = ap;
        result.best_epoch = epoch;
        best_params = snapshot(all);
        best_sn.clear();
        for (const auto& [name, st] : model.spectral_states()) best_sn.push_back(*st);
        since_best = 0;
      } else if (++since_best >= config.patience && config.patience > 0) {
        stop = true;
      }
    }
    spdlog::debug("epoch {}: L_D={:.4f} L_adv={:.4f} L_rec={:.4f} L_z={:.4f}", epoch, rec.l_d,
                  rec.l_adv, rec.l_rec, rec.l_latent);
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) break;
  }
  if (!best_params.empty()) {
    restore(all, best_params);
    auto states = model.spectral_states();
    for (std::size_t i = 0; i < states.size(); ++i) *states[i].second = best_sn[i];
  }
  model.set_training(false);
  return result;
}

// ---------------------------------------------------------------------------
// Search

std::string SearchSetting::describe() const {
  std::ostringstream out;
  out << "lr=" << lr << " dropout=" << dropout << " lambda_rec=" << lambda_rec
      << " lambda_z=" << lambda_z << " alpha=" << alpha << " label_smooth=" << label_smooth
      << " spectral_norm=" << (spectral_norm ? "on" : "off") << " grad_penalty=" << grad_penalty;
  return out.str();
}

bool SearchSpace::empty() const {
  return !(lr_min > 0.0 && lr_max >= lr_min) || dropout.empty() || lambda_rec.empty() ||
         lambda_z.empty() || alpha.empty() || label_smooth.empty() || spectral_norm.empty() ||
         grad_penalty.empty();
}

SearchSetting SearchSpace::sample(std::mt19937_64& rng) const {
  auto pick = [&](const auto& grid) {
    std::uniform_int_distribution<std::size_t> u(0, grid.size() - 1);
    return grid[u(rng)];
  };
  SearchSetting s;
  s.lr = lr_max > lr_min ? std::uniform_real_distribution<double>(lr_min, lr_max)(rng) : lr_min;
  s.dropout = pick(dropout);
  s.lambda_rec = pick(lambda_rec);
  s.lambda_z = pick(lambda_z);
  s.alpha = pick(alpha);
  s.label_smooth = pick(label_smooth);
  s.spectral_norm = pick(spectral_norm);
  s.grad_penalty = pick(grad_penalty);
  return s;
}

SearchSpace SearchSpace::from_kv(const KeyValueConfig& kv) {
  SearchSpace s;
  s.lr_min = kv.get_double("search.lr_min", s.lr_min);
  s.lr_max = kv.get_double("search.lr_max", s.lr_max);
  s.dropout = kv.get_doubles("search.dropout", s.dropout);
  s.lambda_rec = kv.get_doubles("search.lambda_rec", s.lambda_rec);
  s.lambda_z = kv.get_doubles("search.lambda_z", s.lambda_z);
  s.alpha = kv.get_doubles("search.alpha", s.alpha);
  s.label_smooth = kv.get_doubles("search.label_smooth", s.label_smooth);
  s.grad_penalty = kv.get_doubles("search.grad_penalty", s.grad_penalty);
  if (kv.contains("search.spectral_norm")) {
    s.spectral_norm.clear();
    for (double v : kv.get_doubles("search.spectral_norm", {})) s.spectral_norm.push_back(v != 0);
  }
  return s;
}

SearchResult hyperparam_search(const SearchSpace& space, std::size_t settings,
                               std::size_t trials_per_setting, const TrialObjective& objective,
                               std::uint64_t seed) {
  if (space.empty() || settings == 0 || trials_per_setting == 0) {
    throw ConfigError("hyperparameter search needs a non-empty space and trial budget");
  }
  std::mt19937_64 rng(seed);
  SearchResult result;
  bool have_best = false;
  for (std::size_t s = 0; s < settings; ++s) {
    const SearchSetting setting = space.sample(rng);
    double ap = 0.0, auc = 0.0;
    for (std::size_t t = 0; t < trials_per_setting; ++t) {
      TrialRecord rec;
      rec.setting_index = s;
      rec.trial = t;
      rec.seed = rng();
      rec.setting = setting;
      const auto t0 = std::chrono::steady_clock::now();
      rec.score = objective(setting, rec.seed);
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ap += rec.score.ap;
      auc += rec.score.auc;
      spdlog::info("search setting {} trial {}: AP={:.4f} AUC={:.4f} ({})", s, t, rec.score.ap,
                   rec.score.auc, setting.describe());
      result.trials.push_back(rec);
    }
    ap /= static_cast<double>(trials_per_setting);
    auc /= static_cast<double>(trials_per_setting);
    if (!have_best || ap > result.best_ap || (ap == result.best_ap && auc > result.best_auc)) {
      have_best = true;
      result.best = setting;
      result.best_index = s;
      result.best_ap = ap;
      result.best_auc = auc;
    }
  }
  return result;
}

std::string format_trial_log(const SearchResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "setting,trial,seed,lr,dropout,lambda_rec,lambda_z,alpha,label_smooth,spectral_norm,"
         "grad_penalty,val_ap,val_auc,epochs,wall_seconds\n";
  for (const auto& r : result.trials) {
    const auto& s = r.setting;
    out << r.setting_index << ',' << r.trial << ',' << r.seed << ',' << s.lr << ',' << s.dropout
        << ',' << s.lambda_rec << ',' << s.lambda_z << ',' << s.alpha << ',' << s.label_smooth
        << ',' << (s.spectral_norm ? 1 : 0) << ',' << s.grad_penalty << ',' << r.score.ap << ','
        << r.score.auc << ',' << r.score.epochs << ',' << r.wall_seconds << '\n';
  }
  return out.str();
}

void write_trial_log(const std::string& path, const SearchResult& result) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << format_trial_log(result);
}

}  // namespace tbigan
