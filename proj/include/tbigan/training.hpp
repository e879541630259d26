#pragma once

// Adversarial training of the T-BiGAN: losses, Adam, the alternating D / E-G
// loop, and the random hyperparameter search.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbigan/keyvalue.hpp"
#include "tbigan/model.hpp"
#include "tbigan/pmu_data.hpp"
#include "tbigan/tensor.hpp"

namespace tbigan {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double lambda_rec = 10.0;
  double lambda_z = 1.0;
  double label_smooth = 0.9;
  double grad_penalty = 0.0;
  // Weight of the BCE(D(x, E(x)), 0) term in the E/G adversarial loss.
  double encoder_adv_weight = 1.0;
  std::size_t d_steps = 1;  // D updates per E/G update
  // Global-norm clipping; only applied when the discriminator has no SN.
  double clip_norm = 5.0;
  std::size_t patience = 10;
  std::size_t stride = 1;  // window stride for the training set
  std::uint64_t seed = 0;

  void validate() const;
  static TrainConfig from_kv(const KeyValueConfig& kv);
  static TrainConfig from_kv(const KeyValueConfig& kv, TrainConfig base);
  void to_kv(KeyValueConfig& kv) const;
};

// ---------------------------------------------------------------------------
// Losses. Batched inputs: windows (B, T, F), latents (B, d_z), logits (B).

// Mean absolute error over every element.
Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat);

// Squared L2 distance between encodings, averaged over the batch when the
// inputs are (B, d_z); a plain sum of squares for single vectors.
Tensor loss_latent(const Tensor& e_x, const Tensor& e_x_hat);

// mean BCE(D(x, E(x)), smooth) + mean BCE(D(G(z), z), 0), from logits.
Tensor loss_discriminator(const Tensor& real_logits, const Tensor& fake_logits,
                          double smooth);

struct EGTerms {
  Tensor adv;
  Tensor rec;
  Tensor latent;
  Tensor total;
};

// adv = mean BCE(D(G(z), z), 1) + w * mean BCE(D(x, E(x)), 0)
Tensor loss_adversarial_eg(const Tensor& fake_logits, const Tensor& real_logits,
                           double encoder_weight);

// Full encoder-generator objective on one batch; D is used as given (the
// caller decides whether its parameters take gradients).
EGTerms loss_encoder_generator(TBiGanModel& model, const Tensor& x, const Tensor& z,
                               double lambda_rec, double lambda_z, double encoder_weight);

using Critic = std::function<Tensor(const Tensor& x, const Tensor& z)>;

// mean over the batch of (||grad D(x_t, z_t)||_2 - 1)^2 at x_t = a x_r + (1-a) x_f,
// z_t likewise, with one coefficient a per sample. Differentiable w.r.t. the
// critic's parameters (double backprop).
Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& z_real,
                        const Tensor& x_fake, const Tensor& z_fake,
                        std::span<const double> alpha);
Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& z_real,
                        const Tensor& x_fake, const Tensor& z_fake, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct AdamParams {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam using each tensor's accumulated .grad (missing grads
// count as zero), scaled by `grad_scale`. Returns false and leaves everything
// untouched when any gradient is non-finite.
bool adam_step(const std::vector<Tensor>& params, AdamState& state, const AdamParams& hp,
               double grad_scale = 1.0);

double global_grad_norm(const std::vector<Tensor>& params);

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t epoch = 0;
  double l_d = 0.0;
  double l_adv = 0.0;
  double l_rec = 0.0;
  double l_latent = 0.0;
  double l_eg = 0.0;
  std::optional<double> val_ap;
};

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history);
std::string format_loss_csv(const std::vector<LossRecord>& history);

struct TrainHooks {
  // Validation average precision, called after every epoch; enables early
  // stopping and best-epoch restoration.
  std::function<double(TBiGanModel&)> validate;
  std::function<void(const LossRecord&)> on_epoch;
  // Called after each step with the phase ("D" or "EG"); tests use it to
  // check parameter isolation.
  std::function<void(const char* phase)> on_step;
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::size_t epochs_run = 0;
  std::optional<std::size_t> best_epoch;
  bool halted = false;
  std::string diagnostic;  // set when halted on a non-finite value
};

// Windows (each T x F) must already be preprocessed. Leaves the model in
// eval mode.
TrainResult train(TBiGanModel& model, const std::vector<PmuWindow>& windows,
                  const TrainConfig& config, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Hyperparameter search

struct SearchSetting {
  double lr = 3e-4;
  double dropout = 0.0;
  double lambda_rec = 10.0;
  double lambda_z = 1.0;
  double alpha = 0.6;
  double label_smooth = 0.9;
  bool spectral_norm = true;
  double grad_penalty = 0.0;

  std::string describe() const;
};

struct SearchSpace {
  double lr_min = 1e-5;
  double lr_max = 5e-4;
  std::vector<double> dropout{0.0, 0.1, 0.2};
  std::vector<double> lambda_rec{1, 5, 10, 25};
  std::vector<double> lambda_z{0, 0.5, 1, 2};
  std::vector<double> alpha{0.4, 0.6, 0.8};
  std::vector<double> label_smooth{1.0, 0.9};
  std::vector<bool> spectral_norm{false, true};
  std::vector<double> grad_penalty{0, 10};

  bool empty() const;
  SearchSetting sample(std::mt19937_64& rng) const;
  static SearchSpace from_kv(const KeyValueConfig& kv);
};

struct TrialScore {
  double ap = 0.0;
  double auc = 0.0;
  std::size_t epochs = 0;
};

struct TrialRecord {
  std::size_t setting_index = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  SearchSetting setting;
  TrialScore score;
  double wall_seconds = 0.0;
};

struct SearchResult {
  SearchSetting best;
  std::size_t best_index = 0;
  double best_ap = 0.0;
  double best_auc = 0.0;
  std::vector<TrialRecord> trials;
};

using TrialObjective = std::function<TrialScore(const SearchSetting&, std::uint64_t seed)>;

// Samples `settings` configurations uniformly from the space, runs
// `trials_per_setting` seeds each, and keeps the best mean AP (mean ROC-AUC
// breaks exact ties; earlier settings win full ties).
SearchResult hyperparam_search(const SearchSpace& space, std::size_t settings,
                               std::size_t trials_per_setting, const TrialObjective& objective,
                               std::uint64_t seed);

void write_trial_log(const std::string& path, const SearchResult& result);
std::string format_trial_log(const SearchResult& result);

}  // namespace tbigan
