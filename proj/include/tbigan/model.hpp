#pragma once

// Transformer encoder E, transformer generator G and joint discriminator D.
//
// Batched tensors throughout: windows are (B, T, F), latents (B, d_z).
// Linear weights are stored (in, out) so y = x W + b.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbigan/keyvalue.hpp"
#include "tbigan/tensor.hpp"

namespace tbigan {

enum class PositionalMode { kSinusoidal, kLearnable };

std::string to_string(PositionalMode mode);
PositionalMode parse_positional_mode(const std::string& text);

struct ModelConfig {
  std::size_t feature_dim = 112;
  std::size_t window_len = 32;
  std::size_t model_dim = 64;
  std::size_t latent_dim = 32;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t attn_window = 16;
  double mlp_ratio = 2.0;
  double dropout = 0.0;
  PositionalMode positional = PositionalMode::kSinusoidal;
  bool spectral_norm = true;
  std::size_t disc_blocks = 2;
  std::size_t power_iters = 1;
  std::uint64_t init_seed = 0;

  std::size_t mlp_hidden() const;
  // Throws ConfigError.
  void validate() const;

  // Keys are prefixed "model." in run configs.
  static ModelConfig from_kv(const KeyValueConfig& kv);
  static ModelConfig from_kv(const KeyValueConfig& kv, ModelConfig base);
  void to_kv(KeyValueConfig& kv) const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Interleaved table: even columns sin(p / 10000^(i/d)), odd columns cos of the
// same angle. Learnable mode returns a trainable truncated-normal table.
Tensor positional_encoding(std::size_t length, std::size_t dim, PositionalMode mode,
                           std::mt19937_64* rng = nullptr);

// ---------------------------------------------------------------------------
// Layers

struct SpectralState {
  std::vector<double> u;  // left singular vector estimate, length = rows
  std::vector<double> v;  // right, length = cols
};

// W / sigma with sigma = u^T W v. When `update` is set, `power_iters` rounds of
// power iteration refresh u and v first. A (near-)zero matrix passes through.
Tensor spectral_normalize(const Tensor& weight, SpectralState& state, std::size_t power_iters,
                          bool update);

// Current sigma estimate without touching the state.
double spectral_sigma(const Tensor& weight, const SpectralState& state);

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
  bool spectral = false;
  SpectralState sn;

  Linear() = default;
  // init_std <= 0 selects the default 0.02.
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero_weight, bool spectral,
         double init_std = 0.0);

  Tensor effective_weight(std::size_t power_iters, bool update);
  // x (..., in) -> (..., out)
  Tensor operator()(const Tensor& x, std::size_t power_iters = 1, bool update = false);
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  explicit LayerNormParams(std::size_t dim = 0);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct AttentionParams {
  Linear qkv;  // (d, 3d)
  Linear out;  // (d, d)
};

struct BlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  Linear fc1;
  Linear fc2;
};

// Shared switches for a forward pass.
struct ForwardContext {
  bool training = false;          // dropout active
  bool spectral_update = false;   // advance power iteration in SN layers
  std::size_t power_iters = 1;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  Tensor* attention_probs = nullptr;  // receives (B*nW*H, W, W) when set
};

// tokens (B, T, d) or (T, d). T is padded to a multiple of `window`; padded
// keys are masked and padded queries dropped. Heads never see other windows.
Tensor window_attention(const Tensor& tokens, AttentionParams& params, std::size_t window,
                        std::size_t heads, const ForwardContext& ctx);

// Pre-norm: x + Drop(Attn(LN(x))), then + Drop(MLP(LN(.))).
Tensor transformer_block(const Tensor& tokens, BlockParams& params, std::size_t window,
                         std::size_t heads, const ForwardContext& ctx);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

enum class Part { kEncoder, kGenerator, kDiscriminator };

class TBiGanModel {
 public:
  explicit TBiGanModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

  // x (B, T, F) -> z (B, d_z); a single (T, F) window gives (d_z).
  Tensor encode(const Tensor& x);
  // z (B, d_z) -> x_hat (B, T, F); a single (d_z) latent gives (T, F).
  Tensor generate(const Tensor& z);
  // Raw logits (B); the numerically stable input to the BCE losses.
  Tensor discriminate_logits(const Tensor& x, const Tensor& z);
  // sigmoid of the logits, in (0, 1).
  Tensor discriminate(const Tensor& x, const Tensor& z);

  std::vector<NamedTensor> parameters(Part part);
  std::vector<NamedTensor> parameters();
  std::size_t parameter_count();
  void set_requires_grad(Part part, bool flag);
  void zero_grad();
  // Largest sigma estimate across D's normalized weights (0 without SN).
  double max_spectral_sigma();

  // Spectral-norm vectors, persisted with the parameters.
  std::vector<std::pair<std::string, SpectralState*>> spectral_states();

  // FNV hash over every parameter and spectral vector in registry order.
  std::uint64_t hash();

  // Direct access for tests.
  Linear& disc_output() { return d_head2_; }
  BlockParams& encoder_block(std::size_t i) { return e_blocks_.at(i); }

 private:
  Tensor add_positions(const Tensor& tokens, const Tensor& table) const;
  ForwardContext context(bool spectral_update);
  Tensor as_batch(const Tensor& x, std::size_t trailing, bool& squeezed) const;

  ModelConfig config_;
  bool training_ = false;
  std::mt19937_64 dropout_rng_;

  Linear e_embed_;
  Tensor e_pos_;
  std::vector<BlockParams> e_blocks_;
  LayerNormParams e_norm_;
  Linear e_head_;

  Linear g_proj_;
  Tensor g_pos_;
  std::vector<BlockParams> g_blocks_;
  LayerNormParams g_norm_;
  Linear g_head_;

  Linear d_embed_;
  Tensor d_pos_;
  std::vector<BlockParams> d_blocks_;
  LayerNormParams d_norm_;
  Linear d_z1_;
  Linear d_z2_;
  Linear d_head1_;
  Linear d_head2_;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON container with config, named tensors, spectral vectors,
// and whatever the caller attaches (preprocessing stats, feature weights).

inline constexpr int kCheckpointVersion = 1;

struct CheckpointExtras {
  std::optional<nlohmann::json> preprocess;
  std::vector<double> feature_weights;
};

nlohmann::json checkpoint_json(TBiGanModel& model, const CheckpointExtras& extras = {});
void save_checkpoint(const std::string& path, TBiGanModel& model,
                     const CheckpointExtras& extras = {});

struct LoadedCheckpoint {
  TBiGanModel model;
  CheckpointExtras extras;
};

LoadedCheckpoint load_checkpoint_json(const nlohmann::json& j);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tbigan
