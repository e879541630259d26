#include "tbigan/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tbigan/errors.hpp"

namespace tbigan {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;
constexpr double kMaskValue = -1e30;

double l2norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> random_unit(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = gauss(rng);
  const double norm = l2norm(v);
  for (auto& x : v) x /= norm;
  return v;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

BlockParams make_block(std::size_t d, std::size_t hidden, std::mt19937_64& rng, bool spectral) {
  // Residual output projections start at zero unless spectrally normalized:
  // SN of a tiny matrix would jump straight to unit norm once it moves.
  const bool zero_out = !spectral;
  BlockParams b;
  b.ln1 = LayerNormParams(d);
  b.attn.qkv = Linear(d, 3 * d, rng, false, spectral);
  b.attn.out = Linear(d, d, rng, zero_out, spectral);
  b.ln2 = LayerNormParams(d);
  b.fc1 = Linear(d, hidden, rng, false, spectral);
  b.fc2 = Linear(hidden, d, rng, zero_out, spectral);
  return b;
}

void push_linear(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& name, const LayerNormParams& n) {
  out.push_back({name + ".gain", n.gain});
  out.push_back({name + ".bias", n.bias});
}

void push_block(std::vector<NamedTensor>& out, const std::string& name, const BlockParams& b) {
  push_norm(out, name + ".ln1", b.ln1);
  push_linear(out, name + ".attn.qkv", b.attn.qkv);
  push_linear(out, name + ".attn.out", b.attn.out);
  push_norm(out, name + ".ln2", b.ln2);
  push_linear(out, name + ".fc1", b.fc1);
  push_linear(out, name + ".fc2", b.fc2);
}

void push_block_sn(std::vector<std::pair<std::string, SpectralState*>>& out,
                   const std::string& name, BlockParams& b) {
  out.emplace_back(name + ".attn.qkv", &b.attn.qkv.sn);
  out.emplace_back(name + ".attn.out", &b.attn.out.sn);
  out.emplace_back(name + ".fc1", &b.fc1.sn);
  out.emplace_back(name + ".fc2", &b.fc2.sn);
}

}  // namespace

std::string to_string(PositionalMode mode) {
  return mode == PositionalMode::kSinusoidal ? "sinusoidal" : "learnable";
}

PositionalMode parse_positional_mode(const std::string& text) {
  if (text == "sinusoidal" || text == "sinusoidal_fixed") return PositionalMode::kSinusoidal;
  if (text == "learnable") return PositionalMode::kLearnable;
  throw ConfigError("unknown positional mode '" + text + "' (sinusoidal|learnable)");
}

// ---------------------------------------------------------------------------
// ModelConfig

std::size_t ModelConfig::mlp_hidden() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mlp_ratio * model_dim)));
}

void ModelConfig::validate() const {
  require(feature_dim > 0, "model.feature_dim must be positive");
  require(window_len > 0, "model.window_len must be positive");
  require(model_dim > 0 && latent_dim > 0, "model dims must be positive");
  require(num_heads > 0 && model_dim % num_heads == 0,
          "model.model_dim must be divisible by model.num_heads");
  require(attn_window > 0, "model.attn_window must be positive");
  require(attn_window <= window_len, "model.attn_window exceeds the window length");
  require(mlp_ratio > 0.0, "model.mlp_ratio must be positive");
  require(dropout >= 0.0 && dropout <= 0.5, "model.dropout must lie in [0, 0.5]");
  require(disc_blocks > 0, "model.disc_blocks must be positive");
  require(power_iters > 0, "model.power_iters must be positive");
}

ModelConfig ModelConfig::from_kv(const KeyValueConfig& kv) { return from_kv(kv, ModelConfig{}); }

ModelConfig ModelConfig::from_kv(const KeyValueConfig& kv, ModelConfig c) {
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.feature_dim = size("model.feature_dim", c.feature_dim);
  c.window_len = size("model.window_len", c.window_len);
  c.model_dim = size("model.model_dim", c.model_dim);
  c.latent_dim = size("model.latent_dim", c.latent_dim);
  c.num_blocks = size("model.num_blocks", c.num_blocks);
  c.num_heads = size("model.num_heads", c.num_heads);
  c.attn_window = size("model.attn_window", c.attn_window);
  c.mlp_ratio = kv.get_double("model.mlp_ratio", c.mlp_ratio);
  c.dropout = kv.get_double("model.dropout", c.dropout);
  if (auto p = kv.get("model.positional")) c.positional = parse_positional_mode(*p);
  c.spectral_norm = kv.get_bool("model.spectral_norm", c.spectral_norm);
  c.disc_blocks = size("model.disc_blocks", c.disc_blocks);
  c.power_iters = size("model.power_iters", c.power_iters);
  c.init_seed = static_cast<std::uint64_t>(
      kv.get_int("model.init_seed", static_cast<long long>(c.init_seed)));
  c.validate();
  return c;
}

void ModelConfig::to_kv(KeyValueConfig& kv) const {
  kv.set("model.feature_dim", std::to_string(feature_dim));
  kv.set("model.window_len", std::to_string(window_len));
  kv.set("model.model_dim", std::to_string(model_dim));
  kv.set("model.latent_dim", std::to_string(latent_dim));
  kv.set("model.num_blocks", std::to_string(num_blocks));
  kv.set("model.num_heads", std::to_string(num_heads));
  kv.set("model.attn_window", std::to_string(attn_window));
  kv.set("model.mlp_ratio", format_double(mlp_ratio));
  kv.set("model.dropout", format_double(dropout));
  kv.set("model.positional", to_string(positional));
  kv.set("model.spectral_norm", spectral_norm ? "true" : "false");
  kv.set("model.disc_blocks", std::to_string(disc_blocks));
  kv.set("model.power_iters", std::to_string(power_iters));
  kv.set("model.init_seed", std::to_string(init_seed));
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feature_dim", feature_dim},   {"window_len", window_len},
          {"model_dim", model_dim},       {"latent_dim", latent_dim},
          {"num_blocks", num_blocks},     {"num_heads", num_heads},
          {"attn_window", attn_window},   {"mlp_ratio", mlp_ratio},
          {"dropout", dropout},           {"positional", to_string(positional)},
          {"spectral_norm", spectral_norm}, {"disc_blocks", disc_blocks},
          {"power_iters", power_iters},   {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.window_len = j.at("window_len").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.attn_window = j.at("attn_window").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.positional = parse_positional_mode(j.at("positional").get<std::string>());
  c.spectral_norm = j.at("spectral_norm").get<bool>();
  c.disc_blocks = j.at("disc_blocks").get<std::size_t>();
  c.power_iters = j.at("power_iters").get<std::size_t>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Positional encodings

Tensor positional_encoding(std::size_t length, std::size_t dim, PositionalMode mode,
                           std::mt19937_64* rng) {
  if (mode == PositionalMode::kLearnable) {
    if (rng == nullptr) throw ConfigError("learnable positional encoding needs an rng");
    Tensor t = Tensor::trunc_normal({length, dim}, *rng, kInitStd);
    t.set_requires_grad(true);
    return t;
  }
  std::vector<double> table(length * dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double pair = static_cast<double>(j - j % 2);
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, pair / static_cast<double>(dim));
      table[p * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, dim}, std::move(table));
}

// ---------------------------------------------------------------------------
// Spectral normalization

double spectral_sigma(const Tensor& weight, const SpectralState& state) {
  const std::size_t rows = weight.size(0), cols = weight.size(1);
  const auto w = weight.data();
  double sigma = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < cols; ++j) row += w[i * cols + j] * state.v[j];
    sigma += state.u[i] * row;
  }
  return sigma;
}

Tensor spectral_normalize(const Tensor& weight, SpectralState& state, std::size_t power_iters,
                          bool update) {
  if (weight.dim() != 2) throw ShapeError("spectral_normalize expects a 2-D weight");
  const std::size_t rows = weight.size(0), cols = weight.size(1);
  if (state.u.size() != rows || state.v.size() != cols) {
    throw ShapeError("spectral_normalize: singular vector sizes do not match " +
                     shape_str(weight.shape()));
  }
  if (update) {
    const auto w = weight.data();
    std::vector<double> u = state.u, v(cols);
    for (std::size_t it = 0; it < power_iters; ++it) {
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) v[j] += w[i * cols + j] * u[i];
      }
      const double nv = l2norm(v);
      if (nv < 1e-12) return weight;
      for (auto& x : v) x /= nv;
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += w[i * cols + j] * v[j];
        u[i] = s;
      }
      const double nu = l2norm(u);
      if (nu < 1e-12) return weight;
      for (auto& x : u) x /= nu;
    }
    state.u = std::move(u);
    state.v = std::move(v);
  }
  if (std::abs(spectral_sigma(weight, state)) < 1e-12) return weight;
  Tensor u({1, rows}, state.u);
  Tensor v({cols, 1}, state.v);
  Tensor sigma = reshape(matmul(matmul(u, weight), v), {1});
  return div(weight, sigma);
}

// ---------------------------------------------------------------------------
// Layers

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero_weight,
               bool spectral_flag, double init_std)
    : spectral(spectral_flag) {
  const double std = init_std > 0.0 ? init_std : kInitStd;
  weight = zero_weight ? Tensor::zeros({in, out}) : Tensor::trunc_normal({in, out}, rng, std);
  weight.set_requires_grad(true);
  bias = Tensor::zeros({out}, true);
  if (spectral) {
    sn.u = random_unit(in, rng);
    sn.v = random_unit(out, rng);
  }
}

Tensor Linear::effective_weight(std::size_t power_iters, bool update) {
  return spectral ? spectral_normalize(weight, sn, power_iters, update) : weight;
}

Tensor Linear::operator()(const Tensor& x, std::size_t power_iters, bool update) {
  const std::size_t in = weight.size(0), out = weight.size(1);
  if (x.shape().empty() || x.shape().back() != in) {
    throw ShapeError("linear: expected trailing dimension " + std::to_string(in) + ", got " +
                     shape_str(x.shape()));
  }
  Tensor w = effective_weight(power_iters, update);
  if (x.dim() == 2) return add(matmul(x, w), bias);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor flat = reshape(x, {x.numel() / in, in});
  return reshape(add(matmul(flat, w), bias), out_shape);
}

LayerNormParams::LayerNormParams(std::size_t dim) {
  if (dim == 0) return;
  gain = Tensor::ones({dim});
  gain.set_requires_grad(true);
  bias = Tensor::zeros({dim}, true);
}

Tensor window_attention(const Tensor& tokens, AttentionParams& params, std::size_t window,
                        std::size_t heads, const ForwardContext& ctx) {
  const bool single = tokens.dim() == 2;
  Tensor x = single ? reshape(tokens, {1, tokens.size(0), tokens.size(1)}) : tokens;
  if (x.dim() != 3) throw ShapeError("window_attention expects (B, T, d) tokens");
  const std::size_t b = x.size(0), t = x.size(1), d = x.size(2);
  if (heads == 0 || d % heads != 0) throw ConfigError("model dim not divisible by heads");
  if (window == 0) throw ConfigError("attention window must be positive");
  const std::size_t padded = (t + window - 1) / window * window;
  if (window > padded) throw ConfigError("attention window exceeds padded sequence length");
  const std::size_t nw = padded / window, dh = d / heads;
  if (padded > t) x = pad_axis(x, 1, 0, padded - t);

  Tensor qkv = params.qkv(x, ctx.power_iters, ctx.spectral_update);  // (B, Tp, 3d)
  qkv = reshape(qkv, {b, nw, window, 3, heads, dh});
  qkv = permute(qkv, {3, 0, 1, 4, 2, 5});  // (3, B, nW, H, W, dh)
  const std::size_t groups = b * nw * heads;
  qkv = reshape(qkv, {3, groups, window, dh});
  Tensor q = reshape(slice_axis(qkv, 0, 0, 1), {groups, window, dh});
  Tensor k = reshape(slice_axis(qkv, 0, 1, 1), {groups, window, dh});
  Tensor v = reshape(slice_axis(qkv, 0, 2, 1), {groups, window, dh});

  Tensor scores = mul_scalar(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (padded > t) {
    // Only the last window holds padding; mask its padded keys.
    std::vector<double> mask(nw * heads * window * window, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < window; ++i) {
        for (std::size_t j = 0; j < window; ++j) {
          if ((nw - 1) * window + j >= t) {
            mask[(((nw - 1) * heads + h) * window + i) * window + j] = kMaskValue;
          }
        }
      }
    }
    scores = reshape(scores, {b, nw * heads, window, window});
    scores = add(scores, Tensor({nw * heads, window, window}, std::move(mask)));
    scores = reshape(scores, {groups, window, window});
  }
  Tensor probs = softmax(scores, -1);
  if (ctx.attention_probs != nullptr) *ctx.attention_probs = probs;
  Tensor ctxv = matmul(probs, v);  // (groups, W, dh)
  ctxv = reshape(ctxv, {b, nw, heads, window, dh});
  ctxv = permute(ctxv, {0, 1, 3, 2, 4});
  ctxv = reshape(ctxv, {b, padded, d});
  if (padded > t) ctxv = slice_axis(ctxv, 1, 0, t);
  Tensor out = params.out(ctxv, ctx.power_iters, ctx.spectral_update);
  return single ? reshape(out, {t, d}) : out;
}

Tensor transformer_block(const Tensor& tokens, BlockParams& p, std::size_t window,
                         std::size_t heads, const ForwardContext& ctx) {
  auto drop = [&](const Tensor& x) {
    if (!ctx.training || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
    return dropout(x, ctx.dropout, *ctx.rng, true);
  };
  Tensor h = add(tokens, drop(window_attention(p.ln1(tokens), p.attn, window, heads, ctx)));
  Tensor m = p.fc2(gelu(p.fc1(p.ln2(h), ctx.power_iters, ctx.spectral_update)),
                   ctx.power_iters, ctx.spectral_update);
  return add(h, drop(m));
}

// ---------------------------------------------------------------------------
// TBiGanModel

TBiGanModel::TBiGanModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  dropout_rng_.seed(config_.init_seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t f = config_.feature_dim, t = config_.window_len, d = config_.model_dim;
  const std::size_t dz = config_.latent_dim, hidden = config_.mlp_hidden();
  const bool sn = config_.spectral_norm;

  // The layers on either side of the latent code use fan-in scaling;
  // at 0.02 the code is swamped by the positional table and G ignores z for
  // many epochs.
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  e_embed_ = Linear(f, d, rng, false, false, fan_in(f));
  e_pos_ = positional_encoding(t, d, config_.positional, &rng);
  for (std::size_t i = 0; i < config_.num_blocks; ++i) {
    e_blocks_.push_back(make_block(d, hidden, rng, false));
  }
  e_norm_ = LayerNormParams(d);
  e_head_ = Linear(d, dz, rng, false, false, fan_in(d));

  g_proj_ = Linear(dz, d, rng, false, false, fan_in(dz));
  g_pos_ = positional_encoding(t, d, config_.positional, &rng);
  for (std::size_t i = 0; i < config_.num_blocks; ++i) {
    g_blocks_.push_back(make_block(d, hidden, rng, false));
  }
  g_norm_ = LayerNormParams(d);
  g_head_ = Linear(d, f, rng, false, false);

  d_embed_ = Linear(f, d, rng, false, sn);
  d_pos_ = positional_encoding(t, d, config_.positional, &rng);
  for (std::size_t i = 0; i < config_.disc_blocks; ++i) {
    d_blocks_.push_back(make_block(d, hidden, rng, sn));
  }
  d_norm_ = LayerNormParams(d);
  d_z1_ = Linear(dz, d, rng, false, sn);
  d_z2_ = Linear(d, d, rng, false, sn);
  d_head1_ = Linear(2 * d, d, rng, false, sn);
  d_head2_ = Linear(d, 1, rng, false, sn);
}

ForwardContext TBiGanModel::context(bool spectral_update) {
  ForwardContext ctx;
  ctx.training = training_;
  ctx.spectral_update = spectral_update;
  ctx.power_iters = config_.power_iters;
  ctx.dropout = config_.dropout;
  ctx.rng = &dropout_rng_;
  return ctx;
}

Tensor TBiGanModel::as_batch(const Tensor& x, std::size_t trailing, bool& squeezed) const {
  squeezed = x.dim() == trailing;
  if (!squeezed) return x;
  Shape s = x.shape();
  s.insert(s.begin(), 1);
  return reshape(x, s);
}

Tensor TBiGanModel::add_positions(const Tensor& tokens, const Tensor& table) const {
  return add(tokens, table);
}

Tensor TBiGanModel::encode(const Tensor& x_in) {
  bool squeezed = false;
  Tensor x = as_batch(x_in, 2, squeezed);
  if (x.dim() != 3 || x.size(1) != config_.window_len || x.size(2) != config_.feature_dim) {
    throw ShapeError("encode: expected (B, " + std::to_string(config_.window_len) + ", " +
                     std::to_string(config_.feature_dim) + "), got " + shape_str(x_in.shape()));
  }
  ForwardContext ctx = context(false);
  Tensor h = add_positions(e_embed_(x), e_pos_);
  for (auto& blk : e_blocks_) {
    h = transformer_block(h, blk, config_.attn_window, config_.num_heads, ctx);
  }
  Tensor z = e_head_(mean_axis(e_norm_(h), 1));
  return squeezed ? reshape(z, {config_.latent_dim}) : z;
}

Tensor TBiGanModel::generate(const Tensor& z_in) {
  bool squeezed = false;
  Tensor z = as_batch(z_in, 1, squeezed);
  if (z.dim() != 2 || z.size(1) != config_.latent_dim) {
    throw ShapeError("generate: expected (B, " + std::to_string(config_.latent_dim) + "), got " +
                     shape_str(z_in.shape()));
  }
  ForwardContext ctx = context(false);
  Tensor h = expand_axis(g_proj_(z), 1, config_.window_len);
  h = add_positions(h, g_pos_);
  for (auto& blk : g_blocks_) {
    h = transformer_block(h, blk, config_.attn_window, config_.num_heads, ctx);
  }
  Tensor x = g_head_(g_norm_(h));
  return squeezed ? reshape(x, {config_.window_len, config_.feature_dim}) : x;
}

Tensor TBiGanModel::discriminate_logits(const Tensor& x_in, const Tensor& z_in) {
  bool sx = false, sz = false;
  Tensor x = as_batch(x_in, 2, sx);
  Tensor z = as_batch(z_in, 1, sz);
  if (x.dim() != 3 || x.size(1) != config_.window_len || x.size(2) != config_.feature_dim ||
      z.dim() != 2 || z.size(1) != config_.latent_dim || z.size(0) != x.size(0)) {
    throw ShapeError("discriminate: incompatible shapes " + shape_str(x_in.shape()) + " and " +
                     shape_str(z_in.shape()));
  }
  // Power iteration only advances while D itself is being trained, so E/G
  // steps and scoring leave the discriminator state untouched.
  const bool update = training_ && d_embed_.weight.requires_grad();
  ForwardContext ctx = context(update);
  const std::size_t it = config_.power_iters;
  auto lin = [&](Linear& l, const Tensor& v) { return l(v, it, update); };

  Tensor hx = add_positions(lin(d_embed_, x), d_pos_);
  for (auto& blk : d_blocks_) {
    hx = transformer_block(hx, blk, config_.attn_window, config_.num_heads, ctx);
  }
  Tensor px = mean_axis(d_norm_(hx), 1);
  Tensor hz = leaky_relu(lin(d_z2_, leaky_relu(lin(d_z1_, z), kLeakySlope)), kLeakySlope);
  Tensor joint = concat({px, hz}, 1);
  Tensor logit = lin(d_head2_, leaky_relu(lin(d_head1_, joint), kLeakySlope));
  return sx ? reshape(logit, {1}) : reshape(logit, {x.size(0)});
}

Tensor TBiGanModel::discriminate(const Tensor& x, const Tensor& z) {
  // sigmoid saturates to exactly 0 or 1 in f64 beyond |logit| ~ 37; squash by
  // one ulp so the probability stays strictly inside (0, 1).
  constexpr double kEdge = 0x1p-53;
  return add_scalar(mul_scalar(sigmoid(discriminate_logits(x, z)), 1.0 - 2.0 * kEdge), kEdge);
}

std::vector<NamedTensor> TBiGanModel::parameters(Part part) {
  std::vector<NamedTensor> out;
  switch (part) {
    case Part::kEncoder:
      push_linear(out, "encoder.embed", e_embed_);
      if (e_pos_.requires_grad()) out.push_back({"encoder.pos", e_pos_});
      for (std::size_t i = 0; i < e_blocks_.size(); ++i) {
        push_block(out, "encoder.block" + std::to_string(i), e_blocks_[i]);
      }
      push_norm(out, "encoder.norm", e_norm_);
      push_linear(out, "encoder.head", e_head_);
      break;
    case Part::kGenerator:
      push_linear(out, "generator.proj", g_proj_);
      if (g_pos_.requires_grad()) out.push_back({"generator.pos", g_pos_});
      for (std::size_t i = 0; i < g_blocks_.size(); ++i) {
        push_block(out, "generator.block" + std::to_string(i), g_blocks_[i]);
      }
      push_norm(out, "generator.norm", g_norm_);
      push_linear(out, "generator.head", g_head_);
      break;
    case Part::kDiscriminator:
      push_linear(out, "discriminator.embed", d_embed_);
      if (d_pos_.requires_grad()) out.push_back({"discriminator.pos", d_pos_});
      for (std::size_t i = 0; i < d_blocks_.size(); ++i) {
        push_block(out, "discriminator.block" + std::to_string(i), d_blocks_[i]);
      }
      push_norm(out, "discriminator.norm", d_norm_);
      push_linear(out, "discriminator.z1", d_z1_);
      push_linear(out, "discriminator.z2", d_z2_);
      push_linear(out, "discriminator.head1", d_head1_);
      push_linear(out, "discriminator.head2", d_head2_);
      break;
  }
  return out;
}

std::vector<NamedTensor> TBiGanModel::parameters() {
  auto out = parameters(Part::kEncoder);
  for (auto part : {Part::kGenerator, Part::kDiscriminator}) {
    auto more = parameters(part);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::size_t TBiGanModel::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void TBiGanModel::set_requires_grad(Part part, bool flag) {
  for (auto& p : parameters(part)) p.tensor.set_requires_grad(flag);
}

void TBiGanModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::vector<std::pair<std::string, SpectralState*>> TBiGanModel::spectral_states() {
  std::vector<std::pair<std::string, SpectralState*>> out;
  if (!config_.spectral_norm) return out;
  out.emplace_back("discriminator.embed", &d_embed_.sn);
  for (std::size_t i = 0; i < d_blocks_.size(); ++i) {
    push_block_sn(out, "discriminator.block" + std::to_string(i), d_blocks_[i]);
  }
  out.emplace_back("discriminator.z1", &d_z1_.sn);
  out.emplace_back("discriminator.z2", &d_z2_.sn);
  out.emplace_back("discriminator.head1", &d_head1_.sn);
  out.emplace_back("discriminator.head2", &d_head2_.sn);
  return out;
}

double TBiGanModel::max_spectral_sigma() {
  if (!config_.spectral_norm) return 0.0;
  std::vector<Linear*> layers{&d_embed_, &d_z1_, &d_z2_, &d_head1_, &d_head2_};
  for (auto& b : d_blocks_) {
    layers.insert(layers.end(), {&b.attn.qkv, &b.attn.out, &b.fc1, &b.fc2});
  }
  double worst = 0.0;
  for (Linear* l : layers) {
    const double s = std::abs(spectral_sigma(l->weight, l->sn));
    if (s < 1e-12) continue;
    // sigma of W/s along the tracked direction pair
    Tensor w = l->effective_weight(1, false);
    worst = std::max(worst, std::abs(spectral_sigma(w, l->sn)));
  }
  return worst;
}

std::uint64_t TBiGanModel::hash() {
  std::uint64_t h = 0;
  for (const auto& p : parameters()) h = hash_values(p.tensor.data(), h);
  for (const auto& [name, st] : spectral_states()) {
    h = hash_values(st->u, h);
    h = hash_values(st->v, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json checkpoint_json(TBiGanModel& model, const CheckpointExtras& extras) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = model.config().to_json();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"data", std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())}});
  }
  j["parameters"] = std::move(params);
  nlohmann::json sn = nlohmann::json::array();
  for (const auto& [name, st] : model.spectral_states()) {
    sn.push_back({{"name", name}, {"u", st->u}, {"v", st->v}});
  }
  j["spectral"] = std::move(sn);
  if (extras.preprocess) j["preprocess"] = *extras.preprocess;
  if (!extras.feature_weights.empty()) j["feature_weights"] = extras.feature_weights;
  return j;
}

void save_checkpoint(const std::string& path, TBiGanModel& model, const CheckpointExtras& extras) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f << checkpoint_json(model, extras).dump() << '\n';
  if (!f) throw DataError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    LoadedCheckpoint out{TBiGanModel(ModelConfig::from_json(j.at("config"))), {}};
    auto params = out.model.parameters();
    const auto& stored = j.at("parameters");
    if (stored.size() != params.size()) {
      throw DataError("checkpoint holds " + std::to_string(stored.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& s = stored[i];
      if (s.at("name").get<std::string>() != params[i].name ||
          s.at("shape").get<Shape>() != params[i].tensor.shape()) {
        throw DataError("checkpoint tensor mismatch at " + params[i].name);
      }
      const auto data = s.at("data").get<std::vector<double>>();
      auto dst = params[i].tensor.mutable_data();
      if (data.size() != dst.size()) throw DataError("bad tensor size for " + params[i].name);
      std::copy(data.begin(), data.end(), dst.begin());
    }
    auto states = out.model.spectral_states();
    const auto& sn = j.at("spectral");
    if (sn.size() != states.size()) throw DataError("checkpoint spectral state count mismatch");
    for (std::size_t i = 0; i < states.size(); ++i) {
      states[i].second->u = sn[i].at("u").get<std::vector<double>>();
      states[i].second->v = sn[i].at("v").get<std::vector<double>>();
    }
    if (j.contains("preprocess")) out.extras.preprocess = j["preprocess"];
    if (j.contains("feature_weights")) {
      out.extras.feature_weights = j["feature_weights"].get<std::vector<double>>();
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  return load_checkpoint_json(j);
}

}  // namespace tbigan
