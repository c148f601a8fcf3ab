#include "revcd/model.hpp"

#include <cmath>
#include <string>

#include "revcd/error.hpp"

namespace revcd {

void DenoiserConfig::validate() const {
  if (d_s == 0 || d_x == 0) throw ConfigError("model: d_s and d_x must be positive");
  if (hidden.empty()) throw ConfigError("model: at least one hidden layer is required");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("model: hidden widths must be positive");
  if (d_t == 0 || d_t % 2 != 0) throw ConfigError("model: d_t must be positive and even, got " + std::to_string(d_t));
  if (n_tokens == 0 || d_x % n_tokens != 0)
    throw ConfigError("model: d_x=" + std::to_string(d_x) + " not divisible by n_tokens=" + std::to_string(n_tokens));
  if (n_heads == 0 || d_c % n_heads != 0)
    throw ConfigError("model: d_c=" + std::to_string(d_c) + " not divisible by n_heads=" + std::to_string(n_heads));
  if (d_ff == 0) throw ConfigError("model: d_ff must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  if (n_seen_classes == 0) throw ConfigError("model: n_seen_classes must be positive");
  if (max_t < 1) throw ConfigError("model: max_t must be >= 1");
}

template <typename T>
std::size_t ParamStore<T>::add(std::string name, Tensor<T> value) {
  for (const auto& n : names_)
    if (n == name) throw ShapeError("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ShapeError("no parameter named " + std::string(name));
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Dims dims, double bound, Rng& rng) {
  Tensor<T> out(std::move(dims));
  for (auto& v : out.data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  return out;
}

template <typename T>
Tensor<T> normal_tensor(Dims dims, double stddev, Rng& rng) {
  Tensor<T> out(std::move(dims));
  for (auto& v : out.data()) v = static_cast<T>(stddev * rng.normal());
  return out;
}

// Parameter-group tag is the prefix before the first '.'.
std::string_view group_of(std::string_view name) {
  return name.substr(0, name.find('.'));
}

}  // namespace

template <typename T>
typename Denoiser<T>::Linear Denoiser<T>::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                                     Rng& rng, double bias_value, bool gate) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  // Multiplicative gates start near the identity: small weights, unit bias.
  l.w = params_.add(name + ".w", uniform_tensor<T>({in, out}, gate ? 0.1 * bound : bound, rng));
  if (gate)
    l.b = params_.add(name + ".b", Tensor<T>({out}, static_cast<T>(bias_value)));
  else
    l.b = params_.add(name + ".b", uniform_tensor<T>({out}, bound, rng));
  return l;
}

template <typename T>
typename Denoiser<T>::Norm Denoiser<T>::add_norm(const std::string& name, std::size_t width) {
  return {params_.add(name + ".gamma", Tensor<T>({width}, T(1))), params_.add(name + ".beta", Tensor<T>({width}, T(0)))};
}

template <typename T>
Denoiser<T>::Denoiser(DenoiserConfig config, std::uint64_t init_seed)
    : config_(std::move(config)),
      time_spec_(TimeEmbeddingSpec::standard(static_cast<int>(config_.d_t), config_.max_t)) {
  config_.validate();
  Rng rng(init_seed);
  const std::size_t d_tok = config_.d_x / config_.n_tokens;
  const std::size_t dc = config_.d_c;

  token_embed_ = add_linear("msa.token", d_tok, dc, rng);
  pos_embed_ = params_.add("msa.pos", normal_tensor<T>({config_.n_tokens, dc}, 0.1, rng));
  q_ = add_linear("msa.q", dc, dc, rng);
  k_ = add_linear("msa.k", dc, dc, rng);
  v_ = add_linear("msa.v", dc, dc, rng);
  o_ = add_linear("msa.o", dc, dc, rng);
  ln1_ = add_norm("msa.ln1", dc);
  ff1_ = add_linear("msa.ff1", dc, config_.d_ff, rng);
  ff2_ = add_linear("msa.ff2", config_.d_ff, dc, rng);
  ln2_ = add_norm("msa.ln2", dc);
  null_embed_ = params_.add("null.embedding", normal_tensor<T>({dc}, 0.1, rng));

  const auto& hidden = config_.hidden;
  auto make_block = [&](const std::string& name, std::size_t in, std::size_t out, bool encoder) {
    Block blk;
    blk.fc = add_linear("layers." + name + ".fc", in, out, rng);
    blk.bn = add_norm("layers." + name + ".bn", out);
    blk.time_proj = add_linear("time_proj." + name, config_.d_t, out, rng, 1.0, encoder);
    blk.cond_proj = add_linear("cond_proj." + name, dc, out, rng, 1.0, !encoder);
    blk.bn_index = bn_.size();
    bn_.emplace_back(out);
    bn_names_.push_back("bn." + name);
    return blk;
  };
  std::size_t in = config_.d_s;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    encoder_.push_back(make_block("enc" + std::to_string(i), in, hidden[i], true));
    in = hidden[i];
  }
  for (std::size_t i = hidden.size() - 1; i-- > 0;) {
    decoder_.push_back(make_block("dec" + std::to_string(decoder_.size()), in, hidden[i], false));
    in = hidden[i];
  }
  out_ = add_linear("layers.out", in, config_.d_s, rng);
  classifier_ = add_linear("classifier.head", config_.d_s, config_.n_seen_classes, rng);
}

template <typename T>
typename Denoiser<T>::Bound Denoiser<T>::bind(Tape<T>& tape, bool trainable) const {
  Bound b;
  b.tape = &tape;
  b.p.reserve(params_.size());
  for (const auto& v : params_.values()) b.p.push_back(tape.leaf(v, trainable));
  return b;
}

template <typename T>
Var<T> Denoiser<T>::apply(const Bound& b, const Linear& l, Var<T> x) {
  return ad::add_bias(ad::matmul(x, b.p[l.w]), b.p[l.b]);
}

template <typename T>
Var<T> Denoiser<T>::encode_condition(const Bound& b, Var<T> x, std::vector<T>* attention_weights) const {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != config_.d_x)
    throw ShapeError("encode_condition: expected [b x " + std::to_string(config_.d_x) + "], got " +
                     dims_to_string(xv.dims()));
  const std::size_t batch = xv.rows();
  const std::size_t n_tok = config_.n_tokens;
  auto tokens = ad::reshape(x, {batch * n_tok, config_.d_x / n_tok});
  auto e = ad::add(apply(b, token_embed_, tokens), ad::tile_rows(b.p[pos_embed_], batch));
  auto q = apply(b, q_, e);
  auto k = apply(b, k_, e);
  auto v = apply(b, v_, e);
  auto a = ad::attention(q, k, v, n_tok, config_.n_heads, attention_weights);
  auto h1 = ad::layer_norm(ad::add(e, apply(b, o_, a)), b.p[ln1_.gamma], b.p[ln1_.beta]);
  auto ff = apply(b, ff2_, ad::relu(apply(b, ff1_, h1)));
  auto h2 = ad::layer_norm(ad::add(h1, ff), b.p[ln2_.gamma], b.p[ln2_.beta]);
  return ad::group_mean(h2, n_tok);
}

template <typename T>
Var<T> Denoiser<T>::null_condition(const Bound& b, std::size_t rows) const {
  return ad::tile_rows(ad::reshape(b.p[null_embed_], {1, config_.d_c}), rows);
}

template <typename T>
Var<T> Denoiser<T>::block(const Bound& b, const Block& blk, Var<T> h, Var<T> temb, Var<T> cond, bool encoder,
                          bool training, Rng* dropout_rng, BatchNormStats<T>& stats) const {
  auto z = ad::relu(ad::batch_norm(apply(b, blk.fc, h), b.p[blk.bn.gamma], b.p[blk.bn.beta], stats, training));
  auto tp = apply(b, blk.time_proj, temb);
  auto cp = apply(b, blk.cond_proj, cond);
  Var<T> fused = (encoder && !symmetric_fusion_) ? ad::add(ad::hadamard(z, tp), cp) : ad::add(ad::hadamard(z, cp), tp);
  if (training && dropout_rng && config_.dropout > 0.0)
    fused = ad::mul_const(fused, dropout_mask<T>(fused.dims(), config_.dropout, *dropout_rng));
  return fused;
}

template <typename T>
Var<T> Denoiser<T>::denoise(const Bound& b, Var<T> s_t, std::span<const int> t, Var<T> cond,
                            std::span<const std::uint8_t> null_mask, bool training, Rng* dropout_rng) {
  const auto& sv = s_t.value();
  if (sv.rank() != 2 || sv.cols() != config_.d_s)
    throw ShapeError("denoise: expected s_t [b x " + std::to_string(config_.d_s) + "], got " +
                     dims_to_string(sv.dims()));
  const std::size_t batch = sv.rows();
  if (t.size() != batch) throw ShapeError("denoise: " + std::to_string(t.size()) + " timesteps for batch " + std::to_string(batch));
  if (cond.value().rank() != 2 || cond.value().rows() != batch || cond.value().cols() != config_.d_c)
    throw ShapeError("denoise: condition dims " + dims_to_string(cond.dims()) + ", expected [" + std::to_string(batch) +
                     "x" + std::to_string(config_.d_c) + "]");
  if (!null_mask.empty()) {
    if (null_mask.size() != batch) throw ShapeError("denoise: null mask length does not match batch");
    cond = ad::replace_rows(cond, b.p[null_embed_], null_mask);
  }
  auto temb = b.tape->constant(time_embedding_batch<T>(t, time_spec_));

  std::vector<Var<T>> skips;
  Var<T> h = s_t;
  for (const auto& blk : encoder_) {
    h = block(b, blk, h, temb, cond, true, training, dropout_rng, bn_[blk.bn_index]);
    skips.push_back(h);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto& blk = decoder_[i];
    h = block(b, blk, h, temb, cond, false, training, dropout_rng, bn_[blk.bn_index]);
    h = ad::add(h, skips[skips.size() - 2 - i]);
  }
  return apply(b, out_, h);
}

template <typename T>
Var<T> Denoiser<T>::classify(const Bound& b, Var<T> s0_hat) const {
  if (s0_hat.value().rank() != 2 || s0_hat.value().cols() != config_.d_s)
    throw ShapeError("classify: expected [b x " + std::to_string(config_.d_s) + "], got " +
                     dims_to_string(s0_hat.dims()));
  return apply(b, classifier_, s0_hat);
}

template <typename T>
Tensor<T> Denoiser<T>::encode_condition(const Tensor<T>& x, std::vector<T>* attention_weights) const {
  Tape<T> tape(false);
  auto b = bind(tape, false);
  return encode_condition(b, tape.constant(x), attention_weights).value();
}

template <typename T>
Tensor<T> Denoiser<T>::denoise(const Tensor<T>& s_t, std::span<const int> t, const Tensor<T>& cond,
                               std::span<const std::uint8_t> null_mask) const {
  Tape<T> tape(false);
  auto b = bind(tape, false);
  // Inference never touches the running statistics.
  auto& self = const_cast<Denoiser&>(*this);
  return self.denoise(b, tape.constant(s_t), t, tape.constant(cond), null_mask, false, nullptr).value();
}

template <typename T>
Tensor<T> Denoiser<T>::classify(const Tensor<T>& s0_hat) const {
  Tape<T> tape(false);
  auto b = bind(tape, false);
  return classify(b, tape.constant(s0_hat)).value();
}

template <typename T>
std::vector<std::size_t> Denoiser<T>::group(std::string_view name) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (group_of(params_.name(i)) == name) out.push_back(i);
  if (out.empty()) throw ShapeError("no parameter group named " + std::string(name));
  return out;
}

template <typename T>
T loss_classification(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  Tape<T> tape(false);
  return ad::softmax_cross_entropy(tape.constant(logits), labels).value().item();
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template float loss_classification(const Tensor<float>&, std::span<const std::size_t>);
template double loss_classification(const Tensor<double>&, std::span<const std::size_t>);

}  // namespace revcd
