#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "eegformer/errors.hpp"
#include "eegformer/rng.hpp"
#include "eegformer/tensor.hpp"

namespace eegformer {

constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t num_heads = 4;  // 8 for the 6-class age configuration
  std::size_t d_ff = 64;
  std::size_t num_encoders = 4;
  std::size_t num_classes = 2;
  std::size_t window_samples = 256;
  std::size_t num_channels = 14;
  double dropout_p = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    if (d_model == 0 || d_ff == 0 || num_encoders == 0 || window_samples == 0 ||
        num_channels == 0) {
      throw ParameterError("model config: all dimensions must be positive");
    }
    if (d_model % 2 != 0) {
      throw ParameterError("model config: d_model must be even for the sinusoidal "
                           "positional encoding, got " + std::to_string(d_model));
    }
    if (num_heads == 0 || d_model % num_heads != 0) {
      throw ParameterError("model config: d_model " + std::to_string(d_model) +
                           " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (num_classes != 2 && num_classes != 3 && num_classes != 6) {
      throw ParameterError("model config: num_classes must be 2, 3 or 6, got " +
                           std::to_string(num_classes));
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
      throw ParameterError("model config: dropout_p must be in [0, 1)");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// PE[pos, 2i]   = sin(pos / 10000^(2i/d))
// PE[pos, 2i+1] = cos(pos / 10000^(2i/d))
inline Tensor positional_encoding(std::size_t window_samples, std::size_t d_model) {
  if (d_model % 2 != 0) {
    throw ParameterError("positional_encoding: d_model must be even, got " +
                         std::to_string(d_model));
  }
  Tensor pe({window_samples, d_model});
  for (std::size_t i = 0; i < d_model / 2; ++i) {
    const double omega =
        std::exp(-std::log(10000.0) * (2.0 * static_cast<double>(i)) /
                 static_cast<double>(d_model));
    for (std::size_t pos = 0; pos < window_samples; ++pos) {
      const double angle = static_cast<double>(pos) * omega;
      pe.at(pos * d_model + 2 * i) = std::sin(angle);
      pe.at(pos * d_model + 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

struct EncoderParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections
  Tensor w1, b1, w2, b2;                  // position-wise feed-forward
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// Attention sublayer: per-head scaled dot-product attention over linear
// projections of x, heads concatenated and projected back to d_model.
inline Tensor multi_head_attention(const EncoderParams& p, const Tensor& x,
                                   std::size_t num_heads,
                                   std::vector<double>* probs_out = nullptr) {
  Tensor q = add_broadcast(matmul(x, p.wq), p.bq);
  Tensor k = add_broadcast(matmul(x, p.wk), p.bk);
  Tensor v = add_broadcast(matmul(x, p.wv), p.bv);
  Tensor ctx = attention(q, k, v, num_heads, probs_out);
  return add_broadcast(matmul(ctx, p.wo), p.bo);
}

// Post-norm residual block:
//   y   = LN(x + Dropout(MHA(x)))
//   out = LN(y + Dropout(FFN(y))),  FFN(y) = ReLU(y W1 + b1) W2 + b2
inline Tensor encoder_block(const EncoderParams& p, const Tensor& x,
                            std::size_t num_heads, double dropout_p, bool training,
                            Rng* rng, std::vector<double>* probs_out = nullptr) {
  Tensor attn = dropout(multi_head_attention(p, x, num_heads, probs_out), dropout_p,
                        training, rng);
  Tensor y = layer_norm(add(x, attn), p.ln1_gain, p.ln1_bias, kLayerNormEps);
  Tensor hidden = relu(add_broadcast(matmul(y, p.w1), p.b1));
  Tensor ffn = dropout(add_broadcast(matmul(hidden, p.w2), p.b2), dropout_p,
                       training, rng);
  return layer_norm(add(y, ffn), p.ln2_gain, p.ln2_bias, kLayerNormEps);
}

class TransformerClassifier {
 public:
  explicit TransformerClassifier(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    embed_w = init_weight(rng, {cfg_.num_channels, d});
    embed_b = Tensor::zeros({d}, true);
    pe_ = positional_encoding(cfg_.window_samples, d);
    encoders_.resize(cfg_.num_encoders);
    for (auto& e : encoders_) {
      e.wq = init_weight(rng, {d, d});
      e.bq = Tensor::zeros({d}, true);
      e.wk = init_weight(rng, {d, d});
      e.bk = Tensor::zeros({d}, true);
      e.wv = init_weight(rng, {d, d});
      e.bv = Tensor::zeros({d}, true);
      e.wo = init_weight(rng, {d, d});
      e.bo = Tensor::zeros({d}, true);
      e.w1 = init_weight(rng, {d, f});
      e.b1 = Tensor::zeros({f}, true);
      e.w2 = init_weight(rng, {f, d});
      e.b2 = Tensor::zeros({d}, true);
      e.ln1_gain = Tensor::ones({d}, true);
      e.ln1_bias = Tensor::zeros({d}, true);
      e.ln2_gain = Tensor::ones({d}, true);
      e.ln2_bias = Tensor::zeros({d}, true);
    }
    // The head starts at zero so a fresh model scores every class equally;
    // fan-in uniform init here leaves logit offsets of ~0.3 via the pooled
    // positional components.
    head_w = Tensor::zeros({d, cfg_.num_classes}, true);
    head_b = Tensor::zeros({cfg_.num_classes}, true);
  }

  const ModelConfig& config() const { return cfg_; }
  const Tensor& positional_table() const { return pe_; }
  std::vector<EncoderParams>& encoders() { return encoders_; }
  const std::vector<EncoderParams>& encoders() const { return encoders_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.w", embed_w);
    out.emplace_back("embed.b", embed_b);
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
      const std::string p = "enc" + std::to_string(i) + ".";
      EncoderParams& e = encoders_[i];
      out.emplace_back(p + "wq", e.wq);
      out.emplace_back(p + "bq", e.bq);
      out.emplace_back(p + "wk", e.wk);
      out.emplace_back(p + "bk", e.bk);
      out.emplace_back(p + "wv", e.wv);
      out.emplace_back(p + "bv", e.bv);
      out.emplace_back(p + "wo", e.wo);
      out.emplace_back(p + "bo", e.bo);
      out.emplace_back(p + "w1", e.w1);
      out.emplace_back(p + "b1", e.b1);
      out.emplace_back(p + "w2", e.w2);
      out.emplace_back(p + "b2", e.b2);
      out.emplace_back(p + "ln1.gain", e.ln1_gain);
      out.emplace_back(p + "ln1.bias", e.ln1_bias);
      out.emplace_back(p + "ln2.gain", e.ln2_gain);
      out.emplace_back(p + "ln2.bias", e.ln2_bias);
    }
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  std::vector<std::vector<double>> snapshot() {
    std::vector<std::vector<double>> out;
    for (auto& t : parameters()) out.push_back(t.values());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    auto params = parameters();
    if (snap.size() != params.size()) {
      throw ContractError("restore: snapshot has " + std::to_string(snap.size()) +
                          " tensors, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i].values() = snap[i];
  }

  // Per-timestep affine projection of the channel vector, plus the
  // positional table broadcast over the batch.
  Tensor embed(const Tensor& x, bool use_positional = true) const {
    check_input(x);
    Tensor projected = add_broadcast(matmul(x, embed_w), embed_b);
    return use_positional ? add_broadcast(projected, pe_) : projected;
  }

  // Encoder stack output, shape (batch, window, d_model).
  Tensor encode(const Tensor& x, bool training, Rng* rng, bool use_positional = true,
                std::vector<std::vector<double>>* attn_probs = nullptr) const {
    Tensor h = embed(x, use_positional);
    for (const EncoderParams& e : encoders_) {
      std::vector<double>* sink = nullptr;
      if (attn_probs != nullptr) {
        attn_probs->emplace_back();
        sink = &attn_probs->back();
      }
      h = encoder_block(e, h, cfg_.num_heads, cfg_.dropout_p, training, rng, sink);
    }
    return h;
  }

  // Pooled pre-head representation, eval mode. Fig-style feature export.
  Tensor features(const Tensor& x) const {
    return mean(encode(x, /*training=*/false, nullptr), 1);
  }

  Tensor head(const Tensor& pooled) const {
    return add_broadcast(matmul(pooled, head_w), head_b);
  }

  // Raw logits (batch, num_classes); the loss applies softmax.
  Tensor forward(const Tensor& x, bool training = false, Rng* rng = nullptr) const {
    return head(mean(encode(x, training, rng), 1));
  }

 private:
  static Tensor init_weight(Rng& rng, Shape shape) {
    const double bound = std::sqrt(1.0 / static_cast<double>(shape[0]));
    return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
  }

  void check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.window_samples ||
        x.dim(2) != cfg_.num_channels) {
      throw DimensionError("model: input " + shape_str(x.shape()) +
                           " does not match (batch, " +
                           std::to_string(cfg_.window_samples) + ", " +
                           std::to_string(cfg_.num_channels) + ")");
    }
  }

  ModelConfig cfg_;
  Tensor embed_w, embed_b, pe_, head_w, head_b;
  std::vector<EncoderParams> encoders_;
};

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Layout (all integers little-endian):
//   "EEGT" | u16 version=1 | u8 payload_width (8 or 4)
//   config: u32 d_model, num_heads, d_ff, num_encoders, num_classes,
//           window_samples, num_channels | f64 dropout_p | u64 seed
//   u32 num_params, then per parameter:
//   u16 name_len | name | u8 rank | u32 dims[rank] | payload (width bytes each)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_bytes(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t f64_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}

inline double bits_f64(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

inline std::uint32_t f32_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

inline float bits_f32(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint64_t take(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > buf_.size()) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            path_ + ": checkpoint truncated at byte " +
                                std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string take_string(std::size_t len) {
    if (pos_ + len > buf_.size()) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            path_ + ": checkpoint truncated inside a name");
    }
    std::string s = buf_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Writes every parameter bit-exactly in 64-bit payload mode; 32-bit mode is
// a smaller, lossy option.
inline void save_checkpoint(TransformerClassifier& model, const std::string& path,
                            bool payload64 = true) {
  std::string out;
  out += "EEGT";
  detail::put_bytes(out, 1, 2);  // version
  detail::put_bytes(out, payload64 ? 8 : 4, 1);
  const ModelConfig& c = model.config();
  detail::put_bytes(out, c.d_model, 4);
  detail::put_bytes(out, c.num_heads, 4);
  detail::put_bytes(out, c.d_ff, 4);
  detail::put_bytes(out, c.num_encoders, 4);
  detail::put_bytes(out, c.num_classes, 4);
  detail::put_bytes(out, c.window_samples, 4);
  detail::put_bytes(out, c.num_channels, 4);
  detail::put_bytes(out, detail::f64_bits(c.dropout_p), 8);
  detail::put_bytes(out, c.seed, 8);

  auto named = model.named_parameters();
  detail::put_bytes(out, named.size(), 4);
  for (auto& [name, t] : named) {
    detail::put_bytes(out, name.size(), 2);
    out += name;
    detail::put_bytes(out, t.rank(), 1);
    for (std::size_t d : t.shape()) detail::put_bytes(out, d, 4);
    for (double v : t.values()) {
      if (payload64) {
        detail::put_bytes(out, detail::f64_bits(v), 8);
      } else {
        detail::put_bytes(out, detail::f32_bits(static_cast<float>(v)), 4);
      }
    }
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

inline TransformerClassifier load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());

  detail::ByteReader r(buf, path);
  if (r.take_string(std::min<std::size_t>(4, buf.size())) != "EEGT") {
    throw CheckpointError(CheckpointError::Kind::bad_magic,
                          path + ": not a checkpoint (bad magic)");
  }
  const std::uint64_t version = r.take(2);
  if (version != 1) {
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          path + ": unsupported checkpoint version " +
                              std::to_string(version));
  }
  const std::uint64_t width = r.take(1);
  if (width != 8 && width != 4) {
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          path + ": unsupported payload width " + std::to_string(width));
  }

  ModelConfig c;
  c.d_model = r.take(4);
  c.num_heads = r.take(4);
  c.d_ff = r.take(4);
  c.num_encoders = r.take(4);
  c.num_classes = r.take(4);
  c.window_samples = r.take(4);
  c.num_channels = r.take(4);
  c.dropout_p = detail::bits_f64(r.take(8));
  c.seed = r.take(8);

  TransformerClassifier model(c);
  auto named = model.named_parameters();
  const std::uint64_t count = r.take(4);
  if (count != named.size()) {
    throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                          path + ": header declares " + std::to_string(count) +
                              " parameters, config implies " +
                              std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const std::uint64_t name_len = r.take(2);
    const std::string got = r.take_string(name_len);
    if (got != name) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            path + ": expected parameter '" + name + "', found '" +
                                got + "'");
    }
    const std::uint64_t rank = r.take(1);
    Shape dims;
    for (std::uint64_t i = 0; i < rank; ++i) dims.push_back(r.take(4));
    if (dims != t.shape()) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            path + ": parameter '" + name + "' has shape " +
                                shape_str(dims) + ", config implies " +
                                shape_str(t.shape()));
    }
    for (double& v : t.values()) {
      v = width == 8 ? detail::bits_f64(r.take(8))
                     : static_cast<double>(detail::bits_f32(
                           static_cast<std::uint32_t>(r.take(4))));
    }
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                          path + ": " + std::to_string(r.remaining()) +
                              " unexpected trailing bytes");
  }
  return model;
}

}  // namespace eegformer
