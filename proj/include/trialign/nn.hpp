#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trialign/binio.hpp"
#include "trialign/embedding.hpp"
#include "trialign/error.hpp"
#include "trialign/losses.hpp"
#include "trialign/mat.hpp"
#include "trialign/rng.hpp"

namespace trialign {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_deriv(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
}

struct MlpCache {
  std::vector<Mat> a;  // a[0] = input, a[l+1] = activation after layer l
  std::vector<Mat> z;  // pre-activations per layer
};

// Fully connected net with GELU hidden layers and a linear output layer.
// Parameters live in one flat vector (per layer: row-major W out x in, then
// bias) so optimizers and checkpoints can treat them uniformly.
struct Mlp {
  std::vector<int> dims;  // [in, h1, ..., out]
  std::vector<double> params;
  std::vector<size_t> w_off, b_off;

  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  size_t param_count() const { return params.size(); }

  static Mlp create(std::vector<int> dims, uint64_t seed) {
    if (dims.size() < 2) throw_invalid_input("Mlp: need at least input and output dims");
    for (int d : dims)
      if (d < 1) throw_invalid_input("Mlp: all layer dims must be positive");
    Mlp net;
    net.dims = std::move(dims);
    net.build_offsets();
    RngEngine rng = make_rng(seed);
    for (int l = 0; l < net.layer_count(); ++l) {
      const int fan_in = net.dims[l];
      const int fan_out = net.dims[l + 1];
      const double a = std::sqrt(6.0 / fan_in);
      double* w = net.params.data() + net.w_off[l];
      for (int i = 0; i < fan_out * fan_in; ++i) w[i] = uniform(rng, -a, a);
      // biases stay zero
    }
    return net;
  }

  void build_offsets() {
    w_off.clear();
    b_off.clear();
    size_t off = 0;
    for (int l = 0; l + 1 < static_cast<int>(dims.size()); ++l) {
      w_off.push_back(off);
      off += static_cast<size_t>(dims[l + 1]) * dims[l];
      b_off.push_back(off);
      off += static_cast<size_t>(dims[l + 1]);
    }
    params.assign(off, 0.0);
  }

  std::span<const double> w_row(int l, int o) const {
    return {params.data() + w_off[l] + static_cast<size_t>(o) * dims[l],
            static_cast<size_t>(dims[l])};
  }
  std::span<const double> bias(int l) const {
    return {params.data() + b_off[l], static_cast<size_t>(dims[l + 1])};
  }

  Mat forward(const Mat& x, MlpCache* cache = nullptr) const {
    if (x.cols != in_dim()) throw_invalid_input("Mlp::forward: input width mismatch");
    if (cache) {
      cache->a.assign(1, x);
      cache->z.clear();
    }
    Mat a = x;
    for (int l = 0; l < layer_count(); ++l) {
      const int out = dims[l + 1];
      Mat z(a.rows, out);
      for (int r = 0; r < a.rows; ++r) {
        auto arow = a.row(r);
        auto zrow = z.row(r);
        auto brow = bias(l);
        for (int o = 0; o < out; ++o) zrow[o] = dot(arow, w_row(l, o)) + brow[o];
      }
      const bool last = (l + 1 == layer_count());
      Mat act = z;
      if (!last)
        for (double& v : act.data) v = gelu(v);
      if (cache) {
        cache->z.push_back(std::move(z));
        cache->a.push_back(act);
      }
      a = std::move(act);
    }
    return a;
  }

  // Accumulates parameter gradients into `grad` (same layout as params) and
  // returns the gradient with respect to the input batch.
  Mat backward(const MlpCache& cache, const Mat& dy, std::span<double> grad) const {
    if (grad.size() != params.size()) throw_invalid_input("Mlp::backward: grad buffer size mismatch");
    if (static_cast<int>(cache.a.size()) != layer_count() + 1 ||
        static_cast<int>(cache.z.size()) != layer_count() ||
        cache.a[0].cols != in_dim())
      throw_invalid_state("Mlp::backward: cache does not match this network");
    if (dy.rows != cache.a[0].rows || dy.cols != out_dim())
      throw_invalid_input("Mlp::backward: upstream gradient shape mismatch");

    Mat dz = dy;  // output layer is linear
    for (int l = layer_count() - 1; l >= 0; --l) {
      const Mat& a_in = cache.a[l];
      const int out = dims[l + 1];
      const int in = dims[l];
      // dW(o,:) += sum_r dz(r,o) * a_in(r,:);  db(o) += sum_r dz(r,o)
      for (int r = 0; r < dz.rows; ++r) {
        auto dzrow = dz.row(r);
        auto arow = a_in.row(r);
        for (int o = 0; o < out; ++o) {
          const double g = dzrow[o];
          if (g == 0.0) continue;
          axpy(g, arow, {grad.data() + w_off[l] + static_cast<size_t>(o) * in,
                         static_cast<size_t>(in)});
          grad[b_off[l] + o] += g;
        }
      }
      Mat dx(dz.rows, in);
      for (int r = 0; r < dz.rows; ++r) {
        auto dzrow = dz.row(r);
        for (int o = 0; o < out; ++o)
          if (dzrow[o] != 0.0) axpy(dzrow[o], w_row(l, o), dx.row(r));
      }
      if (l == 0) return dx;
      const Mat& z_prev = cache.z[l - 1];
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= gelu_deriv(z_prev.data[i]);
      dz = std::move(dx);
    }
    return Mat(dy.rows, in_dim());  // unreachable (layer_count >= 1)
  }
};

// Encoder = MLP followed by row-wise L2 normalization onto the unit sphere.
struct EncodeCache {
  MlpCache mlp;
  Mat emb;                       // normalized outputs
  std::vector<double> inv_norm;  // 1/||raw_row||
};

struct Encoder {
  Mlp net;

  static Encoder create(int in, const std::vector<int>& hidden, int embed, uint64_t seed) {
    std::vector<int> dims;
    dims.push_back(in);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(embed);
    return {Mlp::create(std::move(dims), seed)};
  }

  Mat encode(const Mat& x, EncodeCache* cache = nullptr) const {
    MlpCache local;
    MlpCache* mc = cache ? &cache->mlp : &local;
    Mat raw = net.forward(x, mc);
    Mat emb = raw;
    std::vector<double> inv(raw.rows);
    for (int r = 0; r < raw.rows; ++r) {
      const double n = norm2(raw.row(r));
      if (!(n > 1e-12) || !std::isfinite(n))
        throw_invalid_input("encode: degenerate near-zero pre-normalization vector");
      inv[r] = 1.0 / n;
      for (double& v : emb.row(r)) v *= inv[r];
    }
    if (cache) {
      cache->emb = emb;
      cache->inv_norm = std::move(inv);
    }
    return emb;
  }

  // d_emb is the gradient at the normalized output; returns d_input.
  Mat encode_backward(const EncodeCache& cache, const Mat& d_emb, std::span<double> grad) const {
    if (!d_emb.same_shape(cache.emb)) throw_invalid_input("encode_backward: shape mismatch");
    Mat d_raw = d_emb;
    for (int r = 0; r < d_emb.rows; ++r) {
      auto e = cache.emb.row(r);
      auto dr = d_raw.row(r);
      const double proj = dot(d_emb.row(r), e);
      for (int c = 0; c < d_emb.cols; ++c) dr[c] = (dr[c] - proj * e[c]) * cache.inv_norm[r];
    }
    return net.backward(cache.mlp, d_raw, grad);
  }
};

// One learned vector per source modality, added to an embedding before
// decoding so a shared decoder knows where the embedding came from. Can be
// disabled wholesale for the ablation run.
struct RepresentationTokens {
  std::vector<double> img, p2d, p3d;
  bool enabled = true;

  static RepresentationTokens create(int embed, bool enabled) {
    RepresentationTokens t;
    t.img.assign(embed, 0.0);
    t.p2d.assign(embed, 0.0);
    t.p3d.assign(embed, 0.0);
    t.enabled = enabled;
    return t;
  }

  int dim() const { return static_cast<int>(img.size()); }

  const std::vector<double>& of(Modality m) const {
    switch (m) {
      case Modality::Image: return img;
      case Modality::Pose2D: return p2d;
      case Modality::Pose3D: return p3d;
    }
    throw_invalid_input("RepresentationTokens: unknown source modality");
  }

  std::vector<double>& of(Modality m) {
    return const_cast<std::vector<double>&>(std::as_const(*this).of(m));
  }
};

// Decoder = (embedding [+ source token]) -> MLP -> flat pose.
struct DecodeCache {
  MlpCache mlp;
  Modality source = Modality::Image;
  bool token_used = false;
};

struct Decoder {
  Mlp net;

  static Decoder create(int embed, const std::vector<int>& hidden, int out, uint64_t seed) {
    std::vector<int> dims;
    dims.push_back(embed);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return {Mlp::create(std::move(dims), seed)};
  }

  Mat decode(const Mat& emb, const RepresentationTokens& tokens, Modality source,
             DecodeCache* cache = nullptr) const {
    if (emb.cols != net.in_dim()) throw_invalid_input("decode: embedding width mismatch");
    if (tokens.dim() != net.in_dim()) throw_invalid_input("decode: token dimension mismatch");
    Mat x = emb;
    if (tokens.enabled) {
      const auto& tok = tokens.of(source);
      for (int r = 0; r < x.rows; ++r) axpy(1.0, tok, x.row(r));
    }
    if (cache) {
      cache->source = source;
      cache->token_used = tokens.enabled;
    }
    MlpCache local;
    return net.forward(x, cache ? &cache->mlp : &local);
  }

  // Returns d_embedding; accumulates net gradients into grad_net and, when
  // the token was used in the forward pass, its gradient into grad_token.
  Mat decode_backward(const DecodeCache& cache, const Mat& dy, std::span<double> grad_net,
                      std::span<double> grad_token) const {
    Mat dx = net.backward(cache.mlp, dy, grad_net);
    if (cache.token_used) {
      if (grad_token.size() != static_cast<size_t>(net.in_dim()))
        throw_invalid_input("decode_backward: token grad size mismatch");
      for (int r = 0; r < dx.rows; ++r) axpy(1.0, dx.row(r), grad_token);
    }
    return dx;
  }
};

// Adam with bias correction over a flat parameter vector.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int64_t t = 0;

  Adam() = default;
  Adam(size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::span<double> p, std::span<const double> g) {
    if (p.size() != m.size() || g.size() != m.size())
      throw_invalid_input("Adam::step: size mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

// Sizes of the encoder/decoder stack. Hidden layouts are shared across the
// three encoders and across the two decoders.
struct ModelDims {
  int img_in = 0, p2d_in = 0, p3d_in = 0;
  int embed = 0;
  int p2d_out = 0, p3d_out = 0;
  std::vector<int> enc_hidden;
  std::vector<int> dec_hidden;
};

struct ModelBundle {
  ModelDims dims;
  Encoder enc_img, enc_2d, enc_3d;
  Decoder dec_2d, dec_3d;
  RepresentationTokens tokens;
  Temperature tau_pair, tau_trip;
  uint64_t seed = 0;

  const Encoder& encoder(Modality m) const {
    switch (m) {
      case Modality::Image: return enc_img;
      case Modality::Pose2D: return enc_2d;
      case Modality::Pose3D: return enc_3d;
    }
    throw_invalid_input("ModelBundle: unknown modality");
  }

  static ModelBundle create(const ModelDims& d, uint64_t seed, bool use_tokens) {
    if (d.img_in < 1 || d.p2d_in < 1 || d.p3d_in < 1 || d.embed < 1 || d.p2d_out < 1 ||
        d.p3d_out < 1)
      throw_invalid_input("ModelBundle: all dims must be positive");
    ModelBundle b;
    b.dims = d;
    b.seed = seed;
    b.enc_img = Encoder::create(d.img_in, d.enc_hidden, d.embed, derive_seed(seed, 0x01));
    b.enc_2d = Encoder::create(d.p2d_in, d.enc_hidden, d.embed, derive_seed(seed, 0x02));
    b.enc_3d = Encoder::create(d.p3d_in, d.enc_hidden, d.embed, derive_seed(seed, 0x03));
    b.dec_2d = Decoder::create(d.embed, d.dec_hidden, d.p2d_out, derive_seed(seed, 0x04));
    b.dec_3d = Decoder::create(d.embed, d.dec_hidden, d.p3d_out, derive_seed(seed, 0x05));
    b.tokens = RepresentationTokens::create(d.embed, use_tokens);
    b.tau_pair = Temperature::init(1.0, 1e-2, 1e4);
    b.tau_trip = Temperature::init(1.0, 1e-2, 1e4);
    return b;
  }
};

// Gradient buffers matching ModelBundle's flat parameter vectors.
// Temperature gradients are with respect to log(tau).
struct ModelGrads {
  std::vector<double> enc_img, enc_2d, enc_3d, dec_2d, dec_3d;
  std::vector<double> token_img, token_p2d, token_p3d;
  double tau_pair = 0.0, tau_trip = 0.0;

  static ModelGrads zeros_like(const ModelBundle& b) {
    ModelGrads g;
    g.enc_img.assign(b.enc_img.net.param_count(), 0.0);
    g.enc_2d.assign(b.enc_2d.net.param_count(), 0.0);
    g.enc_3d.assign(b.enc_3d.net.param_count(), 0.0);
    g.dec_2d.assign(b.dec_2d.net.param_count(), 0.0);
    g.dec_3d.assign(b.dec_3d.net.param_count(), 0.0);
    g.token_img.assign(b.tokens.img.size(), 0.0);
    g.token_p2d.assign(b.tokens.p2d.size(), 0.0);
    g.token_p3d.assign(b.tokens.p3d.size(), 0.0);
    return g;
  }

  std::vector<double>& token(Modality m) {
    switch (m) {
      case Modality::Image: return token_img;
      case Modality::Pose2D: return token_p2d;
      case Modality::Pose3D: return token_p3d;
    }
    throw_invalid_input("ModelGrads: unknown modality");
  }

  void zero() {
    auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    z(enc_img);
    z(enc_2d);
    z(enc_3d);
    z(dec_2d);
    z(dec_3d);
    z(token_img);
    z(token_p2d);
    z(token_p3d);
    tau_pair = tau_trip = 0.0;
  }
};

// ---- checkpoint serialization ----------------------------------------

namespace detail {

inline void put_mlp(ByteWriter& w, const Mlp& net) {
  w.put_u32(static_cast<uint32_t>(net.dims.size()));
  for (int d : net.dims) w.put_i32(d);
  w.put_u64(net.params.size());
  w.put_f64_span(net.params);
}

inline Mlp get_mlp(ByteReader& r) {
  const uint32_t nd = r.get_u32();
  if (nd < 2 || nd > 64) throw_invalid_input("checkpoint: implausible layer count");
  Mlp net;
  net.dims.resize(nd);
  for (uint32_t i = 0; i < nd; ++i) {
    net.dims[i] = r.get_i32();
    if (net.dims[i] < 1 || net.dims[i] > (1 << 24))
      throw_invalid_input("checkpoint: implausible layer width");
  }
  net.build_offsets();
  const uint64_t n = r.get_u64();
  if (n != net.params.size()) throw_invalid_input("checkpoint: parameter count mismatch");
  r.get_f64_span(net.params);
  return net;
}

inline void put_vec(ByteWriter& w, const std::vector<double>& v) {
  w.put_u64(v.size());
  w.put_f64_span(v);
}

inline std::vector<double> get_vec(ByteReader& r) {
  const uint64_t n = r.get_u64();
  if (n > (1ull << 28)) throw_invalid_input("checkpoint: implausible vector length");
  std::vector<double> v(n);
  r.get_f64_span(v);
  return v;
}

inline void put_temperature(ByteWriter& w, const Temperature& t) {
  w.put_f64(t.log_tau);
  w.put_f64(t.tau_min);
  w.put_f64(t.tau_max);
  w.put_f64(t.tau0);
}

inline Temperature get_temperature(ByteReader& r) {
  Temperature t;
  t.log_tau = r.get_f64();
  t.tau_min = r.get_f64();
  t.tau_max = r.get_f64();
  t.tau0 = r.get_f64();
  if (!(t.tau_min > 0.0) || !(t.tau_max >= t.tau_min))
    throw_invalid_input("checkpoint: invalid temperature bounds");
  return t;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "TALNMDL1";

inline void save_checkpoint(const std::filesystem::path& path, const ModelBundle& b,
                            uint64_t config_fingerprint) {
  ByteWriter w;
  w.put_magic(kCheckpointMagic);
  w.put_u32(1);  // format version
  w.put_u64(config_fingerprint);
  w.put_u64(b.seed);
  w.put_u8(b.tokens.enabled ? 1 : 0);
  w.put_i32(b.dims.img_in);
  w.put_i32(b.dims.p2d_in);
  w.put_i32(b.dims.p3d_in);
  w.put_i32(b.dims.embed);
  w.put_i32(b.dims.p2d_out);
  w.put_i32(b.dims.p3d_out);
  w.put_u32(static_cast<uint32_t>(b.dims.enc_hidden.size()));
  for (int h : b.dims.enc_hidden) w.put_i32(h);
  w.put_u32(static_cast<uint32_t>(b.dims.dec_hidden.size()));
  for (int h : b.dims.dec_hidden) w.put_i32(h);
  detail::put_mlp(w, b.enc_img.net);
  detail::put_mlp(w, b.enc_2d.net);
  detail::put_mlp(w, b.enc_3d.net);
  detail::put_mlp(w, b.dec_2d.net);
  detail::put_mlp(w, b.dec_3d.net);
  detail::put_vec(w, b.tokens.img);
  detail::put_vec(w, b.tokens.p2d);
  detail::put_vec(w, b.tokens.p3d);
  detail::put_temperature(w, b.tau_pair);
  detail::put_temperature(w, b.tau_trip);
  atomic_write_file(path, seal_with_crc(std::move(w)));
}

struct LoadedCheckpoint {
  ModelBundle bundle;
  uint64_t config_fingerprint = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r{unseal_checked(bytes)};
  if (!r.check_magic(kCheckpointMagic))
    throw_invalid_input("checkpoint: unrecognized file magic");
  const uint32_t version = r.get_u32();
  if (version != 1) throw_invalid_input("checkpoint: unsupported format version");
  LoadedCheckpoint out;
  out.config_fingerprint = r.get_u64();
  const uint64_t seed = r.get_u64();
  const bool use_tokens = r.get_u8() != 0;
  ModelDims d;
  d.img_in = r.get_i32();
  d.p2d_in = r.get_i32();
  d.p3d_in = r.get_i32();
  d.embed = r.get_i32();
  d.p2d_out = r.get_i32();
  d.p3d_out = r.get_i32();
  const uint32_t ne = r.get_u32();
  if (ne > 64) throw_invalid_input("checkpoint: implausible hidden layer count");
  d.enc_hidden.resize(ne);
  for (auto& h : d.enc_hidden) h = r.get_i32();
  const uint32_t ndh = r.get_u32();
  if (ndh > 64) throw_invalid_input("checkpoint: implausible hidden layer count");
  d.dec_hidden.resize(ndh);
  for (auto& h : d.dec_hidden) h = r.get_i32();

  ModelBundle& b = out.bundle;
  b.dims = d;
  b.seed = seed;
  b.enc_img.net = detail::get_mlp(r);
  b.enc_2d.net = detail::get_mlp(r);
  b.enc_3d.net = detail::get_mlp(r);
  b.dec_2d.net = detail::get_mlp(r);
  b.dec_3d.net = detail::get_mlp(r);
  b.tokens.img = detail::get_vec(r);
  b.tokens.p2d = detail::get_vec(r);
  b.tokens.p3d = detail::get_vec(r);
  b.tokens.enabled = use_tokens;
  b.tau_pair = detail::get_temperature(r);
  b.tau_trip = detail::get_temperature(r);

  if (b.enc_img.net.in_dim() != d.img_in || b.enc_2d.net.in_dim() != d.p2d_in ||
      b.enc_3d.net.in_dim() != d.p3d_in || b.enc_img.net.out_dim() != d.embed ||
      b.dec_2d.net.out_dim() != d.p2d_out || b.dec_3d.net.out_dim() != d.p3d_out ||
      b.tokens.dim() != d.embed || static_cast<int>(b.tokens.p2d.size()) != d.embed ||
      static_cast<int>(b.tokens.p3d.size()) != d.embed)
    throw_invalid_input("checkpoint: stored dims are inconsistent");
  return out;
}

// ---- finite-difference gradient checking ------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int checked = 0;
};

// Central differences on the entries listed in `indices`. `eval` recomputes
// the scalar objective from the current contents of `params`. Relative error
// uses a floored denominator so near-zero slopes do not dominate.
template <typename Eval>
GradCheckReport gradient_check(std::span<double> params, std::span<const double> analytic,
                               Eval&& eval, std::span<const size_t> indices, double h = 1e-5,
                               double floor_denom = 1e-6) {
  if (params.size() != analytic.size())
    throw_invalid_input("gradient_check: analytic grad size mismatch");
  GradCheckReport rep;
  double rel_sum = 0.0;
  for (size_t i : indices) {
    if (i >= params.size()) throw_invalid_input("gradient_check: index out of range");
    const double save = params[i];
    params[i] = save + h;
    const double fp = eval();
    params[i] = save - h;
    const double fm = eval();
    params[i] = save;
    const double fd = (fp - fm) / (2.0 * h);
    const double g = analytic[i];
    const double abs_err = std::abs(fd - g);
    const double rel_err = abs_err / std::max(floor_denom, std::abs(fd) + std::abs(g));
    if (rel_err > rep.max_rel_err) {
      rep.max_rel_err = rel_err;
      rep.worst_index = i;
      rep.worst_analytic = g;
      rep.worst_numeric = fd;
    }
    rel_sum += rel_err;
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    ++rep.checked;
  }
  if (rep.checked > 0) rep.mean_rel_err = rel_sum / rep.checked;
  return rep;
}

// Evenly spread sample of k indices out of n (always includes the ends).
inline std::vector<size_t> spread_indices(size_t n, size_t k) {
  if (n == 0) return {};
  if (k >= n || k < 2) {
    if (k >= n) {
      std::vector<size_t> all(n);
      for (size_t i = 0; i < n; ++i) all[i] = i;
      return all;
    }
    return {0};
  }
  std::vector<size_t> out;
  out.reserve(k);
  for (size_t j = 0; j < k; ++j) out.push_back(j * (n - 1) / (k - 1));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace trialign
