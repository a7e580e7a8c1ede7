#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "trialign/error.hpp"
#include "trialign/losses.hpp"
#include "trialign/mat.hpp"
#include "trialign/nn.hpp"
#include "trialign/rng.hpp"

namespace trialign {

// Finite-difference verification suites for every analytic gradient in the
// library. Shared by the `gradcheck` CLI subcommand (the CI gate) and the
// acceptance checks, so both run literally the same code.

struct ComponentCheck {
  std::string component;
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  int instances = 0;
  int entries = 0;
};

namespace detail {

inline void fold(ComponentCheck& c, const GradCheckReport& rep) {
  c.max_rel_err = std::max(c.max_rel_err, rep.max_rel_err);
  c.mean_rel_err += rep.mean_rel_err;
  c.instances += 1;
  c.entries += rep.checked;
}

inline void finish(ComponentCheck& c) {
  if (c.instances > 0) c.mean_rel_err /= c.instances;
}

inline Mat random_unit_rows(int rows, int cols, RngEngine& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (int c = 0; c < cols; ++c) {
        m(r, c) = gauss(rng, 0.0, 1.0);
        n2 += m(r, c) * m(r, c);
      }
    } while (n2 < 1e-8);
    const double inv = 1.0 / std::sqrt(n2);
    for (int c = 0; c < cols; ++c) m(r, c) *= inv;
  }
  return m;
}

inline Temperature make_tau(double value) {
  return Temperature::init(value, 1e-4, 1e6);  // bounds far away so the clamp never bites
}

inline std::vector<size_t> all_indices(size_t n) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

// Pairwise InfoNCE: gradients w.r.t. both embedding matrices and tau.
inline ComponentCheck gradcheck_pair(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"pair-infonce"};
  const int b = 3, d = 6;
  for (int s = 0; s < seeds; ++s) {
    RngEngine rng = make_rng(derive_seed(master, 0x01, static_cast<uint64_t>(s)));
    Mat xs = detail::random_unit_rows(b, d, rng);
    Mat xt = detail::random_unit_rows(b, d, rng);
    const double tau0 = uniform(rng, 0.3, 1.5);

    const size_t n = static_cast<size_t>(2 * b * d) + 1;
    std::vector<double> params(n);
    std::copy(xs.data.begin(), xs.data.end(), params.begin());
    std::copy(xt.data.begin(), xt.data.end(), params.begin() + b * d);
    params[n - 1] = tau0;

    auto eval = [&]() {
      Mat es(b, d), et(b, d);
      std::copy(params.begin(), params.begin() + b * d, es.data.begin());
      std::copy(params.begin() + b * d, params.end() - 1, et.data.begin());
      return info_nce_pair(es, et, detail::make_tau(params[n - 1])).value;
    };

    PairLoss loss = info_nce_pair(xs, xt, detail::make_tau(tau0));
    std::vector<double> analytic(n);
    std::copy(loss.grad_s.data.begin(), loss.grad_s.data.end(), analytic.begin());
    std::copy(loss.grad_t.data.begin(), loss.grad_t.data.end(), analytic.begin() + b * d);
    analytic[n - 1] = loss.grad_tau;

    auto idx = detail::all_indices(n);
    detail::fold(out, gradient_check(params, analytic, eval, idx));
  }
  detail::finish(out);
  return out;
}

// Top eigenvalue of the 3xD stack; instances resampled until the eigen-gap is
// comfortably away from the degenerate-skip threshold.
inline ComponentCheck gradcheck_lambda1(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"lambda1"};
  const int d = 8;
  for (int s = 0; s < seeds; ++s) {
    RngEngine rng = make_rng(derive_seed(master, 0x02, static_cast<uint64_t>(s)));
    Mat m(3, d);
    TopEigGrad g;
    do {
      for (double& v : m.data) v = gauss(rng, 0.0, 1.0);
      g = top_eigenvalue_grad(m);
    } while (g.gap < 1e-4);

    std::vector<double> params(m.data);
    auto eval = [&]() {
      Mat mm(3, d);
      mm.data = params;
      return top_eigenvalue(mm);
    };
    auto idx = detail::all_indices(params.size());
    detail::fold(out, gradient_check(params, g.grad.data, eval, idx));
  }
  detail::finish(out);
  return out;
}

// Triplet InfoNCE: gradients w.r.t. all three embedding matrices and tau.
inline ComponentCheck gradcheck_triplet(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"triplet-infonce"};
  const int b = 4, d = 6;
  for (int s = 0; s < seeds; ++s) {
    uint64_t sub = 0;
    for (;;) {
      RngEngine rng = make_rng(derive_seed(master, 0x03, static_cast<uint64_t>(s) * 97 + sub));
      Mat xi = detail::random_unit_rows(b, d, rng);
      Mat x2 = detail::random_unit_rows(b, d, rng);
      Mat x3 = detail::random_unit_rows(b, d, rng);
      const double tau0 = uniform(rng, 0.3, 1.5);
      NegativeTripletSet negs = sample_negative_set(b, derive_seed(master, 0x04, sub), 0);

      // Use a raised skip threshold as the gap probe: any triplet closer than
      // 1e-3 to degeneracy forces a resample so the FD sweep stays smooth.
      TripletLoss probe = info_nce_triplet(xi, x2, x3, detail::make_tau(tau0), negs, 1e-3);
      if (probe.degenerate_skips != 0) {
        ++sub;
        continue;
      }

      const size_t bd = static_cast<size_t>(b * d);
      const size_t n = 3 * bd + 1;
      std::vector<double> params(n);
      std::copy(xi.data.begin(), xi.data.end(), params.begin());
      std::copy(x2.data.begin(), x2.data.end(), params.begin() + bd);
      std::copy(x3.data.begin(), x3.data.end(), params.begin() + 2 * bd);
      params[n - 1] = tau0;

      auto eval = [&]() {
        Mat ei(b, d), e2(b, d), e3(b, d);
        std::copy(params.begin(), params.begin() + bd, ei.data.begin());
        std::copy(params.begin() + bd, params.begin() + 2 * bd, e2.data.begin());
        std::copy(params.begin() + 2 * bd, params.end() - 1, e3.data.begin());
        return info_nce_triplet(ei, e2, e3, detail::make_tau(params[n - 1]), negs).value;
      };

      TripletLoss loss = info_nce_triplet(xi, x2, x3, detail::make_tau(tau0), negs);
      std::vector<double> analytic(n);
      std::copy(loss.grad_img.data.begin(), loss.grad_img.data.end(), analytic.begin());
      std::copy(loss.grad_2d.data.begin(), loss.grad_2d.data.end(), analytic.begin() + bd);
      std::copy(loss.grad_3d.data.begin(), loss.grad_3d.data.end(), analytic.begin() + 2 * bd);
      analytic[n - 1] = loss.grad_tau;

      auto idx = detail::all_indices(n);
      detail::fold(out, gradient_check(params, analytic, eval, idx));
      break;
    }
  }
  detail::finish(out);
  return out;
}

// Combined contrastive objective (all pair terms + weighted triplet).
inline ComponentCheck gradcheck_contrastive(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"contrastive"};
  const int b = 3, d = 5;
  StageLossFlags flags;
  flags.pair_2d3d = flags.pair_img2d = flags.pair_img3d = flags.triplet = true;
  for (int s = 0; s < seeds; ++s) {
    uint64_t sub = 0;
    for (;;) {
      RngEngine rng = make_rng(derive_seed(master, 0x05, static_cast<uint64_t>(s) * 131 + sub));
      Mat xi = detail::random_unit_rows(b, d, rng);
      Mat x2 = detail::random_unit_rows(b, d, rng);
      Mat x3 = detail::random_unit_rows(b, d, rng);
      const double tp0 = uniform(rng, 0.3, 1.5);
      const double tt0 = uniform(rng, 0.3, 1.5);
      const double alpha = uniform(rng, 0.2, 1.5);
      NegativeTripletSet negs = sample_negative_set(b, derive_seed(master, 0x06, sub), 1);

      ContrastiveLoss probe = contrastive_loss(xi, x2, x3, detail::make_tau(tp0),
                                               detail::make_tau(tt0), alpha, flags, &negs, 1e-3);
      if (probe.degenerate_skips != 0) {
        ++sub;
        continue;
      }

      const size_t bd = static_cast<size_t>(b * d);
      const size_t n = 3 * bd + 2;
      std::vector<double> params(n);
      std::copy(xi.data.begin(), xi.data.end(), params.begin());
      std::copy(x2.data.begin(), x2.data.end(), params.begin() + bd);
      std::copy(x3.data.begin(), x3.data.end(), params.begin() + 2 * bd);
      params[n - 2] = tp0;
      params[n - 1] = tt0;

      auto eval = [&]() {
        Mat ei(b, d), e2(b, d), e3(b, d);
        std::copy(params.begin(), params.begin() + bd, ei.data.begin());
        std::copy(params.begin() + bd, params.begin() + 2 * bd, e2.data.begin());
        std::copy(params.begin() + 2 * bd, params.end() - 2, e3.data.begin());
        return contrastive_loss(ei, e2, e3, detail::make_tau(params[n - 2]),
                                detail::make_tau(params[n - 1]), alpha, flags, &negs)
            .value;
      };

      ContrastiveLoss loss = contrastive_loss(xi, x2, x3, detail::make_tau(tp0),
                                              detail::make_tau(tt0), alpha, flags, &negs);
      std::vector<double> analytic(n);
      std::copy(loss.grad_img.data.begin(), loss.grad_img.data.end(), analytic.begin());
      std::copy(loss.grad_2d.data.begin(), loss.grad_2d.data.end(), analytic.begin() + bd);
      std::copy(loss.grad_3d.data.begin(), loss.grad_3d.data.end(), analytic.begin() + 2 * bd);
      analytic[n - 2] = loss.grad_tau_pair;
      analytic[n - 1] = loss.grad_tau_trip;

      auto idx = detail::all_indices(n);
      detail::fold(out, gradient_check(params, analytic, eval, idx));
      break;
    }
  }
  detail::finish(out);
  return out;
}

// Bare MLP parameter gradients through a random cotangent.
inline ComponentCheck gradcheck_mlp(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"mlp"};
  for (int s = 0; s < seeds; ++s) {
    RngEngine rng = make_rng(derive_seed(master, 0x07, static_cast<uint64_t>(s)));
    Mlp net = Mlp::create({5, 7, 4}, derive_seed(master, 0x08, static_cast<uint64_t>(s)));
    Mat x(2, 5), dy(2, 4);
    for (double& v : x.data) v = gauss(rng, 0.0, 1.0);
    for (double& v : dy.data) v = gauss(rng, 0.0, 1.0);

    auto eval = [&]() {
      Mat y = net.forward(x);
      double j = 0.0;
      for (size_t i = 0; i < y.data.size(); ++i) j += dy.data[i] * y.data[i];
      return j;
    };

    MlpCache cache;
    net.forward(x, &cache);
    std::vector<double> grad(net.param_count(), 0.0);
    net.backward(cache, dy, grad);

    auto idx = spread_indices(net.param_count(), 48);
    detail::fold(out, gradient_check(net.params, grad, eval, idx));
  }
  detail::finish(out);
  return out;
}

// Encoder parameters through the row-normalization, plus decoder parameters,
// token vector and decoder input gradient.
inline ComponentCheck gradcheck_encoder(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"encoder"};
  for (int s = 0; s < seeds; ++s) {
    RngEngine rng = make_rng(derive_seed(master, 0x09, static_cast<uint64_t>(s)));
    Encoder enc = Encoder::create(6, {8}, 5, derive_seed(master, 0x0a, static_cast<uint64_t>(s)));
    Mat x(2, 6), dy(2, 5);
    for (double& v : x.data) v = gauss(rng, 0.0, 1.0);
    for (double& v : dy.data) v = gauss(rng, 0.0, 1.0);

    auto eval = [&]() {
      Mat e = enc.encode(x);
      double j = 0.0;
      for (size_t i = 0; i < e.data.size(); ++i) j += dy.data[i] * e.data[i];
      return j;
    };

    EncodeCache cache;
    enc.encode(x, &cache);
    std::vector<double> grad(enc.net.param_count(), 0.0);
    enc.encode_backward(cache, dy, grad);

    auto idx = spread_indices(enc.net.param_count(), 48);
    detail::fold(out, gradient_check(enc.net.params, grad, eval, idx));
  }
  detail::finish(out);
  return out;
}

inline ComponentCheck gradcheck_decoder(int seeds, uint64_t master = 0x6ce0ull) {
  ComponentCheck out{"decoder"};
  for (int s = 0; s < seeds; ++s) {
    RngEngine rng = make_rng(derive_seed(master, 0x0b, static_cast<uint64_t>(s)));
    const int embed = 5, dout = 7;
    Decoder dec =
        Decoder::create(embed, {8}, dout, derive_seed(master, 0x0c, static_cast<uint64_t>(s)));
    RepresentationTokens tokens = RepresentationTokens::create(embed, true);
    for (double& v : tokens.p2d) v = gauss(rng, 0.0, 0.3);
    Mat emb(2, embed), dy(2, dout);
    for (double& v : emb.data) v = gauss(rng, 0.0, 1.0);
    for (double& v : dy.data) v = gauss(rng, 0.0, 1.0);

    auto eval = [&]() {
      Mat y = dec.decode(emb, tokens, Modality::Pose2D);
      double j = 0.0;
      for (size_t i = 0; i < y.data.size(); ++i) j += dy.data[i] * y.data[i];
      return j;
    };

    DecodeCache cache;
    dec.decode(emb, tokens, Modality::Pose2D, &cache);
    std::vector<double> grad_net(dec.net.param_count(), 0.0);
    std::vector<double> grad_tok(embed, 0.0);
    Mat d_emb = dec.decode_backward(cache, dy, grad_net, grad_tok);

    auto idx = spread_indices(dec.net.param_count(), 48);
    detail::fold(out, gradient_check(dec.net.params, grad_net, eval, idx));

    auto tok_idx = detail::all_indices(tokens.p2d.size());
    detail::fold(out, gradient_check(tokens.p2d, grad_tok, eval, tok_idx));

    auto emb_idx = detail::all_indices(emb.data.size());
    detail::fold(out, gradient_check(emb.data, d_emb.data, eval, emb_idx));
  }
  detail::finish(out);
  return out;
}

struct GradCheckSummary {
  std::vector<ComponentCheck> components;
  double max_rel_err = 0.0;

  bool passed(double tol = 1e-4) const { return max_rel_err < tol; }
};

inline GradCheckSummary run_gradcheck(const std::string& component, int seeds,
                                      uint64_t master = 0x6ce0ull) {
  if (component != "losses" && component != "nn" && component != "all")
    throw_invalid_input("gradcheck: unknown component '" + component + "'");
  GradCheckSummary sum;
  if (seeds < 0) throw_invalid_input("gradcheck: seeds must be >= 0");
  if (seeds == 0) return sum;
  if (component == "losses" || component == "all") {
    sum.components.push_back(gradcheck_pair(seeds, master));
    sum.components.push_back(gradcheck_lambda1(seeds, master));
    sum.components.push_back(gradcheck_triplet(seeds, master));
    sum.components.push_back(gradcheck_contrastive(seeds, master));
  }
  if (component == "nn" || component == "all") {
    sum.components.push_back(gradcheck_mlp(seeds, master));
    sum.components.push_back(gradcheck_encoder(seeds, master));
    sum.components.push_back(gradcheck_decoder(seeds, master));
  }
  for (const auto& c : sum.components) sum.max_rel_err = std::max(sum.max_rel_err, c.max_rel_err);
  return sum;
}

}  // namespace trialign
