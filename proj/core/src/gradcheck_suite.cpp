// SPDX-License-Identifier: Apache-2.0
#include "dcsst/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "dcsst/attention.hpp"
#include "dcsst/diffusion.hpp"
#include "dcsst/error.hpp"
#include "dcsst/model.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/window_predictor.hpp"

namespace dcsst {

namespace {

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

Tensor rnd(Shape s, Rng& rng, double sd = 1.0) { return Tensor::randn(std::move(s), rng, sd); }

// Values bounded away from zero, for kinks at the origin.
Tensor away_from_zero(Shape s, Rng& rng) {
  Tensor t = Tensor::uniform(std::move(s), rng, 0.1, 1.0);
  for (double& v : t.mutable_data()) {
    if (rng() & 1) v = -v;
  }
  return t;
}

std::string shapes_of(const std::vector<Tensor>& ts) {
  std::string s;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i) s += " ";
    s += shape_str(ts[i].shape());
  }
  return s;
}

GradcheckCase make_case(GradcheckFn fn, std::vector<Tensor> inputs) {
  std::string shapes = shapes_of(inputs);
  return {std::move(fn), std::move(inputs), std::move(shapes)};
}

// Attention parameters occupy 8 consecutive inputs starting at `first`.
void push_attention(std::vector<Tensor>& in, std::size_t c, Rng& rng) {
  for (int i = 0; i < 4; ++i) {
    in.push_back(rnd({c, c}, rng, 0.5));
    in.push_back(rnd({c}, rng, 0.1));
  }
}

AttentionParams attention_from(const std::vector<Tensor>& in, std::size_t first) {
  return {in[first], in[first + 1], in[first + 2], in[first + 3],
          in[first + 4], in[first + 5], in[first + 6], in[first + 7]};
}

std::vector<int> random_targets(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng() % classes);
  return t;
}

std::vector<OpCheck> build_registry() {
  std::vector<OpCheck> r;
  r.push_back({"matmul", [](Rng& g) {
    const std::size_t m = draw(g, 1, 4), k = draw(g, 1, 4), n = draw(g, 1, 4);
    return make_case([](const auto& in) { return matmul(in[0], in[1]); },
                     {rnd({m, k}, g), rnd({k, n}, g)});
  }});
  r.push_back({"matmul_batched", [](Rng& g) {
    const std::size_t b = draw(g, 1, 3), m = draw(g, 1, 3), k = draw(g, 1, 3), n = draw(g, 1, 3);
    const bool shared = g() & 1;
    Tensor rhs = shared ? rnd({k, n}, g) : rnd({b, k, n}, g);
    return make_case([](const auto& in) { return matmul(in[0], in[1]); }, {rnd({b, m, k}, g), rhs});
  }});
  r.push_back({"linear", [](Rng& g) {
    const std::size_t n = draw(g, 1, 4), i = draw(g, 1, 4), o = draw(g, 1, 4);
    return make_case([](const auto& in) { return linear(in[0], in[1], in[2]); },
                     {rnd({n, i}, g), rnd({i, o}, g), rnd({o}, g)});
  }});
  r.push_back({"conv1x1", [](Rng& g) {
    const std::size_t b = draw(g, 1, 2), c = draw(g, 1, 3), s = draw(g, 1, 3);
    const std::size_t h = draw(g, 1, 3), w = draw(g, 1, 3);
    return make_case([](const auto& in) { return conv1x1(in[0], in[1], in[2]); },
                     {rnd({b, c, h, w}, g), rnd({s, c}, g), rnd({s}, g)});
  }});
  r.push_back({"add", [](Rng& g) {
    const Shape s{draw(g, 1, 4), draw(g, 1, 4)};
    return make_case([](const auto& in) { return add(in[0], in[1]); }, {rnd(s, g), rnd(s, g)});
  }});
  r.push_back({"sub", [](Rng& g) {
    const Shape s{draw(g, 1, 4), draw(g, 1, 4)};
    return make_case([](const auto& in) { return sub(in[0], in[1]); }, {rnd(s, g), rnd(s, g)});
  }});
  r.push_back({"mul", [](Rng& g) {
    const Shape s{draw(g, 1, 4), draw(g, 1, 4)};
    return make_case([](const auto& in) { return mul(in[0], in[1]); }, {rnd(s, g), rnd(s, g)});
  }});
  r.push_back({"scale", [](Rng& g) {
    const double f = standard_normal(g);
    return make_case([f](const auto& in) { return scale(in[0], f); }, {rnd({draw(g, 1, 5)}, g)});
  }});
  r.push_back({"add_bias", [](Rng& g) {
    const std::size_t n = draw(g, 1, 4), c = draw(g, 1, 4);
    return make_case([](const auto& in) { return add_bias(in[0], in[1]); }, {rnd({n, c}, g), rnd({c}, g)});
  }});
  r.push_back({"relu", [](Rng& g) {
    return make_case([](const auto& in) { return relu(in[0]); },
                     {away_from_zero({draw(g, 1, 4), draw(g, 1, 4)}, g)});
  }});
  r.push_back({"gelu", [](Rng& g) {
    return make_case([](const auto& in) { return gelu(in[0]); }, {rnd({draw(g, 1, 4), draw(g, 1, 4)}, g, 2.0)});
  }});
  r.push_back({"reshape", [](Rng& g) {
    const std::size_t a = draw(g, 1, 3), b = draw(g, 1, 3), c = draw(g, 1, 3);
    return make_case([a, b, c](const auto& in) { return reshape(in[0], {c * b, a}); }, {rnd({a, b, c}, g)});
  }});
  r.push_back({"permute", [](Rng& g) {
    std::vector<std::size_t> perm{0, 1, 2, 3};
    for (std::size_t i = 4; i > 1; --i) std::swap(perm[i - 1], perm[g() % i]);
    return make_case([perm](const auto& in) { return permute(in[0], perm); },
                     {rnd({draw(g, 1, 3), draw(g, 1, 3), draw(g, 1, 3), draw(g, 1, 3)}, g)});
  }});
  r.push_back({"transpose_last2", [](Rng& g) {
    return make_case([](const auto& in) { return transpose_last2(in[0]); },
                     {rnd({draw(g, 1, 3), draw(g, 1, 4), draw(g, 1, 4)}, g)});
  }});
  r.push_back({"slice", [](Rng& g) {
    const Shape s{draw(g, 2, 4), draw(g, 2, 4), draw(g, 2, 4)};
    const auto axis = static_cast<std::ptrdiff_t>(g() % 3);
    const std::size_t len = draw(g, 1, s[static_cast<std::size_t>(axis)] - 1);
    const std::size_t start = draw(g, 0, s[static_cast<std::size_t>(axis)] - len);
    return make_case([axis, start, len](const auto& in) { return slice(in[0], axis, start, len); },
                     {rnd(s, g)});
  }});
  r.push_back({"concat", [](Rng& g) {
    const std::size_t a = draw(g, 1, 3), b1 = draw(g, 1, 3), b2 = draw(g, 1, 3);
    return make_case([](const auto& in) { return concat({in[0], in[1]}, 1); },
                     {rnd({a, b1}, g), rnd({a, b2}, g)});
  }});
  r.push_back({"stack", [](Rng& g) {
    const Shape s{draw(g, 1, 3), draw(g, 1, 3)};
    return make_case([](const auto& in) { return stack({in[0], in[1], in[2]}); },
                     {rnd(s, g), rnd(s, g), rnd(s, g)});
  }});
  r.push_back({"gather", [](Rng& g) {
    const std::size_t n = draw(g, 2, 6), m = draw(g, 2, 8);
    auto idx = std::make_shared<std::vector<std::int64_t>>(m);
    for (auto& v : *idx) v = static_cast<std::int64_t>(g() % (n + 1)) - 1;  // -1 pads
    GatherIndex index = idx;
    return make_case([index, m](const auto& in) { return gather(in[0], {m}, index); }, {rnd({n}, g)});
  }});
  r.push_back({"sum_all", [](Rng& g) {
    return make_case([](const auto& in) { return sum_all(in[0]); }, {rnd({draw(g, 1, 4), draw(g, 1, 4)}, g)});
  }});
  r.push_back({"mean_all", [](Rng& g) {
    return make_case([](const auto& in) { return mean_all(in[0]); }, {rnd({draw(g, 1, 4), draw(g, 1, 4)}, g)});
  }});
  r.push_back({"mean_pool", [](Rng& g) {
    std::vector<std::size_t> axes;
    for (std::size_t a = 0; a < 3; ++a) {
      if (g() & 1) axes.push_back(a);
    }
    if (axes.empty() || axes.size() == 3) axes = {1};
    return make_case([axes](const auto& in) { return mean_pool(in[0], axes); },
                     {rnd({draw(g, 1, 3), draw(g, 1, 3), draw(g, 1, 3)}, g)});
  }});
  r.push_back({"avg_pool2d", [](Rng& g) {
    const std::size_t k = draw(g, 1, 2);
    return make_case([k](const auto& in) { return avg_pool2d(in[0], k); },
                     {rnd({draw(g, 1, 2), draw(g, 1, 2), k * draw(g, 1, 2), k * draw(g, 1, 2)}, g)});
  }});
  r.push_back({"softmax", [](Rng& g) {
    const auto axis = static_cast<std::ptrdiff_t>(g() % 2);
    return make_case([axis](const auto& in) { return softmax(in[0], axis); },
                     {rnd({draw(g, 1, 4), draw(g, 2, 4)}, g, 2.0)});
  }});
  r.push_back({"log_softmax", [](Rng& g) {
    return make_case([](const auto& in) { return log_softmax(in[0], -1); },
                     {rnd({draw(g, 1, 4), draw(g, 2, 4)}, g, 2.0)});
  }});
  r.push_back({"layer_norm", [](Rng& g) {
    const std::size_t n = draw(g, 1, 4), c = draw(g, 2, 5);
    return make_case([](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
                     {rnd({n, c}, g), rnd({c}, g), rnd({c}, g)});
  }});
  r.push_back({"normalize_rows", [](Rng& g) {
    return make_case([](const auto& in) { return normalize_rows(in[0]); },
                     {Tensor::uniform({draw(g, 1, 4), draw(g, 2, 4)}, g, 0.5, 1.5)});
  }});
  r.push_back({"cross_entropy", [](Rng& g) {
    const std::size_t n = draw(g, 1, 5), c = draw(g, 2, 4);
    const auto t = random_targets(n, c, g);
    return make_case([t](const auto& in) { return cross_entropy(in[0], t); }, {rnd({n, c}, g, 2.0)});
  }});
  r.push_back({"cross_entropy_weighted", [](Rng& g) {
    const std::size_t n = draw(g, 1, 5), c = draw(g, 2, 4);
    const auto t = random_targets(n, c, g);
    std::vector<double> w(n);
    for (auto& v : w) v = 0.2 + uniform01(g);
    return make_case([t, w](const auto& in) { return cross_entropy(in[0], t, w); }, {rnd({n, c}, g, 2.0)});
  }});
  r.push_back({"kl_to_target", [](Rng& g) {
    const std::size_t n = draw(g, 1, 4), c = draw(g, 2, 4);
    const Tensor target = rnd({n, c}, g, 2.0);
    return make_case([target](const auto& in) { return kl_to_target(in[0], target); }, {rnd({n, c}, g, 2.0)});
  }});
  r.push_back({"add_mask", [](Rng& g) {
    const std::size_t m = draw(g, 1, 2), n = m * draw(g, 1, 2), h = draw(g, 1, 2);
    const std::size_t lq = draw(g, 1, 3), lk = draw(g, 1, 3);
    const Tensor mask = rnd({m, lq, lk}, g);
    return make_case([mask](const auto& in) { return add_mask(in[0], mask); }, {rnd({n, h, lq, lk}, g)});
  }});
  r.push_back({"mix_by_batch", [](Rng& g) {
    const std::size_t b = draw(g, 1, 3), s = draw(g, 2, 3), c = draw(g, 1, 3);
    std::vector<Tensor> in{Tensor::uniform({b, s}, g, 0.1, 1.0)};
    for (std::size_t i = 0; i < s; ++i) in.push_back(rnd({b, c, 2}, g));
    return make_case([s](const auto& v) {
      return mix_by_batch(std::vector<Tensor>(v.begin() + 1, v.begin() + 1 + static_cast<std::ptrdiff_t>(s)), v[0]);
    }, std::move(in));
  }});
  r.push_back({"mhsa", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = heads * draw(g, 1, 2), n = draw(g, 1, 2), l = draw(g, 1, 4);
    std::vector<Tensor> in{rnd({n, l, c}, g)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg](const auto& v) { return mhsa(v[0], attention_from(v, 1), cfg); }, std::move(in));
  }});
  r.push_back({"window_attention", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, h = draw(g, 2, 5), w = draw(g, 2, 5);
    const std::size_t win = draw(g, 1, std::min(h, w));
    std::vector<Tensor> in{rnd({draw(g, 1, 2), c, h, w}, g)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg, win](const auto& v) {
      return window_attention(v[0], attention_from(v, 1), cfg, {win, 0});
    }, std::move(in));
  }});
  r.push_back({"window_attention_shifted", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, h = draw(g, 3, 6), w = draw(g, 3, 6);
    const std::size_t win = draw(g, 2, std::min(h, w));
    const std::size_t shift = draw(g, 1, win - 1);
    std::vector<Tensor> in{rnd({draw(g, 1, 2), c, h, w}, g)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg, win, shift](const auto& v) {
      return window_attention(v[0], attention_from(v, 1), cfg, {win, shift});
    }, std::move(in));
  }});
  r.push_back({"cross_attention", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, b = draw(g, 1, 2);
    const Shape s{b, c, draw(g, 1, 3), draw(g, 1, 3)};
    std::vector<Tensor> in{rnd(s, g), rnd(s, g)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg](const auto& v) { return cross_attention(v[0], v[1], attention_from(v, 2), cfg); },
                     std::move(in));
  }});
  r.push_back({"window_predictor", [](Rng& g) {
    const std::size_t b = draw(g, 1, 2), c = draw(g, 1, 3), f = draw(g, 1, 2), hs = draw(g, 1, 2);
    const std::vector<std::size_t> cands{1, 2};
    const std::size_t side = 2 * f * hs;
    return make_case([cands, hs](const auto& v) {
      return pool_to_stage(predict_scales(v[0], v[1], v[2], cands), hs, hs).weights;
    }, {rnd({b, c, side, side}, g), rnd({2, c}, g), rnd({2}, g)});
  }});
  r.push_back({"dynamic_window_attention", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, b = draw(g, 1, 2), side = draw(g, 3, 5);
    const bool shifted = g() & 1;
    const std::vector<std::size_t> cands{2, 3};
    std::vector<Tensor> in{rnd({b, c, side, side}, g), Tensor::uniform({b, 2}, g, 0.1, 1.0)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg, cands, shifted](const auto& v) {
      return dynamic_window_attention(v[0], StageMixture{v[1]}, attention_from(v, 2), cfg, cands, shifted);
    }, std::move(in));
  }});
  r.push_back({"patch_embed", [](Rng& g) {
    const std::size_t p = draw(g, 1, 2), b = draw(g, 1, 2), c = draw(g, 1, 3), o = draw(g, 1, 3);
    const Shape s{b, c, p * draw(g, 1, 3), p * draw(g, 1, 3)};
    return make_case([p](const auto& v) { return patch_embed(v[0], v[1], v[2], p); },
                     {rnd(s, g), rnd({c * p * p, o}, g), rnd({o}, g)});
  }});
  r.push_back({"patch_merge", [](Rng& g) {
    const std::size_t b = draw(g, 1, 2), c = draw(g, 1, 3);
    const Shape s{b, c, 2 * draw(g, 1, 2), 2 * draw(g, 1, 2)};
    return make_case([](const auto& v) { return patch_merge(v[0], MergeParams{v[1], v[2]}); },
                     {rnd(s, g), rnd({4 * c, 2 * c}, g), rnd({2 * c}, g)});
  }});
  r.push_back({"stage_block", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, b = draw(g, 1, 2), side = draw(g, 2, 4);
    const bool shifted = g() & 1;
    std::vector<Tensor> in{rnd({b, c, side, side}, g), Tensor::uniform({c}, g, 0.5, 1.5), rnd({c}, g, 0.1)};
    push_attention(in, c, g);
    in.push_back(Tensor::uniform({c}, g, 0.5, 1.5));
    in.push_back(rnd({c}, g, 0.1));
    in.push_back(rnd({c, 2 * c}, g, 0.5));
    in.push_back(rnd({2 * c}, g, 0.1));
    in.push_back(rnd({2 * c, c}, g, 0.5));
    in.push_back(rnd({c}, g, 0.1));
    const std::size_t win = std::min<std::size_t>(2, side);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg, win, shifted](const auto& v) {
      BlockParams p{v[1], v[2], attention_from(v, 3), v[11], v[12], v[13], v[14], v[15], v[16]};
      StageContext ctx;
      ctx.attn = cfg;
      ctx.windows = {win};
      return block_forward(v[0], p, ctx, shifted);
    }, std::move(in));
  }});
  r.push_back({"cross_scale_fuse", [](Rng& g) {
    const std::size_t heads = draw(g, 1, 2), c = 2 * heads, b = draw(g, 1, 2), side = draw(g, 1, 2);
    std::vector<Tensor> in{rnd({b, c, side, side}, g), rnd({b, c / 2 + 1, 2 * side, 2 * side}, g),
                           rnd({c / 2 + 1, c}, g), rnd({c}, g)};
    push_attention(in, c, g);
    const AttentionConfig cfg{c, heads};
    return make_case([cfg](const auto& v) {
      return cross_scale_fuse(v[0], v[1], FusionParams{v[2], v[3], attention_from(v, 4)}, cfg);
    }, std::move(in));
  }});
  r.push_back({"consistency_loss", [](Rng& g) {
    const std::size_t b = draw(g, 1, 3), d = draw(g, 2, 4), k = draw(g, 2, 3);
    const std::uint64_t noise_seed = g();
    const Tensor x = rnd({b, d}, g);
    const NoiseSchedule schedule = NoiseSchedule::linear(10, 0.01, 0.2);
    const Tensor w = rnd({d, k}, g), bias = rnd({k}, g);
    // The clean branch is a stop-gradient target, so it sees the unperturbed
    // weights; finite differences then move only the noisy branch.
    const Tensor w0 = w.detach(), b0 = bias.detach();
    return make_case([x, schedule, noise_seed, w0, b0](const auto& v) {
      Rng noise = make_stream(noise_seed, "noise");  // same draws on every evaluation
      int calls = 0;
      const Classifier f = [&](const Tensor& in) -> Tensor {
        return calls++ == 0 ? linear(in, w0, b0) : linear(in, v[0], v[1]);
      };
      return consistency_loss(f, x, schedule, 5, noise);
    }, {w, bias});
  }});
  return r;
}

}  // namespace

const std::vector<OpCheck>& op_checks() {
  static const std::vector<OpCheck> registry = build_registry();
  return registry;
}

const OpCheck& find_op_check(const std::string& name) {
  for (const auto& c : op_checks()) {
    if (c.name == name) return c;
  }
  throw ConfigError("no gradient check named '" + name + "'");
}

CheckReport run_op_check(const OpCheck& check, std::size_t trials, std::uint64_t seed,
                         const GradcheckOptions& options) {
  CheckReport rep;
  rep.name = check.name;
  Rng rng = make_stream(seed, "gradcheck/" + check.name);
  for (std::size_t t = 0; t < trials; ++t) {
    const GradcheckCase c = check.make(rng);
    const GradcheckResult res = gradcheck(c.fn, c.inputs, options);
    ++rep.trials;
    if (res.max_rel_error >= rep.worst_rel_error) {
      rep.worst_rel_error = res.max_rel_error;
      rep.worst_shapes = c.shapes;
    }
    rep.passed = rep.passed && res.passed;
  }
  return rep;
}

CheckReport run_model_check(const std::string& preset, std::uint64_t seed,
                            const GradcheckOptions& options) {
  if (preset != "micro") throw ConfigError("no model gradient check for preset '" + preset + "'");
  ModelConfig cfg = ModelConfig::micro();
  cfg.zero_init_residual = false;
  cfg.init_std = 0.3;
  auto model = std::make_shared<DcsStModel>(cfg, seed);
  Rng rng = make_stream(seed, "gradcheck/model");
  std::vector<Tensor> inputs{Tensor::randn({2, cfg.in_channels, cfg.image_size, cfg.image_size}, rng)};
  for (const Tensor& p : model->parameters()) inputs.push_back(p.detach());
  // Norm gains and biases get non-trivial values so their gradients are exercised.
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    for (double& v : inputs[i].mutable_data()) v += 0.1 * standard_normal(rng);
  }
  const GradcheckFn fn = [model](const std::vector<Tensor>& v) {
    model->bind_parameters(std::vector<Tensor>(v.begin() + 1, v.end()));
    return model->classify(v[0]);
  };
  GradcheckOptions opts = options;
  if (opts.max_probes_per_input == 0) opts.max_probes_per_input = 8;
  const GradcheckResult res = gradcheck(fn, inputs, opts);
  CheckReport rep;
  rep.name = "model:" + preset;
  rep.trials = 1;
  rep.worst_rel_error = res.max_rel_error;
  rep.worst_shapes = std::to_string(inputs.size()) + " tensors";
  rep.passed = res.passed;
  return rep;
}

}  // namespace dcsst
