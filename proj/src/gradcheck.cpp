#include "space/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "space/decoder.hpp"
#include "space/encoder.hpp"
#include "space/model.hpp"
#include "space/objectives.hpp"
#include "space/ops.hpp"
#include "space/schema.hpp"

namespace space {

namespace {

using Td = Tensor<double>;

Td random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Td::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

GradcheckResult gradcheck(const std::string& name, const GradFn& f, std::vector<Td> inputs,
                          const GradcheckOptions& opt) {
  auto rng = make_rng(opt.seed, "gradcheck/" + name);
  Td weights;
  {
    NoGradGuard guard;
    const auto probe = f(inputs);
    weights = random_tensor(probe.shape(), rng);
    weights.set_requires_grad(false);
  }
  auto objective = [&]() { return ops::sum(ops::mul(f(inputs), weights)); };

  for (auto& x : inputs) x.zero_grad();
  {
    TapeScope<double> scope;
    auto loss = objective();
    scope.tape().backward(loss);
  }

  GradcheckResult r{name, 0.0, 0};
  NoGradGuard guard;
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    std::vector<std::size_t> order(x.numel());
    std::iota(order.begin(), order.end(), 0);
    if (order.size() > opt.probes_per_input) {
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(opt.probes_per_input);
    }
    auto data = x.data();
    for (std::size_t i : order) {
      const double saved = data[i];
      data[i] = saved + opt.step;
      const double up = objective().item();
      data[i] = saved - opt.step;
      const double down = objective().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = x.has_grad() ? x.grad()[i] : 0.0;
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      r.max_rel_error = std::max(r.max_rel_error, std::isfinite(err) ? err : INFINITY);
      ++r.probes;
    }
  }
  return r;
}

namespace {

/// Reinitializes every parameter uniformly so that zero-initialized layers
/// also carry gradient signal.
void scramble(ParameterSet<double>& params, Rng& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (const auto& entry : params.entries()) {
    auto t = entry.second;
    for (auto& v : t.data()) v = u(rng);
  }
}

Td one_hot_batch(std::size_t batch, std::size_t len, Rng& rng) {
  std::uniform_int_distribution<int> base(0, 3);
  std::vector<double> v(batch * 4 * len, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < len; ++i) v[(b * 4 + base(rng)) * len + i] = 1.0;
  }
  return Td::from_data({batch, 4, len}, std::move(v));
}

Td counts(Shape shape, Rng& rng) {
  std::poisson_distribution<int> pois(2.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = pois(rng);
  return Td::from_data(std::move(shape), std::move(v));
}

GradcheckResult check_model(const GradcheckOptions& opt) {
  ModelConfig cfg;
  cfg.seq_len = 256;
  cfg.bin_size = 32;
  cfg.d_hidden = 16;
  cfg.stem_channels = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.experts = 4;
  cfg.top_k = 3;
  cfg.decoder_experts = 4;
  cfg.groups = 2;
  cfg.decoder_top_k = 3;
  cfg.expert_kernel = 3;
  cfg.expert_hidden = 4;
  auto schema = make_schema({{"human", {{AssayType::DnaseAtac, 2}, {AssayType::Cage, 1}}},
                             {"mouse", {{AssayType::DnaseAtac, 1}, {AssayType::TfChip, 1}, {AssayType::Cage, 1}}}});
  SpaceModel<double> model(cfg, schema, opt.seed);
  auto rng = make_rng(opt.seed, "gradcheck/model");
  scramble(model.params(), rng, 0.3);
  std::vector<Td> xs, ts;
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    xs.push_back(one_hot_batch(2, cfg.seq_len, rng));
    ts.push_back(counts({2, schema.num_tracks(m), cfg.num_bins()}, rng));
  }
  std::vector<Td> inputs;
  for (const auto& entry : model.params().entries()) inputs.push_back(entry.second);
  const double alpha = 0.5;  // large enough that the MI path is visible
  auto f = [&](const std::vector<Td>&) {
    auto trace = model.make_trace();
    Td poisson;
    for (std::size_t m = 0; m < xs.size(); ++m) {
      auto out = model.forward(xs[m], m, false, nullptr, &trace);
      auto l = poisson_nll(out.rates, ts[m]);
      poisson = poisson.defined() ? ops::add(poisson, l) : l;
    }
    poisson = ops::mul_scalar(poisson, 1.0 / static_cast<double>(xs.size()));
    return total_loss(poisson, trace, alpha).objective;
  };
  GradcheckOptions o = opt;
  o.probes_per_input = 4;
  return gradcheck("model_end_to_end", f, inputs, o);
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt) {
  auto rng = make_rng(opt.seed, "gradcheck/inputs");
  auto R = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };
  std::vector<GradcheckResult> out;
  auto add = [&](const std::string& name, const GradFn& f, std::vector<Td> in) {
    out.push_back(gradcheck(name, f, std::move(in), opt));
  };
  using V = const std::vector<Td>&;

  add("add", [](V x) { return ops::add(x[0], x[1]); }, {R({3, 4}), R({4})});
  add("sub", [](V x) { return ops::sub(x[0], x[1]); }, {R({3, 1}), R({3, 4})});
  add("mul", [](V x) { return ops::mul(x[0], x[1]); }, {R({2, 3, 4}), R({3, 1})});
  add("div", [](V x) { return ops::div(x[0], x[1]); }, {R({3, 4}), R({3, 4}, 0.5, 2.0)});
  add("add_scalar", [](V x) { return ops::add_scalar(x[0], 0.7); }, {R({5})});
  add("mul_scalar", [](V x) { return ops::mul_scalar(x[0], -1.3); }, {R({5})});
  add("neg", [](V x) { return ops::neg(x[0]); }, {R({5})});
  add("exp", [](V x) { return ops::exp(x[0]); }, {R({6})});
  add("log", [](V x) { return ops::log(x[0]); }, {R({6}, 0.2, 3.0)});
  add("softplus", [](V x) { return ops::softplus(x[0]); }, {R({8}, -4.0, 4.0)});
  add("gelu", [](V x) { return ops::gelu(x[0]); }, {R({8}, -3.0, 3.0)});
  add("xlogx", [](V x) { return ops::xlogx(x[0]); }, {R({6}, 0.05, 2.0)});
  add("sum", [](V x) { return ops::sum(x[0]); }, {R({3, 4})});
  add("mean", [](V x) { return ops::mean(x[0]); }, {R({3, 4})});
  add("sum_axis", [](V x) { return ops::sum_axis(x[0], 1); }, {R({2, 3, 4})});
  add("mean_pool", [](V x) { return ops::mean_pool(x[0], 2); }, {R({2, 3, 4})});
  add("reshape", [](V x) { return ops::reshape(x[0], {4, 6}); }, {R({2, 3, 4})});
  add("permute", [](V x) { return ops::permute(x[0], {2, 0, 1}); }, {R({2, 3, 4})});
  add("slice", [](V x) { return ops::slice(x[0], 1, 1, 3); }, {R({2, 4, 3})});
  add("concat", [](V x) { return ops::concat<double>({x[0], x[1]}, 1); }, {R({2, 2, 3}), R({2, 1, 3})});
  add("index_select", [](V x) { return ops::index_select(x[0], 1, {2, 0, 2}); }, {R({2, 3, 2})});
  add("index_scatter", [](V x) { return ops::index_scatter(x[0], 0, {3, 1, 3}, 5); }, {R({3, 2})});
  add("broadcast_to", [](V x) { return ops::broadcast_to(x[0], {2, 3, 4}); }, {R({3, 1})});
  add("matmul", [](V x) { return ops::matmul(x[0], x[1]); }, {R({2, 3, 4}), R({2, 4, 5})});
  add("matmul_shared", [](V x) { return ops::matmul(x[0], x[1]); }, {R({2, 3, 4}), R({4, 5})});
  add("linear", [](V x) { return ops::linear(x[0], x[1], x[2]); }, {R({2, 3, 4}), R({4, 5}), R({5})});
  add("conv1d", [](V x) { return ops::conv1d(x[0], x[1], x[2], 1, 2); }, {R({2, 3, 9}), R({4, 3, 5}), R({4})});
  add("conv1d_strided", [](V x) { return ops::conv1d(x[0], x[1], Td(), 2, 1); }, {R({2, 2, 9}), R({3, 2, 3})});
  add("max_pool1d", [](V x) { return ops::max_pool1d(x[0], 2); }, {R({2, 3, 8})});
  add("softmax", [](V x) { return ops::softmax(x[0], 1); }, {R({3, 5}, -2.0, 2.0)});
  add("topk_softmax", [](V x) { return ops::topk_softmax(x[0], 3); }, {R({6, 5}, -2.0, 2.0)});
  add("layernorm", [](V x) { return ops::layernorm(x[0], x[1], x[2]); }, {R({3, 6}), R({6}), R({6})});

  {
    auto t = counts({3, 4}, rng);
    add("poisson_nll", [t](V x) { return poisson_nll(x[0], t); }, {R({3, 4}, 0.2, 4.0)});
  }
  add("rate_activation", [](V x) { return rate_activation(x[0]); }, {R({8}, -3.0, 3.0)});
  add("mutual_information",
      [](V x) { return mutual_information(ops::reshape(ops::softmax(ops::reshape(x[0], {12}), 0), {3, 4})); },
      {R({3, 4}, -2.0, 2.0)});

  {
    const std::size_t d = 8, heads = 2;
    add("attention",
        [heads](V x) {
          AttentionParams<double> p{x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]};
          return attention(x[0], p, heads).output;
        },
        {R({2, 5, d}), R({d, d}), R({d}), R({d, d}), R({d}), R({d, d}), R({d}), R({d, d}), R({d})});
  }
  {
    const std::size_t d = 4, n = 3;
    add("moe_forward",
        [](V x) {
          MoEParams<double> p;
          for (std::size_t e = 0; e < 3; ++e) p.experts.push_back({x[4 * e], x[4 * e + 1], x[4 * e + 2], x[4 * e + 3]});
          p.gate_weight = {x[12]};
          p.gate_bias = {x[13]};
          return moe_forward<double>(x[14], p, 0, GateOptions{2, 0.0, nullptr}, nullptr);
        },
        {R({d, 2 * d}), R({2 * d}), R({2 * d, d}), R({d}), R({d, 2 * d}), R({2 * d}), R({2 * d, d}), R({d}),
         R({d, 2 * d}), R({2 * d}), R({2 * d, d}), R({d}), R({d, n}), R({n}), R({6, d})});
  }
  add("decoder_expert",
      [](V x) { return decoder_expert_forward(x[0], DecoderExpertParams<double>{x[1], x[2], x[3], x[4]}); },
      {R({2, 3, 6}), R({4, 1, 3}), R({4}), R({1, 4, 1}), R({1})});

  out.push_back(check_model(opt));
  return out;
}

}  // namespace space
