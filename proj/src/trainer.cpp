#include "space/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "space/model_config.hpp"
#include "space/ops.hpp"

namespace space {

namespace {

const char* mode_name(BatchMode m) { return m == BatchMode::Balanced ? "balanced" : "alternating"; }

}  // namespace

void TrainConfig::validate(std::size_t num_species) const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (steps == 0) fail("steps", "must be positive");
  if (warmup_steps > steps) fail("warmup_steps", "must not exceed steps");
  if (!(peak_lr > 0.0)) fail("peak_lr", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (accum_batches == 0) fail("accum_batches", "must be positive");
  if (num_species > 0 && accum_batches % num_species != 0) {
    fail("accum_batches", "must be a multiple of the species count " + std::to_string(num_species));
  }
  if (!(clip_norm > 0.0)) fail("clip_norm", "must be positive");
  if (!(alpha >= 0.0)) fail("alpha", "must be nonnegative");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps", "must be positive");
  if (eval_every == 0) fail("eval_every", "must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},          {"warmup_steps", warmup_steps},   {"peak_lr", peak_lr},
          {"batch_size", batch_size}, {"accum_batches", accum_batches}, {"clip_norm", clip_norm},
          {"alpha", alpha},           {"seed", seed},                   {"weight_decay", weight_decay},
          {"beta1", beta1},           {"beta2", beta2},                 {"eps", eps},
          {"eval_every", eval_every}, {"batch_mode", mode_name(batch_mode)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.at("steps");
  c.warmup_steps = j.at("warmup_steps");
  c.peak_lr = j.at("peak_lr");
  c.batch_size = j.at("batch_size");
  c.accum_batches = j.at("accum_batches");
  c.clip_norm = j.at("clip_norm");
  c.alpha = j.at("alpha");
  c.seed = j.at("seed");
  c.weight_decay = j.at("weight_decay");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.eps = j.at("eps");
  c.eval_every = j.at("eval_every");
  c.batch_mode = j.at("batch_mode").get<std::string>() == "balanced" ? BatchMode::Balanced : BatchMode::Alternating;
  return c;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.steps <= cfg.warmup_steps) return cfg.peak_lr;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.steps - cfg.warmup_steps);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_grad_norm(const ParameterSet<T>& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.has_grad()) continue;
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
ClipResult clip_global_norm(ParameterSet<T>& params, double max_norm) {
  ClipResult r;
  r.norm_before = global_grad_norm(params);
  r.norm_after = r.norm_before;
  if (r.norm_before > max_norm && std::isfinite(r.norm_before)) {
    r.scale = max_norm / r.norm_before;
    for (const auto& entry : params.entries()) {
      auto t = entry.second;
      if (!t.has_grad()) continue;
      for (T& g : t.grad()) g = static_cast<T>(static_cast<double>(g) * r.scale);
    }
    r.norm_after = global_grad_norm(params);
  }
  return r;
}

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  const AdamHyper& h) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adamw: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw std::invalid_argument("adamw: step count is 1-based");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double p = static_cast<double>(param[i]);
    const double g = static_cast<double>(grad[i]);
    p -= h.lr * h.weight_decay * p;
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p -= h.lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
    param[i] = static_cast<T>(p);
  }
}

template <typename T>
AdamW<T>::AdamW(ParameterSet<T>& params) : params_(&params) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.numel(), T(0));
    v_.emplace_back(t.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(const AdamHyper& h) {
  ++t_;
  const auto& entries = params_->entries();
  if (entries.size() != m_.size()) throw ShapeError("adamw: parameter set changed after construction");
  std::vector<T> zeros;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto t = entries[i].second;
    std::span<const T> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      zeros.assign(t.numel(), T(0));
      g = zeros;
    }
    adamw_update<T>(t.data(), g, m_[i], v_[i], t_, h);
  }
}

template <typename T>
std::vector<double> predict_species(const SpaceModel<T>& model, const Dataset& data, std::size_t species,
                                    std::size_t batch_size, RoutingTrace<T>* trace, ProfileRoutingTally* tally) {
  NoGradGuard guard;
  const std::size_t n = data.species.at(species).size();
  std::vector<double> out;
  out.reserve(n * model.schema().num_tracks(species) * data.num_bins());
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    std::vector<std::size_t> records;
    for (std::size_t i = begin; i < std::min(n, begin + batch_size); ++i) records.push_back(i);
    auto batch = make_batch<T>(data, species, records);
    auto res = model.forward(batch.x, species, false, nullptr, trace);
    if (tally) tally->add(res.decoder_gates);
    for (T v : res.rates.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

template <typename T>
double evaluate_poisson(const SpaceModel<T>& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t records = 0;
  for (std::size_t m = 0; m < data.species.size(); ++m) {
    const std::size_t n = data.species[m].size();
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = begin; i < std::min(n, begin + batch_size); ++i) idx.push_back(i);
      auto batch = make_batch<T>(data, m, idx);
      auto res = model.forward(batch.x, m, false);
      total += static_cast<double>(poisson_nll(res.rates, batch.targets).item()) * static_cast<double>(idx.size());
      records += idx.size();
    }
  }
  return records ? total / static_cast<double>(records) : 0.0;
}

template <typename T>
Trainer<T>::Trainer(SpaceModel<T>& model, const Dataset& data, const TrainConfig& cfg)
    : model_(&model),
      data_(&data),
      cfg_(cfg),
      stream_(data, cfg.batch_size, cfg.batch_mode, cfg.seed),
      opt_(model.params()),
      noise_(make_rng(cfg.seed, "gate-noise", 0)) {
  cfg_.validate(data.species.size());
  if (!(data.schema == model.schema())) throw ConfigError("data: dataset schema differs from the model schema");
}

template <typename T>
std::string Trainer<T>::rng_state() const {
  std::ostringstream os;
  os << noise_;
  return os.str();
}

template <typename T>
void Trainer<T>::resume(std::uint64_t step, std::uint64_t batches_consumed, const std::string& rng_state) {
  stream_ = BatchStream(*data_, cfg_.batch_size, cfg_.batch_mode, cfg_.seed);
  for (std::uint64_t i = 0; i < batches_consumed; ++i) stream_.next_index();
  std::istringstream is(rng_state);
  is >> noise_;
  if (!is) throw std::invalid_argument("checkpoint: unreadable rng state");
  step_ = step;
  consumed_ = batches_consumed;
  opt_.set_steps_taken(step);
}

template <typename T>
nlohmann::json Trainer<T>::step() {
  auto& params = model_->params();
  params.zero_grad();
  TapeScope<T> scope;

  auto trace = model_->make_trace();
  Tensor<T> poisson;
  for (std::size_t b = 0; b < cfg_.accum_batches; ++b) {
    auto batch = stream_.next<T>();
    auto res = model_->forward(batch.x, batch.species, true, &noise_, &trace);
    for (T r : res.rates.data()) {
      if (!std::isfinite(r)) throw NumericError("non-finite prediction at step " + std::to_string(step_));
    }
    auto loss = poisson_nll(res.rates, batch.targets);
    poisson = poisson.defined() ? ops::add(poisson, loss) : loss;
  }
  consumed_ += cfg_.accum_batches;
  poisson = ops::mul_scalar(poisson, static_cast<T>(1.0 / static_cast<double>(cfg_.accum_batches)));
  auto report = total_loss(poisson, trace, cfg_.alpha);
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite loss at step " + std::to_string(step_));
  }
  scope.tape().backward(report.objective);
  const double lr = lr_at(step_, cfg_);
  auto clip = clip_global_norm(params, cfg_.clip_norm);
  if (!std::isfinite(clip.norm_before)) {
    throw NumericError("non-finite gradient norm at step " + std::to_string(step_));
  }
  opt_.step({lr, cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay});
  params.zero_grad();

  nlohmann::json rec = {{"step", step_},
                        {"lr", lr},
                        {"poisson", report.poisson},
                        {"mi", report.mi_per_layer},
                        {"total", report.total},
                        {"grad_norm_preclip", clip.norm_before},
                        {"grad_norm", clip.norm_after}};
  ++step_;
  if (step_ % cfg_.eval_every == 0 || step_ == cfg_.steps) rec["param_hash"] = params.hash();
  return rec;
}

#define SPACE_INSTANTIATE_TRAINER(T)                                                                             \
  template double global_grad_norm<T>(const ParameterSet<T>&);                                                   \
  template ClipResult clip_global_norm<T>(ParameterSet<T>&, double);                                             \
  template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t,     \
                                const AdamHyper&);                                                              \
  template class AdamW<T>;                                                                                       \
  template class Trainer<T>;                                                                                     \
  template double evaluate_poisson<T>(const SpaceModel<T>&, const Dataset&, std::size_t);                        \
  template std::vector<double> predict_species<T>(const SpaceModel<T>&, const Dataset&, std::size_t, std::size_t, \
                                                  RoutingTrace<T>*, ProfileRoutingTally*);

SPACE_INSTANTIATE_TRAINER(float)
SPACE_INSTANTIATE_TRAINER(double)

}  // namespace space
