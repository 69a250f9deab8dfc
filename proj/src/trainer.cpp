#include "flowify/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "flowify/errors.hpp"

namespace flowify {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("train.") + name + " must be positive");
    }
  };
  positive(lr, "lr");
  positive(static_cast<double>(batch_size), "batch_size");
  positive(static_cast<double>(epochs), "epochs");
  positive(static_cast<double>(eval_chunk), "eval_chunk");
  positive(eps, "eps");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
  if (aux_weight < 0.0) throw ConfigError("train.aux_weight must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},         {"batch_size", batch_size}, {"epochs", epochs},
          {"seed", seed},     {"beta1", beta1},           {"beta2", beta2},
          {"eps", eps},       {"grad_clip", grad_clip},   {"aux_weight", aux_weight},
          {"eval_chunk", eval_chunk}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train section must be an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lr") c.lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "aux_weight") c.aux_weight = value.get<double>();
      else if (key == "eval_chunk") c.eval_chunk = value.get<std::size_t>();
      else throw ConfigError("unknown key train." + key);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads, double lr) {
  if (grads.size() != params_.size()) throw DimensionError("adam: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    const auto& g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    std::vector<double> next = p.value.to_vector();
    for (std::size_t i = 0; i < next.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      next[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p.value = DiffArray(p.value.shape(), std::move(next));
  }
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"train_nll", train_nll}, {"test_nll", test_nll}};
  j["bpd"] = bpd ? nlohmann::json(*bpd) : nlohmann::json(nullptr);
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  return j;
}

Trainer::Trainer(FlowModel& model, TrainConfig config)
    : model_(model), config_(config),
      adam_(model.parameters(), config.beta1, config.beta2, config.eps) {
  config_.validate();
}

std::uint64_t Trainer::eval_seed() const { return mix_seed(config_.seed, 0xe7a1ULL); }

double Trainer::step(const DiffArray& batch) {
  Rng rng(mix_seed(mix_seed(config_.seed, 0x57e9ULL), step_));

  Tape tape;
  Context ctx(&tape, rng);
  const LikelihoodLedger ledger = model_.log_likelihood_sample(batch, ctx);
  DiffArray loss = neg(mean(ledger.total));
  if (config_.aux_weight > 0.0) loss = add(loss, scale(model_.auxiliary_loss(ctx), config_.aux_weight));
  const double value = loss.item();
  if (!std::isfinite(value)) throw NonFiniteError("non-finite training loss", -1);
  const double nll = -ledger.mean_total();

  tape.backward(loss);
  const auto& params = adam_.params();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  double sq = 0.0;
  for (auto* p : params) {
    grads.push_back(tape.grad(ctx.use(*p)));
    for (double g : grads.back()) sq += g * g;
  }
  if (!std::isfinite(sq)) throw NonFiniteError("non-finite gradient", -1);
  if (config_.grad_clip > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) {
      const double s = config_.grad_clip / norm;
      for (auto& g : grads)
        for (double& v : g) v *= s;
    }
  }
  adam_.step(grads, total_steps_ ? cosine_lr(config_.lr, step_, total_steps_) : config_.lr);
  ++step_;
  return nll;
}

EpochMetrics Trainer::run_epoch(const Dataset& train, const Dataset& test) {
  if (train.count == 0) throw DataError("empty training split");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t per_epoch = (train.count + config_.batch_size - 1) / config_.batch_size;
  total_steps_ = per_epoch * config_.epochs;

  std::vector<std::size_t> order(train.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle(mix_seed(config_.seed, 0x5f0000ULL + epoch_));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[shuffle.next_u64() % i]);
  }

  double nll_sum = 0.0;
  for (std::size_t b = 0; b < per_epoch; ++b) {
    const std::size_t begin = b * config_.batch_size;
    const std::size_t end = std::min(train.count, begin + config_.batch_size);
    DiffArray x = train.gather_rows(std::span(order).subspan(begin, end - begin));
    if (train.integer_pixels) {
      Rng deq(mix_seed(mix_seed(config_.seed, 0xde9ULL), step_));
      x = dequantize(x, deq);
    }
    nll_sum += step(x);
  }

  EpochMetrics m;
  m.epoch = ++epoch_;
  m.train_nll = nll_sum / static_cast<double>(per_epoch);
  if (test.count > 0) {
    const EvalResult r = evaluate(model_, test, eval_seed(), config_.eval_chunk);
    m.test_nll = r.nll;
    m.bpd = r.bpd;
  }
  m.lr = cosine_lr(config_.lr, step_, total_steps_);
  m.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<EpochMetrics> Trainer::train(const Dataset& train, const Dataset& test,
                                         const EpochCallback& on_epoch) {
  std::vector<EpochMetrics> out;
  while (epoch_ < config_.epochs) {
    out.push_back(run_epoch(train, test));
    if (on_epoch) on_epoch(out.back(), *this);
  }
  return out;
}

}  // namespace flowify
