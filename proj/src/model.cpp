#include "flowify/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "flowify/errors.hpp"

namespace flowify {
namespace {

void check_finite(const DiffArray& c, std::ptrdiff_t layer, const std::string& what) {
  for (double v : c.values()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("non-finite likelihood contribution from " + what + " (value " +
                               std::to_string(v) + ")",
                           layer);
    }
  }
}

}  // namespace

std::vector<double> LikelihoodLedger::layer_means() const {
  std::vector<double> out;
  auto avg = [](const DiffArray& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
  };
  for (const auto& l : layers) out.push_back(avg(l));
  out.push_back(avg(base));
  return out;
}

double LikelihoodLedger::mean_total() const {
  double s = 0.0;
  for (double v : total.values()) s += v;
  return total.size() ? s / static_cast<double>(total.size()) : 0.0;
}

FlowModel::FlowModel(Shape input_shape, std::vector<FlowLayerPtr> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->input_shape() != cur) {
      throw ConfigError("model error: layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                        ") expects " + shape_string(layers_[i]->input_shape()) + " but receives " +
                        shape_string(cur));
    }
    cur = layers_[i]->output_shape();
  }
}

Shape FlowModel::output_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back()->output_shape();
}

LikelihoodLedger FlowModel::log_likelihood_sample(const DiffArray& x, Context& ctx) const {
  const std::size_t batch = batch_of(x, input_shape_, "model input");
  LikelihoodLedger ledger;
  DiffArray h = x;
  DiffArray total = DiffArray::zeros({batch});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerOutput o = layers_[i]->forward(h, ctx);
    check_finite(o.contribution, static_cast<std::ptrdiff_t>(i),
                 "layer " + std::to_string(i) + " (" + layers_[i]->kind() + ")");
    total = add(total, o.contribution);
    ledger.layers.push_back(o.contribution);
    h = o.z;
  }
  ledger.base = standard_normal_logpdf(reshape(h, {batch, numel(output_shape())}));
  check_finite(ledger.base, -1, "the base density");
  ledger.total = add(total, ledger.base);
  return ledger;
}

DiffArray FlowModel::inverse(const DiffArray& z, Context& ctx, InverseMode mode) const {
  DiffArray h = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) h = (*it)->inverse(h, ctx, mode);
  return h;
}

DiffArray FlowModel::sample(std::size_t n, Context& ctx, InverseMode mode) const {
  return inverse(standard_normal(with_batch(n, output_shape()), ctx.rng()), ctx, mode);
}

DiffArray FlowModel::auxiliary_loss(Context& ctx) const {
  DiffArray total = DiffArray::scalar(0.0);
  for (const auto& l : layers_) {
    if (auto a = l->auxiliary_loss(ctx)) total = add(total, *a);
  }
  return total;
}

std::vector<Parameter*> FlowModel::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& l : layers_)
    for (auto* p : l->parameters()) out.push_back(p);
  return out;
}

bool FlowModel::deterministic() const {
  return std::none_of(layers_.begin(), layers_.end(),
                      [](const FlowLayerPtr& l) { return l->stochastic_forward(); });
}

nlohmann::json FlowModel::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->describe());
  return {{"input_shape", input_shape_}, {"layers", layers}};
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("FLOWIFY_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double nll_to_bpd(double nll_nats, std::size_t dims) {
  return nll_nats / (static_cast<double>(dims) * std::numbers::ln2) + 8.0;
}

EvalResult evaluate(const FlowModel& model, const Dataset& data, std::uint64_t seed,
                    std::size_t chunk, std::size_t threads) {
  if (chunk == 0) chunk = 250;
  const std::size_t n_chunks = (data.count + chunk - 1) / chunk;
  std::vector<double> sums(n_chunks, 0.0);
  std::vector<std::exception_ptr> errors(n_chunks);

  auto run_chunk = [&](std::size_t c) {
    try {
      Rng rng(mix_seed(seed, c));
      Context ctx(nullptr, rng);
      const std::size_t begin = c * chunk, end = std::min(data.count, begin + chunk);
      DiffArray x = data.batch(begin, end);
      if (data.integer_pixels) x = dequantize(x, rng);
      const LikelihoodLedger ledger = model.log_likelihood_sample(x, ctx);
      double s = 0.0;
      for (double v : ledger.total.values()) s += v;
      sums[c] = s;
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };

  if (threads == 0) threads = eval_threads();
  threads = std::min(threads, std::max<std::size_t>(1, n_chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += threads) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double total = 0.0;
  for (double s : sums) total += s;
  EvalResult r;
  r.count = data.count;
  r.nll = data.count ? -total / static_cast<double>(data.count) : 0.0;
  if (data.integer_pixels) r.bpd = nll_to_bpd(r.nll, data.dims());
  return r;
}

double bits_per_dim(const FlowModel& model, const Dataset& images, std::uint64_t seed) {
  if (!images.integer_pixels) throw DataError("bits per dimension needs integer-pixel data");
  return *evaluate(model, images, seed).bpd;
}

}  // namespace flowify
