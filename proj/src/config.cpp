#include "flowify/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "flowify/activations.hpp"
#include "flowify/conv_flow.hpp"
#include "flowify/errors.hpp"
#include "flowify/residual.hpp"

namespace flowify {
namespace {

using nlohmann::json;

constexpr double kImageNoiseInitLogScale = -3.0;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key " + where + "." + key);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

/// Accepts n or [h, w].
std::pair<std::size_t, std::size_t> pair_or(const json& j, const char* key, std::size_t fallback,
                                            const std::string& where) {
  if (!j.contains(key)) return {fallback, fallback};
  const json& v = j.at(key);
  auto count = [](const json& e) { return e.is_number_integer() && e.get<std::int64_t>() >= 0; };
  if (count(v)) return {v.get<std::size_t>(), v.get<std::size_t>()};
  if (v.is_array() && v.size() == 2 && count(v[0]) && count(v[1])) {
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  }
  throw ConfigError(where + "." + key + " must be a non-negative integer or a pair");
}

SvdLinearOptions linear_options(const json& j, const std::string& where) {
  SvdLinearOptions o;
  o.inverse = parse_inverse_kind(get_or<std::string>(j, "inverse", "conditional", where));
  o.fixed_log_std = get_or<double>(j, "fixed_log_std", 0.0, where);
  return o;
}

FlowLayerPtr build_layer(const json& spec, Shape& shape, const std::string& name, Rng& rng) {
  if (!spec.is_object() || !spec.contains("type") || !spec["type"].is_string()) {
    throw ConfigError(name + ": each layer needs a string \"type\"");
  }
  const std::string type = spec["type"];
  FlowLayerPtr layer;
  try {
    if (type == "linear") {
      reject_unknown(spec, {"type", "out", "inverse", "fixed_log_std"}, name);
      if (shape.size() != 1) {
        throw ConfigError(name + ": linear needs a flat input, got " + shape_string(shape) +
                          " (insert a flatten layer)");
      }
      if (!spec.contains("out")) throw ConfigError(name + ": linear needs \"out\"");
      layer = std::make_unique<LinearFlowLayer>(name, shape[0], get_or<std::size_t>(spec, "out", 0, name),
                                                rng, linear_options(spec, name));
    } else if (type == "conv") {
      reject_unknown(spec, {"type", "out_channels", "kernel", "stride", "pad", "noise", "init_log_scale",
                            "inverse", "fixed_log_std"},
                     name);
      if (shape.size() != 3) throw ConfigError(name + ": conv needs a [C, H, W] input");
      if (!spec.contains("out_channels")) throw ConfigError(name + ": conv needs \"out_channels\"");
      ConvOptions o;
      std::tie(o.kernel_h, o.kernel_w) = pair_or(spec, "kernel", 1, name);
      const auto stride = pair_or(spec, "stride", 0, name);
      o.stride_h = stride.first ? stride.first : o.kernel_h;
      o.stride_w = stride.second ? stride.second : o.kernel_w;
      std::tie(o.pad_h, o.pad_w) = pair_or(spec, "pad", 0, name);
      o.noise = parse_noise_kind(get_or<std::string>(spec, "noise", "normal", name));
      o.init_log_scale = get_or<double>(spec, "init_log_scale", 0.0, name);
      o.linear = linear_options(spec, name);
      layer = std::make_unique<ConvFlow>(name, shape, get_or<std::size_t>(spec, "out_channels", 0, name),
                                         rng, o);
    } else if (type == "rq_spline") {
      reject_unknown(spec, {"type", "bins", "bound"}, name);
      layer = std::make_unique<RqSplineFlow>(
          name, shape, get_or<std::size_t>(spec, "bins", RqSplineFlow::kDefaultBins, name),
          get_or<double>(spec, "bound", RqSplineFlow::kDefaultBound, name));
    } else if (type == "leaky_relu") {
      reject_unknown(spec, {"type", "slope"}, name);
      layer = std::make_unique<LeakyReluFlow>(shape, get_or<double>(spec, "slope", 0.1, name));
    } else if (type == "flatten") {
      reject_unknown(spec, {"type"}, name);
      layer = std::make_unique<FlattenFlow>(shape);
    } else if (type == "probit") {
      reject_unknown(spec, {"type"}, name);
      layer = std::make_unique<ProbitFlow>(shape);
    } else if (type == "residual") {
      reject_unknown(spec, {"type", "branch_a", "branch_b", "init_log_scale", "hidden"}, name);
      Shape sa = shape, sb = shape;
      auto a = build_layers(spec.value("branch_a", json::array()), sa, name + ".a", rng);
      auto b = build_layers(spec.value("branch_b", json::array()), sb, name + ".b", rng);
      if (sa != sb) {
        throw ConfigError(name + ": residual branches end in " + shape_string(sa) + " and " +
                          shape_string(sb));
      }
      ResidualOptions o;
      o.init_log_scale = get_or<double>(spec, "init_log_scale", 0.0, name);
      o.hidden = get_or<std::size_t>(spec, "hidden", 0, name);
      layer = std::make_unique<ResidualFlowBlock>(name, shape, std::move(a), std::move(b), rng, o);
    } else {
      throw ConfigError(name + ": unknown layer type \"" + type + "\"");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(name + " (" + type + "): " + e.what());
  }
  shape = layer->output_shape();
  return layer;
}

json spline() { return {{"type", "rq_spline"}, {"bins", 8}, {"bound", 2.0}}; }
json linear(std::size_t out) { return {{"type", "linear"}, {"out", out}}; }
json conv(std::size_t out, std::size_t k, std::size_t s, std::size_t pad = 0) {
  json j = {{"type", "conv"}, {"out_channels", out}, {"kernel", k}, {"stride", s}, {"pad", pad}};
  if (pad > 0 || k > s) j["init_log_scale"] = kImageNoiseInitLogScale;
  return j;
}

json dense_tail(json layers, std::initializer_list<std::size_t> widths, bool final_spline) {
  const std::size_t n = widths.size();
  std::size_t i = 0;
  for (std::size_t w : widths) {
    layers.push_back(linear(w));
    if (++i < n || final_spline) layers.push_back(spline());
  }
  return layers;
}

}  // namespace

std::vector<MixtureComponent> default_toy_mixture() {
  return {{0.5, -1.0, -0.5, 0.35}, {0.5, 1.0, 0.5, 0.35}};
}

json DatasetSpec::to_json() const {
  json j = {{"kind", kind}, {"test_fraction", test_fraction}, {"max_rows", max_rows}};
  if (kind == "toy2d") {
    j["samples"] = samples;
    json comps = json::array();
    for (const auto& c : components) {
      comps.push_back({{"weight", c.weight}, {"mean", {c.mean_x, c.mean_y}}, {"std", c.std}});
    }
    j["components"] = comps;
  } else {
    j["path"] = path;
  }
  if (kind == "csv_tabular") j["standardize"] = standardize;
  return j;
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset section must be an object");
  const std::string w = "dataset";
  reject_unknown(j, {"kind", "path", "test_fraction", "max_rows", "standardize", "samples", "components"},
                 w);
  DatasetSpec d;
  d.kind = get_or<std::string>(j, "kind", d.kind, w);
  if (d.kind != "toy2d" && d.kind != "idx_images" && d.kind != "csv_tabular") {
    throw ConfigError("dataset.kind must be toy2d, idx_images or csv_tabular, got " + d.kind);
  }
  d.path = get_or<std::string>(j, "path", "", w);
  d.test_fraction = get_or<double>(j, "test_fraction", d.test_fraction, w);
  d.max_rows = get_or<std::size_t>(j, "max_rows", 0, w);
  d.standardize = get_or<bool>(j, "standardize", true, w);
  d.samples = get_or<std::size_t>(j, "samples", d.samples, w);
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) {
    throw ConfigError("dataset.test_fraction must lie in (0, 1)");
  }
  if (d.kind != "toy2d" && d.path.empty()) throw ConfigError("dataset.path is required for " + d.kind);
  if (d.kind == "toy2d") {
    if (j.contains("components")) {
      for (const auto& c : j["components"]) {
        reject_unknown(c, {"weight", "mean", "std"}, "dataset.components[]");
        MixtureComponent m;
        m.weight = get_or<double>(c, "weight", 1.0, w);
        const auto mean = get_or<std::vector<double>>(c, "mean", {0.0, 0.0}, w);
        if (mean.size() != 2) throw ConfigError("dataset.components[].mean must have 2 entries");
        m.mean_x = mean[0];
        m.mean_y = mean[1];
        m.std = get_or<double>(c, "std", 1.0, w);
        d.components.push_back(m);
      }
    } else {
      d.components = default_toy_mixture();
    }
    if (d.components.empty()) throw ConfigError("dataset.components must not be empty");
    if (d.samples < 2) throw ConfigError("dataset.samples must be at least 2");
  }
  return d;
}

Split load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  Dataset all;
  if (spec.kind == "toy2d") {
    Rng rng(mix_seed(seed, 0x70a2dULL));
    all = GaussianMixture2d(spec.components).sample(spec.samples, rng);
  } else if (spec.kind == "idx_images") {
    all = load_idx(spec.path);
  } else {
    all = load_csv(spec.path);
  }
  if (spec.max_rows && spec.max_rows < all.count) {
    all.values.resize(spec.max_rows * all.dims());
    all.count = spec.max_rows;
  }
  Split split = split_dataset(all, spec.test_fraction, seed);
  if (spec.kind == "csv_tabular" && spec.standardize) standardize(split);
  return split;
}

std::vector<std::string> preset_names() {
  return {"toy_fmlp", "mnist_fconv2_desk", "mnist_fconv1_desk", "mnist_fmlp_full",
          "mnist_fconv1_full", "mnist_fconv2_full"};
}

json preset_layers(const std::string& name, bool full_scale, std::vector<std::string>* warnings) {
  const bool is_full = name.size() > 5 && name.substr(name.size() - 5) == "_full";
  if (is_full && !full_scale) {
    throw ConfigError("preset " + name + " is full-scale; set \"full_scale\": true to use it");
  }
  if (is_full && warnings) {
    warnings->push_back("preset " + name +
                        " is a full-scale architecture; expect many CPU hours per epoch");
  }
  json l = json::array();
  if (name == "toy_fmlp") {
    return dense_tail(l, {2, 2, 2, 2}, false);
  }
  if (name == "mnist_fconv2_desk") {
    // 1x28x28 -> 4x14x14 -> 16x7x7 -> 4x7x7 -> 196 -> 64 -> 16
    l.push_back(conv(4, 2, 2));
    l.push_back(spline());
    l.push_back(conv(16, 2, 2));
    l.push_back(spline());
    l.push_back(conv(4, 1, 1));
    l.push_back(spline());
    l.push_back({{"type", "flatten"}});
    return dense_tail(l, {64, 16}, false);
  }
  if (name == "mnist_fconv1_desk") {
    // overlapping 4x4 / stride-2 kernels in the first layer
    l.push_back(conv(4, 4, 2, 1));
    l.push_back(spline());
    l.push_back(conv(16, 2, 2));
    l.push_back(spline());
    l.push_back(conv(4, 1, 1));
    l.push_back(spline());
    l.push_back({{"type", "flatten"}});
    return dense_tail(l, {64, 16}, false);
  }
  if (name == "mnist_fmlp_full") {
    l.push_back({{"type", "flatten"}});
    return dense_tail(l, {512, 256, 128, 64, 32, 8}, false);
  }
  if (name == "mnist_fconv1_full") {
    const std::size_t out[] = {16, 24, 32, 48, 64}, k[] = {3, 2, 3, 2, 2}, s[] = {2, 2, 2, 1, 1},
                      p[] = {1, 0, 0, 0, 0};
    for (int i = 0; i < 5; ++i) {
      l.push_back(conv(out[i], k[i], s[i], p[i]));
      l.push_back(spline());
    }
    l.push_back({{"type", "flatten"}});
    return dense_tail(l, {64, 64, 64, 64, 64, 64, 32, 32, 32, 32, 32, 32, 32, 8}, true);
  }
  if (name == "mnist_fconv2_full") {
    l.push_back(conv(4, 2, 2));
    l.push_back(spline());
    l.push_back(conv(16, 2, 2));
    l.push_back(spline());
    l.push_back(conv(64, 7, 7));
    l.push_back(spline());
    l.push_back({{"type", "flatten"}});
    return dense_tail(l, {64, 64, 64, 64, 64, 64, 32, 32, 32, 32, 32, 32, 32, 8}, true);
  }
  throw ConfigError("unknown preset \"" + name + "\"");
}

json RunConfig::to_json() const {
  json model = {{"layers", layers}};
  if (!preset.empty()) model["from_preset"] = preset;
  return {{"name", name},
          {"full_scale", full_scale},
          {"dataset", dataset.to_json()},
          {"model", model},
          {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const json& j, std::vector<std::string>* warnings) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, {"name", "full_scale", "dataset", "model", "train"}, "config");
  RunConfig c;
  c.name = get_or<std::string>(j, "name", c.name, "config");
  c.full_scale = get_or<bool>(j, "full_scale", false, "config");
  if (!j.contains("dataset")) throw ConfigError("config needs a dataset section");
  c.dataset = DatasetSpec::from_json(j["dataset"]);
  c.train = TrainConfig::from_json(j.value("train", json::object()));
  if (!j.contains("model")) throw ConfigError("config needs a model section");
  const json& m = j["model"];
  if (!m.is_object()) throw ConfigError("model section must be an object");
  reject_unknown(m, {"preset", "layers", "from_preset"}, "model");
  if (m.contains("layers") == m.contains("preset")) {
    throw ConfigError("model needs exactly one of \"layers\" or \"preset\"");
  }
  if (m.contains("preset")) {
    c.preset = get_or<std::string>(m, "preset", "", "model");
    c.layers = preset_layers(c.preset, c.full_scale, warnings);
  } else {
    if (!m["layers"].is_array()) throw ConfigError("model.layers must be an array");
    c.layers = m["layers"];
    c.preset = get_or<std::string>(m, "from_preset", "", "model");
  }
  return c;
}

RunConfig load_run_config(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j, warnings);
}

std::vector<FlowLayerPtr> build_layers(const json& layers, Shape& shape, const std::string& prefix,
                                       Rng& rng) {
  if (!layers.is_array()) throw ConfigError(prefix + " must be a layer array");
  std::vector<FlowLayerPtr> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back(build_layer(layers[i], shape, prefix + "." + std::to_string(i), rng));
  }
  return out;
}

FlowModel build_model(const json& layers, const Shape& input_shape, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417ULL));
  Shape shape = input_shape;
  auto built = build_layers(layers, shape, "layers", rng);
  return FlowModel(input_shape, std::move(built));
}

}  // namespace flowify
