#include "dfcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfcn/serialization.hpp"

namespace dfcn {

// ---------------------------------------------------------------------------
// Configuration

std::vector<int> fibonacci_dilations(int n) {
  std::vector<int> out;
  int a = 1, b = 1;
  for (int i = 0; i < n; ++i) {
    out.push_back(a);
    const int next = a + b;
    a = b;
    b = next;
  }
  return out;
}

std::vector<int> exponential_dilations(int n) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(i == 0 ? 1 : 1 << (i - 1));
  return out;
}

std::vector<int> NetworkConfig::dilations() const {
  switch (schedule) {
    case DilationSchedule::fibonacci: return fibonacci_dilations(num_dilated_layers);
    case DilationSchedule::exponential: return exponential_dilations(num_dilated_layers);
    case DilationSchedule::ones: return std::vector<int>(static_cast<std::size_t>(std::max(0, num_dilated_layers)), 1);
    case DilationSchedule::explicit_list: return explicit_dilations;
  }
  return {};
}

std::vector<std::string> NetworkConfig::violations() const {
  std::vector<std::string> v;
  if (kernels_per_layer < 1) v.push_back("kernels_per_layer must be >= 1");
  if (num_dilated_layers < 1) v.push_back("num_dilated_layers must be >= 1");
  if (num_dilated_layers > 30 && schedule != DilationSchedule::explicit_list) {
    v.push_back("num_dilated_layers must be <= 30 for named schedules");
  }
  if (schedule == DilationSchedule::explicit_list &&
      static_cast<int>(explicit_dilations.size()) != num_dilated_layers) {
    v.push_back("dilation schedule length " + std::to_string(explicit_dilations.size()) +
                " != num_dilated_layers " + std::to_string(num_dilated_layers));
  }
  if (schedule == DilationSchedule::explicit_list) {
    for (int d : explicit_dilations) {
      if (d < 1) {
        v.push_back("dilation rates must be >= 1");
        break;
      }
    }
  }
  if (num_classes < 2) v.push_back("num_classes must be >= 2");
  if (num_classes > 254) v.push_back("num_classes must be <= 254");
  for (int w : head_widths) {
    if (w < 1) {
      v.push_back("head widths must be positive");
      break;
    }
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) v.push_back("dropout_rate must be in [0, 1)");
  return v;
}

void NetworkConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid network config:";
  for (const auto& s : v) msg += " " + s + ";";
  throw ConfigError(msg);
}

std::string to_string(DilationSchedule s) {
  switch (s) {
    case DilationSchedule::fibonacci: return "fibonacci";
    case DilationSchedule::exponential: return "exponential";
    case DilationSchedule::ones: return "ones";
    case DilationSchedule::explicit_list: return "explicit";
  }
  return "?";
}

DilationSchedule parse_dilation_schedule(const std::string& s) {
  if (s == "fibonacci") return DilationSchedule::fibonacci;
  if (s == "exponential") return DilationSchedule::exponential;
  if (s == "ones") return DilationSchedule::ones;
  throw ConfigError("unknown dilation schedule '" + s + "'");
}

std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::instance_norm_skip: return "instance_norm_skip";
    case NormMode::instance_norm: return "instance_norm";
    case NormMode::none: return "none";
  }
  return "?";
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "instance_norm_skip") return NormMode::instance_norm_skip;
  if (s == "instance_norm") return NormMode::instance_norm;
  if (s == "none") return NormMode::none;
  throw ConfigError("unknown norm_mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Parameter sets

template <typename T>
void ParameterSet<T>::for_each_trainable(const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
  if (input_norm) {
    fn("input_norm.gamma", input_norm->gamma);
    fn("input_norm.beta", input_norm->beta);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    fn(prefix + "conv.weights", layers[i].conv.weights);
    fn(prefix + "conv.bias", layers[i].conv.bias);
    if (layers[i].norm) {
      fn(prefix + "norm.gamma", layers[i].norm->gamma);
      fn(prefix + "norm.beta", layers[i].norm->beta);
    }
  }
}

template <typename T>
void ParameterSet<T>::for_each_trainable(
    const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const {
  const_cast<ParameterSet*>(this)->for_each_trainable(
      [&](const std::string& name, BasicTensor<T>& t) { fn(name, t); });
}

template <typename T>
void ParameterSet<T>::for_each_stored(const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
  for_each_trainable(fn);
  if (input_norm) {
    fn("input_norm.running_mean", input_norm->running_mean);
    fn("input_norm.running_var", input_norm->running_var);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].norm) continue;
    const std::string prefix = "layers." + std::to_string(i) + ".norm.";
    fn(prefix + "running_mean", layers[i].norm->running_mean);
    fn(prefix + "running_var", layers[i].norm->running_var);
  }
}

template <typename T>
void ParameterSet<T>::for_each_stored(
    const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const {
  const_cast<ParameterSet*>(this)->for_each_stored([&](const std::string& name, BasicTensor<T>& t) { fn(name, t); });
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out = *this;
  out.for_each_stored([](const std::string&, BasicTensor<T>& t) { t.fill(T(0)); });
  return out;
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;

// ---------------------------------------------------------------------------
// Construction and static analysis

namespace {

struct LayerSpec {
  std::int64_t in = 0;
  std::int64_t out = 0;
  int kernel = 0;
  int dilation = 1;
  bool norm = false;
  bool relu = true;
};

std::int64_t head_input_channels(const NetworkConfig& c) {
  return c.concat_enabled ? 1 + static_cast<std::int64_t>(c.num_dilated_layers) * c.kernels_per_layer
                          : c.kernels_per_layer;
}

std::vector<LayerSpec> layer_specs(const NetworkConfig& c) {
  std::vector<LayerSpec> specs;
  const auto dil = c.dilations();
  const bool norm = c.norm_mode != NormMode::none;
  std::int64_t in = 1;
  for (int d : dil) {
    specs.push_back({in, c.kernels_per_layer, 3, d, norm, true});
    in = c.kernels_per_layer;
  }
  in = head_input_channels(c);
  for (int w : c.head_widths) {
    specs.push_back({in, w, 1, 1, false, true});
    in = w;
  }
  specs.push_back({in, c.num_classes, 1, 1, false, false});
  return specs;
}

}  // namespace

Network build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Network net;
  net.config = config;
  net.seed = seed;
  Rng rng = Rng::stream(seed, "init");
  if (config.norm_mode != NormMode::none) net.params.input_norm = NormParams<float>::identity(1);
  for (const auto& s : layer_specs(config)) {
    Layer<float> layer;
    const std::int64_t fan_in = s.in * s.kernel * s.kernel;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    layer.conv.weights = Tensor({s.out, s.in, s.kernel, s.kernel}, 0.0f);
    for (auto& w : layer.conv.weights.data()) w = static_cast<float>(stddev * rng.normal());
    layer.conv.bias = Tensor({s.out}, 0.0f);
    layer.conv.dilation = s.dilation;
    if (s.norm) layer.norm = NormParams<float>::identity(s.out);
    layer.relu = s.relu;
    net.params.layers.push_back(std::move(layer));
  }
  return net;
}

std::int64_t param_count(const NetworkConfig& config) {
  config.validate();
  std::int64_t n = config.norm_mode != NormMode::none ? 2 : 0;
  for (const auto& s : layer_specs(config)) {
    n += s.out * s.in * s.kernel * s.kernel + s.out;
    if (s.norm) n += 2 * s.out;
  }
  return n;
}

std::int64_t param_count(const Network& net) {
  std::int64_t n = 0;
  net.params.for_each_trainable([&](const std::string&, const Tensor& t) { n += static_cast<std::int64_t>(t.size()); });
  return n;
}

std::int64_t stored_param_count(const NetworkConfig& config) {
  config.validate();
  std::int64_t normalized = config.norm_mode != NormMode::none ? 1 : 0;
  for (const auto& s : layer_specs(config)) {
    if (s.norm) normalized += s.out;
  }
  return param_count(config) + 2 * normalized;
}

std::int64_t receptive_field(const NetworkConfig& config) {
  config.validate();
  std::int64_t rf = 1;
  for (int d : config.dilations()) rf += 2 * static_cast<std::int64_t>(d);
  return rf;
}

std::vector<std::int64_t> reachable_offsets_1d(const std::vector<int>& dilations) {
  std::set<std::int64_t> cur{0};
  for (int d : dilations) {
    std::set<std::int64_t> next;
    for (auto o : cur) {
      next.insert(o - d);
      next.insert(o);
      next.insert(o + d);
    }
    cur = std::move(next);
  }
  return {cur.begin(), cur.end()};
}

CoverageReport sampling_coverage(const NetworkConfig& config) {
  config.validate();
  const auto dil = config.dilations();
  std::int64_t radius = 0;
  for (int d : dil) radius += d;
  const std::int64_t side = 2 * radius + 1;
  // Reachable 2-D offsets on a grid centred at (radius, radius).
  std::vector<std::uint8_t> cur(static_cast<std::size_t>(side * side), 0);
  cur[static_cast<std::size_t>(radius * side + radius)] = 1;
  CoverageReport report;
  std::int64_t r = 0;
  for (std::size_t l = 0; l < dil.size(); ++l) {
    const std::int64_t d = dil[l];
    std::vector<std::uint8_t> next(cur.size(), 0);
    for (std::int64_t y = radius - r; y <= radius + r; ++y) {
      for (std::int64_t x = radius - r; x <= radius + r; ++x) {
        if (!cur[static_cast<std::size_t>(y * side + x)]) continue;
        for (std::int64_t dy = -d; dy <= d; dy += d) {
          for (std::int64_t dx = -d; dx <= d; dx += d) {
            next[static_cast<std::size_t>((y + dy) * side + (x + dx))] = 1;
          }
        }
      }
    }
    cur = std::move(next);
    r += d;
    CoverageLevel level;
    level.depth = static_cast<int>(l + 1);
    level.dilation = static_cast<int>(d);
    level.extent = 2 * r + 1;
    for (auto v : cur) level.offsets += v;
    level.density = static_cast<double>(level.offsets) / static_cast<double>(level.extent * level.extent);
    // Gaps along the central row.
    std::int64_t prev = -1;
    for (std::int64_t x = radius - r; x <= radius + r; ++x) {
      if (!cur[static_cast<std::size_t>(radius * side + x)]) continue;
      if (prev >= 0) ++level.gap_histogram[x - prev];
      prev = x;
    }
    report.levels.push_back(std::move(level));
  }
  return report;
}

std::vector<LayerSummary> layer_table(const NetworkConfig& config) {
  config.validate();
  std::vector<LayerSummary> rows;
  if (config.norm_mode != NormMode::none) {
    rows.push_back({"input_norm", config.norm_mode == NormMode::instance_norm_skip ? "instnorm+skip" : "instnorm",
                    1, 1, 0, 0, 2, 4});
  }
  const auto specs = layer_specs(config);
  const std::size_t dilated = static_cast<std::size_t>(config.num_dilated_layers);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    LayerSummary row;
    row.name = "layers." + std::to_string(i);
    if (i < dilated) {
      row.kind = s.norm ? (config.norm_mode == NormMode::instance_norm_skip ? "conv3x3+instnorm+skip+relu"
                                                                           : "conv3x3+instnorm+relu")
                        : "conv3x3+relu";
    } else {
      row.kind = s.relu ? "conv1x1+relu" : "conv1x1+softmax";
    }
    row.in_channels = s.in;
    row.out_channels = s.out;
    row.kernel = s.kernel;
    row.dilation = s.dilation;
    row.params = s.out * s.in * s.kernel * s.kernel + s.out + (s.norm ? 2 * s.out : 0);
    row.stored = row.params + (s.norm ? 2 * s.out : 0);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> table2_configs() {
  std::vector<AblationRow> rows;
  const NetworkConfig proposed;
  auto row = [&](std::string name, double reported, auto&& edit, double alpha = 0.1) {
    NetworkConfig c = proposed;
    edit(c);
    rows.push_back({std::move(name), c, alpha, reported});
  };
  row("w/o dilated convolutions", 1.30, [](NetworkConfig& c) { c.schedule = DilationSchedule::ones; });
  row("w/o concatenation", 0.93, [](NetworkConfig& c) { c.concat_enabled = false; });
  row("w/o InstanceNorm", 1.29, [](NetworkConfig& c) { c.norm_mode = NormMode::none; });
  row("w/o InstanceNorm skip", 1.30, [](NetworkConfig& c) { c.norm_mode = NormMode::instance_norm; });
  row("16 kernels/layer", 0.47, [](NetworkConfig& c) { c.kernels_per_layer = 16; });
  row("Exponential dilation", 1.03, [](NetworkConfig& c) {
    c.schedule = DilationSchedule::exponential;
    c.num_dilated_layers = 8;
  });
  row("Purely supervised", 1.30, [](NetworkConfig&) {}, 0.0);
  row("9 dilated layers", 1.18, [](NetworkConfig& c) { c.num_dilated_layers = 9; });
  row("Proposed", 1.30, [](NetworkConfig&) {});
  row("64 kernels/layer", 4.23, [](NetworkConfig& c) { c.kernels_per_layer = 64; });
  return rows;
}

// ---------------------------------------------------------------------------
// Forward and backward

template <typename T>
ForwardResult<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& image, Mode mode, Rng& rng) {
  require_chw(image, "forward");
  if (image.dim(0) != 1) {
    throw ShapeError("forward: single-channel 1 x H x W image expected, got " + shape_to_string(image.shape()));
  }
  ensure_finite(image, "forward input");
  const auto& cfg = net.config;
  const auto& layers = net.params.layers;
  const std::size_t dilated = static_cast<std::size_t>(cfg.num_dilated_layers);
  if (layers.size() != dilated + cfg.head_widths.size() + 1) {
    throw ConfigError("forward: network layers do not match its config");
  }
  ForwardCache<T> c;
  c.mode = mode;
  c.input = image;
  switch (cfg.norm_mode) {
    case NormMode::instance_norm_skip:
      c.norm_stats.push_back(channel_stats(image));
      c.input_block = add(image, instance_norm_forward(image, *net.params.input_norm));
      break;
    case NormMode::instance_norm:
      c.norm_stats.push_back(channel_stats(image));
      c.input_block = instance_norm_forward(image, *net.params.input_norm);
      break;
    case NormMode::none:
      c.input_block = image;
      break;
  }
  const BasicTensor<T>* cur = &c.input_block;
  for (std::size_t l = 0; l < dilated; ++l) {
    const auto& layer = layers[l];
    c.conv_in.push_back(*cur);
    c.conv_out.push_back(conv2d_forward(*cur, layer.conv));
    if (layer.norm) {
      c.norm_stats.push_back(channel_stats(c.conv_out.back()));
      c.act.push_back(norm_skip_block_forward(c.conv_out.back(), *layer.norm, cfg.norm_mode));
    } else {
      c.act.push_back(relu_forward(c.conv_out.back()));
    }
    cur = &c.act.back();
  }
  if (cfg.concat_enabled) {
    std::vector<BasicTensor<T>> parts;
    parts.reserve(dilated + 1);
    parts.push_back(c.input_block);
    for (std::size_t l = 0; l < dilated; ++l) parts.push_back(c.act[l]);
    c.concat = concat_channels<T>(parts);
  } else {
    c.concat = c.act.back();
  }
  auto dropped = dropout_forward(c.concat, cfg.dropout_rate, mode, rng);
  c.dropout_keep = std::move(dropped.keep);
  BasicTensor<T> h = std::move(dropped.y);
  for (std::size_t l = dilated; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    c.conv_in.push_back(std::move(h));
    c.conv_out.push_back(conv2d_forward(c.conv_in.back(), layer.conv));
    if (layer.relu) {
      c.act.push_back(relu_forward(c.conv_out.back()));
      h = c.act.back();
    } else {
      c.act.push_back(c.conv_out.back());
    }
  }
  c.logits = c.conv_out.back();
  c.probs = softmax_channels(c.logits);
  ForwardResult<T> r;
  r.probs = c.probs;
  r.cache = std::move(c);
  return r;
}

template <typename T>
ParameterSet<T> backward_from_logits(const BasicNetwork<T>& net, const ForwardCache<T>& cache,
                                     const BasicTensor<T>& grad_logits) {
  if (grad_logits.shape() != cache.logits.shape()) {
    throw ShapeError("backward: gradient shape " + shape_to_string(grad_logits.shape()) + " does not match logits " +
                     shape_to_string(cache.logits.shape()));
  }
  const auto& cfg = net.config;
  const auto& layers = net.params.layers;
  const std::size_t dilated = static_cast<std::size_t>(cfg.num_dilated_layers);
  ParameterSet<T> grads = net.params.zeros_like();

  BasicTensor<T> g = grad_logits;
  for (std::size_t l = layers.size(); l-- > dilated;) {
    if (layers[l].relu) g = relu_backward(cache.act[l], g);
    auto cg = conv2d_backward(cache.conv_in[l], layers[l].conv, g);
    grads.layers[l].conv.weights = std::move(cg.grad_w);
    grads.layers[l].conv.bias = std::move(cg.grad_b);
    g = std::move(cg.grad_x);
  }
  g = dropout_backward(g, cache.dropout_keep, cache.mode == Mode::train ? cfg.dropout_rate : 0.0);

  std::vector<BasicTensor<T>> grad_act(dilated);
  BasicTensor<T> grad_input_block;
  if (cfg.concat_enabled) {
    std::vector<std::int64_t> channels{cache.input_block.dim(0)};
    for (std::size_t l = 0; l < dilated; ++l) channels.push_back(cache.act[l].dim(0));
    auto parts = split_channels(g, channels);
    grad_input_block = std::move(parts[0]);
    for (std::size_t l = 0; l < dilated; ++l) grad_act[l] = std::move(parts[l + 1]);
  } else {
    grad_act[dilated - 1] = std::move(g);
  }

  BasicTensor<T> carry;  // gradient flowing into act[l] from layer l + 1
  for (std::size_t l = dilated; l-- > 0;) {
    BasicTensor<T> ga;
    if (!grad_act[l].empty() && !carry.empty()) {
      ga = add(grad_act[l], carry);
    } else if (!grad_act[l].empty()) {
      ga = std::move(grad_act[l]);
    } else {
      ga = std::move(carry);
    }
    BasicTensor<T> gconv;
    if (layers[l].norm) {
      auto ng = norm_skip_block_backward(cache.conv_out[l], *layers[l].norm, cache.act[l], ga, cfg.norm_mode);
      grads.layers[l].norm->gamma = std::move(ng.grad_gamma);
      grads.layers[l].norm->beta = std::move(ng.grad_beta);
      gconv = std::move(ng.grad_x);
    } else {
      gconv = relu_backward(cache.act[l], ga);
    }
    auto cg = conv2d_backward(cache.conv_in[l], layers[l].conv, gconv);
    grads.layers[l].conv.weights = std::move(cg.grad_w);
    grads.layers[l].conv.bias = std::move(cg.grad_b);
    carry = std::move(cg.grad_x);
  }
  if (!grad_input_block.empty()) {
    grad_input_block = add(grad_input_block, carry);
  } else {
    grad_input_block = std::move(carry);
  }
  if (cfg.norm_mode != NormMode::none) {
    auto ng = instance_norm_backward(cache.input, *net.params.input_norm, grad_input_block);
    grads.input_norm->gamma = std::move(ng.grad_gamma);
    grads.input_norm->beta = std::move(ng.grad_beta);
  }
  return grads;
}

template <typename T>
ParameterSet<T> backward(const BasicNetwork<T>& net, const ForwardCache<T>& cache, const BasicTensor<T>& grad_probs) {
  return backward_from_logits(net, cache, softmax_channels_backward(cache.probs, grad_probs));
}

template <typename T>
std::vector<std::uint8_t> activation_pattern(const ForwardCache<T>& cache) {
  std::vector<std::uint8_t> bits;
  for (std::size_t l = 0; l + 1 < cache.act.size(); ++l) {
    for (T v : cache.act[l].data()) bits.push_back(v > T(0) ? 1 : 0);
  }
  for (auto k : cache.dropout_keep.data()) bits.push_back(k);
  return bits;
}

template ForwardResult<float> forward(const Network&, const Tensor&, Mode, Rng&);
template ForwardResult<double> forward(const NetworkD&, const TensorD&, Mode, Rng&);
template ParameterSet<float> backward_from_logits(const Network&, const ForwardCache<float>&, const Tensor&);
template ParameterSet<double> backward_from_logits(const NetworkD&, const ForwardCache<double>&, const TensorD&);
template ParameterSet<float> backward(const Network&, const ForwardCache<float>&, const Tensor&);
template ParameterSet<double> backward(const NetworkD&, const ForwardCache<double>&, const TensorD&);
template std::vector<std::uint8_t> activation_pattern(const ForwardCache<float>&);
template std::vector<std::uint8_t> activation_pattern(const ForwardCache<double>&);

void update_running_stats(Network& net, const ForwardCache<float>& cache, double momentum) {
  std::vector<NormParams<float>*> norms;
  if (net.params.input_norm) norms.push_back(&*net.params.input_norm);
  for (auto& l : net.params.layers) {
    if (l.norm) norms.push_back(&*l.norm);
  }
  if (norms.size() != cache.norm_stats.size()) {
    throw ShapeError("update_running_stats: cache does not belong to this network");
  }
  for (std::size_t k = 0; k < norms.size(); ++k) {
    auto& p = *norms[k];
    const auto& s = cache.norm_stats[k];
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      p.running_mean[c] = static_cast<float>(momentum * p.running_mean[c] + (1.0 - momentum) * s.mean[c]);
      p.running_var[c] = static_cast<float>(momentum * p.running_var[c] + (1.0 - momentum) * s.var[c]);
    }
  }
}

LabelMap argmax_labels(const Tensor& probs) {
  require_chw(probs, "argmax_labels");
  const std::int64_t ch = probs.dim(0);
  const std::size_t plane = static_cast<std::size_t>(probs.dim(1) * probs.dim(2));
  LabelMap out({probs.dim(1), probs.dim(2)}, 0);
  for (std::size_t px = 0; px < plane; ++px) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < ch; ++c) {
      if (probs[static_cast<std::size_t>(c) * plane + px] > probs[static_cast<std::size_t>(best) * plane + px]) best = c;
    }
    out[px] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'K'};
constexpr int kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network& net) {
  nlohmann::json header;
  header["format"] = "dfcn-checkpoint";
  header["version"] = kCheckpointVersion;
  header["config"] = net.config;
  header["seed"] = net.seed;
  std::vector<std::uint8_t> payload;
  nlohmann::json dir = nlohmann::json::array();
  net.params.for_each_stored([&](const std::string& name, const Tensor& t) {
    const auto bytes = encode_tensor(t);
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"bytes", bytes.size()}});
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  });
  header["tensors"] = dir;
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xFFu));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Network decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (len > bytes.size() - 12) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupted header: ") + e.what());
  }
  Network net;
  try {
    if (header.at("format") != "dfcn-checkpoint") throw FormatError("checkpoint: unknown format tag");
    if (header.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + header.at("version").dump());
    }
    const auto config = header.at("config").get<NetworkConfig>();
    net = build(config, header.at("seed").get<std::uint64_t>());
    const auto payload = bytes.subspan(12 + len);
    const auto& dir = header.at("tensors");
    std::size_t k = 0;
    net.params.for_each_stored([&](const std::string& name, Tensor& t) {
      if (k >= dir.size()) throw FormatError("checkpoint: missing tensor " + name);
      const auto& entry = dir[k++];
      if (entry.at("name").get<std::string>() != name) {
        throw FormatError("checkpoint: tensor directory out of order at " + name);
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset > payload.size()) throw FormatError("checkpoint: truncated payload at " + name);
      Tensor loaded = decode_tensor_f32(payload.subspan(offset));
      if (loaded.shape() != t.shape()) {
        throw FormatError("checkpoint: tensor " + name + " has shape " + shape_to_string(loaded.shape()) +
                          ", config implies " + shape_to_string(t.shape()));
      }
      t = std::move(loaded);
    });
    if (k != dir.size()) throw FormatError("checkpoint: unexpected extra tensors");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupted header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(net));
}

Network load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Network load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Network net = load_checkpoint(path);
  if (!(net.config == expected)) {
    throw ConfigMismatchError(path.string() + ": checkpoint config " + nlohmann::json(net.config).dump() +
                              " does not match expected " + nlohmann::json(expected).dump());
  }
  return net;
}

std::uint64_t parameter_hash(const Network& net) {
  std::uint64_t h = 14695981039346656037ull;
  net.params.for_each_stored([&](const std::string& name, const Tensor& t) {
    h = fnv1a64(name, h);
    const auto* p = reinterpret_cast<const char*>(t.raw());
    h = fnv1a64(std::string_view(p, t.size() * sizeof(float)), h);
  });
  return h;
}

}  // namespace dfcn
