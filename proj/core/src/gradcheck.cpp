#include "dfcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dfcn/loss_metrics.hpp"

namespace dfcn {

namespace {

/// Objective value plus the branch pattern it was evaluated on.
struct Eval {
  double value = 0.0;
  std::vector<std::uint8_t> pattern;
};

using Objective = std::function<Eval()>;

TensorD random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  TensorD t(s, 0.0);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Random values bounded away from zero, so ReLU kinks stay out of reach of the step.
TensorD signed_away_from_zero(const Shape& s, Rng& rng) {
  TensorD t(s, 0.0);
  for (auto& v : t.data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.5);
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::uint8_t> positive_bits(const TensorD& t) {
  std::vector<std::uint8_t> bits(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) bits[i] = t[i] > 0.0 ? 1 : 0;
  return bits;
}

/// Compares `analytic` with central differences of `f` over the entries of `param` (perturbed in place).
GradcheckEntry probe(const std::string& name, TensorD& param, const TensorD& analytic, const Objective& f,
                     const GradcheckOptions& o, std::int64_t max_coords, Rng& rng) {
  GradcheckEntry e;
  e.name = name;
  if (analytic.shape() != param.shape()) {
    e.pass = false;
    e.max_rel_error = INFINITY;
    return e;
  }
  std::vector<std::size_t> coords(param.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && coords.size() > static_cast<std::size_t>(max_coords)) {
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(static_cast<std::size_t>(max_coords));
    std::sort(coords.begin(), coords.end());
  }
  const auto base = f().pattern;
  for (auto i : coords) {
    const double saved = param[i];
    param[i] = saved + o.step;
    const Eval plus = f();
    param[i] = saved - o.step;
    const Eval minus = f();
    param[i] = saved;
    if (plus.pattern != base || minus.pattern != base) {
      ++e.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * o.step);
    const double err = relative_error(analytic[i], numeric, o.floor);
    if (err > e.max_rel_error) {
      e.max_rel_error = err;
      e.worst_analytic = analytic[i];
      e.worst_numeric = numeric;
    }
    ++e.checked;
  }
  e.pass = e.max_rel_error <= o.tolerance;
  return e;
}

void check_conv(GradcheckReport& report, int kernel, int dilation, const GradcheckOptions& o, Rng& rng) {
  const std::int64_t ci = 3, co = 4;
  TensorD x = random_tensor({ci, o.height, o.width}, rng);
  ConvParams<double> p{random_tensor({co, ci, kernel, kernel}, rng, 0.5), random_tensor({co}, rng, 0.5), dilation};
  const TensorD r = random_tensor({co, o.height, o.width}, rng);
  const auto g = conv2d_backward(x, p, r);
  const Objective f = [&] { return Eval{dot(r, conv2d_forward(x, p)), {}}; };
  const std::string tag = "conv" + std::to_string(kernel) + "x" + std::to_string(kernel) + "_d" + std::to_string(dilation);
  report.entries.push_back(probe(tag + ".x", x, g.grad_x, f, o, 0, rng));
  report.entries.push_back(probe(tag + ".weights", p.weights, g.grad_w, f, o, 0, rng));
  report.entries.push_back(probe(tag + ".bias", p.bias, g.grad_b, f, o, 0, rng));
}

NormParams<double> random_norm(std::int64_t c, Rng& rng) {
  auto p = NormParams<double>::identity(c);
  for (auto& v : p.gamma.data()) v = rng.uniform(0.5, 1.5);
  for (auto& v : p.beta.data()) v = rng.uniform(-0.5, 0.5);
  return p;
}

void check_instance_norm(GradcheckReport& report, const GradcheckOptions& o, Rng& rng) {
  const std::int64_t c = 3;
  TensorD x = random_tensor({c, o.height, o.width}, rng);
  auto p = random_norm(c, rng);
  const TensorD r = random_tensor({c, o.height, o.width}, rng);
  const auto g = instance_norm_backward(x, p, r);
  const Objective f = [&] { return Eval{dot(r, instance_norm_forward(x, p)), {}}; };
  report.entries.push_back(probe("instance_norm.x", x, g.grad_x, f, o, 0, rng));
  report.entries.push_back(probe("instance_norm.gamma", p.gamma, g.grad_gamma, f, o, 0, rng));
  report.entries.push_back(probe("instance_norm.beta", p.beta, g.grad_beta, f, o, 0, rng));
}

void check_norm_block(GradcheckReport& report, NormMode mode, const GradcheckOptions& o, Rng& rng) {
  const std::int64_t c = 3;
  TensorD x = random_tensor({c, o.height, o.width}, rng);
  auto p = random_norm(c, rng);
  const TensorD r = random_tensor({c, o.height, o.width}, rng);
  const TensorD y = norm_skip_block_forward(x, p, mode);
  const auto g = norm_skip_block_backward(x, p, y, r, mode);
  const Objective f = [&] {
    const TensorD out = norm_skip_block_forward(x, p, mode);
    return Eval{dot(r, out), positive_bits(out)};
  };
  const std::string tag = "norm_block[" + to_string(mode) + "]";
  report.entries.push_back(probe(tag + ".x", x, g.grad_x, f, o, 0, rng));
  if (mode != NormMode::none) {
    report.entries.push_back(probe(tag + ".gamma", p.gamma, g.grad_gamma, f, o, 0, rng));
    report.entries.push_back(probe(tag + ".beta", p.beta, g.grad_beta, f, o, 0, rng));
  }
}

void check_pointwise(GradcheckReport& report, const GradcheckOptions& o, Rng& rng) {
  const Shape s{3, o.height, o.width};
  {
    TensorD x = signed_away_from_zero(s, rng);
    const TensorD r = random_tensor(s, rng);
    const TensorD g = relu_backward(relu_forward(x), r);
    const Objective f = [&] { return Eval{dot(r, relu_forward(x)), positive_bits(x)}; };
    report.entries.push_back(probe("relu.x", x, g, f, o, 0, rng));
  }
  {
    TensorD x = random_tensor(s, rng);
    const TensorD r = random_tensor(s, rng);
    const double rate = 0.5;
    Rng draw(o.seed ^ 0xd5);
    const auto d = dropout_forward(x, rate, Mode::train, draw);
    const TensorD g = dropout_backward(r, d.keep, rate);
    const Objective f = [&] {
      Rng replay(o.seed ^ 0xd5);
      const auto out = dropout_forward(x, rate, Mode::train, replay);
      return Eval{dot(r, out.y), std::vector<std::uint8_t>(out.keep.data().begin(), out.keep.data().end())};
    };
    report.entries.push_back(probe("dropout.x", x, g, f, o, 0, rng));
  }
  {
    TensorD z = random_tensor({6, o.height, o.width}, rng, 2.0);
    const TensorD r = random_tensor(z.shape(), rng);
    const TensorD g = softmax_channels_backward(softmax_channels(z), r);
    const Objective f = [&] { return Eval{dot(r, softmax_channels(z)), {}}; };
    report.entries.push_back(probe("softmax.logits", z, g, f, o, 0, rng));
  }
  {
    std::vector<TensorD> parts{random_tensor({1, o.height, o.width}, rng), random_tensor({2, o.height, o.width}, rng)};
    const TensorD r = random_tensor({3, o.height, o.width}, rng);
    const std::vector<std::int64_t> channels{1, 2};
    const auto g = split_channels(r, channels);
    const Objective f = [&] { return Eval{dot(r, concat_channels<double>(parts)), {}}; };
    report.entries.push_back(probe("concat.part0", parts[0], g[0], f, o, 0, rng));
    report.entries.push_back(probe("concat.part1", parts[1], g[1], f, o, 0, rng));
  }
}

struct LossProblem {
  LabelMap labels;
  Mask roi;
  ClassWeights weights;
  LossConfig cfg;
};

LossProblem random_loss_problem(int classes, std::int64_t h, std::int64_t w, Rng& rng) {
  LossProblem p;
  p.labels = LabelMap({h, w}, kUnlabeled);
  p.roi = Mask({h, w}, 0);
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const double u = rng.uniform();
    if (u < 0.1) continue;  // outside the roi
    p.roi[i] = 1;
    if (u < 0.4) continue;  // unlabeled
    p.labels[i] = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(classes));
  for (auto& c : counts) c = 1 + static_cast<std::int64_t>(rng.below(50));
  p.weights = class_weights(counts);
  p.cfg.alpha = 0.1;
  return p;
}

void check_loss(GradcheckReport& report, const GradcheckOptions& o, Rng& rng) {
  const int classes = 6;
  const auto lp = random_loss_problem(classes, o.height, o.width, rng);
  TensorD z = random_tensor({classes, o.height, o.width}, rng);
  {
    // Moderate logits keep every probability well above the step size.
    TensorD probs = softmax_channels(random_tensor(z.shape(), rng, 0.5));
    const TensorD g = image_loss_backward(probs, lp.labels, lp.roi, lp.weights, lp.cfg);
    const Objective f = [&] { return Eval{image_loss(probs, lp.labels, lp.roi, lp.weights, lp.cfg).total, {}}; };
    report.entries.push_back(probe("loss.probs", probs, g, f, o, 0, rng));
  }
  {
    const TensorD g = image_loss_backward_logits(softmax_channels(z), lp.labels, lp.roi, lp.weights, lp.cfg);
    const Objective f = [&] {
      return Eval{image_loss(softmax_channels(z), lp.labels, lp.roi, lp.weights, lp.cfg).total, {}};
    };
    report.entries.push_back(probe("loss.logits", z, g, f, o, 0, rng));
  }
}

NetworkD perturbed_network(const NetworkConfig& config, std::uint64_t seed, Rng& rng) {
  NetworkD net = build(config, seed).cast<double>();
  // Halved weights keep activations near unit scale, which keeps the central-difference truncation error small.
  for (auto& layer : net.params.layers) {
    for (auto& v : layer.conv.weights.data()) v *= 0.5;
    for (auto& v : layer.conv.bias.data()) v = 0.1 * rng.normal();
    if (layer.norm) {
      for (auto& v : layer.norm->gamma.data()) v = rng.uniform(0.5, 1.5);
      for (auto& v : layer.norm->beta.data()) v = rng.uniform(-0.3, 0.3);
    }
  }
  // A damped classifier keeps the probabilities away from the logarithm clamp.
  for (auto& v : net.params.layers.back().conv.weights.data()) v *= 0.5;
  if (net.params.input_norm) {
    for (auto& v : net.params.input_norm->gamma.data()) v = rng.uniform(0.5, 1.5);
    for (auto& v : net.params.input_norm->beta.data()) v = rng.uniform(-0.3, 0.3);
  }
  return net;
}

void check_network_mode(GradcheckReport& report, const NetworkConfig& config, Mode mode, const GradcheckOptions& o,
                        Rng& rng) {
  NetworkD net = perturbed_network(config, o.seed, rng);
  const TensorD image = random_tensor({1, o.height, o.width}, rng);
  const auto lp = random_loss_problem(config.num_classes, o.height, o.width, rng);
  const std::uint64_t dropout_seed = o.seed ^ 0x5eed;
  auto run = [&] {
    Rng dropout(dropout_seed);
    return forward(net, image, mode, dropout);
  };
  const auto base = run();
  const TensorD grad_probs = image_loss_backward(base.probs, lp.labels, lp.roi, lp.weights, lp.cfg);
  const ParameterSet<double> analytic = backward(net, base.cache, grad_probs);
  const ParameterSet<double> fused = backward_from_logits(
      net, base.cache, image_loss_backward_logits(base.probs, lp.labels, lp.roi, lp.weights, lp.cfg));
  const Objective f = [&] {
    const auto r = run();
    return Eval{image_loss(r.probs, lp.labels, lp.roi, lp.weights, lp.cfg).total, activation_pattern(r.cache)};
  };
  double min_prob = 1.0;
  for (double v : base.probs.data()) min_prob = std::min(min_prob, v);
  const bool clamp_active = min_prob < 10.0 * kProbClamp;
  std::vector<std::pair<std::string, const TensorD*>> grads, fused_grads;
  analytic.for_each_trainable([&](const std::string& n, const TensorD& t) { grads.emplace_back(n, &t); });
  fused.for_each_trainable([&](const std::string& n, const TensorD& t) { fused_grads.emplace_back(n, &t); });
  const std::string tag = std::string("network[") + (mode == Mode::train ? "train" : "eval") + "].";
  std::size_t k = 0;
  net.params.for_each_trainable([&](const std::string& name, TensorD& param) {
    report.entries.push_back(probe(tag + name, param, *grads[k].second, f, o, o.network_coords_per_tensor, rng));
    // The fused logits gradient must agree with the softmax-Jacobian route.
    GradcheckEntry agree;
    agree.name = tag + name + " (fused)";
    if (clamp_active) {
      // The fused route differentiates the unclamped loss; it only agrees away from the clamp.
      agree.skipped = static_cast<std::int64_t>(param.size());
      report.entries.push_back(agree);
      ++k;
      return;
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      agree.max_rel_error = std::max(agree.max_rel_error,
                                     relative_error((*fused_grads[k].second)[i], (*grads[k].second)[i], o.floor));
    }
    agree.checked = static_cast<std::int64_t>(param.size());
    agree.pass = agree.max_rel_error <= o.tolerance;
    report.entries.push_back(agree);
    ++k;
  });
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::pass() const {
  std::int64_t checked = 0, skipped = 0;
  for (const auto& e : entries) {
    if (!e.pass) return false;
    checked += e.checked;
    skipped += e.skipped;
  }
  // Kinks may hide individual coordinates but never a substantial share of the suite.
  return checked > 0 && skipped * 10 <= checked + skipped;
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradcheckReport gradcheck_layers(const GradcheckOptions& o) {
  GradcheckReport report;
  Rng rng = Rng::stream(o.seed, "gradcheck.layers");
  for (int d : {1, 2, 3, 5}) check_conv(report, 3, d, o, rng);
  check_conv(report, 1, 1, o, rng);
  check_instance_norm(report, o, rng);
  for (auto mode : {NormMode::instance_norm_skip, NormMode::instance_norm, NormMode::none}) {
    check_norm_block(report, mode, o, rng);
  }
  check_pointwise(report, o, rng);
  check_loss(report, o, rng);
  return report;
}

GradcheckReport gradcheck_network(const NetworkConfig& config, const GradcheckOptions& o) {
  config.validate();
  GradcheckReport report;
  Rng rng = Rng::stream(o.seed, "gradcheck.network");
  check_network_mode(report, config, Mode::eval, o, rng);
  check_network_mode(report, config, Mode::train, o, rng);
  return report;
}

GradcheckReport gradcheck_all(const NetworkConfig& config, const GradcheckOptions& o) {
  GradcheckReport report = gradcheck_layers(o);
  auto net = gradcheck_network(config, o);
  report.entries.insert(report.entries.end(), net.entries.begin(), net.entries.end());
  return report;
}

NetworkConfig gradcheck_default_config() {
  NetworkConfig c;
  c.kernels_per_layer = 4;
  c.num_dilated_layers = 4;
  c.head_widths = {8, 6};
  c.num_classes = 6;
  return c;
}

}  // namespace dfcn
