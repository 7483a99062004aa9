#include "pnr/substrate_checks.hpp"

#include <cmath>
#include <functional>
#include <memory>

#include "pnr/unet.hpp"

namespace pnr {

using nn::Fragment;
using nn::GradcheckOptions;
using nn::ParamStore;
using T = double;

bool SubstrateSuite::passed() const {
  for (const auto& c : checks)
    if (!c.report.passed()) return false;
  return !checks.empty();
}

double SubstrateSuite::worst() const {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.report.worst());
  return w;
}

std::string SubstrateSuite::format() const {
  std::string out;
  for (const auto& c : checks) {
    out += c.name + (c.report.passed() ? "  ok" : "  FAIL") + "\n";
    out += nn::format_report(c.report);
  }
  return out;
}

namespace {

Tensor<T> random_tensor(const Shape& s, Rng& rng, double away_from_zero = 0.0) {
  Tensor<T> t(s);
  for (auto& v : t.span()) {
    v = rng.uniform(-1.0, 1.0);
    if (away_from_zero > 0.0) v += v < 0 ? -away_from_zero : away_from_zero;
  }
  return t;
}

void randomize(ParamStore<T>& store, Rng& rng, double scale = 0.5) {
  for (std::size_t i = 0; i < store.tensor_count(); ++i)
    for (auto& v : store[i].value) v = scale * rng.uniform(-1.0, 1.0);
}

double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "gradcheck functional");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// L = <forward(x), R> for a random R of the output shape.
struct Harness {
  std::function<Tensor<T>(const Tensor<T>&, bool)> forward;
  std::function<Tensor<T>(const Tensor<T>&)> backward;
};

Fragment make_fragment(Harness h, const Tensor<T>& input, Rng& rng) {
  const Shape out_shape = h.forward(input, false).shape();
  auto weights = std::make_shared<Tensor<T>>(random_tensor(out_shape, rng));
  Fragment f;
  f.loss = [h, weights](const Tensor<T>& x) { return dot(h.forward(x, false), *weights); };
  f.backward = [h, weights](const Tensor<T>& x) {
    h.forward(x, true);
    return h.backward(*weights);
  };
  return f;
}

class Suite {
 public:
  Suite(std::uint64_t seed, double tol) : rng_(seed), tol_(tol) {}

  void add(const std::string& name, ParamStore<T>& store, const Harness& h, const Tensor<T>& input,
           double tol_override = 0.0) {
    GradcheckOptions opt;
    opt.tolerance = tol_override > 0.0 ? tol_override : tol_;
    opt.seed = rng_.bits();
    const Fragment f = make_fragment(h, input, rng_);
    out_.checks.push_back({name, nn::gradcheck(store, f, input, opt)});
  }

  Rng& rng() { return rng_; }
  SubstrateSuite take() { return std::move(out_); }

 private:
  Rng rng_;
  double tol_;
  SubstrateSuite out_;
};

void conv_checks(Suite& s) {
  struct Case {
    int k, stride;
  };
  for (Case c : {Case{1, 1}, Case{3, 1}, Case{3, 2}, Case{5, 1}, Case{5, 2}}) {
    ParamStore<T> store;
    auto conv = std::make_shared<nn::Conv2d<T>>(store, "conv", nn::ConvGeometry{2, 3, c.k, c.stride});
    randomize(store, s.rng());
    const Tensor<T> x = random_tensor(Shape{2, 2, 7, 6}, s.rng());
    Harness h{[conv](const Tensor<T>& in, bool cache) { return conv->forward(in, cache); },
              [conv](const Tensor<T>& g) { return conv->backward(g); }};
    s.add("conv2d k=" + std::to_string(c.k) + " stride=" + std::to_string(c.stride), store, h, x);
  }
  // a dense layer is a 1x1 conv on a 1x1 image
  ParamStore<T> store;
  auto lin = std::make_shared<nn::Conv2d<T>>(store, "linear", nn::ConvGeometry{5, 4, 1, 1});
  randomize(store, s.rng());
  const Tensor<T> x = random_tensor(Shape{3, 5, 1, 1}, s.rng());
  Harness h{[lin](const Tensor<T>& in, bool cache) { return lin->forward(in, cache); },
            [lin](const Tensor<T>& g) { return lin->backward(g); }};
  s.add("linear", store, h, x, 1e-8);
}

void pointwise_checks(Suite& s) {
  ParamStore<T> none;
  const auto stateless = [&](const std::string& name, std::function<Tensor<T>(const Tensor<T>&)> fwd,
                             std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)> bwd, const Tensor<T>& x) {
    auto last = std::make_shared<Tensor<T>>();
    Harness h{[fwd, last](const Tensor<T>& in, bool cache) {
                if (cache) *last = in;
                return fwd(in);
              },
              [bwd, last](const Tensor<T>& g) { return bwd(*last, g); }};
    s.add(name, none, h, x);
  };

  stateless("upsample_nearest", nn::upsample_nearest_forward<T>,
            [](const Tensor<T>&, const Tensor<T>& g) { return nn::upsample_nearest_backward<T>(g); },
            random_tensor(Shape{2, 2, 3, 4}, s.rng()));
  stateless("avg_pool2 (odd size)", nn::avg_pool2_forward<T>,
            [](const Tensor<T>& x, const Tensor<T>& g) { return nn::avg_pool2_backward<T>(g, x.shape()); },
            random_tensor(Shape{2, 2, 5, 7}, s.rng()));
  stateless("silu", nn::silu_forward<T>, nn::silu_backward<T>, random_tensor(Shape{2, 3, 4, 5}, s.rng()));
  stateless(
      "leaky_relu", [](const Tensor<T>& x) { return nn::leaky_relu_forward<T>(x, 0.2); },
      [](const Tensor<T>& x, const Tensor<T>& g) { return nn::leaky_relu_backward<T>(x, g, 0.2); },
      random_tensor(Shape{2, 3, 4, 5}, s.rng(), 0.05));
  stateless(
      "reflect_pad", [](const Tensor<T>& x) { return nn::reflect_pad_forward<T>(x, 8, 8); },
      [](const Tensor<T>& x, const Tensor<T>& g) { return nn::reflect_pad_backward<T>(g, x.shape()); },
      random_tensor(Shape{1, 2, 5, 6}, s.rng()));
  stateless(
      "crop", [](const Tensor<T>& x) { return nn::crop_forward<T>(x, 3, 4); },
      [](const Tensor<T>& x, const Tensor<T>& g) { return nn::crop_backward<T>(g, x.shape()); },
      random_tensor(Shape{1, 2, 5, 6}, s.rng()));
  auto other = std::make_shared<Tensor<T>>(random_tensor(Shape{2, 1, 3, 3}, s.rng()));
  stateless(
      "concat_channels", [other](const Tensor<T>& x) { return nn::concat_channels<T>(x, *other); },
      [](const Tensor<T>& x, const Tensor<T>& g) { return nn::split_channels<T>(g, x.shape().c).first; },
      random_tensor(Shape{2, 2, 3, 3}, s.rng()));
}

void block_checks(Suite& s) {
  struct Case {
    const char* label;
    int in, out;
    nn::Resample r;
  };
  for (Case c : {Case{"res_block none", 3, 3, nn::Resample::none}, Case{"res_block none 3->4", 3, 4, nn::Resample::none},
                 Case{"res_block down 3->4", 3, 4, nn::Resample::down},
                 Case{"res_block up 4->2", 4, 2, nn::Resample::up}}) {
    ParamStore<T> store;
    auto block = std::make_shared<nn::ResBlock<T>>(store, "block", c.in, c.out, c.r, s.rng());
    randomize(store, s.rng());
    const Tensor<T> x = random_tensor(Shape{2, c.in, 5, 6}, s.rng());
    Harness h{[block](const Tensor<T>& in, bool cache) { return block->forward(in, cache); },
              [block](const Tensor<T>& g) { return block->backward(g); }};
    s.add(c.label, store, h, x);
  }
}

void unet_checks(Suite& s) {
  {
    auto net = std::make_shared<InitPredictor<T>>(1, 2, 1, s.rng().bits());
    randomize(net->net().params(), s.rng(), 0.4);
    const Tensor<T> y = random_tensor(Shape{1, 1, 9, 11}, s.rng());
    Harness h{[net](const Tensor<T>& in, bool cache) { return net->forward(in, cache); },
              [net](const Tensor<T>& g) { return net->backward(g); }};
    s.add("tiny predictor U-Net 9x11", net->net().params(), h, y);
  }
  {
    auto net = std::make_shared<Denoiser<T>>(1, 2, 1, s.rng().bits());
    randomize(net->net().params(), s.rng(), 0.4);
    auto y = std::make_shared<Tensor<T>>(random_tensor(Shape{2, 1, 7, 10}, s.rng()));
    auto levels = std::make_shared<std::vector<double>>(std::vector<double>{0.3, 0.8});
    const Tensor<T> z = random_tensor(Shape{2, 1, 7, 10}, s.rng());
    Harness h{[net, y, levels](const Tensor<T>& in, bool cache) { return net->forward(in, *levels, *y, cache); },
              [net](const Tensor<T>& g) { return net->backward(g); }};
    s.add("tiny denoiser U-Net 7x10", net->net().params(), h, z);
  }
}

}  // namespace

SubstrateSuite run_substrate_checks(std::uint64_t seed, double tolerance) {
  Suite s(seed, tolerance);
  conv_checks(s);
  pointwise_checks(s);
  block_checks(s);
  unet_checks(s);
  return s.take();
}

}  // namespace pnr
