#include "sage3d/gradsuite.hpp"

#include "sage3d/loss.hpp"
#include "sage3d/network.hpp"
#include "sage3d/optim.hpp"
#include "sage3d/random.hpp"

namespace sage3d {

namespace {

constexpr double kBlockTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

class Source {
 public:
  explicit Source(std::uint64_t seed) : rng_(seed) {}

  ag::Tensor tensor(ag::Shape shape, double scale = 1.0, bool param = true) {
    std::vector<double> v(ag::shape_size(shape));
    for (double& x : v) x = uniform(rng_, -scale, scale);
    return param ? track(ag::Tensor::parameter(std::move(shape), std::move(v)))
                 : ag::Tensor::constant(std::move(shape), std::move(v));
  }
  net::Linear linear(std::size_t in, std::size_t out) { return {tensor({in, out}, 0.7), tensor({out}, 0.2)}; }
  net::Mlp2 mlp(std::size_t in, std::size_t hidden, std::size_t out) {
    return {linear(in, hidden), linear(hidden, out)};
  }
  std::vector<Vec3> points(std::size_t n) {
    std::vector<Vec3> out(n);
    for (auto& p : out) p = {uniform(rng_, -1, 1), uniform(rng_, -1, 1), uniform(rng_, -1, 1)};
    return out;
  }
  double real(double lo, double hi) { return uniform(rng_, lo, hi); }

  // Parameters created since the last call.
  std::vector<ag::Tensor> take() { return std::exchange(params_, {}); }

 private:
  ag::Tensor track(ag::Tensor t) {
    params_.push_back(t);
    return t;
  }
  Rng rng_;
  std::vector<ag::Tensor> params_;
};

// Distinct fixed weights so every output element matters.
ag::Tensor probe(const ag::Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
  return ag::sum_all(ag::mul(y, ag::Tensor::constant(y.shape(), std::move(w))));
}

GradCheckResult check(const std::string& name, const std::function<ag::Tensor()>& f,
                      std::vector<ag::Tensor> params, double tol) {
  std::size_t entries = 0;
  for (const auto& p : params) entries += p.size();
  return {name, grad_check(f, std::move(params)), tol, entries};
}

LabelSet random_labels(Source& s, std::size_t n) {
  LabelSet l;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = s.real(0.0, 0.12);
    l.nearest_dist.push_back(d);
    l.soft.push_back(std::exp(-d / 0.05));
    l.mask.push_back(d <= 0.05 ? 1 : 0);
    l.offsets.push_back({s.real(-0.05, 0.05), s.real(-0.05, 0.05), s.real(-0.05, 0.05)});
  }
  return l;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  Source s(seed);

  {
    const ag::Tensor x = s.tensor({5, 4}, 1.0, false);
    const net::Linear l = s.linear(4, 3);
    out.push_back(check("linear", [&] { return probe(l(x)); }, s.take(), 1e-9));
  }

  // 4-d position encoding.
  const std::size_t q = 3, k = 4, c = 4;
  const auto centers_xyz = s.points(q);
  const auto source_xyz = s.points(8);
  const NeighborIndex nb = knn(centers_xyz, source_xyz, k);
  const ag::Tensor rel = net::relative_positions_4d(centers_xyz, source_xyz, nb);
  {
    const net::Mlp2 theta = s.mlp(4, c, c);
    out.push_back(check("position_encoding", [&] { return probe(net::position_encoding_4d(rel, theta)); },
                        s.take(), kBlockTolerance));
  }

  // Vector attention with and without the label prior.
  {
    net::AttentionParams att{s.mlp(4, c, c), s.linear(c, c), s.linear(c, c), s.linear(c, c), s.mlp(c, c, c)};
    const ag::Tensor features = s.tensor({8, c});
    auto params = s.take();
    const std::vector<std::size_t> picked{0, 3, 5};
    auto block = [&](bool guided, const std::vector<double>& labels) {
      const ag::Tensor delta = net::position_encoding_4d(rel, att.theta);
      const ag::Tensor ctr = ag::gather_rows(features, picked);
      const ag::Tensor nbr = ag::gather_rows(features, nb.indices);
      return probe(guided ? net::soft_guided_attention(ctr, nbr, delta, att, k, labels, Mode::Train, 0.01)
                          : net::vector_attention(ctr, nbr, delta, att, k));
    };
    out.push_back(check("vector_attention", [&] { return block(false, {}); }, params, kBlockTolerance));
    std::vector<double> labels(q * k);
    for (double& y : labels) y = s.real(0.0, 1.0);
    out.push_back(check("soft_guided_attention", [&] { return block(true, labels); }, params, kBlockTolerance));
  }

  // CentroidGNN, learned confidences included.
  {
    net::GnnParams g;
    g.confidence = s.linear(c, 1);
    g.message = s.mlp(2 * c + 1, c, c);
    g.score = s.linear(2 * c + 1, 1);
    g.psi = s.tensor({c, c}, 0.7);
    g.alpha = s.tensor({1}, 1.0);
    const ag::Tensor features = s.tensor({8, c});
    out.push_back(check("centroid_gnn", [&] { return probe(net::centroid_gnn(source_xyz, features, 4, g).features); },
                        s.take(), kBlockTolerance));
  }

  // Interpolation plus skip MLP.
  {
    const net::FeaturePropagationParams fp{s.linear(2 * c, 5), s.linear(5, 5)};
    const ag::Tensor coarse = s.tensor({q, c});
    const ag::Tensor skip = s.tensor({8, c});
    out.push_back(check("feature_propagation",
                        [&] { return probe(net::feature_propagation(source_xyz, centers_xyz, coarse, skip, fp, 1e-8)); },
                        s.take(), kBlockTolerance));
  }

  {
    const net::HeadParams h{s.mlp(6, 4, 1), s.mlp(6, 4, 3)};
    const ag::Tensor features = s.tensor({7, 6});
    out.push_back(check("heads",
                        [&] {
                          const auto o = net::heads(features, h);
                          return ag::add(probe(o.logits), probe(o.offsets));
                        },
                        s.take(), kBlockTolerance));
  }

  // Focal and offset terms.
  {
    const LossConfig cfg;
    const LabelSet labels = random_labels(s, 12);
    const ag::Tensor logits = s.tensor({12, 1}, 3.0);
    const ag::Tensor offsets = s.tensor({12, 3}, 1.5);
    auto params = s.take();
    out.push_back(check("focal_distance_loss", [&] { return focal_distance_loss(logits, labels, cfg); }, {logits},
                        kBlockTolerance));
    out.push_back(check("offset_loss", [&] { return offset_loss(offsets, labels, cfg); }, {offsets},
                        kBlockTolerance));
    out.push_back(check("total_loss", [&] { return total_loss(logits, offsets, labels, cfg); }, params,
                        kBlockTolerance));
  }

  // Whole tiny model in train mode through the training loss.
  {
    Model model(ModelConfig::tiny(), seed + 1);
    auto [cloud, wf] = synth_roof(RoofSpec{}, seed + 2);
    cloud = random_subsample(cloud, model.config().input_points, seed + 3);
    ForwardOptions opts;
    opts.mode = Mode::Train;
    opts.seed = seed + 4;
    const LossConfig cfg;
    std::vector<ag::Tensor> params;
    for (const auto& e : model.parameters().entries()) params.push_back(e.tensor);
    out.push_back(check("tiny_model",
                        [&] {
                          const ForwardResult r = model.forward(cloud, &wf, opts);
                          return total_loss(r.logits, r.offsets, *r.levels[0].labels, cfg);
                        },
                        params, kModelTolerance));
  }
  return out;
}

}  // namespace sage3d
