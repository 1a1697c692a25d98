#include "sage3d/network.hpp"

#include <algorithm>
#include <cmath>

#include "sage3d/errors.hpp"
#include "sage3d/random.hpp"

namespace sage3d {

// ---------------------------------------------------------------------------
// ModelConfig

std::array<std::size_t, 5> ModelConfig::level_sizes() const {
  std::array<std::size_t, 5> sizes{};
  sizes[0] = input_points;
  for (std::size_t l = 0; l < 4; ++l) sizes[l + 1] = std::max<std::size_t>(1, sizes[l] / factors[l]);
  return sizes;
}

void ModelConfig::validate() const {
  if (input_points == 0) throw InvalidArgument("model: input_points must be positive");
  for (std::size_t f : factors) {
    if (f == 0) throw InvalidArgument("model: downsample factors must be positive");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw InvalidArgument("model: widths must be positive");
  }
  if (msg_k.empty()) throw InvalidArgument("model: at least one grouping scale is needed");
  for (std::size_t k : msg_k) {
    if (k == 0) throw InvalidArgument("model: neighbourhood sizes must be positive");
  }
  if (sa4_k == 0 || gnn_k == 0) throw InvalidArgument("model: neighbourhood sizes must be positive");
  if (decoder_width == 0 || head_hidden == 0) throw InvalidArgument("model: decoder widths must be positive");
  if (!(guide_eps > 0.0) || !(fp_eps > 0.0) || !(label_d_thresh > 0.0)) {
    throw InvalidArgument("model: eps values and label threshold must be positive");
  }
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_points = 32;
  c.msg_k = {4, 8};
  c.sa4_k = 4;
  c.gnn_k = 4;
  c.widths = {8, 8, 16, 16};
  c.decoder_width = 16;
  c.head_hidden = 8;
  return c;
}

namespace net {

namespace {

std::vector<std::size_t> repeat_each(std::size_t count, std::size_t times) {
  std::vector<std::size_t> out(count * times);
  for (std::size_t i = 0; i < count; ++i) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * times), times, i);
  }
  return out;
}

void check_grouped(const ag::Tensor& centers, const ag::Tensor& rows, std::size_t group,
                   const char* what) {
  if (group == 0) throw InvalidArgument(std::string(what) + ": neighbourhood size K must be positive");
  if (rows.rows() != centers.rows() * group) {
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(centers.rows() * group) +
                          " neighbour rows, got " + std::to_string(rows.rows()));
  }
}

}  // namespace

ag::Tensor Linear::operator()(const ag::Tensor& x) const {
  return ag::add_bias(ag::matmul(x, weight), bias);
}

ag::Tensor Mlp2::operator()(const ag::Tensor& x) const { return second(ag::relu(first(x))); }

ag::Tensor relative_positions_4d(std::span<const Vec3> centers, std::span<const Vec3> source,
                                 const NeighborIndex& nb) {
  std::vector<double> rows(nb.queries * nb.k * 4);
  for (std::size_t q = 0; q < nb.queries; ++q) {
    for (std::size_t j = 0; j < nb.k; ++j) {
      const Vec3& pi = centers[q];
      const Vec3& pj = source[nb.index(q, j)];
      double* r = rows.data() + (q * nb.k + j) * 4;
      r[0] = pi[0] - pj[0];
      r[1] = pi[1] - pj[1];
      r[2] = pi[2] - pj[2];
      r[3] = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    }
  }
  return ag::Tensor::constant({nb.queries * nb.k, 4}, std::move(rows));
}

ag::Tensor position_encoding_4d(const ag::Tensor& relative4, const Mlp2& theta) {
  if (relative4.cols() != 4) throw InvalidArgument("position_encoding_4d: expects 4 input columns");
  return theta(relative4);
}

ag::Tensor attention_weights(const ag::Tensor& q, const ag::Tensor& k, const ag::Tensor& delta,
                             const Mlp2& phi, std::size_t group, const ag::Tensor* log_prior) {
  check_grouped(q, k, group, "attention");
  const std::size_t centers = q.rows();
  const std::size_t width = q.cols();
  const auto rep = repeat_each(centers, group);
  ag::Tensor logits = phi(ag::add(ag::sub(ag::gather_rows(q, rep), k), delta));
  if (log_prior != nullptr) logits = ag::add(logits, ag::repeat_cols(*log_prior, width));
  return ag::softmax(ag::reshape(logits, {centers, group, width}), 1);
}

ag::Tensor attend(const ag::Tensor& q, const ag::Tensor& k, const ag::Tensor& v,
                  const ag::Tensor& delta, const Mlp2& phi, std::size_t group,
                  const ag::Tensor* log_prior) {
  const ag::Tensor weights = attention_weights(q, k, delta, phi, group, log_prior);
  const ag::Tensor values = ag::reshape(ag::add(v, delta), weights.shape());
  return ag::sum(ag::mul(weights, values), 1);
}

ag::Tensor vector_attention(const ag::Tensor& centers, const ag::Tensor& neighbours,
                            const ag::Tensor& delta, const AttentionParams& params,
                            std::size_t group) {
  check_grouped(centers, neighbours, group, "vector_attention");
  return attend(params.query(centers), params.key(neighbours), params.value(neighbours), delta,
                params.phi, group);
}

ag::Tensor soft_guided_attention(const ag::Tensor& centers, const ag::Tensor& neighbours,
                                 const ag::Tensor& delta, const AttentionParams& params,
                                 std::size_t group, std::span<const double> labels, Mode mode,
                                 double eps) {
  if (mode == Mode::Inference) return vector_attention(centers, neighbours, delta, params, group);
  check_grouped(centers, neighbours, group, "soft_guided_attention");
  if (labels.size() != neighbours.rows()) {
    throw InvalidState("soft_guided_attention: train mode needs one soft label per neighbour");
  }
  std::vector<double> prior(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) prior[i] = std::log(labels[i] + eps);
  const ag::Tensor log_prior = ag::Tensor::constant({labels.size(), 1}, std::move(prior));
  return attend(params.query(centers), params.key(neighbours), params.value(neighbours), delta,
                params.phi, group, &log_prior);
}

GnnOutput centroid_gnn(std::span<const Vec3> coords, const ag::Tensor& features, std::size_t k,
                       const GnnParams& params) {
  return centroid_gnn(coords, features, ag::sigmoid(params.confidence(features)), k, params);
}

GnnOutput centroid_gnn(std::span<const Vec3> coords, const ag::Tensor& features,
                       const ag::Tensor& confidence, std::size_t k, const GnnParams& params) {
  if (k == 0) throw InvalidArgument("centroid_gnn: K must be positive");
  const std::size_t n = coords.size();
  if (features.rows() != n || confidence.rows() != n || confidence.cols() != 1) {
    throw InvalidArgument("centroid_gnn: features/confidence do not match the coordinates");
  }
  const std::size_t group = std::min(k, n);
  const std::size_t width = features.cols();
  const NeighborIndex nb = knn(coords, coords, group);
  const auto rep = repeat_each(n, group);

  const ag::Tensor fi = ag::gather_rows(features, rep);
  const ag::Tensor fj = ag::gather_rows(features, nb.indices);
  const ag::Tensor dist = ag::Tensor::constant({n * group, 1}, nb.distances);
  const ag::Tensor pair = ag::concat({fi, fj, dist}, -1);

  const ag::Tensor messages = ag::relu(params.message(pair));
  const ag::Tensor attention =
      ag::softmax(ag::reshape(params.score(pair), {n, group}), 1);
  const ag::Tensor ci = ag::gather_rows(confidence, rep);
  const ag::Tensor cj = ag::gather_rows(confidence, nb.indices);
  const ag::Tensor boost = ag::reshape(ag::add_scalar(ag::mul(ci, cj), 1.0), {n, group});
  const ag::Tensor boosted = ag::mul(attention, boost);

  const ag::Tensor weighted =
      ag::mul(ag::repeat_cols(ag::reshape(boosted, {n * group, 1}), width), messages);
  const ag::Tensor aggregate = ag::sum(ag::reshape(weighted, {n, group, width}), 1);
  const ag::Tensor excitation = ag::relu(ag::matmul(aggregate, params.psi));

  const ag::Tensor gate =
      ag::matmul(ag::Tensor::full({n, 1}, 1.0), ag::reshape(ag::sigmoid(params.alpha), {1, 1}));
  const ag::Tensor out = ag::add(features, ag::mul(ag::repeat_cols(gate, width), excitation));
  return {out, confidence, attention, boosted};
}

ag::Tensor interpolate_features(std::span<const Vec3> fine, std::span<const Vec3> coarse,
                                const ag::Tensor& coarse_features, double eps) {
  if (coarse.empty()) throw InvalidState("feature propagation from an empty level");
  if (coarse_features.rows() != coarse.size()) {
    throw InvalidArgument("interpolate_features: feature rows do not match coarse points");
  }
  const std::size_t group = std::min<std::size_t>(3, coarse.size());
  const std::size_t width = coarse_features.cols();
  const NeighborIndex nb = knn(fine, coarse, group);
  std::vector<double> weights(fine.size() * group * width);
  for (std::size_t q = 0; q < fine.size(); ++q) {
    double total = 0.0;
    std::array<double, 3> w{};
    for (std::size_t j = 0; j < group; ++j) {
      const double d = nb.distance(q, j);
      w[j] = 1.0 / (d * d + eps);
      total += w[j];
    }
    for (std::size_t j = 0; j < group; ++j) {
      std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>((q * group + j) * width), width,
                  w[j] / total);
    }
  }
  const ag::Tensor gathered = ag::gather_rows(coarse_features, nb.indices);
  const ag::Tensor scaled =
      ag::mul(gathered, ag::Tensor::constant({fine.size() * group, width}, std::move(weights)));
  return ag::sum(ag::reshape(scaled, {fine.size(), group, width}), 1);
}

ag::Tensor feature_propagation(std::span<const Vec3> fine, std::span<const Vec3> coarse,
                               const ag::Tensor& coarse_features, const ag::Tensor& skip,
                               const FeaturePropagationParams& params, double eps) {
  const ag::Tensor up = interpolate_features(fine, coarse, coarse_features, eps);
  const ag::Tensor joined = skip.defined() ? ag::concat({up, skip}, -1) : up;
  return ag::relu(params.second(ag::relu(params.first(joined))));
}

HeadOutput heads(const ag::Tensor& features, const HeadParams& params) {
  return {params.classify(features), params.regress(features)};
}

}  // namespace net

// ---------------------------------------------------------------------------
// Model

namespace {

class Builder {
 public:
  Builder(ParameterSet& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  ag::Tensor weight(const std::string& name, std::size_t in, std::size_t out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = uniform(rng_, -bound, bound);
    return params_.add(name, ag::Tensor::parameter({in, out}, std::move(w)));
  }

  net::Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    net::Linear l;
    l.weight = weight(name + ".weight", in, out);
    l.bias = params_.add(name + ".bias", ag::Tensor::parameter({out}, std::vector<double>(out, 0.0)));
    return l;
  }

  net::Mlp2 mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out) {
    return {linear(name + ".0", in, hidden), linear(name + ".1", hidden, out)};
  }

  ag::Tensor scalar(const std::string& name, double value) {
    return params_.add(name, ag::Tensor::parameter({1}, {value}));
  }

 private:
  ParameterSet& params_;
  Rng rng_;
};

constexpr std::size_t kInputChannels = 3 + kAttrWidth;

}  // namespace

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Builder b(params_, init_seed);
  std::size_t in = kInputChannels;
  for (std::size_t l = 1; l <= 4; ++l) {
    const std::string name = "sa" + std::to_string(l);
    const std::size_t width = config_.widths[l - 1];
    const std::size_t branches = l < 4 ? config_.msg_k.size() : 1;
    net::SetAbstractionParams sa;
    sa.lift = b.linear(name + ".lift", in, width);
    for (std::size_t br = 0; br < branches; ++br) {
      const std::string bn = name + ".b" + std::to_string(br);
      if (config_.point_transformer) {
        net::AttentionParams a;
        a.theta = b.mlp(bn + ".theta", 4, width, width);
        a.query = b.linear(bn + ".q", width, width);
        a.key = b.linear(bn + ".k", width, width);
        a.value = b.linear(bn + ".v", width, width);
        a.phi = b.mlp(bn + ".phi", width, width, width);
        sa.attention.push_back(std::move(a));
      } else {
        sa.pointnet.push_back({b.mlp(bn + ".mlp", width + 4, width, width)});
      }
    }
    sa.merge = b.linear(name + ".merge", branches * width, width);
    if ((l == 2 && config_.cgnn_sa2) || (l == 4 && config_.cgnn_sa4)) {
      net::GnnParams g;
      g.confidence = b.linear(name + ".gnn.conf", width, 1);
      g.message = b.mlp(name + ".gnn.msg", 2 * width + 1, width, width);
      g.score = b.linear(name + ".gnn.score", 2 * width + 1, 1);
      g.psi = b.weight(name + ".gnn.psi.weight", width, width);
      g.alpha = b.scalar(name + ".gnn.alpha", 0.0);
      sa.gnn = std::move(g);
    }
    sa_.push_back(std::move(sa));
    in = width;
  }

  const std::size_t d = config_.decoder_width;
  fp_.resize(4);
  for (std::size_t l = 4; l-- > 0;) {
    const std::size_t coarse = l == 3 ? config_.widths[3] : d;
    const std::size_t skip = l == 0 ? kInputChannels : config_.widths[l - 1];
    const std::string name = "fp" + std::to_string(l + 1);
    fp_[l] = {b.linear(name + ".0", coarse + skip, d), b.linear(name + ".1", d, d)};
  }
  heads_.classify = b.mlp("head.cls", d, config_.head_hidden, 1);
  heads_.regress = b.mlp("head.reg", d, config_.head_hidden, 3);
}

void Model::zero_heads() {
  for (const net::Mlp2* m : {&heads_.classify, &heads_.regress}) {
    for (const net::Linear* l : {&m->first, &m->second}) {
      for (ag::Tensor t : {l->weight, l->bias}) {
        auto v = t.mutable_values();
        std::fill(v.begin(), v.end(), 0.0);
      }
    }
  }
}

ForwardResult Model::forward(const PointCloud& cloud, const Wireframe* wireframe,
                             const ForwardOptions& options) const {
  if (cloud.empty()) throw InvalidArgument("forward: cloud has no points");
  cloud.validate();
  const bool train = options.mode == Mode::Train;
  if (train && wireframe == nullptr) {
    throw InvalidState("forward: train mode needs the ground-truth wireframe");
  }
  const auto sizes = config_.level_sizes();
  Rng rng(options.seed ^ 0x5a6e3d0f1c2b4a59ULL);

  ForwardResult result;
  if (cloud.size() == sizes[0]) {
    result.input_indices.resize(sizes[0]);
    for (std::size_t i = 0; i < sizes[0]; ++i) result.input_indices[i] = i;
    result.input = cloud;
  } else {
    result.input_indices = random_subsample_indices(cloud.size(), sizes[0], rng());
    result.input = cloud.select(result.input_indices);
  }

  LevelState level0;
  level0.coords = result.input.coords;
  std::vector<double> channels;
  channels.reserve(sizes[0] * kInputChannels);
  for (std::size_t i = 0; i < sizes[0]; ++i) {
    channels.insert(channels.end(), level0.coords[i].begin(), level0.coords[i].end());
    channels.insert(channels.end(), result.input.attrs[i].begin(), result.input.attrs[i].end());
  }
  level0.features = ag::Tensor::constant({sizes[0], kInputChannels}, std::move(channels));
  if (train) level0.labels = make_labels(level0.coords, *wireframe, config_.label_d_thresh);
  result.levels.push_back(std::move(level0));

  for (std::size_t l = 1; l <= 4; ++l) {
    const LevelState& parent = result.levels.back();
    const net::SetAbstractionParams& sa = sa_[l - 1];
    const std::size_t n_parent = parent.coords.size();

    std::size_t start = 0;
    if (l == 1 && options.fps_start) {
      start = *options.fps_start;
    } else if (train) {
      start = uniform_index(rng, n_parent);
    }
    LevelState level;
    level.parent_indices = farthest_point_sample(parent.coords, sizes[l], start);
    for (std::size_t idx : level.parent_indices) level.coords.push_back(parent.coords[idx]);

    const ag::Tensor lifted = sa.lift(parent.features);
    const ag::Tensor centers = ag::gather_rows(lifted, level.parent_indices);
    const std::vector<std::size_t> scales =
        l < 4 ? config_.msg_k : std::vector<std::size_t>{config_.sa4_k};

    std::vector<ag::Tensor> branches;
    for (std::size_t br = 0; br < scales.size(); ++br) {
      const std::size_t group = std::min(scales[br], n_parent);
      const NeighborIndex nb = knn(level.coords, parent.coords, group);
      const ag::Tensor rel = net::relative_positions_4d(level.coords, parent.coords, nb);
      if (config_.point_transformer) {
        const net::AttentionParams& att = sa.attention[br];
        const ag::Tensor delta = net::position_encoding_4d(rel, att.theta);
        const ag::Tensor q = att.query(centers);
        const ag::Tensor k = ag::gather_rows(att.key(lifted), nb.indices);
        const ag::Tensor v = ag::gather_rows(att.value(lifted), nb.indices);
        if (l == 4 && config_.sa4_guided && train) {
          std::vector<double> prior(nb.indices.size());
          for (std::size_t i = 0; i < prior.size(); ++i) {
            prior[i] = std::log(parent.labels->soft[nb.indices[i]] + config_.guide_eps);
          }
          const std::size_t rows = prior.size();
          const ag::Tensor log_prior = ag::Tensor::constant({rows, 1}, std::move(prior));
          branches.push_back(net::attend(q, k, v, delta, att.phi, group, &log_prior));
        } else {
          branches.push_back(net::attend(q, k, v, delta, att.phi, group));
        }
      } else {
        const ag::Tensor grouped = ag::concat({ag::gather_rows(lifted, nb.indices), rel}, -1);
        const ag::Tensor h = ag::relu(sa.pointnet[br].mlp(grouped));
        branches.push_back(ag::max(ag::reshape(h, {sizes[l], group, h.cols()}), 1));
      }
    }
    ag::Tensor features = ag::relu(ag::add(sa.merge(ag::concat(branches, -1)), centers));
    if (sa.gnn) features = net::centroid_gnn(level.coords, features, config_.gnn_k, *sa.gnn).features;
    level.features = features;
    if (train) level.labels = make_labels(level.coords, *wireframe, config_.label_d_thresh);
    result.levels.push_back(std::move(level));
  }

  ag::Tensor decoded = result.levels[4].features;
  for (std::size_t l = 4; l-- > 0;) {
    decoded = net::feature_propagation(result.levels[l].coords, result.levels[l + 1].coords, decoded,
                                       result.levels[l].features, fp_[l], config_.fp_eps);
  }
  const net::HeadOutput out = net::heads(decoded, heads_);
  result.logits = out.logits;
  result.offsets = out.offsets;
  return result;
}

}  // namespace sage3d
