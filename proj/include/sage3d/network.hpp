#pragma once

// Hierarchical encoder-decoder for per-point corner prediction.
//
//   level 0 (n0 points, 8 channels)
//     SA1..SA3: FPS + two-scale vector attention, CentroidGNN after SA2
//     SA4:      FPS + single-scale attention with the label log-prior (train)
//               followed by CentroidGNN
//   FP4..FP1: 3-NN inverse-distance interpolation + skip concat + MLP
//   heads:    classification logit and 3-D offset per input point
//
// All batched blocks work on a "grouped" layout: Q centers × K neighbours are
// flattened into Q·K rows, and per-neighbourhood reductions reshape to
// (Q, K, C) and reduce over axis 1.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sage3d/autograd.hpp"
#include "sage3d/geometry.hpp"
#include "sage3d/optim.hpp"

namespace sage3d {

enum class Mode { Train, Inference };

struct ModelConfig {
  std::size_t input_points = 256;
  std::array<std::size_t, 4> factors{4, 2, 2, 4};
  std::vector<std::size_t> msg_k{16, 32};  // SA1..SA3 branch neighbourhoods
  std::size_t sa4_k = 16;
  std::size_t gnn_k = 16;
  std::array<std::size_t, 4> widths{32, 64, 128, 256};
  std::size_t decoder_width = 128;
  std::size_t head_hidden = 64;
  bool point_transformer = true;  // false: PointNet++ style max-pooled MLP grouping
  bool sa4_guided = true;
  bool cgnn_sa2 = true;
  bool cgnn_sa4 = true;
  double guide_eps = 0.01;
  double label_d_thresh = 0.05;  // soft labels that feed the SA4 prior
  double fp_eps = 1e-8;

  // n0 followed by the four SA level sizes; each level keeps at least 1 point.
  std::array<std::size_t, 5> level_sizes() const;
  void validate() const;

  // N=32, widths [8,8,16,16]: small enough for exhaustive gradient checks.
  static ModelConfig tiny();
};

namespace net {

struct Linear {
  ag::Tensor weight;  // in × out
  ag::Tensor bias;    // out
  ag::Tensor operator()(const ag::Tensor& x) const;
};

// Two linear layers with a ReLU between them; no output activation.
struct Mlp2 {
  Linear first;
  Linear second;
  ag::Tensor operator()(const ag::Tensor& x) const;
};

struct AttentionParams {
  Mlp2 theta;  // 4 -> C -> C position encoding
  Linear query, key, value;
  Mlp2 phi;    // C -> C -> C attention weights
};

struct PointNetParams {
  Mlp2 mlp;  // (C + 4) -> C -> C, max-pooled over the neighbourhood
};

struct GnnParams {
  Linear confidence;  // C -> 1, sigmoid gives c_i
  Mlp2 message;       // 2C+1 -> C -> C, ReLU applied to the output
  Linear score;       // 2C+1 -> 1, softmax over the neighbourhood
  ag::Tensor psi;     // C×C, no bias: zero messages give zero excitation
  ag::Tensor alpha;   // gate logit, shape (1)
};

struct SetAbstractionParams {
  Linear lift;  // C_in -> C_l
  std::vector<AttentionParams> attention;  // one per branch (transformer)
  std::vector<PointNetParams> pointnet;    // one per branch (PointNet variant)
  Linear merge;                            // branches·C_l -> C_l
  std::optional<GnnParams> gnn;
};

struct FeaturePropagationParams {
  Linear first;   // C_coarse + C_skip -> D, ReLU
  Linear second;  // D -> D, ReLU
};

struct HeadParams {
  Mlp2 classify;  // D -> H -> 1
  Mlp2 regress;   // D -> H -> 3
};

// Constant (Q·K × 4) rows [p_i − p_j, ‖p_i − p_j‖].
ag::Tensor relative_positions_4d(std::span<const Vec3> centers, std::span<const Vec3> source,
                                 const NeighborIndex& nb);

ag::Tensor position_encoding_4d(const ag::Tensor& relative4, const Mlp2& theta);

// Core of the attention block on already projected inputs:
//   q: Q×C (one row per center), k, v, delta: Q·K×C.
// `log_prior` (Q·K×1), when given, is added to every channel of the logits.
ag::Tensor attend(const ag::Tensor& q, const ag::Tensor& k, const ag::Tensor& v,
                  const ag::Tensor& delta, const Mlp2& phi, std::size_t group,
                  const ag::Tensor* log_prior = nullptr);

// Per-channel softmax weights (Q, K, C) for the same inputs, for inspection.
ag::Tensor attention_weights(const ag::Tensor& q, const ag::Tensor& k, const ag::Tensor& delta,
                             const Mlp2& phi, std::size_t group,
                             const ag::Tensor* log_prior = nullptr);

// w_j = φ(q_i − k_j + δ_j); out_i = Σ_j softmax_j(w) ⊙ (v_j + δ_j).
// centers: Q×C, neighbours: Q·K×C (K rows per center), delta: Q·K×C.
ag::Tensor vector_attention(const ag::Tensor& centers, const ag::Tensor& neighbours,
                            const ag::Tensor& delta, const AttentionParams& params,
                            std::size_t group);

// Train mode adds log(y_j + eps) to the logits; `labels` holds one soft label
// per neighbour row. Inference ignores `labels` and equals vector_attention.
ag::Tensor soft_guided_attention(const ag::Tensor& centers, const ag::Tensor& neighbours,
                                 const ag::Tensor& delta, const AttentionParams& params,
                                 std::size_t group, std::span<const double> labels, Mode mode,
                                 double eps);

struct GnnOutput {
  ag::Tensor features;    // f'
  ag::Tensor confidence;  // c, n×1
  ag::Tensor attention;   // a, n×K
  ag::Tensor boosted;     // ã = a·(1 + c_i c_j), n×K
};

// Excitatory message passing over the k-NN graph of `coords` (self included).
GnnOutput centroid_gnn(std::span<const Vec3> coords, const ag::Tensor& features, std::size_t k,
                       const GnnParams& params);
// Same with externally supplied confidences (n×1, values in [0, 1]).
GnnOutput centroid_gnn(std::span<const Vec3> coords, const ag::Tensor& features,
                       const ag::Tensor& confidence, std::size_t k, const GnnParams& params);

// Inverse-distance weights over the 3 (or fewer) nearest coarse points.
ag::Tensor interpolate_features(std::span<const Vec3> fine, std::span<const Vec3> coarse,
                                const ag::Tensor& coarse_features, double eps);

ag::Tensor feature_propagation(std::span<const Vec3> fine, std::span<const Vec3> coarse,
                               const ag::Tensor& coarse_features, const ag::Tensor& skip,
                               const FeaturePropagationParams& params, double eps);

struct HeadOutput {
  ag::Tensor logits;   // N×1
  ag::Tensor offsets;  // N×3
};

HeadOutput heads(const ag::Tensor& features, const HeadParams& params);

}  // namespace net

struct LevelState {
  std::vector<Vec3> coords;
  ag::Tensor features;
  std::vector<std::size_t> parent_indices;  // rows of the previous level
  std::optional<LabelSet> labels;           // train mode only
};

struct ForwardOptions {
  Mode mode = Mode::Inference;
  std::uint64_t seed = 0;
  // Level-1 FPS start in the (subsampled) input; defaults to 0 in inference
  // and a seeded draw in training.
  std::optional<std::size_t> fps_start;
};

struct ForwardResult {
  ag::Tensor logits;   // n0×1
  ag::Tensor offsets;  // n0×3
  PointCloud input;    // the n0 points the predictions are aligned to
  std::vector<std::size_t> input_indices;
  std::vector<LevelState> levels;  // 0..4
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);
  // Blocks hold handles to the same tensors as the parameter set; a copy
  // would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Zeroes every weight and bias of both output heads.
  void zero_heads();

  const net::SetAbstractionParams& sa(std::size_t level) const { return sa_.at(level - 1); }
  const net::HeadParams& head_params() const { return heads_; }

  ForwardResult forward(const PointCloud& cloud, const Wireframe* wireframe,
                        const ForwardOptions& options) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::vector<net::SetAbstractionParams> sa_;
  std::vector<net::FeaturePropagationParams> fp_;  // fp_[l] decodes into level l
  net::HeadParams heads_;
};

}  // namespace sage3d
