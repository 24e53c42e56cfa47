// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fastmetro/config.hpp"
#include "fastmetro/mesh.hpp"
#include "fastmetro/ops.hpp"
#include "fastmetro/parameters.hpp"

namespace fastmetro {

/// Fixed 2-D sine encoding for an h x w grid, flattened row-major to
/// [h * w, d]. Channels [0, d/2) encode the row, [d/2, d) the column. Within
/// each half, channel i carries sin (even i) or cos (odd i) of
/// pos / 10000^(2 * floor(i / 2) / (d / 2)), with pos = 2 pi (r + 1) / h for
/// rows and 2 pi (c + 1) / w for columns. Requires d % 4 == 0.
template <typename Scalar>
RowMatX<Scalar> sine_positional_encoding(Index h, Index w, Index d) {
  if (h <= 0 || w <= 0 || d <= 0 || d % 4 != 0) {
    throw ConfigError("sine positional encoding needs a positive grid and a width divisible by 4, got d=" +
                      std::to_string(d));
  }
  const Index half = d / 2;
  const double two_pi = 2.0 * std::numbers::pi;
  RowMatX<Scalar> pe(h * w, d);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double y = two_pi * static_cast<double>(r + 1) / static_cast<double>(h);
      const double x = two_pi * static_cast<double>(c + 1) / static_cast<double>(w);
      for (Index i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
        const bool even = i % 2 == 0;
        pe(r * w + c, i) = static_cast<Scalar>(even ? std::sin(y / freq) : std::cos(y / freq));
        pe(r * w + c, half + i) = static_cast<Scalar>(even ? std::sin(x / freq) : std::cos(x / freq));
      }
    }
  }
  return pe;
}

struct LinearParams {
  ParamId weight, bias;
};
struct NormParams {
  ParamId gain, shift;
};
struct AttentionParams {
  LinearParams q, k, v, out;
};
struct MlpParams {
  LinearParams fc1, fc2;
};
struct EncoderLayerParams {
  AttentionParams self_attn;
  NormParams norm1;
  MlpParams mlp;
  NormParams norm2;
};
struct DecoderLayerParams {
  AttentionParams self_attn;
  NormParams norm1;
  AttentionParams cross_attn;
  NormParams norm2;
  MlpParams mlp;
  NormParams norm3;
};
struct TokenParams {
  ParamId camera, joints, vertices;
};
struct StageParams {
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
};
/// Projections from stage s to stage s + 1. Joint and vertex features share
/// one projection.
struct ReductionParams {
  LinearParams camera, image, tokens;
};

/// Attention probabilities captured during a forward pass, one entry per
/// decoder layer across all stages.
template <typename Scalar>
struct AttentionTrace {
  std::vector<DenseTensor<Scalar>> self_attention;   // [heads, K+N, K+N]
  std::vector<DenseTensor<Scalar>> cross_attention;  // [heads, K+N, HW]
  std::vector<Index> stage;
};

template <typename Scalar>
struct EncoderOutput {
  Var<Scalar> camera;  // [1, D]
  Var<Scalar> image;   // [HW, D]
};

template <typename Scalar>
struct DecoderOutput {
  Var<Scalar> joints;    // [K, D]
  Var<Scalar> vertices;  // [N, D]
};

/// Plain-value copy of a model output.
template <typename Scalar>
struct Prediction {
  Scalar camera_scale = 0;
  Eigen::Matrix<Scalar, 1, 2> camera_translation;
  RowMatX<Scalar> joints3d;
  RowMatX<Scalar> coarse_vertices3d;
  RowMatX<Scalar> fine_vertices3d;
  RowMatX<Scalar> regressed_joints3d;
  RowMatX<Scalar> joints2d;
  RowMatX<Scalar> regressed_joints2d;
};

template <typename Scalar>
struct ModelOutput {
  Var<Scalar> camera_scale;        // [1, 1]
  Var<Scalar> camera_translation;  // [1, 2]
  Var<Scalar> joints3d;            // [K, 3]
  Var<Scalar> coarse_vertices3d;   // [N, 3]
  Var<Scalar> fine_vertices3d;     // [M, 3]  = U coarse
  Var<Scalar> regressed_joints3d;  // [K, 3]  = R fine
  Var<Scalar> joints2d;            // [K, 2]
  Var<Scalar> regressed_joints2d;  // [K, 2]

  Prediction<Scalar> values() const {
    Prediction<Scalar> p;
    p.camera_scale = camera_scale.value()[0];
    p.camera_translation = camera_translation.value().matrix();
    p.joints3d = joints3d.value().matrix();
    p.coarse_vertices3d = coarse_vertices3d.value().matrix();
    p.fine_vertices3d = fine_vertices3d.value().matrix();
    p.regressed_joints3d = regressed_joints3d.value().matrix();
    p.joints2d = joints2d.value().matrix();
    p.regressed_joints2d = regressed_joints2d.value().matrix();
    return p;
  }
};

/// Weak-perspective projection s * (x, y) + t of points[n, 3].
template <typename Scalar>
Var<Scalar> weak_perspective(const Var<Scalar>& points, const Var<Scalar>& scale, const Var<Scalar>& translation) {
  return add_row(scale_by(slice_cols(points, 0, 2), scale), translation);
}

/// Checks that a topology's operators match the config's K, N and M.
inline void check_topology(const ModelConfig& config, const MeshTopology& topo) {
  topo.validate();
  if (topo.joints() != config.joints || topo.coarse_vertices() != config.coarse_vertices ||
      topo.fine_vertices() != config.fine_vertices) {
    throw ConfigError("topology has K=" + std::to_string(topo.joints()) + ", N=" +
                      std::to_string(topo.coarse_vertices()) + ", M=" + std::to_string(topo.fine_vertices()) +
                      " but the config expects K=" + std::to_string(config.joints) + ", N=" +
                      std::to_string(config.coarse_vertices) + ", M=" + std::to_string(config.fine_vertices));
  }
}

/// Decoder self-attention masks for a config's mask mode: empty for `off`,
/// one shared matrix for `full`, one per head for `half_heads`.
inline std::vector<BoolMatrix> decoder_masks(const ModelConfig& config, const SparseMatrix& adjacency) {
  switch (config.mask_mode) {
    case MaskMode::off:
      return {};
    case MaskMode::full:
      return {build_attention_mask(adjacency, config.joints, false, config.num_heads).allowed()};
    case MaskMode::half_heads:
      return build_attention_mask(adjacency, config.joints, true, config.num_heads).per_head(config.num_heads);
  }
  return {};
}

/// The encoder-decoder mesh regressor over a toy patch backbone.
///
/// Layers are post-norm: x = LN(x + Attn(x)), x = LN(x + MLP(x)). The
/// camera token takes no positional encoding; image features take it once,
/// before the first encoder layer.
template <typename Scalar>
class FastMetro {
 public:
  using Tensor = DenseTensor<Scalar>;
  using V = Var<Scalar>;
  using Context = ForwardContext<Scalar>;

  FastMetro(ModelConfig config, MeshTopology topology, std::uint64_t seed)
      : config_(std::move(config)), topology_(std::move(topology)) {
    config_.validate();
    check_topology(config_, topology_);
    masks_ = decoder_masks(config_, topology_.adjacency);
    build();
    initialize(seed);
  }

  const ModelConfig& config() const { return config_; }
  const MeshTopology& topology() const { return topology_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }
  const std::vector<BoolMatrix>& masks() const { return masks_; }
  const std::vector<StageParams>& stages() const { return stages_; }
  const std::vector<ReductionParams>& reductions() const { return reductions_; }
  const TokenParams& tokens() const { return tokens_; }
  const LinearParams& coordinate_head() const { return coord_head_; }
  const LinearParams& camera_head() const { return camera_head_; }

  /// Number of backbone scalars (excluded from the transformer budget).
  Index backbone_parameter_count() const {
    Index n = 0;
    for (ParamId id : {backbone_.fc1.weight, backbone_.fc1.bias, backbone_.fc2.weight, backbone_.fc2.bias}) {
      n += params_.at(id).size();
    }
    return n;
  }

  /// image[H_img, W_img, ch] -> features[H, W, C] via two linear+ReLU stages
  /// over flattened patches.
  V toy_backbone(Context& ctx, const V& image) const {
    if (image.value().rank() != 3 || image.shape()[0] != config_.image_h || image.shape()[1] != config_.image_w ||
        image.shape()[2] != config_.image_channels) {
      throw DimensionError("image has shape " + to_string(image.shape()) + ", expected [" +
                           std::to_string(config_.image_h) + ", " + std::to_string(config_.image_w) + ", " +
                           std::to_string(config_.image_channels) + "]");
    }
    V patches = extract_patches(image, config_.image_h / config_.grid_h, config_.image_w / config_.grid_w);
    V hidden = relu(apply(ctx, backbone_.fc1, patches));
    V features = relu(apply(ctx, backbone_.fc2, hidden));
    return reshape(features, Shape{config_.grid_h, config_.grid_w, config_.backbone_channels});
  }

  /// features[H, W, C] -> [HW, D1]: per-position projection plus positional
  /// encoding.
  V embed_features(Context& ctx, const V& features) const {
    const Index cells = config_.grid_cells();
    if (features.value().size() != cells * config_.backbone_channels || features.value().cols() != config_.backbone_channels) {
      throw DimensionError("feature map has shape " + to_string(features.shape()) + ", expected [" +
                           std::to_string(config_.grid_h) + ", " + std::to_string(config_.grid_w) + ", " +
                           std::to_string(config_.backbone_channels) + "]");
    }
    V flat = reshape(features, Shape{cells, config_.backbone_channels});
    V projected = apply(ctx, embed_proj_, flat);
    switch (config_.positional_encoding) {
      case PositionalEncoding::fixed_sine:
        return projected + ctx.constant(Tensor::from_matrix(sine_positional_encoding<Scalar>(
                               config_.grid_h, config_.grid_w, config_.stage_dims.front())));
      case PositionalEncoding::learned:
        return projected + ctx(*learned_pos_);
      case PositionalEncoding::none:
        break;
    }
    return projected;
  }

  /// Runs the stage's encoder over [camera; image] tokens.
  EncoderOutput<Scalar> encode(Context& ctx, Index stage, const V& image, const V& camera) const {
    const auto& layers = stage_at(stage).encoder;
    if (layers.empty()) return {camera, image};
    const Index hw = image.shape()[0];
    V x = concat_rows<Scalar>({camera, image});
    for (const auto& layer : layers) {
      x = norm(ctx, layer.norm1, x + attention(ctx, layer.self_attn, x, x, {}, nullptr));
      x = norm(ctx, layer.norm2, x + mlp(ctx, layer.mlp, x));
    }
    return {slice_rows(x, 0, 1), slice_rows(x, 1, hw)};
  }

  /// Runs the stage's decoder: masked self-attention over [joints; vertices],
  /// cross-attention into the image features, then the MLP.
  DecoderOutput<Scalar> decode(Context& ctx, Index stage, const V& image, const V& joints, const V& vertices,
                               std::span<const BoolMatrix> masks, AttentionTrace<Scalar>* trace = nullptr) const {
    const auto& layers = stage_at(stage).decoder;
    const Index k = joints.shape()[0], n = vertices.shape()[0];
    for (const auto& m : masks) {
      if (m.rows() != k + n || m.cols() != k + n) {
        throw ConfigError("attention mask is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          " but the decoder has " + std::to_string(k + n) + " tokens");
      }
    }
    if (layers.empty()) return {joints, vertices};
    V x = concat_rows<Scalar>({joints, vertices});
    for (const auto& layer : layers) {
      Tensor* self_probs = nullptr;
      Tensor* cross_probs = nullptr;
      if (trace) {
        trace->self_attention.emplace_back();
        trace->cross_attention.emplace_back();
        trace->stage.push_back(stage);
        self_probs = &trace->self_attention.back();
        cross_probs = &trace->cross_attention.back();
      }
      x = norm(ctx, layer.norm1, x + attention(ctx, layer.self_attn, x, x, masks, self_probs));
      x = norm(ctx, layer.norm2, x + attention(ctx, layer.cross_attn, x, image, {}, cross_probs));
      x = norm(ctx, layer.norm3, x + mlp(ctx, layer.mlp, x));
    }
    return {slice_rows(x, 0, k), slice_rows(x, k, n)};
  }

  /// Applies one learnable projection between consecutive stages.
  V reduce(Context& ctx, const LinearParams& p, const V& x) const { return apply(ctx, p, x); }

  /// Coordinate and camera heads followed by upsampling, joint regression and
  /// projection.
  ModelOutput<Scalar> regress_outputs(Context& ctx, const V& camera, const V& joints, const V& vertices) const {
    const Scalar out_scale = static_cast<Scalar>(config_.output_scale);
    ModelOutput<Scalar> out;
    V cam = apply(ctx, camera_head_, camera);  // [1, 3]
    out.camera_scale = softplus(slice_cols(cam, 0, 1));
    out.camera_translation = scale(slice_cols(cam, 1, 2), out_scale);
    out.joints3d = scale(apply(ctx, coord_head_, joints), out_scale);
    out.coarse_vertices3d = scale(apply(ctx, coord_head_, vertices), out_scale);
    out.fine_vertices3d = sparse_dense_matmul(topology_.upsample, out.coarse_vertices3d);
    out.regressed_joints3d = sparse_dense_matmul(topology_.regressor, out.fine_vertices3d);
    out.joints2d = weak_perspective(out.joints3d, out.camera_scale, out.camera_translation);
    out.regressed_joints2d = weak_perspective(out.regressed_joints3d, out.camera_scale, out.camera_translation);
    return out;
  }

  ModelOutput<Scalar> forward(Context& ctx, const V& image, AttentionTrace<Scalar>* trace = nullptr) const {
    V features = embed_features(ctx, toy_backbone(ctx, image));
    V camera = ctx(tokens_.camera);
    V joints = ctx(tokens_.joints);
    V vertices = ctx(tokens_.vertices);
    for (Index s = 0; s < config_.stage_count(); ++s) {
      if (s > 0) {
        const auto& r = reductions_[static_cast<std::size_t>(s - 1)];
        camera = reduce(ctx, r.camera, camera);
        features = reduce(ctx, r.image, features);
        joints = reduce(ctx, r.tokens, joints);
        vertices = reduce(ctx, r.tokens, vertices);
      }
      auto enc = encode(ctx, s, features, camera);
      camera = enc.camera;
      features = enc.image;
      auto dec = decode(ctx, s, features, joints, vertices, masks_, trace);
      joints = dec.joints;
      vertices = dec.vertices;
    }
    return regress_outputs(ctx, camera, joints, vertices);
  }

  /// Inference on a detached tape.
  Prediction<Scalar> predict(const Tensor& image, AttentionTrace<Scalar>* trace = nullptr) const {
    Tape<Scalar> tape(false);
    Context ctx(params_, tape);
    return forward(ctx, tape.constant(image), trace).values();
  }

  /// Xavier-uniform for every rank-2 parameter, zero biases, unit LN gains.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_.at(i);
      const std::string& name = params_.name(i);
      if (t.rank() == 2) {
        const double bound = std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index j = 0; j < t.size(); ++j) t[j] = static_cast<Scalar>(dist(rng));
      } else if (name.ends_with(".gain")) {
        t.values().setOnes();
      } else {
        t.values().setZero();
      }
    }
    params_.zero_grad();
  }

 private:
  const StageParams& stage_at(Index stage) const {
    if (stage < 0 || stage >= config_.stage_count()) throw ConfigError("stage index out of range");
    return stages_[static_cast<std::size_t>(stage)];
  }

  V apply(Context& ctx, const LinearParams& p, const V& x) const { return linear(x, ctx(p.weight), ctx(p.bias)); }

  V norm(Context& ctx, const NormParams& p, const V& x) const {
    return layer_norm(x, ctx(p.gain), ctx(p.shift), static_cast<Scalar>(config_.layer_norm_eps));
  }

  V mlp(Context& ctx, const MlpParams& p, const V& x) const { return apply(ctx, p.fc2, relu(apply(ctx, p.fc1, x))); }

  V attention(Context& ctx, const AttentionParams& p, const V& queries, const V& memory,
              std::span<const BoolMatrix> masks, Tensor* probs_out) const {
    V q = apply(ctx, p.q, queries);
    V k = apply(ctx, p.k, memory);
    V v = apply(ctx, p.v, memory);
    V probs = masked_softmax(attention_scores(q, k, config_.num_heads), masks);
    if (probs_out) *probs_out = probs.value();
    return apply(ctx, p.out, attention_combine(probs, v));
  }

  LinearParams add_linear(const std::string& name, Index in, Index out) {
    return {params_.add(name + ".weight", Shape{in, out}), params_.add(name + ".bias", Shape{out})};
  }
  NormParams add_norm(const std::string& name, Index d) {
    return {params_.add(name + ".gain", Shape{d}), params_.add(name + ".shift", Shape{d})};
  }
  AttentionParams add_attention(const std::string& name, Index d) {
    return {add_linear(name + ".q", d, d), add_linear(name + ".k", d, d), add_linear(name + ".v", d, d),
            add_linear(name + ".out", d, d)};
  }
  MlpParams add_mlp(const std::string& name, Index d) {
    const Index hidden = d * config_.mlp_expansion;
    return {add_linear(name + ".fc1", d, hidden), add_linear(name + ".fc2", hidden, d)};
  }

  void build() {
    const auto& c = config_;
    const Index d1 = c.stage_dims.front();
    const Index patch_len = (c.image_h / c.grid_h) * (c.image_w / c.grid_w) * c.image_channels;
    backbone_ = {add_linear("backbone.fc1", patch_len, c.backbone_hidden),
                 add_linear("backbone.fc2", c.backbone_hidden, c.backbone_channels)};
    embed_proj_ = add_linear("embed.proj", c.backbone_channels, d1);
    if (c.positional_encoding == PositionalEncoding::learned) {
      learned_pos_ = params_.add("embed.position", Shape{c.grid_cells(), d1});
    }
    tokens_.camera = params_.add("tokens.camera", Shape{1, d1});
    tokens_.joints = params_.add("tokens.joints", Shape{c.joints, d1});
    tokens_.vertices = params_.add("tokens.vertices", Shape{c.coarse_vertices, d1});
    for (Index s = 0; s < c.stage_count(); ++s) {
      const Index d = c.stage_dims[static_cast<std::size_t>(s)];
      const std::string prefix = "stage" + std::to_string(s);
      if (s > 0) {
        const Index prev = c.stage_dims[static_cast<std::size_t>(s - 1)];
        const std::string r = "reduce" + std::to_string(s - 1);
        reductions_.push_back({add_linear(r + ".camera", prev, d), add_linear(r + ".image", prev, d),
                               add_linear(r + ".tokens", prev, d)});
      }
      StageParams stage;
      for (Index l = 0; l < c.enc_layers_per_stage[static_cast<std::size_t>(s)]; ++l) {
        const std::string n = prefix + ".encoder" + std::to_string(l);
        EncoderLayerParams layer;
        layer.self_attn = add_attention(n + ".self_attn", d);
        layer.norm1 = add_norm(n + ".norm1", d);
        layer.mlp = add_mlp(n + ".mlp", d);
        layer.norm2 = add_norm(n + ".norm2", d);
        stage.encoder.push_back(layer);
      }
      for (Index l = 0; l < c.dec_layers_per_stage[static_cast<std::size_t>(s)]; ++l) {
        const std::string n = prefix + ".decoder" + std::to_string(l);
        DecoderLayerParams layer;
        layer.self_attn = add_attention(n + ".self_attn", d);
        layer.norm1 = add_norm(n + ".norm1", d);
        layer.cross_attn = add_attention(n + ".cross_attn", d);
        layer.norm2 = add_norm(n + ".norm2", d);
        layer.mlp = add_mlp(n + ".mlp", d);
        layer.norm3 = add_norm(n + ".norm3", d);
        stage.decoder.push_back(layer);
      }
      stages_.push_back(std::move(stage));
    }
    const Index last = c.stage_dims.back();
    coord_head_ = add_linear("head.coords", last, 3);
    camera_head_ = add_linear("head.camera", last, 3);
  }

  ModelConfig config_;
  MeshTopology topology_;
  std::vector<BoolMatrix> masks_;
  ParameterStore<Scalar> params_;
  MlpParams backbone_{};
  LinearParams embed_proj_{};
  std::optional<ParamId> learned_pos_;
  TokenParams tokens_{};
  std::vector<StageParams> stages_;
  std::vector<ReductionParams> reductions_;
  LinearParams coord_head_{};
  LinearParams camera_head_{};
};

}  // namespace fastmetro
