#pragma once

// Graph-transformer layers with scalar edge embeddings and a gated residual,
// top-k graph pooling / unpooling, and the encoder assemblies compared in the
// architecture ablation (U-shaped, stacking, residual, cascade).

#include "mmgt/autodiff.hpp"

#include <string>
#include <vector>

namespace mmgt {

struct GtLayerParams {
  int n_heads = 0;
  Eigen::Index input_dim = 0;
  Eigen::Index head_dim = 0;
  // Head h owns columns [h*head_dim, (h+1)*head_dim) of each projection.
  ad::Var w_q, w_k, w_v;  // input_dim x hidden
  ad::Var b_q, b_k, b_v;  // 1 x hidden
  ad::Var w_e, b_e;       // 1 x hidden; edge-weight embedding
  ad::Var w_r, b_r;       // residual projection input_dim -> hidden
  ad::Var w_g;            // 3*hidden x 1 gate
  ad::Var ln_gamma, ln_beta;

  Eigen::Index hidden_dim() const { return head_dim * n_heads; }
  std::vector<ad::Var> parameters() const;
};

GtLayerParams make_gt_layer(Eigen::Index input_dim, Eigen::Index hidden_dim, int n_heads, Rng& rng);

/// Attention maps (one N x N matrix per head) of one layer application.
struct AttentionCapture {
  std::vector<Matrix> heads;
};

/// One GT layer. A is the (possibly dropout-perturbed) adjacency; neighbourhoods
/// are {j : A_ij > 0}. The edge embedding e_ij = A_ij W_e + b_e is rebuilt from A.
ad::Var gt_layer_forward(const ad::Var& h, const ad::Var& adjacency, const GtLayerParams& params,
                         AttentionCapture* capture = nullptr);

struct PoolRecord {
  std::vector<int> idx;  // retained nodes, descending score
  Vector delta;          // scores before selection
  ad::Var pre_features;
  ad::Var pre_adjacency;
};

struct PoolResult {
  ad::Var features;
  ad::Var adjacency;
  PoolRecord record;
};

/// ceil(ratio * n); throws when the result would be empty.
std::size_t pooled_count(std::size_t n, double ratio);

/// Indices of the k largest scores, descending, ties to the lower index.
std::vector<int> top_k_indices(const Vector& scores, std::size_t k);

PoolResult gpool(const ad::Var& h, const ad::Var& adjacency, double ratio, const ad::Var& score);

/// Rows at record.idx come from h_small, every other row from record.pre_features.
ad::Var gunpool(const ad::Var& h_small, const PoolRecord& record);

enum class Architecture { gtunet, stacking, residual, cascade };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& name);

struct EncoderConfig {
  int depth = 2;
  double pool_ratio = 0.8;
  Eigen::Index hidden_dim = 64;
  int n_heads = 4;
  Architecture architecture = Architecture::gtunet;
  double dropout = 0.3;

  void validate() const;
};

struct EncoderTrace {
  int gt_layer_calls = 0;
  std::vector<std::vector<int>> pool_indices;
  std::vector<AttentionCapture> attention;  // filled only when capture_attention is set
  bool capture_attention = false;
};

/// Training-time switches for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  EncoderTrace* trace = nullptr;
};

/// Inverted dropout on features; identity when p == 0.
ad::Var feature_dropout(const ad::Var& h, double p, Rng& rng);

class GtEncoder {
 public:
  GtEncoder(Eigen::Index input_dim, EncoderConfig config, Rng& rng);

  ad::Var forward(const ad::Var& h0, const ad::Var& adjacency, ForwardContext& ctx) const;

  std::vector<ad::Var> parameters() const;
  const EncoderConfig& config() const { return config_; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  ad::Var apply_layer(std::size_t k, const ad::Var& h, const ad::Var& adjacency,
                      ForwardContext& ctx) const;

  EncoderConfig config_;
  std::vector<GtLayerParams> layers_;
  std::vector<ad::Var> pool_scores_;
};

}  // namespace mmgt
