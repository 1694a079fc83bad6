#include "mmgt/gt_encoder.hpp"

#include "mmgt/errors.hpp"
#include "mmgt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmgt {

std::vector<ad::Var> GtLayerParams::parameters() const {
  return {w_q, w_k, w_v, b_q, b_k, b_v, w_e, b_e, w_r, b_r, w_g, ln_gamma, ln_beta};
}

GtLayerParams make_gt_layer(Eigen::Index input_dim, Eigen::Index hidden_dim, int n_heads, Rng& rng) {
  if (n_heads <= 0 || hidden_dim <= 0 || hidden_dim % n_heads != 0) {
    throw ValidationError("hidden width " + std::to_string(hidden_dim) +
                          " must be a positive multiple of the head count " +
                          std::to_string(n_heads));
  }
  GtLayerParams p;
  p.n_heads = n_heads;
  p.input_dim = input_dim;
  p.head_dim = hidden_dim / n_heads;
  p.w_q = glorot_parameter(input_dim, hidden_dim, rng);
  p.w_k = glorot_parameter(input_dim, hidden_dim, rng);
  p.w_v = glorot_parameter(input_dim, hidden_dim, rng);
  p.b_q = zeros_parameter(1, hidden_dim);
  p.b_k = zeros_parameter(1, hidden_dim);
  p.b_v = zeros_parameter(1, hidden_dim);
  p.w_e = glorot_parameter(1, hidden_dim, rng);
  p.b_e = zeros_parameter(1, hidden_dim);
  p.w_r = glorot_parameter(input_dim, hidden_dim, rng);
  p.b_r = zeros_parameter(1, hidden_dim);
  p.w_g = zeros_parameter(3 * hidden_dim, 1);  // gate starts at 0.5
  p.ln_gamma = constant_parameter(1, hidden_dim, 1.0);
  p.ln_beta = zeros_parameter(1, hidden_dim);
  return p;
}

ad::Var gt_layer_forward(const ad::Var& h, const ad::Var& adjacency, const GtLayerParams& params,
                         AttentionCapture* capture) {
  const Eigen::Index n = h.rows();
  if (h.cols() != params.input_dim) {
    throw ValidationError("GT layer expects width " + std::to_string(params.input_dim) +
                          ", got " + std::to_string(h.cols()));
  }
  if (adjacency.rows() != n || adjacency.cols() != n) {
    throw ValidationError("GT layer: adjacency does not match node count");
  }
  const BoolMatrix mask = adjacency.value().array() > 0.0;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.head_dim));

  const Eigen::Index dh = params.head_dim;
  const ad::Var q_all = ad::add_row(ad::matmul(h, params.w_q), params.b_q);
  const ad::Var k_all = ad::add_row(ad::matmul(h, params.w_k), params.b_k);
  const ad::Var v_all = ad::add_row(ad::matmul(h, params.w_v), params.b_v);
  std::vector<ad::Var> heads;
  for (int k = 0; k < params.n_heads; ++k) {
    const Eigen::Index c0 = k * dh;
    const ad::Var q = ad::slice_cols(q_all, c0, dh);
    const ad::Var key = ad::slice_cols(k_all, c0, dh);
    const ad::Var v = ad::slice_cols(v_all, c0, dh);
    const ad::Var w_e = ad::slice_cols(params.w_e, c0, dh);
    const ad::Var b_e = ad::slice_cols(params.b_e, c0, dh);
    // q_i . (k_j + A_ij w_e + b_e)
    const ad::Var qwe = ad::matmul(q, ad::transpose(w_e));
    const ad::Var qbe = ad::matmul(q, ad::transpose(b_e));
    ad::Var scores = ad::matmul(q, ad::transpose(key));
    scores = ad::add(scores, ad::mul_col(adjacency, qwe));
    scores = ad::add_col(scores, qbe);
    const ad::Var attn = ad::masked_row_softmax(ad::scale(scores, inv_sqrt), mask);
    if (capture) capture->heads.push_back(attn.value());
    // sum_j a_ij (v_j + A_ij w_e + b_e); rows of attn sum to one.
    ad::Var out = ad::matmul(attn, v);
    out = ad::add(out, ad::matmul(ad::row_sum(ad::hadamard(attn, adjacency)), w_e));
    out = ad::add_row(out, b_e);
    heads.push_back(out);
  }
  const ad::Var mixed = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  const ad::Var r = ad::add_row(ad::matmul(h, params.w_r), params.b_r);
  const ad::Var gate =
      ad::sigmoid(ad::matmul(ad::concat_cols({mixed, r, ad::sub(mixed, r)}), params.w_g));
  const ad::Var blended = ad::add(mixed, ad::mul_col(ad::sub(r, mixed), gate));
  return ad::relu(ad::layer_norm_rows(blended, params.ln_gamma, params.ln_beta, 1e-5));
}

std::size_t pooled_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("pooling ratio must lie in (0,1]");
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  if (k == 0) throw ValidationError("pooling would empty the graph");
  return std::min(k, n);
}

std::vector<int> top_k_indices(const Vector& scores, std::size_t k) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  order.resize(std::min(k, order.size()));
  return order;
}

PoolResult gpool(const ad::Var& h, const ad::Var& adjacency, double ratio, const ad::Var& score) {
  if (score.rows() != h.cols() || score.cols() != 1) {
    throw ValidationError("gPool: score vector length must equal feature width");
  }
  const std::size_t k = pooled_count(static_cast<std::size_t>(h.rows()), ratio);
  const ad::Var delta = ad::matmul(h, ad::l2_normalize(score));
  PoolResult result;
  result.record.delta = delta.value().col(0);
  result.record.idx = top_k_indices(result.record.delta, k);
  result.record.pre_features = h;
  result.record.pre_adjacency = adjacency;
  const ad::Var gate = ad::sigmoid(ad::gather_rows(delta, result.record.idx));
  result.features = ad::mul_col(ad::gather_rows(h, result.record.idx), gate);
  result.adjacency = ad::gather_block(adjacency, result.record.idx);
  return result;
}

ad::Var gunpool(const ad::Var& h_small, const PoolRecord& record) {
  if (h_small.rows() != static_cast<Eigen::Index>(record.idx.size()) ||
      h_small.cols() != record.pre_features.cols()) {
    throw ValidationError("gUnpool: features do not match the pool record");
  }
  return ad::distribute_rows(record.pre_features, h_small, record.idx);
}

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::gtunet: return "gtunet";
    case Architecture::stacking: return "stacking";
    case Architecture::residual: return "residual";
    case Architecture::cascade: return "cascade";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& name) {
  for (auto a : {Architecture::gtunet, Architecture::stacking, Architecture::residual,
                 Architecture::cascade}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown architecture '" + name +
                        "' (expected gtunet, stacking, residual or cascade)");
}

void EncoderConfig::validate() const {
  if (depth < 1) throw ValidationError("encoder depth must be >= 1");
  if (!(pool_ratio > 0.0 && pool_ratio <= 1.0)) {
    throw ValidationError("pool_ratio must lie in (0,1]");
  }
  if (n_heads < 1 || hidden_dim < 1 || hidden_dim % n_heads != 0) {
    throw ValidationError("hidden_dim must be a positive multiple of n_heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0,1)");
}

ad::Var feature_dropout(const ad::Var& h, double p, Rng& rng) {
  if (p <= 0.0) return h;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(h.rows(), h.cols());
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(rng) ? scale : 0.0;
  }
  return ad::hadamard(h, ad::constant(std::move(mask)));
}

GtEncoder::GtEncoder(Eigen::Index input_dim, EncoderConfig config, Rng& rng)
    : config_(config) {
  config_.validate();
  const auto n_layers = static_cast<std::size_t>(2 * config_.depth + 1);
  const Eigen::Index hid = config_.hidden_dim;
  for (std::size_t k = 0; k < n_layers; ++k) {
    Eigen::Index in = k == 0 ? input_dim : hid;
    if (config_.architecture == Architecture::cascade && k > 0) {
      in = static_cast<Eigen::Index>(k) * hid;
    }
    layers_.push_back(make_gt_layer(in, hid, config_.n_heads, rng));
  }
  if (config_.architecture == Architecture::gtunet) {
    for (int level = 0; level < config_.depth; ++level) {
      pool_scores_.push_back(glorot_parameter(hid, 1, rng));
    }
  }
}

std::vector<ad::Var> GtEncoder::parameters() const {
  std::vector<ad::Var> out;
  for (const auto& layer : layers_) {
    auto p = layer.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  out.insert(out.end(), pool_scores_.begin(), pool_scores_.end());
  return out;
}

ad::Var GtEncoder::apply_layer(std::size_t k, const ad::Var& h, const ad::Var& adjacency,
                               ForwardContext& ctx) const {
  AttentionCapture capture;
  const bool want = ctx.trace && ctx.trace->capture_attention;
  ad::Var out = gt_layer_forward(h, adjacency, layers_[k], want ? &capture : nullptr);
  if (ctx.trace) {
    ++ctx.trace->gt_layer_calls;
    if (want) ctx.trace->attention.push_back(std::move(capture));
  }
  return out;
}

ad::Var GtEncoder::forward(const ad::Var& x, const ad::Var& adjacency, ForwardContext& ctx) const {
  if (x.rows() != adjacency.rows()) {
    throw ValidationError("encoder: feature rows do not match adjacency");
  }
  const std::size_t n_layers = layers_.size();
  // Dropout acts on the encoder input only.
  ad::Var h0 = x;
  if (ctx.training && config_.dropout > 0.0) {
    if (!ctx.rng) throw RuntimeFailure("training forward pass needs a random stream");
    h0 = feature_dropout(x, config_.dropout, *ctx.rng);
  }
  switch (config_.architecture) {
    case Architecture::gtunet: {
      std::vector<PoolRecord> records;
      ad::Var h = h0;
      ad::Var a = adjacency;
      std::size_t k = 0;
      for (int level = 0; level < config_.depth; ++level) {
        h = apply_layer(k++, h, a, ctx);
        PoolResult pooled =
            gpool(h, a, config_.pool_ratio, pool_scores_[static_cast<std::size_t>(level)]);
        if (ctx.trace) ctx.trace->pool_indices.push_back(pooled.record.idx);
        h = pooled.features;
        a = pooled.adjacency;
        records.push_back(std::move(pooled.record));
      }
      h = apply_layer(k++, h, a, ctx);
      for (auto it = records.rbegin(); it != records.rend(); ++it) {
        h = gunpool(h, *it);
        a = it->pre_adjacency;
        h = apply_layer(k++, h, a, ctx);
      }
      return h;
    }
    case Architecture::stacking: {
      ad::Var h = h0;
      for (std::size_t k = 0; k < n_layers; ++k) h = apply_layer(k, h, adjacency, ctx);
      return h;
    }
    case Architecture::residual: {
      ad::Var h = h0;
      for (std::size_t k = 0; k < n_layers; ++k) {
        ad::Var out = apply_layer(k, h, adjacency, ctx);
        h = out.cols() == h.cols() ? ad::add(out, h) : out;
      }
      return h;
    }
    case Architecture::cascade: {
      std::vector<ad::Var> outputs;
      ad::Var h = apply_layer(0, h0, adjacency, ctx);
      outputs.push_back(h);
      for (std::size_t k = 1; k < n_layers; ++k) {
        const ad::Var input = outputs.size() == 1 ? outputs.front() : ad::concat_cols(outputs);
        h = apply_layer(k, input, adjacency, ctx);
        outputs.push_back(h);
      }
      return h;
    }
  }
  throw RuntimeFailure("unhandled architecture");
}

}  // namespace mmgt
