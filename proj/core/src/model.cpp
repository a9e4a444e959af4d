#include "tscr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tscr/init.hpp"

namespace tscr {

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || layers == 0)
    throw std::invalid_argument("model dim, heads and layers must be positive");
  if (dim % heads != 0)
    throw std::invalid_argument("model dim " + std::to_string(dim) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  if (max_len < 2) throw std::invalid_argument("max_len must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(mask_proportion > 0.0 && mask_proportion < 1.0))
    throw std::invalid_argument("mask_proportion must lie in (0, 1)");
}

KeyValues model_config_to_kv(const ModelConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"dim", std::to_string(c.dim)},
          {"layers", std::to_string(c.layers)},
          {"heads", std::to_string(c.heads)},
          {"max_len", std::to_string(c.max_len)},
          {"dropout", num(c.dropout)},
          {"mask_proportion", num(c.mask_proportion)},
          {"ffn_multiplier", std::to_string(c.ffn_multiplier)},
          {"layer_norm_eps", num(c.layer_norm_eps)},
          {"init_std", num(c.init_std)}};
}

void apply_model_config(ModelConfig& c, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    try {
      if (k == "dim") c.dim = std::stoul(v);
      else if (k == "layers") c.layers = std::stoul(v);
      else if (k == "heads") c.heads = std::stoul(v);
      else if (k == "max_len") c.max_len = std::stoul(v);
      else if (k == "dropout") c.dropout = std::stod(v);
      else if (k == "mask_proportion") c.mask_proportion = std::stod(v);
      else if (k == "ffn_multiplier") c.ffn_multiplier = std::stoul(v);
      else if (k == "layer_norm_eps") c.layer_norm_eps = std::stod(v);
      else if (k == "init_std") c.init_std = std::stod(v);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad value for " + k + ": " + v);
    }
  }
}

std::string param_names::layer(std::size_t n, const char* leaf) {
  return "encoder." + std::to_string(n) + "." + leaf;
}

TscrModel::TscrModel(ModelConfig config, std::vector<std::uint8_t> blocked, std::uint64_t seed)
    : config_(config), blocked_(std::move(blocked)) {
  config_.validate();
  const auto d = config_.dim, v = blocked_.size(), f = config_.ffn_dim();
  if (v <= static_cast<std::size_t>(Vocab::kFirstEntity))
    throw std::invalid_argument("vocabulary holds no entities");
  Rng rng(derive_seed(seed, 1));
  const double sd = config_.init_std;
  params_.add(param_names::kEntity, truncated_normal_tensor({v, d}, sd, rng));
  params_.add(param_names::kPosition, truncated_normal_tensor({config_.max_len, d}, sd, rng),
              /*decay=*/false);
  for (std::size_t n = 0; n < config_.layers; ++n) {
    using param_names::layer;
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      params_.add(layer(n, w), truncated_normal_tensor({d, d}, sd, rng));
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      params_.add(layer(n, b), Tensor({d}));
    params_.add(layer(n, "ffn.w1"), truncated_normal_tensor({d, f}, sd, rng));
    params_.add(layer(n, "ffn.b1"), Tensor({f}));
    params_.add(layer(n, "ffn.w2"), truncated_normal_tensor({f, d}, sd, rng));
    params_.add(layer(n, "ffn.b2"), Tensor({d}));
    params_.add(layer(n, "ln1.gamma"), Tensor({d}, 1.0f), false);
    params_.add(layer(n, "ln1.beta"), Tensor({d}), false);
    params_.add(layer(n, "ln2.gamma"), Tensor({d}, 1.0f), false);
    params_.add(layer(n, "ln2.beta"), Tensor({d}), false);
  }
  params_.add(param_names::kHeadW1, truncated_normal_tensor({d, d}, sd, rng));
  params_.add(param_names::kHeadB1, Tensor({d}));
  params_.add(param_names::kHeadBias, Tensor({v}));
}

void TscrModel::set_entity_embeddings(const Tensor& table) {
  auto& dst = params_.get(param_names::kEntity);
  if (table.shape() != dst.shape())
    throw std::invalid_argument("entity table shape " + shape_string(table.shape()) +
                                " does not match model " + shape_string(dst.shape()));
  dst = table;
}

// ---------------------------------------------------------------------------

template <class T>
ParamVars<T>::ParamVars(BasicTape<T>& tape, const BasicParameterSet<T>& params) {
  for (const auto& p : params.items()) vars_.emplace(p.name, tape.parameter(p.value, p.name));
}

template <class T>
Var ParamVars<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter not on tape: " + name);
  return it->second;
}

template <class T>
Var embed_inputs(BasicTape<T>& tape, const ParamVars<T>& vars, std::span<const EntityId> ids,
                 std::size_t first_position, std::size_t vocab_size) {
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
      throw std::out_of_range("embed_inputs: id " + std::to_string(id) + " outside vocabulary");
  }
  std::vector<std::int32_t> positions(ids.size());
  std::iota(positions.begin(), positions.end(), static_cast<std::int32_t>(first_position));
  std::vector<std::uint8_t> keep(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) keep[i] = ids[i] != Vocab::kPad;
  const Var s = gather_rows(tape, vars[param_names::kEntity], ids);
  const Var p = gather_rows(tape, vars[param_names::kPosition],
                            std::span<const std::int32_t>(positions));
  return mask_rows(tape, add(tape, s, p), std::span<const std::uint8_t>(keep));
}

namespace {

template <class T>
Var linear(BasicTape<T>& tape, const ParamVars<T>& vars, Var x, const std::string& w,
           const std::string& b) {
  return add_bias(tape, matmul(tape, x, vars[w]), vars[b]);
}

template <class T>
Var maybe_dropout(BasicTape<T>& tape, Var x, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return x;
  return dropout(tape, x, rate, *rng);
}

}  // namespace

template <class T>
Var multi_head_attention(BasicTape<T>& tape, const ParamVars<T>& vars, const ModelConfig& config,
                         std::size_t n, Var x, std::span<const std::uint8_t> valid) {
  using param_names::layer;
  const Var q = linear(tape, vars, x, layer(n, "attn.wq"), layer(n, "attn.bq"));
  const Var k = linear(tape, vars, x, layer(n, "attn.wk"), layer(n, "attn.bk"));
  const Var v = linear(tape, vars, x, layer(n, "attn.wv"), layer(n, "attn.bv"));
  std::vector<std::uint8_t> blocked_keys(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) blocked_keys[i] = valid[i] ? 0 : 1;
  const auto hd = config.head_dim();
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < config.heads; ++h) {
    const Var qh = slice_cols(tape, q, h * hd, hd);
    const Var kh = slice_cols(tape, k, h * hd, hd);
    const Var vh = slice_cols(tape, v, h * hd, hd);
    const Var scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt);
    const Var weights = softmax_masked(tape, scores, std::span<const std::uint8_t>(blocked_keys));
    heads.push_back(matmul(tape, weights, vh));
  }
  const Var joined = heads.size() == 1 ? heads[0] : concat_cols(tape, std::span<const Var>(heads));
  return linear(tape, vars, joined, layer(n, "attn.wo"), layer(n, "attn.bo"));
}

template <class T>
Var encoder_layer(BasicTape<T>& tape, const ParamVars<T>& vars, const ModelConfig& config,
                  std::size_t n, Var h, std::span<const std::uint8_t> valid, double dropout_rate,
                  Rng* dropout_rng) {
  using param_names::layer;
  const T eps = static_cast<T>(config.layer_norm_eps);
  Var ffn = gelu(tape, linear(tape, vars, h, layer(n, "ffn.w1"), layer(n, "ffn.b1")));
  ffn = linear(tape, vars, ffn, layer(n, "ffn.w2"), layer(n, "ffn.b2"));
  ffn = maybe_dropout(tape, ffn, dropout_rate, dropout_rng);
  const Var a = layer_norm(tape, add(tape, h, ffn), vars[layer(n, "ln1.gamma")],
                           vars[layer(n, "ln1.beta")], eps);
  Var attn = multi_head_attention(tape, vars, config, n, a, valid);
  attn = maybe_dropout(tape, attn, dropout_rate, dropout_rng);
  return layer_norm(tape, add(tape, a, attn), vars[layer(n, "ln2.gamma")],
                    vars[layer(n, "ln2.beta")], eps);
}

template <class T>
Var predict_probs(BasicTape<T>& tape, const ParamVars<T>& vars, Var hidden,
                  std::span<const std::size_t> rows, std::span<const std::uint8_t> blocked) {
  std::vector<std::int32_t> idx(rows.begin(), rows.end());
  const Var picked = gather_rows(tape, hidden, std::span<const std::int32_t>(idx));
  const Var z = gelu(tape, linear(tape, vars, picked, param_names::kHeadW1, param_names::kHeadB1));
  const Var logits =
      add_bias(tape, matmul_nt(tape, z, vars[param_names::kEntity]), vars[param_names::kHeadBias]);
  return softmax_masked(tape, logits, blocked);
}

template <class T>
Var cloze_loss(BasicTape<T>& tape, Var probs, std::span<const EntityId> targets,
               std::size_t* clamped) {
  return nll_from_probs(tape, probs, targets, clamped);
}

template <class T>
ForwardResult<T> forward(BasicTape<T>& tape, const BasicParameterSet<T>& params,
                         const ModelConfig& config, std::span<const std::uint8_t> blocked,
                         const ClozeSample& sample, std::span<const std::size_t> positions,
                         const ForwardOptions& options) {
  const auto len = sample.input.size();
  if (len != config.max_len)
    throw std::invalid_argument("forward: sample length " + std::to_string(len) +
                                " != max_len " + std::to_string(config.max_len));
  std::vector<std::uint8_t> valid = sample.valid;
  if (valid.empty()) {
    valid.resize(len);
    for (std::size_t i = 0; i < len; ++i) valid[i] = sample.input[i] != Vocab::kPad;
  }
  std::size_t begin = 0;
  if (options.trim_leading_pad) {
    while (begin < len && !valid[begin]) ++begin;
    for (auto p : positions) begin = std::min(begin, p);
    if (begin == len) begin = len - 1;
  }
  const std::span<const EntityId> ids(sample.input.data() + begin, len - begin);
  const std::span<const std::uint8_t> window_valid(valid.data() + begin, len - begin);

  ParamVars<T> vars(tape, params);
  Var h = embed_inputs(tape, vars, ids, begin, blocked.size());
  for (std::size_t n = 0; n < config.layers; ++n) {
    h = encoder_layer(tape, vars, config, n, h, window_valid, options.dropout_rate,
                      options.dropout_rng);
  }
  ForwardResult<T> result;
  std::vector<std::size_t> rows;
  for (auto p : positions) {
    if (p < begin || p >= len) throw std::out_of_range("forward: position outside sample");
    rows.push_back(p - begin);
    result.positions.push_back(p);
  }
  result.probs = predict_probs(tape, vars, h, std::span<const std::size_t>(rows), blocked);
  return result;
}

template <class T>
Var sample_loss(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                std::span<const std::uint8_t> blocked, const ClozeSample& sample,
                const ForwardOptions& options, std::size_t* clamped) {
  if (sample.targets.empty()) throw std::invalid_argument("sample_loss: sample has no targets");
  std::vector<std::size_t> positions;
  std::vector<EntityId> targets;
  for (const auto& t : sample.targets) {
    positions.push_back(t.position);
    targets.push_back(t.item);
  }
  auto fwd = forward(tape, params, config, blocked, sample,
                     std::span<const std::size_t>(positions), options);
  return cloze_loss(tape, fwd.probs, std::span<const EntityId>(targets), clamped);
}

#define TSCR_INSTANTIATE_MODEL(T)                                                              \
  template class ParamVars<T>;                                                                 \
  template Var embed_inputs<T>(BasicTape<T>&, const ParamVars<T>&, std::span<const EntityId>,  \
                               std::size_t, std::size_t);                                      \
  template Var multi_head_attention<T>(BasicTape<T>&, const ParamVars<T>&, const ModelConfig&, \
                                       std::size_t, Var, std::span<const std::uint8_t>);      \
  template Var encoder_layer<T>(BasicTape<T>&, const ParamVars<T>&, const ModelConfig&,        \
                                std::size_t, Var, std::span<const std::uint8_t>, double, Rng*); \
  template Var predict_probs<T>(BasicTape<T>&, const ParamVars<T>&, Var,                       \
                                std::span<const std::size_t>, std::span<const std::uint8_t>);  \
  template Var cloze_loss<T>(BasicTape<T>&, Var, std::span<const EntityId>, std::size_t*);     \
  template ForwardResult<T> forward<T>(BasicTape<T>&, const BasicParameterSet<T>&,             \
                                       const ModelConfig&, std::span<const std::uint8_t>,      \
                                       const ClozeSample&, std::span<const std::size_t>,       \
                                       const ForwardOptions&);                                 \
  template Var sample_loss<T>(BasicTape<T>&, const BasicParameterSet<T>&, const ModelConfig&,  \
                              std::span<const std::uint8_t>, const ClozeSample&,               \
                              const ForwardOptions&, std::size_t*);

TSCR_INSTANTIATE_MODEL(float)
TSCR_INSTANTIATE_MODEL(double)

#undef TSCR_INSTANTIATE_MODEL

// ---------------------------------------------------------------------------

Tensor predict_scores(const TscrModel& model, const ClozeSample& sample) {
  std::vector<std::size_t> positions;
  for (const auto& t : sample.targets) positions.push_back(t.position);
  if (positions.empty()) {
    for (std::size_t i = 0; i < sample.input.size(); ++i)
      if (sample.input[i] == Vocab::kMask) positions.push_back(i);
  }
  Tape tape;
  auto fwd = forward(tape, model.params(), model.config(),
                     std::span<const std::uint8_t>(model.blocked()), sample,
                     std::span<const std::size_t>(positions));
  return tape.value(fwd.probs);
}

std::size_t rank_of(std::span<const float> probs, std::span<const std::uint8_t> blocked,
                    EntityId target) {
  const auto t = static_cast<std::size_t>(target);
  if (t >= probs.size()) throw std::out_of_range("rank_of: target outside distribution");
  const float pt = probs[t];
  std::size_t better = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (blocked[i] || i == t) continue;
    if (probs[i] > pt || (probs[i] == pt && i < t)) ++better;
  }
  return better + 1;
}

std::vector<Recommendation> recommend_topk(const TscrModel& model, std::span<const EntityId> context,
                                           std::size_t k) {
  if (k == 0) throw std::invalid_argument("recommend_topk: k must be >= 1");
  ClozeSample raw;
  raw.input.assign(context.begin(), context.end());
  raw.input.push_back(Vocab::kMask);
  raw.valid.assign(raw.input.size(), 1);
  raw.targets.push_back({raw.input.size() - 1, 0});
  auto sample = pad_truncate(std::move(raw), model.config().max_len);
  const auto probs = predict_scores(model, sample);
  const auto& blocked = model.blocked();
  std::vector<Recommendation> all;
  for (std::size_t i = 0; i < blocked.size(); ++i)
    if (!blocked[i]) all.push_back({static_cast<EntityId>(i), probs[i]});
  const auto take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Recommendation& a, const Recommendation& b) {
                      return a.score > b.score || (a.score == b.score && a.item < b.item);
                    });
  all.resize(take);
  return all;
}

}  // namespace tscr
