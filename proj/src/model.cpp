#include "tasif/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tasif/adam.hpp"

namespace tasif {

using nlohmann::json;

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kSum: return "sum";
    case FusionMode::kConcatLinear: return "concat_linear";
    case FusionMode::kGate: return "gate";
  }
  fail("unreachable fusion mode");
}

const char* filter_kind_name(FilterKind k) {
  switch (k) {
    case FilterKind::kAdaptive: return "adaptive";
    case FilterKind::kLearnable: return "learnable";
    case FilterKind::kLowPass: return "low_pass";
    case FilterKind::kHighSuppress: return "high_suppress";
    case FilterKind::kNone: return "none";
  }
  fail("unreachable filter kind");
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "sum") return FusionMode::kSum;
  if (s == "concat_linear") return FusionMode::kConcatLinear;
  if (s == "gate") return FusionMode::kGate;
  fail("unknown fusion mode '" + s + "' (want sum|concat_linear|gate)");
}

FilterKind parse_filter_kind(const std::string& s) {
  if (s == "adaptive") return FilterKind::kAdaptive;
  if (s == "learnable") return FilterKind::kLearnable;
  if (s == "low_pass") return FilterKind::kLowPass;
  if (s == "high_suppress") return FilterKind::kHighSuppress;
  if (s == "none") return FilterKind::kNone;
  fail("unknown filter kind '" + s + "' (want adaptive|learnable|low_pass|high_suppress|none)");
}

void ModelConfig::validate() const {
  TASIF_CHECK(d >= 1, "model: d must be positive, got " << d);
  TASIF_CHECK(heads >= 1 && d % heads == 0,
              "model: d (" << d << ") must be divisible by heads (" << heads << ")");
  TASIF_CHECK(n >= 2 && is_power_of_two(n), "model: n must be a power of two >= 2, got " << n);
  TASIF_CHECK(blocks >= 1, "model: need at least one block, got " << blocks);
  TASIF_CHECK(dropout >= 0.0 && dropout < 1.0, "model: dropout must lie in [0,1), got " << dropout);
  TASIF_CHECK(init_std > 0.0, "model: init_std must be positive, got " << init_std);
  TASIF_CHECK(filter_cutoff >= -1 && cutoff_bin() < bins(),
              "model: filter cutoff bin " << cutoff_bin() << " out of range [0," << bins() - 1 << "]");
}

VocabInfo vocab_of(const InteractionDataset& ds) {
  VocabInfo v;
  v.item_vocab = ds.item_count();
  for (i64 j = 0; j < ds.attr_type_count(); ++j) v.attr_vocabs.push_back(ds.attr_value_count(j));
  v.time_tokens = ds.time_token_count;
  return v;
}

namespace {

enum class InitKind { kTrunc, kZeros, kOnes, kOnePlusNoise, kNoise, kWeightLogit };

// Single source of truth for parameter inventory: construction, optimizer
// registration and checkpointing all traverse this walk, so they cannot
// disagree about order or shapes.
template <typename Params, typename Fn>
void walk_params(Params& p, Fn&& fn) {
  const ModelConfig& cfg = p.config;
  const VocabInfo& vb = p.vocab;
  const i64 d = cfg.d;
  const i64 m = cfg.bins();
  const i64 types = vb.attr_types();
  const FilterKind fk = cfg.effective_filter();

  fn("emb.id", p.e_id, Shape{vb.item_vocab, d}, InitKind::kTrunc, i64{1});
  if (cfg.use_tsp) fn("emb.time", p.e_t, Shape{vb.time_tokens + 1, d}, InitKind::kTrunc, i64{1});
  fn("emb.pos", p.e_p, Shape{cfg.n, d}, InitKind::kTrunc, i64{0});
  for (i64 j = 0; j < types; ++j)
    fn("emb.attr" + std::to_string(j), p.e_attr[static_cast<size_t>(j)],
       Shape{vb.attr_vocabs[static_cast<size_t>(j)], d}, InitKind::kTrunc, i64{1});
  fn("emb.ln.gain", p.emb_ln_gain, Shape{d}, InitKind::kOnes, i64{0});
  fn("emb.ln.bias", p.emb_ln_bias, Shape{d}, InitKind::kZeros, i64{0});

  auto stream = [&](const std::string& pre, auto& sp) {
    switch (fk) {
      case FilterKind::kAdaptive:
        fn(pre + ".filter.re", sp.filter_re, Shape{m, d}, InitKind::kOnePlusNoise, i64{0});
        fn(pre + ".filter.im", sp.filter_im, Shape{m, d}, InitKind::kNoise, i64{0});
        fn(pre + ".filter.alpha", sp.alpha_logit, Shape{1}, InitKind::kZeros, i64{0});
        break;
      case FilterKind::kLearnable:
        fn(pre + ".filter.re", sp.filter_re, Shape{m, d}, InitKind::kOnePlusNoise, i64{0});
        fn(pre + ".filter.im", sp.filter_im, Shape{m, d}, InitKind::kNoise, i64{0});
        break;
      case FilterKind::kHighSuppress:
        fn(pre + ".filter.scale", sp.hsf_scale, Shape{1}, InitKind::kOnes, i64{0});
        break;
      case FilterKind::kLowPass:
      case FilterKind::kNone:
        break;
    }
    if (fk != FilterKind::kNone) {
      fn(pre + ".filter.ln.gain", sp.filter_ln_gain, Shape{d}, InitKind::kOnes, i64{0});
      fn(pre + ".filter.ln.bias", sp.filter_ln_bias, Shape{d}, InitKind::kZeros, i64{0});
    }
    fn(pre + ".attn.wq", sp.wq, Shape{d, d}, InitKind::kTrunc, i64{0});
    fn(pre + ".attn.wk", sp.wk, Shape{d, d}, InitKind::kTrunc, i64{0});
    fn(pre + ".attn.wv", sp.wv, Shape{d, d}, InitKind::kTrunc, i64{0});
    fn(pre + ".attn.wo", sp.wo, Shape{d, d}, InitKind::kTrunc, i64{0});
    fn(pre + ".attn.ln.gain", sp.attn_ln_gain, Shape{d}, InitKind::kOnes, i64{0});
    fn(pre + ".attn.ln.bias", sp.attn_ln_bias, Shape{d}, InitKind::kZeros, i64{0});
    fn(pre + ".ffn.w1", sp.ffn_w1, Shape{d, 4 * d}, InitKind::kTrunc, i64{0});
    fn(pre + ".ffn.b1", sp.ffn_b1, Shape{4 * d}, InitKind::kZeros, i64{0});
    fn(pre + ".ffn.w2", sp.ffn_w2, Shape{4 * d, d}, InitKind::kTrunc, i64{0});
    fn(pre + ".ffn.b2", sp.ffn_b2, Shape{d}, InitKind::kZeros, i64{0});
    fn(pre + ".ffn.ln.gain", sp.ffn_ln_gain, Shape{d}, InitKind::kOnes, i64{0});
    fn(pre + ".ffn.ln.bias", sp.ffn_ln_bias, Shape{d}, InitKind::kZeros, i64{0});
  };

  for (i64 l = 0; l < cfg.blocks; ++l) {
    auto& bp = p.blocks[static_cast<size_t>(l)];
    const std::string b = "b" + std::to_string(l);
    stream(b + ".id", bp.id);
    for (i64 j = 0; j < types; ++j) stream(b + ".a" + std::to_string(j), bp.attrs[static_cast<size_t>(j)]);
    if (cfg.use_asif) {
      switch (cfg.fusion) {
        case FusionMode::kSum:
          break;
        case FusionMode::kConcatLinear:
          fn(b + ".fuse.w", bp.fuse_w, Shape{(types + 2) * d, d}, InitKind::kTrunc, i64{0});
          fn(b + ".fuse.b", bp.fuse_b, Shape{d}, InitKind::kZeros, i64{0});
          break;
        case FusionMode::kGate:
          for (i64 k = 0; k < types + 2; ++k) {
            const std::string g = b + ".gate" + std::to_string(k);
            fn(g + ".u", bp.gate_u[static_cast<size_t>(k)], Shape{d, d}, InitKind::kTrunc, i64{0});
            fn(g + ".c", bp.gate_c[static_cast<size_t>(k)], Shape{d}, InitKind::kZeros, i64{0});
          }
          break;
      }
    }
  }

  for (i64 j = 0; j < types; ++j)
    fn("loss.attr_weight" + std::to_string(j), p.attr_weight_logits[static_cast<size_t>(j)], Shape{1},
       InitKind::kWeightLogit, i64{0});
  if (cfg.use_i2a) {
    for (i64 j = 0; j < types; ++j) {
      const std::string h = "i2a" + std::to_string(j);
      fn(h + ".w", p.i2a_w[static_cast<size_t>(j)],
         Shape{vb.attr_vocabs[static_cast<size_t>(j)] - 1, d}, InitKind::kTrunc, i64{0});
      fn(h + ".b", p.i2a_b[static_cast<size_t>(j)],
         Shape{vb.attr_vocabs[static_cast<size_t>(j)] - 1}, InitKind::kZeros, i64{0});
    }
  }
}

}  // namespace

TasifParameters TasifParameters::init(const ModelConfig& cfg, const VocabInfo& vocab, u64 seed) {
  cfg.validate();
  TASIF_CHECK(vocab.item_vocab >= 2, "model: need at least one real item, vocab " << vocab.item_vocab);
  for (size_t j = 0; j < vocab.attr_vocabs.size(); ++j)
    TASIF_CHECK(vocab.attr_vocabs[j] >= 2,
                "model: attribute type " << j << " has no real values (vocab " << vocab.attr_vocabs[j] << ")");
  if (cfg.use_tsp) TASIF_CHECK(vocab.time_tokens >= 1, "model: time tokens requested but none exist");

  TasifParameters p;
  p.config = cfg;
  p.vocab = vocab;
  const size_t types = vocab.attr_vocabs.size();
  p.e_attr.resize(types);
  p.blocks.resize(static_cast<size_t>(cfg.blocks));
  for (auto& bp : p.blocks) {
    bp.attrs.resize(types);
    if (cfg.use_asif && cfg.fusion == FusionMode::kGate) {
      bp.gate_u.resize(types + 2);
      bp.gate_c.resize(types + 2);
    }
  }
  p.attr_weight_logits.resize(types);
  if (cfg.use_i2a) {
    p.i2a_w.resize(types);
    p.i2a_b.resize(types);
  }

  Rng rng(seed);
  walk_params(p, [&](const std::string&, Tensor& t, const Shape& shp, InitKind kind, i64) {
    switch (kind) {
      case InitKind::kTrunc: t = Tensor::randn(shp, rng, cfg.init_std); break;
      case InitKind::kZeros: t = Tensor::zeros(shp); break;
      case InitKind::kOnes: t = Tensor::full(shp, 1.0); break;
      case InitKind::kOnePlusNoise:
        t = Tensor::randn(shp, rng, cfg.init_std);
        for (double& x : t.data()) x += 1.0;
        break;
      case InitKind::kNoise: t = Tensor::randn(shp, rng, cfg.init_std); break;
      case InitKind::kWeightLogit: t = Tensor::full(shp, std::log(std::exp(1.0) - 1.0)); break;
    }
    t.set_requires_grad();
  });
  return p;
}

void TasifParameters::for_each(
    const std::function<void(const std::string&, const Tensor&, i64)>& fn) const {
  walk_params(*this, [&](const std::string& name, const Tensor& t, const Shape&, InitKind, i64 exempt) {
    fn(name, t, exempt);
  });
}

i64 TasifParameters::param_tensor_count() const {
  i64 c = 0;
  for_each([&](const std::string&, const Tensor&, i64) { ++c; });
  return c;
}

i64 TasifParameters::scalar_count() const {
  i64 c = 0;
  for_each([&](const std::string&, const Tensor& t, i64) { c += static_cast<i64>(t.data().size()); });
  return c;
}

void TasifParameters::register_all(Adam& opt) const {
  for_each([&](const std::string& name, const Tensor& t, i64 exempt) { opt.add_param(name, t, exempt); });
}

std::vector<double> build_attention_mask(const SequenceBatch& b, bool causal) {
  const i64 B = b.batch_size, n = b.n;
  std::vector<double> mask(static_cast<size_t>(B * n * n), 0.0);
  for (i64 r = 0; r < B; ++r)
    for (i64 i = 0; i < n; ++i)
      for (i64 j = 0; j < n; ++j) {
        bool admissible = b.padding_mask[static_cast<size_t>(r * n + j)] > 0.5 && (!causal || j <= i);
        if (!admissible) mask[static_cast<size_t>((r * n + i) * n + j)] = -1e9;
      }
  return mask;
}

std::vector<i64> last_positions(const SequenceBatch& b) {
  std::vector<i64> pos(static_cast<size_t>(b.batch_size), -1);
  for (i64 r = 0; r < b.batch_size; ++r) {
    for (i64 i = b.n - 1; i >= 0; --i)
      if (b.padding_mask[static_cast<size_t>(r * b.n + i)] > 0.5) {
        pos[static_cast<size_t>(r)] = i;
        break;
      }
    TASIF_CHECK(pos[static_cast<size_t>(r)] >= 0, "batch row " << r << " is all padding");
  }
  return pos;
}

Tensor TasifModel::embed_id_stream(const SequenceBatch& batch, bool training, Rng& rng) const {
  const ModelConfig& cfg = p_.config;
  Shape lead{batch.batch_size, batch.n};
  Tensor h = embedding_lookup(p_.e_id, batch.items, lead);
  if (cfg.use_tsp) h = add(h, embedding_lookup(p_.e_t, batch.time_tokens, lead));
  if (!cfg.use_asif) h = add_rows_broadcast(h, p_.e_p);  // positions fall back to the input
  h = layer_norm(h, p_.emb_ln_gain, p_.emb_ln_bias);
  h = dropout(h, cfg.dropout, training, rng);
  return mul_rows_const(h, batch.padding_mask);  // padding slots carry no content
}

Tensor TasifModel::embed_attr_stream(const SequenceBatch& batch, i64 type) const {
  const auto& blk = batch.attributes[static_cast<size_t>(type)];
  // empty bags (padding positions) come out as zero rows
  return embedding_bag_mean(p_.e_attr[static_cast<size_t>(type)], blk.values, blk.mask, blk.m,
                            Shape{batch.batch_size, batch.n});
}

namespace {

// constant 0/1 plane over [bins, d]: 1 where bin <= cutoff, else inverted
Tensor band_plane(i64 bins, i64 d, i64 cutoff, bool low_band) {
  std::vector<double> v(static_cast<size_t>(bins * d));
  for (i64 k = 0; k < bins; ++k)
    for (i64 c = 0; c < d; ++c)
      v[static_cast<size_t>(k * d + c)] = ((k <= cutoff) == low_band) ? 1.0 : 0.0;
  return Tensor::from_data({bins, d}, v);
}

}  // namespace

Tensor TasifModel::apply_filter(const Tensor& h, const StreamBlockParams& sp, bool training,
                                Rng& rng) const {
  const ModelConfig& cfg = p_.config;
  const FilterKind fk = cfg.effective_filter();
  if (fk == FilterKind::kNone) return h;  // exact pass-through, same handle

  auto [sr, si] = rfft_op(h);
  Tensor filtered;
  switch (fk) {
    case FilterKind::kAdaptive:
    case FilterKind::kLearnable: {
      auto [fr, fi] = complex_modulate(sr, si, sp.filter_re, sp.filter_im);
      filtered = irfft_op(fr, fi, cfg.n);
      break;
    }
    case FilterKind::kLowPass: {
      Tensor keep = band_plane(cfg.bins(), cfg.d, cfg.cutoff_bin(), true);
      Tensor zero = Tensor::zeros({cfg.bins(), cfg.d});
      auto [fr, fi] = complex_modulate(sr, si, keep, zero);
      filtered = irfft_op(fr, fi, cfg.n);
      break;
    }
    case FilterKind::kHighSuppress: {
      Tensor low = band_plane(cfg.bins(), cfg.d, cfg.cutoff_bin(), true);
      Tensor high = band_plane(cfg.bins(), cfg.d, cfg.cutoff_bin(), false);
      Tensor wr = add(low, scale_by(high, sp.hsf_scale));
      Tensor zero = Tensor::zeros({cfg.bins(), cfg.d});
      auto [fr, fi] = complex_modulate(sr, si, wr, zero);
      filtered = irfft_op(fr, fi, cfg.n);
      break;
    }
    case FilterKind::kNone: fail("unreachable");
  }

  Tensor branch = dropout(filtered, cfg.dropout, training, rng);
  Tensor mixed;
  if (fk == FilterKind::kAdaptive) {
    Tensor a = sigmoid(sp.alpha_logit);                    // [1]
    Tensor one_minus = add_scalar(scale(a, -1.0), 1.0);    // 1 - a
    mixed = add(scale_by(branch, a), scale_by(h, one_minus));
  } else {
    mixed = add(branch, h);  // plain residual
  }
  return layer_norm(mixed, sp.filter_ln_gain, sp.filter_ln_bias);
}

Tensor TasifModel::fuse_sources(const Tensor& h_id, const std::vector<Tensor>& h_attrs,
                                const BlockParams& bp) const {
  const ModelConfig& cfg = p_.config;
  const i64 B = h_id.shape()[0];
  auto positions = [&] {  // e_p broadcast to [B, n, d]
    return add_rows_broadcast(Tensor::zeros({B, cfg.n, cfg.d}), p_.e_p);
  };
  switch (cfg.fusion) {
    case FusionMode::kSum: {
      Tensor s = h_id;
      for (const Tensor& ha : h_attrs) s = add(s, ha);
      return add_rows_broadcast(s, p_.e_p);
    }
    case FusionMode::kConcatLinear: {
      std::vector<Tensor> parts{h_id};
      parts.insert(parts.end(), h_attrs.begin(), h_attrs.end());
      parts.push_back(positions());
      return add_bias(matmul(concat_lastdim(parts), bp.fuse_w), bp.fuse_b);
    }
    case FusionMode::kGate: {
      std::vector<Tensor> sources{h_id};
      sources.insert(sources.end(), h_attrs.begin(), h_attrs.end());
      sources.push_back(positions());
      Tensor out;
      for (size_t k = 0; k < sources.size(); ++k) {
        Tensor g = sigmoid(add_bias(matmul(h_id, bp.gate_u[k]), bp.gate_c[k]));
        Tensor term = mul(g, sources[k]);
        out = k == 0 ? term : add(out, term);
      }
      return out;
    }
  }
  fail("unreachable fusion mode");
}

Tensor TasifModel::attention(const Tensor& queries_from, const Tensor& values_from,
                             const StreamBlockParams& sp, const std::vector<double>& mask,
                             bool training, Rng& rng, Tensor* v_out, Tensor* probs_out) const {
  const ModelConfig& cfg = p_.config;
  Tensor q = split_heads(matmul(queries_from, sp.wq), cfg.heads);
  Tensor k = split_heads(matmul(queries_from, sp.wk), cfg.heads);
  Tensor v = split_heads(matmul(values_from, sp.wv), cfg.heads);
  Tensor scores = scale(bmm(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
  scores = add_attention_mask(scores, mask, cfg.heads);
  Tensor probs = softmax_rows(scores);
  if (v_out) *v_out = v;
  if (probs_out) *probs_out = probs;
  Tensor ctx = matmul(merge_heads(bmm(probs, v), cfg.heads), sp.wo);
  Tensor res = add(values_from, dropout(ctx, cfg.dropout, training, rng));
  return layer_norm(res, sp.attn_ln_gain, sp.attn_ln_bias);
}

Tensor TasifModel::feed_forward(const Tensor& h, const StreamBlockParams& sp, bool training,
                                Rng& rng) const {
  const ModelConfig& cfg = p_.config;
  Tensor inner = gelu(add_bias(matmul(h, sp.ffn_w1), sp.ffn_b1));
  Tensor out = add_bias(matmul(inner, sp.ffn_w2), sp.ffn_b2);
  Tensor res = add(h, dropout(out, cfg.dropout, training, rng));
  return layer_norm(res, sp.ffn_ln_gain, sp.ffn_ln_bias);
}

ForwardOutput TasifModel::forward(const SequenceBatch& batch, bool training, Rng& rng,
                                  ForwardTrace* trace) const {
  const ModelConfig& cfg = p_.config;
  const i64 types = p_.vocab.attr_types();
  TASIF_CHECK(batch.n == cfg.n, "batch length " << batch.n << " != model length " << cfg.n);
  TASIF_CHECK(batch.batch_size >= 1, "empty batch");
  TASIF_CHECK(static_cast<i64>(batch.attributes.size()) == types,
              "batch carries " << batch.attributes.size() << " attribute types, model wants " << types);

  const std::vector<double> mask = build_attention_mask(batch, cfg.causal);

  Tensor h_id = embed_id_stream(batch, training, rng);
  std::vector<Tensor> h_attr;
  h_attr.reserve(static_cast<size_t>(types));
  for (i64 j = 0; j < types; ++j) h_attr.push_back(embed_attr_stream(batch, j));

  if (trace) {
    trace->v_id.clear();
    trace->attn_id.clear();
    trace->attn_attr.clear();
    trace->fused.clear();
  }

  for (i64 l = 0; l < cfg.blocks; ++l) {
    const BlockParams& bp = p_.blocks[static_cast<size_t>(l)];

    Tensor hb_id = apply_filter(h_id, bp.id, training, rng);
    std::vector<Tensor> hb_attr;
    hb_attr.reserve(static_cast<size_t>(types));
    for (i64 j = 0; j < types; ++j)
      hb_attr.push_back(apply_filter(h_attr[static_cast<size_t>(j)], bp.attrs[static_cast<size_t>(j)],
                                     training, rng));

    Tensor q_src = cfg.use_asif ? fuse_sources(hb_id, hb_attr, bp) : hb_id;
    if (trace) trace->fused.push_back(cfg.use_asif ? q_src : Tensor());

    Tensor v_cap, probs_cap;
    Tensor t_id = attention(q_src, hb_id, bp.id, mask, training, rng, trace ? &v_cap : nullptr,
                            trace ? &probs_cap : nullptr);
    if (trace) {
      trace->v_id.push_back(v_cap);
      trace->attn_id.push_back(probs_cap);
    }
    h_id = feed_forward(t_id, bp.id, training, rng);

    std::vector<Tensor> attr_probs;
    for (i64 j = 0; j < types; ++j) {
      Tensor pj;
      Tensor t_a = attention(hb_attr[static_cast<size_t>(j)], hb_attr[static_cast<size_t>(j)],
                             bp.attrs[static_cast<size_t>(j)], mask, training, rng, nullptr,
                             trace ? &pj : nullptr);
      if (trace) attr_probs.push_back(pj);
      h_attr[static_cast<size_t>(j)] =
          feed_forward(t_a, bp.attrs[static_cast<size_t>(j)], training, rng);
    }
    if (trace) trace->attn_attr.push_back(std::move(attr_probs));
  }

  if (trace) trace->h_id_final = h_id;

  const std::vector<i64> pos = last_positions(batch);
  ForwardOutput out;
  out.s_id = gather_positions(h_id, pos);
  for (i64 j = 0; j < types; ++j)
    out.s_attr.push_back(gather_positions(h_attr[static_cast<size_t>(j)], pos));
  return out;
}

// ---- checkpointing ----

namespace {

constexpr char kMagic[8] = {'T', 'S', 'I', 'F', 'C', 'K', 'P', 'T'};
constexpr u64 kVersion = 1;

void write_u64le(std::ostream& os, u64 v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

u64 read_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  TASIF_CHECK(is.good(), "checkpoint: truncated stream");
  u64 v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<u64>(b[i]) << (8 * i);
  return v;
}

void write_f64le(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) {
    u64 bits;
    std::memcpy(&bits, &x, 8);
    write_u64le(os, bits);
  }
}

// FNV-1a over the little-endian byte image of a block, chained through h
u64 hash_f64le(const std::vector<double>& v, u64 h) {
  for (double x : v) {
    u64 bits;
    std::memcpy(&bits, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    h = fnv1a64(b, 8, h);
  }
  return h;
}

void read_f64le(std::istream& is, std::vector<double>& v) {
  for (double& x : v) {
    u64 bits = read_u64le(is);
    std::memcpy(&x, &bits, 8);
  }
}

std::string hex_u64(u64 v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

json setup_json(const ModelConfig& cfg, const VocabInfo& vocab) {
  json j;
  j["d"] = cfg.d;
  j["n"] = cfg.n;
  j["blocks"] = cfg.blocks;
  j["heads"] = cfg.heads;
  j["dropout"] = cfg.dropout;
  j["init_std"] = cfg.init_std;
  j["fusion"] = fusion_mode_name(cfg.fusion);
  j["filter"] = filter_kind_name(cfg.filter);
  j["filter_cutoff"] = cfg.filter_cutoff;
  j["causal"] = cfg.causal;
  j["use_tsp"] = cfg.use_tsp;
  j["use_aff"] = cfg.use_aff;
  j["use_asif"] = cfg.use_asif;
  j["use_nap"] = cfg.use_nap;
  j["use_ura"] = cfg.use_ura;
  j["use_i2a"] = cfg.use_i2a;
  j["item_vocab"] = vocab.item_vocab;
  j["attr_vocabs"] = vocab.attr_vocabs;
  j["time_tokens"] = vocab.time_tokens;
  return j;
}

void setup_from_json(const json& j, ModelConfig& cfg, VocabInfo& vocab) {
  cfg.d = j.at("d").get<i64>();
  cfg.n = j.at("n").get<i64>();
  cfg.blocks = j.at("blocks").get<i64>();
  cfg.heads = j.at("heads").get<i64>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.init_std = j.at("init_std").get<double>();
  cfg.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  cfg.filter = parse_filter_kind(j.at("filter").get<std::string>());
  cfg.filter_cutoff = j.at("filter_cutoff").get<i64>();
  cfg.causal = j.at("causal").get<bool>();
  cfg.use_tsp = j.at("use_tsp").get<bool>();
  cfg.use_aff = j.at("use_aff").get<bool>();
  cfg.use_asif = j.at("use_asif").get<bool>();
  cfg.use_nap = j.at("use_nap").get<bool>();
  cfg.use_ura = j.at("use_ura").get<bool>();
  cfg.use_i2a = j.at("use_i2a").get<bool>();
  vocab.item_vocab = j.at("item_vocab").get<i64>();
  vocab.attr_vocabs = j.at("attr_vocabs").get<std::vector<i64>>();
  vocab.time_tokens = j.at("time_tokens").get<i64>();
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg, const VocabInfo& vocab) {
  return setup_json(cfg, vocab).dump();
}

void require_same_setup(const TasifParameters& a, const ModelConfig& cfg, const VocabInfo& vocab) {
  TASIF_CHECK(config_to_json(a.config, a.vocab) == config_to_json(cfg, vocab),
              "checkpoint setup differs from the requested configuration:\n  have "
                  << config_to_json(a.config, a.vocab) << "\n  want " << config_to_json(cfg, vocab));
}

void save_checkpoint(const std::string& path, const TasifParameters& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  TASIF_CHECK(os.is_open(), "checkpoint: cannot open '" << path << "' for writing");
  os.write(kMagic, 8);
  write_u64le(os, kVersion);

  const std::string setup = config_to_json(params.config, params.vocab);
  json manifest;
  manifest["setup"] = setup_json(params.config, params.vocab);
  manifest["setup_key"] = hex_u64(fnv1a64(setup));
  json inventory = json::array();
  u64 data_key = 0xcbf29ce484222325ull;
  params.for_each([&](const std::string& name, const Tensor& t, i64) {
    inventory.push_back({{"name", name}, {"count", t.data().size()}});
    data_key = hash_f64le(t.data(), data_key);
  });
  manifest["params"] = inventory;
  manifest["data_key"] = hex_u64(data_key);
  const std::string mtxt = manifest.dump();
  write_u64le(os, mtxt.size());
  os.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));

  params.for_each([&](const std::string&, const Tensor& t, i64) { write_f64le(os, t.data()); });
  os.flush();
  TASIF_CHECK(os.good(), "checkpoint: write to '" << path << "' failed");
}

TasifParameters load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  TASIF_CHECK(is.is_open(), "checkpoint: cannot open '" << path << "'");
  char magic[8];
  is.read(magic, 8);
  TASIF_CHECK(is.good() && std::memcmp(magic, kMagic, 8) == 0,
              "checkpoint: '" << path << "' is not a model checkpoint");
  u64 version = read_u64le(is);
  TASIF_CHECK(version == kVersion, "checkpoint: format version " << version << " unsupported");

  u64 mlen = read_u64le(is);
  TASIF_CHECK(mlen > 0 && mlen < (1u << 24), "checkpoint: implausible manifest size " << mlen);
  std::string mtxt(mlen, '\0');
  is.read(mtxt.data(), static_cast<std::streamsize>(mlen));
  TASIF_CHECK(is.good(), "checkpoint: truncated manifest");
  json manifest = json::parse(mtxt, nullptr, false);
  TASIF_CHECK(!manifest.is_discarded(), "checkpoint: manifest is not valid JSON");

  ModelConfig cfg;
  VocabInfo vocab;
  setup_from_json(manifest.at("setup"), cfg, vocab);
  const std::string setup = config_to_json(cfg, vocab);
  TASIF_CHECK(manifest.at("setup_key").get<std::string>() == hex_u64(fnv1a64(setup)),
              "checkpoint: setup key mismatch, manifest was altered");

  TasifParameters p = TasifParameters::init(cfg, vocab, 0);
  const json& inventory = manifest.at("params");
  size_t idx = 0;
  u64 data_key = 0xcbf29ce484222325ull;
  walk_params(p, [&](const std::string& name, Tensor& t, const Shape&, InitKind, i64) {
    TASIF_CHECK(idx < inventory.size(), "checkpoint: manifest lists too few parameters");
    const json& entry = inventory[idx];
    TASIF_CHECK(entry.at("name").get<std::string>() == name,
                "checkpoint: parameter '" << entry.at("name").get<std::string>() << "' where '"
                                          << name << "' expected");
    TASIF_CHECK(entry.at("count").get<size_t>() == t.data().size(),
                "checkpoint: parameter '" << name << "' holds " << entry.at("count").get<size_t>()
                                          << " values, model wants " << t.data().size());
    read_f64le(is, t.data());
    data_key = hash_f64le(t.data(), data_key);
    ++idx;
  });
  TASIF_CHECK(idx == inventory.size(), "checkpoint: manifest lists extra parameters");
  TASIF_CHECK(manifest.at("data_key").get<std::string>() == hex_u64(data_key),
              "checkpoint: parameter payload does not match its recorded hash");
  is.peek();
  TASIF_CHECK(is.eof(), "checkpoint: trailing bytes after parameter blocks");
  return p;
}

}  // namespace tasif
