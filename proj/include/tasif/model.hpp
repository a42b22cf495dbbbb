// Sequential recommender: shared-timeline time tokens on the item stream,
// per-stream frequency-domain filtering, and side-information fusion that
// steers attention without entering the value path.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tasif/data.hpp"
#include "tasif/ops.hpp"

namespace tasif {

enum class FusionMode { kSum, kConcatLinear, kGate };
enum class FilterKind { kAdaptive, kLearnable, kLowPass, kHighSuppress, kNone };

const char* fusion_mode_name(FusionMode m);
const char* filter_kind_name(FilterKind k);
FusionMode parse_fusion_mode(const std::string& s);
FilterKind parse_filter_kind(const std::string& s);

struct ModelConfig {
  i64 d = 64;        // embedding width, divisible by heads
  i64 n = 64;        // padded sequence length, power of two
  i64 blocks = 2;
  i64 heads = 2;
  double dropout = 0.2;
  double init_std = 0.02;
  FusionMode fusion = FusionMode::kGate;
  FilterKind filter = FilterKind::kAdaptive;
  // highest retained frequency bin for the fixed low-pass / high-suppress
  // filters; -1 picks n/8 (a quarter of the n/2+1 bins)
  i64 filter_cutoff = -1;
  bool causal = true;

  // ablation switches
  bool use_tsp = true;    // add time-token embeddings to the item stream
  bool use_aff = true;    // false forces filter = none
  bool use_asif = true;   // false: plain self-attention, positions added at embedding
  bool use_nap = true;    // next-attribute prediction loss term
  bool use_ura = true;    // user-representation alignment loss term
  bool use_i2a = true;    // item-to-attribute auxiliary loss term

  void validate() const;
  i64 head_dim() const { return d / heads; }
  i64 bins() const { return n / 2 + 1; }
  i64 cutoff_bin() const { return filter_cutoff >= 0 ? filter_cutoff : n / 8; }
  FilterKind effective_filter() const { return use_aff ? filter : FilterKind::kNone; }
};

struct VocabInfo {
  i64 item_vocab = 0;               // includes padding row 0
  std::vector<i64> attr_vocabs;     // per type, includes padding row 0
  i64 time_tokens = 0;              // token ids run 1..time_tokens

  i64 attr_types() const { return static_cast<i64>(attr_vocabs.size()); }
};

VocabInfo vocab_of(const InteractionDataset& ds);

// Parameters of one stream inside one block.
struct StreamBlockParams {
  // frequency filter (population depends on FilterKind)
  Tensor filter_re, filter_im;  // [bins, d] complex filter as two planes
  Tensor alpha_logit;           // [1] blend gate (adaptive only)
  Tensor hsf_scale;             // [1] high-band gain (high_suppress only)
  Tensor filter_ln_gain, filter_ln_bias;

  Tensor wq, wk, wv, wo;  // [d, d], bias-free
  Tensor attn_ln_gain, attn_ln_bias;

  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // d -> 4d -> d
  Tensor ffn_ln_gain, ffn_ln_bias;
};

struct BlockParams {
  StreamBlockParams id;
  std::vector<StreamBlockParams> attrs;  // one per attribute type

  // fusion (population depends on FusionMode; absent when use_asif = false)
  Tensor fuse_w, fuse_b;               // concat_linear: [(|A|+2)*d, d], [d]
  std::vector<Tensor> gate_u, gate_c;  // gate: per source [d, d], [d]
};

// Full parameter set. Construction draws every tensor from one seeded RNG in
// a fixed order, so (config, vocab, seed) reproduces the model bit for bit.
struct TasifParameters {
  ModelConfig config;
  VocabInfo vocab;

  Tensor e_id;                 // [item_vocab, d], row 0 = padding
  Tensor e_t;                  // [time_tokens + 1, d] (only when use_tsp)
  Tensor e_p;                  // [n, d] absolute positions
  std::vector<Tensor> e_attr;  // per type [vocab_j, d], row 0 = padding
  Tensor emb_ln_gain, emb_ln_bias;

  std::vector<BlockParams> blocks;

  std::vector<Tensor> attr_weight_logits;  // per type [1]; softplus > 0
  std::vector<Tensor> i2a_w;               // per type [vocab_j - 1, d]
  std::vector<Tensor> i2a_b;               // per type [vocab_j - 1]

  static TasifParameters init(const ModelConfig& cfg, const VocabInfo& vocab, u64 seed);

  // Visits every tensor in serialization order. decay_exempt_rows is 1 for
  // embedding tables (their padding row must stay put under weight decay).
  void for_each(const std::function<void(const std::string&, const Tensor&, i64)>& fn) const;
  i64 param_tensor_count() const;
  i64 scalar_count() const;
  void register_all(class Adam& opt) const;
};

// Additive attention mask, laid out [B*n*n]: 0 where key j is admissible for
// query i, -1e9 where j is padding or (causal) j > i.
std::vector<double> build_attention_mask(const SequenceBatch& batch, bool causal);

// Last real (non-padding) position per row; with left padding this is n-1.
std::vector<i64> last_positions(const SequenceBatch& batch);

// Optional per-block capture for inspection and tests.
struct ForwardTrace {
  std::vector<Tensor> v_id;                     // per block [B*h, n, d/h]
  std::vector<Tensor> attn_id;                  // per block [B*h, n, n]
  std::vector<std::vector<Tensor>> attn_attr;   // per block, per type
  std::vector<Tensor> fused;                    // per block [B, n, d] (empty slot when bypassed)
  Tensor h_id_final;                            // [B, n, d]
};

struct ForwardOutput {
  Tensor s_id;                 // [B, d]
  std::vector<Tensor> s_attr;  // per type [B, d]
};

class TasifModel {
 public:
  TasifModel(const ModelConfig& cfg, const VocabInfo& vocab, u64 seed)
      : p_(TasifParameters::init(cfg, vocab, seed)) {}
  explicit TasifModel(TasifParameters params) : p_(std::move(params)) {}

  const ModelConfig& config() const { return p_.config; }
  const VocabInfo& vocab() const { return p_.vocab; }
  TasifParameters& params() { return p_; }
  const TasifParameters& params() const { return p_; }

  // training=true applies dropout driven by rng; rng is unused otherwise.
  ForwardOutput forward(const SequenceBatch& batch, bool training, Rng& rng,
                        ForwardTrace* trace = nullptr) const;

  // Individual stages, exposed for targeted tests.
  Tensor embed_id_stream(const SequenceBatch& batch, bool training, Rng& rng) const;
  Tensor embed_attr_stream(const SequenceBatch& batch, i64 type) const;
  Tensor apply_filter(const Tensor& h, const StreamBlockParams& sp, bool training, Rng& rng) const;
  Tensor fuse_sources(const Tensor& h_id, const std::vector<Tensor>& h_attrs,
                      const BlockParams& bp) const;
  Tensor attention(const Tensor& queries_from, const Tensor& values_from,
                   const StreamBlockParams& sp, const std::vector<double>& mask, bool training,
                   Rng& rng, Tensor* v_out = nullptr, Tensor* probs_out = nullptr) const;
  Tensor feed_forward(const Tensor& h, const StreamBlockParams& sp, bool training, Rng& rng) const;

 private:
  TasifParameters p_;
};

// ---- checkpointing ----
// Layout: magic, format version, a JSON manifest (config, vocab, parameter
// inventory, FNV-1a content key), then raw little-endian f64 blocks in
// manifest order.
void save_checkpoint(const std::string& path, const TasifParameters& params);
TasifParameters load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& cfg, const VocabInfo& vocab);
void require_same_setup(const TasifParameters& a, const ModelConfig& cfg, const VocabInfo& vocab);

}  // namespace tasif
