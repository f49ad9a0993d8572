#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ris/common.hpp"

namespace ris {

enum class Variant { Recurrent, Transformer };
// Which interaction mechanisms are active. Multi is the shared-encoder
// multi-task baseline without either mechanism.
enum class InteractionMode { Both, Cross, Self, Multi };

const char* to_string(Variant v);
const char* to_string(InteractionMode m);

// Flat key=value configuration with '#' comments. Every key has a documented
// default; unknown keys are rejected. Some defaults depend on the variant
// and are resolved through the *_resolved() accessors.
struct RunConfig {
  Variant variant = Variant::Recurrent;
  InteractionMode mode = InteractionMode::Both;
  std::uint64_t seed = 17;

  int vocab_cap = 10000;
  int embedding_dim = 32;
  int hidden_dim = 64;
  int attn_dim = 0;    // 0 -> hidden_dim
  int fusion_dim = 0;  // 0 -> hidden_dim
  int layer_count = 2;
  int heads = 2;
  int ffn_dim = 128;
  int max_input_len = 500;
  int max_output_len = -1;  // -1 -> 100 recurrent / 200 transformer
  int min_output_len = -1;  // -1 -> 10 recurrent / 15 transformer

  double alpha = 0.5;
  double beta = -1.0;  // -1 -> 0.5 recurrent / 0.25 transformer
  double coverage_weight = 1.0;
  bool kl_detach_guide = false;
  bool share_role_attention = false;
  bool nll_per_token = false;

  double learning_rate = 0.15;
  int batch_size = 8;
  int max_steps = 2000;
  double phase1_fraction = 0.8;
  int val_every = 100;
  int warmup_steps = 1000;  // transformer only

  int beam = 5;
  bool length_normalize = false;
  int block_ngram = -1;  // -1 -> 0 recurrent / 5 transformer

  double beta_resolved() const {
    if (beta >= 0.0) return beta;
    return variant == Variant::Recurrent ? 0.5 : 0.25;
  }
  int max_output_resolved() const {
    if (max_output_len >= 0) return max_output_len;
    return variant == Variant::Recurrent ? 100 : 200;
  }
  int min_output_resolved() const {
    if (min_output_len >= 0) return min_output_len;
    return variant == Variant::Recurrent ? 10 : 15;
  }
  int block_ngram_resolved() const {
    if (block_ngram >= 0) return block_ngram;
    return variant == Variant::Recurrent ? 0 : 5;
  }
  int attn_dim_resolved() const { return attn_dim > 0 ? attn_dim : hidden_dim; }
  int fusion_dim_resolved() const {
    return fusion_dim > 0 ? fusion_dim : hidden_dim;
  }
  // The transformer backbone carries no copy or coverage mechanism.
  double coverage_weight_resolved() const {
    return variant == Variant::Recurrent ? coverage_weight : 0.0;
  }

  void validate() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Applies RIS_SEED from the environment, when set.
void apply_seed_override(RunConfig& cfg);

void print_config(const RunConfig& cfg, std::ostream& out);

// Canonical string over the shape-affecting subset; checkpoints refuse to
// load under a different fingerprint.
std::string model_fingerprint_text(const RunConfig& cfg);
std::uint64_t fnv1a64(const std::string& s);

}  // namespace ris
