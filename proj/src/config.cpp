#include "ris/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace ris {

const char* to_string(Variant v) {
  return v == Variant::Recurrent ? "recurrent" : "transformer";
}

const char* to_string(InteractionMode m) {
  switch (m) {
    case InteractionMode::Both: return "both";
    case InteractionMode::Cross: return "cross";
    case InteractionMode::Self: return "self";
    default: return "multi";
  }
}

namespace {

long long parse_int(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    RIS_VALIDATE(pos == v.size(), "line " << line << ": bad integer '" << v << "'");
    return x;
  } catch (const ValidationError&) {
    throw;
  } catch (...) {
    throw ValidationError("line " + std::to_string(line) + ": bad integer '" + v + "'");
  }
}

double parse_double(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    RIS_VALIDATE(pos == v.size(), "line " << line << ": bad number '" << v << "'");
    return x;
  } catch (const ValidationError&) {
    throw;
  } catch (...) {
    throw ValidationError("line " + std::to_string(line) + ": bad number '" + v + "'");
  }
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("line " + std::to_string(line) + ": bad bool '" + v +
                        "' (use true/false)");
}

using Setter = std::function<void(RunConfig&, const std::string&, int)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant",
       [](RunConfig& c, const std::string& v, int line) {
         if (v == "recurrent") c.variant = Variant::Recurrent;
         else if (v == "transformer") c.variant = Variant::Transformer;
         else
           throw ValidationError("line " + std::to_string(line) +
                                 ": variant must be recurrent|transformer");
       }},
      {"mode",
       [](RunConfig& c, const std::string& v, int line) {
         if (v == "both") c.mode = InteractionMode::Both;
         else if (v == "cross") c.mode = InteractionMode::Cross;
         else if (v == "self") c.mode = InteractionMode::Self;
         else if (v == "multi") c.mode = InteractionMode::Multi;
         else
           throw ValidationError("line " + std::to_string(line) +
                                 ": mode must be both|cross|self|multi");
       }},
      {"seed", [](RunConfig& c, const std::string& v, int l) {
         c.seed = static_cast<std::uint64_t>(parse_int(v, l)); }},
      {"vocab_cap", [](RunConfig& c, const std::string& v, int l) {
         c.vocab_cap = static_cast<int>(parse_int(v, l)); }},
      {"embedding_dim", [](RunConfig& c, const std::string& v, int l) {
         c.embedding_dim = static_cast<int>(parse_int(v, l)); }},
      {"hidden_dim", [](RunConfig& c, const std::string& v, int l) {
         c.hidden_dim = static_cast<int>(parse_int(v, l)); }},
      {"attn_dim", [](RunConfig& c, const std::string& v, int l) {
         c.attn_dim = static_cast<int>(parse_int(v, l)); }},
      {"fusion_dim", [](RunConfig& c, const std::string& v, int l) {
         c.fusion_dim = static_cast<int>(parse_int(v, l)); }},
      {"layer_count", [](RunConfig& c, const std::string& v, int l) {
         c.layer_count = static_cast<int>(parse_int(v, l)); }},
      {"heads", [](RunConfig& c, const std::string& v, int l) {
         c.heads = static_cast<int>(parse_int(v, l)); }},
      {"ffn_dim", [](RunConfig& c, const std::string& v, int l) {
         c.ffn_dim = static_cast<int>(parse_int(v, l)); }},
      {"max_input_len", [](RunConfig& c, const std::string& v, int l) {
         c.max_input_len = static_cast<int>(parse_int(v, l)); }},
      {"max_output_len", [](RunConfig& c, const std::string& v, int l) {
         c.max_output_len = static_cast<int>(parse_int(v, l)); }},
      {"min_output_len", [](RunConfig& c, const std::string& v, int l) {
         c.min_output_len = static_cast<int>(parse_int(v, l)); }},
      {"alpha", [](RunConfig& c, const std::string& v, int l) {
         c.alpha = parse_double(v, l); }},
      {"beta", [](RunConfig& c, const std::string& v, int l) {
         c.beta = parse_double(v, l); }},
      {"coverage_weight", [](RunConfig& c, const std::string& v, int l) {
         c.coverage_weight = parse_double(v, l); }},
      {"kl_detach_guide", [](RunConfig& c, const std::string& v, int l) {
         c.kl_detach_guide = parse_bool(v, l); }},
      {"share_role_attention", [](RunConfig& c, const std::string& v, int l) {
         c.share_role_attention = parse_bool(v, l); }},
      {"nll_per_token", [](RunConfig& c, const std::string& v, int l) {
         c.nll_per_token = parse_bool(v, l); }},
      {"learning_rate", [](RunConfig& c, const std::string& v, int l) {
         c.learning_rate = parse_double(v, l); }},
      {"batch_size", [](RunConfig& c, const std::string& v, int l) {
         c.batch_size = static_cast<int>(parse_int(v, l)); }},
      {"max_steps", [](RunConfig& c, const std::string& v, int l) {
         c.max_steps = static_cast<int>(parse_int(v, l)); }},
      {"phase1_fraction", [](RunConfig& c, const std::string& v, int l) {
         c.phase1_fraction = parse_double(v, l); }},
      {"val_every", [](RunConfig& c, const std::string& v, int l) {
         c.val_every = static_cast<int>(parse_int(v, l)); }},
      {"warmup_steps", [](RunConfig& c, const std::string& v, int l) {
         c.warmup_steps = static_cast<int>(parse_int(v, l)); }},
      {"beam", [](RunConfig& c, const std::string& v, int l) {
         c.beam = static_cast<int>(parse_int(v, l)); }},
      {"length_normalize", [](RunConfig& c, const std::string& v, int l) {
         c.length_normalize = parse_bool(v, l); }},
      {"block_ngram", [](RunConfig& c, const std::string& v, int l) {
         c.block_ngram = static_cast<int>(parse_int(v, l)); }},
  };
  return table;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
  RIS_VALIDATE(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1], got " << alpha);
  RIS_VALIDATE(beta_resolved() >= 0.0, "beta must be >= 0, got " << beta_resolved());
  RIS_VALIDATE(learning_rate > 0.0, "learning_rate must be > 0, got " << learning_rate);
  RIS_VALIDATE(embedding_dim > 0 && hidden_dim > 0, "dims must be positive");
  RIS_VALIDATE(vocab_cap > 0, "vocab_cap must be positive");
  RIS_VALIDATE(batch_size >= 1, "batch_size must be >= 1");
  RIS_VALIDATE(max_steps >= 1, "max_steps must be >= 1");
  RIS_VALIDATE(phase1_fraction >= 0.0 && phase1_fraction <= 1.0,
               "phase1_fraction must lie in [0,1]");
  RIS_VALIDATE(beam >= 1, "beam must be >= 1");
  RIS_VALIDATE(layer_count >= 0, "layer_count must be >= 0");
  RIS_VALIDATE(heads >= 1, "heads must be >= 1");
  RIS_VALIDATE(variant != Variant::Transformer || hidden_dim % heads == 0,
               "hidden_dim " << hidden_dim << " must be divisible by heads " << heads);
  RIS_VALIDATE(min_output_resolved() <= max_output_resolved(),
               "min_output_len exceeds max_output_len");
  RIS_VALIDATE(coverage_weight >= 0.0, "coverage_weight must be >= 0");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    RIS_VALIDATE(eq != std::string::npos,
                 "line " << line_no << ": expected key=value, got '" << line << "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    RIS_VALIDATE(it != setters().end(),
                 "line " << line_no << ": unknown key '" << key << "'");
    it->second(cfg, value, line_no);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  RIS_VALIDATE(in.good(), "cannot open config file " << path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_seed_override(RunConfig& cfg) {
  if (const char* env = std::getenv("RIS_SEED")) {
    cfg.seed = static_cast<std::uint64_t>(std::stoull(env));
  }
}

void print_config(const RunConfig& cfg, std::ostream& out) {
  out << "variant = " << to_string(cfg.variant) << "\n";
  out << "mode = " << to_string(cfg.mode) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "vocab_cap = " << cfg.vocab_cap << "\n";
  out << "embedding_dim = " << cfg.embedding_dim << "\n";
  out << "hidden_dim = " << cfg.hidden_dim << "\n";
  out << "attn_dim = " << cfg.attn_dim_resolved() << "\n";
  out << "fusion_dim = " << cfg.fusion_dim_resolved() << "\n";
  out << "layer_count = " << cfg.layer_count << "\n";
  out << "heads = " << cfg.heads << "\n";
  out << "ffn_dim = " << cfg.ffn_dim << "\n";
  out << "max_input_len = " << cfg.max_input_len << "\n";
  out << "max_output_len = " << cfg.max_output_resolved() << "\n";
  out << "min_output_len = " << cfg.min_output_resolved() << "\n";
  out << "alpha = " << cfg.alpha << "\n";
  out << "beta = " << cfg.beta_resolved() << "\n";
  out << "coverage_weight = " << cfg.coverage_weight_resolved() << "\n";
  out << "kl_detach_guide = " << (cfg.kl_detach_guide ? "true" : "false") << "\n";
  out << "share_role_attention = " << (cfg.share_role_attention ? "true" : "false") << "\n";
  out << "nll_per_token = " << (cfg.nll_per_token ? "true" : "false") << "\n";
  out << "learning_rate = " << cfg.learning_rate << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "max_steps = " << cfg.max_steps << "\n";
  out << "phase1_fraction = " << cfg.phase1_fraction << "\n";
  out << "val_every = " << cfg.val_every << "\n";
  out << "warmup_steps = " << cfg.warmup_steps << "\n";
  out << "beam = " << cfg.beam << "\n";
  out << "length_normalize = " << (cfg.length_normalize ? "true" : "false") << "\n";
  out << "block_ngram = " << cfg.block_ngram_resolved() << "\n";
}

std::string model_fingerprint_text(const RunConfig& cfg) {
  std::ostringstream ss;
  ss << "variant=" << to_string(cfg.variant) << ";mode=" << to_string(cfg.mode)
     << ";embedding_dim=" << cfg.embedding_dim
     << ";hidden_dim=" << cfg.hidden_dim
     << ";attn_dim=" << cfg.attn_dim_resolved()
     << ";fusion_dim=" << cfg.fusion_dim_resolved()
     << ";layer_count=" << cfg.layer_count << ";heads=" << cfg.heads
     << ";ffn_dim=" << cfg.ffn_dim
     << ";max_input_len=" << cfg.max_input_len
     << ";max_output_len=" << cfg.max_output_resolved()
     << ";share_role_attention=" << cfg.share_role_attention << ";";
  return ss.str();
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ris
