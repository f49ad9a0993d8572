#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ris/config.hpp"
#include "ris/corpus.hpp"
#include "ris/model.hpp"
#include "ris/param.hpp"
#include "ris/tape.hpp"

namespace ris {

// L_nll = -(alpha * sum_t log P(y_t^user | ...) + (1-alpha) * sum_t ...).
// Per-example step sums; the batch mean is taken by the caller.
template <typename T>
Ref joint_nll_loss(Tape<T>& tp, const std::vector<Ref>& user_gold_logp,
                   const std::vector<Ref>& agent_gold_logp, double alpha) {
  RIS_REQUIRE(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
  Ref usum = tp.scalar(T(0));
  for (Ref r : user_gold_logp) usum = tp.add(usum, r);
  Ref asum = tp.scalar(T(0));
  for (Ref r : agent_gold_logp) asum = tp.add(asum, r);
  return tp.add(tp.scale(usum, static_cast<T>(-alpha)),
                tp.scale(asum, static_cast<T>(-(1.0 - alpha))));
}

// Per-batch scalars; total reproduces the combination formula.
struct LossBreakdown {
  double nll_user = 0.0, nll_agent = 0.0;
  double kl_user = 0.0, kl_agent = 0.0;
  double coverage = 0.0;
  double total = 0.0;
  long long user_tokens = 0, agent_tokens = 0;
  int examples = 0, skipped = 0;

  double nll_per_token() const {
    const long long toks = user_tokens + agent_tokens;
    if (toks == 0) return 0.0;
    return (nll_user + nll_agent) * examples / static_cast<double>(toks);
  }
};

inline double total_loss(double nll, double kl_user, double kl_agent,
                         double coverage, double beta, double coverage_weight) {
  return nll + beta * (kl_user + kl_agent) + coverage_weight * coverage;
}

inline double total_loss(const LossBreakdown& lb, double alpha, double beta,
                         double coverage_weight) {
  const double nll = alpha * lb.nll_user + (1.0 - alpha) * lb.nll_agent;
  return total_loss(nll, lb.kl_user, lb.kl_agent, lb.coverage, beta,
                    coverage_weight);
}

// Teacher-forced pass over one padded batch. Examples run one at a time on a
// fresh tape; gradients (scaled by 1/batch) accumulate serially in the store.
// Role-invalid examples are skipped with a warning.
template <typename Model>
LossBreakdown teacher_forced_batch(Model& model, const PaddedBatch& batch,
                                   const RunConfig& cfg, double beta,
                                   double coverage_weight, bool do_backward,
                                   std::vector<double>* per_example_kl = nullptr) {
  using T = typename Model::Scalar;
  LossBreakdown lb;
  int valid = 0;
  for (const auto& e : batch.examples)
    if (e.role_valid) ++valid;
  if (valid == 0) return lb;

  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    const EncodedExample& ex = batch.examples[i];
    if (!ex.role_valid) {
      std::cerr << "[warn] example " << ex.id
                << " has no tokens for one role; skipped\n";
      ++lb.skipped;
      continue;
    }
    Tape<T> tp;
    ExampleView view{&ex, batch.input_len[i], batch.user_len[i],
                     batch.agent_len[i]};
    LossOpts opts;
    opts.with_kl = true;  // diagnostics even when beta is 0
    opts.detach_guide = cfg.kl_detach_guide;
    ExampleLoss<T> el = model.teacher_forced(tp, view, opts);

    Ref nll = joint_nll_loss(tp, el.user_gold_logp, el.agent_gold_logp, cfg.alpha);
    Ref cov = tp.add(tp.scale(el.coverage_user, static_cast<T>(cfg.alpha)),
                     tp.scale(el.coverage_agent, static_cast<T>(1.0 - cfg.alpha)));
    Ref total = nll;
    if (el.has_kl && beta > 0.0) {
      total = tp.add(total, tp.scale(tp.add(el.kl_user, el.kl_agent),
                                     static_cast<T>(beta)));
    }
    if (coverage_weight > 0.0) {
      total = tp.add(total, tp.scale(cov, static_cast<T>(coverage_weight)));
    }

    double nll_u = 0.0, nll_a = 0.0;
    for (Ref r : el.user_gold_logp) nll_u -= static_cast<double>(tp.val(r).at(0));
    for (Ref r : el.agent_gold_logp) nll_a -= static_cast<double>(tp.val(r).at(0));
    lb.nll_user += nll_u;
    lb.nll_agent += nll_a;
    const double klu = el.has_kl ? static_cast<double>(tp.val(el.kl_user).at(0)) : 0.0;
    const double kla = el.has_kl ? static_cast<double>(tp.val(el.kl_agent).at(0)) : 0.0;
    lb.kl_user += klu;
    lb.kl_agent += kla;
    if (per_example_kl) per_example_kl->push_back(klu + kla);
    lb.coverage += static_cast<double>(tp.val(cov).at(0));
    lb.user_tokens += static_cast<long long>(el.user_gold_logp.size());
    lb.agent_tokens += static_cast<long long>(el.agent_gold_logp.size());
    ++lb.examples;

    if (do_backward)
      tp.backward(tp.scale(total, static_cast<T>(1.0 / valid)));
  }
  const double inv = 1.0 / lb.examples;
  lb.nll_user *= inv;
  lb.nll_agent *= inv;
  lb.kl_user *= inv;
  lb.kl_agent *= inv;
  lb.coverage *= inv;
  const double use_beta = beta > 0.0 ? beta : 0.0;
  lb.total = total_loss(lb, cfg.alpha, use_beta, coverage_weight);
  return lb;
}

// accum += g^2; value -= lr * g / sqrt(accum + eps). Grads are zeroed after
// a successful step; a non-finite gradient rejects the step.
template <typename T>
bool adagrad_step(ParamStore<T>& ps, double lr = 0.15, double eps = 1e-10) {
  if (!ps.grads_finite()) {
    std::cerr << "[warn] adagrad_step: non-finite gradient, step rejected\n";
    return false;
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter<T>& p = ps.at(i);
    for (std::size_t k = 0; k < p.value.v.size(); ++k) {
      const double g = static_cast<double>(p.grad.v[k]);
      const double acc = static_cast<double>(p.accum.v[k]) + g * g;
      p.accum.v[k] = static_cast<T>(acc);
      p.value.v[k] -= static_cast<T>(lr * g / std::sqrt(acc + eps));
    }
  }
  ps.zero_grads();
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned manifest + flat little-endian payload.

namespace ckpt_detail {

constexpr char kMagic[8] = {'R', 'I', 'S', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, V v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& in, const char* what) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  RIS_VALIDATE(in.good(), "checkpoint truncated while reading " << what);
  return v;
}

}  // namespace ckpt_detail

struct CheckpointMeta {
  std::uint32_t version = 0;
  std::uint64_t fingerprint = 0;
  std::uint64_t step = 0;
  double val_loss = 0.0;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& ps,
                     std::uint64_t fingerprint, std::uint64_t step,
                     double val_loss) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  RIS_REQUIRE(out.good(), "cannot write checkpoint to " << path);
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, fingerprint);
  put(out, step);
  put(out, val_loss);
  put(out, static_cast<std::uint32_t>(ps.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Parameter<T>& p = ps.at(i);
    put(out, static_cast<std::uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(out, static_cast<std::uint8_t>(sizeof(T)));
    put(out, static_cast<std::uint8_t>(p.value.rank));
    put(out, static_cast<std::uint32_t>(p.value.d0));
    put(out, static_cast<std::uint32_t>(p.value.d1));
    put(out, offset);
    offset += p.value.v.size() * sizeof(T);
  }
  put(out, offset);  // payload byte count
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Parameter<T>& p = ps.at(i);
    out.write(reinterpret_cast<const char*>(p.value.v.data()),
              static_cast<std::streamsize>(p.value.v.size() * sizeof(T)));
  }
  RIS_REQUIRE(out.good(), "write failure on checkpoint " << path);
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& ps,
                               std::uint64_t expected_fingerprint) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  RIS_VALIDATE(in.good(), "cannot open checkpoint " << path);
  char magic[8];
  in.read(magic, sizeof(magic));
  RIS_VALIDATE(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
               "not a checkpoint file: " << path);
  CheckpointMeta meta;
  meta.version = take<std::uint32_t>(in, "version");
  RIS_VALIDATE(meta.version == kVersion, "checkpoint version " << meta.version
                                             << " unsupported (want " << kVersion << ")");
  meta.fingerprint = take<std::uint64_t>(in, "fingerprint");
  RIS_VALIDATE(meta.fingerprint == expected_fingerprint,
               "checkpoint fingerprint mismatch: file has "
                   << std::hex << meta.fingerprint << ", model expects "
                   << expected_fingerprint << std::dec);
  meta.step = take<std::uint64_t>(in, "step");
  meta.val_loss = take<double>(in, "val_loss");
  const auto count = take<std::uint32_t>(in, "parameter count");
  RIS_VALIDATE(count == ps.size(), "checkpoint has " << count
                                       << " parameters, model has " << ps.size());
  std::uint64_t expected_offset = 0;
  struct Entry {
    std::string name;
    std::uint64_t offset;
    std::uint64_t bytes;
  };
  std::vector<Entry> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    RIS_VALIDATE(in.good(), "checkpoint truncated while reading name");
    const auto dtype = take<std::uint8_t>(in, "dtype");
    RIS_VALIDATE(dtype == sizeof(T), "parameter " << name << " has dtype width "
                                         << int(dtype) << ", model expects "
                                         << sizeof(T));
    const auto rank = take<std::uint8_t>(in, "rank");
    const auto d0 = take<std::uint32_t>(in, "dim 0");
    const auto d1 = take<std::uint32_t>(in, "dim 1");
    const auto offset = take<std::uint64_t>(in, "offset");
    Parameter<T>* p = ps.find(name);
    RIS_VALIDATE(p != nullptr, "checkpoint parameter '" << name
                                   << "' not present in model");
    RIS_VALIDATE(p->value.rank == rank && p->value.d0 == static_cast<int>(d0) &&
                     p->value.d1 == static_cast<int>(d1),
                 "parameter " << name << " shape mismatch");
    RIS_VALIDATE(offset == expected_offset,
                 "manifest offsets must be contiguous at " << name);
    const std::uint64_t bytes = p->value.v.size() * sizeof(T);
    manifest.push_back({name, offset, bytes});
    expected_offset += bytes;
  }
  const auto payload = take<std::uint64_t>(in, "payload size");
  RIS_VALIDATE(payload == expected_offset,
               "payload of " << payload << " bytes does not cover manifest ("
                             << expected_offset << " expected)");
  for (const Entry& e : manifest) {
    Parameter<T>* p = ps.find(e.name);
    in.read(reinterpret_cast<char*>(p->value.v.data()),
            static_cast<std::streamsize>(e.bytes));
    RIS_VALIDATE(in.good(), "checkpoint truncated: expected "
                                << e.offset + e.bytes << "+ payload bytes, got "
                                << in.gcount() << " at " << e.name);
  }
  return meta;
}

inline std::uint64_t model_fingerprint(const RunConfig& cfg,
                                       const Vocabulary& vocab) {
  std::ostringstream ss;
  ss << model_fingerprint_text(cfg) << "vocab_size=" << vocab.size()
     << ";vocab_hash=" << vocab.content_hash() << ";";
  return fnv1a64(ss.str());
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  bool diverged = false;
  bool saved = false;
  LossBreakdown final_train;
  LossBreakdown final_val;
};

template <typename Model>
LossBreakdown evaluate_split(Model& model, const std::vector<EncodedExample>& split,
                             const RunConfig& cfg, double beta,
                             double coverage_weight,
                             std::vector<double>* per_example_kl = nullptr) {
  LossBreakdown agg;
  if (split.empty()) return agg;
  std::vector<const EncodedExample*> items;
  double total_sum = 0.0;
  for (std::size_t i = 0; i < split.size(); i += cfg.batch_size) {
    items.clear();
    for (std::size_t j = i;
         j < split.size() && j < i + static_cast<std::size_t>(cfg.batch_size); ++j)
      items.push_back(&split[j]);
    PaddedBatch b = pad_batch(items);
    LossBreakdown lb = teacher_forced_batch(model, b, cfg, beta, coverage_weight,
                                            /*do_backward=*/false, per_example_kl);
    if (lb.examples == 0) continue;
    agg.nll_user += lb.nll_user * lb.examples;
    agg.nll_agent += lb.nll_agent * lb.examples;
    agg.kl_user += lb.kl_user * lb.examples;
    agg.kl_agent += lb.kl_agent * lb.examples;
    agg.coverage += lb.coverage * lb.examples;
    total_sum += lb.total * lb.examples;
    agg.user_tokens += lb.user_tokens;
    agg.agent_tokens += lb.agent_tokens;
    agg.examples += lb.examples;
    agg.skipped += lb.skipped;
  }
  if (agg.examples > 0) {
    const double inv = 1.0 / agg.examples;
    agg.nll_user *= inv;
    agg.nll_agent *= inv;
    agg.kl_user *= inv;
    agg.kl_agent *= inv;
    agg.coverage *= inv;
    agg.total = total_sum * inv;
  }
  return agg;
}

// Two-phase schedule: coverage and the divergence loss switch on for the
// final phase. The best checkpoint by validation loss (scored with the
// final-phase weights throughout, for comparability) is kept.
template <typename Model>
TrainResult run_training(Model& model, const std::vector<EncodedExample>& train,
                         const std::vector<EncodedExample>& val,
                         const RunConfig& cfg, const std::string& ckpt_path,
                         std::uint64_t fingerprint,
                         std::ostream* metrics_csv = nullptr,
                         std::ostream* log = nullptr) {
  RIS_VALIDATE(!train.empty(), "run_training: empty training split");
  RIS_VALIDATE(!val.empty(), "run_training: empty validation split");
  TrainResult result;
  const int phase1 = static_cast<int>(std::lround(cfg.phase1_fraction * cfg.max_steps));
  const double beta2 = cfg.beta_resolved();
  const double covw2 = cfg.coverage_weight_resolved();
  BatchIterator it(train, cfg.batch_size, splitmix64(cfg.seed ^ 0xba7c4e5ULL),
                   /*shuffle=*/true);
  if (metrics_csv) {
    metrics_csv->precision(12);
    *metrics_csv << "step,phase,lr,nll_user,nll_agent,kl_user,kl_agent,"
                    "coverage,total,nll_per_token,val_total,best\n";
  }
  PaddedBatch batch;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const bool phase2 = step > phase1;
    const double beta_s = phase2 ? beta2 : 0.0;
    const double covw_s = phase2 ? covw2 : 0.0;
    double lr = cfg.learning_rate;
    if (cfg.variant == Variant::Transformer && cfg.warmup_steps > 0)
      lr *= std::min(1.0, static_cast<double>(step) / cfg.warmup_steps);

    it.next(batch);
    model.params().zero_grads();
    LossBreakdown lb;
    try {
      lb = teacher_forced_batch(model, batch, cfg, beta_s, covw_s,
                                /*do_backward=*/true);
    } catch (const Error& e) {
      if (log) *log << "[error] step " << step << ": " << e.what() << "\n";
      result.diverged = true;
      break;
    }
    result.final_train = lb;
    if (!std::isfinite(lb.total)) {
      if (log) *log << "[error] step " << step << ": loss diverged\n";
      result.diverged = true;
      break;
    }
    adagrad_step(model.params(), lr);

    const bool do_val = (cfg.val_every > 0 && step % cfg.val_every == 0) ||
                        step == cfg.max_steps;
    double val_total = std::numeric_limits<double>::quiet_NaN();
    bool is_best = false;
    if (do_val) {
      LossBreakdown vlb = evaluate_split(model, val, cfg, beta2, covw2);
      result.final_val = vlb;
      val_total = vlb.total;
      if (!std::isfinite(val_total)) {
        if (log) *log << "[error] step " << step << ": validation loss diverged\n";
        result.diverged = true;
        break;
      }
      if (val_total < result.best_val) {
        result.best_val = val_total;
        result.best_step = static_cast<std::uint64_t>(step);
        save_checkpoint(ckpt_path, model.params(), fingerprint,
                        result.best_step, val_total);
        result.saved = true;
        is_best = true;
      }
      if (log)
        *log << "step " << step << " train " << lb.total << " val " << val_total
             << (is_best ? " *" : "") << "\n";
    }
    if (metrics_csv) {
      *metrics_csv << step << ',' << (phase2 ? 2 : 1) << ',' << lr << ','
                   << lb.nll_user << ',' << lb.nll_agent << ',' << lb.kl_user
                   << ',' << lb.kl_agent << ',' << lb.coverage << ','
                   << lb.total << ',' << lb.nll_per_token() << ',';
      if (do_val) *metrics_csv << val_total;
      *metrics_csv << ',' << (is_best ? 1 : 0) << "\n";
    }
  }
  return result;
}

}  // namespace ris
