#include "ris/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ris/attn_export.hpp"
#include "ris/beam.hpp"
#include "ris/config.hpp"
#include "ris/corpus.hpp"
#include "ris/decoder.hpp"
#include "ris/gradcheck.hpp"
#include "ris/metrics.hpp"
#include "ris/training.hpp"
#include "ris/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ris::cli {

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

template <typename F>
auto with_variant(const RunConfig& cfg, int vocab_size, F&& f) {
  if (cfg.variant == Variant::Recurrent) {
    RecurrentModel<float> m(cfg, vocab_size);
    return f(m);
  }
  TransformerModel<float> m(cfg, vocab_size);
  return f(m);
}

DecodeLimits limits_from(const RunConfig& cfg) {
  DecodeLimits lim;
  lim.beam = cfg.beam;
  lim.min_len = cfg.min_output_resolved();
  lim.max_len = cfg.max_output_resolved();
  lim.block_ngram = cfg.block_ngram_resolved();
  lim.length_normalize = cfg.length_normalize;
  return lim;
}

std::string token_of(const Vocabulary& vocab, const EncodedExample& ex, int id) {
  if (id < vocab.size()) return vocab.token(id);
  const int k = id - vocab.size();
  RIS_REQUIRE(k < static_cast<int>(ex.oov_tokens.size()),
              "extended id " << id << " out of range for example " << ex.id);
  return ex.oov_tokens[static_cast<std::size_t>(k)];
}

std::string side_text(const Vocabulary& vocab, const EncodedExample& ex,
                      const std::vector<int>& ids) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int id : ids) toks.push_back(token_of(vocab, ex, id));
  return join_ws(toks);
}

struct RunDir {
  RunConfig cfg;
  Vocabulary vocab;
};

RunDir load_run_dir(const std::string& ckpt_path) {
  const fs::path dir = fs::path(ckpt_path).parent_path();
  RunDir rd;
  rd.cfg = parse_config_file((dir / "config.txt").string());
  rd.vocab = Vocabulary::load((dir / "vocab.txt").string());
  return rd;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const std::string& out_dir, long long n, std::uint64_t seed,
              double fraction) {
  RIS_VALIDATE(n >= 1, "--n must be >= 1, got " << n);
  auto corpus = generate_synthetic_corpus(static_cast<int>(n), seed, fraction);
  fs::create_directories(out_dir);
  const std::size_t train_n = static_cast<std::size_t>(n) * 8 / 10;
  const std::size_t val_n = static_cast<std::size_t>(n) / 10;
  std::vector<Dialogue> train(corpus.begin(), corpus.begin() + train_n);
  std::vector<Dialogue> val(corpus.begin() + train_n,
                            corpus.begin() + train_n + val_n);
  std::vector<Dialogue> test(corpus.begin() + train_n + val_n, corpus.end());
  save_corpus(train, out_dir + "/train.jsonl");
  save_corpus(val, out_dir + "/val.jsonl");
  save_corpus(test, out_dir + "/test.jsonl");
  std::cout << "wrote " << train.size() << " train, " << val.size() << " val, "
            << test.size() << " test dialogues to " << out_dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, const std::string& train_path,
              const std::string& val_path, const std::string& out_dir) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
  apply_seed_override(cfg);
  cfg.validate();

  auto train_corpus = load_corpus(train_path);
  auto val_corpus = load_corpus(val_path);
  std::cout << "loaded " << train_corpus.size() << " train / "
            << val_corpus.size() << " val dialogues\n";
  Vocabulary vocab = build_vocabulary(train_corpus, cfg.vocab_cap);
  std::vector<EncodedExample> train_enc, val_enc;
  for (const auto& d : train_corpus)
    train_enc.push_back(encode_example(d, vocab, cfg.max_input_len));
  for (const auto& d : val_corpus)
    val_enc.push_back(encode_example(d, vocab, cfg.max_input_len));

  fs::create_directories(out_dir);
  vocab.save(out_dir + "/vocab.txt");
  {
    std::ofstream cf(out_dir + "/config.txt");
    print_config(cfg, cf);
  }
  print_config(cfg, std::cout);

  const std::uint64_t fp = model_fingerprint(cfg, vocab);
  std::ofstream metrics(out_dir + "/metrics.csv");
  const std::string ckpt = out_dir + "/best.ckpt";

  TrainResult r = with_variant(cfg, vocab.size(), [&](auto& model) {
    return run_training(model, train_enc, val_enc, cfg, ckpt, fp, &metrics,
                        &std::cout);
  });
  if (r.diverged) {
    std::cerr << "training diverged; last good checkpoint "
              << (r.saved ? "kept at " + ckpt : "was never written") << "\n";
    return kRuntime;
  }
  if (!r.saved) {
    std::cerr << "no checkpoint was written\n";
    return kRuntime;
  }
  std::cout << "best checkpoint at step " << r.best_step << " (val "
            << r.best_val << ") -> " << ckpt << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// decode

int cmd_decode(const std::string& ckpt, const std::string& input,
               const std::string& out_path, std::optional<int> beam,
               std::optional<int> min_len, std::optional<int> max_len,
               std::optional<int> block_ngram) {
  RunDir rd = load_run_dir(ckpt);
  apply_seed_override(rd.cfg);
  DecodeLimits lim = limits_from(rd.cfg);
  if (beam) lim.beam = *beam;
  if (min_len) lim.min_len = *min_len;
  if (max_len) lim.max_len = *max_len;
  if (block_ngram) lim.block_ngram = *block_ngram;
  RIS_VALIDATE(lim.beam >= 1, "--beam must be >= 1");

  auto corpus = load_corpus(input);
  std::ofstream out(out_path);
  RIS_VALIDATE(out.good(), "cannot write decode output to " << out_path);

  const std::uint64_t fp = model_fingerprint(rd.cfg, rd.vocab);
  int decoded = 0, skipped = 0;
  with_variant(rd.cfg, rd.vocab.size(), [&](auto& model) {
    load_checkpoint(ckpt, model.params(), fp);
    for (const auto& d : corpus) {
      EncodedExample ex = encode_example(d, rd.vocab, rd.cfg.max_input_len);
      if (!ex.role_valid) {
        std::cerr << "[warn] example " << ex.id
                  << " has no tokens for one role; skipped\n";
        ++skipped;
        continue;
      }
      DecodedPair res = interactive_beam_search(model, ex, lim);
      json j;
      j["id"] = ex.id;
      j["user_hyp"] = side_text(rd.vocab, ex, res.user.ids);
      j["agent_hyp"] = side_text(rd.vocab, ex, res.agent.ids);
      j["user_logprob"] = res.user.logprob;
      j["agent_logprob"] = res.agent.logprob;
      out << j.dump() << "\n";
      ++decoded;
    }
    return 0;
  });
  std::cout << "decoded " << decoded << " examples (" << skipped
            << " skipped) -> " << out_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct HypEntry {
  Tokens user, agent;
};

std::map<std::string, HypEntry> load_hyps(const std::string& path) {
  std::ifstream in(path);
  RIS_VALIDATE(in.good(), "cannot open hypothesis file " << path);
  std::map<std::string, HypEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
    }
    RIS_VALIDATE(j.contains("id") && j.contains("user_hyp") && j.contains("agent_hyp"),
                 "line " << line_no << ": need id, user_hyp, agent_hyp");
    out[j["id"].get<std::string>()] = {split_ws(j["user_hyp"].get<std::string>()),
                                       split_ws(j["agent_hyp"].get<std::string>())};
  }
  return out;
}

void check_alignment(const std::vector<Dialogue>& refs,
                     const std::map<std::string, HypEntry>& hyps) {
  std::vector<std::string> missing;
  for (const auto& d : refs)
    if (!hyps.count(d.id)) missing.push_back(d.id);
  if (!missing.empty()) {
    std::ostringstream oss;
    oss << missing.size() << " reference ids missing from hypotheses:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i)
      oss << ' ' << missing[i];
    if (missing.size() > 10) oss << " ...";
    throw ValidationError(oss.str());
  }
}

struct RoleScores {
  // per-example rows, aligned with the reference order
  std::vector<PRF> r1, r2, rl, sub;
  std::vector<Tokens> cands, refs;

  PRF mean(const std::vector<PRF>& v) const {
    PRF m;
    if (v.empty()) return m;
    for (const auto& p : v) {
      m.precision += p.precision;
      m.recall += p.recall;
      m.f1 += p.f1;
    }
    m.precision /= v.size();
    m.recall /= v.size();
    m.f1 /= v.size();
    return m;
  }
};

int cmd_eval(const std::string& hyp_path, const std::string& ref_path,
             const std::string& report_path, const std::string& period,
             double sub_threshold, const std::string& compare_path) {
  auto refs = load_corpus(ref_path);
  auto hyps = load_hyps(hyp_path);
  check_alignment(refs, hyps);

  auto score_side = [&](bool user, const std::map<std::string, HypEntry>& h) {
    RoleScores rs;
    for (const auto& d : refs) {
      const Tokens& cand = user ? h.at(d.id).user : h.at(d.id).agent;
      const Tokens& ref = user ? d.user_summary : d.agent_summary;
      rs.r1.push_back(rouge_n(cand, ref, 1));
      rs.r2.push_back(rouge_n(cand, ref, 2));
      rs.rl.push_back(rouge_l(cand, ref, period));
      rs.sub.push_back(sub_summary_match(cand, ref, sub_threshold, period));
      rs.cands.push_back(cand);
      rs.refs.push_back(ref);
    }
    return rs;
  };
  RoleScores user = score_side(true, hyps), agent = score_side(false, hyps);
  BleuResult user_bleu = bleu(user.cands, user.refs);
  BleuResult agent_bleu = bleu(agent.cands, agent.refs);

  std::ofstream report(report_path);
  RIS_VALIDATE(report.good(), "cannot write report to " << report_path);
  report << std::setprecision(10);
  report << "# rouge_l: summary-level union-LCS, sentences split on '" << period
         << "'; bleu: corpus-level BLEU-4 with add-one smoothing on zero "
            "counts; sub_summary threshold "
         << sub_threshold << "\n";
  report << "kind,id,role,metric,precision,recall,f1\n";
  auto emit_rows = [&](const char* role, const RoleScores& rs) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const std::string& id = refs[i].id;
      auto row = [&](const char* metric, const PRF& p) {
        report << "example," << id << ',' << role << ',' << metric << ','
               << p.precision << ',' << p.recall << ',' << p.f1 << "\n";
      };
      row("rouge1", rs.r1[i]);
      row("rouge2", rs.r2[i]);
      row("rougeL", rs.rl[i]);
      row("sub_summary", rs.sub[i]);
    }
    auto mean_row = [&](const char* metric, const PRF& p) {
      report << "mean,," << role << ',' << metric << ',' << p.precision << ','
             << p.recall << ',' << p.f1 << "\n";
    };
    mean_row("rouge1", rs.mean(rs.r1));
    mean_row("rouge2", rs.mean(rs.r2));
    mean_row("rougeL", rs.mean(rs.rl));
    mean_row("sub_summary", rs.mean(rs.sub));
  };
  emit_rows("user", user);
  emit_rows("agent", agent);
  report << "mean,,user,bleu,,," << user_bleu.score << "\n";
  report << "mean,,agent,bleu,,," << agent_bleu.score << "\n";

  auto line = [&](const char* name, double u, double a) {
    std::cout << std::left << std::setw(18) << name << std::right << std::fixed
              << std::setprecision(4) << std::setw(8) << u << std::setw(9) << a
              << "\n";
  };
  std::cout << std::left << std::setw(18) << "metric" << std::right
            << std::setw(8) << "user" << std::setw(9) << "agent" << "\n";
  line("ROUGE-1 F1", user.mean(user.r1).f1, agent.mean(agent.r1).f1);
  line("ROUGE-2 F1", user.mean(user.r2).f1, agent.mean(agent.r2).f1);
  line("ROUGE-L F1", user.mean(user.rl).f1, agent.mean(agent.rl).f1);
  line("BLEU", user_bleu.score, agent_bleu.score);
  line("SubSummary P", user.mean(user.sub).precision, agent.mean(agent.sub).precision);
  line("SubSummary R", user.mean(user.sub).recall, agent.mean(agent.sub).recall);
  line("SubSummary F1", user.mean(user.sub).f1, agent.mean(agent.sub).f1);

  if (!compare_path.empty()) {
    auto other = load_hyps(compare_path);
    check_alignment(refs, other);
    RoleScores user_b = score_side(true, other), agent_b = score_side(false, other);
    auto f1s = [](const std::vector<PRF>& v) {
      std::vector<double> out;
      out.reserve(v.size());
      for (const auto& p : v) out.push_back(p.f1);
      return out;
    };
    const double pu = paired_t_test(f1s(user.rl), f1s(user_b.rl));
    const double pa = paired_t_test(f1s(agent.rl), f1s(agent_b.rl));
    std::cout << "paired t-test on ROUGE-L F1 vs " << compare_path
              << ": user p=" << std::setprecision(6) << pu << ", agent p=" << pa
              << "\n";
  }
  std::cout << "report written to " << report_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

RunConfig tiny_gradcheck_cfg(Variant variant) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.embedding_dim = 8;
  cfg.hidden_dim = 12;
  cfg.attn_dim = 8;
  cfg.fusion_dim = 12;
  cfg.layer_count = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.vocab_cap = 50;
  cfg.max_input_len = 64;
  cfg.max_output_len = 32;
  cfg.min_output_len = 1;
  cfg.seed = 2024;
  return cfg;
}

// Two short dialogues over a vocabulary padded to the requested size; the
// finite-difference sweep revisits the whole graph four times per parameter
// element, so example length directly multiplies the runtime.
struct GradcheckFixture {
  Vocabulary vocab;
  std::vector<EncodedExample> enc;
};

GradcheckFixture gradcheck_fixture(int vocab_size, int max_input) {
  Dialogue d1;
  d1.id = "gc1";
  d1.utterances.push_back({Role::User, {"t1", "t2", "t3", "t4"}});
  d1.utterances.push_back({Role::Agent, {"t5", "t6", "t7"}});
  d1.user_summary = {"t2", "t3"};
  d1.agent_summary = {"t5", "t7", "t9"};
  Dialogue d2;
  d2.id = "gc2";
  d2.utterances.push_back({Role::User, {"t8", "t2"}});
  d2.utterances.push_back({Role::Agent, {"t9", "t10", "t6"}});
  d2.user_summary = {"t8", "t2", "t1"};
  d2.agent_summary = {"t10", "t6"};
  GradcheckFixture fx;
  fx.vocab = build_vocabulary({d1, d2}, vocab_size);
  for (int i = fx.vocab.size(); i < vocab_size; ++i)
    fx.vocab.add("filler" + std::to_string(i));
  fx.enc.push_back(encode_example(d1, fx.vocab, max_input));
  fx.enc.push_back(encode_example(d2, fx.vocab, max_input));
  return fx;
}

template <typename ModelT>
GradCheckReport gradcheck_model(const RunConfig& cfg, double eps) {
  GradcheckFixture fx = gradcheck_fixture(50, cfg.max_input_len);
  ModelT model(cfg, fx.vocab.size());
  const double beta = cfg.beta_resolved();
  const double covw = cfg.coverage_weight_resolved();
  Tape<double> tp;
  auto fwd = [&](bool with_grad) {
    tp.clear();
    Ref total = tp.scalar(0.0);
    for (const auto& ex : fx.enc) {
      LossOpts opts;
      auto el = model.teacher_forced(tp, ExampleView::whole(ex), opts);
      Ref t = joint_nll_loss(tp, el.user_gold_logp, el.agent_gold_logp, cfg.alpha);
      if (el.has_kl && beta > 0.0)
        t = tp.add(t, tp.scale(tp.add(el.kl_user, el.kl_agent), beta));
      if (covw > 0.0) {
        Ref cov = tp.add(tp.scale(el.coverage_user, cfg.alpha),
                         tp.scale(el.coverage_agent, 1.0 - cfg.alpha));
        t = tp.add(t, tp.scale(cov, covw));
      }
      total = tp.add(total, t);
    }
    total = tp.scale(total, 1.0 / fx.enc.size());
    if (with_grad) tp.backward(total);
    return tp.val(total).at(0);
  };
  return check_gradients<double>(fwd, model.params(), eps);
}

int cmd_gradcheck(const std::string& config_path, const std::string& variant,
                  double threshold, double eps) {
  std::vector<RunConfig> configs;
  if (!config_path.empty()) {
    RunConfig cfg = parse_config_file(config_path);
    apply_seed_override(cfg);
    configs.push_back(cfg);
  } else if (variant == "recurrent") {
    configs.push_back(tiny_gradcheck_cfg(Variant::Recurrent));
  } else if (variant == "transformer") {
    configs.push_back(tiny_gradcheck_cfg(Variant::Transformer));
  } else {
    configs.push_back(tiny_gradcheck_cfg(Variant::Recurrent));
    configs.push_back(tiny_gradcheck_cfg(Variant::Transformer));
  }
  bool ok = true;
  for (const RunConfig& cfg : configs) {
    GradCheckReport rep =
        cfg.variant == Variant::Recurrent
            ? gradcheck_model<RecurrentModel<double>>(cfg, eps)
            : gradcheck_model<TransformerModel<double>>(cfg, eps);
    std::cout << to_string(cfg.variant) << ": " << rep.entries.size()
              << " parameters, worst rel err " << std::scientific
              << std::setprecision(3) << rep.worst << "\n";
    for (const auto& e : rep.entries) {
      if (e.aborted || e.max_rel_err >= threshold)
        std::cout << "  FAIL " << e.name << " rel err " << e.max_rel_err
                  << (e.aborted ? " (non-finite loss)" : "") << "\n";
    }
    ok = ok && rep.ok(threshold);
  }
  std::cout.unsetf(std::ios::scientific);
  if (!ok) {
    std::cerr << "gradient check failed at threshold " << threshold << "\n";
    return kRuntime;
  }
  std::cout << "gradient check passed at threshold " << threshold << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// attn-dump

int cmd_attn_dump(const std::string& ckpt, const std::string& input,
                  const std::string& id, const std::string& out_dir,
                  std::optional<int> max_len) {
  RunDir rd = load_run_dir(ckpt);
  auto corpus = load_corpus(input);
  const Dialogue* found = nullptr;
  for (const auto& d : corpus)
    if (d.id == id) found = &d;
  RIS_VALIDATE(found != nullptr, "id '" << id << "' not present in " << input);
  EncodedExample ex = encode_example(*found, rd.vocab, rd.cfg.max_input_len);
  RIS_VALIDATE(ex.role_valid, "example " << id << " lacks tokens for one role");
  DecodeLimits lim = limits_from(rd.cfg);
  lim.beam = 1;
  if (max_len) lim.max_len = *max_len;
  fs::create_directories(out_dir);
  const std::uint64_t fp = model_fingerprint(rd.cfg, rd.vocab);
  DecodedPair res = with_variant(rd.cfg, rd.vocab.size(), [&](auto& model) {
    load_checkpoint(ckpt, model.params(), fp);
    return export_attention(model, ex, lim, out_dir);
  });
  std::cout << "user: " << side_text(rd.vocab, ex, res.user.ids) << "\n";
  std::cout << "agent: " << side_text(rd.vocab, ex, res.agent.ids) << "\n";
  std::cout << "attention matrices written to " << out_dir << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"role-interaction dialogue summarizer"};
  app.require_subcommand(0, 1);

  bool print_cfg = false;
  std::string root_config;
  app.add_flag("--print-config", print_cfg,
               "print the resolved configuration and exit");
  app.add_option("--config", root_config,
                 "config file used with --print-config");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out;
  long long synth_n = 0;
  std::uint64_t synth_seed = 17;
  double synth_frac = 0.5;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "number of dialogues")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--integration-fraction", synth_frac,
                    "fraction of dialogues whose agent summary needs user content");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_cfg, train_train, train_val, train_out;
  train->add_option("--config", train_cfg, "key=value config file");
  train->add_option("--train", train_train, "training corpus JSONL")->required();
  train->add_option("--val", train_val, "validation corpus JSONL")->required();
  train->add_option("--out", train_out, "output directory")->required();

  // decode
  auto* decode = app.add_subcommand("decode", "decode summaries");
  std::string dec_ckpt, dec_input, dec_out;
  int dec_beam = -1, dec_min = -1, dec_max = -1, dec_block = -1;
  decode->add_option("--ckpt", dec_ckpt, "checkpoint file")->required();
  decode->add_option("--input", dec_input, "corpus JSONL to decode")->required();
  decode->add_option("--out", dec_out, "output JSONL")->required();
  decode->add_option("--beam", dec_beam, "beam size (default from config)");
  decode->add_option("--min-len", dec_min, "minimum output length");
  decode->add_option("--max-len", dec_max, "maximum output length");
  decode->add_option("--block-ngram", dec_block, "repeat n-gram blocking size");

  // eval
  auto* eval = app.add_subcommand("eval", "score hypotheses against references");
  std::string eval_hyp, eval_ref, eval_report, eval_period = ".", eval_compare;
  double eval_thresh = 0.5;
  eval->add_option("--hyp", eval_hyp, "decode output JSONL")->required();
  eval->add_option("--ref", eval_ref, "reference corpus JSONL")->required();
  eval->add_option("--report", eval_report, "report CSV path")->required();
  eval->add_option("--period", eval_period, "sentence-splitting token");
  eval->add_option("--sub-threshold", eval_thresh,
                   "sub-summary matching threshold");
  eval->add_option("--compare", eval_compare,
                   "second hypothesis file for a paired t-test");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_cfg, gc_variant = "both";
  double gc_threshold = 1e-3, gc_eps = 5e-4;
  gc->add_option("--config", gc_cfg, "config file (tiny profile when absent)");
  gc->add_option("--variant", gc_variant, "recurrent|transformer|both");
  gc->add_option("--threshold", gc_threshold, "max relative error tolerated");
  gc->add_option("--eps", gc_eps, "finite-difference step");

  // attn-dump
  auto* ad = app.add_subcommand("attn-dump", "export attention matrices");
  std::string ad_ckpt, ad_input, ad_id, ad_out;
  int ad_maxlen = -1;
  ad->add_option("--ckpt", ad_ckpt, "checkpoint file")->required();
  ad->add_option("--input", ad_input, "corpus JSONL")->required();
  ad->add_option("--id", ad_id, "dialogue id to dump")->required();
  ad->add_option("--out", ad_out, "output directory")->required();
  ad->add_option("--max-len", ad_maxlen, "decode length cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (print_cfg) {
      RunConfig cfg = root_config.empty() ? RunConfig{} : parse_config_file(root_config);
      apply_seed_override(cfg);
      print_config(cfg, std::cout);
      return kOk;
    }
    if (synth->parsed()) {
      if (const char* env = std::getenv("RIS_SEED"))
        synth_seed = std::stoull(env);
      return cmd_synth(synth_out, synth_n, synth_seed, synth_frac);
    }
    if (train->parsed())
      return cmd_train(train_cfg, train_train, train_val, train_out);
    if (decode->parsed()) {
      auto opt = [](int v) {
        return v >= 0 ? std::optional<int>(v) : std::nullopt;
      };
      return cmd_decode(dec_ckpt, dec_input, dec_out, opt(dec_beam),
                        opt(dec_min), opt(dec_max), opt(dec_block));
    }
    if (eval->parsed())
      return cmd_eval(eval_hyp, eval_ref, eval_report, eval_period, eval_thresh,
                      eval_compare);
    if (gc->parsed())
      return cmd_gradcheck(gc_cfg, gc_variant, gc_threshold, gc_eps);
    if (ad->parsed()) {
      auto opt = [](int v) {
        return v >= 0 ? std::optional<int>(v) : std::nullopt;
      };
      return cmd_attn_dump(ad_ckpt, ad_input, ad_id, ad_out, opt(ad_maxlen));
    }
    std::cout << app.help();
    return kOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace ris::cli
