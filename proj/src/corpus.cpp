#include "ris/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "ris/rng.hpp"

namespace ris {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

namespace {
const std::vector<std::string> kReservedTokens = {
    "<pad>", "<unk>", "<bos>", "<eos>", "<user>", "<agent>"};
}

Vocabulary::Vocabulary() {
  tokens_ = kReservedTokens;
  reindex();
}

void Vocabulary::reindex() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_.emplace_back(tokens_[i], static_cast<int>(i));
  std::sort(index_.begin(), index_.end());
}

int Vocabulary::id(const std::string& token) const {
  auto it = std::lower_bound(index_.begin(), index_.end(),
                             std::make_pair(token, 0));
  if (it != index_.end() && it->first == token) return it->second;
  return kUnk;
}

bool Vocabulary::contains(const std::string& token) const {
  auto it = std::lower_bound(index_.begin(), index_.end(),
                             std::make_pair(token, 0));
  return it != index_.end() && it->first == token;
}

const std::string& Vocabulary::token(int id) const {
  RIS_REQUIRE(id >= 0 && id < size(), "token id " << id << " out of range "
                                                  << size());
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::add(const std::string& token) {
  RIS_REQUIRE(!contains(token), "vocabulary already contains '" << token << "'");
  tokens_.push_back(token);
  reindex();
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  RIS_REQUIRE(out.good(), "cannot write vocabulary to " << path);
  for (int i = kReserved; i < size(); ++i) out << tokens_[i] << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  RIS_VALIDATE(in.good(), "cannot read vocabulary from " << path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.tokens_.push_back(line);
  }
  v.reindex();
  return v;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const auto& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Text helpers

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream iss(text);
  for (std::string tok; iss >> tok;) out.push_back(tok);
  return out;
}

std::string join_ws(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL I/O

namespace {

Dialogue parse_dialogue(const json& j, int line_no) {
  auto need = [&](const char* field) -> const json& {
    auto it = j.find(field);
    RIS_VALIDATE(it != j.end(),
                 "line " << line_no << ": missing field \"" << field << "\"");
    return *it;
  };
  Dialogue d;
  d.id = need("id").get<std::string>();
  const json& utts = need("utterances");
  RIS_VALIDATE(utts.is_array(),
               "line " << line_no << ": \"utterances\" must be an array");
  for (const auto& ju : utts) {
    auto rit = ju.find("role");
    auto tit = ju.find("text");
    RIS_VALIDATE(rit != ju.end(),
                 "line " << line_no << ": missing field \"role\" in utterance");
    RIS_VALIDATE(tit != ju.end(),
                 "line " << line_no << ": missing field \"text\" in utterance");
    const std::string role = rit->get<std::string>();
    RIS_VALIDATE(role == "user" || role == "agent",
                 "line " << line_no << ": role must be \"user\" or \"agent\", got \""
                         << role << "\"");
    d.utterances.push_back(
        {role == "user" ? Role::User : Role::Agent,
         split_ws(tit->get<std::string>())});
  }
  d.user_summary = split_ws(need("user_summary").get<std::string>());
  d.agent_summary = split_ws(need("agent_summary").get<std::string>());
  if (auto it = j.find("needs_integration"); it != j.end())
    d.needs_integration = it->get<bool>();
  return d;
}

}  // namespace

std::vector<Dialogue> load_corpus(const std::string& path) {
  std::ifstream in(path);
  RIS_VALIDATE(in.good(), "cannot open corpus file " << path);
  std::vector<Dialogue> out;
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
    out.push_back(parse_dialogue(j, line_no));
  }
  return out;
}

std::vector<Dialogue> load_corpus_split(const std::string& dir,
                                        const std::string& split) {
  return load_corpus(dir + "/" + split + ".jsonl");
}

void save_corpus(const std::vector<Dialogue>& corpus, const std::string& path) {
  std::ofstream out(path);
  RIS_REQUIRE(out.good(), "cannot write corpus to " << path);
  for (const Dialogue& d : corpus) {
    json j;
    j["id"] = d.id;
    json utts = json::array();
    for (const Utterance& u : d.utterances) {
      utts.push_back({{"role", u.role == Role::User ? "user" : "agent"},
                      {"text", join_ws(u.tokens)}});
    }
    j["utterances"] = std::move(utts);
    j["user_summary"] = join_ws(d.user_summary);
    j["agent_summary"] = join_ws(d.agent_summary);
    j["needs_integration"] = d.needs_integration;
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Vocabulary construction

Vocabulary build_vocabulary(const std::vector<Dialogue>& corpus, int cap) {
  RIS_VALIDATE(!corpus.empty(), "build_vocabulary: empty corpus");
  Vocabulary reserved;
  std::map<std::string, long long> counts;
  auto bump = [&](const std::vector<std::string>& tokens) {
    for (const auto& t : tokens)
      if (!reserved.contains(t)) ++counts[t];
  };
  for (const Dialogue& d : corpus) {
    for (const Utterance& u : d.utterances) bump(u.tokens);
    bump(d.user_summary);
    bump(d.agent_summary);
  }
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(),
                                                        counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, cnt] : ranked) {
    (void)cnt;
    if (v.size() - Vocabulary::kReserved >= cap) break;
    v.add(tok);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Serialization and masks

SerializedDialogue serialize_dialogue(const Dialogue& d, int max_input) {
  SerializedDialogue s;
  for (const Utterance& u : d.utterances) {
    if (u.tokens.empty()) {
      std::cerr << "[warn] dialogue " << d.id << ": empty utterance skipped\n";
      continue;
    }
    const RoleLabel label =
        u.role == Role::User ? RoleLabel::User : RoleLabel::Agent;
    s.tokens.push_back(u.role == Role::User ? "<user>" : "<agent>");
    s.roles.push_back(label);
    for (const auto& t : u.tokens) {
      s.tokens.push_back(t);
      s.roles.push_back(label);
    }
  }
  if (max_input > 0 && static_cast<int>(s.tokens.size()) > max_input) {
    s.tokens.resize(static_cast<std::size_t>(max_input));
    s.roles.resize(static_cast<std::size_t>(max_input));
  }
  return s;
}

bool RoleMasks::user_nonempty() const {
  return std::find(user.begin(), user.end(), 1) != user.end();
}

bool RoleMasks::agent_nonempty() const {
  return std::find(agent.begin(), agent.end(), 1) != agent.end();
}

RoleMasks build_role_masks(const std::vector<RoleLabel>& labels) {
  RoleMasks m;
  m.user.resize(labels.size(), 0);
  m.agent.resize(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == RoleLabel::User) m.user[i] = 1;
    else if (labels[i] == RoleLabel::Agent) m.agent[i] = 1;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

std::vector<int> target_ids_plain(const std::vector<std::string>& tokens,
                                  const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> target_ids_extended(const std::vector<std::string>& tokens,
                                     const Vocabulary& vocab,
                                     const std::vector<std::string>& oov,
                                     int vocab_size) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) {
    int id = vocab.id(t);
    if (id == Vocabulary::kUnk) {
      auto it = std::find(oov.begin(), oov.end(), t);
      if (it != oov.end())
        id = vocab_size + static_cast<int>(it - oov.begin());
    }
    ids.push_back(id);
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace

EncodedExample encode_example(const Dialogue& d, const Vocabulary& vocab,
                              int max_input) {
  EncodedExample e;
  e.id = d.id;
  SerializedDialogue s = serialize_dialogue(d, max_input);
  e.source_tokens = s.tokens;
  e.role_ids = s.roles;
  e.masks = build_role_masks(s.roles);
  e.input_ids.reserve(s.tokens.size());
  e.ext_input_ids.reserve(s.tokens.size());
  for (const auto& t : s.tokens) {
    const int id = vocab.id(t);
    e.input_ids.push_back(id);
    if (id != Vocabulary::kUnk) {
      e.ext_input_ids.push_back(id);
    } else {
      auto it = std::find(e.oov_tokens.begin(), e.oov_tokens.end(), t);
      if (it == e.oov_tokens.end()) {
        e.oov_tokens.push_back(t);
        it = std::prev(e.oov_tokens.end());
      }
      e.ext_input_ids.push_back(
          vocab.size() + static_cast<int>(it - e.oov_tokens.begin()));
    }
  }
  e.user_target_ids = target_ids_plain(d.user_summary, vocab);
  e.agent_target_ids = target_ids_plain(d.agent_summary, vocab);
  e.user_target_ext_ids =
      target_ids_extended(d.user_summary, vocab, e.oov_tokens, vocab.size());
  e.agent_target_ext_ids =
      target_ids_extended(d.agent_summary, vocab, e.oov_tokens, vocab.size());
  e.role_valid = e.masks.user_nonempty() && e.masks.agent_nonempty();
  return e;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

const std::vector<std::string> kTopics = {"billing",  "shipping", "refund",
                                          "warranty", "account",  "delivery",
                                          "payment",  "upgrade"};
const std::vector<std::string> kObjects = {"order", "package",      "invoice",
                                           "device", "subscription", "plan"};
const std::vector<std::string> kCodes = {"k1", "k2", "k3", "k4",  "k5",  "k6",
                                         "k7", "k8", "k9", "k10", "k11", "k12"};
const std::vector<std::string> kStatuses = {"approved", "delayed",   "confirmed",
                                            "active",   "cancelled", "pending"};

}  // namespace

std::vector<Dialogue> generate_synthetic_corpus(int n, std::uint64_t seed,
                                                double integration_fraction) {
  RIS_VALIDATE(n >= 1, "generate_synthetic_corpus: n must be >= 1, got " << n);
  RIS_VALIDATE(integration_fraction >= 0.0 && integration_fraction <= 1.0,
               "generate_synthetic_corpus: fraction must lie in [0,1], got "
                   << integration_fraction);
  std::vector<Dialogue> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    Dialogue d;
    d.id = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
    d.needs_integration = rng.uniform() < integration_fraction;

    if (rng.uniform() < 0.5) {
      d.utterances.push_back({Role::User, {"hi"}});
      d.utterances.push_back({Role::Agent, {"hello", "how", "can", "i", "help"}});
    }

    std::vector<std::string> topics = kTopics;
    rng.shuffle(topics);
    const int segments = 1 + static_cast<int>(rng.below(2));
    for (int s = 0; s < segments; ++s) {
      const std::string& topic = topics[static_cast<std::size_t>(s)];
      const std::string& obj = rng.pick(kObjects);
      const std::string& code = rng.pick(kCodes);
      const std::string& status = rng.pick(kStatuses);

      std::vector<std::string> ask;
      if (rng.uniform() < 0.5)
        ask = {"hello", "i", "have", "a", "question", "about"};
      else
        ask = {"can", "you", "help", "with"};
      // The span "topic for obj code" stays contiguous; flagged dialogues
      // keep it out of every agent utterance.
      ask.insert(ask.end(), {topic, "for", obj, code});
      d.utterances.push_back({Role::User, ask});

      if (d.needs_integration) {
        std::vector<std::string> reply =
            rng.uniform() < 0.5
                ? std::vector<std::string>{"yes", "it", "is", status}
                : std::vector<std::string>{"sure", "that", "is", status, "now"};
        d.utterances.push_back({Role::Agent, reply});
        const std::vector<std::string> sum = {"agent", "confirmed", topic,
                                              "for",   obj,         code,
                                              "is",    status,      "."};
        d.agent_summary.insert(d.agent_summary.end(), sum.begin(), sum.end());
      } else {
        std::vector<std::string> reply = {"the", obj, topic, "is", status};
        if (rng.uniform() < 0.5) reply.push_back("today");
        d.utterances.push_back({Role::Agent, reply});
        const std::vector<std::string> sum = {"agent", "said", "the", obj,
                                              topic,   "is",   status, "."};
        d.agent_summary.insert(d.agent_summary.end(), sum.begin(), sum.end());
      }
      const std::vector<std::string> usum = {"user", "asked", "about", topic,
                                             "for",  obj,     code,    "."};
      d.user_summary.insert(d.user_summary.end(), usum.begin(), usum.end());
    }

    if (rng.uniform() < 0.5) {
      d.utterances.push_back({Role::User, {"thanks"}});
      d.utterances.push_back({Role::Agent, {"you", "are", "welcome"}});
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

PaddedBatch pad_batch(const std::vector<const EncodedExample*>& items) {
  PaddedBatch b;
  std::size_t max_in = 0, max_u = 0, max_a = 0;
  for (const auto* e : items) {
    max_in = std::max(max_in, e->input_ids.size());
    max_u = std::max(max_u, e->user_target_ids.size());
    max_a = std::max(max_a, e->agent_target_ids.size());
  }
  for (const auto* e : items) {
    EncodedExample p = *e;
    b.input_len.push_back(static_cast<int>(e->input_ids.size()));
    b.user_len.push_back(static_cast<int>(e->user_target_ids.size()));
    b.agent_len.push_back(static_cast<int>(e->agent_target_ids.size()));
    std::vector<std::uint8_t> im(max_in, 0), um(max_u, 0), am(max_a, 0);
    std::fill(im.begin(), im.begin() + e->input_ids.size(), 1);
    std::fill(um.begin(), um.begin() + e->user_target_ids.size(), 1);
    std::fill(am.begin(), am.begin() + e->agent_target_ids.size(), 1);
    p.input_ids.resize(max_in, Vocabulary::kPad);
    p.ext_input_ids.resize(max_in, Vocabulary::kPad);
    p.role_ids.resize(max_in, RoleLabel::Pad);
    p.masks.user.resize(max_in, 0);
    p.masks.agent.resize(max_in, 0);
    p.user_target_ids.resize(max_u, Vocabulary::kPad);
    p.agent_target_ids.resize(max_a, Vocabulary::kPad);
    p.user_target_ext_ids.resize(max_u, Vocabulary::kPad);
    p.agent_target_ext_ids.resize(max_a, Vocabulary::kPad);
    b.examples.push_back(std::move(p));
    b.input_pad_mask.push_back(std::move(im));
    b.user_target_pad_mask.push_back(std::move(um));
    b.agent_target_pad_mask.push_back(std::move(am));
  }
  return b;
}

BatchIterator::BatchIterator(std::vector<EncodedExample> examples,
                             int batch_size, std::uint64_t seed, bool shuffle)
    : examples_(std::move(examples)),
      batch_size_(batch_size),
      seed_(seed),
      shuffle_(shuffle) {
  RIS_VALIDATE(batch_size_ >= 1, "batch_size must be >= 1, got " << batch_size_);
  start_epoch();
}

void BatchIterator::start_epoch() {
  order_.resize(examples_.size());
  for (std::size_t i = 0; i < order_.size(); ++i)
    order_[i] = static_cast<int>(i);
  if (shuffle_) {
    Rng rng = Rng::derive(seed_, static_cast<std::uint64_t>(epoch_));
    rng.shuffle(order_);
  }
  cursor_ = 0;
}

bool BatchIterator::next(PaddedBatch& out) {
  if (examples_.empty()) return false;
  if (cursor_ >= order_.size()) {
    ++epoch_;
    start_epoch();
  }
  std::vector<const EncodedExample*> items;
  while (cursor_ < order_.size() &&
         static_cast<int>(items.size()) < batch_size_) {
    items.push_back(&examples_[static_cast<std::size_t>(order_[cursor_])]);
    ++cursor_;
  }
  out = pad_batch(items);
  return true;
}

}  // namespace ris
