#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ris/common.hpp"

namespace ris {

enum class Role : std::uint8_t { User, Agent };
enum class RoleLabel : std::uint8_t { User, Agent, Pad };

struct Utterance {
  Role role;
  std::vector<std::string> tokens;
};

// One dialogue with its two role-oriented reference summaries. Text fields
// are pre-tokenized; tokenization here is whitespace splitting only.
struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;
  std::vector<std::string> user_summary;
  std::vector<std::string> agent_summary;
  bool needs_integration = false;
};

// token <-> id bijection with fixed reserved entries.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kRoleUser = 4;
  static constexpr int kRoleAgent = 5;
  static constexpr int kReserved = 6;

  Vocabulary();

  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  void add(const std::string& token);  // appends; rejects duplicates

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> index_;  // sorted for lookup
  void reindex();
};

std::vector<std::string> split_ws(const std::string& text);
std::string join_ws(const std::vector<std::string>& tokens);

// JSONL corpus I/O. One object per line; malformed lines and missing fields
// are reported with their line number.
std::vector<Dialogue> load_corpus(const std::string& path);
std::vector<Dialogue> load_corpus_split(const std::string& dir, const std::string& split);
void save_corpus(const std::vector<Dialogue>& corpus, const std::string& path);

// Frequency-ranked vocabulary over utterances and both summaries; ties break
// lexicographically; reserved ids sit outside the cap.
Vocabulary build_vocabulary(const std::vector<Dialogue>& corpus, int cap = 10000);

struct SerializedDialogue {
  std::vector<std::string> tokens;   // [role tag, content...] per utterance
  std::vector<RoleLabel> roles;      // aligned 1:1 with tokens
};

SerializedDialogue serialize_dialogue(const Dialogue& d, int max_input);

struct RoleMasks {
  std::vector<std::uint8_t> user;
  std::vector<std::uint8_t> agent;
  bool user_nonempty() const;
  bool agent_nonempty() const;
};

RoleMasks build_role_masks(const std::vector<RoleLabel>& labels);

struct EncodedExample {
  std::string id;
  std::vector<std::string> source_tokens;
  std::vector<int> input_ids;      // kUnk for out-of-vocabulary tokens
  std::vector<int> ext_input_ids;  // source OOVs get ids >= vocab size
  std::vector<std::string> oov_tokens;
  std::vector<RoleLabel> role_ids;
  RoleMasks masks;
  std::vector<int> user_target_ids;       // end with kEos
  std::vector<int> agent_target_ids;      // end with kEos
  std::vector<int> user_target_ext_ids;   // copy-aware target ids
  std::vector<int> agent_target_ext_ids;
  bool role_valid = true;  // both roles present after truncation

  int input_len() const { return static_cast<int>(input_ids.size()); }
  int ext_vocab_size(int vocab_size) const {
    return vocab_size + static_cast<int>(oov_tokens.size());
  }
};

EncodedExample encode_example(const Dialogue& d, const Vocabulary& vocab,
                              int max_input);

// Templated customer-service dialogues over a closed token inventory.
// A flagged dialogue's agent summary splices a span that occurs only in
// user utterances, so producing it requires cross-role information.
std::vector<Dialogue> generate_synthetic_corpus(int n, std::uint64_t seed,
                                                double integration_fraction);

struct PaddedBatch {
  std::vector<EncodedExample> examples;  // padded copies
  std::vector<std::vector<std::uint8_t>> input_pad_mask;  // 1 = real token
  std::vector<std::vector<std::uint8_t>> user_target_pad_mask;
  std::vector<std::vector<std::uint8_t>> agent_target_pad_mask;
  std::vector<int> input_len, user_len, agent_len;  // true lengths
};

// Deterministic epoch iterator with within-batch padding per field.
class BatchIterator {
 public:
  BatchIterator(std::vector<EncodedExample> examples, int batch_size,
                std::uint64_t seed, bool shuffle);

  // Fills the next batch, cycling epochs forever; returns false only for an
  // empty example set.
  bool next(PaddedBatch& out);

  int epoch() const { return epoch_; }

 private:
  std::vector<EncodedExample> examples_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  int batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  int epoch_ = 0;
  void start_epoch();
};

PaddedBatch pad_batch(const std::vector<const EncodedExample*>& items);

}  // namespace ris
