#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "ris/corpus.hpp"
#include "ris/rng.hpp"

using namespace ris;

namespace {

Dialogue tiny_dialogue() {
  Dialogue d;
  d.id = "t1";
  d.utterances.push_back({Role::User, {"a", "b"}});
  d.utterances.push_back({Role::Agent, {"c"}});
  d.user_summary = {"a"};
  d.agent_summary = {"c"};
  return d;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/ris_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("corpus round trip and loader errors") {
  SUBCASE("well-formed two-line file loads two dialogues") {
    TempFile f("roundtrip.jsonl");
    Dialogue d = tiny_dialogue();
    Dialogue d2 = tiny_dialogue();
    d2.id = "t2";
    d2.needs_integration = true;
    save_corpus({d, d2}, f.path);
    auto loaded = load_corpus(f.path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].id == "t1");
    CHECK(loaded[1].needs_integration);
    CHECK(loaded[0].utterances[0].tokens == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("missing field is named with its line") {
    TempFile f("missing.jsonl");
    {
      std::ofstream out(f.path);
      out << R"({"id":"x","utterances":[{"role":"user","text":"a"}],"user_summary":"a"})" << "\n";
    }
    try {
      load_corpus(f.path);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("agent_summary") != std::string::npos);
      CHECK(msg.find("line 1") != std::string::npos);
    }
  }
  SUBCASE("malformed line reports its number") {
    TempFile f("malformed.jsonl");
    {
      std::ofstream out(f.path);
      out << R"({"id":"ok","utterances":[{"role":"user","text":"a"},{"role":"agent","text":"b"}],"user_summary":"a","agent_summary":"b"})" << "\n";
      out << "{not json\n";
    }
    try {
      load_corpus(f.path);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("csds-scale smoke: 9101 records parse") {
    TempFile f("csds_scale.jsonl");
    auto corpus = generate_synthetic_corpus(9101, 3, 0.5);
    save_corpus(corpus, f.path);
    auto loaded = load_corpus(f.path);
    CHECK(loaded.size() == 9101);
  }
}

TEST_CASE("serialize_dialogue") {
  Dialogue d = tiny_dialogue();
  SUBCASE("role tags front each utterance") {
    auto s = serialize_dialogue(d, 500);
    CHECK(s.tokens == std::vector<std::string>{"<user>", "a", "b", "<agent>", "c"});
    CHECK(s.roles == std::vector<RoleLabel>{RoleLabel::User, RoleLabel::User,
                                            RoleLabel::User, RoleLabel::Agent,
                                            RoleLabel::Agent});
  }
  SUBCASE("truncation keeps the prefix") {
    auto s = serialize_dialogue(d, 3);
    CHECK(s.tokens == std::vector<std::string>{"<user>", "a", "b"});
    CHECK(s.roles.size() == 3);
  }
  SUBCASE("role masks from labels cover every position") {
    auto s = serialize_dialogue(d, 500);
    auto m = build_role_masks(s.roles);
    for (std::size_t i = 0; i < s.tokens.size(); ++i)
      CHECK(std::max(m.user[i], m.agent[i]) == 1);
  }
  SUBCASE("empty utterances are skipped") {
    Dialogue e = d;
    e.utterances.insert(e.utterances.begin() + 1, {Role::Agent, {}});
    auto s = serialize_dialogue(e, 500);
    CHECK(s.tokens.size() == 5);
  }
}

TEST_CASE("build_vocabulary") {
  SUBCASE("cap and UNK") {
    Dialogue d;
    d.id = "v";
    d.utterances.push_back({Role::User, {"a", "a", "a", "b", "b"}});
    d.utterances.push_back({Role::Agent, {"c"}});
    d.user_summary = {"a"};   // not counted twice below: summaries count too
    d.agent_summary = {"c"};
    // counts: a=4, b=2, c=2 -> cap 2 keeps {a, b} (tie b vs c broken lexicographically)
    auto v = build_vocabulary({d}, 2);
    CHECK(v.size() == Vocabulary::kReserved + 2);
    CHECK(v.id("a") >= Vocabulary::kReserved);
    CHECK(v.id("b") >= Vocabulary::kReserved);
    CHECK(v.id("c") == Vocabulary::kUnk);
  }
  SUBCASE("frequency then lexicographic rank") {
    Dialogue d;
    d.id = "v";
    d.utterances.push_back({Role::User, {"b", "b", "a", "a"}});
    d.utterances.push_back({Role::Agent, {"z"}});
    d.user_summary = {"z"};
    d.agent_summary = {"z"};
    auto v = build_vocabulary({d}, 10);
    // z has count 3, then a and b tie at 2 -> a first.
    CHECK(v.id("z") == Vocabulary::kReserved);
    CHECK(v.id("a") == Vocabulary::kReserved + 1);
    CHECK(v.id("b") == Vocabulary::kReserved + 2);
  }
  SUBCASE("reserved ids are fixed") {
    auto v = build_vocabulary({tiny_dialogue()}, 10);
    CHECK(v.id("<pad>") == 0);
    CHECK(v.id("<unk>") == 1);
    CHECK(v.id("<bos>") == 2);
    CHECK(v.id("<eos>") == 3);
    CHECK(v.id("<user>") == 4);
    CHECK(v.id("<agent>") == 5);
    CHECK(v.token(Vocabulary::kRoleAgent) == "<agent>");
  }
  SUBCASE("save load round trip") {
    auto v = build_vocabulary({tiny_dialogue()}, 10);
    const std::string path = "/tmp/ris_test_vocab.txt";
    v.save(path);
    auto w = Vocabulary::load(path);
    CHECK(w.size() == v.size());
    CHECK(w.content_hash() == v.content_hash());
    CHECK(w.id("a") == v.id("a"));
    std::remove(path.c_str());
  }
}

TEST_CASE("build_role_masks") {
  SUBCASE("construction") {
    auto m = build_role_masks({RoleLabel::User, RoleLabel::User, RoleLabel::Agent});
    CHECK(m.user == std::vector<std::uint8_t>{1, 1, 0});
    CHECK(m.agent == std::vector<std::uint8_t>{0, 0, 1});
  }
  SUBCASE("degenerate single-role dialogue flags as invalid example") {
    Dialogue d;
    d.id = "deg";
    d.utterances.push_back({Role::User, {"a"}});
    d.user_summary = {"a"};
    d.agent_summary = {"a"};
    Vocabulary v = build_vocabulary({d}, 10);
    auto e = encode_example(d, v, 500);
    CHECK_FALSE(e.role_valid);
    CHECK_FALSE(e.masks.agent_nonempty());
  }
  SUBCASE("disjoint and exhaustive over random corpora") {
    auto corpus = generate_synthetic_corpus(200, 11, 0.5);
    for (const auto& d : corpus) {
      auto s = serialize_dialogue(d, 500);
      auto m = build_role_masks(s.roles);
      for (std::size_t i = 0; i < s.roles.size(); ++i) {
        CHECK(m.user[i] * m.agent[i] == 0);
        CHECK(std::max(m.user[i], m.agent[i]) == 1);
      }
    }
  }
}

TEST_CASE("encode_example extended ids") {
  Dialogue d = tiny_dialogue();
  d.utterances[0].tokens = {"a", "rare"};
  d.agent_summary = {"rare", "c"};
  Vocabulary v;
  // Only "a" and "c" in vocab; "rare" is OOV but copiable.
  v.add("a");
  v.add("c");
  auto e = encode_example(d, v, 500);
  const int rare_pos = 2;  // <user> a rare
  CHECK(e.input_ids[rare_pos] == Vocabulary::kUnk);
  CHECK(e.ext_input_ids[rare_pos] == v.size());
  REQUIRE(e.oov_tokens.size() == 1);
  CHECK(e.oov_tokens[0] == "rare");
  CHECK(e.agent_target_ext_ids[0] == v.size());
  CHECK(e.agent_target_ids[0] == Vocabulary::kUnk);
  CHECK(e.agent_target_ids.back() == Vocabulary::kEos);
}

TEST_CASE("generate_synthetic_corpus") {
  SUBCASE("deterministic under seed") {
    auto a = generate_synthetic_corpus(5, 7, 0.5);
    auto b = generate_synthetic_corpus(5, 7, 0.5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].user_summary == b[i].user_summary);
      CHECK(a[i].agent_summary == b[i].agent_summary);
      CHECK(a[i].utterances.size() == b[i].utterances.size());
    }
  }
  SUBCASE("fraction 0: agent summary slots all appear in agent utterances") {
    auto corpus = generate_synthetic_corpus(50, 3, 0.0);
    for (const auto& d : corpus) {
      CHECK_FALSE(d.needs_integration);
      std::set<std::string> agent_tokens;
      for (const auto& u : d.utterances)
        if (u.role == Role::Agent)
          agent_tokens.insert(u.tokens.begin(), u.tokens.end());
      for (const auto& t : d.agent_summary) {
        if (t == "agent" || t == "said" || t == "." ) continue;  // template glue
        CHECK(agent_tokens.count(t) == 1);
      }
    }
  }
  SUBCASE("fraction 1: agent summary needs a user-only span of >= 3 tokens") {
    auto corpus = generate_synthetic_corpus(50, 5, 1.0);
    for (const auto& d : corpus) {
      CHECK(d.needs_integration);
      auto contains_span = [](const std::vector<std::string>& hay,
                              const std::vector<std::string>& needle) {
        if (needle.size() > hay.size()) return false;
        for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i)
          if (std::equal(needle.begin(), needle.end(), hay.begin() + i))
            return true;
        return false;
      };
      // Find a >=3-token window of the agent summary inside user utterances
      // but no agent utterance.
      bool found = false;
      for (std::size_t i = 0; i + 3 <= d.agent_summary.size() && !found; ++i) {
        std::vector<std::string> span(d.agent_summary.begin() + i,
                                      d.agent_summary.begin() + i + 3);
        bool in_user = false, in_agent = false;
        for (const auto& u : d.utterances) {
          if (u.role == Role::User && contains_span(u.tokens, span)) in_user = true;
          if (u.role == Role::Agent && contains_span(u.tokens, span)) in_agent = true;
        }
        found = in_user && !in_agent;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("batch iterator") {
  auto corpus = generate_synthetic_corpus(7, 13, 0.5);
  Vocabulary v = build_vocabulary(corpus, 10000);
  std::vector<EncodedExample> enc;
  for (const auto& d : corpus) enc.push_back(encode_example(d, v, 500));

  SUBCASE("padding to the batch max with pad mask") {
    EncodedExample a = enc[0], b = enc[1];
    a.input_ids = {7, 8, 9};
    a.ext_input_ids = {7, 8, 9};
    a.role_ids = {RoleLabel::User, RoleLabel::User, RoleLabel::Agent};
    a.masks = build_role_masks(a.role_ids);
    a.source_tokens = {"x", "y", "z"};
    b.input_ids = {4, 5, 6, 7, 8};
    b.ext_input_ids = {4, 5, 6, 7, 8};
    b.role_ids.assign(5, RoleLabel::User);
    b.role_ids[4] = RoleLabel::Agent;
    b.masks = build_role_masks(b.role_ids);
    b.source_tokens = {"p", "q", "r", "s", "t"};
    auto batch = pad_batch({&a, &b});
    CHECK(batch.examples[0].input_ids.size() == 5);
    CHECK(batch.input_pad_mask[0] == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
    CHECK(batch.input_pad_mask[1] == std::vector<std::uint8_t>{1, 1, 1, 1, 1});
    CHECK(batch.examples[0].input_ids[4] == Vocabulary::kPad);
    CHECK(batch.examples[0].role_ids[4] == RoleLabel::Pad);
    CHECK(batch.input_len[0] == 3);
  }
  SUBCASE("batch_size 1 keeps examples unpadded") {
    BatchIterator it(enc, 1, 99, false);
    PaddedBatch b;
    REQUIRE(it.next(b));
    CHECK(b.examples.size() == 1);
    CHECK(b.examples[0].input_ids.size() == enc[0].input_ids.size());
  }
  SUBCASE("shuffled iteration reproducible under seed") {
    auto collect = [&](std::uint64_t seed) {
      BatchIterator it(enc, 2, seed, true);
      std::vector<std::string> ids;
      PaddedBatch b;
      for (int k = 0; k < 4; ++k) {
        it.next(b);
        for (const auto& e : b.examples) ids.push_back(e.id);
      }
      return ids;
    };
    CHECK(collect(5) == collect(5));
    CHECK(collect(5) != collect(6));
  }
  SUBCASE("batch_size 0 rejected") {
    CHECK_THROWS_AS(BatchIterator(enc, 0, 1, false), ValidationError);
  }
}
