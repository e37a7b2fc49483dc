#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "titleforge/prng.hpp"
#include "titleforge/tokenizer.hpp"

using namespace titleforge;

namespace {

std::vector<std::string> no_tags_reserved() { return make_reserved_tokens({}); }

/// Corpus in which every character appears both word-internally and
/// word-finally, so any string over the alphabet round-trips.
std::vector<std::string> alphabet_corpus(const std::string& alphabet, Prng& rng,
                                         std::size_t extra_words) {
    std::vector<std::string> texts;
    std::string seeds;
    for (char c : alphabet) {
        seeds += c;
        seeds += ' ';
        seeds += c;
        seeds += alphabet[rng.next_below(alphabet.size())];
        seeds += ' ';
    }
    texts.push_back(seeds);
    std::string words;
    for (std::size_t w = 0; w < extra_words; ++w) {
        const std::size_t len = 1 + rng.next_below(7);
        for (std::size_t i = 0; i < len; ++i) words += alphabet[rng.next_below(alphabet.size())];
        words += ' ';
    }
    texts.push_back(words);
    return texts;
}

std::string random_string(const std::string& alphabet, Prng& rng) {
    std::string s;
    const std::size_t n_words = 1 + rng.next_below(6);
    for (std::size_t w = 0; w < n_words; ++w) {
        if (w) s += ' ';
        const std::size_t len = 1 + rng.next_below(8);
        for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.next_below(alphabet.size())];
    }
    return s;
}

}  // namespace

TEST_CASE("train_bpe follows the merge loop by hand on a 2-word corpus", "[tokenizer]") {
    // Words: aaab -> a a a b#, aab -> a a b#. Pair counts: (a,a)=3, (a,b#)=2.
    // First merge (a,a). Afterwards aaab -> aa a b#, aab -> aa b#; every pair
    // now occurs once, so training stops despite the remaining budget.
    const auto reserved = no_tags_reserved();
    const std::size_t budget = reserved.size() + 2 /*alphabet a,b#*/ + 2 /*merge slots*/;
    const BpeModel model = train_bpe({"aaab", "aab"}, budget, reserved);

    REQUIRE(model.merges.merges.size() == 1);
    CHECK(model.merges.merges[0].first == "a");
    CHECK(model.merges.merges[0].second == "a");

    const std::string b_end = std::string("b") + kWordEnd;
    CHECK(model.vocab.size() == reserved.size() + 3);  // a, b#, aa
    CHECK(model.vocab.id("a") >= 0);
    CHECK(model.vocab.id(b_end) >= 0);
    CHECK(model.vocab.id("aa") >= 0);

    // Encoding replays the same merges.
    const auto ids = encode("aaab", model.vocab, model.merges);
    REQUIRE(ids.size() == 3);
    CHECK(ids[0] == model.vocab.id("aa"));
    CHECK(ids[1] == model.vocab.id("a"));
    CHECK(ids[2] == model.vocab.id(b_end));
}

TEST_CASE("train_bpe with budget exactly alphabet+reserved learns no merges", "[tokenizer]") {
    const auto reserved = no_tags_reserved();
    const BpeModel model = train_bpe({"x"}, reserved.size() + 1, reserved);
    CHECK(model.merges.merges.empty());
    CHECK(model.vocab.size() == reserved.size() + 1);
    CHECK(model.vocab.id(std::string("x") + kWordEnd) >= 0);
}

TEST_CASE("train_bpe rejects budgets below alphabet+reserved", "[tokenizer]") {
    const auto reserved = no_tags_reserved();
    CHECK_THROWS_AS(train_bpe({"abc"}, reserved.size() + 2, reserved), std::invalid_argument);
}

TEST_CASE("train_bpe is deterministic", "[tokenizer]") {
    Prng rng(17);
    const auto texts = alphabet_corpus("abcdefgh", rng, 300);
    const auto reserved = make_reserved_tokens({"cs.CL", "math.AT"});
    const BpeModel first = train_bpe(texts, 120, reserved);
    const BpeModel second = train_bpe(texts, 120, reserved);
    REQUIRE(first.merges.merges.size() == second.merges.merges.size());
    CHECK(first.merges.merges == second.merges.merges);
    CHECK(first.vocab.tokens() == second.vocab.tokens());
}

TEST_CASE("encode maps registered specials to single ids", "[tokenizer]") {
    Prng rng(3);
    const auto texts = alphabet_corpus("mathcs.", rng, 100);
    const auto reserved = make_reserved_tokens({"math.AT", "cs.CL"});
    const BpeModel model = train_bpe(texts, 120, reserved);

    const auto ids = encode("@domain: math.AT", model.vocab, model.merges);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == model.vocab.id(kDomainMarker));
    CHECK(ids[1] == model.vocab.id("math.AT"));

    CHECK(decode(ids, model.vocab) == "@domain: math.AT");

    // No merge output may collide with a reserved string.
    for (const auto& [left, right] : model.merges.merges) {
        CHECK_FALSE(model.vocab.is_reserved(left + right));
    }
}

TEST_CASE("characters outside the alphabet become UNK", "[tokenizer]") {
    const auto reserved = no_tags_reserved();
    const BpeModel model = train_bpe({"ascii only words"}, reserved.size() + 32, reserved);
    const auto ids = encode("ᚠ", model.vocab, model.merges);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == Vocabulary::kUnk);
    CHECK(decode(ids, model.vocab) == "⟨unk⟩");
}

TEST_CASE("encode of empty text and decode of empty ids", "[tokenizer]") {
    const auto reserved = no_tags_reserved();
    const BpeModel model = train_bpe({"abc abc"}, reserved.size() + 8, reserved);
    CHECK(encode("", model.vocab, model.merges).empty());
    CHECK(decode({}, model.vocab) == "");
    CHECK(decode({Vocabulary::kPad, Vocabulary::kEos}, model.vocab) == "");
    CHECK_THROWS_AS(decode({static_cast<int>(model.vocab.size())}, model.vocab),
                    std::out_of_range);
}

TEST_CASE("round trip over the training alphabet", "[tokenizer]") {
    Prng rng(23);
    const std::string alphabet = "abcdefgxyz";
    const auto texts = alphabet_corpus(alphabet, rng, 400);
    const auto reserved = make_reserved_tokens({"cs.CL"});
    const BpeModel model = train_bpe(texts, 160, reserved);
    for (int k = 0; k < 300; ++k) {
        const std::string s = random_string(alphabet, rng);
        CHECK(decode(encode(s, model.vocab, model.merges), model.vocab) == s);
    }
}

TEST_CASE("monotone compression bound", "[tokenizer]") {
    Prng rng(31);
    const std::string alphabet = "qwerty";
    const auto texts = alphabet_corpus(alphabet, rng, 200);
    const BpeModel model = train_bpe(texts, 100, no_tags_reserved());
    for (int k = 0; k < 100; ++k) {
        const std::string s = random_string(alphabet, rng);
        std::size_t chars = 0, words = 1;
        for (char c : s) {
            if (c == ' ') ++words;
            else ++chars;
        }
        CHECK(encode(s, model.vocab, model.merges).size() <= chars + words);
    }
}

TEST_CASE("vocabulary and merge files round trip through their format", "[tokenizer]") {
    Prng rng(7);
    const auto texts = alphabet_corpus("abcdef", rng, 150);
    const auto reserved = make_reserved_tokens({"math.AT", "q-bio.NC"});
    const BpeModel model = train_bpe(texts, 90, reserved);

    std::ostringstream vocab_out, merges_out;
    save_vocabulary(vocab_out, model.vocab);
    save_merges(merges_out, model.merges);

    CHECK(vocab_out.str().rfind("#bpe-v1\n", 0) == 0);
    CHECK(merges_out.str().rfind("#bpe-v1\n", 0) == 0);

    std::istringstream vocab_in(vocab_out.str());
    std::istringstream merges_in(merges_out.str());
    const Vocabulary vocab = load_vocabulary(vocab_in);
    const MergeTable merges = load_merges(merges_in);

    CHECK(vocab.tokens() == model.vocab.tokens());
    CHECK(vocab.reserved_count() == model.vocab.reserved_count());
    CHECK(merges.merges == model.merges.merges);
    CHECK(vocab.domain_tags() == std::vector<std::string>{"math.AT", "q-bio.NC"});

    // Same encoding behaviour after reload.
    const std::string sample = "fed abc @domain: math.AT";
    CHECK(encode(sample, vocab, merges) == encode(sample, model.vocab, model.merges));

    std::istringstream bad("#wrong\n");
    CHECK_THROWS(load_vocabulary(bad));
}

TEST_CASE("control token ids are pinned", "[tokenizer]") {
    const BpeModel model = train_bpe({"a b"}, 16, make_reserved_tokens({"cs.CL"}));
    CHECK(model.vocab.id(kPadToken) == Vocabulary::kPad);
    CHECK(model.vocab.id(kEosToken) == Vocabulary::kEos);
    CHECK(model.vocab.id(kUnkToken) == Vocabulary::kUnk);
    CHECK(model.vocab.is_literal_special("cs.CL"));
    CHECK(model.vocab.is_literal_special(kDomainMarker));
    CHECK_FALSE(model.vocab.is_literal_special(kPadToken));
}
