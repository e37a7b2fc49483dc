#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "titleforge/corpus.hpp"

using namespace titleforge;

namespace {

std::string json_line(const std::string& id, const std::string& title,
                      const std::string& abstract, const std::string& categories) {
    nlohmann::json j{{"id", id}, {"title", title}, {"abstract", abstract},
                     {"categories", categories}};
    return j.dump();
}

}  // namespace

TEST_CASE("normalize_text collapses whitespace and is idempotent", "[corpus]") {
    CHECK(normalize_text("a\n  b\tc ") == "a b c");
    CHECK(normalize_text("") == "");
    const std::string math = "one non-degenerate full $n$-dimensional cube";
    CHECK(normalize_text(math) == math);

    Prng rng(99);
    for (int k = 0; k < 200; ++k) {
        std::string s;
        const std::size_t len = rng.next_below(40);
        for (std::size_t i = 0; i < len; ++i) {
            const char alphabet[] = " \t\n xyz$\\-";
            s.push_back(alphabet[rng.next_below(sizeof(alphabet) - 1)]);
        }
        CHECK(normalize_text(normalize_text(s)) == normalize_text(s));
    }
}

TEST_CASE("parse_metadata accepts the arXiv line shape", "[corpus]") {
    std::istringstream in(json_line("math/0503323", "Towards a homotopy theory of process algebra",
                                    "This paper proves that labelled flows are expressive.",
                                    "math.AT math.CT"));
    const auto result = parse_metadata(in);
    REQUIRE(result.records.size() == 1);
    CHECK(result.errors.empty());
    const auto& rec = result.records[0];
    CHECK(rec.id == "math/0503323");
    REQUIRE(rec.categories.size() == 2);
    CHECK(rec.categories[0].value == "math.AT");
    CHECK(rec.categories[1].value == "math.CT");
}

TEST_CASE("parse_metadata on an empty stream", "[corpus]") {
    std::istringstream in("");
    const auto result = parse_metadata(in);
    CHECK(result.records.empty());
    CHECK(result.errors.empty());
}

TEST_CASE("parse_metadata skip policy reports bad lines by number", "[corpus]") {
    // Five valid lines plus one missing its abstract.
    std::ostringstream stream;
    stream << json_line("a1", "t1", "abs one", "cs.CL") << '\n';
    stream << json_line("a2", "t2", "abs two", "cs.CL cs.LG") << '\n';
    stream << json_line("a3", "t3", "abs three", "math.AT") << '\n';
    stream << nlohmann::json{{"id", "bad"}, {"title", "t"}, {"categories", "cs.CL"}}.dump() << '\n';
    stream << json_line("a4", "t4", "abs four", "astro-ph") << '\n';
    stream << json_line("a5", "t5", "abs five", "q-bio.NC") << '\n';

    std::istringstream in(stream.str());
    const auto result = parse_metadata(in, ErrorPolicy::Skip);
    REQUIRE(result.records.size() == 5);
    REQUIRE(result.errors.size() == 1);
    CHECK(result.errors[0].line_number == 4);
    CHECK(result.errors[0].reason.find("abstract") != std::string::npos);
    CHECK_FALSE(result.aborted);

    std::istringstream in2(stream.str());
    const auto aborted = parse_metadata(in2, ErrorPolicy::Abort);
    CHECK(aborted.aborted);
    CHECK(aborted.records.size() == 3);
    REQUIRE(aborted.errors.size() == 1);
    CHECK(aborted.errors[0].line_number == 4);
}

TEST_CASE("parse_metadata accounts for every line exactly once", "[corpus]") {
    std::ostringstream stream;
    std::size_t n_lines = 0;
    Prng rng(5);
    for (int i = 0; i < 60; ++i) {
        ++n_lines;
        switch (rng.next_below(5)) {
            case 0: stream << "not json at all\n"; break;
            case 1: stream << json_line("", "t", "a", "cs.CL") << '\n'; break;
            case 2: stream << json_line("dup", "t", "a", "cs.CL") << '\n'; break;
            case 3: stream << "\n"; break;
            default: stream << json_line("ok" + std::to_string(i), "t", "a", "cs.CL") << '\n';
        }
    }
    std::istringstream in(stream.str());
    const auto result = parse_metadata(in);
    CHECK(result.records.size() + result.errors.size() == n_lines);
}

TEST_CASE("parse_metadata rejects malformed categories and oversized fields", "[corpus]") {
    PaperRecord rec;
    std::string reason;
    CHECK_FALSE(parse_metadata_line(json_line("x", "t", "a", "bad tag!"), rec, reason));
    CHECK_FALSE(parse_metadata_line(json_line("x", "t", "a", ""), rec, reason));
    CHECK_FALSE(parse_metadata_line(json_line("x", "t", "a", ".cs"), rec, reason));
    CHECK(parse_metadata_line(json_line("x", "t", "a", "astro-ph"), rec, reason));
    CHECK(parse_metadata_line(json_line("x", "t", "a", "q-bio.NC math.AT"), rec, reason));

    const std::string long_title(501, 'x');
    CHECK_FALSE(parse_metadata_line(json_line("x", long_title, "a", "cs.CL"), rec, reason));
    const std::string long_abstract(20001, 'x');
    CHECK_FALSE(parse_metadata_line(json_line("x", "t", long_abstract, "cs.CL"), rec, reason));
}

TEST_CASE("format_source appends the domain suffix after the abstract", "[corpus]") {
    PaperRecord rec;
    rec.id = "math/0503323";
    rec.title = "Towards a homotopy theory of process algebra";
    rec.abstract = "Several homological constructions are possible only in the framework of flows.";
    rec.categories = {DomainTag{"math.AT"}, DomainTag{"math.CT"}};

    const auto with = format_source(rec, "title", true);
    CHECK(with.source_text ==
          "title: Several homological constructions are possible only in the framework of flows."
          " @domain: math.AT math.CT");
    CHECK(with.target_text == rec.title);
    CHECK(with.with_domain);

    const auto without = format_source(rec, "title", false);
    CHECK(without.source_text ==
          "title: Several homological constructions are possible only in the framework of flows.");
    CHECK(without.source_text.find("@domain:") == std::string::npos);

    PaperRecord single = rec;
    single.categories = {DomainTag{"cs.CL"}};
    const auto one = format_source(single, "title", true);
    CHECK(one.source_text.substr(one.source_text.size() - 15) == " @domain: cs.CL");

    // Stripping the suffix recovers the domain-free source exactly.
    CHECK(strip_domain_suffix(with.source_text) == without.source_text);
    CHECK(strip_domain_suffix(without.source_text) == without.source_text);
}

TEST_CASE("split_dataset is deterministic and respects the floor rule", "[corpus]") {
    auto make_records = [](std::size_t n) {
        std::vector<PaperRecord> records(n);
        for (std::size_t i = 0; i < n; ++i) {
            records[i].id = "id" + std::to_string(i);
            records[i].title = "title " + std::to_string(i);
            records[i].abstract = "abstract " + std::to_string(i);
            records[i].categories = {DomainTag{"cs.CL"}};
        }
        return records;
    };

    const auto ten = make_records(10);
    const auto split = split_dataset(ten, 0.9, 7);
    CHECK(split.train.size() == 9);
    CHECK(split.validation.size() == 1);
    const auto again = split_dataset(ten, 0.9, 7);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        CHECK(split.train[i].id == again.train[i].id);
    }
    CHECK(split.validation[0].id == again.validation[0].id);

    const auto two = make_records(2);
    const auto half = split_dataset(two, 0.5, 123);
    CHECK(half.train.size() == 1);
    CHECK(half.validation.size() == 1);
    CHECK(half.train[0].id != half.validation[0].id);

    const auto big = make_records(110000);
    const auto split_big = split_dataset(big, 0.9, 1);
    CHECK(split_big.train.size() == 99000);
    CHECK(split_big.validation.size() == 11000);
}

TEST_CASE("split_dataset validates inputs", "[corpus]") {
    std::vector<PaperRecord> records(2);
    records[0].id = records[1].id = "same";
    for (auto& r : records) {
        r.title = "t";
        r.abstract = "a";
        r.categories = {DomainTag{"cs.CL"}};
    }
    CHECK_THROWS_AS(split_dataset(records, 0.5, 0), std::invalid_argument);
    records[1].id = "other";
    CHECK_THROWS_AS(split_dataset(records, 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(records, 1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset({}, 0.5, 0), std::invalid_argument);
}

TEST_CASE("split ids are disjoint and cover the input", "[corpus]") {
    std::vector<PaperRecord> records(37);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].id = "r" + std::to_string(i);
        records[i].title = "t";
        records[i].abstract = "a";
        records[i].categories = {DomainTag{"cs.CL"}};
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto split = split_dataset(records, 0.7, seed);
        std::set<std::string> seen;
        for (const auto& r : split.train) seen.insert(r.id);
        for (const auto& r : split.validation) seen.insert(r.id);
        CHECK(seen.size() == records.size());
        CHECK(split.train.size() == 25);  // floor(0.7 * 37)
    }
}

TEST_CASE("pair file round trip", "[corpus]") {
    std::vector<FormattedPair> pairs;
    pairs.push_back({"title: some abstract @domain: cs.CL", "a title", true});
    pairs.push_back({"title: another abstract", "another title", false});
    std::ostringstream out;
    write_pair_file(out, pairs);
    std::istringstream in(out.str());
    const auto loaded = read_pair_file(in);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].source_text == pairs[0].source_text);
    CHECK(loaded[0].target_text == pairs[0].target_text);
    CHECK(loaded[0].with_domain);
    CHECK_FALSE(loaded[1].with_domain);
}
