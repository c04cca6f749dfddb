#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "vclab/axes.hpp"
#include "vclab/common.hpp"
#include "vclab/rng.hpp"
#include "vclab/scene.hpp"

using vclab::AxisDictionary;
using vclab::AxisEntry;
using vclab::Error;
using vclab::ErrorCode;
using vclab::Rng;

namespace {

AxisDictionary make_dict(std::initializer_list<AxisEntry> entries) {
  AxisDictionary d;
  d.entries = entries;
  return d;
}

ErrorCode code_of(const std::string& text) {
  try {
    vclab::parse_axis_response(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected parse_axis_response to throw for: " << text);
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("universal prompt embeds the exemplar exactly once") {
  AxisDictionary ex =
      make_dict({{"hair color", "brown"}, {"age", "young"}});
  vclab::UniversalPrompt p = vclab::build_universal_prompt(ex);
  std::string rendered = p.render();
  std::string serialized = vclab::serialize_axis_dictionary(ex);

  size_t first = rendered.find(serialized);
  REQUIRE(first != std::string::npos);
  CHECK(rendered.find(serialized, first + 1) == std::string::npos);
  CHECK(rendered.find(p.task_description) != std::string::npos);
  CHECK(rendered.find(p.format_instruction) != std::string::npos);

  CHECK(vclab::parse_axis_response(rendered) == ex);
}

TEST_CASE("prompts for different exemplars differ only in the exemplar") {
  AxisDictionary a = make_dict({{"age", "young"}});
  AxisDictionary b = make_dict({{"mood", "somber"}, {"light", "dim"}});
  vclab::UniversalPrompt pa = vclab::build_universal_prompt(a);
  vclab::UniversalPrompt pb = vclab::build_universal_prompt(b);
  CHECK(pa.task_description == pb.task_description);
  CHECK(pa.format_instruction == pb.format_instruction);
  CHECK(pa.output_exemplar != pb.output_exemplar);
}

TEST_CASE("build_universal_prompt rejects an empty exemplar") {
  CHECK_THROWS_AS(vclab::build_universal_prompt(AxisDictionary{}), Error);
}

TEST_CASE("parse_axis_response handles the documented forms") {
  AxisDictionary d =
      vclab::parse_axis_response("{'age': 'young', 'gender': 'male'}");
  REQUIRE(d.size() == 2);
  CHECK(d.entries[0].name == "age");
  CHECK(d.entries[0].description == "young");
  CHECK(d.entries[1].name == "gender");
  CHECK(d.entries[1].description == "male");

  SUBCASE("double quotes and trailing comma") {
    AxisDictionary e = vclab::parse_axis_response(
        "Sure! Here you go:\n{\"fur color\": \"light brown\", }\nHope that "
        "helps.");
    REQUIRE(e.size() == 1);
    CHECK(e.entries[0].name == "fur color");
    CHECK(e.entries[0].description == "light brown");
  }
  SUBCASE("keys and values are lowercased and trimmed") {
    AxisDictionary e =
        vclab::parse_axis_response("{' Hair Color ': ' Jet Black '}");
    REQUIRE(e.size() == 1);
    CHECK(e.entries[0].name == "hair color");
    CHECK(e.entries[0].description == "jet black");
  }
  SUBCASE("unquoted tokens") {
    AxisDictionary e =
        vclab::parse_axis_response("{shape: circle, size: large}");
    REQUIRE(e.size() == 2);
    CHECK(e.entries[0].name == "shape");
    CHECK(e.entries[1].description == "large");
  }
  SUBCASE("a malformed brace group before the dictionary is skipped") {
    AxisDictionary e = vclab::parse_axis_response(
        "{in short} the answer is {'mood': 'calm'}");
    REQUIRE(e.size() == 1);
    CHECK(e.entries[0].name == "mood");
  }
}

TEST_CASE("parse_axis_response reports typed failures") {
  CHECK(code_of("no dictionary here") == ErrorCode::kNoDictionaryFound);
  CHECK(code_of("{broken") == ErrorCode::kNoDictionaryFound);
  CHECK(code_of("{}") == ErrorCode::kEmptyAxes);
  CHECK(code_of("{ }") == ErrorCode::kEmptyAxes);
  CHECK(code_of("{'a': 'x', 'a': 'y'}") == ErrorCode::kDuplicateAxis);
  CHECK(code_of("{'a': 'x', 'A': 'y'}") == ErrorCode::kDuplicateAxis);
}

TEST_CASE("serialize then parse is the identity on a fuzz corpus") {
  const std::vector<std::string> names = {
      "age",     "hair color", "expression", "background", "pose",
      "texture", "lighting",   "species",    "mood",       "material"};
  const std::vector<std::string> values = {
      "young", "old",    "brown", "red",  "neutral", "smiling",
      "plain", "forest", "stone", "soft", "matte",   "bright"};
  const std::vector<std::string> prefixes = {
      "",
      "Sure, here is the dictionary you asked for:\n",
      "The image shows a few things. ",
      "{not the answer} Let me describe it. ",
      "Answer:\n\n"};
  const std::vector<std::string> suffixes = {
      "", "\nLet me know if you need more.", " That covers it.",
      "\n\nThanks!"};

  Rng rng(515151);
  int exact = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    size_t k = 1 + rng.randint(6);
    std::vector<std::string> chosen(names);
    rng.shuffle(chosen);
    chosen.resize(k);
    AxisDictionary truth;
    for (const auto& n : chosen) {
      truth.entries.push_back({n, values[rng.randint(values.size())]});
    }

    char quote = rng.bernoulli(0.5) ? '\'' : '"';
    std::string body = "{";
    for (size_t i = 0; i < truth.entries.size(); ++i) {
      if (i > 0) body += rng.bernoulli(0.5) ? "," : " , ";
      if (rng.bernoulli(0.3)) body += "\n  ";
      body += quote + truth.entries[i].name + std::string(1, quote);
      body += rng.bernoulli(0.5) ? ": " : " : ";
      body += quote + truth.entries[i].description + std::string(1, quote);
    }
    if (rng.bernoulli(0.3)) body += ",";
    body += rng.bernoulli(0.3) ? "\n}" : "}";

    std::string text = prefixes[rng.randint(prefixes.size())] + body +
                       suffixes[rng.randint(suffixes.size())];
    try {
      if (vclab::parse_axis_response(text) == truth) ++exact;
    } catch (const Error&) {
    }
  }
  CHECK(exact >= 990);
  MESSAGE("fuzz corpus exact recoveries: " << exact << "/" << trials);
}

TEST_CASE("the oracle annotator reports categories for present axes only") {
  vclab::DomainConfig config = vclab::DomainConfig::desk();
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    vclab::SceneSpec spec = vclab::sample_scene(config, rng, uint64_t(i));
    AxisDictionary dict = vclab::annotate_oracle(spec);
    REQUIRE(dict.size() == spec.axes.size());
    for (const auto& [name, value] : spec.axes) {
      const std::string* desc = dict.find(name);
      REQUIRE(desc != nullptr);
      CHECK(*desc == value.category);
    }
  }
}

TEST_CASE("drop_axes honors the fraction and the floor") {
  AxisDictionary five = make_dict({{"a", "1"},
                                   {"b", "2"},
                                   {"c", "3"},
                                   {"d", "4"},
                                   {"e", "5"}});
  Rng rng(7);

  SUBCASE("fraction zero is the identity") {
    for (int i = 0; i < 50; ++i) {
      CHECK(vclab::drop_axes(five, 0.0, rng) == five);
    }
  }
  SUBCASE("fraction one keeps exactly one entry") {
    for (int i = 0; i < 200; ++i) {
      AxisDictionary d = vclab::drop_axes(five, 1.0, rng);
      CHECK(d.size() == 1);
    }
  }
  SUBCASE("survivors keep their order") {
    for (int i = 0; i < 200; ++i) {
      AxisDictionary d = vclab::drop_axes(five, 0.5, rng);
      REQUIRE(!d.empty());
      size_t cursor = 0;
      for (const auto& e : d.entries) {
        while (cursor < five.size() && five.entries[cursor].name != e.name) {
          ++cursor;
        }
        REQUIRE(cursor < five.size());
        ++cursor;
      }
    }
  }
  SUBCASE("drop rate matches the fraction") {
    int total = 0, dropped = 0;
    for (int i = 0; i < 10000; ++i) {
      AxisDictionary d = vclab::drop_axes(five, 0.2, rng);
      total += int(five.size());
      dropped += int(five.size() - d.size());
    }
    double rate = double(dropped) / double(total);
    CHECK(rate > 0.18);
    CHECK(rate < 0.22);
  }
}

TEST_CASE("axis frequency aggregation ranks, breaks ties, and excludes") {
  std::vector<AxisDictionary> dicts = {
      make_dict({{"b", "x"}, {"a", "x"}, {"fixed", "same"}}),
      make_dict({{"a", "y"}, {"b", "y"}, {"fixed", "same"}}),
      make_dict({{"a", "z"}, {"c", "z"}, {"fixed", "same"}}),
  };
  vclab::AxisVocabulary vocab = vclab::aggregate_axis_frequency(dicts, 2);
  REQUIRE(vocab.ranked.size() == 2);
  CHECK(vocab.ranked[0].first == "a");
  CHECK(vocab.ranked[0].second == 3);
  CHECK(vocab.ranked[1].first == "b");
  CHECK(vocab.ranked[1].second == 2);
  REQUIRE(vocab.excluded.size() == 1);
  CHECK(vocab.excluded[0] == "fixed");

  SUBCASE("ranking is invariant to stream order") {
    std::vector<AxisDictionary> shuffled = {dicts[2], dicts[0], dicts[1]};
    vclab::AxisVocabulary again = vclab::aggregate_axis_frequency(shuffled, 2);
    CHECK(again.ranked == vocab.ranked);
    CHECK(again.excluded == vocab.excluded);
  }
  SUBCASE("an axis missing from one dictionary is not constant") {
    std::vector<AxisDictionary> partial = {
        make_dict({{"fixed", "same"}, {"a", "x"}}),
        make_dict({{"a", "y"}}),
    };
    vclab::AxisVocabulary v = vclab::aggregate_axis_frequency(partial, 10);
    std::set<std::string> ranked_names;
    for (const auto& [n, c] : v.ranked) ranked_names.insert(n);
    CHECK(ranked_names.count("fixed") == 1);
    CHECK(v.excluded.empty());
  }
}

TEST_CASE("desk annotations aggregate to the expected vocabulary") {
  vclab::DomainConfig config = vclab::DomainConfig::desk();
  Rng rng(2024);
  std::vector<AxisDictionary> dicts;
  for (int i = 0; i < 2000; ++i) {
    dicts.push_back(
        vclab::annotate_oracle(vclab::sample_scene(config, rng, uint64_t(i))));
  }
  vclab::AxisVocabulary vocab = vclab::aggregate_axis_frequency(dicts, 10);
  REQUIRE(vocab.ranked.size() == 6);
  CHECK(vocab.excluded.empty());

  std::set<std::string> top4;
  for (int i = 0; i < 4; ++i) {
    top4.insert(vocab.ranked[size_t(i)].first);
    CHECK(vocab.ranked[size_t(i)].second == 2000);
  }
  CHECK(top4 ==
        std::set<std::string>{"background_color", "object_color", "shape",
                              "size"});
  for (int i = 4; i < 6; ++i) {
    CHECK(vocab.ranked[size_t(i)].second < 2000);
  }
}
