#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "failscape/concept_space.hpp"
#include "failscape/errors.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::source_path;

namespace {

ConceptFile appendix_concepts() { return load_concept_file(source_path("data/concepts.json")); }

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIo;
}

}  // namespace

TEST(ConceptSpace, RendersTheExamplePrompt) {
  const ConceptFile cf = appendix_concepts();
  const PromptTemplate t{"x", "Create an image of a <attribute> <profession> brainstorming new ideas in a <place>"};
  // unique = attribute 0, scientist = profession 0, corporate office = place 0
  EXPECT_EQ(render_prompt(t, ActionCombo{{0, 0, 0}}, cf.space),
            "Create an image of a unique scientist brainstorming new ideas in a corporate office");
}

TEST(ConceptSpace, SingleSubstitution) {
  const ConceptSpace space(std::vector<ConceptDimension>{{"attribute", {"x"}}});
  EXPECT_EQ(render_prompt({"t", "<attribute>"}, ActionCombo{{0}}, space), "x");
}

TEST(ConceptSpace, RenderingIsDeterministicAndBracketFree) {
  const ConceptFile cf = appendix_concepts();
  for (std::size_t flat = 0; flat < cf.space.size(); flat += 37) {
    const ActionCombo c = combo_from_flat(flat, cf.space);
    for (const auto& t : cf.templates) {
      const std::string a = render_prompt(t, c, cf.space);
      EXPECT_EQ(a, render_prompt(t, c, cf.space));
      EXPECT_EQ(a.find_first_of("<>"), std::string::npos);
    }
  }
}

TEST(ConceptSpace, AppendixShape) {
  const ConceptFile cf = appendix_concepts();
  EXPECT_EQ(cf.space.shape(), (std::vector<std::size_t>{9, 10, 10}));
  EXPECT_EQ(cf.space.size(), 900u);
  EXPECT_EQ(cf.templates.size(), 21u);
}

TEST(ConceptSpace, FlatIndexFirstDimensionMostSignificant) {
  const ConceptFile cf = appendix_concepts();
  EXPECT_EQ(flat_index(ActionCombo{{1, 0, 3}}, cf.space), 103u);
  EXPECT_EQ(combo_from_flat(103, cf.space), (ActionCombo{{1, 0, 3}}));
}

TEST(ConceptSpace, FlatIndexRoundTripsAgainstNestedLoops) {
  const ConceptSpace space = failscape::testing::small_space(3, 4, 5);
  std::size_t expected = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t c = 0; c < 5; ++c) {
        const ActionCombo combo{{a, b, c}};
        EXPECT_EQ(flat_index(combo, space), expected);
        EXPECT_EQ(combo_from_flat(expected, space), combo);
        ++expected;
      }
    }
  }
}

TEST(ConceptSpace, OutOfRangeCombosAreRejected) {
  const ConceptSpace space = failscape::testing::small_space(2, 2, 2);
  EXPECT_EQ(error_of([&] { flat_index(ActionCombo{{2, 0, 0}}, space); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(error_of([&] { flat_index(ActionCombo{{0, 0}}, space); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(error_of([&] { combo_from_flat(8, space); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(error_of([&] {
              render_prompt({"t", "<attribute> <profession> <place>"}, ActionCombo{{0, 5, 0}}, space);
            }),
            ErrorCode::kIndexOutOfRange);
}

TEST(ConceptSpace, InvalidSpacesAreRejected) {
  EXPECT_EQ(error_of([] { ConceptSpace(std::vector<ConceptDimension>{}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([] { ConceptSpace(std::vector<ConceptDimension>{{"a", {}}}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([] { ConceptSpace(std::vector<ConceptDimension>{{"a", {"x", "x"}}}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([] { ConceptSpace(std::vector<ConceptDimension>{{"a", {"x"}}, {"a", {"y"}}}); }), ErrorCode::kInvalidArgument);
}

TEST(ConceptSpace, TemplateValidation) {
  const ConceptSpace space = failscape::testing::small_space(2, 2, 2);
  EXPECT_NO_THROW(validate_template({"t", "a <attribute> <profession> at <place>"}, space));
  EXPECT_EQ(error_of([&] { validate_template({"t", "<attribute> <profession> <planet>"}, space); }),
            ErrorCode::kUnknownPlaceholder);
  EXPECT_EQ(error_of([&] { validate_template({"t", "<attribute> <profession>"}, space); }),
            ErrorCode::kInvalidTemplate);
  EXPECT_EQ(error_of([&] { validate_template({"t", "<attribute> <attribute> <profession> <place>"}, space); }),
            ErrorCode::kInvalidTemplate);
  EXPECT_EQ(error_of([&] { validate_template({"t", "x < y <attribute> <profession> <place>"}, space); }),
            ErrorCode::kInvalidTemplate);
  EXPECT_EQ(error_of([&] { render_prompt({"t", "<attribute> <profession> <city>"}, ActionCombo{{0, 0, 0}}, space); }),
            ErrorCode::kUnknownPlaceholder);
}

TEST(ConceptSpace, PlaceholdersInOrder) {
  EXPECT_EQ(template_placeholders("<b> and <a>"), (std::vector<std::string>{"b", "a"}));
}

TEST(WordStats, SmallExamples) {
  const std::vector<PromptTemplate> two{{"1", "a b"}, {"2", "b c"}};
  EXPECT_EQ(unique_word_stats(two).unique_words, 3u);
  const std::vector<PromptTemplate> one{{"1", "<attribute> paints"}};
  const WordStats s = unique_word_stats(one);
  EXPECT_EQ(s.unique_words, 1u);
  EXPECT_EQ(s.frequency.count("paints"), 1u);
}

TEST(WordStats, FrozenFixtureCount) {
  // The expected count comes from tests/fixtures/gen_oracles.py, a separate
  // regex tokenizer.
  std::ifstream in(source_path("tests/fixtures/word_count.json"));
  const auto expected = nlohmann::json::parse(in);
  const ConceptFile cf = load_concept_file(source_path(expected.at("file").get<std::string>()));
  EXPECT_EQ(unique_word_stats(cf.templates).unique_words, expected.at("unique_words").get<std::size_t>());
}

TEST(ConceptSpace, JsonRoundTripAndFingerprint) {
  const ConceptFile cf = appendix_concepts();
  const ConceptFile back = concept_file_from_json(to_json(cf));
  EXPECT_TRUE(back.space == cf.space);
  EXPECT_EQ(back.space.fingerprint(), cf.space.fingerprint());
  EXPECT_EQ(back.templates.size(), cf.templates.size());
  const ConceptSpace other = failscape::testing::small_space(2, 2, 2);
  EXPECT_NE(other.fingerprint(), cf.space.fingerprint());
}

TEST(ConceptSpace, ConceptFileRejectsInvalidTemplates) {
  nlohmann::json j = to_json(appendix_concepts());
  j["templates"].push_back({{"id", "bad"}, {"text", "a <attribute> <job> in <place>"}});
  EXPECT_EQ(error_of([&] { concept_file_from_json(j); }), ErrorCode::kUnknownPlaceholder);
}
