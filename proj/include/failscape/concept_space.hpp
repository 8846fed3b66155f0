#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace failscape {

// One named concept (attribute, profession, place, ...) and its ordered values.
struct ConceptDimension {
  std::string name;
  std::vector<std::string> values;
};

// One value index per dimension, in dimension order.
struct ActionCombo {
  std::vector<std::size_t> indices;

  auto operator<=>(const ActionCombo&) const = default;
};

// The discrete action space: the cartesian product of its dimensions.
// Immutable after construction.
class ConceptSpace {
 public:
  // Throws Error(kInvalidArgument) if there are no dimensions, a dimension is
  // empty, a name or value is empty, or a name/value is duplicated.
  explicit ConceptSpace(std::vector<ConceptDimension> dimensions);

  const std::vector<ConceptDimension>& dimensions() const { return dimensions_; }
  std::size_t rank() const { return dimensions_.size(); }
  // Number of combinations (product of dimension sizes).
  std::size_t size() const { return size_; }
  std::vector<std::size_t> shape() const;
  std::optional<std::size_t> dimension_index(std::string_view name) const;

  bool contains(const ActionCombo& combo) const;
  // Throws Error(kIndexOutOfRange) when the combo does not belong to the space.
  void check(const ActionCombo& combo) const;

  // The dimension value words for a combo, in dimension order.
  std::vector<std::string> words(const ActionCombo& combo) const;

  // sha256 over the canonical JSON form.
  std::string fingerprint() const;

  bool operator==(const ConceptSpace& other) const { return dimensions_equal(other); }

 private:
  bool dimensions_equal(const ConceptSpace& other) const;

  std::vector<ConceptDimension> dimensions_;
  std::size_t size_ = 0;
};

// Mixed-radix encoding with the first dimension most significant.
std::size_t flat_index(const ActionCombo& combo, const ConceptSpace& space);
ActionCombo combo_from_flat(std::size_t index, const ConceptSpace& space);

// A prompt with one `<name>` placeholder per concept dimension.
struct PromptTemplate {
  std::string id;
  std::string text;
};

// Placeholder names in order of appearance. Any '<' or '>' that is not part of
// a well-formed `<name>` token throws Error(kInvalidTemplate).
std::vector<std::string> template_placeholders(std::string_view text);

// Throws kUnknownPlaceholder for a placeholder naming no dimension and
// kInvalidTemplate for a missing or repeated dimension placeholder.
void validate_template(const PromptTemplate& tmpl, const ConceptSpace& space);

std::string render_prompt(const PromptTemplate& tmpl, const ActionCombo& combo,
                          const ConceptSpace& space);

struct WordStats {
  std::size_t unique_words = 0;
  std::size_t total_words = 0;
  std::map<std::string, std::size_t> frequency;
};

// Lowercased alphanumeric runs, placeholders excluded.
WordStats unique_word_stats(std::span<const PromptTemplate> templates);

// Concept space plus the prompt templates (states) that go with it.
struct ConceptFile {
  ConceptSpace space;
  std::vector<PromptTemplate> templates;
};

nlohmann::json to_json(const ConceptSpace& space);
ConceptSpace concept_space_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConceptFile& file);
// Validates every template against the space.
ConceptFile concept_file_from_json(const nlohmann::json& j);
ConceptFile load_concept_file(const std::filesystem::path& path);

nlohmann::json to_json(const ActionCombo& combo);
ActionCombo combo_from_json(const nlohmann::json& j);

}  // namespace failscape
