#include "failscape/concept_space.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "failscape/errors.hpp"
#include "failscape/hashing.hpp"

namespace failscape {

namespace {

bool valid_placeholder_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == ' ';
}

}  // namespace

ConceptSpace::ConceptSpace(std::vector<ConceptDimension> dimensions)
    : dimensions_(std::move(dimensions)) {
  if (dimensions_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "concept space needs at least one dimension");
  }
  std::set<std::string> names;
  size_ = 1;
  for (const auto& dim : dimensions_) {
    if (dim.name.empty()) throw Error(ErrorCode::kInvalidArgument, "dimension name is empty");
    for (char c : dim.name) {
      if (!valid_placeholder_char(c)) {
        throw Error(ErrorCode::kInvalidArgument, "dimension name '" + dim.name +
                                                     "' has characters not allowed in a placeholder");
      }
    }
    if (!names.insert(dim.name).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate dimension '" + dim.name + "'");
    }
    if (dim.values.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "dimension '" + dim.name + "' has no values");
    }
    std::set<std::string> seen;
    for (const auto& v : dim.values) {
      if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "empty value in '" + dim.name + "'");
      if (!seen.insert(v).second) {
        throw Error(ErrorCode::kInvalidArgument,
                    "duplicate value '" + v + "' in dimension '" + dim.name + "'");
      }
    }
    size_ *= dim.values.size();
  }
}

std::vector<std::size_t> ConceptSpace::shape() const {
  std::vector<std::size_t> out;
  out.reserve(dimensions_.size());
  for (const auto& d : dimensions_) out.push_back(d.values.size());
  return out;
}

std::optional<std::size_t> ConceptSpace::dimension_index(std::string_view name) const {
  for (std::size_t i = 0; i < dimensions_.size(); ++i) {
    if (dimensions_[i].name == name) return i;
  }
  return std::nullopt;
}

bool ConceptSpace::contains(const ActionCombo& combo) const {
  if (combo.indices.size() != dimensions_.size()) return false;
  for (std::size_t d = 0; d < dimensions_.size(); ++d) {
    if (combo.indices[d] >= dimensions_[d].values.size()) return false;
  }
  return true;
}

void ConceptSpace::check(const ActionCombo& combo) const {
  if (combo.indices.size() != dimensions_.size()) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "combo has " + std::to_string(combo.indices.size()) + " indices, space has " +
                    std::to_string(dimensions_.size()) + " dimensions");
  }
  for (std::size_t d = 0; d < dimensions_.size(); ++d) {
    if (combo.indices[d] >= dimensions_[d].values.size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "index " + std::to_string(combo.indices[d]) + " out of range for dimension '" +
                      dimensions_[d].name + "'");
    }
  }
}

std::vector<std::string> ConceptSpace::words(const ActionCombo& combo) const {
  check(combo);
  std::vector<std::string> out;
  out.reserve(rank());
  for (std::size_t d = 0; d < rank(); ++d) out.push_back(dimensions_[d].values[combo.indices[d]]);
  return out;
}

std::string ConceptSpace::fingerprint() const { return sha256_hex(to_json(*this).dump()); }

bool ConceptSpace::dimensions_equal(const ConceptSpace& other) const {
  if (dimensions_.size() != other.dimensions_.size()) return false;
  for (std::size_t i = 0; i < dimensions_.size(); ++i) {
    if (dimensions_[i].name != other.dimensions_[i].name ||
        dimensions_[i].values != other.dimensions_[i].values) {
      return false;
    }
  }
  return true;
}

std::size_t flat_index(const ActionCombo& combo, const ConceptSpace& space) {
  space.check(combo);
  std::size_t index = 0;
  for (std::size_t d = 0; d < space.rank(); ++d) {
    index = index * space.dimensions()[d].values.size() + combo.indices[d];
  }
  return index;
}

ActionCombo combo_from_flat(std::size_t index, const ConceptSpace& space) {
  if (index >= space.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "flat index " + std::to_string(index) +
                                                 " out of range [0, " +
                                                 std::to_string(space.size()) + ")");
  }
  ActionCombo combo;
  combo.indices.resize(space.rank());
  for (std::size_t d = space.rank(); d-- > 0;) {
    const std::size_t radix = space.dimensions()[d].values.size();
    combo.indices[d] = index % radix;
    index /= radix;
  }
  return combo;
}

std::vector<std::string> template_placeholders(std::string_view text) {
  std::vector<std::string> names;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '>') {
      throw Error(ErrorCode::kInvalidTemplate,
                  "stray '>' at offset " + std::to_string(i) + " (literal angle brackets are not supported)");
    }
    if (c != '<') {
      ++i;
      continue;
    }
    const std::size_t close = text.find_first_of("<>", i + 1);
    if (close == std::string_view::npos || text[close] != '>') {
      throw Error(ErrorCode::kInvalidTemplate,
                  "unterminated placeholder at offset " + std::to_string(i));
    }
    const std::string_view name = text.substr(i + 1, close - i - 1);
    if (name.empty()) throw Error(ErrorCode::kInvalidTemplate, "empty placeholder '<>'");
    for (char n : name) {
      if (!valid_placeholder_char(n)) {
        throw Error(ErrorCode::kInvalidTemplate,
                    "invalid character in placeholder '<" + std::string(name) + ">'");
      }
    }
    names.emplace_back(name);
    i = close + 1;
  }
  return names;
}

void validate_template(const PromptTemplate& tmpl, const ConceptSpace& space) {
  const auto names = template_placeholders(tmpl.text);
  std::vector<std::size_t> seen(space.rank(), 0);
  for (const auto& name : names) {
    const auto d = space.dimension_index(name);
    if (!d) {
      throw Error(ErrorCode::kUnknownPlaceholder,
                  "template '" + tmpl.id + "' references unknown dimension <" + name + ">");
    }
    ++seen[*d];
  }
  for (std::size_t d = 0; d < space.rank(); ++d) {
    if (seen[d] != 1) {
      throw Error(ErrorCode::kInvalidTemplate,
                  "template '" + tmpl.id + "' must contain <" + space.dimensions()[d].name +
                      "> exactly once (found " + std::to_string(seen[d]) + ")");
    }
  }
}

std::string render_prompt(const PromptTemplate& tmpl, const ActionCombo& combo,
                          const ConceptSpace& space) {
  space.check(combo);
  validate_template(tmpl, space);
  std::string out;
  out.reserve(tmpl.text.size() + 32);
  std::size_t i = 0;
  const std::string_view text = tmpl.text;
  while (i < text.size()) {
    if (text[i] != '<') {
      out.push_back(text[i++]);
      continue;
    }
    const std::size_t close = text.find('>', i + 1);
    const auto d = *space.dimension_index(text.substr(i + 1, close - i - 1));
    out += space.dimensions()[d].values[combo.indices[d]];
    i = close + 1;
  }
  return out;
}

WordStats unique_word_stats(std::span<const PromptTemplate> templates) {
  WordStats stats;
  for (const auto& t : templates) {
    std::string word;
    bool in_placeholder = false;
    auto flush = [&] {
      if (!word.empty()) {
        ++stats.frequency[word];
        ++stats.total_words;
        word.clear();
      }
    };
    for (char c : t.text) {
      if (c == '<') {
        flush();
        in_placeholder = true;
        continue;
      }
      if (c == '>') {
        in_placeholder = false;
        continue;
      }
      if (in_placeholder) continue;
      if (std::isalnum(static_cast<unsigned char>(c))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else {
        flush();
      }
    }
    flush();
  }
  stats.unique_words = stats.frequency.size();
  return stats;
}

nlohmann::json to_json(const ConceptSpace& space) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : space.dimensions()) {
    dims.push_back({{"name", d.name}, {"values", d.values}});
  }
  return dims;
}

ConceptSpace concept_space_from_json(const nlohmann::json& j) {
  const nlohmann::json& dims = j.is_object() ? j.at("dimensions") : j;
  if (!dims.is_array()) throw Error(ErrorCode::kJsonParse, "'dimensions' must be an array");
  std::vector<ConceptDimension> out;
  for (const auto& d : dims) {
    out.push_back({d.at("name").get<std::string>(), d.at("values").get<std::vector<std::string>>()});
  }
  return ConceptSpace(std::move(out));
}

nlohmann::json to_json(const ConceptFile& file) {
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& t : file.templates) templates.push_back({{"id", t.id}, {"text", t.text}});
  return {{"dimensions", to_json(file.space)}, {"templates", templates}};
}

ConceptFile concept_file_from_json(const nlohmann::json& j) {
  try {
    ConceptFile file{concept_space_from_json(j.at("dimensions")), {}};
    if (j.contains("templates")) {
      std::set<std::string> ids;
      for (const auto& t : j.at("templates")) {
        PromptTemplate tmpl{t.at("id").get<std::string>(), t.at("text").get<std::string>()};
        if (!ids.insert(tmpl.id).second) {
          throw Error(ErrorCode::kInvalidTemplate, "duplicate template id '" + tmpl.id + "'");
        }
        validate_template(tmpl, file.space);
        file.templates.push_back(std::move(tmpl));
      }
    }
    return file;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("concept file: ") + e.what());
  }
}

ConceptFile load_concept_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, path.string() + ": " + e.what());
  }
  return concept_file_from_json(j);
}

nlohmann::json to_json(const ActionCombo& combo) { return combo.indices; }

ActionCombo combo_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kJsonParse, "combo must be an array of indices");
  ActionCombo c;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw Error(ErrorCode::kJsonParse, "combo indices must be non-negative integers");
    }
    c.indices.push_back(v.get<std::size_t>());
  }
  return c;
}

}  // namespace failscape
