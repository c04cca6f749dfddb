#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vclab/dataset.hpp"
#include "vclab/rng.hpp"
#include "vclab/scene.hpp"

namespace vclab {

struct AxisEntry {
  std::string name;
  std::string description;
};

// Ordered axis -> description mapping. Construction order is preserved so a
// parsed response can be compared against its source; consumers that need a
// stable order call canonical(), which sorts by axis name.
struct AxisDictionary {
  std::vector<AxisEntry> entries;

  bool empty() const { return entries.empty(); }
  size_t size() const { return entries.size(); }
  const std::string* find(const std::string& name) const;
  AxisDictionary canonical() const;
  bool operator==(const AxisDictionary& other) const;
};

struct UniversalPrompt {
  std::string task_description;
  std::string output_exemplar;
  std::string format_instruction;

  std::string render() const;
};

std::string serialize_axis_dictionary(const AxisDictionary& dict);

UniversalPrompt build_universal_prompt(const AxisDictionary& exemplar);

// Pulls the first well-formed dictionary literal out of free-form text.
// Accepts single or double quotes, trailing commas, and surrounding prose;
// keys and values come back lowercased and trimmed.
AxisDictionary parse_axis_response(const std::string& text);

AxisDictionary annotate_oracle(const SceneSpec& spec);
AxisDictionary annotate_oracle(const ImageSample& sample);

// Drops each entry independently with the given probability but never
// returns an empty dictionary; survivor order is unchanged.
AxisDictionary drop_axes(const AxisDictionary& dict, double fraction,
                         Rng& rng);

struct AxisVocabulary {
  std::vector<std::pair<std::string, int>> ranked;
  std::vector<std::string> excluded;
};

// Ranks axis names by how many dictionaries mention them, descending with
// lexicographic ties. An axis carried by every dictionary with a single
// distinct description is constant and lands on the exclusion list instead.
AxisVocabulary aggregate_axis_frequency(
    const std::vector<AxisDictionary>& dicts, size_t top_k);

}  // namespace vclab
