#include "vclab/axes.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>

#include "vclab/common.hpp"

namespace vclab {

namespace {

std::string normalize(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct DictParser {
  const std::string& text;
  size_t pos;

  void skip_ws() {
    while (pos < text.size() &&
           std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
    }
  }

  // A string is either quoted (with backslash escapes) or a bare token that
  // runs up to the next structural character.
  std::optional<std::string> parse_string() {
    skip_ws();
    if (pos >= text.size()) return std::nullopt;
    char c = text[pos];
    if (c == '\'' || c == '"') {
      char quote = c;
      ++pos;
      std::string out;
      while (pos < text.size() && text[pos] != quote) {
        if (text[pos] == '\\' && pos + 1 < text.size()) ++pos;
        out.push_back(text[pos]);
        ++pos;
      }
      if (pos >= text.size()) return std::nullopt;
      ++pos;
      return out;
    }
    std::string out;
    while (pos < text.size() && text[pos] != ':' && text[pos] != ',' &&
           text[pos] != '}' && text[pos] != '{' && text[pos] != '\n') {
      out.push_back(text[pos]);
      ++pos;
    }
    if (out.empty()) return std::nullopt;
    return out;
  }

  // Parses one dictionary literal starting at an opening brace. Returns the
  // raw entries without uniqueness checks; nullopt means not well-formed.
  std::optional<std::vector<AxisEntry>> parse_dict() {
    skip_ws();
    if (pos >= text.size() || text[pos] != '{') return std::nullopt;
    ++pos;
    std::vector<AxisEntry> entries;
    skip_ws();
    if (pos < text.size() && text[pos] == '}') {
      ++pos;
      return entries;
    }
    while (true) {
      auto key = parse_string();
      if (!key) return std::nullopt;
      skip_ws();
      if (pos >= text.size() || text[pos] != ':') return std::nullopt;
      ++pos;
      auto value = parse_string();
      if (!value) return std::nullopt;
      std::string k = normalize(*key);
      std::string v = normalize(*value);
      if (k.empty() || v.empty()) return std::nullopt;
      entries.push_back({k, v});
      skip_ws();
      if (pos >= text.size()) return std::nullopt;
      if (text[pos] == ',') {
        ++pos;
        skip_ws();
        if (pos < text.size() && text[pos] == '}') {
          ++pos;
          return entries;
        }
        continue;
      }
      if (text[pos] == '}') {
        ++pos;
        return entries;
      }
      return std::nullopt;
    }
  }
};

}  // namespace

const std::string* AxisDictionary::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e.description;
  }
  return nullptr;
}

AxisDictionary AxisDictionary::canonical() const {
  AxisDictionary out = *this;
  std::sort(out.entries.begin(), out.entries.end(),
            [](const AxisEntry& a, const AxisEntry& b) {
              return a.name < b.name;
            });
  return out;
}

bool AxisDictionary::operator==(const AxisDictionary& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != other.entries[i].name ||
        entries[i].description != other.entries[i].description) {
      return false;
    }
  }
  return true;
}

std::string serialize_axis_dictionary(const AxisDictionary& dict) {
  std::string out = "{";
  for (size_t i = 0; i < dict.entries.size(); ++i) {
    if (i > 0) out += ", ";
    out += "'" + dict.entries[i].name + "': '" +
           dict.entries[i].description + "'";
  }
  out += "}";
  return out;
}

std::string UniversalPrompt::render() const {
  return task_description + "\n\nExample output:\n" + output_exemplar +
         "\n\n" + format_instruction + "\n";
}

UniversalPrompt build_universal_prompt(const AxisDictionary& exemplar) {
  VCLAB_CHECK_ARG(!exemplar.empty(), "exemplar dictionary is empty");
  UniversalPrompt p;
  p.task_description =
      "Look at the image and enumerate every visual concept axis that "
      "describes it: object identity, colors, size, background, and any "
      "other attribute a careful observer would name. Cover all axes that "
      "are visually relevant, at the granularity the example shows.";
  p.output_exemplar = serialize_axis_dictionary(exemplar);
  p.format_instruction =
      "Answer with a single dictionary mapping each concept axis to a short "
      "textual description, exactly in the format of the example, and "
      "nothing else.";
  return p;
}

AxisDictionary parse_axis_response(const std::string& text) {
  size_t search = 0;
  while (true) {
    size_t brace = text.find('{', search);
    if (brace == std::string::npos) {
      fail(ErrorCode::kNoDictionaryFound,
           "no axis dictionary found in response");
    }
    DictParser parser{text, brace};
    auto entries = parser.parse_dict();
    if (!entries) {
      search = brace + 1;
      continue;
    }
    VCLAB_CHECK(!entries->empty(), ErrorCode::kEmptyAxes,
                "axis dictionary in response has no entries");
    std::set<std::string> seen;
    for (const auto& e : *entries) {
      VCLAB_CHECK(seen.insert(e.name).second, ErrorCode::kDuplicateAxis,
                  "axis '" << e.name << "' appears more than once");
    }
    AxisDictionary dict;
    dict.entries = std::move(*entries);
    return dict;
  }
}

AxisDictionary annotate_oracle(const SceneSpec& spec) {
  AxisDictionary dict;
  for (const auto& [name, value] : spec.axes) {
    dict.entries.push_back({name, value.category});
  }
  return dict;
}

AxisDictionary annotate_oracle(const ImageSample& sample) {
  return annotate_oracle(sample.spec);
}

AxisDictionary drop_axes(const AxisDictionary& dict, double fraction,
                         Rng& rng) {
  VCLAB_CHECK_ARG(!dict.empty(), "cannot drop axes of an empty dictionary");
  VCLAB_CHECK_ARG(fraction >= 0.0 && fraction <= 1.0,
                  "drop fraction " << fraction << " outside [0, 1]");
  std::vector<bool> keep(dict.entries.size());
  size_t kept = 0;
  for (size_t i = 0; i < keep.size(); ++i) {
    keep[i] = !rng.bernoulli(fraction);
    if (keep[i]) ++kept;
  }
  if (kept == 0) {
    keep[rng.randint(keep.size())] = true;
  }
  AxisDictionary out;
  for (size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.entries.push_back(dict.entries[i]);
  }
  return out;
}

AxisVocabulary aggregate_axis_frequency(
    const std::vector<AxisDictionary>& dicts, size_t top_k) {
  VCLAB_CHECK_ARG(!dicts.empty(), "no dictionaries to aggregate");
  std::map<std::string, int> counts;
  std::map<std::string, std::set<std::string>> descriptions;
  for (const auto& d : dicts) {
    for (const auto& e : d.entries) {
      counts[e.name] += 1;
      descriptions[e.name].insert(e.description);
    }
  }
  AxisVocabulary vocab;
  std::vector<std::pair<std::string, int>> ranked;
  for (const auto& [name, count] : counts) {
    bool constant = size_t(count) == dicts.size() &&
                    descriptions.at(name).size() == 1;
    if (constant) {
      vocab.excluded.push_back(name);
    } else {
      ranked.push_back({name, count});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > top_k) ranked.resize(top_k);
  vocab.ranked = std::move(ranked);
  return vocab;
}

}  // namespace vclab
