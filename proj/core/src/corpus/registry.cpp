#include "debias/corpus/registry.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "debias/corpus/vocab.hpp"

namespace debias::corpus {
namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace

std::string_view to_string(PromptTag tag) noexcept {
  switch (tag) {
    case PromptTag::Indirect:
      return "indirect";
    case PromptTag::DirectL:
      return "direct-L";
    case PromptTag::DirectC:
      return "direct-C";
  }
  return "indirect";
}

PromptTag parse_prompt_tag(std::string_view text) {
  if (text == "indirect") return PromptTag::Indirect;
  if (text == "direct-L") return PromptTag::DirectL;
  if (text == "direct-C") return PromptTag::DirectC;
  throw std::invalid_argument("unknown prompt tag '" + std::string(text) + "'");
}

const AttributeOption& Attribute::option(std::string_view option_name) const {
  for (const auto& o : options) {
    if (o.name == option_name) return o;
  }
  throw std::out_of_range("attribute '" + name + "' has no option '" + std::string(option_name) + "'");
}

std::vector<const PromptTemplate*> Attribute::templates_with(PromptTag tag) const {
  std::vector<const PromptTemplate*> out;
  for (const auto& t : templates) {
    if (t.tag == tag) out.push_back(&t);
  }
  return out;
}

const Attribute& AttributeRegistry::attribute(std::string_view attribute_name) const {
  for (const auto& a : attributes) {
    if (a.name == attribute_name) return a;
  }
  throw std::out_of_range("registry has no attribute '" + std::string(attribute_name) + "'");
}

std::vector<std::string> AttributeRegistry::prompt_words() const {
  std::set<std::string> words;
  for (const auto& a : attributes) {
    for (const auto& t : a.templates) {
      for (auto& w : split_words(fill_prompt(t.text, "", placeholder))) words.insert(std::move(w));
    }
    for (const auto& o : a.options) {
      for (const auto& k : o.keywords) {
        for (auto& w : split_words(k)) words.insert(std::move(w));
      }
    }
  }
  return {words.begin(), words.end()};
}

AttributeRegistry parse_registry(const nlohmann::json& doc) {
  AttributeRegistry reg;
  reg.placeholder = doc.value("placeholder", std::string(kPlaceholder));
  for (const auto& ja : doc.at("attributes")) {
    Attribute a;
    a.name = ja.at("name").get<std::string>();
    for (const auto& jo : ja.at("options")) {
      AttributeOption o{jo.at("name").get<std::string>(), jo.at("keywords").get<std::vector<std::string>>()};
      if (o.keywords.empty()) throw std::invalid_argument("option '" + a.name + "/" + o.name + "' has no keywords");
      a.options.push_back(std::move(o));
    }
    if (a.options.empty()) throw std::invalid_argument("attribute '" + a.name + "' has no options");
    for (const auto& jt : ja.at("templates")) {
      PromptTemplate t{jt.at("id").get<int>(), parse_prompt_tag(jt.at("tag").get<std::string>()),
                       jt.at("text").get<std::string>()};
      if (count_occurrences(t.text, reg.placeholder) != 1) {
        throw std::invalid_argument("template " + std::to_string(t.id) + " of '" + a.name +
                                    "' must contain the placeholder exactly once");
      }
      a.templates.push_back(std::move(t));
    }
    for (auto tag : {PromptTag::Indirect, PromptTag::DirectL, PromptTag::DirectC}) {
      if (a.templates_with(tag).empty()) {
        throw std::invalid_argument("attribute '" + a.name + "' has no " + std::string(to_string(tag)) + " template");
      }
    }
    reg.attributes.push_back(std::move(a));
  }
  return reg;
}

AttributeRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open registry file " + path.string());
  try {
    return parse_registry(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error("registry " + path.string() + ": " + e.what());
  }
}

nlohmann::json to_json(const AttributeRegistry& registry) {
  nlohmann::json out;
  out["placeholder"] = registry.placeholder;
  out["attributes"] = nlohmann::json::array();
  for (const auto& a : registry.attributes) {
    nlohmann::json ja{{"name", a.name}, {"options", nlohmann::json::array()}, {"templates", nlohmann::json::array()}};
    for (const auto& o : a.options) ja["options"].push_back({{"name", o.name}, {"keywords", o.keywords}});
    for (const auto& t : a.templates) {
      ja["templates"].push_back({{"id", t.id}, {"tag", std::string(to_string(t.tag))}, {"text", t.text}});
    }
    out["attributes"].push_back(std::move(ja));
  }
  return out;
}

std::string fill_prompt(std::string_view template_text, std::string_view keyword, std::string_view placeholder) {
  const auto pos = template_text.find(placeholder);
  if (pos == std::string_view::npos) {
    throw std::invalid_argument("fill_prompt: template has no " + std::string(placeholder) + " placeholder");
  }
  if (template_text.find(placeholder, pos + placeholder.size()) != std::string_view::npos) {
    throw std::invalid_argument("fill_prompt: template has more than one placeholder");
  }
  std::string out(template_text.substr(0, pos));
  out += keyword;
  out += template_text.substr(pos + placeholder.size());
  return out;
}

}  // namespace debias::corpus
