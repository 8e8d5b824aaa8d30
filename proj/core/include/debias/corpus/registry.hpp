#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace debias::corpus {

inline constexpr std::string_view kPlaceholder = "[ATTR]";

enum class PromptTag { Indirect, DirectL, DirectC };

std::string_view to_string(PromptTag tag) noexcept;
PromptTag parse_prompt_tag(std::string_view text);

struct PromptTemplate {
  int id = 0;
  PromptTag tag = PromptTag::Indirect;
  std::string text;
};

struct AttributeOption {
  std::string name;
  std::vector<std::string> keywords;
};

struct Attribute {
  std::string name;
  std::vector<AttributeOption> options;
  std::vector<PromptTemplate> templates;

  const AttributeOption& option(std::string_view name) const;
  std::vector<const PromptTemplate*> templates_with(PromptTag tag) const;
};

struct AttributeRegistry {
  std::string placeholder = std::string(kPlaceholder);
  std::vector<Attribute> attributes;

  const Attribute& attribute(std::string_view name) const;
  /// Every word that can appear in a filled prompt (template words and keywords).
  std::vector<std::string> prompt_words() const;
};

/// Parses and validates: every option has a keyword, every attribute has a
/// template of each tag, and each template holds the placeholder exactly once.
AttributeRegistry parse_registry(const nlohmann::json& doc);
/// Errors name the path.
AttributeRegistry load_registry(const std::filesystem::path& path);
nlohmann::json to_json(const AttributeRegistry& registry);

/// Substitutes the single placeholder. Throws std::invalid_argument when the
/// placeholder is missing or repeated.
std::string fill_prompt(std::string_view template_text, std::string_view keyword,
                        std::string_view placeholder = kPlaceholder);

}  // namespace debias::corpus
