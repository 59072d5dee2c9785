#include <expat.h>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dro/data.hpp"
#include "dro/error.hpp"

namespace dro::data {
namespace {

constexpr char kNsSeparator = '|';
constexpr std::array kComponents{"activity", "activity-alias", "service", "receiver"};

struct ParseState {
  std::vector<std::string> stack;
  ManifestIntents intents;
};

bool is_component(const std::string& name) {
  for (const char* c : kComponents)
    if (name == c) return true;
  return false;
}

// Value of the android:name attribute, resolved through the namespace URI so
// any prefix bound to the android namespace is accepted. Falls back to an
// unqualified "name" attribute.
std::string name_attribute(const XML_Char** attrs) {
  static const std::string qualified = std::string(kAndroidNamespace) + kNsSeparator + "name";
  const XML_Char* plain = nullptr;
  for (std::size_t i = 0; attrs[i] != nullptr; i += 2) {
    if (qualified == attrs[i]) return attrs[i + 1];
    if (std::string_view(attrs[i]) == "name") plain = attrs[i + 1];
  }
  return plain != nullptr ? plain : "";
}

void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char** attrs) {
  auto* st = static_cast<ParseState*>(user);
  std::string element = name;
  const std::size_t depth = st->stack.size();
  if ((element == "action" || element == "category") && depth >= 2 &&
      st->stack[depth - 1] == "intent-filter" && is_component(st->stack[depth - 2])) {
    std::string value = name_attribute(attrs);
    if (!value.empty()) {
      if (element == "action")
        st->intents.actions.insert(std::move(value));
      else
        st->intents.categories.insert(std::move(value));
    }
  }
  st->stack.push_back(std::move(element));
}

void XMLCALL on_end(void* user, const XML_Char*) { static_cast<ParseState*>(user)->stack.pop_back(); }

struct ParserDeleter {
  void operator()(XML_Parser p) const { XML_ParserFree(p); }
};

} // namespace

std::set<std::string> ManifestIntents::all() const {
  std::set<std::string> out = actions;
  out.insert(categories.begin(), categories.end());
  return out;
}

std::string to_string(IntentClasses c) {
  switch (c) {
  case IntentClasses::actions:
    return "actions";
  case IntentClasses::categories:
    return "categories";
  case IntentClasses::both:
    break;
  }
  return "both";
}

IntentClasses intent_classes_from_string(const std::string& name) {
  if (name == "both") return IntentClasses::both;
  if (name == "actions") return IntentClasses::actions;
  if (name == "categories") return IntentClasses::categories;
  throw ConfigError("unknown intent class selection '" + name + "'");
}

std::set<std::string> select(const ManifestIntents& intents, IntentClasses classes) {
  switch (classes) {
  case IntentClasses::actions:
    return intents.actions;
  case IntentClasses::categories:
    return intents.categories;
  case IntentClasses::both:
    break;
  }
  return intents.all();
}

ManifestIntents parse_manifest(std::string_view xml) {
  std::unique_ptr<std::remove_pointer_t<XML_Parser>, ParserDeleter> parser(
      XML_ParserCreateNS(nullptr, kNsSeparator));
  if (!parser) throw std::bad_alloc();
  ParseState state;
  XML_SetUserData(parser.get(), &state);
  XML_SetElementHandler(parser.get(), on_start, on_end);
  if (XML_Parse(parser.get(), xml.data(), static_cast<int>(xml.size()), XML_TRUE) == XML_STATUS_ERROR) {
    throw DataError("malformed manifest at line " +
                    std::to_string(XML_GetCurrentLineNumber(parser.get())) + ", column " +
                    std::to_string(XML_GetCurrentColumnNumber(parser.get())) + ": " +
                    XML_ErrorString(XML_GetErrorCode(parser.get())));
  }
  return std::move(state.intents);
}

} // namespace dro::data
