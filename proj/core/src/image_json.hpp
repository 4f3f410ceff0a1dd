#pragma once

#include "json_util.hpp"
#include "resee/image_ref.hpp"

namespace resee::detail {

inline json image_to_json(const ImageRef& ref) {
  json j = {{"locator", ref.locator}, {"provider", std::string(to_string(ref.provider))}, {"license", ref.license_tag}};
  if (ref.feature) j["feature"] = *ref.feature;
  return j;
}

inline ImageRef image_from_json(const json& j, std::string_view module, std::string_view where) {
  require_known_fields(j, {"locator", "provider", "license", "feature"}, module, where);
  ImageRef ref;
  ref.locator = get_field<std::string>(j, "locator", module, where);
  ref.provider = parse_provider(get_field<std::string>(j, "provider", module, where));
  ref.license_tag = get_field<std::string>(j, "license", module, where);
  if (j.contains("feature") && !j.at("feature").is_null()) {
    ref.feature = get_field<std::vector<double>>(j, "feature", module, where);
  }
  if (ref.locator.empty()) throw SchemaError(std::string(module), std::string(where) + ": empty image locator");
  return ref;
}

}  // namespace resee::detail
