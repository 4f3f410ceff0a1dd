#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace resee {

/// kPool marks turn-level images drawn from the caption pool.
enum class Provider { kProvider1, kProvider2, kMock, kPool };

std::string_view to_string(Provider p);
Provider parse_provider(std::string_view s);

struct ImageRef {
  std::string locator;
  Provider provider = Provider::kMock;
  std::string license_tag;
  std::optional<std::vector<double>> feature;

  bool operator==(const ImageRef&) const = default;
};

}  // namespace resee
