#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace talnet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OrderPolicy { top_down_skeleton, fine_abstract, file_order };

inline std::string to_string(OrderPolicy p) {
  switch (p) {
    case OrderPolicy::top_down_skeleton: return "top-down-skeleton";
    case OrderPolicy::fine_abstract: return "fine-abstract";
    case OrderPolicy::file_order: return "file-order";
  }
  return "file-order";
}

inline OrderPolicy parse_order_policy(std::string_view s) {
  if (s == "top-down-skeleton") return OrderPolicy::top_down_skeleton;
  if (s == "fine-abstract") return OrderPolicy::fine_abstract;
  if (s == "file-order") return OrderPolicy::file_order;
  throw DataError("unknown attribute order policy: " + std::string(s));
}

struct Attribute {
  std::string name;
  std::vector<std::string> categories;

  std::size_t category_count() const { return categories.size(); }
  bool operator==(const Attribute&) const = default;
};

/// Ordered list of ID-level attributes; entry n has m_n = categories.size().
struct AttributeSchema {
  std::vector<Attribute> attributes;
  OrderPolicy order = OrderPolicy::top_down_skeleton;

  std::size_t size() const { return attributes.size(); }

  std::vector<std::size_t> category_counts() const {
    std::vector<std::size_t> m;
    for (const auto& a : attributes) m.push_back(a.category_count());
    return m;
  }

  void validate() const {
    if (attributes.empty()) throw DataError("attribute schema has no attributes");
    std::set<std::string> names;
    for (const auto& a : attributes) {
      if (!names.insert(a.name).second) throw DataError("duplicate attribute name: " + a.name);
      if (a.categories.size() < 2) throw DataError("attribute " + a.name + " needs at least two categories");
    }
  }

  bool operator==(const AttributeSchema&) const = default;
};

namespace detail {
inline bool mentions(std::string_view name, std::initializer_list<std::string_view> words) {
  return std::any_of(words.begin(), words.end(), [&](std::string_view w) { return name.find(w) != std::string_view::npos; });
}

// Body height at which an attribute lives, top (0) to bottom (4); 5 for
// attributes with no location.
inline int skeleton_rank(std::string_view name) {
  if (mentions(name, {"hat", "hair", "head", "face", "glasses"})) return 0;
  if (mentions(name, {"upper", "sleeve", "backpack", "shoulder", "coat"})) return 1;
  if (mentions(name, {"bag", "trunk", "belt"})) return 2;
  if (mentions(name, {"lower", "pants", "dress", "skirt", "trousers"})) return 3;
  if (mentions(name, {"shoe", "foot", "feet"})) return 4;
  return 5;
}

inline bool is_abstract(std::string_view name) { return mentions(name, {"gender", "age"}); }
}  // namespace detail

/// Order in which the lattice recurrence visits attributes: entry k is the
/// schema index processed k-th.
inline std::vector<std::size_t> processing_order(const AttributeSchema& schema) {
  std::vector<std::size_t> order(schema.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& attrs = schema.attributes;
  switch (schema.order) {
    case OrderPolicy::file_order:
      break;
    case OrderPolicy::top_down_skeleton:
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detail::skeleton_rank(attrs[a].name) < detail::skeleton_rank(attrs[b].name);
      });
      break;
    case OrderPolicy::fine_abstract:
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detail::is_abstract(attrs[a].name) && !detail::is_abstract(attrs[b].name);
      });
      break;
  }
  return order;
}

/// Attributes painted by the synthetic generator; each one owns a body zone
/// (see synthetic.hpp).
inline AttributeSchema synthetic_schema() {
  AttributeSchema s;
  s.attributes = {
      {"hat", {"no", "yes"}},
      {"upper_color", {"red", "green", "blue"}},
      {"backpack", {"no", "yes"}},
      {"lower_color", {"dark", "light", "blue"}},
  };
  s.order = OrderPolicy::top_down_skeleton;
  return s;
}

}  // namespace talnet
