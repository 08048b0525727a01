#pragma once

#include "trellis/common.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace trellis {

class ParameterList;

/// One typed configuration value: boolean, 64-bit integer, 64-bit real,
/// text, or a nested ParameterList. Exactly one variant is active.
class ParameterValue {
 public:
  ParameterValue() : v_(false) {}
  ParameterValue(bool b) : v_(b) {}
  ParameterValue(std::int64_t i) : v_(i) {}
  ParameterValue(int i) : v_(static_cast<std::int64_t>(i)) {}
  ParameterValue(double d) : v_(d) {}
  ParameterValue(const char* s) : v_(std::string(s)) {}
  ParameterValue(std::string s) : v_(std::move(s)) {}
  ParameterValue(ParameterList sub);

  ParameterValue(const ParameterValue& other);
  ParameterValue(ParameterValue&&) noexcept = default;
  ParameterValue& operator=(const ParameterValue& other);
  ParameterValue& operator=(ParameterValue&&) noexcept = default;

  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_integer() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_real() const { return std::holds_alternative<double>(v_); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_sublist() const;

  bool as_bool() const;
  std::int64_t as_integer() const;
  /// Integers promote to real; a stored real is never narrowed to integer.
  double as_real() const;
  const std::string& as_string() const;
  const ParameterList& as_sublist() const;
  ParameterList& as_sublist();

  /// Kind name used in diagnostics ("bool", "integer", "real", "string", "list").
  std::string_view kind_name() const;

  bool structurally_equal(const ParameterValue& other) const;

  /// Maximum nesting depth of sublists below (0 for leaf values).
  int depth() const;

 private:
  struct ListBox {
    std::unique_ptr<ParameterList> p;
    explicit ListBox(ParameterList l);
    ListBox(const ListBox& other);
    ListBox(ListBox&&) noexcept = default;
    ListBox& operator=(const ListBox& other);
    ListBox& operator=(ListBox&&) noexcept = default;
  };
  std::variant<bool, std::int64_t, double, std::string, ListBox> v_;
};

/// Ordered, hierarchical, typed key-value configuration. Every entry carries
/// a `used` flag that starts false and flips true on first read; the flags
/// drive unused-parameter diagnostics after a solve. Reads are safe from
/// concurrent rank workers; the flags are plain atomics (monotone
/// false -> true, last write wins).
class ParameterList {
 public:
  static constexpr int kMaxDepth = 32;

  ParameterList() = default;
  ParameterList(const ParameterList& other);
  ParameterList(ParameterList&&) noexcept = default;
  ParameterList& operator=(const ParameterList& other);
  ParameterList& operator=(ParameterList&&) noexcept = default;

  /// Insert or overwrite. An overwritten entry keeps its original position
  /// and its used flag resets to false.
  void set(const std::string& name, ParameterValue value);

  bool has(const std::string& name) const;

  /// Typed read with default. Marks the entry used when present. Throws on a
  /// kind mismatch between the stored value and the default's kind.
  bool get_or_default(const std::string& name, bool def) const;
  std::int64_t get_or_default(const std::string& name, std::int64_t def) const;
  std::int64_t get_or_default(const std::string& name, int def) const;
  double get_or_default(const std::string& name, double def) const;
  std::string get_or_default(const std::string& name, const std::string& def) const;
  std::string get_or_default(const std::string& name, const char* def) const;

  /// Access a nested list. Marks the sublist entry used but not its children.
  /// Throws if absent or not a list.
  const ParameterList& sublist(const std::string& name) const;
  /// As above but returns an empty list when the entry is absent.
  const ParameterList& sublist_or_empty(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i]->name; }
  const ParameterValue& value_at(std::size_t i) const { return entries_[i]->value; }
  bool used_at(std::size_t i) const { return entries_[i]->used.load(); }
  bool used(const std::string& name) const;

  /// Dotted paths of all entries never read, depth-first in insertion order.
  std::vector<std::string> unused_entries() const;

  bool structurally_equal(const ParameterList& other) const;

  /// Parse a JSON object document. Values must be booleans, integers, reals,
  /// strings, or nested objects; arrays and null are rejected.
  static ParameterList from_text(std::string_view document);
  /// Serialize to a JSON document; from_text(to_text(L)) equals L structurally.
  std::string to_text(int indent = 2) const;

 private:
  struct Entry {
    std::string name;
    ParameterValue value;
    mutable std::atomic<bool> used{false};
    Entry(std::string n, ParameterValue v) : name(std::move(n)), value(std::move(v)) {}
  };

  const Entry* find(const std::string& name) const;
  void collect_unused(const std::string& prefix, std::vector<std::string>& out) const;

  // unique_ptr keeps the atomic flag at a stable address across vector growth.
  std::vector<std::unique_ptr<Entry>> entries_;

  friend class ParameterValue;
};

}  // namespace trellis
