#include "trellis/paramlist.hpp"

#include <json.hpp>

#include <algorithm>

namespace trellis {

using ordered_json = nlohmann::ordered_json;

ParameterValue::ListBox::ListBox(ParameterList l) : p(std::make_unique<ParameterList>(std::move(l))) {}
ParameterValue::ListBox::ListBox(const ListBox& other) : p(std::make_unique<ParameterList>(*other.p)) {}
ParameterValue::ListBox& ParameterValue::ListBox::operator=(const ListBox& other) {
  p = std::make_unique<ParameterList>(*other.p);
  return *this;
}

ParameterValue::ParameterValue(ParameterList sub) : v_(ListBox(std::move(sub))) {}
ParameterValue::ParameterValue(const ParameterValue& other) = default;
ParameterValue& ParameterValue::operator=(const ParameterValue& other) = default;

bool ParameterValue::is_sublist() const { return std::holds_alternative<ListBox>(v_); }

bool ParameterValue::as_bool() const {
  TRELLIS_REQUIRE(is_bool(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested bool");
  return std::get<bool>(v_);
}

std::int64_t ParameterValue::as_integer() const {
  TRELLIS_REQUIRE(is_integer(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested integer");
  return std::get<std::int64_t>(v_);
}

double ParameterValue::as_real() const {
  if (is_integer()) return static_cast<double>(std::get<std::int64_t>(v_));
  TRELLIS_REQUIRE(is_real(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested real");
  return std::get<double>(v_);
}

const std::string& ParameterValue::as_string() const {
  TRELLIS_REQUIRE(is_string(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested string");
  return std::get<std::string>(v_);
}

const ParameterList& ParameterValue::as_sublist() const {
  TRELLIS_REQUIRE(is_sublist(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested list");
  return *std::get<ListBox>(v_).p;
}

ParameterList& ParameterValue::as_sublist() {
  TRELLIS_REQUIRE(is_sublist(), "parameter kind mismatch: stored " + std::string(kind_name()) + ", requested list");
  return *std::get<ListBox>(v_).p;
}

std::string_view ParameterValue::kind_name() const {
  switch (v_.index()) {
    case 0: return "bool";
    case 1: return "integer";
    case 2: return "real";
    case 3: return "string";
    default: return "list";
  }
}

int ParameterValue::depth() const {
  if (!is_sublist()) return 0;
  int d = 0;
  const ParameterList& sub = as_sublist();
  for (std::size_t i = 0; i < sub.size(); ++i) d = std::max(d, sub.value_at(i).depth());
  return d + 1;
}

bool ParameterValue::structurally_equal(const ParameterValue& other) const {
  if (v_.index() != other.v_.index()) return false;
  if (is_sublist()) return as_sublist().structurally_equal(other.as_sublist());
  return v_.index() == other.v_.index() &&
         std::visit(
             [&](const auto& a) {
               using T = std::decay_t<decltype(a)>;
               if constexpr (std::is_same_v<T, ListBox>) {
                 return true;  // handled above
               } else {
                 return a == std::get<T>(other.v_);
               }
             },
             v_);
}

ParameterList::ParameterList(const ParameterList& other) {
  entries_.reserve(other.entries_.size());
  for (const auto& e : other.entries_) {
    auto copy = std::make_unique<Entry>(e->name, e->value);
    copy->used.store(e->used.load());
    entries_.push_back(std::move(copy));
  }
}

ParameterList& ParameterList::operator=(const ParameterList& other) {
  if (this != &other) {
    ParameterList tmp(other);
    entries_ = std::move(tmp.entries_);
  }
  return *this;
}

void ParameterList::set(const std::string& name, ParameterValue value) {
  TRELLIS_REQUIRE(!name.empty(), "parameter name must be nonempty");
  TRELLIS_REQUIRE(value.depth() < kMaxDepth, "parameter list nesting depth limit (32) exceeded");
  for (auto& e : entries_) {
    if (e->name == name) {
      e->value = std::move(value);
      e->used.store(false);
      return;
    }
  }
  entries_.push_back(std::make_unique<Entry>(name, std::move(value)));
}

bool ParameterList::has(const std::string& name) const { return find(name) != nullptr; }

const ParameterList::Entry* ParameterList::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e->name == name) return e.get();
  return nullptr;
}

bool ParameterList::get_or_default(const std::string& name, bool def) const {
  const Entry* e = find(name);
  if (!e) return def;
  bool v = e->value.as_bool();
  e->used.store(true);
  return v;
}

std::int64_t ParameterList::get_or_default(const std::string& name, std::int64_t def) const {
  const Entry* e = find(name);
  if (!e) return def;
  std::int64_t v = e->value.as_integer();
  e->used.store(true);
  return v;
}

std::int64_t ParameterList::get_or_default(const std::string& name, int def) const {
  return get_or_default(name, static_cast<std::int64_t>(def));
}

double ParameterList::get_or_default(const std::string& name, double def) const {
  const Entry* e = find(name);
  if (!e) return def;
  double v = e->value.as_real();
  e->used.store(true);
  return v;
}

std::string ParameterList::get_or_default(const std::string& name, const std::string& def) const {
  const Entry* e = find(name);
  if (!e) return def;
  std::string v = e->value.as_string();
  e->used.store(true);
  return v;
}

std::string ParameterList::get_or_default(const std::string& name, const char* def) const {
  return get_or_default(name, std::string(def));
}

const ParameterList& ParameterList::sublist(const std::string& name) const {
  const Entry* e = find(name);
  TRELLIS_REQUIRE(e != nullptr, "missing sublist \"" + name + "\"");
  const ParameterList& sub = e->value.as_sublist();
  e->used.store(true);
  return sub;
}

const ParameterList& ParameterList::sublist_or_empty(const std::string& name) const {
  static const ParameterList empty;
  const Entry* e = find(name);
  if (!e) return empty;
  const ParameterList& sub = e->value.as_sublist();
  e->used.store(true);
  return sub;
}

bool ParameterList::used(const std::string& name) const {
  const Entry* e = find(name);
  TRELLIS_REQUIRE(e != nullptr, "no parameter named \"" + name + "\"");
  return e->used.load();
}

void ParameterList::collect_unused(const std::string& prefix, std::vector<std::string>& out) const {
  for (const auto& e : entries_) {
    const std::string path = prefix.empty() ? e->name : prefix + "." + e->name;
    if (!e->used.load()) out.push_back(path);
    if (e->value.is_sublist()) e->value.as_sublist().collect_unused(path, out);
  }
}

std::vector<std::string> ParameterList::unused_entries() const {
  std::vector<std::string> out;
  collect_unused("", out);
  return out;
}

bool ParameterList::structurally_equal(const ParameterList& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i]->name != other.entries_[i]->name) return false;
    if (!entries_[i]->value.structurally_equal(other.entries_[i]->value)) return false;
  }
  return true;
}

namespace {

ParameterList list_from_json(const ordered_json& obj, int depth) {
  TRELLIS_REQUIRE(depth < ParameterList::kMaxDepth, "parameter list nesting depth limit (32) exceeded");
  TRELLIS_REQUIRE(obj.is_object(), "parameter document must be a JSON object");
  ParameterList list;
  for (const auto& [key, val] : obj.items()) {
    if (val.is_boolean()) {
      list.set(key, ParameterValue(val.get<bool>()));
    } else if (val.is_number_integer()) {
      list.set(key, ParameterValue(val.get<std::int64_t>()));
    } else if (val.is_number_float()) {
      list.set(key, ParameterValue(val.get<double>()));
    } else if (val.is_string()) {
      list.set(key, ParameterValue(val.get<std::string>()));
    } else if (val.is_object()) {
      list.set(key, ParameterValue(list_from_json(val, depth + 1)));
    } else {
      throw Error("unsupported value kind for parameter \"" + key + "\" (arrays and null are not allowed)");
    }
  }
  return list;
}

ordered_json list_to_json(const ParameterList& list) {
  ordered_json obj = ordered_json::object();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const ParameterValue& v = list.value_at(i);
    const std::string& k = list.name_at(i);
    if (v.is_bool())
      obj[k] = v.as_bool();
    else if (v.is_integer())
      obj[k] = v.as_integer();
    else if (v.is_real())
      obj[k] = v.as_real();
    else if (v.is_string())
      obj[k] = v.as_string();
    else
      obj[k] = list_to_json(v.as_sublist());
  }
  return obj;
}

}  // namespace

ParameterList ParameterList::from_text(std::string_view document) {
  ordered_json obj;
  try {
    obj = ordered_json::parse(document);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed parameter document: ") + e.what());
  }
  return list_from_json(obj, 0);
}

std::string ParameterList::to_text(int indent) const { return list_to_json(*this).dump(indent); }

}  // namespace trellis
