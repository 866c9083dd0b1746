#include "mtask/server/schema.hpp"

#include <cmath>
#include <limits>

namespace mtask::server {

Json to_json(const DynValue& v)
{
    switch (v.kind()) {
    case TypeKind::Int: return v.as_int();
    case TypeKind::Bool: return v.as_bool();
    case TypeKind::Real: return v.as_real();
    case TypeKind::Unit: return nullptr;
    case TypeKind::Pair: return Json::array({to_json(v.first()), to_json(v.second())});
    }
    return nullptr;
}

DynValue from_json(const Json& j, const Type& t)
{
    switch (t.kind()) {
    case TypeKind::Int:
        if (j.is_number_integer()) {
            auto i = j.get<std::int64_t>();
            if (i >= std::numeric_limits<std::int32_t>::min() && i <= std::numeric_limits<std::int32_t>::max())
                return DynValue::integer(static_cast<std::int32_t>(i));
        }
        break;
    case TypeKind::Bool:
        if (j.is_boolean()) return DynValue::boolean(j.get<bool>());
        break;
    case TypeKind::Real:
        if (j.is_number()) return DynValue::real(j.get<double>());
        break;
    case TypeKind::Unit:
        if (j.is_null()) return DynValue::unit();
        break;
    case TypeKind::Pair:
        if (j.is_array() && j.size() == 2) return DynValue::pair(from_json(j[0], t.first()), from_json(j[1], t.second()));
        break;
    }
    throw SchemaViolation("expected " + t.to_string() + ", got " + j.dump());
}

Value to_value(const DynTaskValue& tv)
{
    if (!tv.has_value()) return Value::no_value();
    return Value::of(to_json(tv.value()), tv.is_stable());
}

Json to_json(const Value& v)
{
    static const char* names[] = {"none", "unstable", "stable"};
    Json out = {{"state", names[static_cast<int>(v.state())]}};
    if (v.has_value()) out["value"] = v.value();
    return out;
}

Schema Schema::pair(Schema a, Schema b)
{
    Schema s(Kind::Pair);
    s.fields_ = {{"0", std::move(a)}, {"1", std::move(b)}};
    return s;
}

Schema Schema::record(std::vector<std::pair<std::string, Schema>> fields)
{
    Schema s(Kind::Record);
    s.fields_ = std::move(fields);
    return s;
}

Schema Schema::of(const Type& t)
{
    switch (t.kind()) {
    case TypeKind::Int: return integer();
    case TypeKind::Bool: return boolean();
    case TypeKind::Real: return real();
    case TypeKind::Unit: return unit();
    case TypeKind::Pair: return pair(of(t.first()), of(t.second()));
    }
    return unit();
}

Schema Schema::infer(const Json& j)
{
    if (j.is_boolean()) return boolean();
    if (j.is_number_integer()) return integer();
    if (j.is_number()) return real();
    if (j.is_string()) return string();
    if (j.is_array() && j.size() == 2) return pair(infer(j[0]), infer(j[1]));
    if (j.is_object()) {
        std::vector<std::pair<std::string, Schema>> fs;
        for (const auto& [k, v] : j.items()) fs.emplace_back(k, infer(v));
        return record(std::move(fs));
    }
    return unit();
}

Json Schema::check(const Json& j) const { return check_at(j, "value"); }

Json Schema::check_at(const Json& j, const std::string& where) const
{
    auto bad = [&](const char* want) { return SchemaViolation(where + ": expected " + want + ", got " + j.dump()); };
    switch (kind_) {
    case Kind::Int:
        if (j.is_number_integer()) {
            auto i = j.get<std::int64_t>();
            if (i >= std::numeric_limits<std::int32_t>::min() && i <= std::numeric_limits<std::int32_t>::max()) return i;
        }
        throw bad("32-bit integer");
    case Kind::Bool:
        if (j.is_boolean()) return j;
        throw bad("boolean");
    case Kind::Real:
        if (j.is_number() && std::isfinite(j.get<double>())) return j.get<double>();
        throw bad("number");
    case Kind::Unit:
        if (j.is_null()) return j;
        throw bad("null");
    case Kind::String:
        if (j.is_string()) return j;
        throw bad("string");
    case Kind::Pair:
        if (!j.is_array() || j.size() != 2) throw bad("pair");
        return Json::array({fields_[0].second.check_at(j[0], where + "[0]"), fields_[1].second.check_at(j[1], where + "[1]")});
    case Kind::Record: {
        if (!j.is_object()) throw bad("record");
        Json out = Json::object();
        for (const auto& [name, s] : fields_) {
            if (!j.contains(name)) throw SchemaViolation(where + ": missing field '" + name + "'");
            out[name] = s.check_at(j.at(name), where + "." + name);
        }
        for (const auto& [name, _] : j.items())
            if (!out.contains(name)) throw SchemaViolation(where + ": unknown field '" + name + "'");
        return out;
    }
    }
    throw bad("value");
}

Json Schema::zero() const
{
    switch (kind_) {
    case Kind::Int: return 0;
    case Kind::Bool: return false;
    case Kind::Real: return 0.0;
    case Kind::Unit: return nullptr;
    case Kind::String: return "";
    case Kind::Pair: return Json::array({fields_[0].second.zero(), fields_[1].second.zero()});
    case Kind::Record: {
        Json out = Json::object();
        for (const auto& [name, s] : fields_) out[name] = s.zero();
        return out;
    }
    }
    return nullptr;
}

namespace {

const char* kind_name(Schema::Kind k)
{
    switch (k) {
    case Schema::Kind::Int: return "int";
    case Schema::Kind::Bool: return "bool";
    case Schema::Kind::Real: return "real";
    case Schema::Kind::Unit: return "unit";
    case Schema::Kind::String: return "string";
    case Schema::Kind::Pair: return "pair";
    case Schema::Kind::Record: return "record";
    }
    return "?";
}

} // namespace

Json Schema::to_json() const
{
    Json out = {{"type", kind_name(kind_)}};
    if (kind_ == Kind::Pair) out["items"] = Json::array({fields_[0].second.to_json(), fields_[1].second.to_json()});
    if (kind_ == Kind::Record) {
        Json fs = Json::array();
        for (const auto& [name, s] : fields_) fs.push_back({{"name", name}, {"schema", s.to_json()}});
        out["fields"] = fs;
    }
    return out;
}

Schema Schema::from_json(const Json& j)
{
    std::string t = j.at("type").get<std::string>();
    if (t == "int") return integer();
    if (t == "bool") return boolean();
    if (t == "real") return real();
    if (t == "unit") return unit();
    if (t == "string") return string();
    if (t == "pair") return pair(from_json(j.at("items").at(0)), from_json(j.at("items").at(1)));
    if (t == "record") {
        std::vector<std::pair<std::string, Schema>> fs;
        for (const auto& f : j.at("fields")) fs.emplace_back(f.at("name").get<std::string>(), from_json(f.at("schema")));
        return record(std::move(fs));
    }
    throw SchemaViolation("unknown schema type " + t);
}

} // namespace mtask::server
