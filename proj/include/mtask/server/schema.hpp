#pragma once

// JSON view of device values and the fixed set of editor schemas.
//
// Int, Bool and Real map to JSON numbers and booleans, Unit to null and a
// pair to a two-element array.

#include "mtask/value.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtask::server {

using Json = nlohmann::json;
using Value = TaskValue<Json>;

class SchemaViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Json to_json(const DynValue& v);
// throws SchemaViolation when j does not have type t
DynValue from_json(const Json& j, const Type& t);

Value to_value(const DynTaskValue& tv);
// {"state": "none" | "unstable" | "stable", "value": ...}
Json to_json(const Value& v);

class Schema {
public:
    enum class Kind { Int, Bool, Real, Unit, String, Pair, Record };

    static Schema integer() { return Schema(Kind::Int); }
    static Schema boolean() { return Schema(Kind::Bool); }
    static Schema real() { return Schema(Kind::Real); }
    static Schema unit() { return Schema(Kind::Unit); }
    static Schema string() { return Schema(Kind::String); }
    static Schema pair(Schema a, Schema b);
    static Schema record(std::vector<std::pair<std::string, Schema>> fields);
    static Schema of(const Type& t);
    // the schema a plain JSON value fits; integers stay Int
    static Schema infer(const Json& j);

    Kind kind() const { return kind_; }
    const std::vector<std::pair<std::string, Schema>>& fields() const { return fields_; }

    // Returns the value in normal form (integral Reals become doubles) or
    // throws SchemaViolation naming the offending location.
    Json check(const Json& j) const;
    Json zero() const;

    Json to_json() const;
    static Schema from_json(const Json& j);

    bool operator==(const Schema&) const = default;

private:
    explicit Schema(Kind k) : kind_(k) {}
    Json check_at(const Json& j, const std::string& where) const;

    Kind kind_ = Kind::Unit;
    std::vector<std::pair<std::string, Schema>> fields_;
};

} // namespace mtask::server
