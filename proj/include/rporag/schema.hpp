#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rporag {

// Validator for the JSON Schema subset used by the files under schemas/:
// type, enum, required, properties, additionalProperties (boolean), items,
// minItems, minLength, minimum, maximum.
class SchemaValidator {
public:
    explicit SchemaValidator(nlohmann::json schema) : schema_(std::move(schema)) {}

    std::vector<std::string> validate(const nlohmann::json& doc) const {
        std::vector<std::string> errors;
        check(schema_, doc, "$", errors);
        return errors;
    }

    bool valid(const nlohmann::json& doc) const { return validate(doc).empty(); }

private:
    static bool has_type(const nlohmann::json& doc, const std::string& type) {
        if (type == "object") return doc.is_object();
        if (type == "array") return doc.is_array();
        if (type == "string") return doc.is_string();
        if (type == "boolean") return doc.is_boolean();
        if (type == "null") return doc.is_null();
        if (type == "integer") return doc.is_number_integer() || (doc.is_number_float() && std::floor(doc.get<double>()) == doc.get<double>());
        if (type == "number") return doc.is_number();
        return false;
    }

    static void check(const nlohmann::json& schema, const nlohmann::json& doc, const std::string& where,
                      std::vector<std::string>& errors) {
        if (auto it = schema.find("type"); it != schema.end()) {
            bool ok = false;
            if (it->is_array()) {
                for (const auto& t : *it) ok = ok || has_type(doc, t.get<std::string>());
            } else {
                ok = has_type(doc, it->get<std::string>());
            }
            if (!ok) {
                errors.push_back(where + ": expected type " + it->dump());
                return;
            }
        }
        if (auto it = schema.find("enum"); it != schema.end()) {
            bool found = false;
            for (const auto& v : *it) found = found || v == doc;
            if (!found) errors.push_back(where + ": value not in enum");
        }
        if (doc.is_number()) {
            double x = doc.get<double>();
            if (auto it = schema.find("minimum"); it != schema.end() && x < it->get<double>())
                errors.push_back(where + ": below minimum");
            if (auto it = schema.find("maximum"); it != schema.end() && x > it->get<double>())
                errors.push_back(where + ": above maximum");
        }
        if (doc.is_string()) {
            if (auto it = schema.find("minLength"); it != schema.end() && doc.get<std::string>().size() < it->get<std::size_t>())
                errors.push_back(where + ": string too short");
        }
        if (doc.is_array()) {
            if (auto it = schema.find("minItems"); it != schema.end() && doc.size() < it->get<std::size_t>())
                errors.push_back(where + ": too few items");
            if (auto it = schema.find("items"); it != schema.end())
                for (std::size_t i = 0; i < doc.size(); ++i)
                    check(*it, doc[i], where + "[" + std::to_string(i) + "]", errors);
        }
        if (doc.is_object()) {
            if (auto it = schema.find("required"); it != schema.end())
                for (const auto& key : *it)
                    if (!doc.contains(key.get<std::string>()))
                        errors.push_back(where + ": missing required field " + key.get<std::string>());
            const auto props = schema.find("properties");
            for (const auto& [key, value] : doc.items()) {
                if (props != schema.end() && props->contains(key)) {
                    check((*props)[key], value, where + "." + key, errors);
                } else if (auto extra = schema.find("additionalProperties");
                           extra != schema.end() && extra->is_boolean() && !extra->get<bool>()) {
                    errors.push_back(where + ": unexpected field " + key);
                }
            }
        }
    }

    nlohmann::json schema_;
};

}  // namespace rporag
