#pragma once

#include "cpsattack/types.hpp"

#include <json.hpp>

namespace cpsattack {

using Json = nlohmann::json;

/// Row-major nested arrays. A bare number is read as a 1x1 matrix.
Matrix matrix_from_json(const Json& j, const char* name);
Json matrix_to_json(const Matrix& m);

/// A bare number is read as a length-1 vector.
Vector vector_from_json(const Json& j, const char* name);
Json vector_to_json(const Vector& v);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

/// Hex SHA-256 of a string; used for config and cache hashing.
std::string sha256_hex(const std::string& data);

}  // namespace cpsattack
