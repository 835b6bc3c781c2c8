#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

#include <json.hpp>

namespace avloc {

// Base64 of raw little-endian doubles: checkpoints round-trip bit-exactly.
std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace avloc
