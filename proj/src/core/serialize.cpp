#include "core/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace avloc {

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_index(char ch) {
  if (ch >= 'A' && ch <= 'Z') return ch - 'A';
  if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
  if (ch >= '0' && ch <= '9') return ch - '0' + 52;
  if (ch == '+') return 62;
  if (ch == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    unsigned v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  unsigned v = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' || ch == '\n' || ch == '\r') continue;
    const int idx = b64_index(ch);
    if (idx < 0) throw IoError("invalid base64 character");
    v = (v << 6) | static_cast<unsigned>(idx);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((v >> bits) & 0xFF));
    }
  }
  return out;
}

nlohmann::json tensor_to_json(const Tensor& t) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  return nlohmann::json{{"shape", t.shape()},
                        {"dtype", "f64le"},
                        {"data", base64_encode(bytes, t.numel() * sizeof(double))}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (j.at("dtype").get<std::string>() != "f64le")
    throw IoError("unsupported tensor dtype in archive");
  const std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  const std::vector<unsigned char> raw = base64_decode(j.at("data").get<std::string>());
  if (raw.size() != shape_numel(shape) * sizeof(double))
    throw IoError("tensor payload size does not match shape");
  std::vector<double> data(shape_numel(shape));
  std::memcpy(data.data(), raw.data(), raw.size());
  return Tensor(shape, std::move(data));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out << text;
  if (!out) throw IoError("short write: " + path);
}

}  // namespace avloc
