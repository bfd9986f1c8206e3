#include "splatmark/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"

namespace splatmark {

namespace {

using nlohmann::json;

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF64: return "F64";
    case DType::kI64: return "I64";
    case DType::kU8: return "U8";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "F64") return DType::kF64;
  if (s == "I64") return DType::kI64;
  if (s == "U8") return DType::kU8;
  throw FormatError("tensor file: unsupported dtype " + s);
}

std::size_t dtype_size(DType d) { return d == DType::kU8 ? 1 : 8; }

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto s : shape) {
    if (s < 0) throw FormatError("tensor file: negative dimension");
    n *= s;
  }
  return n;
}

}  // namespace

const std::string& TensorFile::metadata(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) throw FormatError("tensor file: missing metadata '" + key + "'");
  return it->second;
}

void TensorFile::put(const std::string& name, const ad::Matrix& m) {
  TensorEntry e;
  e.dtype = DType::kF64;
  e.shape = {m.rows(), m.cols()};
  e.bytes.resize(static_cast<std::size_t>(m.size()) * 8);
  std::memcpy(e.bytes.data(), m.data(), e.bytes.size());
  tensors_[name] = std::move(e);
}

void TensorFile::put_i64(const std::string& name, const std::vector<std::int64_t>& values,
                         std::vector<std::int64_t> shape) {
  if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
    throw InputError("tensor file: shape does not match value count for " + name);
  }
  TensorEntry e;
  e.dtype = DType::kI64;
  e.shape = std::move(shape);
  e.bytes.resize(values.size() * 8);
  std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  tensors_[name] = std::move(e);
}

void TensorFile::put_u8(const std::string& name, const std::vector<std::uint8_t>& values,
                        std::vector<std::int64_t> shape) {
  if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
    throw InputError("tensor file: shape does not match value count for " + name);
  }
  TensorEntry e;
  e.dtype = DType::kU8;
  e.shape = std::move(shape);
  e.bytes = values;
  tensors_[name] = std::move(e);
}

const TensorEntry& TensorFile::entry(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("tensor file: missing array '" + name + "'");
  return it->second;
}

ad::Matrix TensorFile::matrix(const std::string& name) const {
  const TensorEntry& e = entry(name);
  if (e.dtype != DType::kF64) throw FormatError("tensor file: '" + name + "' is not F64");
  std::int64_t rows = 1, cols = 1;
  if (e.shape.size() == 1) {
    cols = e.shape[0];
  } else if (e.shape.size() == 2) {
    rows = e.shape[0];
    cols = e.shape[1];
  } else {
    throw FormatError("tensor file: '" + name + "' must have rank 1 or 2");
  }
  ad::Matrix m(rows, cols);
  std::memcpy(m.data(), e.bytes.data(), e.bytes.size());
  return m;
}

std::vector<std::int64_t> TensorFile::i64(const std::string& name) const {
  const TensorEntry& e = entry(name);
  if (e.dtype != DType::kI64) throw FormatError("tensor file: '" + name + "' is not I64");
  std::vector<std::int64_t> v(e.bytes.size() / 8);
  std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
  return v;
}

std::vector<std::uint8_t> TensorFile::u8(const std::string& name) const {
  const TensorEntry& e = entry(name);
  if (e.dtype != DType::kU8) throw FormatError("tensor file: '" + name + "' is not U8");
  return e.bytes;
}

std::vector<std::string> TensorFile::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

void TensorFile::save(const std::string& path) const {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : tensors_) {
    header[name] = {{"dtype", dtype_name(e.dtype)},
                    {"shape", e.shape},
                    {"data_offsets", {offset, offset + e.bytes.size()}}};
    offset += e.bytes.size();
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::string text = header.dump();
  // Pad the header with spaces to an 8-byte boundary, as safetensors does.
  while (text.size() % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, e] : tensors_) {
    out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

TensorFile TensorFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8) throw FormatError("'" + path + "' is too short to be a tensor file");
  std::uint64_t n = 0;
  std::memcpy(&n, data.data(), 8);
  if (n > data.size() - 8) throw FormatError("'" + path + "' has a truncated header");
  json header;
  try {
    header = json::parse(data.begin() + 8, data.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "' header is not valid JSON: " + e.what());
  }
  if (!header.is_object()) throw FormatError("'" + path + "' header is not an object");
  const std::size_t base = 8 + n;
  TensorFile f;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) {
        if (!m->is_string()) throw FormatError("'" + path + "' metadata values must be strings");
        f.metadata_[m.key()] = m->get<std::string>();
      }
      continue;
    }
    try {
      TensorEntry e;
      e.dtype = parse_dtype(it->at("dtype").get<std::string>());
      e.shape = it->at("shape").get<std::vector<std::int64_t>>();
      const auto offs = it->at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offs.size() != 2 || offs[1] < offs[0] || base + offs[1] > data.size()) {
        throw FormatError("'" + path + "' array '" + it.key() + "' has bad offsets");
      }
      const std::uint64_t expected = static_cast<std::uint64_t>(element_count(e.shape)) * dtype_size(e.dtype);
      if (offs[1] - offs[0] != expected) {
        throw FormatError("'" + path + "' array '" + it.key() + "' size does not match its shape");
      }
      e.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(base + offs[0]),
                     data.begin() + static_cast<std::ptrdiff_t>(base + offs[1]));
      f.tensors_[it.key()] = std::move(e);
    } catch (const json::exception& ex) {
      throw FormatError("'" + path + "' array '" + it.key() + "': " + ex.what());
    }
  }
  return f;
}

void TensorFile::expect_format(const std::string& format, int version) const {
  if (!has_metadata("format") || metadata("format") != format) {
    throw FormatError("expected a '" + format + "' container");
  }
  if (metadata("version") != std::to_string(version)) {
    throw FormatError("unsupported " + format + " version " + metadata("version"));
  }
}

}  // namespace splatmark
