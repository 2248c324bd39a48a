#include "anacto/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "anacto/errors.hpp"

namespace anacto {

namespace {

constexpr const char* kMagic = "ANACTO-CKPT v1";

void put_le64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

struct ParsedHeader {
  CheckpointMeta meta;
  nlohmann::json params;
  std::size_t blob_begin = 0;
};

ParsedHeader parse_header(const std::filesystem::path& path, std::string* raw_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto eol0 = raw.find('\n');
  if (eol0 == std::string::npos || raw.substr(0, eol0) != kMagic) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }
  const auto eol1 = raw.find('\n', eol0 + 1);
  if (eol1 == std::string::npos) throw DataError("checkpoint: truncated manifest in " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.substr(eol0 + 1, eol1 - eol0 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: manifest parse error in " + path.string() + ": " + e.what());
  }

  ParsedHeader h;
  h.meta.tool_version = manifest.at("tool_version").get<std::string>();
  h.meta.seed = manifest.at("seed").get<std::uint64_t>();
  h.meta.config_json = manifest.at("config").dump();
  h.params = manifest.at("params");
  h.blob_begin = eol1 + 1;
  if (raw_out) *raw_out = std::move(raw);
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const CheckpointMeta& meta) {
  nlohmann::json manifest;
  manifest["tool_version"] = meta.tool_version;
  manifest["seed"] = meta.seed;
  try {
    manifest["config"] = meta.config_json.empty() ? nlohmann::json::object()
                                                  : nlohmann::json::parse(meta.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: config echo is not valid JSON: ") + e.what());
  }

  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Tensor& t = store.value(i);
    nlohmann::json entry;
    entry["name"] = store.name(i);
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["count"] = t.size();
    params.push_back(std::move(entry));
    offset += t.size();
  }
  manifest["params"] = std::move(params);

  std::string blob;
  blob.reserve(offset * 8);
  for (std::size_t i = 0; i < store.count(); ++i) {
    for (double v : store.value(i).data()) put_le64(blob, std::bit_cast<std::uint64_t>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out << kMagic << '\n' << manifest.dump() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

CheckpointMeta peek_checkpoint(const std::filesystem::path& path) {
  return parse_header(path, nullptr).meta;
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::string raw;
  ParsedHeader h = parse_header(path, &raw);

  if (h.params.size() != store.count()) {
    throw DataError("checkpoint: parameter count mismatch (" + std::to_string(h.params.size()) +
                    " in file, " + std::to_string(store.count()) + " expected)");
  }
  const unsigned char* blob = reinterpret_cast<const unsigned char*>(raw.data()) + h.blob_begin;
  const std::size_t blob_doubles = (raw.size() - h.blob_begin) / 8;

  for (const auto& entry : h.params) {
    const std::string name = entry.at("name").get<std::string>();
    const PRef ref = store.find(name);
    if (!ref.valid()) throw DataError("checkpoint: unknown parameter '" + name + "'");
    Tensor& dst = store.value(ref);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != dst.shape()) {
      throw DataError("checkpoint: shape mismatch for '" + name + "': file " + shape_to_string(shape) +
                      " vs model " + shape_to_string(dst.shape()));
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    if (count != dst.size() || offset + count > blob_doubles) {
      throw DataError("checkpoint: blob bounds error for '" + name + "'");
    }
    for (std::size_t i = 0; i < count; ++i) {
      dst[i] = std::bit_cast<double>(get_le64(blob + (offset + i) * 8));
    }
  }
  return h.meta;
}

}  // namespace anacto
