#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "finsql/error.hpp"

namespace finsql::lora {

// Row-major float32 matrix.
struct Matrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::uint32_t r, std::uint32_t c, float fill = 0.0f) : rows(r), cols(c), data(std::size_t{r} * c, fill) {}
  Matrix(std::initializer_list<std::initializer_list<float>> init) {
    rows = static_cast<std::uint32_t>(init.size());
    cols = rows ? static_cast<std::uint32_t>(init.begin()->size()) : 0;
    for (const auto& row : init) {
      if (row.size() != cols) throw ShapeViolation("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
  }

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  // Bitwise equality: distinguishes -0.0 from 0.0.
  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && data.size() == o.data.size() &&
           std::memcmp(data.data(), o.data.data(), data.size() * sizeof(float)) == 0;
  }
};

// A is d x r, B is r x k; the layer's delta for a row vector x is (x A) B.
struct LoraLayer {
  Matrix A;
  Matrix B;
  bool operator==(const LoraLayer&) const = default;
  std::uint32_t input_dim() const { return A.rows; }
  std::uint32_t output_dim() const { return B.cols; }
};

struct MergeSource {
  std::string plugin_id;
  double weight = 0.0;
  bool operator==(const MergeSource&) const = default;
};

struct LoraPlugin {
  std::string plugin_id;
  std::string base_model_id;
  std::string domain;
  std::uint32_t rank = 0;
  std::map<std::string, LoraLayer> layers;  // manifest order = name order
  std::vector<MergeSource> merged_from;     // provenance of merged plugins
  bool operator==(const LoraPlugin&) const = default;
};

// Throws ShapeViolation unless every layer has A d x r, B r x k with the
// declared rank, consistent buffer sizes and finite entries.
inline void validate(const LoraPlugin& p) {
  if (p.plugin_id.empty()) throw ShapeViolation("plugin id is empty");
  if (p.rank == 0) throw ShapeViolation("rank must be positive");
  if (p.layers.empty()) throw ShapeViolation("plugin '" + p.plugin_id + "' has no layers");
  for (const auto& [name, l] : p.layers) {
    const std::string where = "layer '" + name + "': ";
    if (l.A.cols != p.rank) throw ShapeViolation(where + "A has " + std::to_string(l.A.cols) + " columns, rank is " + std::to_string(p.rank));
    if (l.B.rows != p.rank) throw ShapeViolation(where + "B has " + std::to_string(l.B.rows) + " rows, rank is " + std::to_string(p.rank));
    if (l.A.rows == 0 || l.B.cols == 0) throw ShapeViolation(where + "empty dimension");
    for (const Matrix* m : {&l.A, &l.B}) {
      if (m->data.size() != std::size_t{m->rows} * m->cols) throw ShapeViolation(where + "buffer size does not match shape");
      for (float v : m->data)
        if (!std::isfinite(v)) throw ShapeViolation(where + "non-finite entry");
    }
  }
}

// ---------------------------------------------------------------------------
// Metadata
// ---------------------------------------------------------------------------

inline nlohmann::json metadata_json(const LoraPlugin& p) {
  nlohmann::json j;
  j["plugin_id"] = p.plugin_id;
  j["base_model_id"] = p.base_model_id;
  j["domain"] = p.domain;
  j["rank"] = p.rank;
  j["layers"] = nlohmann::json::array();
  for (const auto& [name, l] : p.layers)
    j["layers"].push_back({{"name", name}, {"d", l.A.rows}, {"r", l.A.cols}, {"k", l.B.cols}});
  if (!p.merged_from.empty()) {
    j["merged_from"] = nlohmann::json::array();
    for (const auto& s : p.merged_from) j["merged_from"].push_back({{"plugin_id", s.plugin_id}, {"weight", s.weight}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// File format
//   "FSQL" | version u32 | metadata length u64 | metadata JSON |
//   per layer: record(A), record(B) | CRC32 u32
//   record = name length u32 | name | tag u8 (0=A, 1=B) | rows u32 | cols u32 | f32 payload
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMagic = "FSQL";
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::string& out, T v) {
  v = to_le(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_le(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ShapeViolation("plugin file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void put_record(std::string& out, const std::string& name, std::uint8_t tag, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, tag);
  put<std::uint32_t>(out, m.rows);
  put<std::uint32_t>(out, m.cols);
  for (float v : m.data) put<float>(out, v);
}

}  // namespace detail

inline std::string serialize(const LoraPlugin& p) {
  validate(p);
  std::string out;
  out += kMagic;
  detail::put<std::uint32_t>(out, kFormatVersion);
  const std::string meta = metadata_json(p).dump();
  detail::put<std::uint64_t>(out, meta.size());
  out += meta;
  for (const auto& [name, l] : p.layers) {
    detail::put_record(out, name, 0, l.A);
    detail::put_record(out, name, 1, l.B);
  }
  detail::put<std::uint32_t>(out, detail::crc32_of(out));
  return out;
}

// Checksum is verified before anything else is interpreted, so any
// corruption surfaces as ChecksumMismatch.
inline LoraPlugin deserialize(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 + 8 + 4) throw ChecksumMismatch("plugin file too short");
  const auto body = bytes.substr(0, bytes.size() - 4);
  detail::Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.get<std::uint32_t>() != detail::crc32_of(body)) throw ChecksumMismatch("CRC32 mismatch");

  detail::Reader in(body);
  if (in.take(4) != kMagic) throw ShapeViolation("bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) throw ShapeViolation("unsupported format version " + std::to_string(version));
  const auto meta_len = in.get<std::uint64_t>();
  if (meta_len > in.remaining()) throw ShapeViolation("metadata length exceeds file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::exception& e) {
    throw ShapeViolation(std::string("bad metadata: ") + e.what());
  }

  LoraPlugin p;
  try {
    p.plugin_id = meta.at("plugin_id").get<std::string>();
    p.base_model_id = meta.at("base_model_id").get<std::string>();
    p.domain = meta.at("domain").get<std::string>();
    p.rank = meta.at("rank").get<std::uint32_t>();
    if (meta.contains("merged_from"))
      for (const auto& s : meta["merged_from"])
        p.merged_from.push_back({s.at("plugin_id").get<std::string>(), s.at("weight").get<double>()});
    for (const auto& l : meta.at("layers")) {
      const auto name = l.at("name").get<std::string>();
      for (std::uint8_t tag = 0; tag < 2; ++tag) {
        const auto name_len = in.get<std::uint32_t>();
        if (in.take(name_len) != name) throw ShapeViolation("record out of manifest order for layer '" + name + "'");
        if (in.get<std::uint8_t>() != tag) throw ShapeViolation("unexpected tensor tag in layer '" + name + "'");
        Matrix m;
        m.rows = in.get<std::uint32_t>();
        m.cols = in.get<std::uint32_t>();
        const std::size_t count = std::size_t{m.rows} * m.cols;
        if (count * sizeof(float) > in.remaining()) throw ShapeViolation("tensor payload exceeds file");
        m.data.resize(count);
        for (auto& v : m.data) v = in.get<float>();
        (tag == 0 ? p.layers[name].A : p.layers[name].B) = std::move(m);
      }
      const auto& layer = p.layers[name];
      if (layer.A.rows != l.at("d").get<std::uint32_t>() || layer.B.cols != l.at("k").get<std::uint32_t>())
        throw ShapeViolation("layer '" + name + "' disagrees with manifest");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ShapeViolation(std::string("bad metadata: ") + e.what());
  }
  if (in.remaining() != 0) throw ShapeViolation("trailing bytes after last record");
  validate(p);
  return p;
}

inline void write_plugin_file(const std::filesystem::path& path, const LoraPlugin& p) {
  const std::string bytes = serialize(p);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoraError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoraError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoraError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline LoraPlugin read_plugin_file(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Hub
// ---------------------------------------------------------------------------

struct PluginInfo {
  std::string plugin_id;
  std::string base_model_id;
  std::string domain;
  std::uint32_t rank = 0;
  std::vector<std::string> layers;
  std::uint32_t checksum = 0;
  std::string file;
  bool operator==(const PluginInfo&) const = default;
};

inline nlohmann::json to_json(const PluginInfo& i) {
  return {{"plugin_id", i.plugin_id}, {"base_model_id", i.base_model_id}, {"domain", i.domain}, {"rank", i.rank},
          {"layers", i.layers},       {"checksum", i.checksum},           {"file", i.file}};
}

struct HubFilter {
  std::optional<std::string> domain;
  std::optional<std::string> base_model_id;
};

// Directory of plugin files plus index.json. Writers are serialized; readers
// share the index.
class PluginHub {
 public:
  explicit PluginHub(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
    load_index();
  }

  const std::filesystem::path& root() const { return root_; }

  PluginInfo save(const LoraPlugin& p) {
    const std::string bytes = serialize(p);
    std::unique_lock lock(mutex_);
    PluginInfo info{p.plugin_id, p.base_model_id, p.domain, p.rank, {}, 0, file_name(p.plugin_id)};
    for (const auto& [name, l] : p.layers) info.layers.push_back(name);
    detail::Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
    info.checksum = tail.get<std::uint32_t>();
    write_plugin_file(root_ / info.file, p);
    index_[p.plugin_id] = info;
    store_index();
    return info;
  }

  LoraPlugin load(const std::string& id) const {
    PluginInfo info;
    {
      std::shared_lock lock(mutex_);
      auto it = index_.find(id);
      if (it == index_.end()) throw UnknownPlugin(id);
      info = it->second;
    }
    const std::string bytes = read_file_bytes(root_ / info.file);
    LoraPlugin p = deserialize(bytes);
    detail::Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
    if (tail.get<std::uint32_t>() != info.checksum) throw ChecksumMismatch("file for '" + id + "' differs from index");
    return p;
  }

  bool contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return index_.count(id) > 0;
  }

  // Sorted by plugin id.
  std::vector<PluginInfo> list(const HubFilter& filter = {}) const {
    std::shared_lock lock(mutex_);
    std::vector<PluginInfo> out;
    for (const auto& [id, info] : index_) {
      if (filter.domain && info.domain != *filter.domain) continue;
      if (filter.base_model_id && info.base_model_id != *filter.base_model_id) continue;
      out.push_back(info);
    }
    return out;
  }

 private:
  static std::string file_name(const std::string& id) {
    std::string f;
    for (char c : id) f.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
    return f + ".fsql";
  }

  std::filesystem::path index_path() const { return root_ / "index.json"; }

  void load_index() {
    if (!std::filesystem::exists(index_path())) return;
    std::ifstream in(index_path());
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("plugins")) {
      PluginInfo i{e.at("plugin_id"), e.at("base_model_id"), e.at("domain"), e.at("rank"),
                   e.at("layers"),    e.at("checksum"),      e.at("file")};
      index_[i.plugin_id] = std::move(i);
    }
  }

  void store_index() const {
    nlohmann::json j;
    j["plugins"] = nlohmann::json::array();
    for (const auto& [id, info] : index_) j["plugins"].push_back(to_json(info));
    const auto tmp = index_path().string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << j.dump(2) << "\n";
      if (!out) throw LoraError("cannot write hub index");
    }
    std::filesystem::rename(tmp, index_path());
  }

  std::filesystem::path root_;
  std::map<std::string, PluginInfo> index_;
  mutable std::shared_mutex mutex_;
};

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

struct MergeEntry {
  std::string plugin_id;
  double weight = 1.0;
};

struct MergeSpec {
  std::vector<MergeEntry> entries;
  std::string output_id = "merged";
};

// {"output_id": "...", "entries": [{"plugin_id": "...", "weight": 0.5}, ...]}.
// With `average`, every weight becomes 1/n.
inline MergeSpec merge_spec_from_json(const nlohmann::json& j, bool average = false) {
  MergeSpec s;
  s.output_id = j.value("output_id", std::string("merged"));
  for (const auto& e : j.at("entries")) s.entries.push_back({e.at("plugin_id"), average ? 0.0 : e.value("weight", 1.0)});
  if (average || j.value("average", false))
    for (auto& e : s.entries) e.weight = 1.0 / static_cast<double>(s.entries.size());
  return s;
}

// Â = Σ ω_i A_i and B̂ = Σ ω_i B_i per layer. Entries are summed in double
// precision in a canonical (id, weight) order so the result does not depend
// on entry order.
inline LoraPlugin merge(const std::vector<std::pair<const LoraPlugin*, double>>& sources, std::string output_id = "merged") {
  if (sources.empty()) throw LoraError("merge needs at least one plugin");
  auto ordered = sources;
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.first->plugin_id != b.first->plugin_id) return a.first->plugin_id < b.first->plugin_id;
    return a.second < b.second;
  });
  const LoraPlugin& first = *ordered.front().first;
  for (const auto& [p, w] : ordered) {
    if (!std::isfinite(w)) throw LoraError("non-finite merge weight for '" + p->plugin_id + "'");
    if (p->base_model_id != first.base_model_id)
      throw BaseModelMismatch("'" + p->plugin_id + "' targets " + p->base_model_id + ", expected " + first.base_model_id);
    if (p->rank != first.rank)
      throw RankMismatch("'" + p->plugin_id + "' has rank " + std::to_string(p->rank) + ", expected " + std::to_string(first.rank));
    if (p->layers.size() != first.layers.size()) throw ShapeMismatch("'" + p->plugin_id + "' has a different layer set");
    for (const auto& [name, l] : first.layers) {
      auto it = p->layers.find(name);
      if (it == p->layers.end()) throw ShapeMismatch("'" + p->plugin_id + "' lacks layer '" + name + "'");
      const auto& o = it->second;
      if (o.A.rows != l.A.rows || o.A.cols != l.A.cols || o.B.rows != l.B.rows || o.B.cols != l.B.cols)
        throw ShapeMismatch("layer '" + name + "' of '" + p->plugin_id + "' has a different shape");
    }
  }

  LoraPlugin out;
  out.plugin_id = std::move(output_id);
  out.base_model_id = first.base_model_id;
  out.rank = first.rank;
  out.domain = first.domain;
  for (const auto& [p, w] : ordered) {
    if (p->domain != first.domain) out.domain = "mixed";
    out.merged_from.push_back({p->plugin_id, w});
  }
  for (const auto& [name, l] : first.layers) {
    auto combine = [&](auto pick) {
      const Matrix& shape = pick(l);
      std::vector<double> acc(shape.data.size(), 0.0);
      for (const auto& [p, w] : ordered) {
        const Matrix& m = pick(p->layers.at(name));
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(m.data[i]);
      }
      Matrix r(shape.rows, shape.cols);
      for (std::size_t i = 0; i < acc.size(); ++i) r.data[i] = static_cast<float>(acc[i]);
      return r;
    };
    out.layers[name] = {combine([](const LoraLayer& x) -> const Matrix& { return x.A; }),
                        combine([](const LoraLayer& x) -> const Matrix& { return x.B; })};
  }
  validate(out);
  return out;
}

inline LoraPlugin merge(const MergeSpec& spec, const PluginHub& hub) {
  std::vector<LoraPlugin> loaded;
  loaded.reserve(spec.entries.size());
  for (const auto& e : spec.entries) loaded.push_back(hub.load(e.plugin_id));
  std::vector<std::pair<const LoraPlugin*, double>> sources;
  for (std::size_t i = 0; i < loaded.size(); ++i) sources.emplace_back(&loaded[i], spec.entries[i].weight);
  return merge(sources, spec.output_id);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

inline const LoraLayer& layer_of(const LoraPlugin& p, const std::string& layer) {
  auto it = p.layers.find(layer);
  if (it == p.layers.end()) throw DimensionMismatch("plugin '" + p.plugin_id + "' has no layer '" + layer + "'");
  return it->second;
}

// The low-rank delta (x A) B for a length-d input, computed in double.
inline std::vector<double> delta_forward(const LoraPlugin& p, const std::string& layer, const std::vector<double>& x) {
  const LoraLayer& l = layer_of(p, layer);
  if (x.size() != l.A.rows)
    throw DimensionMismatch("input has length " + std::to_string(x.size()) + ", layer expects " + std::to_string(l.A.rows));
  std::vector<double> z(l.A.cols, 0.0);
  for (std::size_t i = 0; i < l.A.rows; ++i)
    for (std::size_t j = 0; j < l.A.cols; ++j) z[j] += x[i] * l.A.at(i, j);
  std::vector<double> h(l.B.cols, 0.0);
  for (std::size_t j = 0; j < l.B.rows; ++j)
    for (std::size_t c = 0; c < l.B.cols; ++c) h[c] += z[j] * l.B.at(j, c);
  return h;
}

// x W0 + (x Â) B̂ + (x A_k) B_k with W0 of shape d x k.
inline std::vector<double> merged_forward(const Matrix& W0, const LoraPlugin& merged, const LoraPlugin& extra,
                                          const std::string& layer, const std::vector<double>& x) {
  const LoraLayer& m = layer_of(merged, layer);
  const LoraLayer& e = layer_of(extra, layer);
  if (W0.rows != m.input_dim() || W0.cols != m.output_dim() || e.input_dim() != m.input_dim() ||
      e.output_dim() != m.output_dim())
    throw DimensionMismatch("base weight, merged and extra plugin shapes disagree on layer '" + layer + "'");
  if (x.size() != W0.rows) throw DimensionMismatch("input has length " + std::to_string(x.size()));
  std::vector<double> h(W0.cols, 0.0);
  for (std::size_t i = 0; i < W0.rows; ++i)
    for (std::size_t c = 0; c < W0.cols; ++c) h[c] += x[i] * W0.at(i, c);
  const auto dm = delta_forward(merged, layer, x);
  const auto de = delta_forward(extra, layer, x);
  for (std::size_t c = 0; c < h.size(); ++c) h[c] += dm[c] + de[c];
  return h;
}

// ---------------------------------------------------------------------------
// JSON import: {plugin_id, base_model_id, domain, rank, layers: {name: {A: [[..]], B: [[..]]}}}
// ---------------------------------------------------------------------------

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m;
  m.rows = static_cast<std::uint32_t>(j.size());
  m.cols = m.rows ? static_cast<std::uint32_t>(j.at(0).size()) : 0;
  for (const auto& row : j) {
    if (row.size() != m.cols) throw ShapeViolation("ragged matrix");
    for (const auto& v : row) m.data.push_back(v.get<float>());
  }
  return m;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

inline LoraPlugin plugin_from_json(const nlohmann::json& j) {
  LoraPlugin p;
  p.plugin_id = j.at("plugin_id");
  p.base_model_id = j.at("base_model_id");
  p.domain = j.value("domain", std::string());
  p.rank = j.at("rank");
  for (const auto& [name, l] : j.at("layers").items()) p.layers[name] = {matrix_from_json(l.at("A")), matrix_from_json(l.at("B"))};
  validate(p);
  return p;
}

inline nlohmann::json plugin_to_json(const LoraPlugin& p) {
  nlohmann::json j = metadata_json(p);
  j["layers"] = nlohmann::json::object();
  for (const auto& [name, l] : p.layers) j["layers"][name] = {{"A", matrix_to_json(l.A)}, {"B", matrix_to_json(l.B)}};
  return j;
}

}  // namespace finsql::lora
