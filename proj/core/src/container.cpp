#include "bip/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace bip::io {

using nlohmann::json;

Tensor Tensor::from_matrix(const Matrix& m) {
  return {{m.rows(), m.cols()}, std::vector<float>(m.data(), m.data() + m.size())};
}

Tensor Tensor::from_vector(std::span<const float> v) {
  return {{v.size()}, std::vector<float>(v.begin(), v.end())};
}

Matrix Tensor::to_matrix() const {
  if (dims.size() == 1) return Matrix(1, dims[0], values);
  if (dims.size() != 2) throw std::runtime_error("tensor of rank " + std::to_string(dims.size()) + " is not a matrix");
  return Matrix(dims[0], dims[1], values);
}

std::vector<float> Tensor::to_vector() const {
  if (dims.size() != 1 && !(dims.size() == 2 && dims[0] == 1)) {
    throw std::runtime_error("tensor is not a vector");
  }
  return values;
}

void Container::put(const std::string& name, Tensor t) {
  std::uint64_t n = 1;
  for (auto d : t.dims) n *= d;
  if (t.dims.empty() || n != t.values.size()) {
    throw std::invalid_argument("tensor '" + name + "' has inconsistent dims");
  }
  tensors_[name] = std::move(t);
}

const Tensor& Container::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::runtime_error("container has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

const std::string& Container::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("container header lacks '" + key + "'");
  return it->second;
}

std::uint64_t Container::meta_u64(const std::string& key) const {
  const std::string& s = meta_at(key);
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size()) throw std::runtime_error("header field '" + key + "' is not an integer: " + s);
  return v;
}

namespace {

template <typename T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(std::string_view bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

std::size_t record_size(const Tensor& t) {
  return 4 + 4 + 8 * t.dims.size() + 4 * t.values.size();
}

[[noreturn]] void malformed(const std::string& why) {
  throw std::runtime_error("malformed container: " + why);
}

}  // namespace

std::string Container::serialize() const {
  json dir = json::object();
  std::string payload;
  for (const auto& [name, t] : tensors_) {
    dir[name] = {{"offset", payload.size()}, {"size", record_size(t)}, {"dims", t.dims}};
    payload.append(kTensorMagic, 4);
    append_le<std::uint32_t>(payload, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) append_le<std::uint64_t>(payload, d);
    payload.append(reinterpret_cast<const char*>(t.values.data()), 4 * t.values.size());
  }
  json header = {{"meta", meta}, {"tensors", dir}};
  const std::string h = header.dump();

  std::string out(kContainerMagic, 4);
  append_le<std::uint32_t>(out, kContainerVersion);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out += payload;
  return out;
}

Container Container::parse(std::string_view bytes) {
  if (bytes.size() < 12) malformed("file shorter than the 12-byte preamble");
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) malformed("bad magic");
  const auto version = read_le<std::uint32_t>(bytes, 4);
  if (version != kContainerVersion) malformed("unsupported version " + std::to_string(version));
  const auto header_len = read_le<std::uint32_t>(bytes, 8);
  if (header_len > bytes.size() - 12) malformed("header length exceeds file size");
  const std::string_view payload = bytes.substr(12 + header_len);

  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    malformed(std::string("header is not valid JSON (") + e.what() + ")");
  }

  Container c;
  try {
    if (header.contains("meta")) c.meta = header.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& [name, entry] : header.at("tensors").items()) {
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto size = entry.at("size").get<std::uint64_t>();
      const auto dims = entry.at("dims").get<std::vector<std::uint64_t>>();
      if (offset > payload.size() || size > payload.size() - offset) {
        malformed("tensor '" + name + "' lies outside the file");
      }
      if (size < 8 || std::memcmp(payload.data() + offset, kTensorMagic, 4) != 0) {
        malformed("tensor '" + name + "' lacks the BTN1 record magic");
      }
      const auto rank = read_le<std::uint32_t>(payload, offset + 4);
      if (rank != dims.size() || rank == 0 || 8 + 8ull * rank > size) {
        malformed("tensor '" + name + "' rank disagrees with the directory");
      }
      Tensor t;
      std::uint64_t count = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(read_le<std::uint64_t>(payload, offset + 8 + 8 * i));
        count *= t.dims.back();
      }
      if (t.dims != dims) malformed("tensor '" + name + "' dims disagree with the directory");
      const std::uint64_t data_at = offset + 8 + 8ull * rank;
      if (size != 8 + 8ull * rank + 4 * count) malformed("tensor '" + name + "' size disagrees with its dims");
      t.values.resize(count);
      std::memcpy(t.values.data(), payload.data() + data_at, 4 * count);
      c.tensors_[name] = std::move(t);
    }
  } catch (const json::exception& e) {
    malformed(std::string("bad header structure (") + e.what() + ")");
  }
  return c;
}

void Container::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

// ---- model / stats / scores / masks ----

void write_model(Container& c, const Model& m) {
  const auto& cfg = m.config;
  c.meta["model.d"] = std::to_string(cfg.d);
  c.meta["model.n_heads"] = std::to_string(cfg.n_heads);
  c.meta["model.ffn_hidden"] = std::to_string(cfg.ffn_hidden);
  c.meta["model.n_blocks"] = std::to_string(cfg.n_blocks);
  c.meta["model.vocab"] = std::to_string(cfg.vocab);
  c.meta["model.max_seq"] = std::to_string(cfg.max_seq);
  c.meta["model.activation"] = to_string(cfg.activation);
  c.meta["model.causal"] = cfg.causal ? "1" : "0";
  c.meta["model.prenorm"] = cfg.prenorm ? "1" : "0";
  c.meta["model.gated"] = cfg.gated ? "1" : "0";
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string p = "model.block" + std::to_string(l) + ".";
    c.meta[p + "heads"] = std::to_string(m.blocks[l].head_count(cfg));
    c.meta[p + "ffn"] = std::to_string(m.blocks[l].ffn_width());
  }
  for_each_parameter(m, [&](const std::string& name, const Matrix& p) { c.put("param/" + name, p); });
}

namespace {

bool meta_flag(const Container& c, const std::string& key) {
  const auto& v = c.meta_at(key);
  if (v != "0" && v != "1") throw std::runtime_error("header field '" + key + "' must be 0 or 1");
  return v == "1";
}

Matrix param(const Container& c, const std::string& name) {
  return c.get("param/" + name).to_matrix();
}

}  // namespace

Model read_model(const Container& c) {
  Model m;
  auto& cfg = m.config;
  cfg.d = c.meta_u64("model.d");
  cfg.n_heads = c.meta_u64("model.n_heads");
  cfg.ffn_hidden = c.meta_u64("model.ffn_hidden");
  cfg.n_blocks = c.meta_u64("model.n_blocks");
  cfg.vocab = c.meta_u64("model.vocab");
  cfg.max_seq = c.meta_u64("model.max_seq");
  cfg.activation = parse_activation(c.meta_at("model.activation"));
  cfg.causal = meta_flag(c, "model.causal");
  cfg.prenorm = meta_flag(c, "model.prenorm");
  cfg.gated = meta_flag(c, "model.gated");
  cfg.validate();
  m.embedding = param(c, "embedding");
  m.position = param(c, "position");
  m.lm_head = param(c, "lm_head");
  for (std::size_t l = 0; l < cfg.n_blocks; ++l) {
    const std::string p = "block" + std::to_string(l) + "/";
    BlockWeights b{param(c, p + "wq"), param(c, p + "wk"), param(c, p + "wv"), param(c, p + "wo"),
                   param(c, p + "wu"), param(c, p + "wd"), cfg.gated ? param(c, p + "wg") : Matrix()};
    const std::string q = "model.block" + std::to_string(l) + ".";
    if (b.head_count(cfg) != c.meta_u64(q + "heads") || b.ffn_width() != c.meta_u64(q + "ffn")) {
      throw std::runtime_error("block " + std::to_string(l) + " widths disagree with the header");
    }
    m.blocks.push_back(std::move(b));
  }
  m.validate();
  return m;
}

void write_stats(Container& c, const calib::ActivationStats& stats) {
  c.meta["stats.token_count"] = std::to_string(stats.token_count);
  c.meta["stats.n_blocks"] = std::to_string(stats.blocks.size());
  for (std::size_t l = 0; l < stats.blocks.size(); ++l) {
    const std::string p = "stats/block" + std::to_string(l) + "/";
    c.put(p + "xh", std::span<const float>(stats.blocks[l].mean_abs_xh));
    c.put(p + "xu", std::span<const float>(stats.blocks[l].mean_abs_xu));
  }
}

calib::ActivationStats read_stats(const Container& c) {
  calib::ActivationStats s;
  s.token_count = c.meta_u64("stats.token_count");
  const std::size_t n = c.meta_u64("stats.n_blocks");
  for (std::size_t l = 0; l < n; ++l) {
    const std::string p = "stats/block" + std::to_string(l) + "/";
    s.blocks.push_back({c.get(p + "xh").to_vector(), c.get(p + "xu").to_vector()});
  }
  return s;
}

void write_scores(Container& c, const score::ImportanceScores& s) {
  const std::string m = score::to_string(s.method);
  c.meta["scores." + m + ".n_blocks"] = std::to_string(s.blocks.size());
  for (std::size_t l = 0; l < s.blocks.size(); ++l) {
    const std::string p = "scores/" + m + "/block" + std::to_string(l) + "/";
    c.put(p + "ffn", std::span<const float>(s.blocks[l].ffn));
    c.put(p + "msa", std::span<const float>(s.blocks[l].msa_channels));
    c.put(p + "heads", std::span<const float>(s.blocks[l].heads));
  }
}

score::ImportanceScores read_scores(const Container& c, score::MethodKind method) {
  score::ImportanceScores s;
  s.method = method;
  const std::string m = score::to_string(method);
  const std::size_t n = c.meta_u64("scores." + m + ".n_blocks");
  for (std::size_t l = 0; l < n; ++l) {
    const std::string p = "scores/" + m + "/block" + std::to_string(l) + "/";
    s.blocks.push_back({c.get(p + "ffn").to_vector(), c.get(p + "msa").to_vector(), c.get(p + "heads").to_vector()});
  }
  return s;
}

namespace {

std::vector<float> flags_to_floats(const std::vector<std::uint8_t>& f) {
  return {f.begin(), f.end()};
}

std::vector<std::uint8_t> floats_to_flags(const std::vector<float>& v) {
  std::vector<std::uint8_t> out;
  for (float x : v) {
    if (x != 0.0f && x != 1.0f) throw std::runtime_error("mask tensor holds a value other than 0 or 1");
    out.push_back(x == 1.0f ? 1 : 0);
  }
  return out;
}

}  // namespace

void write_mask(Container& c, const prune::PruneMask& mask) {
  c.meta["mask.n_blocks"] = std::to_string(mask.blocks.size());
  if (mask.ratio) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *mask.ratio);
    c.meta["mask.ratio"] = buf;
  }
  for (std::size_t l = 0; l < mask.blocks.size(); ++l) {
    const std::string p = "mask/block" + std::to_string(l) + "/";
    c.put(p + "heads", std::span<const float>(flags_to_floats(mask.blocks[l].keep_heads)));
    c.put(p + "ffn", std::span<const float>(flags_to_floats(mask.blocks[l].keep_ffn)));
  }
}

prune::PruneMask read_mask(const Container& c) {
  prune::PruneMask mask;
  const std::size_t n = c.meta_u64("mask.n_blocks");
  if (c.meta.contains("mask.ratio")) mask.ratio = std::stod(c.meta_at("mask.ratio"));
  for (std::size_t l = 0; l < n; ++l) {
    const std::string p = "mask/block" + std::to_string(l) + "/";
    mask.blocks.push_back({floats_to_flags(c.get(p + "heads").to_vector()),
                           floats_to_flags(c.get(p + "ffn").to_vector())});
  }
  return mask;
}

}  // namespace bip::io
