#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bip/calib.hpp"
#include "bip/model.hpp"
#include "bip/prune.hpp"
#include "bip/score.hpp"

namespace bip::io {

inline constexpr char kContainerMagic[4] = {'B', 'I', 'P', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kTensorMagic[4] = {'B', 'T', 'N', '1'};

/// Rank-1 or rank-2 f32 tensor as stored in a BTN1 record.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  static Tensor from_matrix(const Matrix& m);
  static Tensor from_vector(std::span<const float> v);
  Matrix to_matrix() const;  // rank 1 becomes a 1×n row
  std::vector<float> to_vector() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// "BIP1" | u32 version | u32 header_len | JSON header | BTN1 records.
/// The header holds string metadata and a directory mapping tensor names to
/// payload-relative offsets. Keys are sorted, so equal contents always
/// serialize to equal bytes.
class Container {
 public:
  std::map<std::string, std::string> meta;

  void put(const std::string& name, Tensor t);
  void put(const std::string& name, const Matrix& m) { put(name, Tensor::from_matrix(m)); }
  void put(const std::string& name, std::span<const float> v) { put(name, Tensor::from_vector(v)); }
  bool has(const std::string& name) const { return tensors_.contains(name); }
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;

  const std::string& meta_at(const std::string& key) const;
  std::uint64_t meta_u64(const std::string& key) const;

  std::string serialize() const;
  /// Throws std::runtime_error on bad magic, version, header or offsets.
  static Container parse(std::string_view bytes);

  void save(const std::string& path) const;
  static Container load(const std::string& path);

  friend bool operator==(const Container&, const Container&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Config under "model.*", per-block widths under "model.block{l}.*",
/// parameters under the names of for_each_parameter.
void write_model(Container& c, const Model& m);
Model read_model(const Container& c);

void write_stats(Container& c, const calib::ActivationStats& stats);
calib::ActivationStats read_stats(const Container& c);

/// Tensors "scores/{method}/block{l}/{ffn,msa,heads}".
void write_scores(Container& c, const score::ImportanceScores& s);
score::ImportanceScores read_scores(const Container& c, score::MethodKind method);

/// Tensors "mask/block{l}/{heads,ffn}" holding 0/1.
void write_mask(Container& c, const prune::PruneMask& mask);
prune::PruneMask read_mask(const Container& c);

}  // namespace bip::io
