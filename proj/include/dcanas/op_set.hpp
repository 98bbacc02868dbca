#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dcanas {

/// Candidate operations of the DARTS cell search space.
enum class OpKind {
  zero,
  skip_connect,
  max_pool_3x3,
  avg_pool_3x3,
  sep_conv_3x3,
  sep_conv_5x5,
  dil_conv_3x3,
  dil_conv_5x5,
};

std::string_view op_name(OpKind op);
std::optional<OpKind> op_from_name(std::string_view name);
bool is_parametric(OpKind op);
int op_kernel(OpKind op);

/// Ordered candidate list. The order is fixed for the lifetime of a run since
/// architecture-parameter columns are indexed by it.
class OpSet {
 public:
  explicit OpSet(std::vector<OpKind> ops);
  static OpSet darts();

  std::size_t size() const { return ops_.size(); }
  OpKind operator[](std::size_t i) const { return ops_[i]; }
  const std::vector<OpKind>& ops() const { return ops_; }
  std::optional<std::size_t> index_of(OpKind op) const;
  bool contains(OpKind op) const { return index_of(op).has_value(); }
  std::vector<std::string> names() const;

  bool operator==(const OpSet&) const = default;

 private:
  std::vector<OpKind> ops_;
};

}  // namespace dcanas
