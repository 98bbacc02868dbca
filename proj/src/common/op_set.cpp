#include "dcanas/op_set.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace dcanas {

namespace {
constexpr std::array<std::pair<OpKind, std::string_view>, 8> kNames{{
    {OpKind::zero, "zero"},
    {OpKind::skip_connect, "skip_connect"},
    {OpKind::max_pool_3x3, "max_pool_3x3"},
    {OpKind::avg_pool_3x3, "avg_pool_3x3"},
    {OpKind::sep_conv_3x3, "sep_conv_3x3"},
    {OpKind::sep_conv_5x5, "sep_conv_5x5"},
    {OpKind::dil_conv_3x3, "dil_conv_3x3"},
    {OpKind::dil_conv_5x5, "dil_conv_5x5"},
}};
}  // namespace

std::string_view op_name(OpKind op) {
  for (const auto& [kind, name] : kNames) {
    if (kind == op) return name;
  }
  throw std::invalid_argument("unknown op kind");
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [kind, n] : kNames) {
    if (n == name) return kind;
  }
  return std::nullopt;
}

bool is_parametric(OpKind op) {
  switch (op) {
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
      return true;
    default:
      return false;
  }
}

int op_kernel(OpKind op) {
  switch (op) {
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3:
    case OpKind::sep_conv_3x3:
    case OpKind::dil_conv_3x3:
      return 3;
    case OpKind::sep_conv_5x5:
    case OpKind::dil_conv_5x5:
      return 5;
    default:
      return 1;
  }
}

OpSet::OpSet(std::vector<OpKind> ops) : ops_(std::move(ops)) {
  if (ops_.empty()) throw std::invalid_argument("op set must not be empty");
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    if (std::find(ops_.begin() + static_cast<std::ptrdiff_t>(i) + 1, ops_.end(), ops_[i]) != ops_.end()) {
      throw std::invalid_argument("op set contains '" + std::string(op_name(ops_[i])) + "' twice");
    }
  }
}

OpSet OpSet::darts() {
  return OpSet({OpKind::zero, OpKind::skip_connect, OpKind::max_pool_3x3, OpKind::avg_pool_3x3,
                OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3,
                OpKind::dil_conv_5x5});
}

std::optional<std::size_t> OpSet::index_of(OpKind op) const {
  auto it = std::find(ops_.begin(), ops_.end(), op);
  if (it == ops_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ops_.begin());
}

std::vector<std::string> OpSet::names() const {
  std::vector<std::string> out;
  for (OpKind op : ops_) out.emplace_back(op_name(op));
  return out;
}

}  // namespace dcanas
