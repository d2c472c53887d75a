#pragma once
// Internal bridge between op implementations and Tape storage.

#include <cmath>
#include <span>
#include <string_view>
#include <utility>

#include "fpr/ad/tape.hpp"

namespace fpr::ad::detail {

std::string_view op_name(Op op);

struct OpAccess {
  // Appends `node` with rows*cols zero-initialised value slots. The returned
  // pointer stays valid until the next node is pushed.
  static std::pair<Var, double*> emit(Tape& t, Node node);

  static Node& node(Tape& t, std::uint32_t id) { return t.nodes_[id]; }
  static const double* value(const Tape& t, std::uint32_t id) {
    return t.values_.data() + t.nodes_[id].value;
  }
  static std::size_t push_aux(Tape& t, std::span<const double> data) {
    const std::size_t off = t.aux_.size();
    t.aux_.insert(t.aux_.end(), data.begin(), data.end());
    return off;
  }
  static std::size_t push_indices(Tape& t, std::span<const std::uint32_t> data) {
    const std::size_t off = t.indices_.size();
    t.indices_.insert(t.indices_.end(), data.begin(), data.end());
    return off;
  }
  static const double* aux(const Tape& t, std::size_t off) { return t.aux_.data() + off; }
  static const std::uint32_t* indices(const Tape& t, std::size_t off) {
    return t.indices_.data() + off;
  }
};

inline void check_finite(Op op, std::span<const double> out) {
  for (double v : out) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op_name(op)), "result " + std::to_string(v));
    }
  }
}

}  // namespace fpr::ad::detail
