#pragma once

#include <string>
#include <vector>

#include "pdflow/core.hpp"

namespace pdflow {

struct ParamRange {
  std::string name;
  Index offset = 0;
  Index size = 0;
};

/// Flat parameter storage with a named layout. Ranges are appended during model
/// construction and are disjoint and contiguous by construction; the length is
/// fixed once `seal()` has been called.
class ParamVector {
 public:
  Index add(std::string name, Index size);
  void seal() { sealed_ = true; }
  bool sealed() const { return sealed_; }

  Index size() const { return values_.size(); }
  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  const std::vector<ParamRange>& layout() const { return layout_; }
  const ParamRange& range(const std::string& name) const;

  /// Replaces the values; the length must match.
  void assign(const Vector& v);

  /// Checks that ranges are disjoint and cover every index exactly once.
  bool layout_is_partition() const;

 private:
  Vector values_;
  std::vector<ParamRange> layout_;
  bool sealed_ = false;
};

using GradVector = Vector;

}  // namespace pdflow
