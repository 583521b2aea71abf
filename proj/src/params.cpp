#include "pdflow/params.hpp"

#include <algorithm>

namespace pdflow {

Index ParamVector::add(std::string name, Index size) {
  if (sealed_) throw Error("ParamVector: cannot add '" + name + "' after seal()");
  if (size < 0) throw Error("ParamVector: negative size for '" + name + "'");
  const Index offset = values_.size();
  values_.conservativeResize(offset + size);
  values_.segment(offset, size).setZero();
  layout_.push_back({std::move(name), offset, size});
  return offset;
}

const ParamRange& ParamVector::range(const std::string& name) const {
  for (const auto& r : layout_) {
    if (r.name == name) return r;
  }
  throw Error("ParamVector: no range named '" + name + "'");
}

void ParamVector::assign(const Vector& v) {
  if (v.size() != values_.size()) {
    throw Error("ParamVector::assign: length " + std::to_string(v.size()) + " != " +
                std::to_string(values_.size()));
  }
  values_ = v;
}

bool ParamVector::layout_is_partition() const {
  std::vector<int> hits(static_cast<std::size_t>(values_.size()), 0);
  for (const auto& r : layout_) {
    if (r.offset < 0 || r.offset + r.size > values_.size()) return false;
    for (Index i = r.offset; i < r.offset + r.size; ++i) ++hits[static_cast<std::size_t>(i)];
  }
  return std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
}

}  // namespace pdflow
