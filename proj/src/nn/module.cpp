#include "retina/nn/module.hpp"

namespace retina::nn {

std::vector<NamedTensor> Module::parameters() {
  std::vector<NamedTensor> params, buffers;
  visit("", params, buffers);
  return params;
}

std::vector<NamedTensor> Module::buffers() {
  std::vector<NamedTensor> params, buffers;
  visit("", params, buffers);
  return buffers;
}

std::vector<NamedTensor> Module::state() {
  std::vector<NamedTensor> params, buffers;
  visit("", params, buffers);
  params.insert(params.end(), buffers.begin(), buffers.end());
  return params;
}

std::vector<ConstNamedTensor> Module::state() const {
  // visit() only hands out addresses; nothing is written through them here.
  std::vector<ConstNamedTensor> out;
  for (const NamedTensor& e : const_cast<Module*>(this)->state()) out.push_back({e.name, e.tensor});
  return out;
}

std::size_t Module::parameter_count() const {
  std::vector<NamedTensor> params, buffers;
  const_cast<Module*>(this)->visit("", params, buffers);
  std::size_t n = 0;
  for (const NamedTensor& p : params) n += p.tensor->size();
  return n;
}

void Module::zero_grad() {
  for (NamedTensor& p : parameters()) p.tensor->zero_grad();
}

}  // namespace retina::nn
