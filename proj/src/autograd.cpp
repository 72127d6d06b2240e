#include "attnmamba/autograd.hpp"

#include <stdexcept>

namespace attnmamba {

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(std::string name, Tensor<T> value) {
  Node node;
  node.op = "parameter";
  node.value = std::move(value);
  node.param_name = std::move(name);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                        BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::logic_error("graph input recorded out of order");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
Gradients<T> Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw std::invalid_argument("loss belongs to a different graph");
  if (value(loss.id).numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_to_string(value(loss.id).shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor<T>();
  visits_ = 0;
  grad_buffer(loss.id).fill(T(1));

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.requires_grad) continue;
    ++visits_;
    if (node.backward) node.backward(*this, node.grad);
  }

  Gradients<T> out;
  for (const auto& node : nodes_) {
    if (node.param_name.empty()) continue;
    auto it = out.find(node.param_name);
    if (it == out.end()) {
      out.emplace(node.param_name,
                  node.grad.empty() ? Tensor<T>(node.value.shape()) : node.grad);
    } else if (!node.grad.empty()) {
      for (std::size_t k = 0; k < node.grad.numel(); ++k) it->second[k] += node.grad[k];
    }
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace attnmamba
