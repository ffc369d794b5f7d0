#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. A Tape records every operation of one forward pass;
// Tape::backward() walks it in reverse and accumulates gradients into the
// Parameters that were bound as leaves.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "star/error.hpp"

namespace star::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// A named trainable (or buffer) tensor. `velocity` is the SGD momentum
// buffer; buffers such as batch-norm running statistics have trainable=false.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat velocity;
  bool trainable = true;
  bool backbone = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  // Binds a parameter as a differentiable leaf. Binding the same parameter
  // twice on one tape returns the same node.
  Var param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
    nodes_.push_back(Node{p.value, Mat(), p.trainable, nullptr});
    const std::size_t id = nodes_.size() - 1;
    bound_.emplace(&p, id);
    if (p.trainable) leaves_.emplace_back(&p, id);
    return Var(this, id);
  }

  // Records an op result. `fn` receives the gradient w.r.t. the result and
  // is only stored when some parent requires a gradient.
  Var record(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Mat value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
    return Var(this, nodes_.size() - 1);
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

  // grad(v) += delta, allocating on first use.
  template <typename Expr>
  void accumulate(const Var& v, const Expr& delta) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  // Mutable gradient buffer (zero-initialized) for ops that scatter.
  Mat& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Mat& grad(const Var& v) const { return nodes_[v.id()].grad; }

  // Reverse sweep from a 1x1 root; adds leaf gradients into Parameter::grad.
  void backward(const Var& root) {
    check_owned(root);
    if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
    if (!nodes_[root.id()].needs_grad) return;
    nodes_[root.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) {
        // Parents always precede children, so the node's own buffer is not
        // touched by its backward function.
        Mat g = std::move(n.grad);
        n.backward(*this, g);
        n.grad = std::move(g);
      }
    }
    for (auto& [p, id] : leaves_) {
      const Mat& g = nodes_[id].grad;
      if (g.size() == 0) continue;
      if (p->grad.size() == 0) p->grad.setZero(p->value.rows(), p->value.cols());
      p->grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    BackwardFn backward;
  };

  void check_owned(const Var& v) const {
    if (v.tape() != this) throw ShapeError("autograd: variable belongs to another tape");
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::vector<std::pair<Parameter*, std::size_t>> leaves_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }

inline double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): variable is not 1x1");
  return v(0, 0);
}

}  // namespace star::ad
