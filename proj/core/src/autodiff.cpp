#include "empathia/autodiff.hpp"

#include "empathia/error.hpp"

#include <cmath>

namespace empathia::ad {

Parameter& ParameterSet::add(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  it->second.value = std::move(init);
  it->second.zero_grad();
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

bool ParameterSet::contains(const std::string& name) const { return params_.count(name) > 0; }

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

double ParameterSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, p] : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParameterSet::scale_grad(double factor) {
  for (auto& [_, p] : params_) p.grad *= factor;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& param) {
  Node node;
  node.external = &param.value;
  node.requires_grad = record_;
  node.param = record_ ? &param : nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::span<const Var> inputs) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id()].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::on_backward(Var out, std::function<void(Tape&)> fn) {
  if (nodes_[out.id()].requires_grad) nodes_[out.id()].backward = std::move(fn);
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Matrix& v = value(id);
    n.grad.setZero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (!record_) throw InputError("backward() on a tape that does not record gradients");
  if (root.rows() != 1 || root.cols() != 1) throw InputError("backward() root must be 1 x 1");
  grad(root.id())(0, 0) += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

namespace {

Tape& tape_of(Var a) { return *a.tape(); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value() * b.value(), {a, b});
  t.on_backward(out, [a, b, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()).noalias() += g * b.value().transpose();
    if (b.requires_grad()) t.grad(b.id()).noalias() += a.value().transpose() * g;
  });
  return out;
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value() * b.value().transpose(), {a, b});
  t.on_backward(out, [a, b, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()).noalias() += g * b.value();
    if (b.requires_grad()) t.grad(b.id()).noalias() += g.transpose() * a.value();
  });
  return out;
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().transpose(), {a});
  t.on_backward(out, [a, out](Tape& t) { t.grad(a.id()) += t.grad(out.id()).transpose(); });
  return out;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value() + b.value(), {a, b});
  t.on_backward(out, [a, b, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()) += g;
    if (b.requires_grad()) t.grad(b.id()) += g;
  });
  return out;
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of(a);
  Matrix v = a.value();
  v.rowwise() += bias.value().row(0);
  Var out = t.push(std::move(v), {a, bias});
  t.on_backward(out, [a, bias, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()) += g;
    if (bias.requires_grad()) t.grad(bias.id()) += g.colwise().sum();
  });
  return out;
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value() - b.value(), {a, b});
  t.on_backward(out, [a, b, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()) += g;
    if (b.requires_grad()) t.grad(b.id()) -= g;
  });
  return out;
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().cwiseProduct(b.value()), {a, b});
  t.on_backward(out, [a, b, out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (a.requires_grad()) t.grad(a.id()) += g.cwiseProduct(b.value());
    if (b.requires_grad()) t.grad(b.id()) += g.cwiseProduct(a.value());
  });
  return out;
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value() * factor, {a});
  t.on_backward(out, [a, out, factor](Tape& t) { t.grad(a.id()) += t.grad(out.id()) * factor; });
  return out;
}

Var one_minus(Var a) {
  Tape& t = tape_of(a);
  Var out = t.push((1.0 - a.value().array()).matrix(), {a});
  t.on_backward(out, [a, out](Tape& t) { t.grad(a.id()) -= t.grad(out.id()); });
  return out;
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().array().tanh().matrix(), {a});
  t.on_backward(out, [a, out](Tape& t) {
    const auto y = out.value().array();
    t.grad(a.id()).array() += t.grad(out.id()).array() * (1.0 - y * y);
  });
  return out;
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Var out = t.push(std::move(v), {a});
  t.on_backward(out, [a, out](Tape& t) {
    const auto y = out.value().array();
    t.grad(a.id()).array() += t.grad(out.id()).array() * y * (1.0 - y);
  });
  return out;
}

Var gelu(Var a) {
  static constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  static constexpr double c = 0.044715;
  Tape& t = tape_of(a);
  const auto x = a.value().array();
  Matrix v = (0.5 * x * (1.0 + (k * (x + c * x.cube())).tanh())).matrix();
  Var out = t.push(std::move(v), {a});
  t.on_backward(out, [a, out](Tape& t) {
    const auto x = a.value().array();
    const Eigen::ArrayXXd th = (k * (x + c * x.cube())).tanh();
    const Eigen::ArrayXXd d =
        0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x.square());
    t.grad(a.id()).array() += t.grad(out.id()).array() * d;
  });
  return out;
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix v(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    v.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  Var out = t.push(std::move(v), {a});
  t.on_backward(out, [a, out](Tape& t) {
    const Matrix& y = out.value();
    const Matrix& g = t.grad(out.id());
    Matrix& ga = t.grad(a.id());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
  return out;
}

Var concat_cols(std::span<const Var> parts) {
  Tape& t = tape_of(parts.front());
  Eigen::Index cols = 0;
  for (const Var& p : parts) cols += p.cols();
  Matrix v(parts.front().rows(), cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  Var out = t.push(std::move(v), parts);
  std::vector<Var> ins(parts.begin(), parts.end());
  t.on_backward(out, [ins = std::move(ins), out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      if (p.requires_grad()) t.grad(p.id()) += g.middleCols(off, p.cols());
      off += p.cols();
    }
  });
  return out;
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::span<const Var> parts) {
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = 0;
  for (const Var& p : parts) rows += p.rows();
  Matrix v(rows, parts.front().cols());
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  Var out = t.push(std::move(v), parts);
  std::vector<Var> ins(parts.begin(), parts.end());
  t.on_backward(out, [ins = std::move(ins), out](Tape& t) {
    const Matrix& g = t.grad(out.id());
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      if (p.requires_grad()) t.grad(p.id()) += g.middleRows(off, p.rows());
      off += p.rows();
    }
  });
  return out;
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().middleRows(start, count), {a});
  t.on_backward(out, [a, out, start, count](Tape& t) {
    t.grad(a.id()).middleRows(start, count) += t.grad(out.id());
  });
  return out;
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().middleCols(start, count), {a});
  t.on_backward(out, [a, out, start, count](Tape& t) {
    t.grad(a.id()).middleCols(start, count) += t.grad(out.id());
  });
  return out;
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix v(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw InputError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    v.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  Var out = t.push(std::move(v), {table});
  std::vector<int> idx(ids.begin(), ids.end());
  t.on_backward(out, [table, out, idx = std::move(idx)](Tape& t) {
    const Matrix& g = t.grad(out.id());
    Matrix& gt = t.grad(table.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
  return out;
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Matrix v = xhat.array().rowwise() * gain.value().row(0).array();
  v.rowwise() += bias.value().row(0);
  Var out = t.push(std::move(v), {a, gain, bias});
  t.on_backward(out, [a, gain, bias, out, xhat, inv_std](Tape& t) {
    const Matrix& g = t.grad(out.id());
    if (gain.requires_grad()) t.grad(gain.id()) += g.cwiseProduct(xhat).colwise().sum();
    if (bias.requires_grad()) t.grad(bias.id()) += g.colwise().sum();
    if (a.requires_grad()) {
      Matrix& ga = t.grad(a.id());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain.value().row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        ga.row(r).array() += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
      }
    }
  });
  return out;
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  Var out = t.push(std::move(v), {a});
  t.on_backward(out, [a, out](Tape& t) { t.grad(a.id()).array() += t.grad(out.id())(0, 0); });
  return out;
}

Var mask_multiply(Var a, const Matrix& mask) {
  Tape& t = tape_of(a);
  Var out = t.push(a.value().cwiseProduct(mask), {a});
  t.on_backward(out, [a, out, mask](Tape& t) { t.grad(a.id()) += t.grad(out.id()).cwiseProduct(mask); });
  return out;
}

Var neg_log_prob(Var probs, Eigen::Index index, double floor, LogFloorCounter* counter) {
  Tape& t = tape_of(probs);
  const double p = probs.value()(0, index);
  const bool clamped = p <= floor;
  if (clamped && counter != nullptr) counter->hits.fetch_add(1, std::memory_order_relaxed);
  Matrix v(1, 1);
  v(0, 0) = -std::log(clamped ? floor : p);
  Var out = t.push(std::move(v), {probs});
  if (!clamped) {
    t.on_backward(out, [probs, out, index, p](Tape& t) {
      t.grad(probs.id())(0, index) -= t.grad(out.id())(0, 0) / p;
    });
  }
  return out;
}

Var dropout(Var a, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale_kept = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale_kept : 0.0;
  return mask_multiply(a, mask);
}

}  // namespace empathia::ad
