#include "dsva/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace dsva {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const RowMat>;
using MutMatMap = Eigen::Map<RowMat>;

// outer/axis/inner decomposition for single-axis reductions and broadcasts
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::multiply: return "multiply";
    case OpKind::divide: return "divide";
    case OpKind::negate: return "negate";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::square: return "square";
    case OpKind::clamp: return "clamp";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::broadcast: return "broadcast";
    case OpKind::reshape: return "reshape";
    case OpKind::sparse_linear: return "sparse_linear";
    case OpKind::grad_reverse: return "grad_reverse";
  }
  return "?";
}

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(numel(t.impl_->shape), value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != data.size())
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty())
    throw ContractError("grad accessed before any backward pass");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::value() const {
  if (size() != 1)
    throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

// --- Tape bookkeeping ---------------------------------------------------------

void Tape::reset() {
  nodes_.clear();
  leaves_.clear();
}

void Tape::check_values(const std::vector<double>& v, OpKind op) const {
  if (!check_finite_) return;
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value out of op ") +
                         op_name(op));
}

std::int64_t Tape::track(const Tensor& t) {
  if (!t.defined()) throw ContractError("undefined tensor passed to tape op");
  if (t.node_ >= 0 && static_cast<std::size_t>(t.node_) < nodes_.size() &&
      nodes_[t.node_].out == t.impl_)
    return t.node_;
  // Tensors from outside this tape (parameters, constants, values produced
  // by an earlier tape) enter as leaves. One leaf node per storage.
  auto it = leaves_.find(t.impl_.get());
  if (it != leaves_.end()) return it->second;
  Node n;
  n.op = OpKind::leaf;
  n.shape = t.impl_->shape;
  n.out = t.impl_;
  n.requires_grad = t.impl_->requires_grad;
  nodes_.push_back(std::move(n));
  const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
  leaves_.emplace(t.impl_.get(), id);
  return id;
}

Tensor Tape::emit(Node node) {
  check_values(node.out->data, node.op);
  nodes_.push_back(std::move(node));
  Tensor t;
  t.impl_ = nodes_.back().out;
  t.node_ = static_cast<std::int64_t>(nodes_.size()) - 1;
  return t;
}

// --- forward ops ---------------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 operands, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Node node;
  node.op = OpKind::matmul;
  node.inputs = {track(a), track(b)};
  node.shape = {m, n};
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  node.out->data.resize(m * n);
  MutMatMap(node.out->data.data(), m, n) = MatMap(a.data().data(), m, k) *
                                           MatMap(b.data().data(), k, n);
  node.requires_grad = a.requires_grad() || b.requires_grad() ||
                       nodes_[node.inputs[0]].requires_grad ||
                       nodes_[node.inputs[1]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose expects rank-2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Node node;
  node.op = OpKind::transpose;
  node.inputs = {track(a)};
  node.shape = {n, m};
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  node.out->data.resize(m * n);
  MutMatMap(node.out->data.data(), n, m) =
      MatMap(a.data().data(), m, n).transpose();
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::binary_elementwise(OpKind op, const Tensor& a, const Tensor& b) {
  // implicit broadcasting only for true scalars; everything else is explicit
  if (a.shape() != b.shape()) {
    if (a.size() == 1 && b.size() > 1)
      return binary_elementwise(op, broadcast(a, b.shape()), b);
    if (b.size() == 1 && a.size() > 1)
      return binary_elementwise(op, a, broadcast(b, a.shape()));
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Node node;
  node.op = op;
  node.inputs = {track(a), track(b)};
  node.shape = a.shape();
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  const auto& da = a.data();
  const auto& db = b.data();
  auto& out = node.out->data;
  out.resize(da.size());
  switch (op) {
    case OpKind::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
      break;
    case OpKind::subtract:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
      break;
    case OpKind::multiply:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
      break;
    case OpKind::divide:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] / db[i];
      break;
    default:
      throw ContractError("bad binary op");
  }
  node.requires_grad = nodes_[node.inputs[0]].requires_grad ||
                       nodes_[node.inputs[1]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(OpKind::add, a, b);
}
Tensor Tape::subtract(const Tensor& a, const Tensor& b) {
  return binary_elementwise(OpKind::subtract, a, b);
}
Tensor Tape::multiply(const Tensor& a, const Tensor& b) {
  return binary_elementwise(OpKind::multiply, a, b);
}
Tensor Tape::divide(const Tensor& a, const Tensor& b) {
  return binary_elementwise(OpKind::divide, a, b);
}

Tensor Tape::unary_elementwise(OpKind op, const Tensor& a, double p0,
                               double p1) {
  Node node;
  node.op = op;
  node.inputs = {track(a)};
  node.shape = a.shape();
  node.p0 = p0;
  node.p1 = p1;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  const auto& da = a.data();
  auto& out = node.out->data;
  out.resize(da.size());
  switch (op) {
    case OpKind::negate:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = -da[i];
      break;
    case OpKind::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = da[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
      }
      break;
    case OpKind::leaky_relu:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = da[i] > 0.0 ? da[i] : p0 * da[i];
      break;
    case OpKind::log:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(da[i]);
      break;
    case OpKind::exp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(da[i]);
      break;
    case OpKind::square:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * da[i];
      break;
    case OpKind::clamp:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(std::max(da[i], p0), p1);
      break;
    case OpKind::grad_reverse:
      out.assign(da.begin(), da.end());  // bitwise identity forward
      break;
    default:
      throw ContractError("bad unary op");
  }
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::negate(const Tensor& a) {
  return unary_elementwise(OpKind::negate, a);
}
Tensor Tape::sigmoid(const Tensor& a) {
  return unary_elementwise(OpKind::sigmoid, a);
}
Tensor Tape::leaky_relu(const Tensor& a, double slope) {
  return unary_elementwise(OpKind::leaky_relu, a, slope);
}
Tensor Tape::log(const Tensor& a) { return unary_elementwise(OpKind::log, a); }
Tensor Tape::exp(const Tensor& a) { return unary_elementwise(OpKind::exp, a); }
Tensor Tape::square(const Tensor& a) {
  return unary_elementwise(OpKind::square, a);
}
Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary_elementwise(OpKind::clamp, a, lo, hi);
}
Tensor Tape::gradient_reversal(const Tensor& a, double lambda) {
  if (lambda < 0.0)
    throw ContractError("gradient_reversal: lambda must be >= 0");
  return unary_elementwise(OpKind::grad_reverse, a, lambda);
}

Tensor Tape::sum(const Tensor& a, int axis) {
  Node node;
  node.op = OpKind::sum;
  node.inputs = {track(a)};
  node.axis = axis;
  node.out = std::make_shared<detail::TensorImpl>();
  if (axis < 0) {
    node.shape = {};
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    node.out->data = {acc};
  } else {
    if (static_cast<std::size_t>(axis) >= a.rank())
      throw ShapeError("sum: axis out of range for " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    node.shape = out_shape;
    const AxisSplit s = split_axis(a.shape(), static_cast<std::size_t>(axis));
    node.out->data.assign(s.outer * s.inner, 0.0);
    const auto& da = a.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.axis; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          node.out->data[o * s.inner + i] +=
              da[(o * s.axis + k) * s.inner + i];
  }
  node.out->shape = node.shape;
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::mean(const Tensor& a, int axis) {
  Node node;
  node.op = OpKind::mean;
  node.inputs = {track(a)};
  node.axis = axis;
  node.out = std::make_shared<detail::TensorImpl>();
  if (axis < 0) {
    node.shape = {};
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    node.out->data = {acc / static_cast<double>(a.size())};
  } else {
    if (static_cast<std::size_t>(axis) >= a.rank())
      throw ShapeError("mean: axis out of range for " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    node.shape = out_shape;
    const AxisSplit s = split_axis(a.shape(), static_cast<std::size_t>(axis));
    node.out->data.assign(s.outer * s.inner, 0.0);
    const auto& da = a.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.axis; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          node.out->data[o * s.inner + i] +=
              da[(o * s.axis + k) * s.inner + i];
    const double inv = 1.0 / static_cast<double>(s.axis);
    for (double& x : node.out->data) x *= inv;
  }
  node.out->shape = node.shape;
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t ax = static_cast<std::size_t>(axis);
  const Shape& first = parts[0].shape();
  if (ax >= first.size())
    throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != ax && p.shape()[i] != first[i])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) +
                         " vs " + shape_str(first));
    axis_total += p.shape()[ax];
  }
  Node node;
  node.op = OpKind::concat;
  node.shape = first;
  node.shape[ax] = axis_total;
  for (const Tensor& p : parts) node.inputs.push_back(track(p));
  node.axis = axis;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  node.out->data.resize(numel(node.shape));
  const AxisSplit s = split_axis(node.shape, ax);
  std::size_t axis_off = 0;
  node.requires_grad = false;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t pa = parts[pi].shape()[ax];
    const auto& dp = parts[pi].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < pa; ++k)
        std::copy_n(dp.data() + (o * pa + k) * s.inner, s.inner,
                    node.out->data.data() +
                        (o * s.axis + axis_off + k) * s.inner);
    axis_off += pa;
    node.requires_grad =
        node.requires_grad || nodes_[node.inputs[pi]].requires_grad;
  }
  return emit(std::move(node));
}

Tensor Tape::slice(const Tensor& a, int axis, std::size_t start,
                   std::size_t stop) {
  const std::size_t ax = static_cast<std::size_t>(axis);
  if (ax >= a.rank())
    throw ShapeError("slice: axis out of range for " + shape_str(a.shape()));
  if (start >= stop || stop > a.shape()[ax])
    throw ShapeError("slice: bad range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") on " + shape_str(a.shape()));
  Node node;
  node.op = OpKind::slice;
  node.inputs = {track(a)};
  node.axis = axis;
  node.start = start;
  node.shape = a.shape();
  node.shape[ax] = stop - start;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  node.out->data.resize(numel(node.shape));
  const AxisSplit s = split_axis(a.shape(), ax);
  const std::size_t len = stop - start;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      std::copy_n(a.data().data() + (o * s.axis + start + k) * s.inner,
                  s.inner,
                  node.out->data.data() + (o * len + k) * s.inner);
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

namespace {
// right-aligned expansion: each input dim must equal the target dim or be 1
void broadcast_indices(const Shape& in, const Shape& target,
                       std::vector<std::size_t>& in_stride_for_out) {
  const std::size_t r = target.size();
  const std::size_t pad = r - in.size();
  std::vector<std::size_t> in_strides(in.size());
  std::size_t st = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i] = st;
    st *= in[i];
  }
  in_stride_for_out.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    if (i < pad) continue;  // broadcast over new leading dim
    const std::size_t di = in[i - pad];
    if (di == target[i])
      in_stride_for_out[i] = in_strides[i - pad];
    else if (di != 1)
      throw ShapeError("broadcast: cannot expand " + shape_str(in) + " to " +
                       shape_str(target));
  }
}
}  // namespace

Tensor Tape::broadcast(const Tensor& a, const Shape& target) {
  if (a.rank() > target.size())
    throw ShapeError("broadcast: rank of " + shape_str(a.shape()) +
                     " exceeds target " + shape_str(target));
  std::vector<std::size_t> stride;
  broadcast_indices(a.shape(), target, stride);
  Node node;
  node.op = OpKind::broadcast;
  node.inputs = {track(a)};
  node.shape = target;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = target;
  node.out->data.resize(numel(target));
  const auto& da = a.data();
  std::vector<std::size_t> idx(target.size(), 0);
  for (std::size_t flat = 0; flat < node.out->data.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < target.size(); ++i) src += idx[i] * stride[i];
    node.out->data[flat] = da[src];
    for (std::size_t i = target.size(); i-- > 0;) {
      if (++idx[i] < target[i]) break;
      idx[i] = 0;
    }
  }
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::reshape(const Tensor& a, Shape target) {
  if (numel(target) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " +
                     shape_str(target) + " changes element count");
  Node node;
  node.op = OpKind::reshape;
  node.inputs = {track(a)};
  node.shape = target;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = std::move(target);
  node.out->data = std::vector<double>(a.data().begin(), a.data().end());
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::sparse_linear(const Tensor& a,
                           std::shared_ptr<const SparseMap> map) {
  if (!map) throw ContractError("sparse_linear: null map");
  if (a.size() != map->in_size)
    throw ShapeError("sparse_linear: input " + shape_str(a.shape()) +
                     " has " + std::to_string(a.size()) + " values, map wants " +
                     std::to_string(map->in_size));
  Node node;
  node.op = OpKind::sparse_linear;
  node.inputs = {track(a)};
  node.shape = map->out_shape;
  node.map = map;
  node.out = std::make_shared<detail::TensorImpl>();
  node.out->shape = node.shape;
  const std::size_t out_n = numel(node.shape);
  node.out->data.assign(out_n, 0.0);
  const auto& da = a.data();
  for (std::size_t r = 0; r < out_n; ++r) {
    double acc = 0.0;
    for (std::uint32_t m = map->offsets[r]; m < map->offsets[r + 1]; ++m)
      acc += map->weights[m] * da[map->cols[m]];
    node.out->data[r] = acc;
  }
  node.requires_grad = nodes_[node.inputs[0]].requires_grad;
  return emit(std::move(node));
}

Tensor Tape::scalar_mul(const Tensor& a, double c) {
  return multiply(a, Tensor::scalar(c));
}

Tensor Tape::affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  Tensor brow = b.rank() == 1 ? reshape(b, {1, b.dim(0)}) : b;
  return add(y, broadcast(brow, y.shape()));
}

// --- backward -----------------------------------------------------------------

std::vector<double>& Tape::adj_for(std::int64_t id,
                                   std::vector<std::vector<double>>& adjoint) {
  auto& a = adjoint[id];
  if (a.empty()) a.assign(numel(nodes_[id].shape), 0.0);
  return a;
}

void Tape::backward_node(std::int64_t id,
                         std::vector<std::vector<double>>& adjoint) {
  Node& node = nodes_[id];
  const std::vector<double>& g = adjoint[id];
  if (check_finite_)
    for (double x : g)
      if (!std::isfinite(x))
        throw NumericError(std::string("non-finite gradient at op ") +
                           op_name(node.op));
  auto in_requires = [&](std::size_t i) {
    return nodes_[node.inputs[i]].requires_grad;
  };
  auto in_data = [&](std::size_t i) -> const std::vector<double>& {
    return nodes_[node.inputs[i]].out->data;
  };

  switch (node.op) {
    case OpKind::leaf:
      return;
    case OpKind::matmul: {
      const std::size_t m = node.shape[0], n = node.shape[1];
      const std::size_t k = nodes_[node.inputs[0]].shape[1];
      MatMap G(g.data(), m, n);
      if (in_requires(0)) {
        MutMatMap GA(adj_for(node.inputs[0], adjoint).data(), m, k);
        GA.noalias() += G * MatMap(in_data(1).data(), k, n).transpose();
      }
      if (in_requires(1)) {
        MutMatMap GB(adj_for(node.inputs[1], adjoint).data(), k, n);
        GB.noalias() += MatMap(in_data(0).data(), m, k).transpose() * G;
      }
      return;
    }
    case OpKind::transpose: {
      if (!in_requires(0)) return;
      const std::size_t n = node.shape[0], m = node.shape[1];
      MutMatMap GA(adj_for(node.inputs[0], adjoint).data(), m, n);
      GA.noalias() += MatMap(g.data(), n, m).transpose();
      return;
    }
    case OpKind::add: {
      for (int i = 0; i < 2; ++i)
        if (in_requires(i)) {
          auto& ga = adj_for(node.inputs[i], adjoint);
          for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
        }
      return;
    }
    case OpKind::subtract: {
      if (in_requires(0)) {
        auto& ga = adj_for(node.inputs[0], adjoint);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      if (in_requires(1)) {
        auto& gb = adj_for(node.inputs[1], adjoint);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] -= g[j];
      }
      return;
    }
    case OpKind::multiply: {
      if (in_requires(0)) {
        auto& ga = adj_for(node.inputs[0], adjoint);
        const auto& db = in_data(1);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * db[j];
      }
      if (in_requires(1)) {
        auto& gb = adj_for(node.inputs[1], adjoint);
        const auto& da = in_data(0);
        for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * da[j];
      }
      return;
    }
    case OpKind::divide: {
      const auto& da = in_data(0);
      const auto& db = in_data(1);
      if (in_requires(0)) {
        auto& ga = adj_for(node.inputs[0], adjoint);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / db[j];
      }
      if (in_requires(1)) {
        auto& gb = adj_for(node.inputs[1], adjoint);
        for (std::size_t j = 0; j < g.size(); ++j)
          gb[j] -= g[j] * da[j] / (db[j] * db[j]);
      }
      return;
    }
    case OpKind::negate: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] -= g[j];
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const Shape& in_shape = nodes_[node.inputs[0]].shape;
      if (node.axis < 0) {
        const double scale =
            node.op == OpKind::mean ? 1.0 / static_cast<double>(ga.size())
                                    : 1.0;
        for (double& x : ga) x += g[0] * scale;
      } else {
        const AxisSplit s =
            split_axis(in_shape, static_cast<std::size_t>(node.axis));
        const double scale =
            node.op == OpKind::mean ? 1.0 / static_cast<double>(s.axis) : 1.0;
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t k = 0; k < s.axis; ++k)
            for (std::size_t i = 0; i < s.inner; ++i)
              ga[(o * s.axis + k) * s.inner + i] +=
                  g[o * s.inner + i] * scale;
      }
      return;
    }
    case OpKind::sigmoid: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& y = node.out->data;
      for (std::size_t j = 0; j < g.size(); ++j)
        ga[j] += g[j] * y[j] * (1.0 - y[j]);
      return;
    }
    case OpKind::leaky_relu: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& da = in_data(0);
      for (std::size_t j = 0; j < g.size(); ++j)
        ga[j] += g[j] * (da[j] > 0.0 ? 1.0 : node.p0);
      return;
    }
    case OpKind::log: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& da = in_data(0);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / da[j];
      return;
    }
    case OpKind::exp: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& y = node.out->data;
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * y[j];
      return;
    }
    case OpKind::square: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& da = in_data(0);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * 2.0 * da[j];
      return;
    }
    case OpKind::clamp: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const auto& da = in_data(0);
      for (std::size_t j = 0; j < g.size(); ++j)
        if (da[j] > node.p0 && da[j] < node.p1) ga[j] += g[j];
      return;
    }
    case OpKind::grad_reverse: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] -= node.p0 * g[j];
      return;
    }
    case OpKind::concat: {
      const AxisSplit s =
          split_axis(node.shape, static_cast<std::size_t>(node.axis));
      std::size_t axis_off = 0;
      for (std::size_t pi = 0; pi < node.inputs.size(); ++pi) {
        const Shape& in_shape = nodes_[node.inputs[pi]].shape;
        const std::size_t pa = in_shape[static_cast<std::size_t>(node.axis)];
        if (in_requires(pi)) {
          auto& ga = adj_for(node.inputs[pi], adjoint);
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t k = 0; k < pa; ++k)
              for (std::size_t i = 0; i < s.inner; ++i)
                ga[(o * pa + k) * s.inner + i] +=
                    g[(o * s.axis + axis_off + k) * s.inner + i];
        }
        axis_off += pa;
      }
      return;
    }
    case OpKind::slice: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const Shape& in_shape = nodes_[node.inputs[0]].shape;
      const AxisSplit s =
          split_axis(in_shape, static_cast<std::size_t>(node.axis));
      const std::size_t len = node.shape[static_cast<std::size_t>(node.axis)];
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < s.inner; ++i)
            ga[(o * s.axis + node.start + k) * s.inner + i] +=
                g[(o * len + k) * s.inner + i];
      return;
    }
    case OpKind::broadcast: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const Shape& in_shape = nodes_[node.inputs[0]].shape;
      std::vector<std::size_t> stride;
      broadcast_indices(in_shape, node.shape, stride);
      std::vector<std::size_t> idx(node.shape.size(), 0);
      for (std::size_t flat = 0; flat < g.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < node.shape.size(); ++i)
          src += idx[i] * stride[i];
        ga[src] += g[flat];
        for (std::size_t i = node.shape.size(); i-- > 0;) {
          if (++idx[i] < node.shape[i]) break;
          idx[i] = 0;
        }
      }
      return;
    }
    case OpKind::reshape: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      return;
    }
    case OpKind::sparse_linear: {
      if (!in_requires(0)) return;
      auto& ga = adj_for(node.inputs[0], adjoint);
      const SparseMap& m = *node.map;
      for (std::size_t r = 0; r < g.size(); ++r)
        for (std::uint32_t j = m.offsets[r]; j < m.offsets[r + 1]; ++j)
          ga[m.cols[j]] += m.weights[j] * g[r];
      return;
    }
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  const std::int64_t loss_id = loss.node();
  if (loss_id < 0 || static_cast<std::size_t>(loss_id) >= nodes_.size() ||
      nodes_[loss_id].out.get() != loss.impl())
    throw ContractError("backward: loss was not produced by this tape");
  if (nodes_.empty()) throw ContractError("backward: empty tape");

  std::vector<std::vector<double>> adjoint(nodes_.size());
  adjoint[loss_id] = {1.0};
  for (std::int64_t id = loss_id; id >= 0; --id) {
    if (adjoint[id].empty() || !nodes_[id].requires_grad) continue;
    backward_node(id, adjoint);
  }
  // flush accumulated adjoints into the grad buffers of leaf tensors
  for (std::int64_t id = 0; id <= loss_id; ++id) {
    Node& n = nodes_[id];
    if (n.op != OpKind::leaf || !n.requires_grad || adjoint[id].empty())
      continue;
    if (n.out->grad.empty()) n.out->grad.assign(n.out->data.size(), 0.0);
    auto& grad = n.out->grad;
    const auto& a = adjoint[id];
    for (std::size_t j = 0; j < grad.size(); ++j) {
      grad[j] += a[j];
      if (check_finite_ && !std::isfinite(grad[j]))
        throw NumericError("non-finite gradient accumulated into leaf");
    }
  }
}

Tensor forward_op(Tape& tape, OpKind kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw ContractError(std::string(op_name(kind)) + ": expected " +
                          std::to_string(n) + " inputs");
  };
  switch (kind) {
    case OpKind::matmul: need(2); return tape.matmul(inputs[0], inputs[1]);
    case OpKind::transpose: need(1); return tape.transpose(inputs[0]);
    case OpKind::add: need(2); return tape.add(inputs[0], inputs[1]);
    case OpKind::subtract: need(2); return tape.subtract(inputs[0], inputs[1]);
    case OpKind::multiply: need(2); return tape.multiply(inputs[0], inputs[1]);
    case OpKind::divide: need(2); return tape.divide(inputs[0], inputs[1]);
    case OpKind::negate: need(1); return tape.negate(inputs[0]);
    case OpKind::sum: need(1); return tape.sum(inputs[0], attrs.axis);
    case OpKind::mean: need(1); return tape.mean(inputs[0], attrs.axis);
    case OpKind::sigmoid: need(1); return tape.sigmoid(inputs[0]);
    case OpKind::leaky_relu:
      need(1);
      return tape.leaky_relu(inputs[0], attrs.p0);
    case OpKind::log: need(1); return tape.log(inputs[0]);
    case OpKind::exp: need(1); return tape.exp(inputs[0]);
    case OpKind::square: need(1); return tape.square(inputs[0]);
    case OpKind::clamp:
      need(1);
      return tape.clamp(inputs[0], attrs.p0, attrs.p1);
    case OpKind::concat: return tape.concat(inputs, attrs.axis);
    case OpKind::slice:
      need(1);
      return tape.slice(inputs[0], attrs.axis, attrs.start, attrs.stop);
    case OpKind::broadcast:
      need(1);
      return tape.broadcast(inputs[0], attrs.shape);
    case OpKind::reshape: need(1); return tape.reshape(inputs[0], attrs.shape);
    case OpKind::sparse_linear:
      need(1);
      return tape.sparse_linear(inputs[0], attrs.map);
    case OpKind::grad_reverse:
      need(1);
      return tape.gradient_reversal(inputs[0], attrs.p0);
    case OpKind::leaf: break;
  }
  throw ContractError("forward_op: unsupported op");
}

// --- sparse map builders --------------------------------------------------------

std::shared_ptr<const SparseMap> make_patchify_map(std::size_t h, std::size_t w,
                                                   std::size_t c,
                                                   std::size_t patch) {
  if (h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: image sides must be divisible by patch size");
  auto map = std::make_shared<SparseMap>();
  const std::size_t gy = h / patch, gx = w / patch;
  map->in_size = h * w * c;
  map->out_shape = {gy * gx, patch * patch * c};
  const std::size_t out_n = numel(map->out_shape);
  map->offsets.reserve(out_n + 1);
  map->cols.reserve(out_n);
  map->weights.reserve(out_n);
  map->offsets.push_back(0);
  for (std::size_t ty = 0; ty < gy; ++ty)
    for (std::size_t tx = 0; tx < gx; ++tx)
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t col =
                ((ty * patch + py) * w + (tx * patch + px)) * c + ch;
            map->cols.push_back(static_cast<std::uint32_t>(col));
            map->weights.push_back(1.0);
            map->offsets.push_back(
                static_cast<std::uint32_t>(map->cols.size()));
          }
  return map;
}

std::shared_ptr<const SparseMap> make_bilinear_upsample_map(std::size_t g,
                                                            std::size_t h,
                                                            std::size_t w) {
  auto map = std::make_shared<SparseMap>();
  map->in_size = g * g;
  map->out_shape = {h, w};
  map->offsets.push_back(0);
  auto axis_coords = [g](std::size_t out_n, std::size_t i) {
    // cell-center convention; clamp at the borders
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(g) /
                   static_cast<double>(out_n) -
               0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(g - 1));
    const std::size_t lo = static_cast<std::size_t>(s);
    const std::size_t hi = std::min(lo + 1, g - 1);
    const double t = s - static_cast<double>(lo);
    return std::tuple<std::size_t, std::size_t, double>(lo, hi, t);
  };
  for (std::size_t y = 0; y < h; ++y) {
    const auto [y0, y1, ty] = axis_coords(h, y);
    for (std::size_t x = 0; x < w; ++x) {
      const auto [x0, x1, tx] = axis_coords(w, x);
      const std::pair<std::size_t, double> pts[4] = {
          {y0 * g + x0, (1 - ty) * (1 - tx)},
          {y0 * g + x1, (1 - ty) * tx},
          {y1 * g + x0, ty * (1 - tx)},
          {y1 * g + x1, ty * tx},
      };
      for (const auto& [col, wgt] : pts) {
        if (wgt == 0.0) continue;
        map->cols.push_back(static_cast<std::uint32_t>(col));
        map->weights.push_back(wgt);
      }
      map->offsets.push_back(static_cast<std::uint32_t>(map->cols.size()));
    }
  }
  return map;
}

std::shared_ptr<const SparseMap> make_average_pool_map(std::size_t h,
                                                       std::size_t w,
                                                       std::size_t g) {
  if (h % g != 0 || w % g != 0)
    throw ShapeError("average_pool: sides must be divisible by grid size");
  auto map = std::make_shared<SparseMap>();
  const std::size_t by = h / g, bx = w / g;
  const double inv = 1.0 / static_cast<double>(by * bx);
  map->in_size = h * w;
  map->out_shape = {g * g, 1};
  map->offsets.push_back(0);
  for (std::size_t cy = 0; cy < g; ++cy)
    for (std::size_t cx = 0; cx < g; ++cx) {
      for (std::size_t y = 0; y < by; ++y)
        for (std::size_t x = 0; x < bx; ++x) {
          map->cols.push_back(
              static_cast<std::uint32_t>((cy * by + y) * w + cx * bx + x));
          map->weights.push_back(inv);
        }
      map->offsets.push_back(static_cast<std::uint32_t>(map->cols.size()));
    }
  return map;
}

}  // namespace dsva
