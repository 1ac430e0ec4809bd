#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsva/errors.hpp"

namespace dsva {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first backward touches it
  bool requires_grad = false;
};
}  // namespace detail

// Dense float64 tensor handle. Copies share the underlying storage, so a
// parameter updated by an optimizer is visible through every handle.
// `node()` is the id of the tape node that produced this handle (-1 when
// detached from any tape).
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates a zero gradient accumulator on first use.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  // Scalar value; contract error unless size() == 1.
  double value() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }
  void set(std::size_t flat_index, double v) { impl_->data.at(flat_index) = v; }

  std::int64_t node() const { return node_; }

  // Returns a handle to the same storage with no tape association.
  Tensor detached() const {
    Tensor t = *this;
    t.node_ = -1;
    return t;
  }

  detail::TensorImpl* impl() const { return impl_.get(); }

private:
  friend class Tape;
  std::shared_ptr<detail::TensorImpl> impl_;
  std::int64_t node_ = -1;
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  transpose,
  add,
  subtract,
  multiply,
  divide,
  negate,
  sum,
  mean,
  sigmoid,
  leaky_relu,
  log,
  exp,
  square,
  clamp,
  concat,
  slice,
  broadcast,
  reshape,
  sparse_linear,
  grad_reverse,
};

const char* op_name(OpKind k);

// Fixed (non-trainable) sparse linear map in CSR form. Used for resampling
// operations whose index structure is known up front: patch extraction,
// average pooling, nearest and bilinear upsampling.
struct SparseMap {
  std::size_t in_size = 0;
  Shape out_shape;
  std::vector<std::uint32_t> offsets;  // out_size + 1
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
};

// Reverse-mode tape. Records every op on forward, replays them in exact
// reverse order on backward. Confined to one logical thread.
class Tape {
public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  std::size_t size() const { return nodes_.size(); }
  // Drops all recorded nodes but keeps allocated capacity.
  void reset();

  // --- recorded operations -------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor subtract(const Tensor& a, const Tensor& b);
  Tensor multiply(const Tensor& a, const Tensor& b);
  Tensor divide(const Tensor& a, const Tensor& b);
  Tensor negate(const Tensor& a);
  Tensor sum(const Tensor& a, int axis = -1);   // axis -1: all elements
  Tensor mean(const Tensor& a, int axis = -1);
  Tensor sigmoid(const Tensor& a);
  Tensor leaky_relu(const Tensor& a, double slope);
  Tensor log(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor square(const Tensor& a);
  Tensor clamp(const Tensor& a, double lo, double hi);
  Tensor concat(const std::vector<Tensor>& parts, int axis);
  Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t stop);
  Tensor broadcast(const Tensor& a, const Shape& target);
  Tensor reshape(const Tensor& a, Shape target);
  Tensor sparse_linear(const Tensor& a, std::shared_ptr<const SparseMap> map);
  // Identity forward; backward scales the incoming gradient by -lambda.
  Tensor gradient_reversal(const Tensor& a, double lambda);

  Tensor scalar_mul(const Tensor& a, double c);  // sugar: multiply by constant
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b

  // Accumulates dLoss/dT into .grad of every requires_grad tensor reachable
  // from `loss`. `loss` must be scalar and produced by this tape.
  void backward(const Tensor& loss);

private:
  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<std::int64_t> inputs;
    Shape shape;
    std::shared_ptr<detail::TensorImpl> out;  // holds forward value
    bool requires_grad = false;
    double p0 = 0.0, p1 = 0.0;  // slope / lambda / clamp bounds
    int axis = -1;
    std::size_t start = 0;
    std::shared_ptr<const SparseMap> map;
  };

  std::int64_t track(const Tensor& t);  // register leaf / resolve node id
  Tensor emit(Node node);
  void check_values(const std::vector<double>& v, OpKind op) const;
  Tensor binary_elementwise(OpKind op, const Tensor& a, const Tensor& b);
  Tensor unary_elementwise(OpKind op, const Tensor& a, double p0 = 0.0,
                           double p1 = 0.0);
  void backward_node(std::int64_t id,
                     std::vector<std::vector<double>>& adjoint);
  std::vector<double>& adj_for(std::int64_t id,
                               std::vector<std::vector<double>>& adjoint);

  std::vector<Node> nodes_;
  std::unordered_map<const detail::TensorImpl*, std::int64_t> leaves_;
  bool check_finite_;
};

// Generic dispatcher over the recorded op set (shape/attr arguments packed in
// `attrs`); the named member functions above are the primary interface.
struct OpAttrs {
  double p0 = 0.0, p1 = 0.0;
  int axis = -1;
  std::size_t start = 0, stop = 0;
  Shape shape;
  std::shared_ptr<const SparseMap> map;
};
Tensor forward_op(Tape& tape, OpKind kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs = {});

// --- sparse map builders ----------------------------------------------------

// (h, w, c) image -> (tiles, patch*patch*c) rows, row-major tile order.
std::shared_ptr<const SparseMap> make_patchify_map(std::size_t h, std::size_t w,
                                                   std::size_t c,
                                                   std::size_t patch);
// (g, g) grid -> (h, w) bilinear upsample; sample points at cell centers.
std::shared_ptr<const SparseMap> make_bilinear_upsample_map(std::size_t g,
                                                            std::size_t h,
                                                            std::size_t w);
// (h, w) mask -> (g*g, 1) block means with block size h/g.
std::shared_ptr<const SparseMap> make_average_pool_map(std::size_t h,
                                                       std::size_t w,
                                                       std::size_t g);

}  // namespace dsva
