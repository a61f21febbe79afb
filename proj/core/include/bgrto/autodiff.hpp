#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bgrto/tensor.hpp"

namespace bgrto::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMaximum,
  kMinimum,
  kMatMul,
  kSum,
  kMean,
  kExp,
  kLog,
  kSigmoid,
  kRelu,
  kSoftplus,
  kLogSoftmax,
  kPick,
  kTakeRows,
  kBroadcast,
  kClamp,
  kScale,
  kAddScalar,
  kStopGradient,
  kReshape,
};

const char* op_name(OpKind kind) noexcept;

/// Dynamic reverse-mode tape. Operations evaluate eagerly as they are
/// recorded; `forward()` replays the whole tape (in recording order) after
/// leaf values change. Leaves are named parameters; constants never receive
/// gradient.
///
/// A tape is confined to one thread. Distinct tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf. Names must be unique per tape.
  Var param(const std::string& name, Tensor value);
  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }

  /// Registers every entry of `params` as a leaf and returns handles in
  /// the map's (lexicographic) order.
  std::vector<Var> params(const NamedParams& params);
  Var leaf(const std::string& name) const;
  bool has_param(const std::string& name) const;

  const Tensor& value(Var v) const;

  /// Overwrites a leaf value without re-evaluating; the tape is stale until
  /// the next forward().
  void set_input(const std::string& name, const Tensor& value);

  /// Re-evaluates every recorded node in order.
  void forward();
  void forward(const NamedParams& inputs);

  /// Gradients of `output` (seeded with `seed`) with respect to every leaf.
  /// Leaves unreachable from `output` get zero tensors.
  NamedParams backward(Var output, const Tensor& seed) const;
  /// Scalar outputs only; seed 1.
  NamedParams backward(Var output) const;

  NamedParams leaf_values() const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool stale() const noexcept { return stale_; }

  // Recording entry point used by the primitive free functions.
  Var record(OpKind kind, std::vector<std::size_t> args, double a = 0.0, double b = 0.0,
             std::vector<std::size_t> index = {}, Dims shape = {});

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::size_t> args;
    double a = 0.0;
    double b = 0.0;
    std::vector<std::size_t> index;
    Dims shape;
    std::string name;
    bool needs_grad = false;
    Tensor value;
  };

  Tensor evaluate(const Node& node) const;
  void accumulate_grads(const Node& node, const Tensor& grad,
                        std::vector<Tensor>& grads, std::vector<bool>& has_grad) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> leaves_;
  bool stale_ = false;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var maximum(Var a, Var b);
/// Ties route the gradient to `a`.
Var minimum(Var a, Var b);
/// Rank-2 [m,k] x [k,n].
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// log(1 + e^x), evaluated without overflow.
Var softplus(Var a);
/// Log-softmax over the trailing axis with max subtraction.
Var log_softmax(Var a);
/// out[r] = a[r, index[r]] for a of dims [rows, n] (or [n] with one index).
Var pick(Var a, std::vector<std::size_t> index);
/// Row gather along the leading axis.
Var take_rows(Var a, std::vector<std::size_t> rows);
/// Prepends a leading axis of length `count`.
Var broadcast(Var a, std::size_t count);
/// Gradient passes where lo <= x <= hi.
Var clamp(Var a, double lo, double hi);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var stop_gradient(Var a);
Var reshape(Var a, Dims dims);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

struct FiniteDiffReport {
  bool passed = true;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Central-difference check of `output` (scalar) against backward(). A
/// coordinate passes if its relative error is within `tolerance`, or, when
/// both gradients are below 1e-6 in magnitude, if the absolute error is
/// within 1e-8. `names` empty means every leaf. Restores leaf values and
/// re-evaluates the tape before returning.
FiniteDiffReport finite_diff_check(Tape& tape, Var output, double step, double tolerance,
                                   const std::vector<std::string>& names = {});

}  // namespace bgrto::ad
