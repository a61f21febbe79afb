#include "bgrto/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bgrto/errors.hpp"

namespace bgrto::ad {

namespace {

bool is_suffix(const Dims& part, const Dims& full) {
  return part.size() < full.size() && std::equal(part.rbegin(), part.rend(), full.rbegin());
}

// Which operand of a binary primitive is tiled along leading axes.
enum class Tiled { kNone, kA, kB };

Tiled tiling(OpKind kind, const Dims& a, const Dims& b) {
  if (a == b) return Tiled::kNone;
  if (is_suffix(b, a)) return Tiled::kB;
  if (is_suffix(a, b)) return Tiled::kA;
  throw StructuralError(std::string(op_name(kind)) + ": incompatible dims " + dims_to_string(a) +
                        " and " + dims_to_string(b));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// c[m,n] += a[m,k] * b[k,n]; zero entries of `a` are skipped (one-hot inputs
// are common). Each output element accumulates over k in increasing order, so
// a row's result does not depend on how many other rows are in the batch.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T, via a transposed copy of b so the inner loop
// runs over contiguous memory. Zero entries of g (common behind relu) are skipped.
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double gij = gi[j];
      if (gij == 0.0) continue;
      const double* bj = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) ci[p] += gij * bj[p];
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

std::size_t trailing(const Tensor& t) { return t.rank() == 0 ? 1 : t.dims().back(); }

}  // namespace

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "subtract";
    case OpKind::kMul: return "multiply";
    case OpKind::kDiv: return "divide";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kMinimum: return "minimum";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kPick: return "pick";
    case OpKind::kTakeRows: return "take_rows";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kClamp: return "clamp";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw StateError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::param(const std::string& name, Tensor value) {
  if (has_param(name)) throw UsageError("duplicate tape parameter '" + name + "'");
  Node node;
  node.kind = OpKind::kLeaf;
  node.name = name;
  node.needs_grad = true;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  leaves_.push_back(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.kind = OpKind::kConstant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Var> Tape::params(const NamedParams& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(param(name, t));
  return out;
}

Var Tape::leaf(const std::string& name) const {
  for (auto id : leaves_) {
    if (nodes_[id].name == name) return Var(const_cast<Tape*>(this), id);
  }
  throw UsageError("no tape parameter named '" + name + "'");
}

bool Tape::has_param(const std::string& name) const {
  return std::any_of(leaves_.begin(), leaves_.end(),
                     [&](std::size_t id) { return nodes_[id].name == name; });
}

const Tensor& Tape::value(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw StateError("Var does not belong to this tape");
  return nodes_[v.id_].value;
}

void Tape::set_input(const std::string& name, const Tensor& value) {
  for (auto id : leaves_) {
    Node& node = nodes_[id];
    if (node.name != name) continue;
    if (node.value.dims() != value.dims()) {
      throw StructuralError("input '" + name + "' has dims " + dims_to_string(value.dims()) +
                            ", tape expects " + dims_to_string(node.value.dims()));
    }
    node.value = value;
    stale_ = true;
    return;
  }
  throw UsageError("no tape parameter named '" + name + "'");
}

void Tape::forward() {
  for (auto& node : nodes_) {
    if (node.kind == OpKind::kLeaf || node.kind == OpKind::kConstant) continue;
    node.value = evaluate(node);
  }
  stale_ = false;
}

void Tape::forward(const NamedParams& inputs) {
  for (const auto& [name, t] : inputs) set_input(name, t);
  forward();
}

NamedParams Tape::leaf_values() const {
  NamedParams out;
  for (auto id : leaves_) out.emplace(nodes_[id].name, nodes_[id].value);
  return out;
}

Var Tape::record(OpKind kind, std::vector<std::size_t> args, double a, double b,
                 std::vector<std::size_t> index, Dims shape) {
  Node node;
  node.kind = kind;
  node.args = std::move(args);
  node.a = a;
  node.b = b;
  node.index = std::move(index);
  node.shape = std::move(shape);
  if (kind != OpKind::kStopGradient) {
    for (auto arg : node.args) node.needs_grad = node.needs_grad || nodes_[arg].needs_grad;
  }
  node.value = evaluate(node);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::evaluate(const Node& node) const {
  const auto arg = [&](std::size_t i) -> const Tensor& { return nodes_[node.args[i]].value; };
  const char* name = op_name(node.kind);

  switch (node.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      return node.value;

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv:
    case OpKind::kMaximum:
    case OpKind::kMinimum: {
      const Tensor& x = arg(0);
      const Tensor& y = arg(1);
      const Tiled t = tiling(node.kind, x.dims(), y.dims());
      Tensor out(t == Tiled::kA ? y.dims() : x.dims());
      const std::size_t nx = x.size();
      const std::size_t ny = y.size();
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = x[i % nx];
        const double v = y[i % ny];
        switch (node.kind) {
          case OpKind::kAdd: out[i] = u + v; break;
          case OpKind::kSub: out[i] = u - v; break;
          case OpKind::kMul: out[i] = u * v; break;
          case OpKind::kDiv:
            if (v == 0.0) throw DomainError("divide: division by zero");
            out[i] = u / v;
            break;
          case OpKind::kMaximum: out[i] = u >= v ? u : v; break;
          default: out[i] = u <= v ? u : v; break;
        }
      }
      return out;
    }

    case OpKind::kMatMul: {
      const Tensor& x = arg(0);
      const Tensor& y = arg(1);
      if (x.rank() != 2 || y.rank() != 2 || x.dims()[1] != y.dims()[0]) {
        throw StructuralError(std::string(name) + ": cannot multiply " + dims_to_string(x.dims()) +
                              " by " + dims_to_string(y.dims()));
      }
      const std::size_t m = x.dims()[0], k = x.dims()[1], n = y.dims()[1];
      Tensor out({m, n});
      gemm_nn(x.values().data(), y.values().data(), out.values().data(), m, k, n);
      return out;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      // Extended-precision accumulation keeps the result within about one
      // rounding of the exact sum.
      long double acc = 0.0L;
      for (double v : arg(0).values()) acc += v;
      if (node.kind == OpKind::kMean) acc /= static_cast<long double>(arg(0).size());
      return Tensor::scalar(static_cast<double>(acc));
    }

    case OpKind::kExp:
    case OpKind::kLog:
    case OpKind::kSigmoid:
    case OpKind::kRelu:
    case OpKind::kSoftplus:
    case OpKind::kClamp:
    case OpKind::kScale:
    case OpKind::kAddScalar:
    case OpKind::kStopGradient: {
      const Tensor& x = arg(0);
      Tensor out(x.dims());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = x[i];
        double r = 0.0;
        switch (node.kind) {
          case OpKind::kExp:
            r = std::exp(u);
            if (!std::isfinite(r)) throw DomainError("exp: overflow at input " + std::to_string(u));
            break;
          case OpKind::kLog:
            if (!(u > 0.0)) throw DomainError("log: non-positive input " + std::to_string(u));
            r = std::log(u);
            break;
          case OpKind::kSigmoid: r = stable_sigmoid(u); break;
          case OpKind::kRelu: r = u > 0.0 ? u : 0.0; break;
          case OpKind::kSoftplus: r = stable_softplus(u); break;
          case OpKind::kClamp: r = std::clamp(u, node.a, node.b); break;
          case OpKind::kScale: r = u * node.a; break;
          case OpKind::kAddScalar: r = u + node.a; break;
          default: r = u; break;
        }
        out[i] = r;
      }
      return out;
    }

    case OpKind::kLogSoftmax: {
      const Tensor& x = arg(0);
      const std::size_t n = trailing(x);
      const std::size_t rows = x.size() / n;
      Tensor out(x.dims());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * n;
        double* o = out.values().data() + r * n;
        const double m = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
      }
      return out;
    }

    case OpKind::kPick: {
      const Tensor& x = arg(0);
      if (x.rank() == 0) throw StructuralError("pick: scalar input");
      const std::size_t n = trailing(x);
      const std::size_t rows = x.size() / n;
      if (node.index.size() != rows) {
        throw StructuralError("pick: " + std::to_string(node.index.size()) + " indices for " +
                              std::to_string(rows) + " rows of " + dims_to_string(x.dims()));
      }
      Dims out_dims(x.dims().begin(), x.dims().end() - 1);
      Tensor out(out_dims);
      for (std::size_t r = 0; r < rows; ++r) {
        if (node.index[r] >= n) {
          throw StructuralError("pick: index " + std::to_string(node.index[r]) +
                                " out of range for trailing axis " + std::to_string(n));
        }
        out[r] = x[r * n + node.index[r]];
      }
      return out;
    }

    case OpKind::kTakeRows: {
      const Tensor& x = arg(0);
      if (x.rank() == 0 || node.index.empty()) throw StructuralError("take_rows: empty selection");
      const std::size_t rows = x.dims()[0];
      const std::size_t stride = x.size() / rows;
      Dims out_dims = x.dims();
      out_dims[0] = node.index.size();
      Tensor out(out_dims);
      for (std::size_t r = 0; r < node.index.size(); ++r) {
        if (node.index[r] >= rows) {
          throw StructuralError("take_rows: row " + std::to_string(node.index[r]) +
                                " out of range for " + dims_to_string(x.dims()));
        }
        std::copy_n(x.values().data() + node.index[r] * stride, stride,
                    out.values().data() + r * stride);
      }
      return out;
    }

    case OpKind::kBroadcast: {
      const Tensor& x = arg(0);
      const auto count = static_cast<std::size_t>(node.a);
      Dims out_dims{count};
      out_dims.insert(out_dims.end(), x.dims().begin(), x.dims().end());
      Tensor out(out_dims);
      for (std::size_t c = 0; c < count; ++c) {
        std::copy(x.values().begin(), x.values().end(), out.values().begin() + c * x.size());
      }
      return out;
    }

    case OpKind::kReshape: {
      const Tensor& x = arg(0);
      if (dims_product(node.shape) != x.size()) {
        throw StructuralError("reshape: " + dims_to_string(x.dims()) + " to " +
                              dims_to_string(node.shape));
      }
      return Tensor(node.shape, x.storage());
    }
  }
  throw StructuralError(std::string("unhandled primitive ") + name);
}

void Tape::accumulate_grads(const Node& node, const Tensor& g, std::vector<Tensor>& grads,
                            std::vector<bool>& has_grad) const {
  const auto slot = [&](std::size_t i) -> Tensor* {
    const std::size_t id = node.args[i];
    if (!nodes_[id].needs_grad) return nullptr;
    if (!has_grad[id]) {
      grads[id] = Tensor(nodes_[id].value.dims(), 0.0);
      has_grad[id] = true;
    }
    return &grads[id];
  };
  const auto arg = [&](std::size_t i) -> const Tensor& { return nodes_[node.args[i]].value; };

  switch (node.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
    case OpKind::kStopGradient:
      return;

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv:
    case OpKind::kMaximum:
    case OpKind::kMinimum: {
      const Tensor& x = arg(0);
      const Tensor& y = arg(1);
      Tensor* gx = slot(0);
      Tensor* gy = slot(1);
      const std::size_t nx = x.size();
      const std::size_t ny = y.size();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double u = x[i % nx];
        const double v = y[i % ny];
        double dx = 0.0, dy = 0.0;
        switch (node.kind) {
          case OpKind::kAdd: dx = g[i]; dy = g[i]; break;
          case OpKind::kSub: dx = g[i]; dy = -g[i]; break;
          case OpKind::kMul: dx = g[i] * v; dy = g[i] * u; break;
          case OpKind::kDiv: dx = g[i] / v; dy = -g[i] * u / (v * v); break;
          case OpKind::kMaximum: (u >= v ? dx : dy) = g[i]; break;
          default: (u <= v ? dx : dy) = g[i]; break;
        }
        if (gx) (*gx)[i % nx] += dx;
        if (gy) (*gy)[i % ny] += dy;
      }
      return;
    }

    case OpKind::kMatMul: {
      const Tensor& x = arg(0);
      const Tensor& y = arg(1);
      const std::size_t m = x.dims()[0], k = x.dims()[1], n = y.dims()[1];
      if (Tensor* gx = slot(0)) gemm_nt(g.values().data(), y.values().data(), gx->values().data(), m, n, k);
      if (Tensor* gy = slot(1)) gemm_tn(x.values().data(), g.values().data(), gy->values().data(), m, k, n);
      return;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      Tensor* gx = slot(0);
      if (!gx) return;
      double d = g.item();
      if (node.kind == OpKind::kMean) d /= static_cast<double>(gx->size());
      for (double& v : gx->values()) v += d;
      return;
    }

    case OpKind::kExp:
    case OpKind::kLog:
    case OpKind::kSigmoid:
    case OpKind::kRelu:
    case OpKind::kSoftplus:
    case OpKind::kClamp:
    case OpKind::kScale:
    case OpKind::kAddScalar: {
      Tensor* gx = slot(0);
      if (!gx) return;
      const Tensor& x = arg(0);
      const Tensor& out = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (node.kind) {
          case OpKind::kExp: d = g[i] * out[i]; break;
          case OpKind::kLog: d = g[i] / x[i]; break;
          case OpKind::kSigmoid: d = g[i] * out[i] * (1.0 - out[i]); break;
          case OpKind::kRelu: d = x[i] > 0.0 ? g[i] : 0.0; break;
          case OpKind::kSoftplus: d = g[i] * stable_sigmoid(x[i]); break;
          case OpKind::kClamp: d = (x[i] >= node.a && x[i] <= node.b) ? g[i] : 0.0; break;
          case OpKind::kScale: d = g[i] * node.a; break;
          default: d = g[i]; break;
        }
        (*gx)[i] += d;
      }
      return;
    }

    case OpKind::kLogSoftmax: {
      Tensor* gx = slot(0);
      if (!gx) return;
      const Tensor& out = node.value;
      const std::size_t n = trailing(out);
      const std::size_t rows = out.size() / n;
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          (*gx)[r * n + j] += g[r * n + j] - std::exp(out[r * n + j]) * gs;
        }
      }
      return;
    }

    case OpKind::kPick: {
      Tensor* gx = slot(0);
      if (!gx) return;
      const std::size_t n = trailing(*gx);
      for (std::size_t r = 0; r < node.index.size(); ++r) (*gx)[r * n + node.index[r]] += g[r];
      return;
    }

    case OpKind::kTakeRows: {
      Tensor* gx = slot(0);
      if (!gx) return;
      const std::size_t stride = gx->size() / gx->dims()[0];
      for (std::size_t r = 0; r < node.index.size(); ++r) {
        double* dst = gx->values().data() + node.index[r] * stride;
        const double* src = g.values().data() + r * stride;
        for (std::size_t j = 0; j < stride; ++j) dst[j] += src[j];
      }
      return;
    }

    case OpKind::kBroadcast: {
      Tensor* gx = slot(0);
      if (!gx) return;
      const std::size_t n = gx->size();
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i % n] += g[i];
      return;
    }

    case OpKind::kReshape: {
      Tensor* gx = slot(0);
      if (!gx) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      return;
    }
  }
}

NamedParams Tape::backward(Var output, const Tensor& seed) const {
  if (output.tape_ != this || output.id_ >= nodes_.size()) {
    throw StateError("backward: output does not belong to this tape");
  }
  if (stale_) throw StateError("backward: inputs changed since the last forward evaluation");
  if (seed.dims() != nodes_[output.id_].value.dims()) {
    throw StructuralError("backward: seed dims " + dims_to_string(seed.dims()) +
                          " do not match output dims " +
                          dims_to_string(nodes_[output.id_].value.dims()));
  }

  std::vector<Tensor> grads(output.id_ + 1);
  std::vector<bool> has_grad(output.id_ + 1, false);
  grads[output.id_] = seed;
  has_grad[output.id_] = true;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    if (!has_grad[i] || !nodes_[i].needs_grad) continue;
    accumulate_grads(nodes_[i], grads[i], grads, has_grad);
  }

  NamedParams out;
  for (auto id : leaves_) {
    const Node& leaf = nodes_[id];
    if (id <= output.id_ && has_grad[id]) {
      out.emplace(leaf.name, std::move(grads[id]));
    } else {
      out.emplace(leaf.name, Tensor(leaf.value.dims(), 0.0));
    }
  }
  return out;
}

NamedParams Tape::backward(Var output) const {
  const Tensor& v = value(output);
  if (v.size() != 1) {
    throw UsageError("backward without seed requires a scalar output, got " + dims_to_string(v.dims()));
  }
  return backward(output, Tensor(v.dims(), 1.0));
}

Var add(Var a, Var b) { return a.tape().record(OpKind::kAdd, {a.id(), b.id()}); }
Var sub(Var a, Var b) { return a.tape().record(OpKind::kSub, {a.id(), b.id()}); }
Var mul(Var a, Var b) { return a.tape().record(OpKind::kMul, {a.id(), b.id()}); }
Var div(Var a, Var b) { return a.tape().record(OpKind::kDiv, {a.id(), b.id()}); }
Var maximum(Var a, Var b) { return a.tape().record(OpKind::kMaximum, {a.id(), b.id()}); }
Var minimum(Var a, Var b) { return a.tape().record(OpKind::kMinimum, {a.id(), b.id()}); }
Var matmul(Var a, Var b) { return a.tape().record(OpKind::kMatMul, {a.id(), b.id()}); }
Var sum(Var a) { return a.tape().record(OpKind::kSum, {a.id()}); }
Var mean(Var a) { return a.tape().record(OpKind::kMean, {a.id()}); }
Var exp(Var a) { return a.tape().record(OpKind::kExp, {a.id()}); }
Var log(Var a) { return a.tape().record(OpKind::kLog, {a.id()}); }
Var sigmoid(Var a) { return a.tape().record(OpKind::kSigmoid, {a.id()}); }
Var relu(Var a) { return a.tape().record(OpKind::kRelu, {a.id()}); }
Var softplus(Var a) { return a.tape().record(OpKind::kSoftplus, {a.id()}); }
Var log_softmax(Var a) { return a.tape().record(OpKind::kLogSoftmax, {a.id()}); }

Var pick(Var a, std::vector<std::size_t> index) {
  return a.tape().record(OpKind::kPick, {a.id()}, 0.0, 0.0, std::move(index));
}

Var take_rows(Var a, std::vector<std::size_t> rows) {
  return a.tape().record(OpKind::kTakeRows, {a.id()}, 0.0, 0.0, std::move(rows));
}

Var broadcast(Var a, std::size_t count) {
  if (count == 0) throw StructuralError("broadcast: count must be positive");
  return a.tape().record(OpKind::kBroadcast, {a.id()}, static_cast<double>(count));
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw UsageError("clamp: lo > hi");
  return a.tape().record(OpKind::kClamp, {a.id()}, lo, hi);
}

Var scale(Var a, double factor) { return a.tape().record(OpKind::kScale, {a.id()}, factor); }
Var add_scalar(Var a, double offset) { return a.tape().record(OpKind::kAddScalar, {a.id()}, offset); }
Var stop_gradient(Var a) { return a.tape().record(OpKind::kStopGradient, {a.id()}); }

Var reshape(Var a, Dims dims) {
  return a.tape().record(OpKind::kReshape, {a.id()}, 0.0, 0.0, {}, std::move(dims));
}

FiniteDiffReport finite_diff_check(Tape& tape, Var output, double step, double tolerance,
                                   const std::vector<std::string>& names) {
  if (tape.value(output).size() != 1) {
    throw UsageError("finite_diff_check: objective must be scalar, got " +
                     dims_to_string(tape.value(output).dims()));
  }
  if (!(step > 0.0 && step <= 1e-2)) throw UsageError("finite_diff_check: step must lie in (0, 1e-2]");

  const NamedParams analytic = tape.backward(output);
  const NamedParams original = tape.leaf_values();

  FiniteDiffReport report;
  for (const auto& [name, base] : original) {
    if (!names.empty() && std::find(names.begin(), names.end(), name) == names.end()) continue;
    Tensor probe = base;
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      probe[i] = base[i] + step;
      tape.set_input(name, probe);
      tape.forward();
      const double up = tape.value(output).item();
      probe[i] = base[i] - step;
      tape.set_input(name, probe);
      tape.forward();
      const double down = tape.value(output).item();
      probe[i] = base[i];

      const double numeric = (up - down) / (2.0 * step);
      const double a = grad[i];
      const double abs_err = std::abs(a - numeric);
      const double scale_ = std::max(std::abs(a), std::abs(numeric));
      ++report.coordinates;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);

      bool ok;
      double rel = 0.0;
      if (scale_ < 1e-6) {
        ok = abs_err <= 1e-8;
      } else {
        rel = abs_err / scale_;
        ok = rel <= tolerance;
      }
      if (!ok) report.passed = false;
      if (rel > report.max_rel_error || (!ok && report.worst_param.empty())) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    tape.set_input(name, base);
  }
  tape.forward();
  return report;
}

}  // namespace bgrto::ad
