#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nerfcast/array.hpp"
#include "nerfcast/geom.hpp"

namespace nerfcast {

// Chunked bump allocator with stable addresses; reset() recycles the memory
// without freeing, so per-ray tapes reuse their buffers.
template <typename X>
class Arena {
 public:
  explicit Arena(size_t chunk_capacity = size_t(1) << 16) : default_cap_(chunk_capacity) {}

  X* alloc(size_t n) {
    if (cur_ >= chunks_.size() || used_ + n > chunks_[cur_].cap) {
      advance(n);
    }
    X* p = chunks_[cur_].data.get() + used_;
    used_ += n;
    return p;
  }

  void reset() {
    cur_ = 0;
    used_ = 0;
  }

 private:
  struct Chunk {
    std::unique_ptr<X[]> data;
    size_t cap;
  };

  void advance(size_t need) {
    if (cur_ < chunks_.size() && used_ > 0) ++cur_;
    while (cur_ < chunks_.size() && chunks_[cur_].cap < need) ++cur_;
    if (cur_ >= chunks_.size()) {
      size_t cap = std::max(default_cap_, need);
      chunks_.push_back(Chunk{std::unique_ptr<X[]>(new X[cap]), cap});
      cur_ = chunks_.size() - 1;
    }
    used_ = 0;
  }

  size_t default_cap_;
  std::vector<Chunk> chunks_;
  size_t cur_ = 0;
  size_t used_ = 0;
};

enum class Op : uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kAffine,
  kExp,
  kLog,
  kSqrt,
  kSoftplus,
  kSigmoid,
  kErf,
  kRelu,
  kClamp,
  kSum,
  kSumRows,
  kSumCols,
  kCumsumExclusive,
  kConcatCols,
  kSliceCols,
  kBroadcastRows,
  kRowNorm,
  kNormalizeRows,
  kRowDot,
  kCrossRows,
  kContractRows,
  kDirJacSqrt,
  kErfRecip,
  kGather,
  kIntervalSum,
  kStopGradient,
  kVmfMeanResultant,
  kTranspose,
  kSliceRows,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kAffine: return "affine";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kErf: return "erf";
    case Op::kRelu: return "relu";
    case Op::kClamp: return "clamp";
    case Op::kSum: return "sum";
    case Op::kSumRows: return "sum_rows";
    case Op::kSumCols: return "sum_cols";
    case Op::kCumsumExclusive: return "cumsum_exclusive";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kBroadcastRows: return "broadcast_rows";
    case Op::kRowNorm: return "row_norm";
    case Op::kNormalizeRows: return "normalize_rows";
    case Op::kRowDot: return "row_dot";
    case Op::kCrossRows: return "cross_rows";
    case Op::kContractRows: return "contract_rows";
    case Op::kDirJacSqrt: return "dirjac_sqrt";
    case Op::kErfRecip: return "erf_recip";
    case Op::kGather: return "trilinear_gather";
    case Op::kIntervalSum: return "interval_sum";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kVmfMeanResultant: return "vmf_mean_resultant";
    case Op::kTranspose: return "transpose";
    case Op::kSliceRows: return "slice_rows";
  }
  return "?";
}

// Reverse-mode tape over dense rank-2 arrays. Values are computed eagerly at
// op creation; forward() replays the recorded graph from the current leaf
// bindings (stop_gradient values stay frozen so replay differentiates the
// same function backward() does).
template <typename T>
class Tape {
 public:
  Tape() : values_(size_t(1) << 16), grads_(size_t(1) << 16), ints_(size_t(1) << 14) {}

  void reset() {
    nodes_.clear();
    values_.reset();
    grads_.reset();
    ints_.reset();
  }

  int size() const { return int(nodes_.size()); }

  // -- node creation ---------------------------------------------------------

  int leaf(const T* data, int rows, int cols, T* grad_accum = nullptr) {
    Node n;
    n.op = Op::kLeaf;
    n.rows = rows;
    n.cols = cols;
    n.val = const_cast<T*>(data);
    n.ext_grad = grad_accum;
    n.rg = grad_accum != nullptr;
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  int constant(const T* data, int rows, int cols) {
    Node n;
    n.op = Op::kConstant;
    n.rows = rows;
    n.cols = cols;
    n.val = values_.alloc(size_t(rows) * cols);
    std::memcpy(n.val, data, sizeof(T) * size_t(rows) * cols);
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  int constant(const Array<T>& a) { return constant(a.data.data(), a.rows, a.cols); }
  int scalar(T v) { return constant(&v, 1, 1); }

  int add(int a, int b) { return binary(Op::kAdd, a, b); }
  int sub(int a, int b) { return binary(Op::kSub, a, b); }
  int mul(int a, int b) { return binary(Op::kMul, a, b); }
  int div(int a, int b) { return binary(Op::kDiv, a, b); }

  int matmul(int a, int b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    if (na.cols != nb.rows)
      fail("matmul", a, b);
    return make(Op::kMatMul, a, b, na.rows, nb.cols);
  }

  int affine(int a, T scale, T shift) {
    int id = make(Op::kAffine, a, -1, nodes_[a].rows, nodes_[a].cols, scale, shift);
    return id;
  }
  int neg(int a) { return affine(a, T(-1), T(0)); }

  int exp_(int a) { return unary(Op::kExp, a); }
  int log_(int a) { return unary(Op::kLog, a); }
  int sqrt_(int a) { return unary(Op::kSqrt, a); }
  int softplus(int a) { return unary(Op::kSoftplus, a); }
  int sigmoid(int a) { return unary(Op::kSigmoid, a); }
  int erf_(int a) { return unary(Op::kErf, a); }
  int relu(int a) { return unary(Op::kRelu, a); }
  int vmf_mean_resultant_(int a) { return unary(Op::kVmfMeanResultant, a); }

  int clamp_(int a, T lo, T hi) {
    return make(Op::kClamp, a, -1, nodes_[a].rows, nodes_[a].cols, lo, hi);
  }

  int sum(int a) { return make(Op::kSum, a, -1, 1, 1); }
  int sum_rows(int a) { return make(Op::kSumRows, a, -1, nodes_[a].rows, 1); }
  int sum_cols(int a) { return make(Op::kSumCols, a, -1, 1, nodes_[a].cols); }

  int cumsum_exclusive(int a) {
    if (nodes_[a].cols != 1) fail("cumsum_exclusive", a);
    return make(Op::kCumsumExclusive, a, -1, nodes_[a].rows, 1);
  }

  int concat_cols(int a, int b) {
    if (nodes_[a].rows != nodes_[b].rows) fail("concat_cols", a, b);
    return make(Op::kConcatCols, a, b, nodes_[a].rows, nodes_[a].cols + nodes_[b].cols);
  }

  int slice_cols(int a, int j0, int width) {
    if (j0 < 0 || j0 + width > nodes_[a].cols) fail("slice_cols", a);
    int id = make(Op::kSliceCols, a, -1, nodes_[a].rows, width);
    nodes_[id].i0 = j0;
    compute(nodes_[id]);
    return id;
  }

  int broadcast_rows(int a, int r) {
    if (nodes_[a].rows != 1) fail("broadcast_rows", a);
    int id = make(Op::kBroadcastRows, a, -1, r, nodes_[a].cols);
    return id;
  }

  int row_norm(int a) { return make(Op::kRowNorm, a, -1, nodes_[a].rows, 1); }
  int normalize_rows(int a) { return unary(Op::kNormalizeRows, a); }

  int row_dot(int a, int b) {
    if (nodes_[a].rows != nodes_[b].rows || nodes_[a].cols != nodes_[b].cols)
      fail("row_dot", a, b);
    return make(Op::kRowDot, a, b, nodes_[a].rows, 1);
  }

  int cross_rows(int a, int b) {
    if (nodes_[a].cols != 3 || nodes_[b].cols != 3 || nodes_[a].rows != nodes_[b].rows)
      fail("cross_rows", a, b);
    return make(Op::kCrossRows, a, b, nodes_[a].rows, 3);
  }

  int contract_rows(int a) {
    if (nodes_[a].cols != 3) fail("contract_rows", a);
    return unary(Op::kContractRows, a);
  }

  int dirjac_sqrt(int a) {
    if (nodes_[a].cols != 3) fail("dirjac_sqrt", a);
    return make(Op::kDirJacSqrt, a, -1, nodes_[a].rows, 1);
  }

  // erf(c / x) with x >= 0, returning 1 at x -> 0.
  int erf_recip(int a, T c) {
    int id = make(Op::kErfRecip, a, -1, nodes_[a].rows, nodes_[a].cols, c, T(0));
    return id;
  }

  // Trilinear interpolation of a level table at contracted positions in
  // [-2,2]^3. A level of resolution nu has nu grid points per axis over the
  // domain; tables with nu^3 > capacity are hashed (Instant-NGP primes),
  // otherwise indexed densely.
  int gather(int table, int pos, int resolution, int capacity, bool dense) {
    const Node& nt = nodes_[table];
    const Node& np = nodes_[pos];
    if (np.cols != 3) fail("trilinear_gather", pos);
    int id = make(Op::kGather, table, pos, np.rows, nt.cols, T(0), T(0), /*defer=*/true);
    Node& n = nodes_[id];
    n.i0 = resolution;
    n.i1 = capacity;
    n.i2 = dense ? 1 : 0;
    n.corners = ints_.alloc(size_t(np.rows) * 8);
    n.locals = values_.alloc(size_t(np.rows) * 3);
    compute(n);
    return id;
  }

  // Per output row i, sums w over the half-open index range ranges[i].
  int interval_sum(int w, const std::vector<std::pair<int, int>>& ranges) {
    if (nodes_[w].cols != 1) fail("interval_sum", w);
    int id = make(Op::kIntervalSum, w, -1, int(ranges.size()), 1, T(0), T(0), /*defer=*/true);
    Node& n = nodes_[id];
    n.corners = ints_.alloc(ranges.size() * 2);
    for (size_t i = 0; i < ranges.size(); ++i) {
      n.corners[2 * i] = ranges[i].first;
      n.corners[2 * i + 1] = ranges[i].second;
    }
    compute(n);
    return id;
  }

  int stop_gradient(int a) {
    int id = make(Op::kStopGradient, a, -1, nodes_[a].rows, nodes_[a].cols);
    nodes_[id].rg = false;
    return id;
  }

  int transpose(int a) { return make(Op::kTranspose, a, -1, nodes_[a].cols, nodes_[a].rows); }

  int slice_rows(int a, int r0, int height) {
    if (r0 < 0 || r0 + height > nodes_[a].rows) fail("slice_rows", a);
    int id = make(Op::kSliceRows, a, -1, height, nodes_[a].cols, T(0), T(0), /*defer=*/true);
    nodes_[id].i0 = r0;
    compute(nodes_[id]);
    return id;
  }

  // -- access -----------------------------------------------------------------

  const T* value(int id) const { return nodes_[id].val; }
  T scalar_value(int id) const { return nodes_[id].val[0]; }
  int rows(int id) const { return nodes_[id].rows; }
  int cols(int id) const { return nodes_[id].cols; }
  bool requires_grad(int id) const { return nodes_[id].rg; }
  const T* grad(int id) const { return nodes_[id].op == Op::kLeaf ? nodes_[id].ext_grad : nodes_[id].grad; }

  Array<T> value_array(int id) const {
    const Node& n = nodes_[id];
    Array<T> out(n.rows, n.cols);
    std::memcpy(out.data.data(), n.val, sizeof(T) * out.size());
    return out;
  }

  // Recomputes every node from the current leaf bindings. Constants and
  // stop_gradient values are left untouched.
  void forward() {
    for (Node& n : nodes_) {
      if (n.op == Op::kLeaf || n.op == Op::kConstant || n.op == Op::kStopGradient) continue;
      compute(n);
    }
  }

  // Reverse sweep from a scalar root; leaf gradients accumulate into their
  // registered external buffers.
  void backward(int root, T seed = T(1)) {
    Node& rn = nodes_[root];
    if (rn.rows != 1 || rn.cols != 1)
      throw ShapeError("backward: root must be scalar, got " + shape_str(rn.rows, rn.cols));
    if (!rn.rg) return;
    grads_.reset();
    for (Node& n : nodes_)
      if (n.op != Op::kLeaf) n.grad = nullptr;
    *grad_of(rn) += seed;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.rg) continue;
      const T* g = (n.op == Op::kLeaf) ? n.ext_grad : n.grad;
      if (!g) continue;
      if (n.op == Op::kLeaf) continue;
      propagate(n, g);
    }
  }

 private:
  struct Node {
    Op op = Op::kConstant;
    int a = -1, b = -1;
    int rows = 0, cols = 0;
    T* val = nullptr;
    T* grad = nullptr;
    T* ext_grad = nullptr;
    bool rg = false;
    T f0 = T(0), f1 = T(0);
    int i0 = 0, i1 = 0, i2 = 0;
    int* corners = nullptr;
    T* locals = nullptr;
  };

  std::vector<Node> nodes_;
  Arena<T> values_;
  Arena<T> grads_;
  Arena<int> ints_;

  [[noreturn]] void fail(const char* op, int a, int b = -1) const {
    std::string msg = std::string("op ") + op + ": incompatible shapes " +
                      shape_str(nodes_[a].rows, nodes_[a].cols);
    if (b >= 0) msg += " vs " + shape_str(nodes_[b].rows, nodes_[b].cols);
    throw ShapeError(msg);
  }

  int unary(Op op, int a) { return make(op, a, -1, nodes_[a].rows, nodes_[a].cols); }

  int binary(Op op, int a, int b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    int r = std::max(na.rows, nb.rows);
    int c = std::max(na.cols, nb.cols);
    auto fits = [&](const Node& n) {
      return (n.rows == r || n.rows == 1) && (n.cols == c || n.cols == 1);
    };
    if (!fits(na) || !fits(nb)) fail(op_name(op), a, b);
    return make(op, a, b, r, c);
  }

  int make(Op op, int a, int b, int rows, int cols, T f0 = T(0), T f1 = T(0),
           bool defer_compute = false) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.rows = rows;
    n.cols = cols;
    n.f0 = f0;
    n.f1 = f1;
    n.val = values_.alloc(size_t(rows) * cols);
    n.rg = (a >= 0 && nodes_[a].rg) || (b >= 0 && nodes_[b].rg);
    nodes_.push_back(n);
    int id = int(nodes_.size()) - 1;
    if (!defer_compute && op != Op::kSliceCols) compute(nodes_[id]);
    return id;
  }

  T* grad_of(Node& n) {
    if (n.op == Op::kLeaf) return n.ext_grad;
    if (!n.grad) {
      size_t sz = size_t(n.rows) * n.cols;
      n.grad = grads_.alloc(sz);
      std::memset(n.grad, 0, sizeof(T) * sz);
    }
    return n.grad;
  }

  // Broadcast-aware element index for binary ops.
  static size_t bidx(const Node& n, int r, int c) {
    return size_t(n.rows == 1 ? 0 : r) * n.cols + (n.cols == 1 ? 0 : c);
  }

  void compute(Node& n) {
    const size_t sz = size_t(n.rows) * n.cols;
    const Node* A = n.a >= 0 ? &nodes_[n.a] : nullptr;
    const Node* B = n.b >= 0 ? &nodes_[n.b] : nullptr;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        // Fast path: congruent shapes.
        if (A->rows == n.rows && A->cols == n.cols && B->rows == n.rows && B->cols == n.cols) {
          const T* a = A->val;
          const T* b = B->val;
          T* o = n.val;
          switch (n.op) {
            case Op::kAdd: for (size_t i = 0; i < sz; ++i) o[i] = a[i] + b[i]; break;
            case Op::kSub: for (size_t i = 0; i < sz; ++i) o[i] = a[i] - b[i]; break;
            case Op::kMul: for (size_t i = 0; i < sz; ++i) o[i] = a[i] * b[i]; break;
            default:       for (size_t i = 0; i < sz; ++i) o[i] = a[i] / b[i]; break;
          }
        } else {
          for (int r = 0; r < n.rows; ++r)
            for (int c = 0; c < n.cols; ++c) {
              T a = A->val[bidx(*A, r, c)];
              T b = B->val[bidx(*B, r, c)];
              T v;
              switch (n.op) {
                case Op::kAdd: v = a + b; break;
                case Op::kSub: v = a - b; break;
                case Op::kMul: v = a * b; break;
                default: v = a / b; break;
              }
              n.val[size_t(r) * n.cols + c] = v;
            }
        }
        break;
      }
      case Op::kMatMul: {
        std::memset(n.val, 0, sizeof(T) * sz);
        const int K = A->cols;
        for (int r = 0; r < n.rows; ++r) {
          const T* arow = A->val + size_t(r) * K;
          T* orow = n.val + size_t(r) * n.cols;
          for (int k = 0; k < K; ++k) {
            T a = arow[k];
            const T* brow = B->val + size_t(k) * n.cols;
            for (int c = 0; c < n.cols; ++c) orow[c] += a * brow[c];
          }
        }
        break;
      }
      case Op::kAffine:
        for (size_t i = 0; i < sz; ++i) n.val[i] = n.f0 * A->val[i] + n.f1;
        break;
      case Op::kExp:
        for (size_t i = 0; i < sz; ++i) n.val[i] = std::exp(A->val[i]);
        break;
      case Op::kLog:
        for (size_t i = 0; i < sz; ++i) n.val[i] = std::log(A->val[i]);
        break;
      case Op::kSqrt:
        for (size_t i = 0; i < sz; ++i) n.val[i] = std::sqrt(A->val[i]);
        break;
      case Op::kSoftplus:
        for (size_t i = 0; i < sz; ++i) {
          T x = A->val[i];
          n.val[i] = x > T(30) ? x : std::log1p(std::exp(x));
        }
        break;
      case Op::kSigmoid:
        for (size_t i = 0; i < sz; ++i) n.val[i] = stable_sigmoid(A->val[i]);
        break;
      case Op::kErf:
        for (size_t i = 0; i < sz; ++i) n.val[i] = std::erf(A->val[i]);
        break;
      case Op::kRelu:
        for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] > T(0) ? A->val[i] : T(0);
        break;
      case Op::kClamp:
        for (size_t i = 0; i < sz; ++i) n.val[i] = clamp(A->val[i], n.f0, n.f1);
        break;
      case Op::kSum: {
        T acc = T(0);
        for (size_t i = 0, m = size_t(A->rows) * A->cols; i < m; ++i) acc += A->val[i];
        n.val[0] = acc;
        break;
      }
      case Op::kSumRows:
        for (int r = 0; r < A->rows; ++r) {
          T acc = T(0);
          const T* arow = A->val + size_t(r) * A->cols;
          for (int c = 0; c < A->cols; ++c) acc += arow[c];
          n.val[r] = acc;
        }
        break;
      case Op::kSumCols:
        std::memset(n.val, 0, sizeof(T) * sz);
        for (int r = 0; r < A->rows; ++r) {
          const T* arow = A->val + size_t(r) * A->cols;
          for (int c = 0; c < A->cols; ++c) n.val[c] += arow[c];
        }
        break;
      case Op::kCumsumExclusive: {
        T acc = T(0);
        for (int r = 0; r < A->rows; ++r) {
          n.val[r] = acc;
          acc += A->val[r];
        }
        break;
      }
      case Op::kConcatCols:
        for (int r = 0; r < n.rows; ++r) {
          std::memcpy(n.val + size_t(r) * n.cols, A->val + size_t(r) * A->cols,
                      sizeof(T) * A->cols);
          std::memcpy(n.val + size_t(r) * n.cols + A->cols, B->val + size_t(r) * B->cols,
                      sizeof(T) * B->cols);
        }
        break;
      case Op::kSliceCols:
        for (int r = 0; r < n.rows; ++r)
          std::memcpy(n.val + size_t(r) * n.cols, A->val + size_t(r) * A->cols + n.i0,
                      sizeof(T) * n.cols);
        break;
      case Op::kBroadcastRows:
        for (int r = 0; r < n.rows; ++r)
          std::memcpy(n.val + size_t(r) * n.cols, A->val, sizeof(T) * n.cols);
        break;
      case Op::kRowNorm:
        for (int r = 0; r < n.rows; ++r) {
          const T* arow = A->val + size_t(r) * A->cols;
          T acc = T(0);
          for (int c = 0; c < A->cols; ++c) acc += arow[c] * arow[c];
          n.val[r] = std::sqrt(acc);
        }
        break;
      case Op::kNormalizeRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* arow = A->val + size_t(r) * A->cols;
          T acc = T(0);
          for (int c = 0; c < A->cols; ++c) acc += arow[c] * arow[c];
          T inv = T(1) / std::max(std::sqrt(acc), T(1e-12));
          T* orow = n.val + size_t(r) * n.cols;
          for (int c = 0; c < A->cols; ++c) orow[c] = arow[c] * inv;
        }
        break;
      case Op::kRowDot:
        for (int r = 0; r < n.rows; ++r) {
          const T* arow = A->val + size_t(r) * A->cols;
          const T* brow = B->val + size_t(r) * B->cols;
          T acc = T(0);
          for (int c = 0; c < A->cols; ++c) acc += arow[c] * brow[c];
          n.val[r] = acc;
        }
        break;
      case Op::kCrossRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          const T* b = B->val + size_t(r) * 3;
          T* o = n.val + size_t(r) * 3;
          o[0] = a[1] * b[2] - a[2] * b[1];
          o[1] = a[2] * b[0] - a[0] * b[2];
          o[2] = a[0] * b[1] - a[1] * b[0];
        }
        break;
      case Op::kContractRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          Vec3<T> c = contract(Vec3<T>(a[0], a[1], a[2]));
          T* o = n.val + size_t(r) * 3;
          o[0] = c.x;
          o[1] = c.y;
          o[2] = c.z;
        }
        break;
      case Op::kDirJacSqrt:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          n.val[r] = directional_jacobian_sqrt(
              std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]));
        }
        break;
      case Op::kErfRecip:
        for (size_t i = 0; i < sz; ++i) {
          T x = A->val[i];
          n.val[i] = x > T(1e-12) ? std::erf(n.f0 / x) : T(1);
        }
        break;
      case Op::kGather: {
        const int res = n.i0;
        const int cap = n.i1;
        const bool dense = n.i2 != 0;
        const int F = n.cols;
        const T cells = T(res - 1);
        for (int r = 0; r < n.rows; ++r) {
          const T* p = B->val + size_t(r) * 3;
          int* crn = n.corners + size_t(r) * 8;
          T* u = n.locals + size_t(r) * 3;
          int base[3];
          for (int k = 0; k < 3; ++k) {
            // contracted [-2,2] -> grid point coordinates [0, res-1]
            T s = clamp((p[k] + T(2)) * T(0.25), T(0), T(1)) * cells;
            int i0 = std::min(int(s), std::max(res - 2, 0));
            base[k] = i0;
            u[k] = res > 1 ? s - T(i0) : T(0);
          }
          for (int c = 0; c < 8; ++c) {
            int ix = std::min(base[0] + ((c >> 2) & 1), res - 1);
            int iy = std::min(base[1] + ((c >> 1) & 1), res - 1);
            int iz = std::min(base[2] + (c & 1), res - 1);
            crn[c] = dense ? (ix * res + iy) * res + iz
                           : int((uint32_t(ix) * 1u ^ uint32_t(iy) * 2654435761u ^
                                  uint32_t(iz) * 805459861u) &
                                 uint32_t(cap - 1));
          }
          T* orow = n.val + size_t(r) * F;
          std::memset(orow, 0, sizeof(T) * F);
          for (int c = 0; c < 8; ++c) {
            T wx = ((c >> 2) & 1) ? u[0] : T(1) - u[0];
            T wy = ((c >> 1) & 1) ? u[1] : T(1) - u[1];
            T wz = (c & 1) ? u[2] : T(1) - u[2];
            T w = wx * wy * wz;
            const T* trow = A->val + size_t(crn[c]) * F;
            for (int f = 0; f < F; ++f) orow[f] += w * trow[f];
          }
        }
        break;
      }
      case Op::kIntervalSum:
        for (int r = 0; r < n.rows; ++r) {
          T acc = T(0);
          for (int j = n.corners[2 * r]; j < n.corners[2 * r + 1]; ++j) acc += A->val[j];
          n.val[r] = acc;
        }
        break;
      case Op::kStopGradient:
        std::memcpy(n.val, A->val, sizeof(T) * sz);
        break;
      case Op::kVmfMeanResultant:
        for (size_t i = 0; i < sz; ++i) n.val[i] = vmf_mean_resultant(A->val[i]);
        break;
      case Op::kTranspose:
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c)
            n.val[size_t(r) * n.cols + c] = A->val[size_t(c) * A->cols + r];
        break;
      case Op::kSliceRows:
        std::memcpy(n.val, A->val + size_t(n.i0) * n.cols, sizeof(T) * sz);
        break;
    }
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
  }

  void propagate(Node& n, const T* g) {
    Node* A = n.a >= 0 ? &nodes_[n.a] : nullptr;
    Node* B = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const size_t sz = size_t(n.rows) * n.cols;
    const bool ga = A && A->rg;
    const bool gb = B && B->rg;
    if (!ga && !gb) return;
    T* da = ga ? grad_of(*A) : nullptr;
    T* db = gb ? grad_of(*B) : nullptr;

    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kStopGradient:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c) {
            size_t oi = size_t(r) * n.cols + c;
            T gv = g[oi];
            switch (n.op) {
              case Op::kAdd:
                if (da) da[bidx(*A, r, c)] += gv;
                if (db) db[bidx(*B, r, c)] += gv;
                break;
              case Op::kSub:
                if (da) da[bidx(*A, r, c)] += gv;
                if (db) db[bidx(*B, r, c)] -= gv;
                break;
              case Op::kMul:
                if (da) da[bidx(*A, r, c)] += gv * B->val[bidx(*B, r, c)];
                if (db) db[bidx(*B, r, c)] += gv * A->val[bidx(*A, r, c)];
                break;
              default: {
                T bv = B->val[bidx(*B, r, c)];
                if (da) da[bidx(*A, r, c)] += gv / bv;
                if (db) db[bidx(*B, r, c)] -= gv * n.val[oi] / bv;
                break;
              }
            }
          }
        break;
      }
      case Op::kMatMul: {
        const int K = A->cols;
        if (da) {
          for (int r = 0; r < n.rows; ++r) {
            const T* grow = g + size_t(r) * n.cols;
            T* darow = da + size_t(r) * K;
            for (int k = 0; k < K; ++k) {
              const T* brow = B->val + size_t(k) * n.cols;
              T acc = T(0);
              for (int c = 0; c < n.cols; ++c) acc += grow[c] * brow[c];
              darow[k] += acc;
            }
          }
        }
        if (db) {
          for (int r = 0; r < n.rows; ++r) {
            const T* arow = A->val + size_t(r) * K;
            const T* grow = g + size_t(r) * n.cols;
            for (int k = 0; k < K; ++k) {
              T a = arow[k];
              T* dbrow = db + size_t(k) * n.cols;
              for (int c = 0; c < n.cols; ++c) dbrow[c] += a * grow[c];
            }
          }
        }
        break;
      }
      case Op::kAffine:
        for (size_t i = 0; i < sz; ++i) da[i] += n.f0 * g[i];
        break;
      case Op::kExp:
        for (size_t i = 0; i < sz; ++i) da[i] += g[i] * n.val[i];
        break;
      case Op::kLog:
        for (size_t i = 0; i < sz; ++i) da[i] += g[i] / A->val[i];
        break;
      case Op::kSqrt:
        for (size_t i = 0; i < sz; ++i)
          da[i] += g[i] / (T(2) * std::max(n.val[i], T(1e-12)));
        break;
      case Op::kSoftplus:
        for (size_t i = 0; i < sz; ++i) da[i] += g[i] * stable_sigmoid(A->val[i]);
        break;
      case Op::kSigmoid:
        for (size_t i = 0; i < sz; ++i) da[i] += g[i] * n.val[i] * (T(1) - n.val[i]);
        break;
      case Op::kErf: {
        const T two_over_sqrt_pi = T(2) / std::sqrt(T(M_PI));
        for (size_t i = 0; i < sz; ++i)
          da[i] += g[i] * two_over_sqrt_pi * std::exp(-A->val[i] * A->val[i]);
        break;
      }
      case Op::kRelu:
        for (size_t i = 0; i < sz; ++i)
          if (A->val[i] > T(0)) da[i] += g[i];
        break;
      case Op::kClamp:
        for (size_t i = 0; i < sz; ++i)
          if (A->val[i] > n.f0 && A->val[i] < n.f1) da[i] += g[i];
        break;
      case Op::kSum: {
        T gv = g[0];
        for (size_t i = 0, m = size_t(A->rows) * A->cols; i < m; ++i) da[i] += gv;
        break;
      }
      case Op::kSumRows:
        for (int r = 0; r < A->rows; ++r) {
          T gv = g[r];
          T* darow = da + size_t(r) * A->cols;
          for (int c = 0; c < A->cols; ++c) darow[c] += gv;
        }
        break;
      case Op::kSumCols:
        for (int r = 0; r < A->rows; ++r) {
          T* darow = da + size_t(r) * A->cols;
          for (int c = 0; c < A->cols; ++c) darow[c] += g[c];
        }
        break;
      case Op::kCumsumExclusive: {
        T run = T(0);
        for (int r = A->rows - 1; r >= 0; --r) {
          da[r] += run;
          run += g[r];
        }
        break;
      }
      case Op::kConcatCols:
        for (int r = 0; r < n.rows; ++r) {
          const T* grow = g + size_t(r) * n.cols;
          if (da)
            for (int c = 0; c < A->cols; ++c) da[size_t(r) * A->cols + c] += grow[c];
          if (db)
            for (int c = 0; c < B->cols; ++c) db[size_t(r) * B->cols + c] += grow[A->cols + c];
        }
        break;
      case Op::kSliceCols:
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c)
            da[size_t(r) * A->cols + n.i0 + c] += g[size_t(r) * n.cols + c];
        break;
      case Op::kBroadcastRows:
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c) da[c] += g[size_t(r) * n.cols + c];
        break;
      case Op::kRowNorm:
        for (int r = 0; r < n.rows; ++r) {
          T inv = g[r] / std::max(n.val[r], T(1e-12));
          const T* arow = A->val + size_t(r) * A->cols;
          T* darow = da + size_t(r) * A->cols;
          for (int c = 0; c < A->cols; ++c) darow[c] += inv * arow[c];
        }
        break;
      case Op::kNormalizeRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* arow = A->val + size_t(r) * A->cols;
          const T* orow = n.val + size_t(r) * n.cols;
          const T* grow = g + size_t(r) * n.cols;
          T* darow = da + size_t(r) * A->cols;
          T nrm = T(0);
          for (int c = 0; c < A->cols; ++c) nrm += arow[c] * arow[c];
          nrm = std::sqrt(nrm);
          if (nrm > T(1e-12)) {
            T ug = T(0);
            for (int c = 0; c < A->cols; ++c) ug += orow[c] * grow[c];
            for (int c = 0; c < A->cols; ++c) darow[c] += (grow[c] - orow[c] * ug) / nrm;
          } else {
            for (int c = 0; c < A->cols; ++c) darow[c] += grow[c] / T(1e-12);
          }
        }
        break;
      case Op::kRowDot:
        for (int r = 0; r < n.rows; ++r) {
          T gv = g[r];
          const T* arow = A->val + size_t(r) * A->cols;
          const T* brow = B->val + size_t(r) * B->cols;
          for (int c = 0; c < A->cols; ++c) {
            if (da) da[size_t(r) * A->cols + c] += gv * brow[c];
            if (db) db[size_t(r) * B->cols + c] += gv * arow[c];
          }
        }
        break;
      case Op::kCrossRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          const T* b = B->val + size_t(r) * 3;
          const T* gr = g + size_t(r) * 3;
          if (da) {
            da[size_t(r) * 3 + 0] += b[1] * gr[2] - b[2] * gr[1];
            da[size_t(r) * 3 + 1] += b[2] * gr[0] - b[0] * gr[2];
            da[size_t(r) * 3 + 2] += b[0] * gr[1] - b[1] * gr[0];
          }
          if (db) {
            db[size_t(r) * 3 + 0] += gr[1] * a[2] - gr[2] * a[1];
            db[size_t(r) * 3 + 1] += gr[2] * a[0] - gr[0] * a[2];
            db[size_t(r) * 3 + 2] += gr[0] * a[1] - gr[1] * a[0];
          }
        }
        break;
      case Op::kContractRows:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          const T* gr = g + size_t(r) * 3;
          T* darow = da + size_t(r) * 3;
          T rr = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
          if (rr <= T(1)) {
            for (int c = 0; c < 3; ++c) darow[c] += gr[c];
          } else {
            // symmetric Jacobian: radial 1/r^2, tangential (2r-1)/r^2
            T tang = (T(2) * rr - T(1)) / (rr * rr);
            T rad = T(1) / (rr * rr);
            T ug = (a[0] * gr[0] + a[1] * gr[1] + a[2] * gr[2]) / rr;
            for (int c = 0; c < 3; ++c)
              darow[c] += tang * gr[c] + (rad - tang) * ug * a[c] / rr;
          }
        }
        break;
      case Op::kDirJacSqrt:
        for (int r = 0; r < n.rows; ++r) {
          const T* a = A->val + size_t(r) * 3;
          T rr = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
          T d = directional_jacobian_sqrt_dr(rr);
          if (d != T(0) && rr > T(0)) {
            T s = g[r] * d / rr;
            T* darow = da + size_t(r) * 3;
            for (int c = 0; c < 3; ++c) darow[c] += s * a[c];
          }
        }
        break;
      case Op::kErfRecip: {
        const T two_over_sqrt_pi = T(2) / std::sqrt(T(M_PI));
        for (size_t i = 0; i < sz; ++i) {
          T x = A->val[i];
          if (x > T(1e-12)) {
            T z = n.f0 / x;
            da[i] -= g[i] * two_over_sqrt_pi * std::exp(-z * z) * n.f0 / (x * x);
          }
        }
        break;
      }
      case Op::kGather: {
        const int F = n.cols;
        const T cells = T(n.i0 - 1);
        for (int r = 0; r < n.rows; ++r) {
          const int* crn = n.corners + size_t(r) * 8;
          const T* u = n.locals + size_t(r) * 3;
          const T* grow = g + size_t(r) * F;
          T dudims[3] = {T(0), T(0), T(0)};
          for (int c = 0; c < 8; ++c) {
            T wd[3];
            for (int k = 0; k < 3; ++k) {
              int bit = (c >> (2 - k)) & 1;
              wd[k] = bit ? u[k] : T(1) - u[k];
            }
            T w = wd[0] * wd[1] * wd[2];
            const T* trow = A->val + size_t(crn[c]) * F;
            if (da) {
              T* darow = da + size_t(crn[c]) * F;
              for (int f = 0; f < F; ++f) darow[f] += w * grow[f];
            }
            if (db) {
              T tg = T(0);
              for (int f = 0; f < F; ++f) tg += trow[f] * grow[f];
              for (int k = 0; k < 3; ++k) {
                int bit = (c >> (2 - k)) & 1;
                T sign = bit ? T(1) : T(-1);
                T others = T(1);
                for (int k2 = 0; k2 < 3; ++k2)
                  if (k2 != k) others *= wd[k2];
                dudims[k] += tg * sign * others;
              }
            }
          }
          if (db) {
            // du/dpos: pos in [-2,2] -> s = (pos+2)/4 * (res-1)
            T* dbrow = db + size_t(r) * 3;
            for (int k = 0; k < 3; ++k) dbrow[k] += dudims[k] * cells * T(0.25);
          }
        }
        break;
      }
      case Op::kIntervalSum:
        for (int r = 0; r < n.rows; ++r) {
          T gv = g[r];
          for (int j = n.corners[2 * r]; j < n.corners[2 * r + 1]; ++j) da[j] += gv;
        }
        break;
      case Op::kVmfMeanResultant:
        for (size_t i = 0; i < sz; ++i) da[i] += g[i] * vmf_mean_resultant_dk(A->val[i]);
        break;
      case Op::kTranspose:
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c)
            da[size_t(c) * A->cols + r] += g[size_t(r) * n.cols + c];
        break;
      case Op::kSliceRows:
        for (size_t i = 0; i < sz; ++i) da[size_t(n.i0) * n.cols + i] += g[i];
        break;
    }
  }
};

}  // namespace nerfcast
