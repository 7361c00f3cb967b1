#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace octseg {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
long long shape_numel(const Shape& s);

/// Identifies the primitive that produced a node. Used by the gradient
/// checker to detect samples near non-differentiable points.
enum class OpKind {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kMatmul,
    kConv2d,
    kRelu,
    kAbs,
    kSigmoid,
    kExp,
    kLog,
    kSqrt,
    kClamp,
    kMinBt,
    kSoftmax,
    kSum,
    kMean,
    kConcat,
    kSlice,
    kPad,
    kReshape,
    kRoundSte,
    kAvgPool2,
    kUpsample2,
    kDetach,
};

const char* op_kind_name(OpKind k);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // allocated on first accumulation
    bool requires_grad = false;
    OpKind kind = OpKind::kLeaf;
    std::uint64_t id = 0;       // monotone recording order
    double aux0 = 0.0;          // op-specific (clamp lo, ...)
    double aux1 = 0.0;          // op-specific (clamp hi, ...)
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad();
};

}  // namespace detail

/// Dense n-dimensional double tensor participating in reverse-mode
/// differentiation. Value semantics: a Tensor is a cheap handle onto an
/// immutable node of the recorded graph.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    long long numel() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    /// Mutable access for leaf initialization (parameters). Mutating a
    /// non-leaf or a tensor already consumed by other ops is undefined.
    std::vector<double>& mutable_data();

    /// Scalar convenience accessor; throws unless numel() == 1.
    double value() const;
    double at(const std::vector<int>& index) const;

    /// Gradient accumulated by backward(); empty until then.
    const std::vector<double>& grad() const;
    std::vector<double>& mutable_grad();
    bool has_grad() const;
    void zero_grad() const;

    /// Reverse pass from a scalar output. Accumulates additively into the
    /// grad of every requires_grad leaf reachable from this node.
    void backward() const;

    /// Row-major CSV dump, one row per first-axis slice.
    void to_csv(std::ostream& os) const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

/// When true (default), every primitive rejects non-finite outputs.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- elementwise with numpy-style broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(mul_scalar(a, -1.0), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---- unary ----
Tensor relu(const Tensor& x);     // rectifier |x|_+, subgradient 0 at 0
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

/// Elementwise min(x, y); at ties the gradient is routed to y. This is the
/// a - relu(a - p) rectification written so the ordered branch returns p
/// bit-exactly.
Tensor min_bt(const Tensor& x, const Tensor& y);

/// Forward: round half away from zero. Backward: identity.
Tensor round_ste(const Tensor& x);

/// Stops gradient flow; value is shared.
Tensor detach(const Tensor& x);

// ---- structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-d only
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad);
Tensor softmax(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor pad(const Tensor& x, const std::vector<std::pair<int, int>>& widths);
Tensor reshape(const Tensor& x, Shape shape);
Tensor avg_pool2(const Tensor& x);   // (C,H,W) -> (C,H/2,W/2)
Tensor upsample2(const Tensor& x);   // (C,H,W) -> (C,2H,2W), nearest

// ---- composites ----
Tensor square(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // flat vectors

}  // namespace octseg
