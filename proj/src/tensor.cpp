#include "octseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace octseg {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_finite_checks = true;

std::shared_ptr<detail::Node> make_node(Shape shape, OpKind kind) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->kind = kind;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    n->value.resize(static_cast<size_t>(shape_numel(n->shape)));
    return n;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

void check_finite(const detail::Node& n, const char* op) {
    if (!g_finite_checks) return;
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(op) + ": non-finite output value");
        }
    }
}

bool any_requires(const std::vector<std::shared_ptr<detail::Node>>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

// Row-major strides; broadcast dims get stride 0.
struct BroadcastPlan {
    Shape out;
    std::vector<long long> sa, sb;  // strides into a and b per out dim
    bool same_shape = false;
};

BroadcastPlan make_broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same_shape = true;
        return plan;
    }
    const int nd = std::max<int>(static_cast<int>(a.size()), static_cast<int>(b.size()));
    plan.out.resize(nd);
    plan.sa.resize(nd);
    plan.sb.resize(nd);
    std::vector<long long> full_sa(a.size()), full_sb(b.size());
    long long acc = 1;
    for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) {
        full_sa[i] = acc;
        acc *= a[i];
    }
    acc = 1;
    for (int i = static_cast<int>(b.size()) - 1; i >= 0; --i) {
        full_sb[i] = acc;
        acc *= b[i];
    }
    for (int i = 0; i < nd; ++i) {
        const int ia = i - (nd - static_cast<int>(a.size()));
        const int ib = i - (nd - static_cast<int>(b.size()));
        const int da = ia >= 0 ? a[ia] : 1;
        const int db = ib >= 0 ? b[ib] : 1;
        if (da != db && da != 1 && db != 1) shape_error(op, a, b);
        plan.out[i] = std::max(da, db);
        plan.sa[i] = (ia >= 0 && da != 1) ? full_sa[ia] : 0;
        plan.sb[i] = (ib >= 0 && db != 1) ? full_sb[ib] : 0;
    }
    return plan;
}

// Visits the broadcast output in row-major order; fn(out_index, a_offset, b_offset).
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
    const int nd = static_cast<int>(plan.out.size());
    const long long total = shape_numel(plan.out);
    std::vector<int> idx(nd, 0);
    long long oa = 0, ob = 0;
    for (long long i = 0; i < total; ++i) {
        fn(i, oa, ob);
        for (int d = nd - 1; d >= 0; --d) {
            ++idx[d];
            oa += plan.sa[d];
            ob += plan.sb[d];
            if (idx[d] < plan.out[d]) break;
            oa -= plan.sa[d] * plan.out[d];
            ob -= plan.sb[d] * plan.out[d];
            idx[d] = 0;
        }
    }
}

using NodePtr = std::shared_ptr<detail::Node>;

Tensor binary_elementwise(const char* name, OpKind kind, const Tensor& ta, const Tensor& tb,
                          double (*fwd)(double, double),
                          void (*bwd)(double a, double b, double y, double g, double& da,
                                      double& db)) {
    NodePtr a = ta.node(), b = tb.node();
    BroadcastPlan plan = make_broadcast_plan(name, a->shape, b->shape);
    auto out = make_node(plan.out, kind);
    if (plan.same_shape) {
        const size_t n = out->value.size();
        for (size_t i = 0; i < n; ++i) out->value[i] = fwd(a->value[i], b->value[i]);
    } else {
        for_each_broadcast(plan, [&](long long i, long long oa, long long ob) {
            out->value[static_cast<size_t>(i)] = fwd(a->value[static_cast<size_t>(oa)],
                                                     b->value[static_cast<size_t>(ob)]);
        });
    }
    check_finite(*out, name);
    out->parents = {a, b};
    out->requires_grad = any_requires(out->parents);
    if (out->requires_grad) {
        out->backward = [a, b, plan, bwd](detail::Node& self) {
            const bool na = a->requires_grad, nb = b->requires_grad;
            if (na) a->ensure_grad();
            if (nb) b->ensure_grad();
            double dummy = 0.0;
            if (plan.same_shape) {
                const size_t n = self.value.size();
                for (size_t i = 0; i < n; ++i) {
                    bwd(a->value[i], b->value[i], self.value[i], self.grad[i],
                        na ? a->grad[i] : dummy, nb ? b->grad[i] : dummy);
                }
            } else {
                for_each_broadcast(plan, [&](long long i, long long oa, long long ob) {
                    const size_t si = static_cast<size_t>(i);
                    bwd(a->value[static_cast<size_t>(oa)], b->value[static_cast<size_t>(ob)],
                        self.value[si], self.grad[si],
                        na ? a->grad[static_cast<size_t>(oa)] : dummy,
                        nb ? b->grad[static_cast<size_t>(ob)] : dummy);
                });
            }
        };
    }
    return Tensor(out);
}

Tensor unary_elementwise(const char* name, OpKind kind, const Tensor& tx,
                         const std::function<double(double)>& fwd,
                         const std::function<double(double x, double y)>& dydx) {
    NodePtr x = tx.node();
    auto out = make_node(x->shape, kind);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = fwd(x->value[i]);
    check_finite(*out, name);
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, dydx](detail::Node& self) {
            x->ensure_grad();
            const size_t m = self.value.size();
            for (size_t i = 0; i < m; ++i) {
                x->grad[i] += self.grad[i] * dydx(x->value[i], self.value[i]);
            }
        };
    }
    return Tensor(out);
}

}  // namespace

namespace detail {

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

}  // namespace detail

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kDiv: return "div";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kConv2d: return "conv2d";
        case OpKind::kRelu: return "relu";
        case OpKind::kAbs: return "abs";
        case OpKind::kSigmoid: return "sigmoid";
        case OpKind::kExp: return "exp";
        case OpKind::kLog: return "log";
        case OpKind::kSqrt: return "sqrt";
        case OpKind::kClamp: return "clamp";
        case OpKind::kMinBt: return "min_bt";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kSum: return "sum";
        case OpKind::kMean: return "mean";
        case OpKind::kConcat: return "concat";
        case OpKind::kSlice: return "slice";
        case OpKind::kPad: return "pad";
        case OpKind::kReshape: return "reshape";
        case OpKind::kRoundSte: return "round_ste";
        case OpKind::kAvgPool2: return "avg_pool2";
        case OpKind::kUpsample2: return "upsample2";
        case OpKind::kDetach: return "detach";
    }
    return "?";
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

// ---- Tensor ----

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<long long>(data.size())) {
        throw std::invalid_argument("from_data: shape " + shape_str(shape) + " wants " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(data.size()));
    }
    auto n = make_node(std::move(shape), OpKind::kLeaf);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = make_node(std::move(shape), OpKind::kLeaf);
    std::fill(n->value.begin(), n->value.end(), v);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({1}, v, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }
long long Tensor::numel() const { return static_cast<long long>(node_->value.size()); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const std::vector<double>& Tensor::data() const { return node_->value; }
std::vector<double>& Tensor::mutable_data() { return node_->value; }

double Tensor::value() const {
    if (numel() != 1) {
        throw std::invalid_argument("value(): tensor of shape " + shape_str(node_->shape) +
                                    " is not a scalar");
    }
    return node_->value[0];
}

double Tensor::at(const std::vector<int>& index) const {
    const Shape& s = node_->shape;
    if (index.size() != s.size()) {
        throw std::invalid_argument("at(): index rank mismatch for shape " + shape_str(s));
    }
    long long off = 0;
    for (size_t d = 0; d < s.size(); ++d) {
        if (index[d] < 0 || index[d] >= s[d]) throw std::out_of_range("at(): index out of range");
        off = off * s[d] + index[d];
    }
    return node_->value[static_cast<size_t>(off)];
}

const std::vector<double>& Tensor::grad() const { return node_->grad; }
std::vector<double>& Tensor::mutable_grad() { return node_->grad; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() const {
    node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw std::invalid_argument("backward(): root must be scalar, got shape " +
                                    shape_str(node_->shape));
    }
    if (!node_->requires_grad) return;
    // Gather the reachable subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    // Recording order is a valid topological order: parents always have
    // smaller ids, so descending id is a valid reverse traversal.
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
    // Interior grads restart at zero each pass; leaves keep accumulating so
    // batches can sum gradients across多 backward calls.
    for (detail::Node* n : order) {
        if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (detail::Node* n : order) {
        if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
}

void Tensor::to_csv(std::ostream& os) const {
    const Shape& s = node_->shape;
    const long long rows = s.empty() ? 1 : s[0];
    const long long cols = rows == 0 ? 0 : static_cast<long long>(node_->value.size()) / rows;
    os.precision(17);
    for (long long r = 0; r < rows; ++r) {
        for (long long c = 0; c < cols; ++c) {
            if (c) os << ",";
            os << node_->value[static_cast<size_t>(r * cols + c)];
        }
        os << "\n";
    }
}

// ---- elementwise binaries ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& da, double& db) {
            da += g;
            db += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", OpKind::kSub, a, b, [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& da, double& db) {
            da += g;
            db -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", OpKind::kMul, a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da += g * y;
            db += g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "div", OpKind::kDiv, a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da += g / y;
            db -= g * x / (y * y);
        });
}

Tensor min_bt(const Tensor& a, const Tensor& b) {
    // y = b - relu(b - a): returns a where a < b, else b; tie gradient to b.
    return binary_elementwise(
        "min_bt", OpKind::kMinBt, a, b,
        [](double x, double y) { return x < y ? x : y; },
        [](double x, double y, double, double g, double& da, double& db) {
            if (x < y) {
                da += g;
            } else {
                db += g;
            }
        });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_elementwise(
        "add_scalar", OpKind::kAdd, a, [s](double x) { return x + s; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_elementwise(
        "mul_scalar", OpKind::kMul, a, [s](double x) { return x * s; },
        [s](double, double) { return s; });
}

// ---- unaries ----

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        "relu", OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
    return unary_elementwise(
        "abs", OpKind::kAbs, x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        "sigmoid", OpKind::kSigmoid, x,
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        "exp", OpKind::kExp, x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        "log", OpKind::kLog, x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary_elementwise(
        "sqrt", OpKind::kSqrt, x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor& tx, double lo, double hi) {
    NodePtr x = tx.node();
    auto out = make_node(x->shape, OpKind::kClamp);
    out->aux0 = lo;
    out->aux1 = hi;
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = std::min(std::max(x->value[i], lo), hi);
    check_finite(*out, "clamp");
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, lo, hi](detail::Node& self) {
            x->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) {
                const double v = x->value[i];
                if (v > lo && v < hi) x->grad[i] += self.grad[i];
            }
        };
    }
    return Tensor(out);
}

Tensor round_ste(const Tensor& tx) {
    NodePtr x = tx.node();
    auto out = make_node(x->shape, OpKind::kRoundSte);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = std::round(x->value[i]);
    check_finite(*out, "round_ste");
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x](detail::Node& self) {
            x->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) x->grad[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

Tensor detach(const Tensor& tx) {
    auto out = make_node(tx.node()->shape, OpKind::kDetach);
    out->value = tx.node()->value;
    return Tensor(out);
}

// ---- structure ----

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    NodePtr a = ta.node(), b = tb.node();
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
        shape_error("matmul", a->shape, b->shape);
    }
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_node({m, n}, OpKind::kMatmul);
    for (int i = 0; i < m; ++i) {
        double* orow = &out->value[static_cast<size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
            const double av = a->value[static_cast<size_t>(i) * k + p];
            const double* brow = &b->value[static_cast<size_t>(p) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    check_finite(*out, "matmul");
    out->parents = {a, b};
    out->requires_grad = any_requires(out->parents);
    if (out->requires_grad) {
        out->backward = [a, b, m, k, n](detail::Node& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int i = 0; i < m; ++i) {
                    const double* grow = &self.grad[static_cast<size_t>(i) * n];
                    for (int p = 0; p < k; ++p) {
                        const double* brow = &b->value[static_cast<size_t>(p) * n];
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        a->grad[static_cast<size_t>(i) * k + p] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int p = 0; p < k; ++p) {
                    double* brow = &b->grad[static_cast<size_t>(p) * n];
                    for (int i = 0; i < m; ++i) {
                        const double av = a->value[static_cast<size_t>(i) * k + p];
                        const double* grow = &self.grad[static_cast<size_t>(i) * n];
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor conv2d(const Tensor& tx, const Tensor& tw, const Tensor& tbias, int pad) {
    NodePtr x = tx.node(), w = tw.node();
    if (x->shape.size() != 3 || w->shape.size() != 4 || w->shape[1] != x->shape[0]) {
        shape_error("conv2d", x->shape, w->shape);
    }
    const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int O = w->shape[0], KH = w->shape[2], KW = w->shape[3];
    const int OH = H + 2 * pad - KH + 1, OW = W + 2 * pad - KW + 1;
    if (OH <= 0 || OW <= 0) shape_error("conv2d", x->shape, w->shape);
    NodePtr bias = tbias.defined() ? tbias.node() : nullptr;
    if (bias && (bias->shape.size() != 1 || bias->shape[0] != O)) {
        shape_error("conv2d bias", bias->shape, w->shape);
    }
    auto out = make_node({O, OH, OW}, OpKind::kConv2d);

    for (int o = 0; o < O; ++o) {
        double* oplane = &out->value[static_cast<size_t>(o) * OH * OW];
        if (bias) {
            const double bv = bias->value[o];
            for (int i = 0; i < OH * OW; ++i) oplane[i] = bv;
        }
        for (int c = 0; c < C; ++c) {
            const double* xplane = &x->value[static_cast<size_t>(c) * H * W];
            const double* wk = &w->value[(static_cast<size_t>(o) * C + c) * KH * KW];
            for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                    const double wv = wk[kh * KW + kw];
                    for (int oh = 0; oh < OH; ++oh) {
                        const int ih = oh - pad + kh;
                        if (ih < 0 || ih >= H) continue;
                        const double* xrow = &xplane[static_cast<size_t>(ih) * W];
                        double* orow = &oplane[static_cast<size_t>(oh) * OW];
                        const int lo = std::max(0, pad - kw);
                        const int hi = std::min(OW, W + pad - kw);
                        for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * xrow[ow - pad + kw];
                    }
                }
            }
        }
    }
    check_finite(*out, "conv2d");
    out->parents = bias ? std::vector<NodePtr>{x, w, bias} : std::vector<NodePtr>{x, w};
    out->requires_grad = any_requires(out->parents);
    if (out->requires_grad) {
        out->backward = [x, w, bias, pad, C, H, W, O, KH, KW, OH, OW](detail::Node& self) {
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (bias && bias->requires_grad) bias->ensure_grad();
            for (int o = 0; o < O; ++o) {
                const double* gplane = &self.grad[static_cast<size_t>(o) * OH * OW];
                if (bias && bias->requires_grad) {
                    double acc = 0.0;
                    for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                    bias->grad[o] += acc;
                }
                for (int c = 0; c < C; ++c) {
                    const double* xplane = &x->value[static_cast<size_t>(c) * H * W];
                    const size_t wbase = (static_cast<size_t>(o) * C + c) * KH * KW;
                    for (int kh = 0; kh < KH; ++kh) {
                        for (int kw = 0; kw < KW; ++kw) {
                            const double wv = w->value[wbase + kh * KW + kw];
                            double wacc = 0.0;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih = oh - pad + kh;
                                if (ih < 0 || ih >= H) continue;
                                const double* grow = &gplane[static_cast<size_t>(oh) * OW];
                                const double* xrow = &xplane[static_cast<size_t>(ih) * W];
                                double* dxrow = x->requires_grad
                                                    ? &x->grad[(static_cast<size_t>(c) * H + ih) * W]
                                                    : nullptr;
                                const int lo = std::max(0, pad - kw);
                                const int hi = std::min(OW, W + pad - kw);
                                if (w->requires_grad) {
                                    for (int ow = lo; ow < hi; ++ow) {
                                        wacc += grow[ow] * xrow[ow - pad + kw];
                                    }
                                }
                                if (dxrow) {
                                    for (int ow = lo; ow < hi; ++ow) {
                                        dxrow[ow - pad + kw] += wv * grow[ow];
                                    }
                                }
                            }
                            if (w->requires_grad) w->grad[wbase + kh * KW + kw] += wacc;
                        }
                    }
                }
            }
        };
    }
    return Tensor(out);
}

namespace {

// Collapses a shape around `axis` into (outer, n, inner).
void axis_split(const Shape& s, int axis, long long& outer, long long& n, long long& inner) {
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(s));
    }
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

Tensor softmax(const Tensor& tx, int axis) {
    NodePtr x = tx.node();
    long long outer, n, inner;
    axis_split(x->shape, axis, outer, n, inner);
    auto out = make_node(x->shape, OpKind::kSoftmax);
    for (long long a = 0; a < outer; ++a) {
        for (long long b = 0; b < inner; ++b) {
            const size_t base = static_cast<size_t>(a * n * inner + b);
            double mx = -1e300;
            for (long long i = 0; i < n; ++i) mx = std::max(mx, x->value[base + i * inner]);
            double denom = 0.0;
            for (long long i = 0; i < n; ++i) {
                const double e = std::exp(x->value[base + i * inner] - mx);
                out->value[base + i * inner] = e;
                denom += e;
            }
            for (long long i = 0; i < n; ++i) out->value[base + i * inner] /= denom;
        }
    }
    check_finite(*out, "softmax");
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, outer, n, inner](detail::Node& self) {
            x->ensure_grad();
            for (long long a = 0; a < outer; ++a) {
                for (long long b = 0; b < inner; ++b) {
                    const size_t base = static_cast<size_t>(a * n * inner + b);
                    double dot = 0.0;
                    for (long long i = 0; i < n; ++i) {
                        dot += self.grad[base + i * inner] * self.value[base + i * inner];
                    }
                    for (long long i = 0; i < n; ++i) {
                        const size_t k = base + i * inner;
                        x->grad[k] += (self.grad[k] - dot) * self.value[k];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor sum(const Tensor& tx) {
    NodePtr x = tx.node();
    auto out = make_node({1}, OpKind::kSum);
    double acc = 0.0;
    for (double v : x->value) acc += v;
    out->value[0] = acc;
    check_finite(*out, "sum");
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x](detail::Node& self) {
            x->ensure_grad();
            const double g = self.grad[0];
            for (double& d : x->grad) d += g;
        };
    }
    return Tensor(out);
}

Tensor sum(const Tensor& tx, int axis, bool keepdim) {
    NodePtr x = tx.node();
    long long outer, n, inner;
    axis_split(x->shape, axis, outer, n, inner);
    Shape oshape = x->shape;
    if (keepdim) {
        oshape[axis] = 1;
    } else {
        oshape.erase(oshape.begin() + axis);
        if (oshape.empty()) oshape = {1};
    }
    auto out = make_node(oshape, OpKind::kSum);
    for (long long a = 0; a < outer; ++a) {
        for (long long b = 0; b < inner; ++b) {
            double acc = 0.0;
            const size_t base = static_cast<size_t>(a * n * inner + b);
            for (long long i = 0; i < n; ++i) acc += x->value[base + i * inner];
            out->value[static_cast<size_t>(a * inner + b)] = acc;
        }
    }
    check_finite(*out, "sum");
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, outer, n, inner](detail::Node& self) {
            x->ensure_grad();
            for (long long a = 0; a < outer; ++a) {
                for (long long b = 0; b < inner; ++b) {
                    const double g = self.grad[static_cast<size_t>(a * inner + b)];
                    const size_t base = static_cast<size_t>(a * n * inner + b);
                    for (long long i = 0; i < n; ++i) x->grad[base + i * inner] += g;
                }
            }
        };
    }
    return Tensor(out);
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const double n = static_cast<double>(x.shape()[axis]);
    return mul_scalar(sum(x, axis, keepdim), 1.0 / n);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const Shape& s0 = xs[0].shape();
    Shape oshape = s0;
    long long total_axis = 0;
    for (const Tensor& t : xs) {
        const Shape& s = t.shape();
        if (s.size() != s0.size()) shape_error("concat", s0, s);
        for (size_t d = 0; d < s.size(); ++d) {
            if (static_cast<int>(d) != axis && s[d] != s0[d]) shape_error("concat", s0, s);
        }
        total_axis += s[axis];
    }
    oshape[axis] = static_cast<int>(total_axis);
    auto out = make_node(oshape, OpKind::kConcat);
    long long outer, n, inner;
    axis_split(oshape, axis, outer, n, inner);
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    long long off = 0;
    std::vector<long long> offsets;
    for (const Tensor& t : xs) {
        parents.push_back(t.node());
        offsets.push_back(off);
        const long long ni = t.shape()[axis];
        for (long long a = 0; a < outer; ++a) {
            const double* src = &t.node()->value[static_cast<size_t>(a * ni * inner)];
            double* dst = &out->value[static_cast<size_t>((a * n + off) * inner)];
            std::memcpy(dst, src, static_cast<size_t>(ni * inner) * sizeof(double));
        }
        off += ni;
    }
    out->parents = parents;
    out->requires_grad = any_requires(parents);
    if (out->requires_grad) {
        out->backward = [parents, offsets, outer, n, inner, axis](detail::Node& self) {
            for (size_t pi = 0; pi < parents.size(); ++pi) {
                const NodePtr& p = parents[pi];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                const long long ni = p->shape[axis];
                for (long long a = 0; a < outer; ++a) {
                    const double* src =
                        &self.grad[static_cast<size_t>((a * n + offsets[pi]) * inner)];
                    double* dst = &p->grad[static_cast<size_t>(a * ni * inner)];
                    for (long long i = 0; i < ni * inner; ++i) dst[i] += src[i];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor slice(const Tensor& tx, int axis, int start, int len) {
    NodePtr x = tx.node();
    long long outer, n, inner;
    axis_split(x->shape, axis, outer, n, inner);
    if (start < 0 || len <= 0 || start + len > n) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of bounds for shape " +
                                    shape_str(x->shape));
    }
    Shape oshape = x->shape;
    oshape[axis] = len;
    auto out = make_node(oshape, OpKind::kSlice);
    for (long long a = 0; a < outer; ++a) {
        const double* src = &x->value[static_cast<size_t>((a * n + start) * inner)];
        double* dst = &out->value[static_cast<size_t>(a * len * inner)];
        std::memcpy(dst, src, static_cast<size_t>(len) * inner * sizeof(double));
    }
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, outer, n, inner, start, len](detail::Node& self) {
            x->ensure_grad();
            for (long long a = 0; a < outer; ++a) {
                const double* src = &self.grad[static_cast<size_t>(a * len * inner)];
                double* dst = &x->grad[static_cast<size_t>((a * n + start) * inner)];
                for (long long i = 0; i < static_cast<long long>(len) * inner; ++i) {
                    dst[i] += src[i];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor pad(const Tensor& tx, const std::vector<std::pair<int, int>>& widths) {
    NodePtr x = tx.node();
    if (widths.size() != x->shape.size()) {
        throw std::invalid_argument("pad: got " + std::to_string(widths.size()) +
                                    " width pairs for shape " + shape_str(x->shape));
    }
    Shape oshape = x->shape;
    for (size_t d = 0; d < widths.size(); ++d) {
        if (widths[d].first < 0 || widths[d].second < 0) {
            throw std::invalid_argument("pad: negative width");
        }
        oshape[d] += widths[d].first + widths[d].second;
    }
    auto out = make_node(oshape, OpKind::kPad);
    const int nd = static_cast<int>(oshape.size());
    std::vector<long long> xstride(nd, 1), ostride(nd, 1);
    for (int d = nd - 2; d >= 0; --d) {
        xstride[d] = xstride[d + 1] * x->shape[d + 1];
        ostride[d] = ostride[d + 1] * oshape[d + 1];
    }
    const long long total = shape_numel(x->shape);
    std::vector<int> idx(nd, 0);
    for (long long i = 0; i < total; ++i) {
        long long oo = 0;
        for (int d = 0; d < nd; ++d) oo += (idx[d] + widths[d].first) * ostride[d];
        out->value[static_cast<size_t>(oo)] = x->value[static_cast<size_t>(i)];
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[d] < x->shape[d]) break;
            idx[d] = 0;
        }
    }
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, widths, ostride, nd, total](detail::Node& self) {
            x->ensure_grad();
            std::vector<int> idx2(nd, 0);
            for (long long i = 0; i < total; ++i) {
                long long oo = 0;
                for (int d = 0; d < nd; ++d) oo += (idx2[d] + widths[d].first) * ostride[d];
                x->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(oo)];
                for (int d = nd - 1; d >= 0; --d) {
                    if (++idx2[d] < x->shape[d]) break;
                    idx2[d] = 0;
                }
            }
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& tx, Shape shape) {
    NodePtr x = tx.node();
    if (shape_numel(shape) != static_cast<long long>(x->value.size())) {
        shape_error("reshape", x->shape, shape);
    }
    auto out = make_node(std::move(shape), OpKind::kReshape);
    out->value = x->value;
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x](detail::Node& self) {
            x->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

Tensor avg_pool2(const Tensor& tx) {
    NodePtr x = tx.node();
    if (x->shape.size() != 3 || x->shape[1] % 2 != 0 || x->shape[2] % 2 != 0) {
        throw std::invalid_argument("avg_pool2: needs (C,even,even), got " + shape_str(x->shape));
    }
    const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int OH = H / 2, OW = W / 2;
    auto out = make_node({C, OH, OW}, OpKind::kAvgPool2);
    for (int c = 0; c < C; ++c) {
        for (int oh = 0; oh < OH; ++oh) {
            const double* r0 = &x->value[(static_cast<size_t>(c) * H + 2 * oh) * W];
            const double* r1 = r0 + W;
            double* orow = &out->value[(static_cast<size_t>(c) * OH + oh) * OW];
            for (int ow = 0; ow < OW; ++ow) {
                orow[ow] = 0.25 * (r0[2 * ow] + r0[2 * ow + 1] + r1[2 * ow] + r1[2 * ow + 1]);
            }
        }
    }
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, C, H, W, OH, OW](detail::Node& self) {
            x->ensure_grad();
            for (int c = 0; c < C; ++c) {
                for (int oh = 0; oh < OH; ++oh) {
                    double* r0 = &x->grad[(static_cast<size_t>(c) * H + 2 * oh) * W];
                    double* r1 = r0 + W;
                    const double* grow = &self.grad[(static_cast<size_t>(c) * OH + oh) * OW];
                    for (int ow = 0; ow < OW; ++ow) {
                        const double g = 0.25 * grow[ow];
                        r0[2 * ow] += g;
                        r0[2 * ow + 1] += g;
                        r1[2 * ow] += g;
                        r1[2 * ow + 1] += g;
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor upsample2(const Tensor& tx) {
    NodePtr x = tx.node();
    if (x->shape.size() != 3) {
        throw std::invalid_argument("upsample2: needs (C,H,W), got " + shape_str(x->shape));
    }
    const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
    auto out = make_node({C, 2 * H, 2 * W}, OpKind::kUpsample2);
    for (int c = 0; c < C; ++c) {
        for (int h = 0; h < H; ++h) {
            const double* xrow = &x->value[(static_cast<size_t>(c) * H + h) * W];
            double* o0 = &out->value[(static_cast<size_t>(c) * 2 * H + 2 * h) * 2 * W];
            double* o1 = o0 + 2 * W;
            for (int wcol = 0; wcol < W; ++wcol) {
                const double v = xrow[wcol];
                o0[2 * wcol] = v;
                o0[2 * wcol + 1] = v;
                o1[2 * wcol] = v;
                o1[2 * wcol + 1] = v;
            }
        }
    }
    out->parents = {x};
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) {
        out->backward = [x, C, H, W](detail::Node& self) {
            x->ensure_grad();
            for (int c = 0; c < C; ++c) {
                for (int h = 0; h < H; ++h) {
                    double* xrow = &x->grad[(static_cast<size_t>(c) * H + h) * W];
                    const double* g0 = &self.grad[(static_cast<size_t>(c) * 2 * H + 2 * h) * 2 * W];
                    const double* g1 = g0 + 2 * W;
                    for (int wcol = 0; wcol < W; ++wcol) {
                        xrow[wcol] += g0[2 * wcol] + g0[2 * wcol + 1] + g1[2 * wcol] +
                                      g1[2 * wcol + 1];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// ---- composites ----

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
    return mean(square(sub(a, b)));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) shape_error("cosine_similarity", a.shape(), b.shape());
    const Shape flat{static_cast<int>(a.numel())};
    Tensor af = reshape(a, flat), bf = reshape(b, flat);
    const double na = std::sqrt(
        std::inner_product(af.data().begin(), af.data().end(), af.data().begin(), 0.0));
    const double nb = std::sqrt(
        std::inner_product(bf.data().begin(), bf.data().end(), bf.data().begin(), 0.0));
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("cosine_similarity: zero-norm vector");
    }
    Tensor dot = sum(mul(af, bf));
    Tensor denom = mul(sqrt(sum(square(af))), sqrt(sum(square(bf))));
    return div(dot, denom);
}

}  // namespace octseg
