#include "lasp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace lasp {

namespace {

std::atomic<std::uint64_t> next_id{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    if (numel_of(shape) != data.size())
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = next_id.fetch_add(1);
    return n;
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> bw) {
    auto n = new_node(std::move(shape), std::move(data));
    bool rg = false;
    for (auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.ptr());
        n->backward_fn = std::move(bw);
    }
    return Tensor(n);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected rank 2, got " + shape_str(a.shape()));
}

// out[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* br = b + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

// out[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gr = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* br = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
            out[i * k + p] += s;
        }
    }
}

// out[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gr = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* o = out + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
        }
    }
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void Node::accumulate(std::size_t i, double g) { grad_buffer()[i] += g; }

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = numel_of(shape);
    auto node = new_node(std::move(shape), std::vector<double>(n, v));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    auto node = new_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

std::size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
std::size_t Tensor::rows() const { return cols() == 0 ? 0 : numel() / cols(); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const { return from(shape(), values(), false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), values(), requires_grad); }

void Tensor::backward() const {
    if (numel() != 1) throw ContractError("backward() needs a scalar root, got " + shape_str(shape()));
    Tape::record(*this).replay();
}

Tape Tape::record(const Tensor& root) {
    Tape t;
    t.root_ = root.ptr();
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.node()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n).second) continue;
        t.ops_.push_back(n);
        for (auto& p : n->parents) stack.push_back(p.get());
    }
    // creation order is a topological order; replay newest first
    std::sort(t.ops_.begin(), t.ops_.end(), [](Node* a, Node* b) { return a->id > b->id; });
    return t;
}

void Tape::replay() {
    if (!root_ || !root_->requires_grad) return;
    // intermediate adjoints restart from zero; leaves accumulate
    for (Node* n : ops_)
        if (!n->parents.empty()) n->grad.clear();
    root_->grad_buffer()[0] += 1.0;
    for (Node* n : ops_)
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto an = a.ptr(), bn = b.ptr();
    return make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& o) {
        if (an->requires_grad) gemm_nt(o.grad.data(), bn->data.data(), an->grad_buffer().data(), m, n, k);
        if (bn->requires_grad) gemm_tn(an->data.data(), o.grad.data(), bn->grad_buffer().data(), m, k, n);
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    auto an = a.ptr();
    return make_result({c, r}, std::move(out), {a}, [an, r, c](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    auto an = a.ptr(), bn = b.ptr();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& o) {
        for (auto* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    auto an = a.ptr(), bn = b.ptr();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& o) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    auto an = a.ptr(), bn = b.ptr();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& o) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (auto& v : out) v *= s;
    auto an = a.ptr();
    return make_result(a.shape(), std::move(out), {a}, [an, s](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    const std::size_t c = a.cols();
    if (row.numel() != c)
        throw DimensionError("add_row: " + shape_str(a.shape()) + " and " + shape_str(row.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += row.values()[i % c];
    auto an = a.ptr(), rn = row.ptr();
    return make_result(a.shape(), std::move(out), {a, row}, [an, rn, c](Node& o) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (rn->requires_grad) {
            auto& g = rn->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % c] += o.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto an = a.ptr();
    return make_result({1}, {s}, {a}, [an](Node& o) {
        auto& g = an->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.values()[i * c + j];
    auto an = a.ptr();
    return make_result({c}, std::move(out), {a}, [an, r, c](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j];
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) v = std::exp(v);
    auto an = a.ptr();
    return make_result(a.shape(), out, {a}, [an, out](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * out[i];
    });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
        v = std::log(v);
    }
    auto an = a.ptr();
    return make_result(a.shape(), std::move(out), {a}, [an](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / an->data[i];
    });
}

Tensor abs(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) v = std::fabs(v);
    auto an = a.ptr();
    return make_result(a.shape(), std::move(out), {a}, [an](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = an->data[i];
            g[i] += o.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) {
        if (!(v >= 0.0)) throw NumericError("sqrt of a negative or non-finite value");
        v = std::sqrt(v);
    }
    auto an = a.ptr();
    return make_result(a.shape(), out, {a}, [an, out](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out[i] > 0.0 ? o.grad[i] * 0.5 / out[i] : 0.0;
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& x : out) x = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    auto an = a.ptr();
    return make_result(a.shape(), std::move(out), {a}, [an](Node& o) {
        auto& g = an->grad_buffer();
        const double k = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = an->data[i];
            const double d = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * k * std::exp(-0.5 * x * x);
            g[i] += o.grad[i] * d;
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    auto an = a.ptr();
    return make_result(std::move(shape), a.values(), {a}, [an](Node& o) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor log_softmax(const Tensor& x, int axis) {
    if (axis == 0 && x.rank() == 2) return transpose(log_softmax(transpose(x), -1));
    if (axis != -1 && axis != static_cast<int>(x.rank()) - 1)
        throw DimensionError("log_softmax: unsupported axis " + std::to_string(axis));
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw DimensionError("log_softmax over empty axis");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double m = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) {
            if (!std::isfinite(xi[j])) throw NumericError("log_softmax: non-finite input");
            m = std::max(m, xi[j]);
        }
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
    }
    auto xn = x.ptr();
    auto res = make_result(x.shape(), out, {x}, nullptr);
    if (res.requires_grad()) {
        res.node()->backward_fn = [xn, out, r, c](Node& o) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += o.grad[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += o.grad[i * c + j] - std::exp(out[i * c + j]) * s;
            }
        };
    }
    return res;
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis == 0 && x.rank() == 2) return transpose(softmax(transpose(x), -1));
    if (axis != -1 && axis != static_cast<int>(x.rank()) - 1)
        throw DimensionError("softmax: unsupported axis " + std::to_string(axis));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double m = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) {
            if (!std::isfinite(xi[j])) throw NumericError("softmax: non-finite input");
            m = std::max(m, xi[j]);
        }
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(xi[j] - m));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    auto xn = x.ptr();
    auto res = make_result(x.shape(), out, {x}, nullptr);
    if (res.requires_grad()) {
        res.node()->backward_fn = [xn, out, r, c](Node& o) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += o.grad[i * c + j] * out[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += out[i * c + j] * (o.grad[i * c + j] - s);
            }
        };
    }
    return res;
}

Tensor nll(const Tensor& logp, const std::vector<std::size_t>& labels) {
    const std::size_t r = logp.rows(), c = logp.cols();
    if (labels.size() != r)
        throw DimensionError("nll: " + std::to_string(labels.size()) + " labels for " + std::to_string(r) + " rows");
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (labels[i] >= c) throw std::invalid_argument("nll: label " + std::to_string(labels[i]) + " out of range");
        s -= logp.values()[i * c + labels[i]];
    }
    auto ln = logp.ptr();
    return make_result({1}, {s / static_cast<double>(r)}, {logp}, [ln, labels, r, c](Node& o) {
        auto& g = ln->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) g[i * c + labels[i]] -= o.grad[0] / static_cast<double>(r);
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    return nll(log_softmax(logits), labels);
}

Tensor normalize_rows(const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.values());
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] * out[i * c + j];
        const double n = std::sqrt(s);
        if (!(n >= 1e-12)) throw DegenerateInputError("normalize: vector norm below 1e-12");
        norms[i] = n;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= n;
    }
    auto xn = x.ptr();
    auto res = make_result(x.shape(), out, {x}, nullptr);
    if (res.requires_grad()) {
        res.node()->backward_fn = [xn, out, norms, r, c](Node& o) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                double d = 0.0;
                for (std::size_t j = 0; j < c; ++j) d += out[i * c + j] * o.grad[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += (o.grad[i * c + j] - out[i * c + j] * d) / norms[i];
            }
        };
    }
    return res;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    require_same(a, b, "cosine_similarity");
    auto an = reshape(a, {1, a.numel()});
    auto bn = reshape(b, {1, b.numel()});
    return sum(mul(normalize_rows(an), normalize_rows(bn)));
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw DimensionError("cosine_matrix: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    auto a2 = a.rank() == 2 ? a : reshape(a, {a.rows(), a.cols()});
    auto b2 = b.rank() == 2 ? b : reshape(b, {b.rows(), b.cols()});
    return matmul(normalize_rows(a2), transpose(normalize_rows(b2)));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.numel() != c || bias.numel() != c)
        throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                             " and bias " + shape_str(bias.shape()));
    std::vector<double> xhat(x.numel()), out(x.numel()), inv(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x.values().data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(c);
        inv[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xi[j] - mu) * inv[i];
            out[i * c + j] = gain.values()[j] * xhat[i * c + j] + bias.values()[j];
        }
    }
    auto xn = x.ptr(), gn = gain.ptr(), bn = bias.ptr();
    auto res = make_result(x.shape(), std::move(out), {x, gain, bias}, nullptr);
    if (res.requires_grad()) {
        res.node()->backward_fn = [xn, gn, bn, xhat, inv, r, c](Node& o) {
            if (gn->requires_grad) {
                auto& g = gn->grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j] * xhat[i * c + j];
            }
            if (bn->requires_grad) {
                auto& g = bn->grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
            }
            if (xn->requires_grad) {
                auto& g = xn->grad_buffer();
                std::vector<double> dxh(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        dxh[j] = o.grad[i * c + j] * gn->data[j];
                        m1 += dxh[j];
                        m2 += dxh[j] * xhat[i * c + j];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j)
                        g[i * c + j] += inv[i] * (dxh[j] - m1 - xhat[i * c + j] * m2);
                }
            }
        };
    }
    return res;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::vector<double> out;
    std::size_t r = 0;
    for (auto& p : parts) {
        if (p.cols() != c)
            throw DimensionError("concat_rows: " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()));
        out.insert(out.end(), p.values().begin(), p.values().end());
        r += p.rows();
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (auto& p : parts) nodes.push_back(p.ptr());
    return make_result({r, c}, std::move(out), parts, [nodes](Node& o) {
        std::size_t off = 0;
        for (auto& n : nodes) {
            if (n->requires_grad) {
                auto& g = n->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
            }
            off += n->data.size();
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t c = x.cols();
    if (begin > end || end > x.rows())
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(x.shape()));
    std::vector<double> out(x.values().begin() + begin * c, x.values().begin() + end * c);
    auto xn = x.ptr();
    return make_result({end - begin, c}, std::move(out), {x}, [xn, begin, c](Node& o) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * c + i] += o.grad[i];
    });
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    const std::size_t c = x.cols();
    std::vector<double> out;
    out.reserve(idx.size() * c);
    for (auto i : idx) {
        if (i >= x.rows()) throw DimensionError("select_rows: index " + std::to_string(i) + " of " + shape_str(x.shape()));
        out.insert(out.end(), x.values().begin() + i * c, x.values().begin() + (i + 1) * c);
    }
    auto xn = x.ptr();
    return make_result({idx.size(), c}, std::move(out), {x}, [xn, idx, c](Node& o) {
        auto& g = xn->grad_buffer();
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) g[idx[k] * c + j] += o.grad[k * c + j];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t r = x.rows(), c = x.cols();
    if (begin > end || end > c)
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(x.shape()));
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.values()[i * c + begin + j];
    auto xn = x.ptr();
    return make_result({r, w}, std::move(out), {x}, [xn, r, c, w, begin](Node& o) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += o.grad[i * w + j];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (auto& p : parts) {
        if (p.rows() != r)
            throw DimensionError("concat_cols: " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()));
        c += p.cols();
    }
    std::vector<double> out(r * c);
    std::size_t off = 0;
    for (auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * c + off + j] = p.values()[i * pc + j];
        off += pc;
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (auto& p : parts) nodes.push_back(p.ptr());
    return make_result({r, c}, std::move(out), parts, [nodes, r, c](Node& o) {
        std::size_t off = 0;
        for (auto& n : nodes) {
            const std::size_t pc = n->shape.back();
            if (n->requires_grad) {
                auto& g = n->grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += o.grad[i * c + off + j];
            }
            off += pc;
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t nseq, std::size_t len,
                 std::size_t heads, const std::vector<double>& slopes) {
    require_same(q, k, "attention");
    require_same(q, v, "attention");
    require_rank2(q, "attention");
    const std::size_t d = q.dim(1);
    if (q.dim(0) != nseq * len || heads == 0 || d % heads != 0)
        throw DimensionError("attention: " + shape_str(q.shape()) + " with " + std::to_string(nseq) + " sequences of " +
                             std::to_string(len) + " and " + std::to_string(heads) + " heads");
    if (!slopes.empty() && slopes.size() != heads) throw DimensionError("attention: one slope per head required");
    const std::size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* Q = q.values().data();
    const double* K = k.values().data();
    const double* Vv = v.values().data();
    // weights[s][h][i][j]
    std::vector<double> w(nseq * heads * len * len);
    std::vector<double> out(q.numel(), 0.0);
    for (std::size_t s = 0; s < nseq; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
            const double slope = slopes.empty() ? 0.0 : slopes[h];
            double* W = w.data() + (s * heads + h) * len * len;
            for (std::size_t i = 0; i < len; ++i) {
                const double* qi = Q + (s * len + i) * d + h * dh;
                double m = -INFINITY;
                for (std::size_t j = 0; j < len; ++j) {
                    const double* kj = K + (s * len + j) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
                    const double dist = i > j ? double(i - j) : double(j - i);
                    W[i * len + j] = dot * sc - slope * dist;
                    m = std::max(m, W[i * len + j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < len; ++j) z += (W[i * len + j] = std::exp(W[i * len + j] - m));
                double* oi = out.data() + (s * len + i) * d + h * dh;
                for (std::size_t j = 0; j < len; ++j) {
                    W[i * len + j] /= z;
                    const double* vj = Vv + (s * len + j) * d + h * dh;
                    for (std::size_t t = 0; t < dh; ++t) oi[t] += W[i * len + j] * vj[t];
                }
            }
        }
    }
    auto qn = q.ptr(), kn = k.ptr(), vn = v.ptr();
    auto res = make_result(q.shape(), std::move(out), {q, k, v}, nullptr);
    if (!res.requires_grad()) return res;
    res.node()->backward_fn = [qn, kn, vn, w = std::move(w), nseq, len, heads, d, dh, sc](Node& o) {
        std::vector<double> dq(qn->data.size(), 0.0), dk(dq.size(), 0.0), dv(dq.size(), 0.0);
        std::vector<double> da(len);
        for (std::size_t s = 0; s < nseq; ++s) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* W = w.data() + (s * heads + h) * len * len;
                for (std::size_t i = 0; i < len; ++i) {
                    const double* go = o.grad.data() + (s * len + i) * d + h * dh;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        const double* vj = vn->data.data() + (s * len + j) * d + h * dh;
                        double* dvj = dv.data() + (s * len + j) * d + h * dh;
                        double acc = 0.0;
                        for (std::size_t t = 0; t < dh; ++t) {
                            acc += go[t] * vj[t];
                            dvj[t] += W[i * len + j] * go[t];
                        }
                        da[j] = acc;
                        dot += W[i * len + j] * acc;
                    }
                    const double* qi = qn->data.data() + (s * len + i) * d + h * dh;
                    double* dqi = dq.data() + (s * len + i) * d + h * dh;
                    for (std::size_t j = 0; j < len; ++j) {
                        const double ds = W[i * len + j] * (da[j] - dot) * sc;
                        if (ds == 0.0) continue;
                        const double* kj = kn->data.data() + (s * len + j) * d + h * dh;
                        double* dkj = dk.data() + (s * len + j) * d + h * dh;
                        for (std::size_t t = 0; t < dh; ++t) {
                            dqi[t] += ds * kj[t];
                            dkj[t] += ds * qi[t];
                        }
                    }
                }
            }
        }
        auto push = [](const std::shared_ptr<Node>& n, const std::vector<double>& src) {
            if (!n->requires_grad) return;
            auto& g = n->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        };
        push(qn, dq);
        push(kn, dk);
        push(vn, dv);
    };
    return res;
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, double step, double tolerance) {
    if (!(step > 0.0 && step <= 1e-2)) throw std::invalid_argument("grad_check: step must be in (0, 1e-2]");
    for (auto& t : inputs) {
        t.node()->requires_grad = true;
        t.node()->grad.clear();
    }
    f(inputs).backward();
    GradCheckReport rep;
    for (auto& t : inputs) {
        std::vector<double> analytic = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
        auto& x = t.node()->data;
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0 = x[i];
            x[i] = x0 + step;
            const double fp = f(inputs).item();
            x[i] = x0 - step;
            const double fm = f(inputs).item();
            x[i] = x0;
            const double num = (fp - fm) / (2.0 * step);
            diff += (num - analytic[i]) * (num - analytic[i]);
            na += analytic[i] * analytic[i];
            nn += num * num;
        }
        const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
        rep.rel_error.push_back(std::sqrt(diff) / denom);
        rep.max_rel_error = std::max(rep.max_rel_error, rep.rel_error.back());
    }
    for (auto& t : inputs) t.node()->grad.clear();
    rep.passed = rep.max_rel_error < tolerance;
    return rep;
}

}  // namespace lasp
