#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lasp {

using Shape = std::vector<std::size_t>;

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t numel_of(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass reaches this node
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(std::size_t i, double g);
    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    // rows/cols view the tensor as [numel/last, last]
    std::size_t cols() const;
    std::size_t rows() const;

    const std::vector<double>& values() const { return node_->data; }
    std::vector<double>& mutable_values() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    void backward() const;
    Tensor detach() const;
    Tensor clone(bool requires_grad = false) const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Reverse-order replay of the operations reachable from a scalar root.
class Tape {
public:
    static Tape record(const Tensor& root);
    void replay();
    std::size_t size() const { return ops_.size(); }

private:
    std::shared_ptr<Node> root_;
    std::vector<Node*> ops_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_row(const Tensor& a, const Tensor& row);  // a[..., n] + row[n]
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // [r, c] -> [c]
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
// zero gradient at 0
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor log_softmax(const Tensor& x, int axis = -1);
Tensor softmax(const Tensor& x, int axis = -1);
// -mean_i x[i, labels[i]]
Tensor nll(const Tensor& logp, const std::vector<std::size_t>& labels);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

Tensor normalize_rows(const Tensor& x);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// [n, d] x [m, d] -> [n, m]
Tensor cosine_matrix(const Tensor& a, const Tensor& b);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Multi-head self attention over nseq stacked sequences of length len.
// q, k, v: [nseq*len, d]. slopes (optional, one per head) add -slope*|i-j| to the logits.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t nseq,
                 std::size_t len, std::size_t heads, const std::vector<double>& slopes = {});

struct GradCheckReport {
    std::vector<double> rel_error;  // one per input
    double max_rel_error = 0.0;
    bool passed = false;
};

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, double step = 1e-4,
                           double tolerance = 1e-4);

}  // namespace lasp
