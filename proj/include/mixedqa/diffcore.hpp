#ifndef MIXEDQA_DIFFCORE_HPP
#define MIXEDQA_DIFFCORE_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixedqa::diff {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Masked positions of log_softmax carry this finite stand-in for -inf so that
// downstream arithmetic stays finite. exp() of it underflows to exactly 0.
constexpr double kMaskedLogProb = -1e30;

// Dense row-major array of doubles. Immutable by convention once wrapped in a Node.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Array() = default;
    Array(std::vector<std::size_t> s, std::vector<double> d);

    static Array zeros(std::vector<std::size_t> shape);
    static Array full(std::vector<std::size_t> shape, double v);
    static Array scalar(double v);
    static Array vec(std::vector<double> d);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    bool same_shape(const Array& o) const { return shape == o.shape; }
};

class Node;
using NodePtr = std::shared_ptr<Node>;

// pg[i] points at the gradient accumulator for parents[i]; nullptr when that
// parent needs no gradient.
using BackFn = std::function<void(const Array& g, const std::vector<Array*>& pg)>;

class Node {
public:
    Array value;
    std::vector<NodePtr> parents;
    BackFn backprop;
    bool requires_grad = false;
};

NodePtr constant(Array v);
NodePtr param(Array v);  // leaf with requires_grad = true

// Gradient map produced by backward(); of() returns zeros for nodes the loss
// does not reach.
class Gradients {
public:
    void set(const Node* n, Array g) { grads_[n] = std::move(g); }
    const Array* find(const NodePtr& n) const;
    Array of(const NodePtr& n) const;

private:
    std::unordered_map<const Node*, Array> grads_;
};

// Reverse-mode pass from a scalar loss. Visits each reachable node exactly
// once; returns gradients for every requires_grad leaf.
Gradients backward(const NodePtr& loss);

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr matvec(const NodePtr& a, const NodePtr& x);
NodePtr dot(const NodePtr& a, const NodePtr& b);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double c);

NodePtr tanh_(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr exp_(const NodePtr& a);
NodePtr log_(const NodePtr& a);
NodePtr square(const NodePtr& a);

NodePtr sum(const NodePtr& a);

// Numerically stabilized log-softmax over the unmasked positions of a 1-D
// score vector. Masked outputs are kMaskedLogProb and receive no gradient.
// An empty mask means all positions live.
NodePtr log_softmax(const NodePtr& scores, const std::vector<bool>& mask = {});

// Columnwise max of a 2-D array; gradient flows to the lowest-index argmax row.
NodePtr max_pool_rows(const NodePtr& a);

NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t end);
NodePtr concat(const std::vector<NodePtr>& parts);
NodePtr flatten(const NodePtr& a);
NodePtr pick(const NodePtr& a, std::size_t index);

NodePtr gather(const NodePtr& v, const std::vector<std::size_t>& indices);
NodePtr gather_rows(const NodePtr& table, const std::vector<std::size_t>& indices);
NodePtr tile_rows(const NodePtr& v, std::size_t n);
NodePtr sum_rows(const NodePtr& a);
NodePtr concat_cols(const std::vector<NodePtr>& parts);

// sum over index pairs s <= e < s + window of a[s] * b[e], via prefix sums.
NodePtr pair_window_sum(const NodePtr& a, const NodePtr& b, std::size_t window);

NodePtr clamp_min(const NodePtr& a, double floor);

// Value passthrough with the gradient blocked.
NodePtr detach(const NodePtr& a);

}  // namespace mixedqa::diff

#endif
