#include "mixedqa/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mixedqa::diff {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeError(msg);
}

NodePtr make_node(Array v, std::vector<NodePtr> parents, BackFn fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(fn);
    return n;
}

bool is_scalar(const Array& a) { return a.size() == 1; }

}  // namespace

Array::Array(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size())
        throw ShapeError("Array: shape does not match value count");
}

Array Array::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_size(shape);
    return Array(std::move(shape), std::vector<double>(n, 0.0));
}

Array Array::full(std::vector<std::size_t> shape, double v) {
    std::size_t n = shape_size(shape);
    return Array(std::move(shape), std::vector<double>(n, v));
}

Array Array::scalar(double v) { return Array({1}, {v}); }

Array Array::vec(std::vector<double> d) {
    std::size_t n = d.size();
    return Array({n}, std::move(d));
}

std::size_t Array::rows() const {
    require(shape.size() == 2, "rows(): not 2-D");
    return shape[0];
}

std::size_t Array::cols() const {
    require(shape.size() == 2, "cols(): not 2-D");
    return shape[1];
}

double& Array::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Array::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

NodePtr constant(Array v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

NodePtr param(Array v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

const Array* Gradients::find(const NodePtr& n) const {
    auto it = grads_.find(n.get());
    return it == grads_.end() ? nullptr : &it->second;
}

Array Gradients::of(const NodePtr& n) const {
    if (const Array* g = find(n)) return *g;
    return Array::zeros(n->value.shape);
}

Gradients backward(const NodePtr& loss) {
    if (loss->value.size() != 1)
        throw ContractError("backward: loss must be scalar");

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node*> topo;
    std::unordered_map<Node*, int> state;  // 0 unseen, 1 open, 2 done
    std::vector<Node*> stack;
    if (loss->requires_grad) stack.push_back(loss.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (const auto& p : n->parents)
                if (p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                topo.push_back(n);
            }
        }
    }

    std::unordered_map<Node*, Array> grad;
    grad[loss.get()] = Array::scalar(1.0);

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        auto git = grad.find(n);
        if (git == grad.end()) continue;  // unreachable from loss
        if (!n->backprop) continue;       // leaf
        std::vector<Array*> pg(n->parents.size(), nullptr);
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            Node* p = n->parents[i].get();
            if (!p->requires_grad) continue;
            auto [pit, inserted] = grad.try_emplace(p, Array::zeros(p->value.shape));
            pg[i] = &pit->second;
        }
        n->backprop(git->second, pg);
    }

    Gradients out;
    for (Node* n : topo)
        if (n->parents.empty() && n->requires_grad) {
            auto git = grad.find(n);
            if (git != grad.end()) out.set(n, std::move(git->second));
        }
    return out;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Array& A = a->value;
    const Array& B = b->value;
    require(A.shape.size() == 2 && B.shape.size() == 2, "matmul: operands must be 2-D");
    if (A.cols() != B.rows()) throw ShapeError("matmul: inner dimensions disagree");
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Array C = Array::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            double av = A.data[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                C.data[i * n + j] += av * B.data[l * n + j];
        }
    return make_node(std::move(C), {a, b}, [a, b, m, k, n](const Array& g, const std::vector<Array*>& pg) {
        const Array& A = a->value;
        const Array& B = b->value;
        if (pg[0]) {  // dA += g * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        s += g.data[i * n + j] * B.data[l * n + j];
                    pg[0]->data[i * k + l] += s;
                }
        }
        if (pg[1]) {  // dB += A^T * g
            for (std::size_t l = 0; l < k; ++l)
                for (std::size_t i = 0; i < m; ++i) {
                    double av = A.data[i * k + l];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        pg[1]->data[l * n + j] += av * g.data[i * n + j];
                }
        }
    });
}

NodePtr matvec(const NodePtr& a, const NodePtr& x) {
    const Array& A = a->value;
    const Array& X = x->value;
    require(A.shape.size() == 2 && X.shape.size() == 1, "matvec: need 2-D and 1-D");
    if (A.cols() != X.size()) throw ShapeError("matvec: dimension mismatch");
    std::size_t m = A.rows(), k = A.cols();
    Array y = Array::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t l = 0; l < k; ++l) s += A.data[i * k + l] * X.data[l];
        y.data[i] = s;
    }
    return make_node(std::move(y), {a, x}, [a, x, m, k](const Array& g, const std::vector<Array*>& pg) {
        const Array& A = a->value;
        const Array& X = x->value;
        if (pg[0])
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l)
                    pg[0]->data[i * k + l] += g.data[i] * X.data[l];
        if (pg[1])
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l)
                    pg[1]->data[l] += g.data[i] * A.data[i * k + l];
    });
}

NodePtr dot(const NodePtr& a, const NodePtr& b) {
    const Array& A = a->value;
    const Array& B = b->value;
    require(A.shape.size() == 1 && B.shape.size() == 1, "dot: need 1-D operands");
    if (A.size() != B.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A.data[i] * B.data[i];
    return make_node(Array::scalar(s), {a, b}, [a, b](const Array& g, const std::vector<Array*>& pg) {
        double gv = g.data[0];
        if (pg[0])
            for (std::size_t i = 0; i < b->value.size(); ++i)
                pg[0]->data[i] += gv * b->value.data[i];
        if (pg[1])
            for (std::size_t i = 0; i < a->value.size(); ++i)
                pg[1]->data[i] += gv * a->value.data[i];
    });
}

namespace {

// Binary elementwise with scalar-with-array broadcast (either side).
NodePtr binary(const NodePtr& a, const NodePtr& b, double (*fwd)(double, double),
               void (*bwd)(double g, double av, double bv, double* ga, double* gb)) {
    const Array& A = a->value;
    const Array& B = b->value;
    bool a_scalar = is_scalar(A), b_scalar = is_scalar(B);
    if (!A.same_shape(B) && !a_scalar && !b_scalar)
        throw ShapeError("elementwise: shape mismatch (only scalar broadcast allowed)");
    std::size_t n = std::max(A.size(), B.size());
    const std::vector<std::size_t>& shape = A.size() >= B.size() ? A.shape : B.shape;
    Array out = Array::zeros(shape);
    for (std::size_t i = 0; i < n; ++i)
        out.data[i] = fwd(A.data[a_scalar ? 0 : i], B.data[b_scalar ? 0 : i]);
    return make_node(std::move(out), {a, b},
                     [a, b, a_scalar, b_scalar, n, bwd](const Array& g, const std::vector<Array*>& pg) {
                         for (std::size_t i = 0; i < n; ++i) {
                             double ga = 0.0, gb = 0.0;
                             bwd(g.data[i], a->value.data[a_scalar ? 0 : i],
                                 b->value.data[b_scalar ? 0 : i], &ga, &gb);
                             if (pg[0]) pg[0]->data[a_scalar ? 0 : i] += ga;
                             if (pg[1]) pg[1]->data[b_scalar ? 0 : i] += gb;
                         }
                     });
}

NodePtr unary(const NodePtr& a, double (*fwd)(double), double (*dlocal)(double x, double y)) {
    Array out = Array::zeros(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = fwd(a->value.data[i]);
    auto outv = out;  // dlocal may use the output value (tanh, exp)
    return make_node(std::move(out), {a},
                     [a, outv = std::move(outv), dlocal](const Array& g, const std::vector<Array*>& pg) {
                         if (!pg[0]) return;
                         for (std::size_t i = 0; i < g.size(); ++i)
                             pg[0]->data[i] += g.data[i] * dlocal(a->value.data[i], outv.data[i]);
                     });
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return binary(
        a, b, +[](double x, double y) { return x + y; },
        +[](double g, double, double, double* ga, double* gb) {
            *ga = g;
            *gb = g;
        });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return binary(
        a, b, +[](double x, double y) { return x - y; },
        +[](double g, double, double, double* ga, double* gb) {
            *ga = g;
            *gb = -g;
        });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return binary(
        a, b, +[](double x, double y) { return x * y; },
        +[](double g, double av, double bv, double* ga, double* gb) {
            *ga = g * bv;
            *gb = g * av;
        });
}

NodePtr scale(const NodePtr& a, double c) {
    Array out = a->value;
    for (double& v : out.data) v *= c;
    return make_node(std::move(out), {a}, [c](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += c * g.data[i];
    });
}

NodePtr tanh_(const NodePtr& a) {
    return unary(a, +[](double x) { return std::tanh(x); },
                 +[](double, double y) { return 1.0 - y * y; });
}

NodePtr relu(const NodePtr& a) {
    return unary(a, +[](double x) { return x > 0.0 ? x : 0.0; },
                 +[](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

NodePtr exp_(const NodePtr& a) {
    return unary(a, +[](double x) { return std::exp(x); },
                 +[](double, double y) { return y; });
}

NodePtr log_(const NodePtr& a) {
    for (double v : a->value.data)
        if (!(v > 0.0)) throw DomainError("log: input must be strictly positive");
    return unary(a, +[](double x) { return std::log(x); },
                 +[](double x, double) { return 1.0 / x; });
}

NodePtr square(const NodePtr& a) {
    return unary(a, +[](double x) { return x * x; },
                 +[](double x, double) { return 2.0 * x; });
}

NodePtr sum(const NodePtr& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    return make_node(Array::scalar(s), {a}, [](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (double& v : pg[0]->data) v += g.data[0];
    });
}

NodePtr log_softmax(const NodePtr& scores, const std::vector<bool>& mask) {
    const Array& S = scores->value;
    require(S.shape.size() == 1, "log_softmax: scores must be 1-D");
    std::size_t n = S.size();
    if (!mask.empty() && mask.size() != n)
        throw ShapeError("log_softmax: mask length mismatch");
    auto live = [&](std::size_t i) { return mask.empty() || mask[i]; };

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (live(i)) mx = std::max(mx, S.data[i]);
    if (mx == -std::numeric_limits<double>::infinity())
        throw DomainError("log_softmax: empty support (all positions masked)");

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (live(i)) z += std::exp(S.data[i] - mx);
    double logz = mx + std::log(z);

    Array out = Array::full({n}, kMaskedLogProb);
    for (std::size_t i = 0; i < n; ++i)
        if (live(i)) out.data[i] = S.data[i] - logz;
    auto outv = out;
    return make_node(std::move(out), {scores},
                     [mask, n, outv = std::move(outv)](const Array& g, const std::vector<Array*>& pg) {
                         if (!pg[0]) return;
                         auto live = [&](std::size_t i) { return mask.empty() || mask[i]; };
                         double gsum = 0.0;
                         for (std::size_t i = 0; i < n; ++i)
                             if (live(i)) gsum += g.data[i];
                         for (std::size_t i = 0; i < n; ++i)
                             if (live(i))
                                 pg[0]->data[i] += g.data[i] - std::exp(outv.data[i]) * gsum;
                     });
}

NodePtr max_pool_rows(const NodePtr& a) {
    const Array& A = a->value;
    require(A.shape.size() == 2, "max_pool_rows: input must be 2-D");
    std::size_t n = A.rows(), d = A.cols();
    if (n == 0) throw ShapeError("max_pool_rows: empty input");
    Array out = Array::zeros({d});
    std::vector<std::size_t> arg(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
        double best = A.at(0, j);
        std::size_t bi = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (A.at(i, j) > best) {  // strict: ties keep the lowest row
                best = A.at(i, j);
                bi = i;
            }
        out.data[j] = best;
        arg[j] = bi;
    }
    return make_node(std::move(out), {a},
                     [d, arg = std::move(arg)](const Array& g, const std::vector<Array*>& pg) {
                         if (!pg[0]) return;
                         std::size_t cols = pg[0]->cols();
                         for (std::size_t j = 0; j < d; ++j)
                             pg[0]->data[arg[j] * cols + j] += g.data[j];
                     });
}

NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t end) {
    const Array& A = a->value;
    require(A.shape.size() == 1, "slice: input must be 1-D");
    if (begin > end || end > A.size()) throw ShapeError("slice: out of range");
    Array out = Array::zeros({end - begin});
    std::copy(A.data.begin() + begin, A.data.begin() + end, out.data.begin());
    return make_node(std::move(out), {a}, [begin](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[begin + i] += g.data[i];
    });
}

NodePtr concat(const std::vector<NodePtr>& parts) {
    require(!parts.empty(), "concat: empty part list");
    std::size_t n = 0;
    for (const auto& p : parts) {
        require(p->value.shape.size() == 1, "concat: parts must be 1-D");
        n += p->value.size();
    }
    Array out = Array::zeros({n});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
        off += p->value.size();
    }
    return make_node(std::move(out), parts,
                     [offsets = std::move(offsets)](const Array& g, const std::vector<Array*>& pg) {
                         for (std::size_t k = 0; k < pg.size(); ++k) {
                             if (!pg[k]) continue;
                             for (std::size_t i = 0; i < pg[k]->size(); ++i)
                                 pg[k]->data[i] += g.data[offsets[k] + i];
                         }
                     });
}

NodePtr flatten(const NodePtr& a) {
    Array out({a->value.size()}, a->value.data);
    return make_node(std::move(out), {a}, [](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) pg[0]->data[i] += g.data[i];
    });
}

NodePtr pick(const NodePtr& a, std::size_t index) {
    require(a->value.shape.size() == 1, "pick: input must be 1-D");
    if (index >= a->value.size()) throw ShapeError("pick: index out of range");
    return make_node(Array::scalar(a->value.data[index]), {a},
                     [index](const Array& g, const std::vector<Array*>& pg) {
                         if (pg[0]) pg[0]->data[index] += g.data[0];
                     });
}

NodePtr gather(const NodePtr& v, const std::vector<std::size_t>& indices) {
    const Array& V = v->value;
    require(V.shape.size() == 1, "gather: input must be 1-D");
    Array out = Array::zeros({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= V.size()) throw ShapeError("gather: index out of range");
        out.data[i] = V.data[indices[i]];
    }
    return make_node(std::move(out), {v}, [indices](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < indices.size(); ++i)
            pg[0]->data[indices[i]] += g.data[i];
    });
}

NodePtr gather_rows(const NodePtr& table, const std::vector<std::size_t>& indices) {
    const Array& T = table->value;
    require(T.shape.size() == 2, "gather_rows: table must be 2-D");
    std::size_t d = T.cols();
    for (std::size_t idx : indices)
        if (idx >= T.rows()) throw DomainError("gather_rows: row index out of range");
    Array out = Array::zeros({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(T.data.begin() + indices[i] * d, T.data.begin() + (indices[i] + 1) * d,
                  out.data.begin() + i * d);
    return make_node(std::move(out), {table},
                     [indices, d](const Array& g, const std::vector<Array*>& pg) {
                         if (!pg[0]) return;
                         for (std::size_t i = 0; i < indices.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j)
                                 pg[0]->data[indices[i] * d + j] += g.data[i * d + j];
                     });
}

NodePtr tile_rows(const NodePtr& v, std::size_t n) {
    const Array& V = v->value;
    require(V.shape.size() == 1, "tile_rows: input must be 1-D");
    std::size_t d = V.size();
    Array out = Array::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(V.data.begin(), V.data.end(), out.data.begin() + i * d);
    return make_node(std::move(out), {v}, [n, d](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) pg[0]->data[j] += g.data[i * d + j];
    });
}

NodePtr sum_rows(const NodePtr& a) {
    const Array& A = a->value;
    require(A.shape.size() == 2, "sum_rows: input must be 2-D");
    std::size_t n = A.rows(), d = A.cols();
    Array out = Array::zeros({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.data[j] += A.data[i * d + j];
    return make_node(std::move(out), {a}, [n, d](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) pg[0]->data[i * d + j] += g.data[j];
    });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    require(!parts.empty(), "concat_cols: empty part list");
    std::size_t n = parts[0]->value.rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p->value.shape.size() == 2, "concat_cols: parts must be 2-D");
        if (p->value.rows() != n) throw ShapeError("concat_cols: row count mismatch");
        total += p->value.cols();
    }
    Array out = Array::zeros({n, total});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::size_t d = p->value.cols();
        for (std::size_t i = 0; i < n; ++i)
            std::copy(p->value.data.begin() + i * d, p->value.data.begin() + (i + 1) * d,
                      out.data.begin() + i * total + off);
        off += d;
    }
    return make_node(std::move(out), parts,
                     [n, total, offsets = std::move(offsets)](const Array& g,
                                                              const std::vector<Array*>& pg) {
                         for (std::size_t k = 0; k < pg.size(); ++k) {
                             if (!pg[k]) continue;
                             std::size_t d = pg[k]->cols();
                             for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < d; ++j)
                                     pg[k]->data[i * d + j] += g.data[i * total + offsets[k] + j];
                         }
                     });
}

NodePtr pair_window_sum(const NodePtr& a, const NodePtr& b, std::size_t window) {
    const Array& A = a->value;
    const Array& B = b->value;
    require(A.shape.size() == 1 && B.shape.size() == 1, "pair_window_sum: need 1-D inputs");
    if (A.size() != B.size()) throw ShapeError("pair_window_sum: length mismatch");
    if (window == 0) throw ShapeError("pair_window_sum: window must be >= 1");
    std::size_t n = A.size();

    // prefix[i] = sum of b[0..i)
    std::vector<double> prefix_b(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix_b[i + 1] = prefix_b[i] + B.data[i];
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t hi = std::min(s + window, n);
        total += A.data[s] * (prefix_b[hi] - prefix_b[s]);
    }
    return make_node(Array::scalar(total), {a, b},
                     [a, b, window, n](const Array& g, const std::vector<Array*>& pg) {
                         const Array& A = a->value;
                         const Array& B = b->value;
                         double gv = g.data[0];
                         if (pg[0]) {
                             std::vector<double> prefix_b(n + 1, 0.0);
                             for (std::size_t i = 0; i < n; ++i)
                                 prefix_b[i + 1] = prefix_b[i] + B.data[i];
                             for (std::size_t s = 0; s < n; ++s) {
                                 std::size_t hi = std::min(s + window, n);
                                 pg[0]->data[s] += gv * (prefix_b[hi] - prefix_b[s]);
                             }
                         }
                         if (pg[1]) {
                             std::vector<double> prefix_a(n + 1, 0.0);
                             for (std::size_t i = 0; i < n; ++i)
                                 prefix_a[i + 1] = prefix_a[i] + A.data[i];
                             for (std::size_t e = 0; e < n; ++e) {
                                 std::size_t lo = e + 1 >= window ? e + 1 - window : 0;
                                 pg[1]->data[e] += gv * (prefix_a[e + 1] - prefix_a[lo]);
                             }
                         }
                     });
}

NodePtr clamp_min(const NodePtr& a, double floor) {
    Array out = a->value;
    for (double& v : out.data) v = std::max(v, floor);
    return make_node(std::move(out), {a}, [a, floor](const Array& g, const std::vector<Array*>& pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a->value.data[i] > floor) pg[0]->data[i] += g.data[i];
    });
}

NodePtr detach(const NodePtr& a) { return constant(a->value); }

}  // namespace mixedqa::diff
