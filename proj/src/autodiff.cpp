#include "nfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace nfm::ad {

namespace {

thread_local bool g_recording = true;

struct RecordingScope {
    explicit RecordingScope(bool on) : previous(g_recording) { g_recording = on; }
    ~RecordingScope() { g_recording = previous; }
    bool previous;
};

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <class F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

const std::vector<Var>& parents_of(const Var& self) { return self.node()->parents; }

Tensor broadcast_rows_value(const Tensor& row, std::size_t n) {
    return repeat_row(row.data(), n);
}

Tensor broadcast_cols_value(const Tensor& col, std::size_t m) {
    Tensor out = Tensor::matrix(col.rows(), m);
    for (std::size_t i = 0; i < col.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) = col[i];
    return out;
}

}  // namespace

const Tensor& Var::value() const { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }
const std::string& Var::op() const { return node_->op; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool recording() { return g_recording; }

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
}

Var variable(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "variable";
    n->requires_grad = true;
    return Var(std::move(n));
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents, Backward backward,
            RawBackward raw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = std::move(op);
    const bool needs = g_recording && std::any_of(parents.begin(), parents.end(),
                                                  [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
        n->raw_backward = std::move(raw);
    }
    return Var(std::move(n));
}

Var add(const Var& a, const Var& b) {
    return make_op("add", nfm::add(a.value(), b.value()), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    return make_op("sub", nfm::sub(a.value(), b.value()), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
    return make_op("mul", nfm::hadamard(a.value(), b.value()), {a, b},
                   [](const Var& self, const Var& g) {
                       const auto& p = parents_of(self);
                       return std::vector<Var>{mul(g, p[1]), mul(g, p[0])};
                   });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
    return make_op("scale", nfm::scale(a.value(), c), {a},
                   [c](const Var&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
    return make_op("add_scalar", nfm::add_scalar(a.value(), c), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var matmul(const Var& a, const Var& b) {
    return make_op("matmul", nfm::matmul(a.value(), b.value()), {a, b},
                   [](const Var& self, const Var& g) {
                       const auto& p = parents_of(self);
                       return std::vector<Var>{matmul(g, transpose(p[1])),
                                               matmul(transpose(p[0]), g)};
                   });
}

Var transpose(const Var& a) {
    return make_op("transpose", nfm::transpose(a.value()), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var add_row(const Var& a, const Var& row) {
    return make_op("add_row", nfm::add_row(a.value(), row.value()), {a, row},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, sum_rows(g)}; });
}

Var sum_rows(const Var& a) {
    const std::size_t n = a.rows();
    return make_op("sum_rows", nfm::sum_rows(a.value()), {a}, [n](const Var&, const Var& g) {
        return std::vector<Var>{broadcast_rows(g, n)};
    });
}

Var broadcast_rows(const Var& row, std::size_t n) {
    if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a 1 x m row");
    return make_op("broadcast_rows", broadcast_rows_value(row.value(), n), {row},
                   [](const Var&, const Var& g) { return std::vector<Var>{sum_rows(g)}; });
}

Var sum_cols(const Var& a) {
    const std::size_t m = a.cols();
    return make_op("sum_cols", nfm::sum_cols(a.value()), {a}, [m](const Var&, const Var& g) {
        return std::vector<Var>{broadcast_cols(g, m)};
    });
}

Var broadcast_cols(const Var& col, std::size_t m) {
    if (col.cols() != 1) throw std::invalid_argument("broadcast_cols: expected an n x 1 column");
    return make_op("broadcast_cols", broadcast_cols_value(col.value(), m), {col},
                   [](const Var&, const Var& g) { return std::vector<Var>{sum_cols(g)}; });
}

Var sum(const Var& a) {
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    return make_op("sum", Tensor::scalar(nfm::sum(a.value())), {a},
                   [r, c](const Var&, const Var& g) {
                       return std::vector<Var>{broadcast_scalar(g, r, c)};
                   });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols) {
    if (s.value().size() != 1) throw std::invalid_argument("broadcast_scalar: expected 1 x 1");
    return make_op("broadcast_scalar", Tensor::matrix(rows, cols, s.value()[0]), {s},
                   [](const Var&, const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var relu(const Var& a) {
    // Subgradient at 0 is 0.
    Tensor mask = map(a.value(), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
    Tensor out = map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; });
    return make_op("relu", std::move(out), {a}, [mask = std::move(mask)](const Var&, const Var& g) {
        return std::vector<Var>{mul(g, constant(mask))};
    });
}

Var sigmoid(const Var& a, double sharpness) {
    Tensor out = map(a.value(), [sharpness](double x) { return stable_sigmoid(sharpness * x); });
    return make_op("sigmoid", std::move(out), {a}, [sharpness](const Var& self, const Var& g) {
        const Var slope = scale(mul(self, add_scalar(neg(self), 1.0)), sharpness);
        return std::vector<Var>{mul(g, slope)};
    });
}

Var softplus(const Var& a, double sharpness) {
    Tensor out = map(a.value(), [sharpness](double x) {
        return stable_softplus(sharpness * x) / sharpness;
    });
    return make_op("softplus", std::move(out), {a}, [sharpness](const Var& self, const Var& g) {
        return std::vector<Var>{mul(g, sigmoid(parents_of(self)[0], sharpness))};
    });
}

Var exp(const Var& a) {
    return make_op("exp", map(a.value(), [](double x) { return std::exp(x); }), {a},
                   [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; });
}

Var log(const Var& a) {
    return make_op("log", map(a.value(), [](double x) { return std::log(x); }), {a},
                   [](const Var& self, const Var& g) {
                       return std::vector<Var>{mul(g, reciprocal(parents_of(self)[0]))};
                   });
}

Var reciprocal(const Var& a) {
    return make_op("reciprocal", map(a.value(), [](double x) { return 1.0 / x; }), {a},
                   [](const Var& self, const Var& g) {
                       return std::vector<Var>{neg(mul(g, mul(self, self)))};
                   });
}

Var logsumexp_rows(const Var& a) {
    const Tensor& x = a.value();
    Tensor out = Tensor::matrix(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row_span(i);
        const double m = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - m);
        out[i] = m + std::log(s);
    }
    const std::size_t m = x.cols();
    return make_op("logsumexp_rows", std::move(out), {a}, [m](const Var& self, const Var& g) {
        const Var softmax = exp(sub(parents_of(self)[0], broadcast_cols(self, m)));
        return std::vector<Var>{mul(broadcast_cols(g, m), softmax)};
    });
}

Var gather_rows(const Var& a, std::vector<std::size_t> index) {
    const std::size_t rows = a.rows();
    Tensor out = nfm::gather_rows(a.value(), index);
    return make_op("gather_rows", std::move(out), {a},
                   [index = std::move(index), rows](const Var&, const Var& g) {
                       return std::vector<Var>{scatter_rows(g, index, rows)};
                   });
}

Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t rows) {
    const Tensor& x = a.value();
    if (index.size() != x.rows()) throw std::invalid_argument("scatter_rows: index length");
    Tensor out = Tensor::matrix(rows, x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        auto dst = out.row_span(index[i]);
        auto src = x.row_span(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    return make_op("scatter_rows", std::move(out), {a},
                   [index = std::move(index)](const Var&, const Var& g) {
                       return std::vector<Var>{gather_rows(g, index)};
                   });
}

Var sign(const Var& a) {
    Tensor out = map(a.value(), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    return make_op("sign", std::move(out), {a}, {});
}

Var softmax_cross_entropy_fused(const Var& logits, const Tensor& labels) {
    const Tensor& f = logits.value();
    require_same_shape(f, labels, "softmax_cross_entropy_fused");
    const std::size_t n = f.rows();
    const std::size_t k = f.cols();
    Tensor softmax(f.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = f.row_span(i);
        const double m = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < k; ++j) {
            softmax(i, j) = std::exp(r[j] - lse);
            total += labels(i, j) * (lse - r[j]);
        }
    }
    RawBackward raw = [softmax = std::move(softmax), labels, n](const Node&, const Tensor& g) {
        Tensor d = nfm::scale(nfm::sub(softmax, labels), g.item() / static_cast<double>(n));
        return std::vector<Tensor>{std::move(d)};
    };
    return make_op("softmax_cross_entropy_fused", Tensor::scalar(total / static_cast<double>(n)),
                   {logits}, {}, std::move(raw));
}

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
    if (output.value().size() != 1)
        throw std::invalid_argument("grad: output is not scalar (shape " +
                                    output.value().shape_string() + ")");
    std::vector<Var> result;
    result.reserve(wrt.size());
    if (!output.requires_grad()) {
        for (const Var& w : wrt) result.push_back(constant(Tensor(w.value().shape())));
        return result;
    }

    // Post-order DFS gives a topological order (parents before children).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].node().get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    RecordingScope scope(create_graph);
    std::unordered_map<Node*, Var> grads;
    grads.emplace(output.node().get(), constant(Tensor::matrix(1, 1, 1.0)));
    // Var handles for nodes (the backward rules need `self` as a Var).
    std::unordered_map<Node*, Var> handles;
    handles.emplace(output.node().get(), output);
    for (Node* n : order)
        for (const Var& p : n->parents) handles.emplace(p.node().get(), p);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto g_it = grads.find(node);
        if (g_it == grads.end() || node->parents.empty()) continue;
        const Var g = g_it->second;
        std::vector<Var> parent_grads;
        if (node->backward) {
            parent_grads = node->backward(handles.at(node), g);
        } else if (node->raw_backward) {
            if (create_graph) throw NotTwiceDifferentiable(node->op);
            for (Tensor& t : node->raw_backward(*node, g.value()))
                parent_grads.push_back(constant(std::move(t)));
        } else {
            throw NonDifferentiable(node->op);
        }
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            const Var& p = node->parents[i];
            if (!p.requires_grad()) continue;
            Node* key = p.node().get();
            auto [slot, inserted] = grads.emplace(key, parent_grads[i]);
            if (!inserted) slot->second = add(slot->second, parent_grads[i]);
        }
    }

    for (const Var& w : wrt) {
        auto g_it = grads.find(w.node().get());
        result.push_back(g_it != grads.end() ? g_it->second
                                             : constant(Tensor(w.value().shape())));
    }
    return result;
}

std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt) {
    std::vector<Tensor> out;
    for (const Var& g : grad(output, wrt, false)) out.push_back(g.value());
    return out;
}

std::vector<Tensor> gradient(const ScalarFn& fn, std::span<const Tensor> point) {
    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(variable(t));
    return grad_values(fn(vars), vars);
}

HvpResult hvp(const ScalarFn& fn, std::span<const Tensor> point,
              std::span<const Tensor> direction) {
    if (point.size() != direction.size())
        throw std::invalid_argument("hvp: point and direction arity differ");
    for (std::size_t i = 0; i < point.size(); ++i)
        require_same_shape(point[i], direction[i], "hvp");

    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(variable(t));
    HvpResult result;
    try {
        const Var out = fn(vars);
        const std::vector<Var> g = grad(out, vars, true);
        Var s = constant(Tensor::scalar(0.0));
        for (std::size_t i = 0; i < g.size(); ++i) s = add(s, sum(mul(g[i], constant(direction[i]))));
        for (const Var& h : grad(s, vars, false)) result.value.push_back(h.value());
        return result;
    } catch (const NotTwiceDifferentiable& e) {
        result.used_fallback = true;
        result.fallback_reason = e.what();
    }

    double x_scale = 1.0;
    double v_scale = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        x_scale = std::max(x_scale, max_abs(point[i]));
        v_scale = std::max(v_scale, max_abs(direction[i]));
    }
    result.value.clear();
    if (v_scale == 0.0) {
        for (const Tensor& t : point) result.value.emplace_back(t.shape());
        return result;
    }
    const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * x_scale / v_scale;
    std::vector<Tensor> plus, minus;
    for (std::size_t i = 0; i < point.size(); ++i) {
        plus.push_back(nfm::add(point[i], nfm::scale(direction[i], h)));
        minus.push_back(nfm::sub(point[i], nfm::scale(direction[i], h)));
    }
    const std::vector<Tensor> gp = gradient(fn, plus);
    const std::vector<Tensor> gm = gradient(fn, minus);
    for (std::size_t i = 0; i < gp.size(); ++i)
        result.value.push_back(nfm::scale(nfm::sub(gp[i], gm[i]), 0.5 / h));
    return result;
}

}  // namespace nfm::ad
