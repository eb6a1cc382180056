#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "retinagan/core/array.hpp"

namespace rg {

template <class T>
class Tape;

// Named trainable parameter. Lives outside any tape; gradients are
// accumulated here by Tape::backward.
template <class T>
struct Param {
    std::string name;
    Array<T> value;
    Array<T> grad;

    Param() = default;
    Param(std::string n, Array<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

template <class T>
struct Node {
    Array<T> val;
    Array<T> grad;  // allocated lazily during backward
    bool needs_grad = false;
    const char* op = "leaf";
    std::vector<int> inputs;
    std::function<void(Tape<T>&, Node<T>&)> backfn;
    Param<T>* param = nullptr;

    bool has_grad() const { return !grad.v.empty(); }
};

// Lightweight handle to a tape node.
template <class T>
struct Var {
    int id = -1;
    Tape<T>* tape = nullptr;

    Node<T>& node() const;
    const Array<T>& val() const { return node().val; }
    const Shape& shape() const { return node().val.shape; }
    std::size_t size() const { return node().val.size(); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Records primitive applications in topological (creation) order.
// backward() walks the record in reverse.
template <class T>
class Tape {
public:
    Var<T> leaf(Array<T> v, bool needs_grad = false) {
        Node<T> n;
        n.val = std::move(v);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    Var<T> constant(T x) { return leaf(Array<T>::scalar(x), false); }

    Var<T> param(Param<T>& p) {
        Node<T> n;
        n.val = p.value;
        n.needs_grad = true;
        n.op = "param";
        n.param = &p;
        return push(std::move(n));
    }

    template <class F>
    Var<T> make(const char* op, std::vector<int> input_ids, Array<T> out, F&& backfn) {
        bool ng = false;
        for (int id : input_ids) ng = ng || nodes_[static_cast<std::size_t>(id)].needs_grad;
        check_finite(op, out);
        Node<T> n;
        n.val = std::move(out);
        n.needs_grad = ng;
        n.op = op;
        n.inputs = std::move(input_ids);
        if (ng) n.backfn = std::forward<F>(backfn);
        return push(std::move(n));
    }

    Node<T>& at(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node<T>& at(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // Accumulate g into node id's grad buffer.
    void accum(int id, std::size_t offset, T g) {
        Node<T>& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (!n.has_grad()) n.grad = Array<T>(n.val.shape);
        n.grad.v[offset] += g;
    }

    Array<T>& grad_buf(int id) {
        Node<T>& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad()) n.grad = Array<T>(n.val.shape);
        return n.grad;
    }

    bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    // Reverse-mode sweep from a scalar loss. Gradients of param-bound
    // leaves are accumulated into their Param::grad.
    void backward(Var<T> loss) {
        Node<T>& ln = loss.node();
        if (ln.val.size() != 1) throw EngineError("backward requires a scalar loss, got shape " + shape_str(ln.val.shape));
        if (!ln.needs_grad) return;
        grad_buf(loss.id).v[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node<T>& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || !n.has_grad() || !n.backfn) continue;
            n.backfn(*this, n);
        }
        for (auto& n : nodes_) {
            if (n.param != nullptr && n.has_grad()) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad.v[i] += n.grad.v[i];
            }
        }
    }

    void clear() { nodes_.clear(); }

    static void check_finite(const char* op, const Array<T>& out) {
        // cheap single pass; catches NaN/Inf escaping any primitive
        T s = T(0);
        for (T x : out.v) s += x;
        if (!std::isfinite(static_cast<double>(s))) {
            if (!all_finite(out))
                throw EngineError(std::string("non-finite output from op '") + op + "'");
        }
    }

private:
    Var<T> push(Node<T> n) {
        nodes_.push_back(std::move(n));
        return Var<T>{static_cast<int>(nodes_.size()) - 1, this};
    }

    std::deque<Node<T>> nodes_;
};

template <class T>
Node<T>& Var<T>::node() const {
    return tape->at(id);
}

}  // namespace rg
