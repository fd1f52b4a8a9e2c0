#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "auditkit/errors.hpp"

namespace audit {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense n-dimensional array, row-major, backed by an Eigen column array.
// Value semantics throughout; `grad` is populated only by Tape::backward.
template <typename Scalar>
struct TensorT {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Shape shape;
    Array data;
    bool requires_grad = false;
    std::optional<Array> grad;

    TensorT() = default;

    TensorT(Shape s, Array d) : shape(std::move(s)), data(std::move(d)) {
        check_invariants();
    }

    static TensorT zeros(Shape s) {
        TensorT t;
        t.shape = std::move(s);
        t.data = Array::Zero(shape_numel(t.shape));
        t.check_invariants();
        return t;
    }

    static TensorT full(Shape s, Scalar value) {
        TensorT t;
        t.shape = std::move(s);
        t.data = Array::Constant(shape_numel(t.shape), value);
        t.check_invariants();
        return t;
    }

    static TensorT from(Shape s, const std::vector<Scalar>& values) {
        TensorT t;
        t.shape = std::move(s);
        t.data = Eigen::Map<const Array>(values.data(), static_cast<Eigen::Index>(values.size()));
        t.check_invariants();
        return t;
    }

    std::int64_t size() const { return data.size(); }
    int dim(std::size_t axis) const { return shape[axis]; }
    std::size_t rank() const { return shape.size(); }

    Scalar& operator[](std::int64_t i) { return data[i]; }
    Scalar operator[](std::int64_t i) const { return data[i]; }

    // Row-major addressing for the common 4-D [N,C,H,W] layout.
    Scalar& at4(int n, int c, int h, int w) {
        return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    Scalar at4(int n, int c, int h, int w) const {
        return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    Scalar& at3(int c, int h, int w) {
        return data[(static_cast<std::int64_t>(c) * shape[1] + h) * shape[2] + w];
    }
    Scalar at3(int c, int h, int w) const {
        return data[(static_cast<std::int64_t>(c) * shape[1] + h) * shape[2] + w];
    }

    Scalar& at2(int r, int c) { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }
    Scalar at2(int r, int c) const { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }

    TensorT<Scalar> reshaped(Shape s) const {
        if (shape_numel(s) != size())
            throw dimension_error("reshape: element count " + std::to_string(size()) +
                                  " does not fit shape " + shape_str(s));
        TensorT out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    bool all_finite() const { return data.isFinite().all(); }

    void check_invariants() const {
        for (std::size_t a = 0; a < shape.size(); ++a)
            if (shape[a] <= 0)
                throw dimension_error("tensor shape axis " + std::to_string(a) +
                                      " must be positive, got " + std::to_string(shape[a]));
        if (shape_numel(shape) != data.size())
            throw dimension_error("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
        if (grad && grad->size() != data.size())
            throw dimension_error("tensor grad length " + std::to_string(grad->size()) +
                                  " does not match data length " + std::to_string(data.size()));
    }
};

// Define-by-run compute graph. Every primitive appends one node, so the node
// list is topologically ordered by construction and a single reverse sweep
// implements the backward pass. A tape is confined to one thread.
template <typename Scalar>
class TapeT {
public:
    using Array = typename TensorT<Scalar>::Array;
    using BackwardFn = std::function<void(TapeT&, int)>;

    struct Node {
        std::string op;
        std::vector<int> inputs;
        TensorT<Scalar> value;
        Array grad;  // empty until first accumulation
        bool needs_grad = false;
        BackwardFn backward;
        std::vector<Array> saved;  // forward values kept for the backward pass
    };

    int leaf(TensorT<Scalar> value) {
        Node n;
        n.op = "leaf";
        n.needs_grad = value.requires_grad;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int emit(std::string op, std::vector<int> inputs, TensorT<Scalar> value, BackwardFn backward,
             std::vector<Array> saved = {}) {
        Node n;
        n.op = std::move(op);
        for (int id : inputs) {
            check_id(id);
            n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
        }
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        if (n.needs_grad) n.backward = std::move(backward);
        n.saved = std::move(saved);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const TensorT<Scalar>& value(int id) const {
        check_id(id);
        return nodes_[id].value;
    }

    const Node& node(int id) const {
        check_id(id);
        return nodes_[id];
    }

    std::size_t size() const { return nodes_.size(); }

    bool has_grad(int id) const {
        check_id(id);
        return nodes_[id].grad.size() > 0;
    }

    // Gradient of the last backward() loss w.r.t. node `id`, as a tensor of
    // the node's shape.
    TensorT<Scalar> grad(int id) const {
        check_id(id);
        const Node& n = nodes_[id];
        if (n.grad.size() == 0)
            throw usage_error("no gradient recorded for node " + std::to_string(id) +
                              " (op " + n.op + "); run backward first");
        TensorT<Scalar> g;
        g.shape = n.value.shape;
        g.data = n.grad;
        return g;
    }

    void accumulate(int id, const Array& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0)
            n.grad = Array::Zero(n.value.size());
        n.grad += g;
    }

    // Reverse sweep from a scalar loss node. Each node is visited exactly
    // once, in deterministic order; repeated calls re-run from fresh grads.
    void backward(int loss_id) {
        check_id(loss_id);
        if (nodes_[loss_id].value.size() != 1)
            throw usage_error("backward requires a scalar loss node, got shape " +
                              shape_str(nodes_[loss_id].value.shape));
        for (Node& n : nodes_) n.grad.resize(0);
        nodes_[loss_id].grad = Array::Ones(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, id);
        }
    }

private:
    void check_id(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw usage_error("tape node id " + std::to_string(id) + " out of range");
    }

    std::vector<Node> nodes_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace audit
