#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Graph records operations as they are evaluated; backward() replays them in
// reverse to accumulate gradients into the Parameters that took part. Graphs
// are single-use: build one per forward pass.

#include "fairflow/matrix.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fairflow::nn {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad.fill(0.0); }
};

struct Var {
    std::size_t id = 0;
};

// A contiguous run of rows belonging to one sequence in a packed batch.
struct Segment {
    std::size_t offset = 0;
    std::size_t length = 0;
};

class Graph {
public:
    // With record = false no backward closures are kept (inference).
    explicit Graph(bool record = true) : record_(record) {}

    Var input(Matrix m);
    Var param(Parameter& p);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to parameters.
    void backward(Var out);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_row(Var a, Var row);
    Var tanh(Var a);
    Var gelu(Var a);
    Var relu(Var a);
    Var exp(Var a);
    Var slice_cols(Var a, std::size_t start, std::size_t count);
    Var concat_cols(Var a, Var b);
    // out[:, j] = a[:, index[j]]
    Var gather_cols(Var a, std::span<const std::size_t> index);
    Var sum(Var a);
    Var row_sum(Var a);
    Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
    Var embedding(Var table, std::span<const std::size_t> ids);
    // Multi-head scaled dot-product attention over packed sequences. Segment b
    // of q attends to segment b of k/v only. With causal set, query row i of a
    // segment sees key rows 0..i of the same segment.
    Var attention(Var q, Var k, Var v, std::vector<Segment> q_segments,
                  std::vector<Segment> k_segments, std::size_t heads, bool causal);
    // Sum over rows of -log softmax(logits)[target].
    Var cross_entropy(Var logits, std::span<const std::size_t> targets);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var push(Matrix value, bool requires_grad);
    bool needs(Var v) const { return record_ && nodes_[v.id].requires_grad; }
    Matrix& grad_buffer(std::size_t id);

    bool record_;
    std::vector<Node> nodes_;
};

double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace fairflow::nn
