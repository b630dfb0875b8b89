#pragma once

#include "agcdro/frm_model.hpp"

#include <cstdint>
#include <vector>

namespace agcdro {

struct LstmShape {
    int inputs = 4;
    int hidden1 = 32;
    int hidden2 = 32;
    int outputs = 200;
};

/// Gate rows are stacked as [input, forget, cell, output].
struct LstmLayerParams {
    Matrix W;  // 4U x inputs
    Matrix R;  // 4U x U
    Vector b;  // 4U
};

struct LstmParams {
    LstmLayerParams layer1;
    LstmLayerParams layer2;
    Matrix Wy;  // outputs x hidden2
    Vector by;

    static LstmParams zeros(const LstmShape& shape);
    [[nodiscard]] Eigen::Index size() const;
    [[nodiscard]] Vector flatten() const;
    void assign(const Vector& flat);
};

/// Uniform in +-1/sqrt(fan_in) from a seeded engine.
LstmParams init_lstm_params(const LstmShape& shape, std::uint64_t seed);

/// A batch of sequences: one inputs x B matrix per time step.
using SequenceBatch = std::vector<Matrix>;

class LstmNet {
public:
    LstmNet() = default;
    LstmNet(LstmShape shape, LstmParams params);

    [[nodiscard]] const LstmShape& shape() const { return shape_; }
    [[nodiscard]] const LstmParams& params() const { return params_; }
    LstmParams& params() { return params_; }

    /// outputs x B raw (unsorted) output of the linear head.
    [[nodiscard]] Matrix forward(const SequenceBatch& xs) const;

    /// Forward pass, then backpropagation through time of dL/dY supplied by `loss_grad`,
    /// which receives Y and must fill dY and return the loss.
    template <class LossGrad>
    double loss_and_gradient(const SequenceBatch& xs, LossGrad&& loss_grad, LstmParams& grad) const
    {
        Tape tape;
        const Matrix Y = run(xs, &tape);
        Matrix dY = Matrix::Zero(Y.rows(), Y.cols());
        const double loss = loss_grad(Y, dY);
        backward(tape, dY, grad);
        return loss;
    }

private:
    struct LayerTape {
        std::vector<Matrix> i, f, g, o, c, h, tanh_c;
    };
    struct Tape {
        const SequenceBatch* xs = nullptr;
        LayerTape l1, l2;
    };

    Matrix run(const SequenceBatch& xs, Tape* tape) const;
    void backward(const Tape& tape, const Matrix& dY, LstmParams& grad) const;

    LstmShape shape_;
    LstmParams params_;
};

} // namespace agcdro
