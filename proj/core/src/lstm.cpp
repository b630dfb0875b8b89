#include "agcdro/lstm.hpp"

#include "agcdro/error.hpp"

#include <cmath>
#include <random>

namespace agcdro {

namespace {

LstmLayerParams layer_zeros(int in, int hidden)
{
    return {Matrix::Zero(4 * hidden, in), Matrix::Zero(4 * hidden, hidden), Vector::Zero(4 * hidden)};
}

Eigen::Index layer_size(const LstmLayerParams& p)
{
    return p.W.size() + p.R.size() + p.b.size();
}

// Column-major copy in and out of a flat vector.
template <class M>
void put(Vector& flat, Eigen::Index& pos, const M& m)
{
    flat.segment(pos, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    pos += m.size();
}

template <class M>
void take(const Vector& flat, Eigen::Index& pos, M& m)
{
    Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(pos, m.size());
    pos += m.size();
}

Matrix sigmoid(const Matrix& a)
{
    return (1.0 + (-a.array()).exp()).inverse().matrix();
}

void fill_uniform(Matrix& m, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            m(r, c) = dist(rng);
        }
    }
}

void fill_uniform(Vector& v, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < v.size(); ++r) {
        v(r) = dist(rng);
    }
}

} // namespace

LstmParams LstmParams::zeros(const LstmShape& s)
{
    return {layer_zeros(s.inputs, s.hidden1), layer_zeros(s.hidden1, s.hidden2), Matrix::Zero(s.outputs, s.hidden2),
            Vector::Zero(s.outputs)};
}

Eigen::Index LstmParams::size() const
{
    return layer_size(layer1) + layer_size(layer2) + Wy.size() + by.size();
}

Vector LstmParams::flatten() const
{
    Vector flat(size());
    Eigen::Index pos = 0;
    for (const auto* l : {&layer1, &layer2}) {
        put(flat, pos, l->W);
        put(flat, pos, l->R);
        put(flat, pos, l->b);
    }
    put(flat, pos, Wy);
    put(flat, pos, by);
    return flat;
}

void LstmParams::assign(const Vector& flat)
{
    if (flat.size() != size()) {
        throw ContractError("LstmParams::assign: size mismatch");
    }
    Eigen::Index pos = 0;
    for (auto* l : {&layer1, &layer2}) {
        take(flat, pos, l->W);
        take(flat, pos, l->R);
        take(flat, pos, l->b);
    }
    take(flat, pos, Wy);
    take(flat, pos, by);
}

LstmParams init_lstm_params(const LstmShape& s, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    LstmParams p = LstmParams::zeros(s);
    const double b1 = 1.0 / std::sqrt(double(s.inputs + s.hidden1));
    const double b2 = 1.0 / std::sqrt(double(s.hidden1 + s.hidden2));
    const double by = 1.0 / std::sqrt(double(s.hidden2));
    fill_uniform(p.layer1.W, b1, rng);
    fill_uniform(p.layer1.R, b1, rng);
    fill_uniform(p.layer1.b, b1, rng);
    fill_uniform(p.layer2.W, b2, rng);
    fill_uniform(p.layer2.R, b2, rng);
    fill_uniform(p.layer2.b, b2, rng);
    fill_uniform(p.Wy, by, rng);
    fill_uniform(p.by, by, rng);
    return p;
}

LstmNet::LstmNet(LstmShape shape, LstmParams params) : shape_(shape), params_(std::move(params))
{
    if (shape_.inputs <= 0 || shape_.hidden1 <= 0 || shape_.hidden2 <= 0 || shape_.outputs <= 0) {
        throw InputError("LstmNet: sizes must be positive");
    }
    const auto ref = LstmParams::zeros(shape_);
    auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols(); };
    if (!same(params_.layer1.W, ref.layer1.W) || !same(params_.layer1.R, ref.layer1.R) ||
        !same(params_.layer1.b, ref.layer1.b) || !same(params_.layer2.W, ref.layer2.W) ||
        !same(params_.layer2.R, ref.layer2.R) || !same(params_.layer2.b, ref.layer2.b) ||
        !same(params_.Wy, ref.Wy) || !same(params_.by, ref.by)) {
        throw InputError("LstmNet: weight shapes do not match the declared sizes");
    }
}

namespace {

template <class Tape>
void layer_forward(const LstmLayerParams& p, const std::vector<Matrix>& xs, Eigen::Index batch, Tape* tape,
                   std::vector<Matrix>& hs_out)
{
    const auto U = p.R.cols();
    Matrix h = Matrix::Zero(U, batch);
    Matrix c = Matrix::Zero(U, batch);
    hs_out.clear();
    hs_out.reserve(xs.size());
    for (const auto& x : xs) {
        Matrix a = p.W * x + p.R * h;
        a.colwise() += p.b;
        Matrix i = sigmoid(a.topRows(U));
        Matrix f = sigmoid(a.middleRows(U, U));
        Matrix g = a.middleRows(2 * U, U).array().tanh().matrix();
        Matrix o = sigmoid(a.bottomRows(U));
        c = (f.array() * c.array() + i.array() * g.array()).matrix();
        Matrix tc = c.array().tanh().matrix();
        h = (o.array() * tc.array()).matrix();
        hs_out.push_back(h);
        if (tape) {
            tape->i.push_back(std::move(i));
            tape->f.push_back(std::move(f));
            tape->g.push_back(std::move(g));
            tape->o.push_back(std::move(o));
            tape->c.push_back(c);
            tape->h.push_back(h);
            tape->tanh_c.push_back(std::move(tc));
        }
    }
}

// dh_ext[t] is the external gradient on h_t (may be empty for "none"); returns dL/dx_t.
template <class Tape>
std::vector<Matrix> layer_backward(const LstmLayerParams& p, const std::vector<Matrix>& xs, const Tape& tape,
                                   const std::vector<Matrix>& dh_ext, LstmLayerParams& grad, bool need_dx)
{
    const auto U = p.R.cols();
    const auto T = xs.size();
    const auto B = xs.front().cols();
    Matrix dh_next = Matrix::Zero(U, B);
    Matrix dc_next = Matrix::Zero(U, B);
    Matrix da(4 * U, B);
    std::vector<Matrix> dxs(need_dx ? T : 0);
    for (std::size_t k = T; k-- > 0;) {
        Matrix dh = dh_next;
        if (dh_ext[k].size() != 0) {
            dh += dh_ext[k];
        }
        const auto& i = tape.i[k].array();
        const auto& f = tape.f[k].array();
        const auto& g = tape.g[k].array();
        const auto& o = tape.o[k].array();
        const auto& tc = tape.tanh_c[k].array();
        const Matrix dc = (dc_next.array() + dh.array() * o * (1.0 - tc.square())).matrix();
        const auto dca = dc.array();
        da.topRows(U) = (dca * g * i * (1.0 - i)).matrix();
        if (k > 0) {
            da.middleRows(U, U) = (dca * tape.c[k - 1].array() * f * (1.0 - f)).matrix();
        } else {
            da.middleRows(U, U).setZero();
        }
        da.middleRows(2 * U, U) = (dca * i * (1.0 - g.square())).matrix();
        da.bottomRows(U) = (dh.array() * tc * o * (1.0 - o)).matrix();
        dc_next = (dca * f).matrix();

        grad.W.noalias() += da * xs[k].transpose();
        if (k > 0) {
            grad.R.noalias() += da * tape.h[k - 1].transpose();
        }
        grad.b.noalias() += da.rowwise().sum();
        dh_next.noalias() = p.R.transpose() * da;
        if (need_dx) {
            dxs[k].noalias() = p.W.transpose() * da;
        }
    }
    return dxs;
}

} // namespace

Matrix LstmNet::run(const SequenceBatch& xs, Tape* tape) const
{
    if (xs.empty()) {
        throw InputError("LstmNet: empty sequence");
    }
    const auto B = xs.front().cols();
    for (const auto& x : xs) {
        if (x.rows() != shape_.inputs || x.cols() != B) {
            throw InputError("LstmNet: input batch shape mismatch");
        }
    }
    std::vector<Matrix> h1, h2;
    layer_forward(params_.layer1, xs, B, tape ? &tape->l1 : static_cast<LayerTape*>(nullptr), h1);
    layer_forward(params_.layer2, h1, B, tape ? &tape->l2 : static_cast<LayerTape*>(nullptr), h2);
    if (tape) {
        tape->xs = &xs;
    }
    Matrix Y = params_.Wy * h2.back();
    Y.colwise() += params_.by;
    return Y;
}

Matrix LstmNet::forward(const SequenceBatch& xs) const
{
    return run(xs, nullptr);
}

void LstmNet::backward(const Tape& tape, const Matrix& dY, LstmParams& grad) const
{
    if (grad.size() != params_.size()) {
        grad = LstmParams::zeros(shape_);
    }
    const auto T = tape.xs->size();
    const Matrix& h2_last = tape.l2.h.back();
    grad.Wy.noalias() += dY * h2_last.transpose();
    grad.by.noalias() += dY.rowwise().sum();

    std::vector<Matrix> dh2(T);
    dh2.back() = params_.Wy.transpose() * dY;
    const auto dh1 = layer_backward(params_.layer2, tape.l1.h, tape.l2, dh2, grad.layer2, true);
    layer_backward(params_.layer1, *tape.xs, tape.l1, dh1, grad.layer1, false);
}

} // namespace agcdro
