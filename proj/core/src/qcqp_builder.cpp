#include "agcdro/qcqp_builder.hpp"

#include "agcdro/error.hpp"

#include <algorithm>
#include <map>

namespace agcdro {

namespace {

// Merges repeated indices and drops zero coefficients.
std::vector<std::pair<Eigen::Index, double>> compact(const AffineExpr& e)
{
    std::map<Eigen::Index, double> m;
    for (const auto& [i, v] : e.terms) {
        m[i] += v;
    }
    std::vector<std::pair<Eigen::Index, double>> out;
    for (const auto& [i, v] : m) {
        if (v != 0.0) {
            out.emplace_back(i, v);
        }
    }
    return out;
}

SparseMatrix rows_to_sparse(const std::vector<AffineExpr>& rows, Eigen::Index n, Vector& rhs)
{
    std::vector<Eigen::Triplet<double>> t;
    rhs.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& [i, v] : compact(rows[r])) {
            t.emplace_back(static_cast<Eigen::Index>(r), i, v);
        }
        rhs(static_cast<Eigen::Index>(r)) = -rows[r].constant;
    }
    SparseMatrix M(static_cast<Eigen::Index>(rows.size()), n);
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

} // namespace

AffineExpr& AffineExpr::operator+=(const AffineExpr& o)
{
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
}

AffineExpr& AffineExpr::operator*=(double s)
{
    for (auto& t : terms) {
        t.second *= s;
    }
    constant *= s;
    return *this;
}

double AffineExpr::eval(const Vector& x) const
{
    double v = constant;
    for (const auto& [i, c] : terms) {
        v += c * x(i);
    }
    return v;
}

AffineExpr operator+(AffineExpr a, const AffineExpr& b)
{
    a += b;
    return a;
}

AffineExpr operator-(AffineExpr a, const AffineExpr& b)
{
    AffineExpr nb = b;
    nb *= -1.0;
    a += nb;
    return a;
}

AffineExpr operator*(double s, AffineExpr a)
{
    a *= s;
    return a;
}

Eigen::Index QcqpBuilder::add_block(const std::string& name, Eigen::Index size, double lb, double ub)
{
    if (size < 0 || lb > ub) {
        throw InputError("qcqp builder: bad block '" + name + "'");
    }
    for (const auto& b : blocks_) {
        if (b.name == name) {
            throw InputError("qcqp builder: duplicate block name '" + name + "'");
        }
    }
    const auto start = n_;
    blocks_.push_back({name, start, size});
    lb_.insert(lb_.end(), static_cast<std::size_t>(size), lb);
    ub_.insert(ub_.end(), static_cast<std::size_t>(size), ub);
    n_ += size;
    return start;
}

const VarBlock& QcqpBuilder::block(const std::string& name) const
{
    for (const auto& b : blocks_) {
        if (b.name == name) {
            return b;
        }
    }
    throw InputError("qcqp builder: no block named '" + name + "'");
}

void QcqpBuilder::add_objective(const AffineExpr& e)
{
    for (const auto& t : e.terms) {
        c_.push_back(t);
    }
    c0_ += e.constant;
}

void QcqpBuilder::add_objective_square(const AffineExpr& e, double weight)
{
    if (weight < 0.0) {
        throw InputError("qcqp builder: negative weight on a squared objective term");
    }
    const auto terms = compact(e);
    for (const auto& [i, a] : terms) {
        for (const auto& [j, b] : terms) {
            P_.emplace_back(i, j, 2.0 * weight * a * b);
        }
        c_.emplace_back(i, 2.0 * weight * e.constant * a);
    }
    c0_ += weight * e.constant * e.constant;
}

void QcqpBuilder::add_le(const AffineExpr& e)
{
    le_.push_back(e);
}

void QcqpBuilder::add_eq(const AffineExpr& e)
{
    eq_.push_back(e);
}

void QcqpBuilder::add_quad_le(const std::vector<std::pair<AffineExpr, double>>& squares, const AffineExpr& lin,
                              const std::string& name)
{
    Quad q;
    q.name = name;
    q.lin = lin;
    for (const auto& [e, w] : squares) {
        if (w < 0.0) {
            throw InputError("qcqp builder: negative weight in quadratic constraint '" + name + "'");
        }
        const auto terms = compact(e);
        for (const auto& [i, a] : terms) {
            for (const auto& [j, b] : terms) {
                q.Q.emplace_back(i, j, 2.0 * w * a * b);
            }
            q.lin.add(i, 2.0 * w * e.constant * a);
        }
        q.lin.constant += w * e.constant * e.constant;
    }
    quad_.push_back(std::move(q));
}

QcqpProblem QcqpBuilder::build() const
{
    QcqpProblem p = QcqpProblem::empty(n_);
    p.blocks = blocks_;
    p.lb = Eigen::Map<const Vector>(lb_.data(), n_);
    p.ub = Eigen::Map<const Vector>(ub_.data(), n_);
    p.P.setFromTriplets(P_.begin(), P_.end());
    for (const auto& [i, v] : c_) {
        p.c(i) += v;
    }
    p.c0 = c0_;
    p.A_eq = rows_to_sparse(eq_, n_, p.b_eq);
    p.G_in = rows_to_sparse(le_, n_, p.h_in);
    for (const auto& q : quad_) {
        QuadConstraint qc;
        qc.name = q.name;
        qc.Q = SparseMatrix(n_, n_);
        qc.Q.setFromTriplets(q.Q.begin(), q.Q.end());
        qc.a = Vector::Zero(n_);
        for (const auto& [i, v] : q.lin.terms) {
            qc.a(i) += v;
        }
        qc.b = q.lin.constant;
        p.quad.push_back(std::move(qc));
    }
    return p;
}

} // namespace agcdro
