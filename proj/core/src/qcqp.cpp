#include "agcdro/qcqp.hpp"

#include "agcdro/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <unordered_map>

namespace agcdro {

namespace {

double inf_norm(const Vector& v)
{
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

bool is_psd(const SparseMatrix& Q, double floor, double& min_eig)
{
    // Only the rows/columns that carry entries matter.
    std::vector<Eigen::Index> support;
    std::vector<char> used(static_cast<std::size_t>(Q.cols()), 0);
    for (Eigen::Index k = 0; k < Q.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(Q, k); it; ++it) {
            used[static_cast<std::size_t>(it.row())] = 1;
            used[static_cast<std::size_t>(it.col())] = 1;
        }
    }
    for (Eigen::Index i = 0; i < Q.cols(); ++i) {
        if (used[static_cast<std::size_t>(i)]) {
            support.push_back(i);
        }
    }
    min_eig = 0.0;
    if (support.empty()) {
        return true;
    }
    const auto k = static_cast<Eigen::Index>(support.size());
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(Q.cols()), -1);
    for (Eigen::Index i = 0; i < k; ++i) {
        pos[static_cast<std::size_t>(support[static_cast<std::size_t>(i)])] = i;
    }
    Matrix D = Matrix::Zero(k, k);
    for (Eigen::Index c = 0; c < Q.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(Q, c); it; ++it) {
            D(pos[static_cast<std::size_t>(it.row())], pos[static_cast<std::size_t>(it.col())]) += it.value();
        }
    }
    if (!D.isApprox(D.transpose(), 1e-12) && (D - D.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        min_eig = -kInf;
        return false;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(D, Eigen::EigenvaluesOnly);
    min_eig = es.eigenvalues().minCoeff();
    return min_eig >= floor * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
}

} // namespace

QcqpProblem QcqpProblem::empty(Eigen::Index n)
{
    QcqpProblem p;
    p.n = n;
    p.lb = Vector::Constant(n, -kInf);
    p.ub = Vector::Constant(n, kInf);
    p.P = SparseMatrix(n, n);
    p.c = Vector::Zero(n);
    p.A_eq = SparseMatrix(0, n);
    p.b_eq = Vector(0);
    p.G_in = SparseMatrix(0, n);
    p.h_in = Vector(0);
    return p;
}

void QcqpProblem::validate() const
{
    auto fail = [](const std::string& what) { throw InputError("qcqp: " + what); };
    if (n < 0 || lb.size() != n || ub.size() != n || c.size() != n || P.rows() != n || P.cols() != n) {
        fail("objective or bound dimensions inconsistent with n = " + std::to_string(n));
    }
    if (A_eq.cols() != n || A_eq.rows() != b_eq.size()) {
        fail("equality block dimensions inconsistent");
    }
    if (G_in.cols() != n || G_in.rows() != h_in.size()) {
        fail("inequality block dimensions inconsistent");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::isnan(lb(i)) || std::isnan(ub(i)) || lb(i) > ub(i) || lb(i) == kInf || ub(i) == -kInf) {
            fail("variable " + std::to_string(i) + " has an empty or invalid bound interval");
        }
    }
    if (!c.allFinite() || !b_eq.allFinite() || !h_in.allFinite() || !std::isfinite(c0)) {
        fail("non-finite data");
    }
    double min_eig = 0.0;
    if (!is_psd(P, -1e-10, min_eig)) {
        fail("objective matrix is not positive semidefinite (min eigenvalue " + std::to_string(min_eig) + ")");
    }
    for (std::size_t k = 0; k < quad.size(); ++k) {
        const auto& q = quad[k];
        if (q.Q.rows() != n || q.Q.cols() != n || q.a.size() != n || !std::isfinite(q.b) || !q.a.allFinite()) {
            fail("quadratic constraint " + std::to_string(k) + " has inconsistent dimensions or non-finite data");
        }
        if (!is_psd(q.Q, -1e-10, min_eig)) {
            fail("quadratic constraint " + std::to_string(k) + (q.name.empty() ? "" : " (" + q.name + ")") +
                 " is not convex: min eigenvalue " + std::to_string(min_eig));
        }
    }
    for (const auto& b : blocks) {
        if (b.start < 0 || b.size < 0 || b.start + b.size > n) {
            fail("variable block '" + b.name + "' lies outside the variable range");
        }
    }
}

double QcqpProblem::objective(const Vector& x) const
{
    return 0.5 * x.dot(P * x) + c.dot(x) + c0;
}

const VarBlock& QcqpProblem::block(const std::string& name) const
{
    for (const auto& b : blocks) {
        if (b.name == name) {
            return b;
        }
    }
    throw InputError("qcqp: no variable block named '" + name + "'");
}

std::string to_string(QcqpStatus s)
{
    switch (s) {
    case QcqpStatus::Optimal:
        return "optimal";
    case QcqpStatus::Infeasible:
        return "infeasible";
    case QcqpStatus::MaxIter:
        return "max_iter";
    }
    return "unknown";
}

double KktResiduals::max() const
{
    return std::max({stationarity, primal, complementarity});
}

KktResiduals kkt_residual(const QcqpProblem& p, const Vector& x, const QcqpDuals& d)
{
    const auto n = p.n;
    if (x.size() != n || d.y_eq.size() != p.A_eq.rows() || d.z_in.size() != p.G_in.rows() ||
        d.nu_quad.size() != static_cast<Eigen::Index>(p.quad.size()) || d.z_lb.size() != n || d.z_ub.size() != n) {
        throw InputError("kkt_residual: candidate shapes do not match the problem");
    }
    Vector grad = p.P * x + p.c;
    grad += p.A_eq.transpose() * d.y_eq;
    grad += p.G_in.transpose() * d.z_in;
    grad += d.z_ub - d.z_lb;
    double sign_violation = 0.0;
    double compl_sum = 0.0;
    double primal = 0.0;

    for (std::size_t k = 0; k < p.quad.size(); ++k) {
        const auto& q = p.quad[k];
        const double nu = d.nu_quad(static_cast<Eigen::Index>(k));
        const Vector Qx = q.Q * x;
        grad += nu * (Qx + q.a);
        const double g = 0.5 * x.dot(Qx) + q.a.dot(x) + q.b;
        primal = std::max(primal, g);
        sign_violation = std::max(sign_violation, -nu);
        compl_sum += std::abs(nu * g);
    }
    if (p.A_eq.rows() > 0) {
        primal = std::max(primal, inf_norm(p.A_eq * x - p.b_eq));
    }
    if (p.G_in.rows() > 0) {
        const Vector slack = p.G_in * x - p.h_in;
        primal = std::max(primal, slack.maxCoeff());
        for (Eigen::Index i = 0; i < slack.size(); ++i) {
            sign_violation = std::max(sign_violation, -d.z_in(i));
            compl_sum += std::abs(d.z_in(i) * slack(i));
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        sign_violation = std::max({sign_violation, -d.z_lb(i), -d.z_ub(i)});
        if (std::isfinite(p.lb(i))) {
            primal = std::max(primal, p.lb(i) - x(i));
            compl_sum += std::abs(d.z_lb(i) * (x(i) - p.lb(i)));
        } else {
            sign_violation = std::max(sign_violation, std::abs(d.z_lb(i)));
        }
        if (std::isfinite(p.ub(i))) {
            primal = std::max(primal, x(i) - p.ub(i));
            compl_sum += std::abs(d.z_ub(i) * (p.ub(i) - x(i)));
        } else {
            sign_violation = std::max(sign_violation, std::abs(d.z_ub(i)));
        }
    }

    KktResiduals r;
    r.stationarity = std::max(inf_norm(grad), sign_violation) / (1.0 + inf_norm(p.c));
    r.primal = std::max(primal, 0.0) / (1.0 + std::max(inf_norm(p.b_eq), inf_norm(p.h_in)));
    r.complementarity = compl_sum / (1.0 + std::abs(p.objective(x)));
    return r;
}

namespace {

// ---------------------------------------------------------------------------
// Cone program: minimize 0.5 x'Px + c'x  s.t.  Ax = b,  Gx + s = h,  s in K
// K = nonnegative orthant (first l rows) x second-order cones.

struct ConeDims {
    Eigen::Index l = 0;
    std::vector<Eigen::Index> soc;

    [[nodiscard]] Eigen::Index rows() const
    {
        Eigen::Index m = l;
        for (auto q : soc) {
            m += q;
        }
        return m;
    }
    [[nodiscard]] double degree() const { return double(l) + double(soc.size()); }
};

struct ConeProblem {
    SparseMatrix P;
    Vector c;
    SparseMatrix A;
    Vector b;
    SparseMatrix G;
    Vector h;
    ConeDims dims;
};

enum class ConeStatus { Optimal, Stalled, MaxIter };

struct ConeIterate {
    Vector x, y, z, s;
};

struct ConeResult {
    ConeStatus status = ConeStatus::MaxIter;
    ConeIterate it;
    int iterations = 0;
    std::vector<IterateRecord> trace;
};

// Applies f(offset, size) to every second-order-cone block.
template <class F>
void for_each_soc(const ConeDims& dims, F&& f)
{
    Eigen::Index off = dims.l;
    for (auto q : dims.soc) {
        f(off, q);
        off += q;
    }
}

double soc_det_sqrt(const Eigen::Ref<const Vector>& u)
{
    const double nb = u.tail(u.size() - 1).norm();
    return std::sqrt(std::max((u(0) - nb) * (u(0) + nb), 0.0));
}

// Largest t with u + t e in the closure of K, negated: max over blocks of -lambda_min(u).
double max_neg_eig(const Vector& u, const ConeDims& dims)
{
    double t = -kInf;
    for (Eigen::Index i = 0; i < dims.l; ++i) {
        t = std::max(t, -u(i));
    }
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        t = std::max(t, u.segment(off + 1, q - 1).norm() - u(off));
    });
    return t;
}

void add_identity(Vector& u, const ConeDims& dims, double t)
{
    u.head(dims.l).array() += t;
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index) { u(off) += t; });
}

// Jordan product u o v.
Vector jordan(const Vector& u, const Vector& v, const ConeDims& dims)
{
    Vector w(u.size());
    w.head(dims.l) = u.head(dims.l).cwiseProduct(v.head(dims.l));
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        w(off) = u.segment(off, q).dot(v.segment(off, q));
        w.segment(off + 1, q - 1) = u(off) * v.segment(off + 1, q - 1) + v(off) * u.segment(off + 1, q - 1);
    });
    return w;
}

// Solves lambda o x = r.
Vector jordan_div(const Vector& lambda, const Vector& r, const ConeDims& dims)
{
    Vector x(r.size());
    x.head(dims.l) = r.head(dims.l).cwiseQuotient(lambda.head(dims.l));
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        const double l0 = lambda(off);
        const auto lb = lambda.segment(off + 1, q - 1);
        const double det = (l0 - lb.norm()) * (l0 + lb.norm());
        const double x0 = (l0 * r(off) - lb.dot(r.segment(off + 1, q - 1))) / det;
        x(off) = x0;
        x.segment(off + 1, q - 1) = (r.segment(off + 1, q - 1) - x0 * lb) / l0;
    });
    return x;
}

// Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s = lambda.
struct Scaling {
    Vector d;                     // orthant part: sqrt(s / z)
    std::vector<double> beta;     // per cone
    std::vector<Vector> v;        // per cone, W = beta (2 v v' - J)
    ConeDims dims;

    [[nodiscard]] Vector apply(const Vector& u) const
    {
        Vector w(u.size());
        w.head(dims.l) = d.cwiseProduct(u.head(dims.l));
        std::size_t k = 0;
        for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
            const auto& vk = v[k];
            const auto uk = u.segment(off, q);
            Vector Ju = uk;
            Ju.tail(q - 1) *= -1.0;
            w.segment(off, q) = beta[k] * (2.0 * vk.dot(uk) * vk - Ju);
            ++k;
        });
        return w;
    }

    [[nodiscard]] Vector apply_inverse(const Vector& u) const
    {
        Vector w(u.size());
        w.head(dims.l) = u.head(dims.l).cwiseQuotient(d);
        std::size_t k = 0;
        for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
            Vector Jv = v[k];
            Jv.tail(q - 1) *= -1.0;
            const auto uk = u.segment(off, q);
            Vector Ju = uk;
            Ju.tail(q - 1) *= -1.0;
            w.segment(off, q) = (2.0 * Jv.dot(uk) * Jv - Ju) / beta[k];
            ++k;
        });
        return w;
    }

    /// Dense W^2 for cone k.
    [[nodiscard]] Matrix soc_square(std::size_t k) const
    {
        const auto q = v[k].size();
        Matrix J = Matrix::Identity(q, q);
        J.bottomRightCorner(q - 1, q - 1) *= -1.0;
        const Matrix W = beta[k] * (2.0 * v[k] * v[k].transpose() - J);
        return W * W;
    }
};

Scaling nt_scaling(const Vector& s, const Vector& z, const ConeDims& dims)
{
    Scaling W;
    W.dims = dims;
    W.d = (s.head(dims.l).array() / z.head(dims.l).array()).sqrt().matrix();
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        const auto sk = s.segment(off, q);
        const auto zk = z.segment(off, q);
        const double sn = soc_det_sqrt(sk);
        const double zn = soc_det_sqrt(zk);
        const Vector sb = sk / sn;
        const Vector zb = zk / zn;
        const double gamma = std::sqrt(std::max((1.0 + sb.dot(zb)) / 2.0, 0.0));
        Vector Jzb = zb;
        Jzb.tail(q - 1) *= -1.0;
        Vector wb = (sb + Jzb) / (2.0 * gamma);
        Vector vk = wb;
        vk(0) += 1.0;
        vk /= std::sqrt(2.0 * (wb(0) + 1.0));
        W.beta.push_back(std::sqrt(sn / zn));
        W.v.push_back(std::move(vk));
    });
    return W;
}

// Largest alpha with u + alpha du in K (may be +inf).
// Largest vector part of s o z over the SOC blocks. It vanishes on the central path; when it
// is large against the gap the recovered quadratic multipliers lose accuracy.
double soc_off_center(const Vector& s, const Vector& z, const ConeDims& dims)
{
    double worst = 0.0;
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        const Vector w = s(off) * z.segment(off + 1, q - 1) + z(off) * s.segment(off + 1, q - 1);
        worst = std::max(worst, w.norm());
    });
    return worst;
}

double max_step(const Vector& u, const Vector& du, const ConeDims& dims)
{
    double alpha = kInf;
    for (Eigen::Index i = 0; i < dims.l; ++i) {
        if (du(i) < 0.0) {
            alpha = std::min(alpha, -u(i) / du(i));
        }
    }
    for_each_soc(dims, [&](Eigen::Index off, Eigen::Index q) {
        const double u0 = u(off);
        const double d0 = du(off);
        const auto ub = u.segment(off + 1, q - 1);
        const auto db = du.segment(off + 1, q - 1);
        const double nu = ub.norm();
        const double c = (u0 - nu) * (u0 + nu);
        const double b = 2.0 * (u0 * d0 - ub.dot(db));
        const double a = d0 * d0 - db.squaredNorm();
        auto consider = [&](double r) {
            if (r > 0.0 && std::isfinite(r)) {
                alpha = std::min(alpha, r);
            }
        };
        if (std::abs(a) <= 1e-300) {
            if (b < 0.0) {
                consider(-c / b);
            }
            return;
        }
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) {
            return;
        }
        const double sq = std::sqrt(disc);
        const double qq = -0.5 * (b + (b >= 0.0 ? sq : -sq));
        if (qq != 0.0) {
            consider(qq / a);
            consider(c / qq);
        } else {
            consider(sq / (2.0 * std::abs(a)));
        }
    });
    return alpha;
}

// Regularized quasi-definite KKT matrix, pattern fixed at construction.
class KktSolver {
public:
    KktSolver(const ConeProblem& cp, double delta) : cp_(cp), delta_(delta), reg_(delta)
    {
        n_ = cp.P.rows();
        p_ = cp.A.rows();
        m_ = cp.G.rows();
        const auto N = n_ + p_ + m_;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(cp.P.nonZeros() + cp.A.nonZeros() + cp.G.nonZeros() + N));
        for (Eigen::Index k = 0; k < cp.P.outerSize(); ++k) {
            for (SparseMatrix::InnerIterator it(cp.P, k); it; ++it) {
                if (it.row() >= it.col()) {
                    trip.emplace_back(it.row(), it.col(), it.value());
                }
            }
        }
        for (Eigen::Index i = 0; i < n_; ++i) {
            trip.emplace_back(i, i, delta_);
        }
        for (Eigen::Index k = 0; k < cp.A.outerSize(); ++k) {
            for (SparseMatrix::InnerIterator it(cp.A, k); it; ++it) {
                trip.emplace_back(n_ + it.row(), it.col(), it.value());
            }
        }
        for (Eigen::Index i = 0; i < p_; ++i) {
            trip.emplace_back(n_ + i, n_ + i, -delta_);
        }
        for (Eigen::Index k = 0; k < cp.G.outerSize(); ++k) {
            for (SparseMatrix::InnerIterator it(cp.G, k); it; ++it) {
                trip.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
            }
        }
        const auto zo = n_ + p_;
        for (Eigen::Index i = 0; i < cp.dims.l; ++i) {
            trip.emplace_back(zo + i, zo + i, -1.0);
        }
        for_each_soc(cp.dims, [&](Eigen::Index off, Eigen::Index q) {
            for (Eigen::Index c = 0; c < q; ++c) {
                for (Eigen::Index r = c; r < q; ++r) {
                    trip.emplace_back(zo + off + r, zo + off + c, r == c ? -1.0 : 0.0);
                }
            }
        });
        K_.resize(N, N);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();

        // Remember where the regularized diagonal and the scaling block live so they can be
        // overwritten in place.
        for (Eigen::Index i = 0; i < n_ + p_; ++i) {
            diag_.push_back(value_index(i, i));
        }
        for (Eigen::Index i = 0; i < n_; ++i) {
            p_diag_.push_back(K_.valuePtr()[diag_[static_cast<std::size_t>(i)]] - delta_);
        }
        for (Eigen::Index i = 0; i < cp.dims.l; ++i) {
            slots_.push_back(value_index(zo + i, zo + i));
        }
        for_each_soc(cp.dims, [&](Eigen::Index off, Eigen::Index q) {
            for (Eigen::Index c = 0; c < q; ++c) {
                for (Eigen::Index r = c; r < q; ++r) {
                    slots_.push_back(value_index(zo + off + r, zo + off + c));
                }
            }
        });
        ldlt_.analyzePattern(K_);
    }

    // A pivot can still vanish through cancellation late in the iteration; retry with a
    // stronger regularization, which the refinement in solve() then removes.
    bool factor(const Scaling& W)
    {
        for (reg_ = delta_; reg_ <= 1e-5; reg_ *= 100.0) {
            double* val = K_.valuePtr();
            for (Eigen::Index i = 0; i < n_; ++i) {
                val[diag_[static_cast<std::size_t>(i)]] = p_diag_[static_cast<std::size_t>(i)] + reg_;
            }
            for (Eigen::Index i = 0; i < p_; ++i) {
                val[diag_[static_cast<std::size_t>(n_ + i)]] = -reg_;
            }
            std::size_t s = 0;
            for (Eigen::Index i = 0; i < cp_.dims.l; ++i) {
                val[slots_[s++]] = -(W.d(i) * W.d(i) + reg_);
            }
            for (std::size_t k = 0; k < cp_.dims.soc.size(); ++k) {
                const Matrix W2 = W.soc_square(k);
                const auto q = W2.rows();
                for (Eigen::Index c = 0; c < q; ++c) {
                    for (Eigen::Index r = c; r < q; ++r) {
                        val[slots_[s++]] = -W2(r, c) - (r == c ? reg_ : 0.0);
                    }
                }
            }
            ldlt_.factorize(K_);
            if (ldlt_.info() == Eigen::Success && ldlt_.vectorD().allFinite()) {
                return true;
            }
        }
        return false;
    }

    // Solves the unregularized system with iterative refinement.
    void solve(const Vector& rx, const Vector& ry, const Vector& rz, Vector& dx, Vector& dy, Vector& dz) const
    {
        Vector rhs(n_ + p_ + m_);
        rhs << rx, ry, rz;
        Vector sol = ldlt_.solve(rhs);
        const double scale = 1.0 + inf_norm(rhs);
        for (int k = 0; k < 5; ++k) {
            const Vector res = rhs - apply_exact(sol);
            if (inf_norm(res) <= 1e-14 * scale) {
                break;
            }
            sol += ldlt_.solve(res);
        }
        dx = sol.head(n_);
        dy = sol.segment(n_, p_);
        dz = sol.tail(m_);
    }

private:
    std::ptrdiff_t value_index(Eigen::Index r, Eigen::Index c) const
    {
        const auto* outer = K_.outerIndexPtr();
        const auto* inner = K_.innerIndexPtr();
        const auto begin = inner + outer[c];
        const auto end = inner + outer[c + 1];
        const auto it = std::lower_bound(begin, end, static_cast<int>(r));
        if (it == end || *it != r) {
            throw NumericalError("qcqp: KKT pattern lookup failed");
        }
        return it - inner;
    }

    Vector apply_exact(const Vector& v) const
    {
        Vector out = K_.selfadjointView<Eigen::Lower>() * v;
        out.head(n_) -= reg_ * v.head(n_);
        out.segment(n_, p_) += reg_ * v.segment(n_, p_);
        out.tail(m_) += reg_ * v.tail(m_);
        return out;
    }

    const ConeProblem& cp_;
    double delta_;
    double reg_;
    Eigen::Index n_ = 0, p_ = 0, m_ = 0;
    SparseMatrix K_;
    std::vector<std::ptrdiff_t> diag_;
    std::vector<double> p_diag_;
    std::vector<std::ptrdiff_t> slots_;
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

struct ConeMetrics {
    double pobj = 0.0, dobj = 0.0, pres = 0.0, dres = 0.0, gap = 0.0, relgap = 0.0;
};

ConeMetrics cone_metrics(const ConeProblem& cp, const ConeIterate& it, Vector& rx, Vector& ry, Vector& rz)
{
    const Vector Px = cp.P * it.x;
    rx = Px + cp.c + cp.A.transpose() * it.y + cp.G.transpose() * it.z;
    ry = cp.A * it.x - cp.b;
    rz = cp.G * it.x + it.s - cp.h;
    ConeMetrics m;
    m.pobj = 0.5 * it.x.dot(Px) + cp.c.dot(it.x);
    m.gap = it.s.dot(it.z);
    m.dobj = m.pobj + it.y.dot(ry) + it.z.dot(rz) - m.gap;
    m.pres = std::max(inf_norm(ry) / (1.0 + inf_norm(cp.b)), inf_norm(rz) / (1.0 + inf_norm(cp.h)));
    m.dres = inf_norm(rx) / (1.0 + inf_norm(cp.c));
    // Scaled by the objective itself so that small optimal values still get relative accuracy.
    m.relgap = std::abs(m.gap) / std::max(1e-2, std::abs(m.pobj));
    return m;
}

ConeResult cone_qp(const ConeProblem& cp, const QcqpOptions& opts,
                   const std::function<bool(const ConeIterate&)>& accept)
{
    const auto m = cp.G.rows();
    const auto& dims = cp.dims;
    KktSolver kkt(cp, opts.regularization);

    ConeResult res;
    ConeIterate cur;
    {
        Scaling I;
        I.dims = dims;
        I.d = Vector::Ones(dims.l);
        for (auto q : dims.soc) {
            Vector e = Vector::Zero(q);
            e(0) = 1.0;
            I.beta.push_back(1.0);
            I.v.push_back(e);
        }
        if (!kkt.factor(I)) {
            throw NumericalError("qcqp: initial KKT factorization failed");
        }
        Vector z;
        kkt.solve(-cp.c, cp.b, cp.h, cur.x, cur.y, z);
        cur.s = -z;
        cur.z = z;
        const double ts = max_neg_eig(cur.s, dims);
        const double tz = max_neg_eig(cur.z, dims);
        if (m > 0) {
            if (ts >= -1e-8 * std::max(1.0, cur.s.norm())) {
                add_identity(cur.s, dims, 1.0 + ts);
            }
            if (tz >= -1e-8 * std::max(1.0, cur.z.norm())) {
                add_identity(cur.z, dims, 1.0 + tz);
            }
        }
    }

    ConeIterate best = cur;
    double best_merit = kInf;
    int small_steps = 0;
    std::vector<double> pres_hist;
    Vector rx, ry, rz;
    const double target = 0.1 * opts.tol;

    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        const auto met = cone_metrics(cp, cur, rx, ry, rz);
        res.iterations = iter;
        double merit = std::max({met.pres, met.dres, met.relgap});
        if (!std::isfinite(met.pres) || !std::isfinite(met.dres) || !std::isfinite(met.relgap)) {
            merit = kInf;
        }
        if (std::isfinite(merit) && merit < best_merit) {
            best_merit = merit;
            best = cur;
        }
        pres_hist.push_back(met.pres);
        if (merit == kInf) {
            res.status = ConeStatus::Stalled;
            break;
        }
        if (met.pres <= target && met.dres <= target && met.relgap <= target && accept(cur)) {
            res.status = ConeStatus::Optimal;
            res.trace.push_back({iter, met.pobj, met.dobj, met.pres, met.dres, met.gap, 0.0});
            best = cur;
            break;
        }
        if (iter == opts.max_iter) {
            res.trace.push_back({iter, met.pobj, met.dobj, met.pres, met.dres, met.gap, 0.0});
            break;
        }
        // Primal residual stuck while the iteration grinds on: likely infeasible.
        if (iter >= 40 && met.pres > 1e3 * opts.tol && met.pres > 0.95 * pres_hist[pres_hist.size() - 21]) {
            res.trace.push_back({iter, met.pobj, met.dobj, met.pres, met.dres, met.gap, 0.0});
            res.status = ConeStatus::Stalled;
            break;
        }

        Vector dx, dy, dz, ds;
        double step = 1.0;
        if (m == 0) {
            kkt.solve(-rx, -ry, Vector(0), dx, dy, dz);
            cur.x += dx;
            cur.y += dy;
        } else {
            const Scaling W = nt_scaling(cur.s, cur.z, dims);
            const Vector lambda = W.apply(cur.z);
            if (!kkt.factor(W)) {
                res.status = ConeStatus::Stalled;
                res.trace.push_back({iter, met.pobj, met.dobj, met.pres, met.dres, met.gap, 0.0});
                break;
            }
            const double mu = met.gap / dims.degree();

            // Predictor.
            Vector dxa, dya, dza;
            kkt.solve(-rx, -ry, -rz + cur.s, dxa, dya, dza);
            const Vector dsa = -cur.s - W.apply(W.apply(dza));
            const double alpha_aff = std::min(1.0, std::min(max_step(cur.s, dsa, dims), max_step(cur.z, dza, dims)));
            const double sigma = std::pow(std::max(0.0, 1.0 - alpha_aff), 3);

            // Corrector, or a pure centering step when sig = 1 without the second-order term.
            auto direction = [&](double sig, bool second_order) {
                Vector rc = -jordan(lambda, lambda, dims);
                if (second_order) {
                    rc -= jordan(W.apply_inverse(dsa), W.apply(dza), dims);
                }
                add_identity(rc, dims, sig * mu);
                const Vector scaled = W.apply(jordan_div(lambda, rc, dims));
                kkt.solve(-rx, -ry, -rz - scaled, dx, dy, dz);
                ds = scaled - W.apply(W.apply(dz));
                return std::min(1.0, 0.99 * std::min(max_step(cur.s, ds, dims), max_step(cur.z, dz, dims)));
            };
            step = direction(sigma, true);
            // Near the end keep the SOC blocks close to the central path, otherwise the
            // recovered quadratic multipliers only reach about sqrt(gap) accuracy.
            if (!dims.soc.empty() && met.relgap < 1e-3) {
                const double kappa = 100.0;
                auto centered = [&](double a) {
                    const Vector st = cur.s + a * ds;
                    const Vector zt = cur.z + a * dz;
                    return soc_off_center(st, zt, dims) <= kappa * st.dot(zt) / dims.degree();
                };
                double a = step;
                for (int back = 0; back < 8 && !centered(a); ++back) {
                    a *= 0.7;
                }
                if (centered(a) && a >= 0.1 * step) {
                    step = a;
                } else {
                    step = direction(1.0, false);
                }
            }
            cur.x += step * dx;
            cur.y += step * dy;
            cur.z += step * dz;
            cur.s += step * ds;
        }
        res.trace.push_back({iter, met.pobj, met.dobj, met.pres, met.dres, met.gap, step});
        small_steps = step < 1e-9 ? small_steps + 1 : 0;
        if (small_steps >= 5) {
            res.status = ConeStatus::Stalled;
            break;
        }
    }
    res.it = res.status == ConeStatus::Optimal ? cur : best;
    return res;
}

// ---------------------------------------------------------------------------
// Presolve and conversion to cone form.

std::string row_key(const std::vector<std::pair<int, double>>& row, double rhs)
{
    std::string key;
    key.reserve(row.size() * 12 + 8);
    auto put = [&key](const void* p, std::size_t n) { key.append(static_cast<const char*>(p), n); };
    for (const auto& [c, v] : row) {
        put(&c, sizeof c);
        put(&v, sizeof v);
    }
    put(&rhs, sizeof rhs);
    return key;
}

using RowMajor = Eigen::SparseMatrix<double, Eigen::RowMajor>;

std::vector<std::pair<int, double>> row_entries(const RowMajor& M, Eigen::Index r)
{
    std::vector<std::pair<int, double>> out;
    for (RowMajor::InnerIterator it(M, r); it; ++it) {
        if (it.value() != 0.0) {
            out.emplace_back(static_cast<int>(it.col()), it.value());
        }
    }
    return out;
}

enum class QuadKind { Soc, Linear, Dropped };

struct Reduction {
    Vector x0;                              // values of fixed variables (zero elsewhere)
    std::vector<Eigen::Index> free_vars;    // reduced -> original
    SparseMatrix S;                         // n x nf selection
    std::vector<Eigen::Index> eq_rows;      // kept equality rows (original index)
    std::vector<Eigen::Index> in_rows;      // kept inequality rows (original index)
    struct QuadInfo {
        QuadKind kind = QuadKind::Dropped;
        Eigen::Index index = 0;  // LP row or SOC block offset
        Eigen::Index size = 0;
    };
    std::vector<QuadInfo> quads;
    Eigen::Index quad_linear_start = 0;
    std::vector<std::pair<Eigen::Index, bool>> bound_rows;  // (original var, is_upper)
    Eigen::Index bound_start = 0;
    ConeProblem cone;
};

Reduction reduce(const QcqpProblem& p, bool presolve)
{
    Reduction red;
    const auto n = p.n;
    red.x0 = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (presolve && p.lb(i) == p.ub(i)) {
            red.x0(i) = p.lb(i);
        } else {
            red.free_vars.push_back(i);
        }
    }
    const auto nf = static_cast<Eigen::Index>(red.free_vars.size());
    {
        std::vector<Eigen::Triplet<double>> t;
        for (Eigen::Index k = 0; k < nf; ++k) {
            t.emplace_back(red.free_vars[static_cast<std::size_t>(k)], k, 1.0);
        }
        red.S.resize(n, nf);
        red.S.setFromTriplets(t.begin(), t.end());
    }
    const SparseMatrix St = red.S.transpose();
    auto& cp = red.cone;
    cp.P = St * p.P * red.S;
    cp.c = St * (p.c + p.P * red.x0);

    // Equalities.
    {
        const RowMajor A = p.A_eq * red.S;
        const Vector b = p.b_eq - p.A_eq * red.x0;
        std::unordered_map<std::string, Eigen::Index> seen;
        std::vector<Eigen::Triplet<double>> t;
        std::vector<double> rhs;
        for (Eigen::Index r = 0; r < A.rows(); ++r) {
            const auto row = row_entries(A, r);
            if (presolve) {
                if (row.empty() && std::abs(b(r)) <= 1e-12 * (1.0 + inf_norm(p.b_eq))) {
                    continue;
                }
                if (!seen.emplace(row_key(row, b(r)), r).second) {
                    continue;
                }
            }
            const auto k = static_cast<Eigen::Index>(rhs.size());
            for (const auto& [c, v] : row) {
                t.emplace_back(k, c, v);
            }
            rhs.push_back(b(r));
            red.eq_rows.push_back(r);
        }
        cp.A.resize(static_cast<Eigen::Index>(rhs.size()), nf);
        cp.A.setFromTriplets(t.begin(), t.end());
        cp.b = Eigen::Map<const Vector>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    }

    // Linear inequality rows (orthant part), then SOC blocks.
    std::vector<Eigen::Triplet<double>> lp;
    std::vector<double> lp_h;
    {
        const RowMajor G = p.G_in * red.S;
        const Vector h = p.h_in - p.G_in * red.x0;
        std::unordered_map<std::string, Eigen::Index> seen;
        for (Eigen::Index r = 0; r < G.rows(); ++r) {
            const auto row = row_entries(G, r);
            if (presolve) {
                if (row.empty() && h(r) >= -1e-12 * (1.0 + inf_norm(p.h_in))) {
                    continue;
                }
                if (!seen.emplace(row_key(row, h(r)), r).second) {
                    continue;
                }
            }
            const auto k = static_cast<Eigen::Index>(lp_h.size());
            for (const auto& [c, v] : row) {
                lp.emplace_back(k, c, v);
            }
            lp_h.push_back(h(r));
            red.in_rows.push_back(r);
        }
    }

    struct SocRows {
        std::vector<Eigen::Triplet<double>> t;  // rows relative to block start
        Vector h;
    };
    std::vector<SocRows> socs;
    red.quad_linear_start = static_cast<Eigen::Index>(lp_h.size());
    red.quads.resize(p.quad.size());
    for (std::size_t k = 0; k < p.quad.size(); ++k) {
        const auto& q = p.quad[k];
        const SparseMatrix Qr = St * q.Q * red.S;
        const Vector ar = St * (q.a + q.Q * red.x0);
        const double br = q.b + q.a.dot(red.x0) + 0.5 * red.x0.dot(q.Q * red.x0);

        // Factor Qr = L'L over its support.
        std::vector<Eigen::Index> support;
        std::vector<char> used(static_cast<std::size_t>(nf), 0);
        for (Eigen::Index c = 0; c < Qr.outerSize(); ++c) {
            for (SparseMatrix::InnerIterator it(Qr, c); it; ++it) {
                if (it.value() != 0.0) {
                    used[static_cast<std::size_t>(it.row())] = 1;
                    used[static_cast<std::size_t>(it.col())] = 1;
                }
            }
        }
        for (Eigen::Index i = 0; i < nf; ++i) {
            if (used[static_cast<std::size_t>(i)]) {
                support.push_back(i);
            }
        }
        Matrix L;
        if (!support.empty()) {
            const auto ks = static_cast<Eigen::Index>(support.size());
            std::vector<Eigen::Index> pos(static_cast<std::size_t>(nf), -1);
            for (Eigen::Index i = 0; i < ks; ++i) {
                pos[static_cast<std::size_t>(support[static_cast<std::size_t>(i)])] = i;
            }
            Matrix D = Matrix::Zero(ks, ks);
            for (Eigen::Index c = 0; c < Qr.outerSize(); ++c) {
                for (SparseMatrix::InnerIterator it(Qr, c); it; ++it) {
                    D(pos[static_cast<std::size_t>(it.row())], pos[static_cast<std::size_t>(it.col())]) += it.value();
                }
            }
            D = 0.5 * (D + D.transpose());
            Eigen::SelfAdjointEigenSolver<Matrix> es(D);
            const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
            std::vector<Eigen::Index> keep;
            for (Eigen::Index i = 0; i < ks; ++i) {
                if (es.eigenvalues()(i) > 1e-12 * std::max(lmax, 1e-300) && es.eigenvalues()(i) > 0.0) {
                    keep.push_back(i);
                }
            }
            L = Matrix::Zero(static_cast<Eigen::Index>(keep.size()), nf);
            for (std::size_t r = 0; r < keep.size(); ++r) {
                const double sl = std::sqrt(es.eigenvalues()(keep[r]));
                for (Eigen::Index i = 0; i < ks; ++i) {
                    L(static_cast<Eigen::Index>(r), support[static_cast<std::size_t>(i)]) =
                        sl * es.eigenvectors()(i, keep[r]);
                }
            }
        }
        auto& info = red.quads[k];
        const bool has_linear = ar.cwiseAbs().maxCoeff() > 0.0;
        if (L.rows() == 0) {
            if (presolve && !has_linear && br <= 1e-12) {
                info.kind = QuadKind::Dropped;
                continue;
            }
            info.kind = QuadKind::Linear;
            info.index = static_cast<Eigen::Index>(lp_h.size());
            for (Eigen::Index i = 0; i < nf; ++i) {
                if (ar(i) != 0.0) {
                    lp.emplace_back(info.index, i, ar(i));
                }
            }
            lp_h.push_back(-br);
            continue;
        }
        info.kind = QuadKind::Soc;
        info.size = L.rows() + 2;
        SocRows sr;
        sr.h = Vector::Zero(info.size);
        for (Eigen::Index i = 0; i < nf; ++i) {
            if (ar(i) != 0.0) {
                sr.t.emplace_back(0, i, ar(i));
                sr.t.emplace_back(info.size - 1, i, ar(i));
            }
        }
        for (Eigen::Index r = 0; r < L.rows(); ++r) {
            for (Eigen::Index i = 0; i < nf; ++i) {
                if (L(r, i) != 0.0) {
                    sr.t.emplace_back(1 + r, i, -L(r, i));
                }
            }
        }
        sr.h(0) = 0.5 - br;
        sr.h(info.size - 1) = -br - 0.5;
        socs.push_back(std::move(sr));
    }

    red.bound_start = static_cast<Eigen::Index>(lp_h.size());
    for (Eigen::Index k = 0; k < nf; ++k) {
        const auto i = red.free_vars[static_cast<std::size_t>(k)];
        if (std::isfinite(p.ub(i))) {
            lp.emplace_back(static_cast<Eigen::Index>(lp_h.size()), k, 1.0);
            lp_h.push_back(p.ub(i));
            red.bound_rows.emplace_back(i, true);
        }
        if (std::isfinite(p.lb(i))) {
            lp.emplace_back(static_cast<Eigen::Index>(lp_h.size()), k, -1.0);
            lp_h.push_back(-p.lb(i));
            red.bound_rows.emplace_back(i, false);
        }
    }

    cp.dims.l = static_cast<Eigen::Index>(lp_h.size());
    Eigen::Index off = cp.dims.l;
    std::size_t s = 0;
    for (auto& info : red.quads) {
        if (info.kind != QuadKind::Soc) {
            continue;
        }
        info.index = off;
        for (const auto& t : socs[s].t) {
            lp.emplace_back(off + t.row(), t.col(), t.value());
        }
        cp.dims.soc.push_back(info.size);
        off += info.size;
        ++s;
    }
    cp.G.resize(off, nf);
    cp.G.setFromTriplets(lp.begin(), lp.end());
    cp.h.resize(off);
    cp.h.head(cp.dims.l) = Eigen::Map<const Vector>(lp_h.data(), cp.dims.l);
    s = 0;
    for (const auto& info : red.quads) {
        if (info.kind == QuadKind::Soc) {
            cp.h.segment(info.index, info.size) = socs[s++].h;
        }
    }
    return red;
}

void recover(const QcqpProblem& p, const Reduction& red, const ConeIterate& it, Vector& x, QcqpDuals& d)
{
    const auto n = p.n;
    x = red.S * it.x + red.x0;
    d.y_eq = Vector::Zero(p.A_eq.rows());
    d.z_in = Vector::Zero(p.G_in.rows());
    d.nu_quad = Vector::Zero(static_cast<Eigen::Index>(p.quad.size()));
    d.z_lb = Vector::Zero(n);
    d.z_ub = Vector::Zero(n);
    for (std::size_t k = 0; k < red.eq_rows.size(); ++k) {
        d.y_eq(red.eq_rows[k]) = it.y(static_cast<Eigen::Index>(k));
    }
    for (std::size_t k = 0; k < red.in_rows.size(); ++k) {
        d.z_in(red.in_rows[k]) = it.z(static_cast<Eigen::Index>(k));
    }
    for (std::size_t k = 0; k < red.quads.size(); ++k) {
        const auto& info = red.quads[k];
        if (info.kind == QuadKind::Linear) {
            d.nu_quad(static_cast<Eigen::Index>(k)) = it.z(info.index);
        } else if (info.kind == QuadKind::Soc) {
            d.nu_quad(static_cast<Eigen::Index>(k)) = it.z(info.index) + it.z(info.index + info.size - 1);
        }
    }
    for (std::size_t k = 0; k < red.bound_rows.size(); ++k) {
        const auto [var, upper] = red.bound_rows[k];
        const double z = it.z(red.bound_start + static_cast<Eigen::Index>(k));
        (upper ? d.z_ub : d.z_lb)(var) = z;
    }
    if (static_cast<Eigen::Index>(red.free_vars.size()) == n) {
        return;
    }
    // Fixed variables: bound multipliers absorb the remaining gradient.
    Vector grad = p.P * x + p.c + p.A_eq.transpose() * d.y_eq + p.G_in.transpose() * d.z_in;
    for (std::size_t k = 0; k < p.quad.size(); ++k) {
        grad += d.nu_quad(static_cast<Eigen::Index>(k)) * (p.quad[k].Q * x + p.quad[k].a);
    }
    std::vector<char> is_free(static_cast<std::size_t>(n), 0);
    for (auto i : red.free_vars) {
        is_free[static_cast<std::size_t>(i)] = 1;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!is_free[static_cast<std::size_t>(i)]) {
            d.z_lb(i) = std::max(grad(i), 0.0);
            d.z_ub(i) = std::max(-grad(i), 0.0);
        }
    }
}

// min t  s.t. Ax = b, Gx - t e + s = h, t >= -1.
ConeProblem phase_one(const ConeProblem& cp)
{
    const auto n = cp.P.rows();
    const auto l = cp.dims.l;
    ConeProblem ph;
    ph.P = SparseMatrix(n + 1, n + 1);
    ph.c = Vector::Zero(n + 1);
    ph.c(n) = 1.0;
    ph.A = SparseMatrix(cp.A.rows(), n + 1);
    {
        std::vector<Eigen::Triplet<double>> t;
        for (Eigen::Index k = 0; k < cp.A.outerSize(); ++k) {
            for (SparseMatrix::InnerIterator it(cp.A, k); it; ++it) {
                t.emplace_back(it.row(), it.col(), it.value());
            }
        }
        ph.A.setFromTriplets(t.begin(), t.end());
    }
    ph.b = cp.b;
    std::vector<Eigen::Triplet<double>> t;
    auto remap = [l](Eigen::Index r) { return r < l ? r : r + 1; };
    for (Eigen::Index k = 0; k < cp.G.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(cp.G, k); it; ++it) {
            t.emplace_back(remap(it.row()), it.col(), it.value());
        }
    }
    for (Eigen::Index r = 0; r < l; ++r) {
        t.emplace_back(r, n, -1.0);
    }
    t.emplace_back(l, n, -1.0);
    for_each_soc(cp.dims, [&](Eigen::Index off, Eigen::Index) { t.emplace_back(off + 1, n, -1.0); });
    const auto m = cp.G.rows() + 1;
    ph.G.resize(m, n + 1);
    ph.G.setFromTriplets(t.begin(), t.end());
    ph.h.resize(m);
    ph.h.head(l) = cp.h.head(l);
    ph.h(l) = 1.0;
    ph.h.tail(m - l - 1) = cp.h.tail(m - l - 1);
    ph.dims.l = l + 1;
    ph.dims.soc = cp.dims.soc;
    return ph;
}

} // namespace

QcqpSolution solve(const QcqpProblem& p, const QcqpOptions& opts)
{
    p.validate();
    if (!(opts.tol > 0.0) || opts.max_iter < 1) {
        throw InputError("qcqp: tolerance must be positive and max_iter at least 1");
    }
    const Reduction red = reduce(p, opts.presolve);

    QcqpSolution sol;
    auto accept = [&](const ConeIterate& it) {
        Vector x;
        QcqpDuals d;
        recover(p, red, it, x, d);
        return kkt_residual(p, x, d).max() <= opts.tol;
    };
    const auto res = cone_qp(red.cone, opts, accept);
    sol.iterations = res.iterations;
    sol.trace = res.trace;
    recover(p, red, res.it, sol.x, sol.duals);
    sol.objective = p.objective(sol.x);
    sol.residuals = kkt_residual(p, sol.x, sol.duals);
    // The KKT residuals are the certificate, so a stalled run whose best iterate meets them counts.
    if (sol.residuals.max() <= opts.tol) {
        sol.status = QcqpStatus::Optimal;
        return sol;
    }

    // Not certified optimal: decide between infeasible and slow convergence.
    sol.status = QcqpStatus::MaxIter;
    if (red.cone.G.rows() == 0) {
        return sol;
    }
    const ConeProblem ph = phase_one(red.cone);
    QcqpOptions popt = opts;
    popt.tol = std::max(opts.tol, 1e-9);
    const auto pres = cone_qp(ph, popt, [](const ConeIterate&) { return true; });
    const double t = pres.it.x(pres.it.x.size() - 1);
    sol.infeasibility = std::max(t, 0.0);
    const double threshold = std::max(100.0 * opts.tol, 1e-7) * (1.0 + inf_norm(red.cone.h));
    if (t > threshold) {
        sol.status = QcqpStatus::Infeasible;
        sol.certificate.resize(pres.it.y.size() + pres.it.z.size());
        sol.certificate << pres.it.y, pres.it.z;
    }
    return sol;
}

} // namespace agcdro
