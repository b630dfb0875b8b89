#pragma once

#include "agcdro/qcqp.hpp"

#include <string>
#include <utility>
#include <vector>

namespace agcdro {

/// sum_k coef_k * x[index_k] + constant. Repeated indices add up.
struct AffineExpr {
    std::vector<std::pair<Eigen::Index, double>> terms;
    double constant = 0.0;

    AffineExpr& add(Eigen::Index index, double coef)
    {
        terms.emplace_back(index, coef);
        return *this;
    }
    AffineExpr& operator+=(const AffineExpr& o);
    AffineExpr& operator*=(double s);
    [[nodiscard]] double eval(const Vector& x) const;
};

AffineExpr operator+(AffineExpr a, const AffineExpr& b);
AffineExpr operator-(AffineExpr a, const AffineExpr& b);
AffineExpr operator*(double s, AffineExpr a);

/// Incremental construction of a QcqpProblem with named variable blocks.
class QcqpBuilder {
public:
    /// Appends `size` variables and returns the index of the first.
    Eigen::Index add_block(const std::string& name, Eigen::Index size, double lb = -kInf, double ub = kInf);
    [[nodiscard]] const VarBlock& block(const std::string& name) const;
    [[nodiscard]] Eigen::Index variables() const { return n_; }

    void add_objective(const AffineExpr& e);
    /// weight * e^2 with weight >= 0.
    void add_objective_square(const AffineExpr& e, double weight);

    /// e <= 0
    void add_le(const AffineExpr& e);
    /// e == 0
    void add_eq(const AffineExpr& e);
    /// sum_k w_k e_k^2 + lin <= 0 with w_k >= 0.
    void add_quad_le(const std::vector<std::pair<AffineExpr, double>>& squares, const AffineExpr& lin,
                     const std::string& name = {});

    [[nodiscard]] QcqpProblem build() const;

private:
    Eigen::Index n_ = 0;
    std::vector<VarBlock> blocks_;
    std::vector<double> lb_, ub_;
    std::vector<Eigen::Triplet<double>> P_;
    std::vector<std::pair<Eigen::Index, double>> c_;
    double c0_ = 0.0;
    std::vector<AffineExpr> eq_;
    std::vector<AffineExpr> le_;
    struct Quad {
        std::string name;
        std::vector<Eigen::Triplet<double>> Q;
        AffineExpr lin;
    };
    std::vector<Quad> quad_;
};

} // namespace agcdro
