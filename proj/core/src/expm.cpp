#include "agcdro/lin_dynamics.hpp"

#include "agcdro/error.hpp"

#include <array>
#include <cmath>

namespace agcdro {

namespace {

// Maximal 1-norms for which the degree-m Pade approximant is accurate to unit roundoff
// (Higham 2005, Table 2.3).
constexpr std::array<double, 5> kTheta{1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1,
                                       2.097847961257068e0, 5.371920351148152e0};

constexpr std::array<double, 4> kB3{120., 60., 12., 1.};
constexpr std::array<double, 6> kB5{30240., 15120., 3360., 420., 30., 1.};
constexpr std::array<double, 8> kB7{17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
constexpr std::array<double, 10> kB9{17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                     2162160.,     110880.,     3960.,       90.,        1.};
constexpr std::array<double, 14> kB13{64764752532480000., 32382376266240000., 7771770303897600.,
                                      1187353796428800.,  129060195264000.,   10559470521600.,
                                      670442572800.,      33522128640.,       1323241920.,
                                      40840800.,          960960.,            16380.,
                                      182.,               1.};

template <std::size_t N>
Matrix pade_low(const Matrix& A, const std::array<double, N>& b)
{
    const auto n = A.rows();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix A2 = A * A;
    Matrix power = I;
    Matrix U_inner = Matrix::Zero(n, n);
    Matrix V = Matrix::Zero(n, n);
    for (std::size_t k = 0; k < N; k += 2) {
        V.noalias() += b[k] * power;
        if (k + 1 < N) {
            U_inner.noalias() += b[k + 1] * power;
        }
        power = power * A2;
    }
    const Matrix U = A * U_inner;
    return (V - U).partialPivLu().solve(V + U);
}

Matrix pade13(const Matrix& A)
{
    const auto n = A.rows();
    const auto& b = kB13;
    const Matrix I = Matrix::Identity(n, n);
    const Matrix A2 = A * A;
    const Matrix A4 = A2 * A2;
    const Matrix A6 = A4 * A2;
    Matrix inner = b[13] * A6 + b[11] * A4 + b[9] * A2;
    Matrix U = A * (A6 * inner + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
    inner = b[12] * A6 + b[10] * A4 + b[8] * A2;
    Matrix V = A6 * inner + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
    return (V - U).partialPivLu().solve(V + U);
}

} // namespace

Matrix expm(const Matrix& A, double t)
{
    if (A.rows() != A.cols() || A.rows() == 0) {
        throw InputError("expm: matrix must be square and non-empty");
    }
    if (!std::isfinite(t) || !A.allFinite()) {
        throw InputError("expm: non-finite input");
    }
    const Matrix At = A * t;
    const double norm1 = At.cwiseAbs().colwise().sum().maxCoeff();

    if (norm1 <= kTheta[0]) {
        return pade_low(At, kB3);
    }
    if (norm1 <= kTheta[1]) {
        return pade_low(At, kB5);
    }
    if (norm1 <= kTheta[2]) {
        return pade_low(At, kB7);
    }
    if (norm1 <= kTheta[3]) {
        return pade_low(At, kB9);
    }
    int squarings = 0;
    if (norm1 > kTheta[4]) {
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta[4]))));
    }
    Matrix R = pade13(At / std::ldexp(1.0, squarings));
    for (int i = 0; i < squarings; ++i) {
        R = R * R;
    }
    return R;
}

} // namespace agcdro
