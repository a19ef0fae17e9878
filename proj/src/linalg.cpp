#include "gtimm/linalg.hpp"

#include "gtimm/errors.hpp"

namespace gtimm {

Eigen::VectorXd least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const auto p = A.cols();
    if (A.rows() >= p) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() == p) return qr.solve(b);
    }
    Eigen::MatrixXd normal = A.transpose() * A;
    normal.diagonal().array() += kRidgeDamping;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success) throw NumericalError("least squares: damped normal equations are singular");
    Eigen::VectorXd x = ldlt.solve(A.transpose() * b);
    if (!x.allFinite()) throw NumericalError("least squares: non-finite solution after damping");
    return x;
}

}  // namespace gtimm
