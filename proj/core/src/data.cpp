#include "glvm/data.hpp"

#include <cmath>
#include <string>

#include "glvm/errors.hpp"

namespace glvm {

void DataSet::validate() const {
    const Eigen::Index nn = n(), qq = q();
    if (mask.rows() != nn || mask.cols() != qq)
        throw DataError("mask shape does not match responses");
    if (X.rows() != nn) throw DataError("covariate rows do not match response rows");
    if (static_cast<Eigen::Index>(families.size()) != qq)
        throw DataError("family list length does not match item count");
    if (nn == 0 || qq == 0) throw DataError("empty response matrix");

    for (Eigen::Index j = 0; j < qq; ++j) {
        for (Eigen::Index i = 0; i < nn; ++i) {
            double m = mask(i, j);
            if (m != 0.0 && m != 1.0) throw DataError("mask entries must be 0 or 1");
            if (m == 1.0) {
                try {
                    families[j].validate_response(Y(i, j));
                } catch (const DataError& e) {
                    throw DataError("invalid response at subject " + std::to_string(i) +
                                    ", item " + std::to_string(j) + ": " + e.what());
                }
            }
        }
    }
    for (Eigen::Index i = 0; i < nn; ++i)
        if (mask.row(i).sum() < 1.0)
            throw DataError("subject " + std::to_string(i) + " has no observed responses");
    for (Eigen::Index j = 0; j < qq; ++j)
        if (mask.col(j).sum() < 1.0)
            throw DataError("item " + std::to_string(j) + " has no observed responses");

    for (Eigen::Index l = 0; l < p(); ++l) {
        if (!X.col(l).allFinite())
            throw DataError("covariate column " + std::to_string(l) + " has non-finite values");
        double mean = X.col(l).mean();
        double var = (X.col(l).array() - mean).square().sum() / static_cast<double>(nn);
        if (var <= 0.0)
            throw DataError("covariate column " + std::to_string(l) + " is constant");
    }
}

ParamSet ParamSet::zeros(Eigen::Index n, Eigen::Index q, Eigen::Index p, Eigen::Index k) {
    ParamSet out;
    out.beta0 = VectorXd::Zero(q);
    out.B = MatrixXd::Zero(q, p);
    out.Gamma = MatrixXd::Zero(q, k);
    out.U = MatrixXd::Zero(n, k);
    return out;
}

namespace {

void check_dims(const DataSet& data, const ParamSet& params) {
    if (params.beta0.size() != data.q()) throw DataError("intercept length != item count");
    if (params.B.rows() != data.q()) throw DataError("effect matrix rows != item count");
    if (params.B.cols() != data.p()) throw DataError("effect matrix cols != covariate count");
    if (params.Gamma.rows() != data.q()) throw DataError("loading matrix rows != item count");
    if (params.U.rows() != data.n()) throw DataError("score matrix rows != subject count");
    if (params.U.cols() != params.Gamma.cols())
        throw DataError("score matrix cols != loading matrix cols");
}

}  // namespace

MatrixXd linear_predictor(const DataSet& data, const ParamSet& params) {
    check_dims(data, params);
    MatrixXd W = params.beta0.transpose().replicate(data.n(), 1);
    if (params.K() > 0) W.noalias() += params.U * params.Gamma.transpose();
    if (data.p() > 0) W.noalias() += data.X * params.B.transpose();
    return W;
}

double joint_objective(const DataSet& data, const ParamSet& params, double lambda) {
    MatrixXd W = linear_predictor(data, params);
    const Eigen::Index nn = data.n(), qq = data.q();
    // Per-item partial sums, combined in item order so the value does not
    // depend on how callers parallelize.
    double total = 0.0;
    for (Eigen::Index j = 0; j < qq; ++j) {
        double item_sum = 0.0;
        const Family& f = data.families[j];
        for (Eigen::Index i = 0; i < nn; ++i)
            if (data.mask(i, j) == 1.0) item_sum += f.loglik(data.Y(i, j), W(i, j));
        total += item_sum;
    }
    double penalty = params.B.cwiseAbs().sum();
    return -total / static_cast<double>(nn * qq) + lambda * penalty;
}

}  // namespace glvm
