// SPDX-License-Identifier: Apache-2.0
//
// Loss-curve data cleaning. A small perceptron probe is trained on the split
// itself; samples whose loss curves cluster with the higher-loss centroid are
// rejected.

#include <algorithm>
#include <cmath>

#include "comfort/datapipe.h"
#include "comfort/errors.h"

namespace comfort {
namespace {

struct Probe {
    Matrix w1, b1, w2, b2;
    Matrix gw1, gb1, gw2, gb2;

    Probe(Eigen::Index inputs, int hidden, int classes, Rng &rng)
        : w1(inputs, hidden), b1(Matrix::Zero(1, hidden)), w2(hidden, classes), b2(Matrix::Zero(1, classes)) {
        fill_xavier(w1, rng);
        fill_xavier(w2, rng);
        gw1 = Matrix::Zero(w1.rows(), w1.cols());
        gb1 = Matrix::Zero(1, hidden);
        gw2 = Matrix::Zero(w2.rows(), w2.cols());
        gb2 = Matrix::Zero(1, classes);
    }

    std::vector<ParamRef> params() {
        return {{"w1", &w1, &gw1}, {"b1", &b1, &gb1}, {"w2", &w2, &gw2}, {"b2", &b2, &gb2}};
    }

    // Per-row cross-entropy; fills gradients of the batch mean when `train`.
    Vector losses(const Matrix &x, const std::vector<int> &labels, bool train) {
        Matrix pre = (x * w1).rowwise() + b1.row(0);
        Matrix act = pre.cwiseMax(0.0);
        Matrix logits = (act * w2).rowwise() + b2.row(0);
        Vector out(x.rows());
        Matrix dlogits(logits.rows(), logits.cols());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const double mx = logits.row(i).maxCoeff();
            Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
            const double z = e.sum();
            const int y = labels[static_cast<std::size_t>(i)];
            out[i] = std::log(z) - (logits(i, y) - mx);
            dlogits.row(i) = e / z;
            dlogits(i, y) -= 1.0;
        }
        if (train) {
            dlogits /= static_cast<double>(x.rows());
            gw2 = act.transpose() * dlogits;
            gb2 = dlogits.colwise().sum();
            Matrix dact = dlogits * w2.transpose();
            Matrix dpre = (pre.array() > 0.0).select(dact, 0.0);
            gw1 = x.transpose() * dpre;
            gb1 = dpre.colwise().sum();
        }
        return out;
    }
};

Matrix gather_rows(const Matrix &x, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace

CtrlPartition ctrl_partition(const Matrix &loss_curves, std::uint64_t seed, double min_centroid_gap) {
    CtrlPartition part;
    const auto n = static_cast<std::size_t>(loss_curves.rows());
    auto keep_all = [&] {
        part.degenerate = true;
        part.retained.resize(n);
        for (std::size_t i = 0; i < n; ++i) part.retained[i] = i;
        return part;
    };
    KMeansResult km;
    try {
        km = kmeans2(loss_curves, seed);
    } catch (const ValidationError &) {
        return keep_all();
    }
    const double mean0 = km.centroids.row(0).mean();
    const double mean1 = km.centroids.row(1).mean();
    if (std::abs(mean0 - mean1) < min_centroid_gap) {
        return keep_all();
    }
    const int clean_cluster = mean0 <= mean1 ? 0 : 1;
    for (std::size_t i = 0; i < n; ++i) {
        (km.assignment[i] == clean_cluster ? part.retained : part.rejected).push_back(i);
    }
    return part;
}

CtrlResult ctrl_clean(std::span<const SensorSequence> split, const CtrlConfig &config, std::uint64_t seed) {
    CtrlResult result;
    if (split.size() < 2) {
        result.clean.assign(split.begin(), split.end());
        result.warning = true;
        return result;
    }
    const auto n = static_cast<Eigen::Index>(split.size());
    const auto width = split.front().tokens.size();
    Matrix x(n, width);
    std::vector<int> labels;
    int classes = 2;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &seq = split[static_cast<std::size_t>(i)];
        if (seq.tokens.size() != width) {
            throw DimensionError("ctrl_clean: inconsistent sequence shapes");
        }
        if (seq.label < 0) {
            throw ValidationError("ctrl_clean: every sequence needs a class label");
        }
        x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(seq.tokens.data(), width);
        labels.push_back(seq.label);
        classes = std::max(classes, seq.label + 1);
    }

    Rng rng(seed);
    Rng init = rng.fork(1);
    Probe probe(width, config.hidden, classes, init);
    AdamState adam;
    const AdamOptions options{.lr = config.lr};
    result.loss_curves.resize(n, config.epochs);
    const auto batch = static_cast<std::size_t>(std::max(1, config.batch_size));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = rng.permutation(split.size());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
            std::vector<int> y;
            for (auto i : idx) y.push_back(labels[i]);
            probe.losses(gather_rows(x, idx), y, /*train=*/true);
            const auto params = probe.params();
            adam_update(params, adam, options);
        }
        result.loss_curves.col(epoch) = probe.losses(x, labels, /*train=*/false);
    }
    check_finite(result.loss_curves, "ctrl_clean loss curves");

    const CtrlPartition part = ctrl_partition(result.loss_curves, rng.fork(2).seed(), config.min_centroid_gap);
    result.degenerate = part.degenerate;
    result.rejected = part.rejected;
    for (auto i : part.retained) result.clean.push_back(split[i]);
    return result;
}

}  // namespace comfort
