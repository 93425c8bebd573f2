#pragma once

// Multi-horizon MSE training with validation-based early stopping. Batches
// are backpropagated sample-by-sample; worker threads write leaf gradients
// into per-sample sinks that are reduced in sample order, so results are
// bit-identical for any thread count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "semf/data.hpp"
#include "semf/error.hpp"
#include "semf/metrics.hpp"
#include "semf/model.hpp"
#include "semf/tensor.hpp"

namespace semf {

struct TrainConfig {
    ModelConfig model;
    std::uint64_t seed = 7;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double learning_rate = 1e-3;
    double lr_decay = 1.0;        // per-epoch multiplier on the learning rate
    double train_mse_goal = 0.0;  // > 0: stop once the epoch train MSE drops below
    std::size_t threads = 0;      // 0 = SEMF_THREADS or hardware_concurrency
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    SemfModel model;
    Standardizer standardizer;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
};

// mean over the batch and the six horizons of squared error (standardized scale)
inline ad::Tensor mse_multi_horizon(const ad::Tensor& pred, const ad::Tensor& target) {
    if (pred.shape() != target.shape())
        fail(ErrorKind::Shape, "mse: shape mismatch " + ad::shape_str(pred.shape()) + " vs " +
                                   ad::shape_str(target.shape()));
    const ad::Tensor d = ad::sub(pred, target);
    return ad::mean_all(ad::mul(d, d));
}

namespace detail {

inline double batch_step(const SemfModel& model, const std::vector<PreparedSample>& data,
                         std::span<const std::size_t> batch, std::uint64_t dropout_stream, std::size_t threads) {
    const std::size_t bn = batch.size();
    std::vector<ad::GradSink> sinks(bn);
    std::vector<double> losses(bn, 0.0);
    const double inv_b = 1.0 / static_cast<double>(bn);

    auto run_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const PreparedSample& s = data[batch[i]];
            Rng rng(Rng::mix(dropout_stream, i));
            const ad::Tensor pred = model.forward(s.tokens, s.exo, /*train=*/true, rng);
            const ad::Tensor target = ad::Tensor::from({1, 6}, {s.targets.begin(), s.targets.end()});
            const ad::Tensor loss = mse_multi_horizon(pred, target);
            losses[i] = loss.item();
            ad::backward(loss, inv_b, &sinks[i]);
        }
    };

    const std::size_t workers = std::min(threads, bn);
    if (workers <= 1) {
        run_range(0, bn);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (bn + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk, e = std::min(bn, b + chunk);
            if (b < e)
                pool.emplace_back([&, w, b, e] {
                    try {
                        run_range(b, e);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
        }
        for (auto& t : pool) t.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    for (auto& sink : sinks) sink.flush();

    double total = 0.0;
    for (double l : losses) total += l;
    return total * inv_b;
}

inline double split_loss(const SemfModel& model, const std::vector<PreparedSample>& data, std::size_t threads) {
    ad::NoGradGuard ng;
    std::vector<double> losses(data.size(), 0.0);
    auto run_range = [&](std::size_t begin, std::size_t end) {
        Rng rng(0);  // eval: dropout off, no draws
        for (std::size_t i = begin; i < end; ++i) {
            const ad::Tensor pred = model.forward(data[i].tokens, data[i].exo, /*train=*/false, rng);
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
                const double d = pred.data()[k] - data[i].targets[k];
                s += d * d;
            }
            losses[i] = s / 6.0;
        }
    };
    const std::size_t workers = std::min(threads, data.size());
    if (workers <= 1) {
        run_range(0, data.size());
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (data.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk, e = std::min(data.size(), b + chunk);
            if (b < e)
                pool.emplace_back([&, w, b, e] {
                    try {
                        run_range(b, e);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
        }
        for (auto& t : pool) t.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }
    // ordered reduction
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(losses.size());
}

}  // namespace detail

// Fits the standardizer on the training split, standardizes train/val targets
// in place, then runs seeded mini-batch Adam with early stopping. The
// checkpoint kept is the best-validation one, not the last epoch's. Test
// samples are never touched here.
inline TrainResult train(const TrainConfig& cfg, Splits& splits) {
    if (splits.n_train == 0 || splits.n_val == 0) fail(ErrorKind::Contract, "train: empty train or validation split");
    if (cfg.batch_size == 0 || cfg.max_epochs == 0) fail(ErrorKind::Contract, "train: batch_size and max_epochs must be positive");

    const Standardizer st = fit_standardizer(splits.train());
    apply_standardizer(splits.mutable_train(), st);
    apply_standardizer(splits.mutable_val(), st);

    const std::size_t threads = resolve_threads(cfg.threads);
    SemfModel model(cfg.model, cfg.seed);
    const auto prepared_train = prepare_inputs(splits.train(), cfg.model, threads);
    const auto prepared_val = prepare_inputs(splits.val(), cfg.model, threads);

    ad::AdamConfig ac;
    ac.lr = cfg.learning_rate;
    ad::Adam opt(model.trainable(), ac);

    std::vector<std::size_t> order(prepared_train.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult res{std::move(model), st, {}, 0, std::numeric_limits<double>::infinity()};
    std::vector<std::vector<double>> best_snapshot = res.model.snapshot();
    std::size_t epochs_without_improvement = 0;

    constexpr std::uint64_t kShuffleTag = 0x53485546;  // "SHUF"
    constexpr std::uint64_t kDropoutTag = 0x44524F50;  // "DROP"

    ad::NanCheckGuard nan_guard(false);  // divergence is caught per batch below

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (cfg.lr_decay != 1.0)
            opt.set_lr(cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch - 1)));
        Rng shuffle_rng(Rng::mix(cfg.seed, kShuffleTag, epoch));
        shuffle_rng.shuffle(order.begin(), order.end());

        double train_loss = 0.0;
        std::size_t seen = 0;
        std::size_t step = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                const std::span<const std::size_t> batch(order.data() + start, end - start);
                const std::uint64_t stream = Rng::mix(Rng::mix(cfg.seed, kDropoutTag, epoch), step);
                const double loss = detail::batch_step(res.model, prepared_train, batch, stream, threads);
                if (!std::isfinite(loss))
                    fail(ErrorKind::Training, "training diverged (non-finite loss) at epoch " + std::to_string(epoch));
                opt.step();
                train_loss += loss * static_cast<double>(batch.size());
                seen += batch.size();
            }
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::Numeric)
                fail(ErrorKind::Training,
                     "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            throw;
        }
        train_loss /= static_cast<double>(seen);

        const double val_loss = detail::split_loss(res.model, prepared_val, threads);
        if (!std::isfinite(val_loss))
            fail(ErrorKind::Training, "validation loss non-finite at epoch " + std::to_string(epoch));
        res.log.push_back({epoch, train_loss, val_loss});

        if (val_loss < res.best_val_mse) {
            res.best_val_mse = val_loss;
            res.best_epoch = epoch;
            best_snapshot = res.model.snapshot();
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
        }
        if (cfg.train_mse_goal > 0.0 && train_loss < cfg.train_mse_goal) break;
        if (epochs_without_improvement >= cfg.patience) break;
    }

    res.model.restore(best_snapshot);
    return res;
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_mse,val_mse\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + "," + detail::fmt_g(e.train_mse) + "," + detail::fmt_g(e.val_mse) + "\n";
    return out;
}

}  // namespace semf
