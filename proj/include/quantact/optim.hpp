#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "quantact/tensor.hpp"

namespace quantact {

enum class optimizer_kind { sgd_momentum, adam };

struct optimizer_config {
    optimizer_kind kind = optimizer_kind::adam;
    double lr = 1e-3;
    double momentum = 0.9;  // sgd
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Updates parameters in place from their accumulated gradients. Parameters without a
// gradient are skipped for that step.
template <class T>
class optimizer {
public:
    optimizer(std::vector<basic_tensor<T>> params, optimizer_config cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(cfg_.kind == optimizer_kind::adam ? p.numel() : 0, 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            auto data = p.data();
            auto grad = p.grad();
            auto& m = m_[k];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * data[i];
                if (cfg_.kind == optimizer_kind::sgd_momentum) {
                    m[i] = cfg_.momentum * m[i] + g;
                    data[i] = static_cast<T>(data[i] - cfg_.lr * m[i]);
                } else {
                    auto& v = v_[k];
                    m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
                    v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
                    data[i] = static_cast<T>(data[i] - cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps));
                }
            }
        }
    }

    double lr() const noexcept { return cfg_.lr; }
    void set_lr(double lr) noexcept { cfg_.lr = lr; }
    const std::vector<basic_tensor<T>>& params() const noexcept { return params_; }

private:
    std::vector<basic_tensor<T>> params_;
    optimizer_config cfg_;
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

// Reduce-on-plateau schedule on a metric that should increase (validation accuracy),
// with an absolute improvement threshold, cooldown and floor.
struct plateau_config {
    double factor = 0.1;
    int patience = 50;
    int cooldown = 10;
    double threshold = 0.01;
    double min_lr = 1e-6;
};

class plateau_scheduler {
public:
    explicit plateau_scheduler(plateau_config cfg = {}) : cfg_(cfg) {}

    // Returns the learning rate to use after observing `metric`.
    double observe(double metric, double current_lr) {
        if (metric > best_ + cfg_.threshold) {
            best_ = metric;
            bad_ = 0;
        } else {
            ++bad_;
        }
        if (cooldown_left_ > 0) {
            --cooldown_left_;
            bad_ = 0;
        }
        if (bad_ > cfg_.patience) {
            bad_ = 0;
            cooldown_left_ = cfg_.cooldown;
            return std::max(cfg_.min_lr, current_lr * cfg_.factor);
        }
        return current_lr;
    }

private:
    plateau_config cfg_;
    double best_ = -1e300;
    int bad_ = 0;
    int cooldown_left_ = 0;
};

// Stops when the monitored metric has not improved by `min_delta` for `patience` checks.
class early_stopping {
public:
    early_stopping(double min_delta = 0.001, int patience = 1) : min_delta_(min_delta), patience_(patience) {}

    bool should_stop(double metric) {
        if (metric > best_ + min_delta_) {
            best_ = metric;
            bad_ = 0;
            return false;
        }
        return ++bad_ >= patience_;
    }

private:
    double min_delta_;
    int patience_;
    double best_ = -1e300;
    int bad_ = 0;
};

}  // namespace quantact
