#pragma once

// Training recipe: binary cross-entropy on logits, AdamW with decoupled
// weight decay, per-step cosine annealing, seeded shuffling and early
// stopping on validation loss. Single-threaded and bit-reproducible for a
// fixed seed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/model.hpp"

namespace ecgdx::nn {

// ---------------- loss ----------------

// Mean over batch x labels of -[y log s(z) + (1-y) log(1-s(z))], computed in
// the stable max(z,0) - z*y + log(1+exp(-|z|)) form. Fills glogits when given.
inline double bce_with_logits(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                              Tensor* glogits = nullptr) {
    if (logits.data.size() != labels.size())
        throw std::invalid_argument("bce: logits/labels size mismatch");
    const double n = static_cast<double>(logits.data.size());
    double total = 0.0;
    if (glogits) *glogits = Tensor::zeros(logits.shape);
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double z = logits.data[i];
        const double y = labels[i] ? 1.0 : 0.0;
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (glogits) glogits->data[i] = (sigmoid(z) - y) / n;
    }
    return total / n;
}

// ---------------- schedule ----------------

// lr = lr0 * (1 + cos(pi * step / total_steps)) / 2
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0 || step > total_steps)
        throw std::invalid_argument("cosine_lr: step out of range");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * (1.0 + std::cos(3.14159265358979323846 * frac)) / 2.0;
}

// ---------------- optimizer ----------------

// AdamW: decoupled decay p -= lr*wd*p plus the bias-corrected Adam update.
class AdamW {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    void step(std::vector<ParamRef>& params, double lr, double weight_decay) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.trainable ? p.tensor->data.size() : 0, 0.0);
                v_.emplace_back(p.trainable ? p.tensor->data.size() : 0, 0.0);
            }
        }
        if (m_.size() != params.size()) throw std::invalid_argument("adamw: param layout changed");
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) continue;
            auto& value = params[i].tensor->data;
            auto& grad = params[i].tensor->grad;
            if (grad.size() != value.size())
                throw std::invalid_argument("adamw: missing gradient for " + params[i].name);
            for (std::size_t j = 0; j < value.size(); ++j) {
                const double g = grad[j];
                if (!std::isfinite(g))
                    throw std::runtime_error("non-finite gradient in " + params[i].name);
                m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * g;
                v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                value[j] -= lr * weight_decay * value[j];
                value[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
            }
        }
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

    std::uint64_t steps() const { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

// ---------------- early stopping ----------------

// Stop once the validation loss has not improved for `patience` consecutive
// epochs; the best epoch is the one to restore.
struct EarlyStopper {
    int patience = 5;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    // epoch is 1-based; returns true when training should stop after it.
    bool observe(int epoch, double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            best_epoch = epoch;
            stale = 0;
            return false;
        }
        ++stale;
        return stale >= patience;
    }
};

// ---------------- datasets ----------------

// Fixed-shape multi-label dataset; samples stored as float to halve memory,
// widened to double per batch.
struct Dataset {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t n_labels = 0;
    std::vector<float> x;          // n * channels * length
    std::vector<std::uint8_t> y;   // n * n_labels

    std::size_t size() const {
        const std::size_t per = channels * length;
        return per == 0 ? 0 : x.size() / per;
    }

    void validate() const {
        if (channels == 0 || length == 0 || n_labels == 0)
            throw std::invalid_argument("dataset: empty dimensions");
        if (x.size() % (channels * length) != 0 || y.size() % n_labels != 0 ||
            x.size() / (channels * length) != y.size() / n_labels)
            throw std::invalid_argument("dataset: inconsistent storage");
        if (size() == 0) throw std::invalid_argument("dataset: no samples");
    }

    Tensor batch_x(const std::vector<std::size_t>& idx) const {
        Tensor t = Tensor::zeros({idx.size(), channels, length});
        const std::size_t per = channels * length;
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < per; ++j)
                t.data[i * per + j] = static_cast<double>(x[idx[i] * per + j]);
        return t;
    }

    std::vector<std::uint8_t> batch_y(const std::vector<std::size_t>& idx) const {
        std::vector<std::uint8_t> out(idx.size() * n_labels);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < n_labels; ++k)
                out[i * n_labels + k] = y[idx[i] * n_labels + k];
        return out;
    }
};

// ---------------- training loop ----------------

struct TrainConfig {
    double lr0 = 1e-4;
    double weight_decay = 1e-5;
    int epochs = 30;
    int batch_size = 64;  // the full recipe uses 256 per device; desk default
    int patience = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr0 > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("bad lr/decay");
        if (epochs < 1 || batch_size < 1 || patience < 1)
            throw std::invalid_argument("epochs, batch_size, patience must be positive");
        if (patience > epochs) throw std::invalid_argument("patience exceeds epochs");
    }
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;  // value used for the last step of the epoch
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::string abort_reason;
};

// Mean validation loss in eval mode (batch-norm running statistics).
inline double evaluate_loss(EcgNet& model, const Dataset& data, int batch_size) {
    double total = 0.0;
    std::size_t counted = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        idx.clear();
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor logits = model.forward(data.batch_x(idx), false);
        const auto labels = data.batch_y(idx);
        total += bce_with_logits(logits, labels) * static_cast<double>(labels.size());
        counted += labels.size();
    }
    return total / static_cast<double>(counted);
}

// Per-sample scores (sigmoid of logits), eval mode.
inline std::vector<double> evaluate_scores(EcgNet& model, const Dataset& data,
                                           int batch_size = 64) {
    std::vector<double> scores;
    scores.reserve(data.size() * data.n_labels);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        idx.clear();
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor logits = model.forward(data.batch_x(idx), false);
        for (double z : logits.data) scores.push_back(sigmoid(z));
    }
    return scores;
}

using EpochObserver = std::function<void(int epoch, EcgNet& model, double val_loss)>;

// Runs the recipe and leaves the model holding the best-validation-epoch
// parameters. Divergence (non-finite loss or gradient) aborts and restores
// the last good snapshot.
inline TrainResult train(EcgNet& model, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const EpochObserver& observer = nullptr) {
    cfg.validate();
    train_set.validate();
    val_set.validate();
    if (train_set.n_labels != static_cast<std::size_t>(model.config().head_dim) ||
        val_set.n_labels != static_cast<std::size_t>(model.config().head_dim))
        throw std::invalid_argument("train: label dimension does not match head");

    const std::size_t n = train_set.size();
    const std::size_t steps_per_epoch =
        (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

    AdamW optimizer;
    EarlyStopper stopper{cfg.patience};
    TrainResult result;
    auto best_state = model.snapshot();
    bool have_best = false;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        double lr = cfg.lr0;
        try {
            for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
                Tensor logits = model.forward(train_set.batch_x(idx), true);
                const auto labels = train_set.batch_y(idx);
                Tensor glogits;
                const double loss = bce_with_logits(logits, labels, &glogits);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss");
                epoch_loss += loss * static_cast<double>(labels.size());
                seen += labels.size();

                model.zero_grad();
                model.backward(glogits);
                lr = cosine_lr(step, total_steps, cfg.lr0);
                auto params = model.params();
                optimizer.step(params, lr, cfg.weight_decay);
                ++step;
            }
        } catch (const std::runtime_error& e) {
            result.diverged = true;
            result.abort_reason = e.what();
            break;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(seen);
        stats.val_loss = evaluate_loss(model, val_set, cfg.batch_size);
        stats.lr = lr;
        result.history.push_back(stats);

        if (!std::isfinite(stats.val_loss)) {
            result.diverged = true;
            result.abort_reason = "non-finite validation loss";
            break;
        }

        const bool was_best = stats.val_loss < stopper.best;
        const bool stop = stopper.observe(epoch, stats.val_loss);
        if (was_best) {
            best_state = model.snapshot();
            have_best = true;
        }
        if (observer) observer(epoch, model, stats.val_loss);
        if (stop) break;
    }

    if (have_best) model.restore(best_state);
    result.best_epoch = stopper.best_epoch;
    result.best_val_loss = stopper.best;
    return result;
}

// Fresh model that keeps the pretrained backbone verbatim and replaces the
// head with a newly initialized linear layer of width new_head_dim. The new
// head starts at zero: the first updates then act like a linear probe and a
// random head cannot distort the pretrained features.
inline EcgNet finetune(EcgNet& pretrained, int new_head_dim, std::uint64_t seed = 0) {
    ModelConfig cfg = pretrained.config();
    cfg.head_dim = new_head_dim;
    EcgNet model(cfg, seed);

    auto src = pretrained.params();
    auto dst = model.params();
    if (src.size() != dst.size()) throw std::invalid_argument("finetune: backbone layout mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (dst[i].name.rfind("head.", 0) == 0) {
            for (auto& v : dst[i].tensor->data) v = 0.0;
            continue;
        }
        if (src[i].name != dst[i].name ||
            src[i].tensor->data.size() != dst[i].tensor->data.size())
            throw std::invalid_argument("finetune: backbone shape mismatch at " + dst[i].name);
        dst[i].tensor->data = src[i].tensor->data;
    }
    return model;
}

}  // namespace ecgdx::nn
