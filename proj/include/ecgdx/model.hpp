#pragma once

// Backbone + head assembly: stem convolution, a stack of bottleneck blocks,
// global average pooling over time and a linear classification head
// producing one logit per label.

#include <string>
#include <vector>

#include "ecgdx/nn.hpp"

namespace ecgdx::nn {

struct ModelConfig {
    int n_leads = 12;
    int input_len = 5000;
    int stem_channels = 16;
    int stem_kernel = 15;
    int stem_stride = 2;
    std::vector<BlockConfig> blocks;
    int head_dim = 1;

    // Four-block default sized to train in minutes on a desktop while still
    // exercising grouped convolutions, strides and channel attention.
    static ModelConfig default_config(int head_dim) {
        ModelConfig cfg;
        cfg.head_dim = head_dim;
        cfg.blocks = {
            {16, 8, 16, 7, 2, 4, 4},
            {16, 8, 16, 7, 1, 4, 4},
            {16, 16, 32, 7, 2, 4, 4},
            {32, 16, 32, 7, 1, 4, 4},
        };
        return cfg;
    }

    // Compact variant for experiments on short segments.
    static ModelConfig compact_config(int n_leads, int input_len, int head_dim) {
        ModelConfig cfg;
        cfg.n_leads = n_leads;
        cfg.input_len = input_len;
        cfg.head_dim = head_dim;
        cfg.stem_channels = 12;
        cfg.stem_kernel = 9;
        cfg.stem_stride = 4;
        cfg.blocks = {
            {12, 8, 16, 7, 2, 4, 4},
            {16, 8, 16, 7, 1, 4, 4},
        };
        return cfg;
    }

    int feature_dim() const { return blocks.empty() ? stem_channels : blocks.back().out_ch; }

    void validate() const {
        if (n_leads < 1 || n_leads > 12) throw std::invalid_argument("n_leads must be 1-12");
        if (input_len < stem_kernel) throw std::invalid_argument("input_len too short");
        if (stem_kernel < 1 || stem_kernel % 2 == 0)
            throw std::invalid_argument("stem kernel must be odd");
        if (stem_stride < 1) throw std::invalid_argument("stem stride must be >= 1");
        if (head_dim < 1) throw std::invalid_argument("head_dim must be positive");
        int ch = stem_channels;
        for (const auto& b : blocks) {
            b.validate();
            if (b.in_ch != ch) throw std::invalid_argument("block channel chain broken");
            ch = b.out_ch;
        }
    }
};

class EcgNet {
public:
    EcgNet() = default;

    explicit EcgNet(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg.validate();
        stem_ = Conv1d(cfg.n_leads, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, 1);
        stem_bn_ = BatchNorm1d(cfg.stem_channels);
        for (const auto& bc : cfg.blocks) blocks_.emplace_back(bc);
        head_ = Linear(cfg.feature_dim(), cfg.head_dim);

        Rng rng(derive_seed(seed, 0x6d6f64656cULL));
        stem_.init(rng);
        for (auto& b : blocks_) b.init(rng);
        head_.init(rng);
    }

    EcgNet(const EcgNet&) = delete;
    EcgNet& operator=(const EcgNet&) = delete;
    EcgNet(EcgNet&&) = default;
    EcgNet& operator=(EcgNet&&) = default;

    const ModelConfig& config() const { return cfg_; }

    // (batch, n_leads, input_len) -> (batch, head_dim) logits
    Tensor forward(const Tensor& x, bool training) {
        if (x.rank() != 3 || x.shape[1] != static_cast<std::size_t>(cfg_.n_leads))
            throw std::invalid_argument("model: wrong lead count");
        Tensor h = stem_relu_.forward(stem_bn_.forward(stem_.forward(x), training));
        for (auto& b : blocks_) h = b.forward(h, training);
        return head_.forward(pool_.forward(h));
    }

    Tensor backward(const Tensor& glogits) {
        Tensor g = pool_.backward(head_.backward(glogits));
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
        return stem_.backward(stem_bn_.backward(stem_relu_.backward(g)));
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        stem_.collect(out, "stem.conv");
        stem_bn_.collect(out, "stem.bn");
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(out, "block" + std::to_string(i));
        head_.collect(out, "head");
        return out;
    }

    void zero_grad() {
        for (auto& p : params())
            if (p.trainable) p.tensor->zero_grad();
    }

    // Flat copy of every named tensor, used for best-epoch snapshots.
    std::vector<std::vector<double>> snapshot() {
        std::vector<std::vector<double>> state;
        for (auto& p : params()) state.push_back(p.tensor->data);
        return state;
    }

    void restore(const std::vector<std::vector<double>>& state) {
        auto refs = params();
        if (state.size() != refs.size()) throw std::invalid_argument("snapshot layout mismatch");
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (state[i].size() != refs[i].tensor->data.size())
                throw std::invalid_argument("snapshot shape mismatch");
            refs[i].tensor->data = state[i];
        }
    }

    Linear& head() { return head_; }
    std::vector<BottleneckBlock>& blocks() { return blocks_; }

private:
    ModelConfig cfg_;
    Conv1d stem_;
    BatchNorm1d stem_bn_;
    ReLU stem_relu_;
    std::vector<BottleneckBlock> blocks_;
    GlobalAvgPool pool_;
    Linear head_;
};

}  // namespace ecgdx::nn
