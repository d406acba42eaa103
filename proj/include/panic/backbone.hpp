//
// Residual 3D convolutional backbone: a stem followed by four stages of
// basic blocks (two 3x3x3 convs each, instance-normalized, identity or
// 1x1x1-projected skip). Produces a channels-x-voxels feature map.
//

#pragma once

#include <panic/conv.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <array>
#include <string>
#include <vector>

namespace panic::img {

struct BackboneConfig {
    int stem_channels = 4;
    std::array<int, 4> stage_channels{4, 8, 16, 32};
    std::array<int, 4> stage_blocks{2, 2, 2, 2};
    std::array<int, 4> stage_strides{1, 2, 2, 1};
    int stem_stride = 2;

    int out_channels() const { return stage_channels[3]; }
};

template <class S>
struct BasicBlock {
    Conv3d<S> conv1, conv2;
    InstanceNorm3d<S> norm1, norm2;
    bool project = false;  // 1x1x1 skip projection when shape changes
    Conv3d<S> down_conv;
    InstanceNorm3d<S> down_norm;

    void init(int ci, int co, int stride, Rng& rng) {
        conv1.init(ci, co, 3, stride, false, rng);
        norm1.init(co);
        conv2.init(co, co, 3, 1, false, rng);
        norm2.init(co);
        project = (stride != 1 || ci != co);
        if (project) {
            down_conv.init(ci, co, 1, stride, false, rng);
            down_norm.init(co);
        }
    }
};

template <class S>
struct BlockCache {
    FeatureMap<S> in;
    FeatureMap<S> c1;      // conv1 output
    NormCache<S> n1;
    FeatureMap<S> a1;      // post norm1, pre relu
    FeatureMap<S> h1;      // post relu
    FeatureMap<S> c2;
    NormCache<S> n2;
    FeatureMap<S> skip_in;   // projected skip pre-norm (conv output)
    NormCache<S> nd;
    FeatureMap<S> pre;     // sum before final relu
};

template <class S>
struct BlockGrads {
    Conv3dGrads<S> conv1, conv2, down_conv;
    NormGrads<S> norm1, norm2, down_norm;
    bool project = false;
    void zero() {
        conv1.zero();
        conv2.zero();
        norm1.zero();
        norm2.zero();
        if (project) {
            down_conv.zero();
            down_norm.zero();
        }
    }
    void add(const BlockGrads& o) {
        conv1.add(o.conv1);
        conv2.add(o.conv2);
        norm1.add(o.norm1);
        norm2.add(o.norm2);
        if (project) {
            down_conv.add(o.down_conv);
            down_norm.add(o.down_norm);
        }
    }
};

template <class S>
struct BackboneCache {
    FeatureMap<S> input;
    FeatureMap<S> stem_c;
    NormCache<S> stem_n;
    FeatureMap<S> stem_a;  // post-norm pre-relu
    FeatureMap<S> stem_h;  // post relu
    std::vector<BlockCache<S>> blocks;
};

template <class S>
struct BackboneGrads {
    Conv3dGrads<S> stem;
    NormGrads<S> stem_norm;
    std::vector<BlockGrads<S>> blocks;
    void zero() {
        stem.zero();
        stem_norm.zero();
        for (auto& b : blocks) b.zero();
    }
    void add(const BackboneGrads& o) {
        stem.add(o.stem);
        stem_norm.add(o.stem_norm);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].add(o.blocks[i]);
    }
};

template <class S>
class Backbone {
public:
    Backbone() = default;

    Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        stem_.init(1, cfg.stem_channels, 3, cfg.stem_stride, false, rng);
        stem_norm_.init(cfg.stem_channels);
        int ci = cfg.stem_channels;
        for (int s = 0; s < 4; ++s) {
            for (int b = 0; b < cfg.stage_blocks[static_cast<std::size_t>(s)]; ++b) {
                const int stride = b == 0 ? cfg.stage_strides[static_cast<std::size_t>(s)] : 1;
                const int co = cfg.stage_channels[static_cast<std::size_t>(s)];
                blocks_.emplace_back();
                blocks_.back().init(ci, co, stride, rng);
                ci = co;
            }
        }
    }

    const BackboneConfig& config() const { return cfg_; }
    int out_channels() const { return cfg_.out_channels(); }
    std::vector<BasicBlock<S>>& blocks() { return blocks_; }
    const std::vector<BasicBlock<S>>& blocks() const { return blocks_; }
    Conv3d<S>& stem() { return stem_; }
    InstanceNorm3d<S>& stem_norm() { return stem_norm_; }

    Grid3 out_grid(const Grid3& in) const {
        Grid3 g = stem_.out_grid(in);
        for (const auto& b : blocks_) g = b.conv1.out_grid(g);
        return g;
    }

    // cache == nullptr -> evaluation forward (no state retained).
    FeatureMap<S> forward(const Volume<S>& vol, BackboneCache<S>* cache,
                          ConvWorkspace<S>& ws) const {
        FeatureMap<S> x;
        x.grid = vol.grid;
        x.chan = vol.data.transpose();  // single input channel
        if (cache) cache->input = x;

        FeatureMap<S> c, a;
        stem_.forward(x, c, ws);
        stem_norm_.forward(c, a, cache ? &cache->stem_n : nullptr);
        FeatureMap<S> h{a.grid, a.chan.cwiseMax(S(0))};
        if (cache) {
            cache->stem_c = c;
            cache->stem_a = a;
            cache->stem_h = h;
            cache->blocks.resize(blocks_.size());
        }
        FeatureMap<S> cur = std::move(h);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            cur = block_forward(blocks_[i], cur, cache ? &cache->blocks[i] : nullptr, ws);
        return cur;
    }

    // dL/d(output feature map) -> parameter grads. Input grads are not needed.
    void backward(const BackboneCache<S>& cache, const MatX<S>& dout, BackboneGrads<S>& g,
                  ConvWorkspace<S>& ws) const {
        MatX<S> d = dout;
        for (std::size_t i = blocks_.size(); i-- > 0;)
            d = block_backward(blocks_[i], cache.blocks[i], d, g.blocks[i], ws);
        // stem relu
        MatX<S> da = d.cwiseProduct((cache.stem_a.chan.array() > S(0)).template cast<S>().matrix());
        MatX<S> dc = MatX<S>::Zero(cache.stem_c.chan.rows(), cache.stem_c.chan.cols());
        stem_norm_.backward(cache.stem_n, da, dc, g.stem_norm);
        stem_.backward(cache.input, dc, nullptr, g.stem, ws);
    }

    BackboneGrads<S> make_grads() const {
        BackboneGrads<S> g;
        g.stem = stem_.make_grads();
        g.stem_norm = stem_norm_.make_grads();
        g.blocks.resize(blocks_.size());
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            auto& b = blocks_[i];
            auto& gb = g.blocks[i];
            gb.project = b.project;
            gb.conv1 = b.conv1.make_grads();
            gb.conv2 = b.conv2.make_grads();
            gb.norm1 = b.norm1.make_grads();
            gb.norm2 = b.norm2.make_grads();
            if (b.project) {
                gb.down_conv = b.down_conv.make_grads();
                gb.down_norm = b.down_norm.make_grads();
            }
        }
        return g;
    }

    template <class Visitor>
    void visit_params(Visitor&& vis) {
        vis("backbone.stem.w", stem_.w.data(), stem_.w.size(), true);
        vis("backbone.stem.gamma", stem_norm_.gamma.data(), stem_norm_.gamma.size(), false);
        vis("backbone.stem.beta", stem_norm_.beta.data(), stem_norm_.beta.size(), false);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string base = "backbone.block" + std::to_string(i);
            auto& b = blocks_[i];
            vis(base + ".conv1.w", b.conv1.w.data(), b.conv1.w.size(), true);
            vis(base + ".norm1.gamma", b.norm1.gamma.data(), b.norm1.gamma.size(), false);
            vis(base + ".norm1.beta", b.norm1.beta.data(), b.norm1.beta.size(), false);
            vis(base + ".conv2.w", b.conv2.w.data(), b.conv2.w.size(), true);
            vis(base + ".norm2.gamma", b.norm2.gamma.data(), b.norm2.gamma.size(), false);
            vis(base + ".norm2.beta", b.norm2.beta.data(), b.norm2.beta.size(), false);
            if (b.project) {
                vis(base + ".down.w", b.down_conv.w.data(), b.down_conv.w.size(), true);
                vis(base + ".down.gamma", b.down_norm.gamma.data(), b.down_norm.gamma.size(),
                    false);
                vis(base + ".down.beta", b.down_norm.beta.data(), b.down_norm.beta.size(), false);
            }
        }
    }

    template <class Visitor>
    void visit_grads(BackboneGrads<S>& g, Visitor&& vis) const {
        vis("backbone.stem.w", g.stem.w.data(), g.stem.w.size(), true);
        vis("backbone.stem.gamma", g.stem_norm.gamma.data(), g.stem_norm.gamma.size(), false);
        vis("backbone.stem.beta", g.stem_norm.beta.data(), g.stem_norm.beta.size(), false);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string base = "backbone.block" + std::to_string(i);
            auto& gb = g.blocks[i];
            vis(base + ".conv1.w", gb.conv1.w.data(), gb.conv1.w.size(), true);
            vis(base + ".norm1.gamma", gb.norm1.gamma.data(), gb.norm1.gamma.size(), false);
            vis(base + ".norm1.beta", gb.norm1.beta.data(), gb.norm1.beta.size(), false);
            vis(base + ".conv2.w", gb.conv2.w.data(), gb.conv2.w.size(), true);
            vis(base + ".norm2.gamma", gb.norm2.gamma.data(), gb.norm2.gamma.size(), false);
            vis(base + ".norm2.beta", gb.norm2.beta.data(), gb.norm2.beta.size(), false);
            if (gb.project) {
                vis(base + ".down.w", gb.down_conv.w.data(), gb.down_conv.w.size(), true);
                vis(base + ".down.gamma", gb.down_norm.gamma.data(), gb.down_norm.gamma.size(),
                    false);
                vis(base + ".down.beta", gb.down_norm.beta.data(), gb.down_norm.beta.size(),
                    false);
            }
        }
    }

private:
    static FeatureMap<S> block_forward(const BasicBlock<S>& blk, const FeatureMap<S>& in,
                                       BlockCache<S>* c, ConvWorkspace<S>& ws) {
        FeatureMap<S> c1, a1, c2, a2, skip_c, skip;
        blk.conv1.forward(in, c1, ws);
        blk.norm1.forward(c1, a1, c ? &c->n1 : nullptr);
        FeatureMap<S> h1{a1.grid, a1.chan.cwiseMax(S(0))};
        blk.conv2.forward(h1, c2, ws);
        blk.norm2.forward(c2, a2, c ? &c->n2 : nullptr);
        if (blk.project) {
            blk.down_conv.forward(in, skip_c, ws);
            blk.down_norm.forward(skip_c, skip, c ? &c->nd : nullptr);
        } else {
            skip = in;
        }
        FeatureMap<S> pre{a2.grid, a2.chan + skip.chan};
        FeatureMap<S> out{pre.grid, pre.chan.cwiseMax(S(0))};
        if (c) {
            c->in = in;
            c->c1 = std::move(c1);
            c->a1 = std::move(a1);
            c->h1 = std::move(h1);
            c->c2 = std::move(c2);
            if (blk.project) c->skip_in = std::move(skip_c);
            c->pre = std::move(pre);
        }
        return out;
    }

    // Returns d(loss)/d(block input).
    static MatX<S> block_backward(const BasicBlock<S>& blk, const BlockCache<S>& c,
                                  const MatX<S>& dout, BlockGrads<S>& g, ConvWorkspace<S>& ws) {
        MatX<S> dpre =
            dout.cwiseProduct((c.pre.chan.array() > S(0)).template cast<S>().matrix());
        MatX<S> din = MatX<S>::Zero(c.in.chan.rows(), c.in.chan.cols());
        // skip path
        if (blk.project) {
            MatX<S> dskip_c = MatX<S>::Zero(c.skip_in.chan.rows(), c.skip_in.chan.cols());
            blk.down_norm.backward(c.nd, dpre, dskip_c, g.down_norm);
            blk.down_conv.backward(c.in, dskip_c, &din, g.down_conv, ws);
        } else {
            din += dpre;
        }
        // main path
        MatX<S> dc2 = MatX<S>::Zero(c.c2.chan.rows(), c.c2.chan.cols());
        blk.norm2.backward(c.n2, dpre, dc2, g.norm2);
        MatX<S> dh1 = MatX<S>::Zero(c.h1.chan.rows(), c.h1.chan.cols());
        blk.conv2.backward(c.h1, dc2, &dh1, g.conv2, ws);
        MatX<S> da1 = dh1.cwiseProduct((c.a1.chan.array() > S(0)).template cast<S>().matrix());
        MatX<S> dc1 = MatX<S>::Zero(c.c1.chan.rows(), c.c1.chan.cols());
        blk.norm1.backward(c.n1, da1, dc1, g.norm1);
        blk.conv1.backward(c.in, dc1, &din, g.conv1, ws);
        return din;
    }

    BackboneConfig cfg_;
    Conv3d<S> stem_;
    InstanceNorm3d<S> stem_norm_;
    std::vector<BasicBlock<S>> blocks_;
};

}  // namespace panic::img
