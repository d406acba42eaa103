//
// Decoupled-weight-decay adaptive optimizer over a list of parameter/gradient
// bindings, with a per-group freeze switch (image branch vs the rest) and a
// triangular cyclic learning-rate schedule.
//

#pragma once

#include <panic/model.hpp>
#include <panic/types.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace panic {

// Triangular wave between `low` and 1.0 with the given period in epochs:
// factor(0) = low, factor(period/2) = 1.0, factor(period) = low.
inline double cyclic_lr_factor(long epoch, long period, double low) {
    if (period <= 1) return 1.0;
    const double phase = static_cast<double>(epoch % period) / static_cast<double>(period);
    const double tri = 1.0 - std::abs(2.0 * phase - 1.0);
    return low + (1.0 - low) * tri;
}

template <class S>
struct ParamBinding {
    std::string name;
    S* param = nullptr;
    S* grad = nullptr;
    Index size = 0;
    bool decay = false;
    bool image = false;
};

// Zip a model's parameter and gradient registries into bindings.
template <class S>
std::vector<ParamBinding<S>> bind_params(PanicModel<S>& model, PanicGrads<S>& grads) {
    std::vector<ParamBinding<S>> out;
    model.visit_params([&](const std::string& name, S* p, Index n, bool decay, bool image) {
        out.push_back(ParamBinding<S>{name, p, nullptr, n, decay, image});
    });
    std::size_t i = 0;
    model.visit_grads(grads, [&](const std::string& name, S* g, Index n, bool, bool) {
        if (i >= out.size() || out[i].name != name || out[i].size != n)
            throw ConfigError("parameter/gradient registry mismatch at '" + name + "'");
        out[i].grad = g;
        ++i;
    });
    if (i != out.size()) throw ConfigError("gradient registry shorter than parameters");
    return out;
}

template <class S>
class AdamW {
public:
    struct Hyper {
        double lr = 0.002;
        double weight_decay = 0.0005;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW(std::vector<ParamBinding<S>> bindings, Hyper hyper)
        : hyper_(hyper), bindings_(std::move(bindings)) {
        for (const auto& b : bindings_) {
            m_.push_back(VecX<S>::Zero(b.size));
            v_.push_back(VecX<S>::Zero(b.size));
            t_.push_back(0);
        }
    }

    // lr_factor scales the base rate (cyclic schedule); image_phase=false
    // leaves image-group parameters untouched.
    void step(double lr_factor, bool image_phase) {
        const double lr = hyper_.lr * lr_factor;
        for (std::size_t s = 0; s < bindings_.size(); ++s) {
            const auto& b = bindings_[s];
            if (b.image && !image_phase) continue;
            t_[s] += 1;
            const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_[s]));
            const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_[s]));
            for (Index i = 0; i < b.size; ++i) {
                const double g = static_cast<double>(b.grad[i]);
                const double m =
                    hyper_.beta1 * static_cast<double>(m_[s][i]) + (1.0 - hyper_.beta1) * g;
                const double v =
                    hyper_.beta2 * static_cast<double>(v_[s][i]) + (1.0 - hyper_.beta2) * g * g;
                m_[s][i] = static_cast<S>(m);
                v_[s][i] = static_cast<S>(v);
                double upd = lr * (m / bc1) / (std::sqrt(v / bc2) + hyper_.eps);
                if (b.decay) upd += lr * hyper_.weight_decay * static_cast<double>(b.param[i]);
                b.param[i] = static_cast<S>(static_cast<double>(b.param[i]) - upd);
            }
        }
    }

    const Hyper& hyper() const { return hyper_; }

private:
    Hyper hyper_;
    std::vector<ParamBinding<S>> bindings_;
    std::vector<VecX<S>> m_, v_;
    std::vector<long> t_;
};

}  // namespace panic
