#include "popmag/train.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace popmag {

double lr_at(const TrainConfig& c, int d_model, long t) {
    const double td = double(t);
    const double sched = std::min(1.0 / std::sqrt(td), td / std::pow(double(c.warmup), 1.5));
    return c.lr_scale * sched / std::sqrt(double(d_model));
}

double corpus_ppl(const Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data) {
    double sum = 0.0;
    long n = 0;
    for (const auto& [cond, tgt] : data) {
        for (const StepLoss& l : m.teacher_forced_pass(cond, tgt)) {
            sum += l.total();
            ++n;
        }
    }
    return n > 0 ? std::exp(sum / double(n)) : 1.0;
}

TrainResult train(Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data,
                  const TrainConfig& c, AdamState& state) {
    if (data.empty()) throw model_error("train: empty corpus");
    if (state.m.empty()) {
        state.m = m.make_grad_map();
        state.v = m.make_grad_map();
    }
    std::mt19937_64 dropout_rng(c.seed);
    ParamMap grads = m.make_grad_map();

    TrainResult res;
    for (long step = 0; step < c.steps; ++step) {
        const auto& [cond, tgt] = data[size_t(step) % data.size()];
        for (auto& [name, g] : grads) g.zero();
        const auto losses = m.teacher_forced_pass(cond, tgt, &grads, &dropout_rng);
        const double loss = mean_loss(losses);
        if (!std::isfinite(loss)) throw non_finite_loss(state.t + 1);
        res.loss_curve.push_back(loss);

        state.t += 1;
        const double lr = lr_at(c, m.cfg.d_model, state.t);
        const double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
        const double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
        auto mi = state.m.begin();
        auto vi = state.v.begin();
        auto gi = grads.begin();
        for (auto pi = m.params.begin(); pi != m.params.end(); ++pi, ++mi, ++vi, ++gi) {
            Tensor& p = pi->second;
            Tensor& mm = mi->second;
            Tensor& vv = vi->second;
            const Tensor& g = gi->second;
            for (size_t i = 0; i < p.size(); ++i) {
                mm.data[i] = c.beta1 * mm.data[i] + (1.0 - c.beta1) * g.data[i];
                vv.data[i] = c.beta2 * vv.data[i] + (1.0 - c.beta2) * g.data[i] * g.data[i];
                p.data[i] -=
                    lr * (mm.data[i] / bc1) / (std::sqrt(vv.data[i] / bc2) + c.eps);
            }
        }
        res.steps_run = step + 1;

        const bool probe = c.target_ppl > 0.0 && (step + 1) % c.check_every == 0;
        if (probe || c.verbose) {
            const double ppl = probe ? corpus_ppl(m, data) : 0.0;
            if (c.verbose)
                std::fprintf(stderr, "step %ld  loss %.4f%s%s\n", state.t, loss,
                             probe ? "  ppl " : "", probe ? std::to_string(ppl).c_str() : "");
            if (probe && ppl < c.target_ppl) break;
        }
    }
    res.final_ppl = corpus_ppl(m, data);
    return res;
}

}  // namespace popmag
