#include "popmag/chords.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace popmag {

namespace {

constexpr double kSmoothing = 1e-3;
constexpr double kForcedOff = -1e30;  // emission of non-NoChord states on silent frames

std::array<double, 12> make_log_template(const ChordSymbol& c) {
    std::array<double, 12> w;
    w.fill(kSmoothing);
    for (int iv : quality_intervals(c.quality)) w[(c.root + iv) % 12] += 1.0;
    double sum = 0;
    for (double v : w) sum += v;
    std::array<double, 12> out;
    for (int pc = 0; pc < 12; ++pc) out[pc] = std::log(w[pc] / sum);
    return out;
}

std::array<double, 12> uniform_log_template() {
    std::array<double, 12> out;
    out.fill(std::log(1.0 / 12.0));
    return out;
}

bool silent(const std::array<double, 12>& hist) {
    return std::all_of(hist.begin(), hist.end(), [](double v) { return v == 0.0; });
}

}  // namespace

ChordHmm::ChordHmm() {
    chords.reserve(kNumChords);
    for (int i = 0; i < kNumChords; ++i) chords.push_back(ChordSymbol::from_index(i));
    log_templates.reserve(chords.size() + 1);
    for (const auto& c : chords) log_templates.push_back(make_log_template(c));
    log_templates.push_back(uniform_log_template());
}

ChordHmm::ChordHmm(std::vector<ChordSymbol> states, double stay, double switch_lg)
    : chords(std::move(states)), stay_logit(stay), switch_logit(switch_lg) {
    log_templates.reserve(chords.size() + 1);
    for (const auto& c : chords) log_templates.push_back(make_log_template(c));
    log_templates.push_back(uniform_log_template());
}

double ChordHmm::emission(int state, const std::array<double, 12>& hist) const {
    if (silent(hist)) return state == nochord_state() ? 0.0 : kForcedOff;
    double acc = 0;
    for (int pc = 0; pc < 12; ++pc) acc += hist[pc] * log_templates[state][pc];
    return acc;
}

std::vector<int> ChordHmm::viterbi(const std::vector<std::array<double, 12>>& frames) const {
    const int T = int(frames.size());
    const int S = num_states();
    if (T == 0) return {};

    std::vector<std::vector<double>> e(T, std::vector<double>(S));
    for (int t = 0; t < T; ++t)
        for (int s = 0; s < S; ++s) e[t][s] = emission(s, frames[t]);

    // Suffix values: B[t][s] = best score of frames t..T-1 with state s at t,
    // computed as e + M so the reconstruction can re-derive M exactly.
    std::vector<std::vector<double>> B(T, std::vector<double>(S));
    std::vector<std::vector<double>> M(T, std::vector<double>(S, 0.0));
    B[T - 1] = e[T - 1];
    for (int t = T - 2; t >= 0; --t) {
        // max and second max of B[t+1] for the switch branch
        int arg1 = 0;
        for (int s = 1; s < S; ++s)
            if (B[t + 1][s] > B[t + 1][arg1]) arg1 = s;
        double max2 = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < S; ++s)
            if (s != arg1) max2 = std::max(max2, B[t + 1][s]);
        for (int s = 0; s < S; ++s) {
            double switch_best = (s == arg1) ? max2 : B[t + 1][arg1];
            M[t][s] = std::max(stay_logit + B[t + 1][s], switch_logit + switch_best);
            B[t][s] = e[t][s] + M[t][s];
        }
    }

    std::vector<int> path(T);
    int best = 0;
    for (int s = 1; s < S; ++s)
        if (B[0][s] > B[0][best]) best = s;
    // lexicographically smallest start among exact maxima
    for (int s = 0; s < S; ++s)
        if (B[0][s] == B[0][best]) {
            best = s;
            break;
        }
    path[0] = best;
    for (int t = 0; t + 1 < T; ++t) {
        int cur = path[t];
        int next = -1;
        for (int s = 0; s < S && next < 0; ++s)
            if ((s == cur ? stay_logit : switch_logit) + B[t + 1][s] == M[t][cur]) next = s;
        path[t + 1] = next;
    }
    return path;
}

std::vector<std::array<double, 12>> frame_histograms(const Score& s) {
    std::vector<std::array<double, 12>> frames(size_t(s.bars) * 2);
    for (auto& f : frames) f.fill(0.0);
    const long piece_end = long(s.bars) * kStepsPerBar;
    for (const auto& [role, notes] : s.tracks) {
        if (role == Role::Drum) continue;
        for (const auto& n : notes) {
            const int pc = (n.pitch_or_drum - 1) % 12;
            const long on = n.onset_step;
            const long off = std::min<long>(on + n.dur_steps, piece_end);
            for (long f = on / kStepsPerHalfBar; f * kStepsPerHalfBar < off; ++f) {
                long lo = std::max(on, f * kStepsPerHalfBar);
                long hi = std::min(off, (f + 1) * kStepsPerHalfBar);
                if (hi > lo) frames[f][pc] += double(hi - lo);
            }
        }
    }
    return frames;
}

ChordLane infer_chords(const Score& s) {
    static const ChordHmm default_hmm;
    return infer_chords(s, default_hmm);
}

ChordLane infer_chords(const Score& s, const ChordHmm& hmm) {
    bool any_melodic = false;
    for (const auto& [role, notes] : s.tracks)
        if (role != Role::Drum && !notes.empty()) any_melodic = true;
    if (!any_melodic) throw empty_input("chord inference needs at least one melodic note");

    auto frames = frame_histograms(s);
    auto path = hmm.viterbi(frames);

    ChordLane lane(path.size());
    ChordSymbol previous{0, ChordQuality::Major};  // C major before any sounded chord
    for (size_t t = 0; t < path.size(); ++t) {
        if (path[t] == hmm.nochord_state()) {
            lane[t] = previous;
        } else {
            lane[t] = hmm.chords[path[t]];
            previous = lane[t];
        }
    }
    return lane;
}

}  // namespace popmag
