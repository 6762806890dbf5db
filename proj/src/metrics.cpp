#include "popmag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "popmag/codec.hpp"
#include "popmag/vocab.hpp"

namespace popmag {

namespace {

constexpr int kGridPerClass = 8;

// Standard normal CDF.
double ncdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Non-throwing histogram used by the cell scan; empty result means skip.
std::vector<long> cell_counts(const Score& s, Feature f, Role track, int bar) {
    std::vector<long> counts(size_t(feature_classes(f)), 0);
    const auto it = s.tracks.find(track);
    if (it == s.tracks.end()) return counts;
    const std::vector<QNote>& notes = it->second;
    if (f == Feature::IOI) {
        for (size_t i = 0; i + 1 < notes.size(); ++i) {
            if (notes[i].onset_step / kStepsPerBar != bar) continue;
            const int gap = std::clamp(notes[i + 1].onset_step - notes[i].onset_step, 1, 32);
            ++counts[size_t(gap - 1)];
        }
        return counts;
    }
    for (const QNote& n : notes) {
        if (n.onset_step / kStepsPerBar != bar) continue;
        int cls = 0;
        switch (f) {
            case Feature::P: cls = (n.pitch_or_drum - 1) % 12; break;
            case Feature::V: cls = n.vel_level - 1; break;
            case Feature::D: cls = n.dur_steps - 1; break;
            case Feature::IOI: break;  // handled above
        }
        ++counts[size_t(cls)];
    }
    return counts;
}

long total(const std::vector<long>& counts) {
    return std::accumulate(counts.begin(), counts.end(), 0L);
}

double trapezoid(const std::vector<double>& grid, const std::vector<double>& val) {
    double acc = 0.0;
    for (size_t j = 0; j + 1 < grid.size(); ++j)
        acc += 0.5 * (grid[j + 1] - grid[j]) * (val[j] + val[j + 1]);
    return acc;
}

}  // namespace

int feature_classes(Feature f) { return f == Feature::P ? 12 : 32; }

std::string_view feature_name(Feature f) {
    switch (f) {
        case Feature::P: return "pitch_class";
        case Feature::V: return "velocity";
        case Feature::D: return "duration";
        case Feature::IOI: return "ioi";
    }
    return "?";
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["ca"] = r.ca;
    j["ppl"] = r.ppl;
    j["d_p"] = r.d_p;
    j["d_v"] = r.d_v;
    j["d_d"] = r.d_d;
    j["d_ioi"] = r.d_ioi;
    j["skipped_cells"] = r.skipped_cells;
    return j.dump();
}

double chord_accuracy(const Score& gen, const ChordLane& lane, ChordGranularity granularity) {
    if (lane.size() < size_t(2 * gen.bars))
        throw shape_mismatch("chord lane shorter than the score");
    long cells = 0, matches = 0;
    for (const auto& [role, notes] : gen.tracks) {
        if (role == Role::Drum || notes.empty()) continue;
        Score solo;
        solo.tempo_class = gen.tempo_class;
        solo.bars = gen.bars;
        solo.tracks[role] = notes;
        const ChordLane inferred = infer_chords(solo);
        if (granularity == ChordGranularity::HalfBar) {
            for (int j = 0; j < 2 * gen.bars; ++j) {
                ++cells;
                matches += inferred[size_t(j)] == lane[size_t(j)];
            }
        } else {
            for (int b = 0; b < gen.bars; ++b) {
                ++cells;
                matches += inferred[size_t(2 * b)] == lane[size_t(2 * b)];
            }
        }
    }
    if (cells == 0) throw empty_input("chord accuracy needs a non-drum track with notes");
    return double(matches) / double(cells);
}

double perplexity(const Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data,
                  PplMode mode) {
    double nll = 0.0;
    long denom = 0;
    for (size_t piece = 0; piece < data.size(); ++piece) {
        const auto losses = m.teacher_forced_pass(data[piece].first, data[piece].second);
        for (const StepLoss& sl : losses) {
            if (mode == PplMode::PerStep) {
                nll += sl.note ? (sl.h1 + sl.h2 + sl.h3) / 3.0 : sl.h1;
                denom += 1;
            } else {
                nll += sl.h1 + (sl.note ? sl.h2 + sl.h3 : 0.0);
                denom += sl.note ? 3 : 1;
            }
        }
        if (!std::isfinite(nll)) throw non_finite_loss(long(piece));
    }
    if (denom == 0) throw empty_input("perplexity needs at least one predicting step");
    return std::exp(nll / double(denom));
}

std::vector<long> feature_histogram(const Score& s, Feature f, Role track, int bar) {
    std::vector<long> counts = cell_counts(s, f, track, bar);
    if (total(counts) == 0) throw empty_cell("no events for this track and bar");
    return counts;
}

ClassPdf kde_pdf(const std::vector<long>& counts, double bandwidth_override) {
    const long n = total(counts);
    if (n < 1) throw empty_cell("cannot smooth an empty histogram");
    const int K = int(counts.size());

    // Scott's rule over the class centers (1..K), floored at half a class.
    double mean = 0.0;
    for (int c = 0; c < K; ++c) mean += double(counts[size_t(c)]) * (c + 1);
    mean /= double(n);
    double var = 0.0;
    for (int c = 0; c < K; ++c) {
        const double d = (c + 1) - mean;
        var += double(counts[size_t(c)]) * d * d;
    }
    const double sigma = std::sqrt(var / double(n));
    const double h = bandwidth_override > 0.0
                         ? bandwidth_override
                         : std::max(0.5, std::pow(double(n), -0.2) * sigma);

    ClassPdf pdf;
    pdf.classes = K;
    const int points = kGridPerClass * K + 1;
    pdf.grid.resize(size_t(points));
    pdf.density.assign(size_t(points), 0.0);
    for (int j = 0; j < points; ++j) pdf.grid[size_t(j)] = 0.5 + double(j) / kGridPerClass;

    // Piecewise-constant histogram convolved with a Gaussian: each class is a
    // unit-width box whose smoothed mass is a difference of normal CDFs.
    for (int c = 0; c < K; ++c) {
        if (counts[size_t(c)] == 0) continue;
        const double w = double(counts[size_t(c)]) / double(n);
        const double lo = (c + 1) - 0.5, hi = (c + 1) + 0.5;
        for (int j = 0; j < points; ++j) {
            const double x = pdf.grid[size_t(j)];
            pdf.density[size_t(j)] += w * (ncdf((x - lo) / h) - ncdf((x - hi) / h));
        }
    }
    const double mass = trapezoid(pdf.grid, pdf.density);
    for (double& d : pdf.density) d /= mass;
    return pdf;
}

double overlapped_area(const ClassPdf& p, const ClassPdf& q) {
    if (p.classes != q.classes || p.grid.size() != q.grid.size())
        throw grid_mismatch("densities live on different grids");
    std::vector<double> lower(p.density.size());
    for (size_t j = 0; j < lower.size(); ++j) lower[j] = std::min(p.density[j], q.density[j]);
    return std::clamp(trapezoid(p.grid, lower), 0.0, 1.0);
}

DistanceCells distribution_cells(const Score& gen, const Score& ref, Feature f) {
    if (gen.bars != ref.bars) throw shape_mismatch("bar counts differ");
    std::vector<Role> roles;
    for (const auto& [role, notes] : gen.tracks) roles.push_back(role);
    for (const auto& [role, notes] : ref.tracks)
        if (!gen.tracks.count(role)) roles.push_back(role);
    std::sort(roles.begin(), roles.end());

    DistanceCells out;
    for (Role role : roles) {
        for (int bar = 0; bar < gen.bars; ++bar) {
            const std::vector<long> a = cell_counts(gen, f, role, bar);
            const std::vector<long> b = cell_counts(ref, f, role, bar);
            if (total(a) == 0 || total(b) == 0) {
                ++out.skipped;
                continue;
            }
            out.oa_sum += overlapped_area(kde_pdf(a), kde_pdf(b));
            ++out.cells;
        }
    }
    return out;
}

double distribution_distance(const Score& gen, const Score& ref, Feature f) {
    const DistanceCells c = distribution_cells(gen, ref, f);
    if (c.cells == 0) throw empty_input("no comparable track/bar cells");
    return c.oa_sum / double(c.cells);
}

namespace {

// Chord lane of one track heard in isolation.
ChordLane solo_lane(const Score& s, Role role) {
    Score solo;
    solo.tempo_class = s.tempo_class;
    solo.bars = s.bars;
    solo.tracks[role] = s.tracks.at(role);
    return infer_chords(solo);
}

using MaybeLane = std::vector<std::optional<ChordSymbol>>;

// Reference lane for tracks the reference does not carry: its chord
// annotations where present, else a full-score inference; stays empty for a
// silent reference.
MaybeLane reference_fallback(const Score& r) {
    MaybeLane lane(size_t(2 * r.bars));
    if (!r.chords.empty()) {
        for (const ChordEntry& c : r.chords)
            if (c.bar < r.bars) lane[size_t(2 * c.bar + c.half)] = c.chord;
        return lane;
    }
    try {
        const ChordLane inferred = infer_chords(r);
        for (size_t j = 0; j < lane.size(); ++j) lane[j] = inferred[j];
    } catch (const empty_input&) {
    }
    return lane;
}

}  // namespace

EvalReport evaluate_dataset(const std::vector<Score>& gen, const std::vector<Score>& ref,
                            const Model* model, PplMode ppl_mode,
                            ChordGranularity granularity) {
    if (gen.size() != ref.size())
        throw shape_mismatch("generated and reference datasets differ in size");
    if (gen.empty()) throw empty_input("nothing to evaluate");

    long ca_cells = 0, ca_matches = 0;
    constexpr Feature kFeatures[] = {Feature::P, Feature::V, Feature::D, Feature::IOI};
    DistanceCells dist[4];
    const int stride = granularity == ChordGranularity::HalfBar ? 1 : 2;

    for (size_t i = 0; i < gen.size(); ++i) {
        const Score& g = gen[i];
        const Score& r = ref[i];
        if (g.bars != r.bars)
            throw shape_mismatch("piece " + std::to_string(i) + ": bar counts differ");

        std::optional<MaybeLane> lane;  // annotations, else full-score inference
        for (const auto& [role, notes] : g.tracks) {
            if (role == Role::Drum || notes.empty()) continue;
            const ChordLane inferred = solo_lane(g, role);
            MaybeLane want;
            const auto rit = r.tracks.find(role);
            if (r.chords.empty() && rit != r.tracks.end() && !rit->second.empty()) {
                // chordless reference carrying the same track: compare like
                // against like, which makes self-evaluation exact
                const ChordLane rl = solo_lane(r, role);
                want.assign(rl.begin(), rl.end());
            } else {
                if (!lane) lane = reference_fallback(r);
                want = *lane;
            }
            for (int j = 0; j < 2 * g.bars; j += stride) {
                if (!want[size_t(j)]) continue;
                ++ca_cells;
                ca_matches += inferred[size_t(j)] == *want[size_t(j)];
            }
        }
        for (int k = 0; k < 4; ++k) {
            const DistanceCells c = distribution_cells(g, r, kFeatures[k]);
            dist[k].oa_sum += c.oa_sum;
            dist[k].cells += c.cells;
            dist[k].skipped += c.skipped;
        }
    }

    if (ca_cells == 0) throw empty_input("no chord-accuracy cells");
    EvalReport rep;
    rep.ca = double(ca_matches) / double(ca_cells);
    double* slots[4] = {&rep.d_p, &rep.d_v, &rep.d_d, &rep.d_ioi};
    for (int k = 0; k < 4; ++k) {
        if (dist[k].cells == 0)
            throw empty_input(std::string("no comparable cells for ") +
                              std::string(feature_name(kFeatures[k])));
        *slots[k] = dist[k].oa_sum / double(dist[k].cells);
        rep.skipped_cells += dist[k].skipped;
    }

    rep.ppl = 1.0;
    if (model) {
        std::vector<std::pair<PreparedSeq, PreparedSeq>> pairs;
        pairs.reserve(gen.size());
        for (size_t i = 0; i < gen.size(); ++i)
            pairs.emplace_back(prepare_sequence(encode(ref[i])),
                               prepare_sequence(encode(gen[i])));
        rep.ppl = perplexity(*model, pairs, ppl_mode);
    }
    return rep;
}

}  // namespace popmag
