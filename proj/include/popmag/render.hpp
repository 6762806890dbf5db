#pragma once

#include "popmag/midi.hpp"
#include "popmag/score.hpp"

namespace popmag {

// Dequantizes a Score for export: 480 ticks/beat (one timestep = 60 ticks),
// velocity = 4*(level-1)+2, tempo 80/120/170 bpm for Low/Mid/High, one track
// per role named after it with GM programs Piano 0, Guitar 25, Bass 33,
// String 48, Melody 73, and drums flagged for channel 10. Chord annotations
// ride along on a marker track named "chords" (one note per entry: pitch =
// root, velocity = quality index + 1, half-bar duration) so that
// score_from_midi can restore them. quantize() of the result reproduces the
// note content exactly.
midi::RawMidi render_score_to_midi(const Score& s);

// Inverse used by the encode path. Per track: a name equal to a role (after
// trimming and lowering) wins; otherwise channel-10 tracks become Drum, the
// melody-extraction heuristic picks Melody, and the GM program family
// decides the rest. A "chords" marker track is decoded back into chord
// entries rather than notes. Throws empty_input when nothing remains.
Score score_from_midi(const midi::RawMidi& raw);

}  // namespace popmag
