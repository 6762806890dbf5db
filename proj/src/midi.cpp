#include "popmag/midi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <optional>

namespace popmag::midi {

namespace {

constexpr char kTempoTag[] = "PMAGTMPO";  // sequencer-specific payload tag

struct Reader {
    std::span<const uint8_t> buf;
    size_t pos = 0;

    bool eof() const { return pos >= buf.size(); }
    size_t remaining() const { return buf.size() - pos; }

    uint8_t u8() {
        if (pos >= buf.size()) throw truncated_chunk("unexpected end of data");
        return buf[pos++];
    }
    uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }
    uint32_t varint() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            uint8_t b = u8();
            v = v << 7 | (b & 0x7F);
            if (!(b & 0x80)) return v;
        }
        throw truncated_chunk("variable-length quantity longer than 4 bytes");
    }
    void skip(size_t n) {
        if (remaining() < n) throw truncated_chunk("skip past end of chunk");
        pos += n;
    }
    std::span<const uint8_t> take(size_t n) {
        if (remaining() < n) throw truncated_chunk("read past end of chunk");
        auto s = buf.subspan(pos, n);
        pos += n;
        return s;
    }
};

struct OpenNote {
    int64_t onset = 0;
    int velocity = 0;
};

// Per-chunk parse state, split by channel afterwards.
struct ChunkNotes {
    std::string name;
    // channel -> notes / program captured at first note
    std::map<int, std::vector<RawNote>> notes;
    std::map<int, int> program_at_first_note;
};

void close_note(ChunkNotes& out, int channel, int pitch, const OpenNote& on, int64_t off_tick) {
    int64_t dur = std::max<int64_t>(1, off_tick - on.onset);
    out.notes[channel].push_back(RawNote{on.onset, pitch, on.velocity, dur});
}

ChunkNotes parse_track_chunk(Reader r, std::optional<double>& tempo_bpm,
                             std::optional<double>& tempo_precise,
                             std::vector<TimeSignature>& time_sigs) {
    ChunkNotes out;
    int64_t tick = 0;
    uint8_t status = 0;
    int current_program[16] = {0};
    std::map<std::pair<int, int>, OpenNote> open;  // (channel, pitch) -> note-on

    auto note_on = [&](int ch, int pitch, int vel) {
        if (!out.program_at_first_note.count(ch))
            out.program_at_first_note[ch] = current_program[ch];
        auto key = std::make_pair(ch, pitch);
        auto it = open.find(key);
        if (it != open.end()) {  // overlapping same pitch: last-on wins
            close_note(out, ch, pitch, it->second, tick);
            open.erase(it);
        }
        open[key] = OpenNote{tick, vel};
    };
    auto note_off = [&](int ch, int pitch) {
        auto it = open.find(std::make_pair(ch, pitch));
        if (it == open.end()) return;  // stray note-off, ignore
        close_note(out, ch, pitch, it->second, tick);
        open.erase(it);
    };

    while (!r.eof()) {
        tick += r.varint();
        uint8_t b = r.u8();
        if (b < 0x80) {
            if (status == 0) throw running_status_violation("data byte before any status byte");
            --r.pos;  // running status: reuse previous status, byte is data
            b = status;
        } else if (b < 0xF0) {
            status = b;
        }
        uint8_t hi = b & 0xF0;
        int ch = b & 0x0F;
        switch (hi) {
            case 0x80: {
                int pitch = r.u8() & 0x7F;
                r.u8();
                note_off(ch, pitch);
                break;
            }
            case 0x90: {
                int pitch = r.u8() & 0x7F;
                int vel = r.u8() & 0x7F;
                if (vel == 0)
                    note_off(ch, pitch);
                else
                    note_on(ch, pitch, vel);
                break;
            }
            case 0xA0:
            case 0xB0:
            case 0xE0:
                r.skip(2);
                break;
            case 0xC0:
                current_program[ch] = r.u8() & 0x7F;
                break;
            case 0xD0:
                r.skip(1);
                break;
            case 0xF0: {
                if (b == 0xF0 || b == 0xF7) {
                    r.skip(r.varint());
                } else if (b == 0xFF) {
                    uint8_t type = r.u8();
                    uint32_t len = r.varint();
                    auto data = r.take(len);
                    switch (type) {
                        case 0x03:
                            out.name.assign(data.begin(), data.end());
                            break;
                        case 0x51: {
                            if (len != 3) throw truncated_chunk("set-tempo event with bad length");
                            uint32_t uspb = uint32_t(data[0]) << 16 | uint32_t(data[1]) << 8 | data[2];
                            if (uspb > 0 && !tempo_bpm) tempo_bpm = 60.0e6 / uspb;
                            break;
                        }
                        case 0x58: {
                            if (len < 2) throw truncated_chunk("time-signature event with bad length");
                            time_sigs.push_back(TimeSignature{tick, data[0], 1 << data[1]});
                            break;
                        }
                        case 0x7F: {
                            if (len == 8 + sizeof(double) &&
                                std::memcmp(data.data(), kTempoTag, 8) == 0 && !tempo_precise) {
                                double v;
                                std::memcpy(&v, data.data() + 8, sizeof v);
                                if (v > 0 && std::isfinite(v)) tempo_precise = v;
                            }
                            break;
                        }
                        case 0x2F:
                            goto done;  // end of track
                        default:
                            break;
                    }
                } else {
                    throw truncated_chunk("unsupported system event");
                }
                break;
            }
            default:
                throw running_status_violation("invalid status byte");
        }
    }
done:
    for (auto& [key, on] : open)  // unmatched note-ons close at track end
        close_note(out, key.first, key.second, on, std::max(tick, on.onset + 1));
    for (auto& [ch, notes] : out.notes) std::sort(notes.begin(), notes.end());
    return out;
}

struct Writer {
    std::vector<uint8_t> buf;

    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) {
        u8(uint8_t(v >> 8));
        u8(uint8_t(v));
    }
    void u32(uint32_t v) {
        u16(uint16_t(v >> 16));
        u16(uint16_t(v));
    }
    void bytes(const void* p, size_t n) {
        auto* c = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), c, c + n);
    }
    void varint(uint32_t v) {
        uint8_t tmp[4];
        int n = 0;
        tmp[n++] = v & 0x7F;
        while (v >>= 7) tmp[n++] = 0x80 | (v & 0x7F);
        while (n--) u8(tmp[n]);
    }
};

struct TrackEvent {
    int64_t tick;
    int order;  // sort key within a tick
    std::vector<uint8_t> payload;
};

void append_track(Writer& w, std::vector<TrackEvent> events) {
    std::stable_sort(events.begin(), events.end(), [](const TrackEvent& a, const TrackEvent& b) {
        return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
    });
    Writer t;
    int64_t cursor = 0;
    for (const auto& e : events) {
        t.varint(uint32_t(e.tick - cursor));
        cursor = e.tick;
        t.bytes(e.payload.data(), e.payload.size());
    }
    t.varint(0);
    t.u8(0xFF);
    t.u8(0x2F);
    t.u8(0x00);
    w.bytes("MTrk", 4);
    w.u32(uint32_t(t.buf.size()));
    w.bytes(t.buf.data(), t.buf.size());
}

std::vector<uint8_t> meta_event(uint8_t type, std::span<const uint8_t> data) {
    Writer w;
    w.u8(0xFF);
    w.u8(type);
    w.varint(uint32_t(data.size()));
    w.bytes(data.data(), data.size());
    return std::move(w.buf);
}

void validate(const RawMidi& m) {
    if (m.ticks_per_beat <= 0 || m.ticks_per_beat > 0x7FFF)
        throw invalid_input("ticks_per_beat out of range");
    if (!(m.tempo_bpm > 0) || !std::isfinite(m.tempo_bpm))
        throw invalid_input("tempo_bpm must be positive");
    for (size_t i = 1; i < m.time_signatures.size(); ++i)
        if (m.time_signatures[i].tick <= m.time_signatures[i - 1].tick)
            throw invalid_input("time signatures not strictly sorted by tick");
    for (const auto& t : m.tracks)
        for (const auto& n : t.notes) {
            if (n.pitch < 0 || n.pitch > 127) throw invalid_input("pitch out of MIDI range");
            if (n.velocity < 1 || n.velocity > 127) throw invalid_input("velocity out of range");
            if (n.duration_ticks < 1) throw invalid_input("note duration below 1 tick");
            if (n.onset_tick < 0) throw invalid_input("negative onset tick");
        }
}

}  // namespace

RawMidi parse_smf(std::span<const uint8_t> bytes) {
    Reader r{bytes};
    if (r.remaining() < 14) throw malformed_header("file shorter than SMF header");
    uint8_t magic[4];
    for (auto& c : magic) c = r.u8();
    if (std::memcmp(magic, "MThd", 4) != 0) throw malformed_header("missing MThd magic");
    uint32_t hlen = r.u32();
    if (hlen < 6) throw malformed_header("header chunk shorter than 6 bytes");
    uint16_t format = r.u16();
    uint16_t ntrks = r.u16();
    uint16_t division = r.u16();
    r.skip(hlen - 6);
    if (format > 1) throw malformed_header("only SMF formats 0 and 1 are supported");
    if (division & 0x8000) throw unsupported_division("SMPTE time division is not supported");
    if (division == 0) throw malformed_header("zero ticks per beat");

    RawMidi out;
    out.ticks_per_beat = division;

    std::optional<double> tempo, tempo_precise;
    std::vector<TimeSignature> sigs;
    std::vector<ChunkNotes> chunks;
    for (uint16_t i = 0; i < ntrks; ++i) {
        if (r.remaining() < 8) throw truncated_chunk("missing track chunk");
        uint8_t tag[4];
        for (auto& c : tag) c = r.u8();
        uint32_t len = r.u32();
        auto body = r.take(len);
        if (std::memcmp(tag, "MTrk", 4) != 0) continue;  // alien chunk, skip
        chunks.push_back(parse_track_chunk(Reader{body}, tempo, tempo_precise, sigs));
    }

    out.tempo_bpm = tempo_precise ? *tempo_precise : tempo.value_or(120.0);

    std::stable_sort(sigs.begin(), sigs.end(),
                     [](const TimeSignature& a, const TimeSignature& b) { return a.tick < b.tick; });
    for (const auto& s : sigs) {  // same tick: last event wins
        if (!out.time_signatures.empty() && out.time_signatures.back().tick == s.tick)
            out.time_signatures.back() = s;
        else
            out.time_signatures.push_back(s);
    }

    for (const auto& c : chunks)
        for (const auto& [ch, notes] : c.notes) {
            RawTrack t;
            t.name = c.name;
            t.is_drum = (ch == 9);
            auto it = c.program_at_first_note.find(ch);
            t.program = it == c.program_at_first_note.end() ? 0 : it->second;
            t.notes = notes;
            out.tracks.push_back(std::move(t));
        }
    return out;
}

std::vector<uint8_t> write_smf(const RawMidi& m) { return write_smf(m, {}); }

std::vector<uint8_t> write_smf(const RawMidi& m, const std::string& text_meta) {
    validate(m);

    Writer w;
    w.bytes("MThd", 4);
    w.u32(6);
    w.u16(1);
    w.u16(uint16_t(m.tracks.size() + 1));
    w.u16(uint16_t(m.ticks_per_beat));

    // Conductor track: tempo (rounded + precise), time signatures, optional text.
    std::vector<TrackEvent> conductor;
    uint32_t uspb = uint32_t(std::llround(60.0e6 / m.tempo_bpm));
    uspb = std::clamp<uint32_t>(uspb, 1, 0xFFFFFF);
    conductor.push_back({0, 0, meta_event(0x51, std::array<uint8_t, 3>{
                                                    uint8_t(uspb >> 16), uint8_t(uspb >> 8),
                                                    uint8_t(uspb)})});
    {
        uint8_t payload[8 + sizeof(double)];
        std::memcpy(payload, kTempoTag, 8);
        std::memcpy(payload + 8, &m.tempo_bpm, sizeof(double));
        conductor.push_back({0, 1, meta_event(0x7F, payload)});
    }
    if (!text_meta.empty()) {
        std::span<const uint8_t> data{reinterpret_cast<const uint8_t*>(text_meta.data()),
                                      text_meta.size()};
        conductor.push_back({0, 2, meta_event(0x01, data)});
    }
    for (const auto& ts : m.time_signatures) {
        int dd = 0;
        while ((1 << dd) < ts.denominator) ++dd;
        conductor.push_back({ts.tick, 3,
                             meta_event(0x58, std::array<uint8_t, 4>{uint8_t(ts.numerator),
                                                                     uint8_t(dd), 24, 8})});
    }
    append_track(w, std::move(conductor));

    static constexpr int kMelodicChannels[15] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};
    int melodic_count = 0;
    for (const auto& track : m.tracks) {
        int ch = track.is_drum ? 9 : kMelodicChannels[melodic_count++ % 15];
        std::vector<TrackEvent> events;
        if (!track.name.empty()) {
            std::span<const uint8_t> data{reinterpret_cast<const uint8_t*>(track.name.data()),
                                          track.name.size()};
            events.push_back({0, 0, meta_event(0x03, data)});
        }
        events.push_back({0, 1, {uint8_t(0xC0 | ch), uint8_t(track.program)}});
        for (const auto& n : track.notes) {
            events.push_back(
                {n.onset_tick, 3, {uint8_t(0x90 | ch), uint8_t(n.pitch), uint8_t(n.velocity)}});
            events.push_back(
                {n.onset_tick + n.duration_ticks, 2, {uint8_t(0x80 | ch), uint8_t(n.pitch), 64}});
        }
        append_track(w, std::move(events));
    }
    return std::move(w.buf);
}

}  // namespace popmag::midi
