#include "popmag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace popmag {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian doubles written verbatim");

namespace {

constexpr const char* kMagic = "popmag-ckpt-1";

using ordered_json = nlohmann::ordered_json;

void put_u64(std::ostream& os, uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    os.write(buf, 8);
}

uint64_t get_u64(std::istream& is) {
    char buf[8];
    if (!is.read(buf, 8)) throw checkpoint_error("checkpoint truncated in header length");
    uint64_t v;
    std::memcpy(&v, buf, 8);
    return v;
}

void write_tensor_entry(ordered_json& dir, const std::string& name, const Tensor& t,
                        uint64_t& offset) {
    ordered_json e;
    e["name"] = name;
    e["rows"] = t.rows;
    e["cols"] = t.cols;
    e["offset"] = offset;
    dir.push_back(std::move(e));
    offset += t.size() * sizeof(double);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m, const AdamState* adam,
                     const std::string& run_json) {
    ordered_json header;
    header["format"] = kMagic;
    header["config"] = ordered_json::parse(config_to_json(m.cfg));
    header["step"] = adam ? adam->t : 0;
    ordered_json dir = ordered_json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : m.params) write_tensor_entry(dir, name, t, offset);
    if (adam) {
        for (const auto& [name, t] : adam->m) write_tensor_entry(dir, "adam.m." + name, t, offset);
        for (const auto& [name, t] : adam->v) write_tensor_entry(dir, "adam.v." + name, t, offset);
    }
    header["tensors"] = std::move(dir);
    header["run"] = run_json.empty() ? ordered_json::object() : ordered_json::parse(run_json);
    const std::string htext = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw checkpoint_error("cannot open for writing: " + path);
    os << kMagic << '\n';
    put_u64(os, htext.size());
    os.write(htext.data(), std::streamsize(htext.size()));
    auto dump = [&](const Tensor& t) {
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 std::streamsize(t.size() * sizeof(double)));
    };
    for (const auto& [name, t] : m.params) dump(t);
    if (adam) {
        for (const auto& [name, t] : adam->m) dump(t);
        for (const auto& [name, t] : adam->v) dump(t);
    }
    if (!os) throw checkpoint_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw checkpoint_error("cannot open: " + path);
    std::string magic;
    if (!std::getline(is, magic) || magic != kMagic)
        throw checkpoint_error("not a popmag-ckpt-1 file: " + path);
    const uint64_t hlen = get_u64(is);
    std::string htext(hlen, '\0');
    if (!is.read(htext.data(), std::streamsize(hlen)))
        throw checkpoint_error("checkpoint truncated in header");
    ordered_json header;
    try {
        header = ordered_json::parse(htext);
    } catch (const std::exception& e) {
        throw checkpoint_error(std::string("bad checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != kMagic) throw checkpoint_error("header format mismatch");

    Checkpoint ck{Model(config_from_json(header.at("config").dump()))};
    ck.adam.t = header.value("step", 0L);
    ck.run_json = header.contains("run") ? header["run"].dump() : std::string("{}");

    const uint64_t payload_start = uint64_t(is.tellg());
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        Tensor t(e.at("rows").get<int>(), e.at("cols").get<int>());
        is.seekg(std::streamoff(payload_start + e.at("offset").get<uint64_t>()));
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     std::streamsize(t.size() * sizeof(double))))
            throw checkpoint_error("checkpoint truncated in tensor " + name);
        if (name.starts_with("adam.m.")) {
            ck.adam.m[name.substr(7)] = std::move(t);
        } else if (name.starts_with("adam.v.")) {
            ck.adam.v[name.substr(7)] = std::move(t);
        } else {
            auto it = ck.model.params.find(name);
            if (it == ck.model.params.end())
                throw checkpoint_error("checkpoint carries unknown tensor " + name);
            if (!it->second.same_shape(t))
                throw checkpoint_error("checkpoint tensor shape mismatch for " + name);
            it->second = std::move(t);
        }
    }
    return ck;
}

}  // namespace popmag
