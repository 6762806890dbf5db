#pragma once

#include <optional>
#include <string>

#include "popmag/model.hpp"
#include "popmag/train.hpp"

namespace popmag {

class checkpoint_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// "popmag-ckpt-1": a magic line, a little-endian u64 header length, a JSON
// header (config, completed step count, tensor directory, free-form run
// metadata) and a flat little-endian float64 payload. Adam moments ride along
// as "adam.m.<param>" / "adam.v.<param>" tensors when present.
struct Checkpoint {
    Model model;
    AdamState adam;  // empty maps when the file carried no optimizer state
    std::string run_json;  // "{}" when absent

    explicit Checkpoint(Model m) : model(std::move(m)) {}
};

void save_checkpoint(const std::string& path, const Model& m, const AdamState* adam,
                     const std::string& run_json);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace popmag
