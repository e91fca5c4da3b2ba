#pragma once

#include <json.hpp>

#include <map>
#include <string>

#include "talkgen/tensor.hpp"

namespace talkgen {

// Binary container of named double arrays plus a JSON metadata block.
// Layout is fully deterministic: save -> load -> save is byte-identical.
struct Checkpoint {
    std::string format_version = "talkgen-ckpt-1";
    nlohmann::json meta;
    std::map<std::string, Tensor> arrays;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

// FNV-1a content hash, used for checkpoint identity in manifests/reports.
uint64_t file_content_hash(const std::string& path);
std::string hash_hex(uint64_t h);

}  // namespace talkgen
