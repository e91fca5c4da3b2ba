#include "talkgen/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace talkgen {

namespace {

constexpr char kMagic[8] = {'T', 'G', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename T>
void put(std::ostream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& f) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& f, const std::string& s) {
    put<uint32_t>(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& f) {
    uint32_t n = get<uint32_t>(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    f.write(kMagic, sizeof kMagic);
    put_string(f, format_version);
    put_string(f, meta.dump());  // nlohmann keeps object keys sorted
    put<uint32_t>(f, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        put_string(f, name);
        put<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put<int32_t>(f, d);
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.format_version = get_string(f);
    ck.meta = nlohmann::json::parse(get_string(f));
    uint32_t count = get<uint32_t>(f);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(f);
        uint32_t ndim = get<uint32_t>(f);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = get<int32_t>(f);
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated array data in " + path);
        ck.arrays.emplace(std::move(name), std::move(t));
    }
    return ck;
}

uint64_t file_content_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("hash: cannot open: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!f) break;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char b[17];
    std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(h));
    return b;
}

}  // namespace talkgen
