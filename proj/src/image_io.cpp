#include "talkgen/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace talkgen {

namespace {
uint8_t to_byte(double v) {
    double u = (v + 1.0) * 0.5 * 255.0;
    return static_cast<uint8_t>(std::clamp(std::lround(u), 0l, 255l));
}
double from_byte(uint8_t b) { return b / 255.0 * 2.0 - 1.0; }
}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_ppm: expects [3,H,W]");
    int H = image.dim(1), W = image.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<size_t>(x) * 3 + c] = to_byte(image[(static_cast<int64_t>(c) * H + y) * W + x]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int W = 0, H = 0, maxval = 0;
    f >> magic >> W >> H >> maxval;
    if (magic != "P6" || maxval != 255 || W <= 0 || H <= 0)
        throw std::runtime_error("read_ppm: unsupported format in " + path);
    f.get();  // single whitespace after header
    Tensor img({3, H, W});
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw std::runtime_error("read_ppm: truncated file " + path);
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img[(static_cast<int64_t>(c) * H + y) * W + x] = from_byte(row[static_cast<size_t>(x) * 3 + c]);
    }
    return img;
}

Tensor quantize_8bit(const Tensor& image) {
    Tensor out(image.shape);
    for (int64_t i = 0; i < image.size(); ++i) out[i] = from_byte(to_byte(image[i]));
    return out;
}

}  // namespace talkgen
