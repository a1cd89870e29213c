#include "mmadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace mmadapt::io {

namespace {
constexpr char kMagic[4] = {'A', 'D', 'P', 'L'};
constexpr uint16_t kVersion = 1;
}  // namespace

void write_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }
void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void write_string(std::ostream& os, const std::string& s) {
    if (s.size() > 0xFFFFFFFFull) throw std::invalid_argument("string too long");
    write_u32(os, uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

void write_tensor_payload(std::ostream& os, const Tensor& t) {
    write_u16(os, uint16_t(t.rank()));
    for (int d : t.shape()) write_u32(os, uint32_t(d));
    os.write(reinterpret_cast<const char*>(t.value().data()),
             std::streamsize(t.value().size() * sizeof(Real)));
}

uint16_t read_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    if (!is) throw std::runtime_error("truncated stream reading u16");
    return v;
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("truncated stream reading u32");
    return v;
}

std::string read_string(std::istream& is) {
    uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), std::streamsize(n));
    if (!is) throw std::runtime_error("truncated stream reading string");
    return s;
}

Tensor read_tensor_payload(std::istream& is) {
    uint16_t rank = read_u16(is);
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(int(read_u32(is)));
    Tensor t = Tensor::zeros(shape);
    is.read(reinterpret_cast<char*>(t.value().data()),
            std::streamsize(t.value().size() * sizeof(Real)));
    if (!is) throw std::runtime_error("truncated stream reading tensor payload");
    return t;
}

void save_checkpoint(const model::MultimodalModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(kMagic, 4);
    write_u16(os, kVersion);
    auto groups = m.parameter_groups();
    uint32_t count = 0;
    for (auto& [g, tensors] : groups) count += uint32_t(tensors.size());
    write_u32(os, count);
    for (auto& [g, tensors] : groups)
        for (auto& [name, t] : tensors) {
            write_string(os, g);
            write_string(os, name);
            write_tensor_payload(os, t);
        }
    if (!os) throw std::runtime_error("write failure: " + path);
}

void load_checkpoint(model::MultimodalModel& m, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint16_t version = read_u16(is);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = read_u32(is);

    auto groups = m.parameter_groups();
    uint32_t applied = 0;
    for (uint32_t i = 0; i < count; ++i) {
        std::string group = read_string(is);
        std::string name = read_string(is);
        Tensor payload = read_tensor_payload(is);
        auto git = groups.find(group);
        if (git == groups.end()) throw std::runtime_error("checkpoint group not in model: " + group);
        bool found = false;
        for (auto& [n, t] : git->second)
            if (n == name) {
                if (t.shape() != payload.shape())
                    throw std::runtime_error("shape mismatch for " + group + "/" + name + ": model " +
                                             shape_str(t.shape()) + " vs checkpoint " +
                                             shape_str(payload.shape()));
                const_cast<Tensor&>(t).value() = payload.value();
                found = true;
                ++applied;
                break;
            }
        if (!found) throw std::runtime_error("checkpoint tensor not in model: " + group + "/" + name);
    }
    uint32_t expected = 0;
    for (auto& [g, tensors] : groups) expected += uint32_t(tensors.size());
    if (applied != expected)
        throw std::runtime_error("checkpoint incomplete: " + std::to_string(applied) + " of " +
                                 std::to_string(expected) + " tensors");
}

}  // namespace mmadapt::io
