#pragma once
// Trained-model container: PARE-style header, a model-kind tag, a config echo,
// and named float32 tensor blocks.
//
// Layout (little-endian):
//   magic "PARC" | version u8 = 1
//   model_kind: u16 length + UTF-8
//   config echo: u32 length + UTF-8 (JSON)
//   n_tensors u32
//   per tensor: name u16+UTF-8 | rank u8 | rank * u32 dims | float32 data

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "pare/binio.hpp"
#include "pare/matrix.hpp"
#include "pare/adam.hpp"

namespace pare {

inline constexpr char kCheckpointMagic[4] = {'P', 'A', 'R', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint32_t d : shape) n *= d;
        return n;
    }
};

struct Checkpoint {
    std::string model_kind;
    std::string config_echo;
    std::vector<NamedTensor> tensors;

    const NamedTensor& find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw std::runtime_error("checkpoint: no tensor named '" + name + "'");
    }

    void add(const std::string& name, const MatrixF& m) {
        tensors.push_back({name,
                           {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
                           m.data});
    }

    void add(const std::string& name, const std::vector<float>& v) {
        tensors.push_back({name, {static_cast<std::uint32_t>(v.size())}, v});
    }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    binio::Writer w(path);
    w.write_bytes(kCheckpointMagic, 4);
    w.write_u8(kCheckpointVersion);
    if (ckpt.model_kind.size() > 0xffff) throw std::runtime_error("model kind too long");
    w.write_u16(static_cast<std::uint16_t>(ckpt.model_kind.size()));
    w.write_string(ckpt.model_kind);
    w.write_u32(static_cast<std::uint32_t>(ckpt.config_echo.size()));
    w.write_string(ckpt.config_echo);
    w.write_u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const NamedTensor& t : ckpt.tensors) {
        if (t.name.size() > 0xffff) throw std::runtime_error("tensor name too long: " + t.name);
        if (t.data.size() != t.element_count())
            throw std::runtime_error("tensor '" + t.name + "': data does not match shape");
        w.write_u16(static_cast<std::uint16_t>(t.name.size()));
        w.write_string(t.name);
        w.write_u8(static_cast<std::uint8_t>(t.shape.size()));
        for (std::uint32_t d : t.shape) w.write_u32(d);
        w.write_f32(t.data.data(), t.data.size());
    }
    w.finish();
}

inline Checkpoint load_checkpoint(const std::string& path) {
    binio::Reader r(path);
    char magic[4];
    r.read_bytes(magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error(path + ": bad magic, not a checkpoint file");
    const std::uint8_t version = r.read_u8("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    Checkpoint ckpt;
    ckpt.model_kind = r.read_string(r.read_u16("model kind length"), "model kind");
    ckpt.config_echo = r.read_string(r.read_u32("config length"), "config echo");
    const std::uint32_t n_tensors = r.read_u32("tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        t.name = r.read_string(r.read_u16("tensor name length"), "tensor name");
        const std::uint8_t rank = r.read_u8("tensor rank");
        t.shape.resize(rank);
        for (std::uint8_t d = 0; d < rank; ++d) t.shape[d] = r.read_u32("tensor dim");
        t.data.resize(t.element_count());
        r.read_f32(t.data.data(), t.data.size(), "tensor data");
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

inline void save_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,train_loss,val_metric,lr\n";
    char buf[128];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_metric,
                      e.lr);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace pare
