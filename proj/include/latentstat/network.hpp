#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentstat/layers.hpp"
#include "latentstat/random.hpp"
#include "latentstat/tensor.hpp"

namespace latentstat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ============================================================================
// Sequential container
// ============================================================================

class Sequential {
public:
    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor forward(const Tensor& x, Mode mode) {
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h, mode);
        return h;
    }

    Tensor backward(const Tensor& grad_out) {
        Tensor g = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    void zero_grad() {
        for (auto& l : layers_) l->zero_grad();
    }

    /// All parameter blocks, names prefixed with the layer index so they are
    /// unique across the stack.
    std::vector<ParamBlock> parameters() {
        std::vector<ParamBlock> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (auto& p : layers_[i]->parameters()) {
                p.name = std::to_string(i) + "." + p.name;
                out.push_back(p);
            }
        return out;
    }

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// ============================================================================
// Parameter buffers
// ============================================================================

inline std::vector<double> dump_parameters(const std::vector<ParamBlock>& blocks) {
    std::vector<double> out;
    for (const auto& b : blocks) out.insert(out.end(), b.value->begin(), b.value->end());
    return out;
}

inline void fill_parameters(const std::vector<ParamBlock>& blocks,
                            const std::vector<double>& buffer) {
    std::size_t pos = 0;
    for (const auto& b : blocks) {
        if (pos + b.value->size() > buffer.size())
            throw std::runtime_error("checkpoint: parameter buffer too short at block '" + b.name +
                                     "'");
        std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(pos),
                  buffer.begin() + static_cast<std::ptrdiff_t>(pos + b.value->size()),
                  b.value->begin());
        pos += b.value->size();
    }
    if (pos != buffer.size())
        throw std::runtime_error("checkpoint: parameter buffer has " +
                                 std::to_string(buffer.size() - pos) + " unconsumed values");
}

/// FNV-1a over the raw little-endian bytes of every block in order. Used to
/// tie a seasonal store to the encoder that produced it.
inline std::uint64_t fingerprint_parameters(const std::vector<ParamBlock>& blocks) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& b : blocks)
        for (double v : *b.value) {
            unsigned char bytes[8];
            std::memcpy(bytes, &v, 8);
            for (unsigned char c : bytes) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        }
    return h;
}

inline std::string fingerprint_hex(std::uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

/// Layer list + parameter shapes, recorded in checkpoint headers so a loader
/// can validate the architecture it rebuilt.
inline nlohmann::json describe_model(Sequential& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < model.size(); ++i) {
        nlohmann::json entry;
        entry["kind"] = model.layer(i).kind();
        nlohmann::json params = nlohmann::json::array();
        for (const auto& p : model.layer(i).parameters()) {
            nlohmann::json pj;
            pj["name"] = p.name;
            pj["shape"] = p.shape;
            params.push_back(pj);
        }
        entry["params"] = params;
        layers.push_back(entry);
    }
    return layers;
}

// ============================================================================
// Checkpoint container
// ============================================================================

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "LATENTSTAT-CHECKPOINT";

/// Writes the versioned container: magic+version line, one-line JSON header,
/// "BIN <count>" line, then raw little-endian doubles in declaration order.
inline void save_checkpoint(const std::string& path, const nlohmann::json& header,
                            const std::vector<ParamBlock>& blocks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    std::vector<double> buffer = dump_parameters(blocks);
    out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
    out << header.dump() << "\n";
    out << "BIN " << buffer.size() << "\n";
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

struct LoadedCheckpoint {
    nlohmann::json header;
    std::vector<double> buffer;
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string magic_line;
    if (!std::getline(in, magic_line))
        throw std::runtime_error("checkpoint: '" + path + "' is empty");
    std::string expected = std::string(kCheckpointMagic) + " ";
    if (magic_line.rfind(expected, 0) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    int version = std::stoi(magic_line.substr(expected.size()));
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version mismatch in '" + path + "': file has " +
                                 std::to_string(version) + ", this build reads " +
                                 std::to_string(kCheckpointVersion));
    std::string header_line;
    if (!std::getline(in, header_line))
        throw std::runtime_error("checkpoint: '" + path + "' is missing its header");
    LoadedCheckpoint ck;
    ck.header = nlohmann::json::parse(header_line);
    std::string bin_line;
    if (!std::getline(in, bin_line) || bin_line.rfind("BIN ", 0) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is missing its BIN section");
    std::size_t count = std::stoull(bin_line.substr(4));
    ck.buffer.resize(count);
    in.read(reinterpret_cast<char*>(ck.buffer.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
        throw std::runtime_error("checkpoint: '" + path + "' is truncated");
    return ck;
}

}  // namespace latentstat
