#include "ppgkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ppgkit/errors.hpp"

namespace ppg {

namespace {

constexpr char kMagic[4] = {'P', 'P', 'G', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out.append(s);
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint64_t n = u64();
        if (n > buf.size()) throw DataError("checkpoint: truncated file");
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_tensor(std::string& out, const Tensor& t) {
    const auto& shape = t.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    const auto& v = t.node()->value;
    put_u64(out, v.size());
    for (double x : v) put_f64(out, x);
}

struct RawTensor {
    std::vector<int> shape;
    std::vector<double> value;
};

RawTensor read_tensor(Cursor& c) {
    RawTensor t;
    const std::uint32_t rank = c.u32();
    if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(static_cast<int>(c.u32()));
    const std::uint64_t n = c.u64();
    c.need(n * 8);
    t.value.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) t.value[i] = c.f64();
    return t;
}

struct RawGroup {
    std::string name;
    bool trainable = true;
    std::vector<RawTensor> params, buffers;
};

std::vector<RawGroup> parse_file(const std::string& path, CheckpointInfo* info) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Cursor c{buf};
    c.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    c.pos = 4;
    const std::uint32_t version = c.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t seed = c.u64();
    const std::string echo = c.str();
    if (info) {
        info->version = version;
        info->seed = seed;
        info->config_echo = echo;
    }

    std::vector<RawGroup> groups(c.u64());
    for (auto& g : groups) {
        g.name = c.str();
        c.need(1);
        g.trainable = buf[c.pos++] != 0;
        g.params.resize(c.u64());
        for (auto& t : g.params) t = read_tensor(c);
        g.buffers.resize(c.u64());
        for (auto& t : g.buffers) t = read_tensor(c);
    }
    if (c.pos != buf.size()) throw DataError("checkpoint: trailing bytes in " + path);
    return groups;
}

}  // namespace

void save_checkpoint(const ParamStore& ps, const std::string& path,
                     const std::string& config_echo, std::uint64_t seed) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, seed);
    put_str(out, config_echo);
    put_u64(out, ps.groups().size());
    for (const auto& [name, g] : ps.groups()) {
        put_str(out, name);
        out.push_back(g.trainable ? 1 : 0);
        put_u64(out, g.params.size());
        for (const auto& t : g.params) put_tensor(out, t);
        put_u64(out, g.buffers.size());
        for (const auto& t : g.buffers) put_tensor(out, t);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: write failed for " + path);
}

void load_checkpoint(ParamStore& ps, const std::string& path) {
    const std::vector<RawGroup> raw = parse_file(path, nullptr);

    // validate everything against the live store before touching it
    if (raw.size() != ps.groups().size())
        throw DataError("checkpoint: group count mismatch for " + path);
    for (const auto& g : raw) {
        if (!ps.has_group(g.name)) throw DataError("checkpoint: store lacks group " + g.name);
        const auto& live = ps.group(g.name);
        if (live.params.size() != g.params.size() || live.buffers.size() != g.buffers.size())
            throw DataError("checkpoint: tensor count mismatch in group " + g.name);
        for (std::size_t i = 0; i < g.params.size(); ++i)
            if (live.params[i].shape() != g.params[i].shape ||
                live.params[i].node()->value.size() != g.params[i].value.size())
                throw DataError("checkpoint: shape mismatch in group " + g.name);
        for (std::size_t i = 0; i < g.buffers.size(); ++i)
            if (live.buffers[i].shape() != g.buffers[i].shape ||
                live.buffers[i].node()->value.size() != g.buffers[i].value.size())
                throw DataError("checkpoint: shape mismatch in group " + g.name);
    }

    for (const auto& g : raw) {
        auto& live = ps.group(g.name);
        live.trainable = g.trainable;
        for (std::size_t i = 0; i < g.params.size(); ++i) {
            live.params[i].node()->value = g.params[i].value;
            live.params[i].set_requires_grad(g.trainable);
        }
        for (std::size_t i = 0; i < g.buffers.size(); ++i)
            live.buffers[i].node()->value = g.buffers[i].value;
    }
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
    CheckpointInfo info;
    const std::vector<RawGroup> raw = parse_file(path, &info);
    for (const auto& g : raw) {
        for (std::size_t i = 0; i < g.params.size(); ++i)
            info.tensor_names.push_back(g.name + "/p" + std::to_string(i));
        for (std::size_t i = 0; i < g.buffers.size(); ++i)
            info.tensor_names.push_back(g.name + "/b" + std::to_string(i));
    }
    return info;
}

}  // namespace ppg
