#include "rlol/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rlol/error.hpp"

namespace rlol {

namespace {

enum : std::uint8_t { kBf16 = 0, kF32 = 1 };

class Writer {
public:
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t x) { bytes.push_back(x); }
    void u16(std::uint16_t x) { le(x, 2); }
    void u32(std::uint32_t x) { le(x, 4); }
    void u64(std::uint64_t x) { le(x, 8); }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
    void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

private:
    void le(std::uint64_t x, int n) {
        for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        require(pos_ + n <= b_.size(), ErrorKind::io, "checkpoint truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t x = 0;
        for (int i = 0; i < n; ++i) x |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return x;
    }
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

struct Entry {
    std::string name;
    std::uint8_t dtype;
    Shape shape;
    std::vector<std::uint8_t> payload;
};

Entry f32_entry(const std::string& name, const Shape& shape, const std::vector<float>& data) {
    Entry e{name, kF32, shape, {}};
    e.payload.reserve(data.size() * 4);
    for (float x : data) {
        const auto u = std::bit_cast<std::uint32_t>(x);
        for (int i = 0; i < 4; ++i) e.payload.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    return e;
}

Entry bf16_entry(const std::string& name, const Shape& shape, const std::vector<std::uint16_t>& data) {
    Entry e{name, kBf16, shape, {}};
    e.payload.reserve(data.size() * 2);
    for (auto u : data) {
        e.payload.push_back(static_cast<std::uint8_t>(u));
        e.payload.push_back(static_cast<std::uint8_t>(u >> 8));
    }
    return e;
}

std::vector<float> read_f32(const std::uint8_t* p, std::size_t n) {
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[4 * i + static_cast<std::size_t>(k)]) << (8 * k);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

std::vector<std::uint16_t> read_bf16(const std::uint8_t* p, std::size_t n) {
    std::vector<std::uint16_t> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<std::uint16_t>(p[2 * i] | (static_cast<std::uint16_t>(p[2 * i + 1]) << 8));
    return out;
}

std::string prefix_of(const std::string& entry) { return entry.substr(0, entry.find('/')); }
std::string param_of(const std::string& entry) { return entry.substr(entry.find('/') + 1); }

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    const ParamStore& p = ckpt.params;
    std::vector<Entry> entries;
    for (const auto& t : p.tensors) {
        entries.push_back(bf16_entry("stored/" + t.name, t.shape, t.stored));
        entries.push_back(f32_entry("master/" + t.name, t.shape, t.master));
    }
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        for (std::size_t k = 0; k < o.m.size(); ++k) entries.push_back(f32_entry("m/" + p.tensors[k].name, p.tensors[k].shape, o.m[k]));
        for (std::size_t k = 0; k < o.v.size(); ++k) entries.push_back(f32_entry("v/" + p.tensors[k].name, p.tensors[k].shape, o.v[k]));
    }
    if (ckpt.grads) {
        require(ckpt.grads->size() == p.tensors.size(), ErrorKind::dimension, "checkpoint: gradient count mismatch");
        for (std::size_t k = 0; k < ckpt.grads->size(); ++k)
            entries.push_back(f32_entry("grad/" + p.tensors[k].name, p.tensors[k].shape, (*ckpt.grads)[k]));
    }

    Writer w;
    w.raw("RLOL");
    w.u32(kCheckpointVersion);
    w.u64(p.config.hash());
    w.u64(p.step);
    const ModelConfig& c = p.config;
    for (auto x : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len}) w.u64(x);
    w.u8(c.tie_output);
    w.u8(c.value_head);
    w.u8(ckpt.optimizer.has_value());
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        w.u8(static_cast<std::uint8_t>(o.kind));
        w.u64(o.t);
        for (double x : {o.hp.lr, o.hp.momentum, o.hp.beta1, o.hp.beta2, o.hp.eps, o.hp.weight_decay}) w.f64(x);
        w.u8(o.hp.bias_correction);
    }
    w.u32(static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        require(e.name.size() < 65536, ErrorKind::invalid_argument, "checkpoint: tensor name too long");
        w.u16(static_cast<std::uint16_t>(e.name.size()));
        w.raw(e.name);
        w.u8(e.dtype);
        w.u8(static_cast<std::uint8_t>(e.shape.size()));
        for (auto d : e.shape) w.u64(d);
        w.u64(offset);
        w.u64(e.payload.size());
        offset += e.payload.size();
    }
    for (const auto& e : entries) w.bytes.insert(w.bytes.end(), e.payload.begin(), e.payload.end());
    return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    require(r.raw(4) == "RLOL", ErrorKind::io, "not a checkpoint (bad magic)");
    const auto version = r.u32();
    require(version == kCheckpointVersion, ErrorKind::io, "unsupported checkpoint version " + std::to_string(version));
    const auto hash = r.u64();
    Checkpoint ck;
    ParamStore& p = ck.params;
    p.step = r.u64();
    ModelConfig& c = p.config;
    c.vocab_size = r.u64();
    c.d_model = r.u64();
    c.n_layers = r.u64();
    c.n_heads = r.u64();
    c.d_ff = r.u64();
    c.max_seq_len = r.u64();
    c.tie_output = r.u8() != 0;
    c.value_head = r.u8() != 0;
    require(c.hash() == hash, ErrorKind::io, "checkpoint config hash does not match its model config");
    if (r.u8() != 0) {
        OptimizerState o;
        const auto kind = r.u8();
        require(kind <= static_cast<std::uint8_t>(OptimizerKind::adamw), ErrorKind::io, "checkpoint: bad optimizer kind");
        o.kind = static_cast<OptimizerKind>(kind);
        o.t = r.u64();
        o.hp.lr = r.f64();
        o.hp.momentum = r.f64();
        o.hp.beta1 = r.f64();
        o.hp.beta2 = r.f64();
        o.hp.eps = r.f64();
        o.hp.weight_decay = r.f64();
        o.hp.bias_correction = r.u8() != 0;
        ck.optimizer = std::move(o);
    }
    const auto count = r.u32();
    struct Meta {
        std::string name;
        std::uint8_t dtype;
        Shape shape;
        std::uint64_t offset, size;
    };
    std::vector<Meta> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        Meta m;
        m.name = r.raw(r.u16());
        m.dtype = r.u8();
        const auto rank = r.u8();
        for (int d = 0; d < rank; ++d) m.shape.push_back(r.u64());
        m.offset = r.u64();
        m.size = r.u64();
        table.push_back(std::move(m));
    }
    const std::size_t base = r.pos();
    Gradients grads;
    for (const auto& m : table) {
        const std::size_t n = numel(m.shape);
        const std::size_t width = m.dtype == kBf16 ? 2 : 4;
        require(m.dtype <= kF32 && m.size == n * width, ErrorKind::io, "checkpoint entry " + m.name + " has bad size");
        require(base + m.offset + m.size <= bytes.size(), ErrorKind::io, "checkpoint entry " + m.name + " out of bounds");
        const std::uint8_t* data = bytes.data() + base + m.offset;
        const std::string kind = prefix_of(m.name), name = param_of(m.name);
        if (kind == "stored") {
            require(m.dtype == kBf16, ErrorKind::io, "stored tensor " + name + " is not bf16");
            ParamTensor t;
            t.name = name;
            t.shape = m.shape;
            t.stored = read_bf16(data, n);
            p.tensors.push_back(std::move(t));
            continue;
        }
        require(m.dtype == kF32, ErrorKind::io, "tensor " + m.name + " is not f32");
        auto values = read_f32(data, n);
        if (kind == "master") {
            auto idx = p.index_of(name);
            require(idx.has_value() && p.tensors[*idx].shape == m.shape, ErrorKind::io, "master without stored: " + name);
            p.tensors[*idx].master = std::move(values);
        } else if (kind == "m" || kind == "v") {
            require(ck.optimizer.has_value(), ErrorKind::io, "optimizer buffer without optimizer header");
            (kind == "m" ? ck.optimizer->m : ck.optimizer->v).push_back(std::move(values));
        } else if (kind == "grad") {
            grads.push_back(std::move(values));
        } else {
            fail(ErrorKind::io, "unknown checkpoint entry " + m.name);
        }
    }
    for (const auto& t : p.tensors)
        require(t.master.size() == t.stored.size(), ErrorKind::io, "tensor " + t.name + " lacks master values");
    if (!grads.empty()) {
        require(grads.size() == p.tensors.size(), ErrorKind::io, "checkpoint gradients incomplete");
        ck.grads = std::move(grads);
    }
    if (ck.optimizer) {
        const auto& o = *ck.optimizer;
        require((uses_m(o.kind) ? p.tensors.size() : 0) == o.m.size() &&
                    (uses_v(o.kind) ? p.tensors.size() : 0) == o.v.size(),
                ErrorKind::io, "checkpoint optimizer buffers incomplete");
    }
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot read " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace rlol
