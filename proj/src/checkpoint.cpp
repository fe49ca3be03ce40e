#include "cdr3gen/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "cdr3gen/error.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::checkpoint {

namespace {

constexpr const char* kModule = "checkpoint";

using model::Mat;
using model::ModelParams;
using nlohmann::json;

class Writer {
public:
    void bytes(std::string_view b) { out_.append(b); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { uint(v, 4); }
    void u64(std::uint64_t v) { uint(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    std::string take() { return std::move(out_); }

private:
    void uint(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}
    std::string_view bytes(std::size_t n) {
        need(n);
        const auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(uint(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw Error(ErrorKind::BadCheckpoint, kModule, "truncated checkpoint");
    }
    std::uint64_t uint(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const ModelParams& p) {
    const auto tensors = p.tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name);
        w.u32(static_cast<std::uint32_t>(t.value->rows()));
        w.u32(static_cast<std::uint32_t>(t.value->cols()));
        for (Eigen::Index i = 0; i < t.value->size(); ++i) w.f64(t.value->data()[i]);
    }
}

// Reads into a zero-initialized set of the expected shapes.
void read_tensors(Reader& r, ModelParams& p) {
    auto tensors = p.tensors();
    const std::uint32_t n = r.u32();
    if (n != tensors.size())
        throw Error(ErrorKind::BadCheckpoint, kModule,
                    "expected " + std::to_string(tensors.size()) + " tensors, found " + std::to_string(n));
    for (auto& t : tensors) {
        const std::string name(r.bytes(r.u32()));
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (name != t.name || rows != t.value->rows() || cols != t.value->cols())
            throw Error(ErrorKind::BadCheckpoint, kModule,
                        "tensor '" + name + "' does not match expected '" + t.name + "' " +
                            std::to_string(t.value->rows()) + "x" + std::to_string(t.value->cols()));
        for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] = r.f64();
    }
}

}  // namespace

OptimizerState OptimizerState::zeros(const model::ModelConfig& cfg) {
    return {0, ModelParams::zeros(cfg), ModelParams::zeros(cfg)};
}

json config_to_json(const model::ModelConfig& cfg) {
    return json{{"d_tok", cfg.d_tok},         {"d_phys", cfg.d_phys},
                {"d_pos", cfg.d_pos},         {"n_head", cfg.n_head},
                {"n_enc", cfg.n_enc},         {"n_dec", cfg.n_dec},
                {"d_ff", cfg.d_ff},           {"max_src_len", cfg.max_src_len},
                {"max_tgt_len", cfg.max_tgt_len}, {"phys_enabled", cfg.phys_enabled},
                {"seed", cfg.seed}};
}

model::ModelConfig config_from_json(const json& j) {
    model::ModelConfig cfg;
    try {
        cfg.d_tok = j.at("d_tok").get<int>();
        cfg.d_phys = j.at("d_phys").get<int>();
        cfg.d_pos = j.at("d_pos").get<int>();
        cfg.n_head = j.at("n_head").get<int>();
        cfg.n_enc = j.at("n_enc").get<int>();
        cfg.n_dec = j.at("n_dec").get<int>();
        cfg.d_ff = j.at("d_ff").get<int>();
        cfg.max_src_len = j.at("max_src_len").get<int>();
        cfg.max_tgt_len = j.at("max_tgt_len").get<int>();
        cfg.phys_enabled = j.at("phys_enabled").get<bool>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, kModule, std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string serialize(const Checkpoint& ckpt) {
    json header{{"format", "cdr3gen-checkpoint"},
                {"config", config_to_json(ckpt.config)},
                {"vocab", seqcore::vocab().symbols()},
                {"descriptor_checksum", nullptr},
                {"metadata", ckpt.metadata}};
    if (ckpt.descriptor_checksum) header["descriptor_checksum"] = hex64(*ckpt.descriptor_checksum);
    const std::string text = header.dump();

    Writer w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u64(text.size());
    w.bytes(text);
    write_tensors(w, ckpt.params);
    if (ckpt.optimizer) {
        w.u8(1);
        w.u64(ckpt.optimizer->step);
        write_tensors(w, ckpt.optimizer->m);
        write_tensors(w, ckpt.optimizer->v);
    } else {
        w.u8(0);
    }
    return w.take();
}

Checkpoint deserialize(std::string_view bytes) {
    Reader r(bytes);
    if (r.bytes(kMagic.size()) != kMagic) throw Error(ErrorKind::BadCheckpoint, kModule, "bad magic");
    if (const auto v = r.u32(); v != kVersion)
        throw Error(ErrorKind::BadCheckpoint, kModule, "unsupported version " + std::to_string(v));
    const std::uint64_t header_len = r.u64();
    json header;
    try {
        header = json::parse(r.bytes(header_len));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::BadCheckpoint, kModule, std::string("header: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        if (header.at("vocab").get<std::vector<std::string>>() != seqcore::vocab().symbols())
            throw Error(ErrorKind::BadCheckpoint, kModule, "vocabulary differs from this build");
        ckpt.config = config_from_json(header.at("config"));
        if (const auto& c = header.at("descriptor_checksum"); !c.is_null())
            ckpt.descriptor_checksum = std::stoull(c.get<std::string>(), nullptr, 16);
        ckpt.metadata = header.value("metadata", json::object());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::BadCheckpoint, kModule, std::string("header: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::BadCheckpoint) throw;
        throw Error(ErrorKind::BadCheckpoint, kModule, e.what());
    }

    ckpt.params = ModelParams::zeros(ckpt.config);
    read_tensors(r, ckpt.params);
    if (r.u8() == 1) {
        OptimizerState opt = OptimizerState::zeros(ckpt.config);
        opt.step = r.u64();
        read_tensors(r, opt.m);
        read_tensors(r, opt.v);
        ckpt.optimizer = std::move(opt);
    }
    if (!r.done()) throw Error(ErrorKind::BadCheckpoint, kModule, "trailing bytes after checkpoint");
    return ckpt;
}

void save(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize(ckpt)); }

Checkpoint load(const std::string& path) { return deserialize(read_file(path)); }

model::Model make_model(const Checkpoint& ckpt, const physchem::DescriptorTable* table) {
    if (ckpt.config.phys_enabled) {
        if (!table) throw Error(ErrorKind::InvalidConfig, kModule, "phys-enabled checkpoint needs a descriptor table");
        if (!ckpt.descriptor_checksum || *ckpt.descriptor_checksum != table->checksum())
            throw Error(ErrorKind::BadCheckpoint, kModule,
                        "descriptor table checksum " + hex64(table->checksum()) + " does not match the checkpoint");
    }
    return model::Model(ckpt.config, ckpt.params, ckpt.config.phys_enabled ? table : nullptr);
}

}  // namespace cdr3gen::checkpoint
