#include "climatellm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "climatellm/errors.hpp"

namespace climatellm {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'L', 'M', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t x) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((x >> (8 * b)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t x) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((x >> (8 * b)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    const char* take(std::size_t n) {
        if (pos_ + n > data_.size()) throw CorruptData("checkpoint truncated");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(4));
        std::uint32_t x = 0;
        for (int b = 0; b < 4; ++b) x |= static_cast<std::uint32_t>(p[b]) << (8 * b);
        return x;
    }
    std::uint64_t u64() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(8));
        std::uint64_t x = 0;
        for (int b = 0; b < 8; ++b) x |= static_cast<std::uint64_t>(p[b]) << (8 * b);
        return x;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

void put_block_header(std::string& out, const std::string& name, std::size_t rows,
                      std::size_t cols, std::uint32_t dtype) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(rows));
    put_u32(out, static_cast<std::uint32_t>(cols));
    put_u32(out, dtype);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState* adam, const json& meta) {
    json header{{"model", model.config.to_json()}, {"meta", meta}};
    if (adam) header["meta"]["adam_step"] = adam->step;
    const std::string h = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    const auto& blocks = model.params.blocks();
    const bool with_adam = adam && !adam->m.empty();
    if (with_adam && (adam->m.size() != model.params.total() ||
                      adam->v.size() != model.params.total())) {
        throw ShapeError("optimizer state does not match the model");
    }
    put_u32(out, static_cast<std::uint32_t>(blocks.size() * (with_adam ? 3 : 1)));
    for (const ParamBlock& b : blocks) {
        put_block_header(out, b.name, b.rows, b.cols, 1);
        for (float x : model.params.values(b.name)) put_u32(out, std::bit_cast<std::uint32_t>(x));
    }
    if (with_adam) {
        for (const char* kind : {"adam.m/", "adam.v/"}) {
            const std::vector<double>& src = kind[5] == 'm' ? adam->m : adam->v;
            for (const ParamBlock& b : blocks) {
                put_block_header(out, kind + b.name, b.rows, b.cols, 2);
                for (std::size_t i = 0; i < b.size(); ++i) {
                    put_u64(out, std::bit_cast<std::uint64_t>(src[b.offset + i]));
                }
            }
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed to write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    Reader r(ss.str());
    if (std::memcmp(r.take(8), kMagic, 8) != 0) throw CorruptData("not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CorruptData("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t hlen = r.u32();
    json header;
    try {
        header = json::parse(std::string(r.take(hlen), hlen));
    } catch (const json::exception& e) {
        throw CorruptData(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint ck;
    ModelConfig config;
    try {
        config = ModelConfig::from_json(header.at("model"));
    } catch (const json::exception& e) {
        throw CorruptData(std::string("checkpoint header lacks a model config: ") + e.what());
    }
    ck.model = Model<float>::init(config, 0);
    ck.meta = header.value("meta", json::object());

    const std::size_t total = ck.model.params.total();
    std::vector<char> seen(ck.model.params.blocks().size(), 0);
    AdamState adam;
    const std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
        const std::uint32_t len = r.u32();
        std::string name(r.take(len), len);
        const std::uint32_t rows = r.u32(), cols = r.u32(), dtype = r.u32();
        std::string base = name;
        std::vector<double>* moment = nullptr;
        if (name.rfind("adam.m/", 0) == 0 || name.rfind("adam.v/", 0) == 0) {
            base = name.substr(7);
            auto& vec = name[5] == 'm' ? adam.m : adam.v;
            if (vec.empty()) vec.assign(total, 0.0);
            moment = &vec;
        }
        if (!ck.model.params.contains(base)) throw CorruptData("unknown block " + name);
        const ParamBlock& b = ck.model.params.block(base);
        if (b.rows != rows || b.cols != cols) throw CorruptData("block " + name + " has wrong shape");
        if (moment) {
            if (dtype != 2) throw CorruptData("optimizer block " + name + " must be float64");
            for (std::size_t i = 0; i < b.size(); ++i) {
                (*moment)[b.offset + i] = std::bit_cast<double>(r.u64());
            }
        } else {
            if (dtype != 1) throw CorruptData("parameter block " + name + " must be float32");
            auto vals = ck.model.params.values(base);
            for (float& x : vals) x = std::bit_cast<float>(r.u32());
            seen[ck.model.params.find(base)] = 1;
        }
    }
    if (!r.done()) throw CorruptData("trailing bytes after the last checkpoint block");
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw CorruptData("missing block " + ck.model.params.block(i).name);
    }
    if (!adam.m.empty() || !adam.v.empty()) {
        if (adam.m.size() != total || adam.v.size() != total) {
            throw CorruptData("incomplete optimizer state");
        }
        adam.step = ck.meta.value("adam_step", std::uint64_t{0});
        ck.adam = std::move(adam);
    }
    return ck;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return fnv1a_hex(ss.str());
}

}  // namespace climatellm
