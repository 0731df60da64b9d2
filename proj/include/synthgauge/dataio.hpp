#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "numerics.hpp"

namespace sg {

enum class Source : std::uint8_t { real = 0, synthetic = 1 };

// N feature vectors with class labels and a real/synthetic tag; the common
// currency of the metric suite. Payload is float32 to match the EMB1 file
// format exactly.
struct EmbeddingSet {
    std::uint32_t dim = 0;
    std::vector<float> vectors;        // N*dim row-major
    std::vector<std::uint8_t> labels;  // 0 benign, 1 malignant
    std::vector<std::uint32_t> ids;
    Source source = Source::real;

    std::size_t size() const { return labels.size(); }

    void validate() const {
        const std::size_t n = labels.size();
        if (vectors.size() != n * std::size_t(dim))
            throw ValidationError("EmbeddingSet: vector payload size " +
                                  std::to_string(vectors.size()) +
                                  " does not match N*dim");
        if (ids.size() != n)
            throw ValidationError("EmbeddingSet: id count mismatch");
        for (float v : vectors)
            if (!std::isfinite(v))
                throw ValidationError("EmbeddingSet: non-finite vector entry");
        for (std::uint8_t l : labels)
            if (l > 1)
                throw ValidationError("EmbeddingSet: label " +
                                      std::to_string(l) + " not in {0,1}");
        std::vector<std::uint32_t> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ValidationError("EmbeddingSet: duplicate sample id");
    }

    // Rows widened to double for the numeric kernels.
    Matrix as_matrix() const {
        Matrix m(size(), dim);
        for (std::size_t i = 0; i < vectors.size(); ++i)
            m.a[i] = double(vectors[i]);
        return m;
    }

    Vec row_double(std::size_t i) const {
        Vec r(dim);
        for (std::uint32_t j = 0; j < dim; ++j)
            r[j] = double(vectors[i * dim + j]);
        return r;
    }

    void push_row(std::span<const double> row, std::uint8_t label,
                  std::uint32_t id) {
        for (double v : row) vectors.push_back(float(v));
        labels.push_back(label);
        ids.push_back(id);
    }
};

namespace detail {

struct ByteReader {
    const std::vector<char>& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw FormatError(std::string("EMB1: truncated ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return std::uint8_t(buf[pos++]);
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
};

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += char((v >> (8 * i)) & 0xff);
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

}  // namespace detail

// EMB1 layout (little-endian): magic "EMB1", u32 version=1, u32 N, u32 dim,
// u8 source, N*dim f32 row-major, N u8 labels, N u32 ids.
inline std::string encode_embeddings(const EmbeddingSet& set) {
    set.validate();
    std::string out;
    out += "EMB1";
    detail::put_u32(out, 1);
    detail::put_u32(out, std::uint32_t(set.size()));
    detail::put_u32(out, set.dim);
    out += char(std::uint8_t(set.source));
    for (float v : set.vectors) detail::put_f32(out, v);
    for (std::uint8_t l : set.labels) out += char(l);
    for (std::uint32_t id : set.ids) detail::put_u32(out, id);
    return out;
}

inline EmbeddingSet decode_embeddings(const std::vector<char>& buf) {
    detail::ByteReader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), "EMB1", 4) != 0)
        throw FormatError("EMB1: bad magic", 0);
    r.pos = 4;
    std::uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError("EMB1: unsupported version " +
                              std::to_string(version),
                          4);
    std::uint32_t n = r.u32("count");
    std::uint32_t dim = r.u32("dim");
    std::uint8_t src = r.u8("source");
    if (src > 1) throw FormatError("EMB1: bad source tag", r.pos - 1);

    EmbeddingSet set;
    set.dim = dim;
    set.source = Source(src);
    set.vectors.reserve(std::size_t(n) * dim);
    for (std::uint64_t i = 0; i < std::uint64_t(n) * dim; ++i)
        set.vectors.push_back(r.f32("vector payload"));
    for (std::uint32_t i = 0; i < n; ++i)
        set.labels.push_back(r.u8("labels"));
    for (std::uint32_t i = 0; i < n; ++i) set.ids.push_back(r.u32("ids"));
    if (r.pos != buf.size())
        throw FormatError("EMB1: trailing bytes", r.pos);
    set.validate();
    return set;
}

inline void write_embeddings(const EmbeddingSet& set,
                             const std::filesystem::path& path) {
    std::string bytes = encode_embeddings(set);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw ValidationError("write failed: " + path.string());
}

inline EmbeddingSet read_embeddings(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
    return decode_embeddings(buf);
}

// All pipeline knobs with their documented defaults.
struct PipelineConfig {
    std::uint64_t seed = 42;
    std::uint32_t latent_dim = 16;
    std::uint32_t sample_dim = 32;
    double class_ratio = 0.02;
    std::vector<std::uint32_t> client_sizes = {200, 1200, 2000};
    std::uint32_t k = 3;
    std::uint32_t kid_block = 50;
    std::uint32_t kid_blocks = 10;
    double ppl_epsilon = 1e-4;
    std::uint32_t ppl_paths = 1000;
    double lr = 0.0005;
    std::uint32_t max_epochs = 20;
    std::uint32_t patience = 3;
    std::uint32_t fed_exchange_every = 100;
    std::uint32_t fed_rounds = 20;
    double fed_lr = 0.05;
    std::uint32_t n_real = 400;
    std::uint32_t n_synth = 400;
    std::uint32_t feature_dim = 24;
    std::uint32_t project_targets = 10;
    std::uint32_t project_steps = 2000;
    double project_lr = 0.1;
    std::uint32_t scenario_scale = 100;  // divides the 55k/22k volumes

    void validate() const {
        if (latent_dim == 0 || sample_dim == 0 || feature_dim == 0)
            throw ValidationError("config: dimensions must be positive");
        if (!(class_ratio > 0.0 && class_ratio < 1.0))
            throw ValidationError("config: class_ratio must lie in (0,1)");
        if (client_sizes.empty())
            throw ValidationError("config: client_sizes must be non-empty");
        for (auto s : client_sizes)
            if (s == 0)
                throw ValidationError("config: client sizes must be positive");
        if (k == 0 || kid_block == 0 || kid_blocks == 0 || ppl_paths == 0 ||
            max_epochs == 0 || fed_exchange_every == 0 || fed_rounds == 0 ||
            n_real == 0 || n_synth == 0 || project_targets == 0 ||
            project_steps == 0 || scenario_scale == 0)
            throw ValidationError("config: counts must be positive");
        if (!(ppl_epsilon > 0.0))
            throw ValidationError("config: ppl_epsilon must be positive");
        if (!(lr > 0.0) || !(fed_lr > 0.0) || !(project_lr > 0.0))
            throw ValidationError("config: learning rates must be positive");
        if (patience > max_epochs)
            throw ValidationError("config: patience exceeds max_epochs");
    }
};

inline PipelineConfig parse_config(const nlohmann::json& j) {
    PipelineConfig c;
    if (!j.is_object()) throw ValidationError("config: expected JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "latent_dim") c.latent_dim = v.get<std::uint32_t>();
        else if (key == "sample_dim") c.sample_dim = v.get<std::uint32_t>();
        else if (key == "class_ratio") c.class_ratio = v.get<double>();
        else if (key == "client_sizes")
            c.client_sizes = v.get<std::vector<std::uint32_t>>();
        else if (key == "k") c.k = v.get<std::uint32_t>();
        else if (key == "kid_block") c.kid_block = v.get<std::uint32_t>();
        else if (key == "kid_blocks") c.kid_blocks = v.get<std::uint32_t>();
        else if (key == "ppl_epsilon") c.ppl_epsilon = v.get<double>();
        else if (key == "ppl_paths") c.ppl_paths = v.get<std::uint32_t>();
        else if (key == "lr") c.lr = v.get<double>();
        else if (key == "max_epochs") c.max_epochs = v.get<std::uint32_t>();
        else if (key == "patience") c.patience = v.get<std::uint32_t>();
        else if (key == "fed_exchange_every")
            c.fed_exchange_every = v.get<std::uint32_t>();
        else if (key == "fed_rounds") c.fed_rounds = v.get<std::uint32_t>();
        else if (key == "fed_lr") c.fed_lr = v.get<double>();
        else if (key == "n_real") c.n_real = v.get<std::uint32_t>();
        else if (key == "n_synth") c.n_synth = v.get<std::uint32_t>();
        else if (key == "feature_dim") c.feature_dim = v.get<std::uint32_t>();
        else if (key == "project_targets")
            c.project_targets = v.get<std::uint32_t>();
        else if (key == "project_steps")
            c.project_steps = v.get<std::uint32_t>();
        else if (key == "project_lr") c.project_lr = v.get<double>();
        else if (key == "scenario_scale")
            c.scenario_scale = v.get<std::uint32_t>();
        else
            throw ValidationError("config: unknown key \"" + key + "\"");
    }
    c.validate();
    return c;
}

inline PipelineConfig read_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config: invalid JSON in " + path.string() +
                              ": " + e.what());
    }
    return parse_config(j);
}

inline void write_text(const std::filesystem::path& path,
                       std::string_view text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path.string());
    f.write(text.data(), std::streamsize(text.size()));
    if (!f) throw ValidationError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

}  // namespace sg
