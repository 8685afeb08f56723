#include "spnn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

namespace spnn::ckpt {

using nlohmann::json;
using linalg::Mat;
using linalg::Vec;

namespace {

constexpr char kMagic[8] = {'S', 'P', 'N', 'N', 'C', 'K', 'P', '1'};
constexpr int kFormatVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f)
            std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

const char* act_name(nn::Act a) { return a == nn::Act::Tanh ? "tanh" : "relu"; }
nn::Act act_from(const std::string& s) {
    if (s == "tanh")
        return nn::Act::Tanh;
    if (s == "relu")
        return nn::Act::Relu;
    throw std::runtime_error("checkpoint: unknown activation " + s);
}
const char* head_name(nn::Head h) { return h == nn::Head::Linear ? "linear" : "scale"; }
nn::Head head_from(const std::string& s) {
    if (s == "linear")
        return nn::Head::Linear;
    if (s == "scale")
        return nn::Head::Scale;
    throw std::runtime_error("checkpoint: unknown head " + s);
}

// Tensor blob under construction (or being read back).
struct Blob {
    std::vector<unsigned char> bytes;
    json table = json::array();

    void put(const std::string& name, std::size_t rows, std::size_t cols, const double* data) {
        json entry;
        entry["name"] = name;
        entry["rows"] = rows;
        entry["cols"] = cols;
        entry["offset"] = bytes.size();
        table.push_back(entry);
        const std::uint64_t dims[2] = {rows, cols};
        const auto* dp = reinterpret_cast<const unsigned char*>(dims);
        bytes.insert(bytes.end(), dp, dp + sizeof(dims));
        const auto* vp = reinterpret_cast<const unsigned char*>(data);
        bytes.insert(bytes.end(), vp, vp + rows * cols * sizeof(double));
    }

    void put_mlp(const std::string& prefix, const nn::Mlp& net) {
        for (std::size_t l = 0; l < net.w.size(); ++l) {
            put(prefix + ".w" + std::to_string(l), net.w[l].rows, net.w[l].cols,
                net.w[l].data.data());
            put(prefix + ".b" + std::to_string(l), net.b[l].size(), 1, net.b[l].data());
        }
    }
};

struct BlobReader {
    const std::vector<unsigned char>& bytes;
    const json& table;
    std::size_t cursor = 0;  // sequential read; names are cross-checked

    Mat next(const std::string& want_name) {
        if (cursor >= table.size())
            throw std::runtime_error("checkpoint: tensor table exhausted at " + want_name);
        const json& entry = table[cursor++];
        if (entry.at("name").get<std::string>() != want_name)
            throw std::runtime_error("checkpoint: expected tensor " + want_name + ", found " +
                                     entry.at("name").get<std::string>());
        const auto rows = entry.at("rows").get<std::size_t>();
        const auto cols = entry.at("cols").get<std::size_t>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const std::size_t need = 2 * sizeof(std::uint64_t) + rows * cols * sizeof(double);
        if (offset + need > bytes.size())
            throw std::runtime_error("checkpoint: tensor " + want_name + " out of bounds");
        std::uint64_t dims[2];
        std::memcpy(dims, bytes.data() + offset, sizeof(dims));
        if (dims[0] != rows || dims[1] != cols)
            throw std::runtime_error("checkpoint: dim header mismatch for " + want_name);
        Mat m(rows, cols);
        std::memcpy(m.data.data(), bytes.data() + offset + sizeof(dims),
                    rows * cols * sizeof(double));
        return m;
    }

    void read_mlp(const std::string& prefix, nn::Mlp& net) {
        for (std::size_t l = 0; l < net.w.size(); ++l) {
            Mat w = next(prefix + ".w" + std::to_string(l));
            if (w.rows != net.w[l].rows || w.cols != net.w[l].cols)
                throw std::runtime_error("checkpoint: shape mismatch in " + prefix);
            net.w[l] = std::move(w);
            Mat b = next(prefix + ".b" + std::to_string(l));
            if (b.rows != net.b[l].size() || b.cols != 1)
                throw std::runtime_error("checkpoint: bias shape mismatch in " + prefix);
            net.b[l] = std::move(b.data);
        }
        ++net.version;
    }
};

json mlp_descriptor(const nn::Mlp& net) {
    json d;
    d["dims"] = net.dims;
    d["act"] = act_name(net.hidden);
    d["head"] = head_name(net.head);
    return d;
}

nn::Mlp mlp_from_descriptor(const json& d) {
    return nn::Mlp::zeros(d.at("dims").get<std::vector<std::size_t>>(),
                          act_from(d.at("act").get<std::string>()),
                          head_from(d.at("head").get<std::string>()));
}

void write_file(const std::string& path, const json& manifest,
                const std::vector<unsigned char>& blob) {
    File f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    const std::string text = manifest.dump();
    const std::uint64_t len = text.size();
    if (std::fwrite(kMagic, 1, sizeof(kMagic), f.get()) != sizeof(kMagic) ||
        std::fwrite(&len, sizeof(len), 1, f.get()) != 1 ||
        std::fwrite(text.data(), 1, text.size(), f.get()) != text.size() ||
        (blob.size() > 0 &&
         std::fwrite(blob.data(), 1, blob.size(), f.get()) != blob.size()))
        throw std::runtime_error("checkpoint: short write to " + path);
}

void read_file(const std::string& path, json& manifest, std::vector<unsigned char>& blob) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    std::uint64_t len = 0;
    if (std::fread(magic, 1, sizeof(magic), f.get()) != sizeof(magic) ||
        std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (std::fread(&len, sizeof(len), 1, f.get()) != 1)
        throw std::runtime_error("checkpoint: truncated header in " + path);
    std::string text(len, '\0');
    if (std::fread(text.data(), 1, len, f.get()) != len)
        throw std::runtime_error("checkpoint: truncated manifest in " + path);
    manifest = json::parse(text);
    const auto version = manifest.at("format_version").get<int>();
    if (version != kFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version) + " in " + path);
    blob.clear();
    unsigned char buf[65536];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), f.get())) > 0)
        blob.insert(blob.end(), buf, buf + got);
}

}  // namespace

void save_model(const SpnnModel& m, const json& config_echo, std::uint64_t seed,
                const std::string& path) {
    Blob blob;
    json topology = json::array();
    std::size_t bi = 0;
    for (const auto& st : m.stages) {
        if (const auto* r = std::get_if<Reshape>(&st)) {
            json stage;
            stage["stage"] = "unshuffle";
            stage["c"] = r->c;
            stage["h"] = r->h;
            stage["w"] = r->w;
            stage["factor"] = r->factor;
            topology.push_back(stage);
            continue;
        }
        const auto& b = std::get<SurjectiveBlock>(st);
        json stage;
        stage["stage"] = "block";
        stage["in"] = b.in_dim;
        stage["out"] = b.out_dim;
        stage["s"] = mlp_descriptor(b.s_net);
        stage["t"] = mlp_descriptor(b.t_net);
        stage["r"] = mlp_descriptor(b.r_net);
        stage["r_rand"] = mlp_descriptor(b.r_rand);
        topology.push_back(stage);
        const std::string prefix = "block" + std::to_string(bi++);
        blob.put(prefix + ".mixer", b.mixer.param_count(), 1, b.mixer.params.data());
        blob.put_mlp(prefix + ".s", b.s_net);
        blob.put_mlp(prefix + ".t", b.t_net);
        blob.put_mlp(prefix + ".r", b.r_net);
        blob.put_mlp(prefix + ".r_rand", b.r_rand);
    }
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["kind"] = "spnn";
    manifest["input_dim"] = m.input_dim;
    manifest["output_dim"] = m.output_dim;
    manifest["topology"] = topology;
    manifest["tensors"] = blob.table;
    manifest["config"] = config_echo;
    manifest["seed"] = seed;
    write_file(path, manifest, blob.bytes);
}

SpnnModel load_model(const std::string& path, json* config_echo, std::uint64_t* seed) {
    json manifest;
    std::vector<unsigned char> blob;
    read_file(path, manifest, blob);
    if (manifest.at("kind").get<std::string>() != "spnn")
        throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");

    SpnnModel m;
    m.input_dim = manifest.at("input_dim").get<std::size_t>();
    m.output_dim = manifest.at("output_dim").get<std::size_t>();
    BlobReader reader{blob, manifest.at("tensors"), 0};
    std::size_t bi = 0;
    for (const json& stage : manifest.at("topology")) {
        const std::string kind = stage.at("stage").get<std::string>();
        if (kind == "unshuffle") {
            Reshape r;
            r.c = stage.at("c").get<std::size_t>();
            r.h = stage.at("h").get<std::size_t>();
            r.w = stage.at("w").get<std::size_t>();
            r.factor = stage.at("factor").get<std::size_t>();
            m.stages.emplace_back(r);
            continue;
        }
        SurjectiveBlock b;
        b.in_dim = stage.at("in").get<std::size_t>();
        b.out_dim = stage.at("out").get<std::size_t>();
        b.mixer = linalg::SkewGenerator(b.in_dim);
        b.s_net = mlp_from_descriptor(stage.at("s"));
        b.t_net = mlp_from_descriptor(stage.at("t"));
        b.r_net = mlp_from_descriptor(stage.at("r"));
        b.r_rand = mlp_from_descriptor(stage.at("r_rand"));
        const std::string prefix = "block" + std::to_string(bi++);
        Mat mixer = reader.next(prefix + ".mixer");
        if (mixer.rows != b.mixer.param_count() || mixer.cols != 1)
            throw std::runtime_error("checkpoint: mixer shape mismatch");
        b.mixer.params = std::move(mixer.data);
        reader.read_mlp(prefix + ".s", b.s_net);
        reader.read_mlp(prefix + ".t", b.t_net);
        reader.read_mlp(prefix + ".r", b.r_net);
        reader.read_mlp(prefix + ".r_rand", b.r_rand);
        m.stages.emplace_back(std::move(b));
    }
    m.refresh();
    if (config_echo)
        *config_echo = manifest.at("config");
    if (seed)
        *seed = manifest.at("seed").get<std::uint64_t>();
    return m;
}

void save_denoiser(const diffusion::Denoiser& den, const json& config_echo, std::uint64_t seed,
                   const std::string& path) {
    Blob blob;
    blob.put_mlp("net", den.net);
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["kind"] = "denoiser";
    manifest["data_dim"] = den.data_dim;
    manifest["emb_dim"] = den.emb_dim;
    manifest["net"] = mlp_descriptor(den.net);
    manifest["schedule"] = {{"steps", den.sched.steps},
                            {"beta_start", den.sched.betas.front()},
                            {"beta_end", den.sched.betas.back()}};
    manifest["tensors"] = blob.table;
    manifest["config"] = config_echo;
    manifest["seed"] = seed;
    write_file(path, manifest, blob.bytes);
}

diffusion::Denoiser load_denoiser(const std::string& path, json* config_echo,
                                  std::uint64_t* seed) {
    json manifest;
    std::vector<unsigned char> blob;
    read_file(path, manifest, blob);
    if (manifest.at("kind").get<std::string>() != "denoiser")
        throw std::runtime_error("checkpoint: " + path + " is not a denoiser checkpoint");
    diffusion::Denoiser den;
    den.data_dim = manifest.at("data_dim").get<std::size_t>();
    den.emb_dim = manifest.at("emb_dim").get<std::size_t>();
    den.net = mlp_from_descriptor(manifest.at("net"));
    const json& sched = manifest.at("schedule");
    den.sched = diffusion::DiffusionSchedule::linear(sched.at("steps").get<std::size_t>(),
                                                     sched.at("beta_start").get<double>(),
                                                     sched.at("beta_end").get<double>());
    BlobReader reader{blob, manifest.at("tensors"), 0};
    reader.read_mlp("net", den.net);
    if (config_echo)
        *config_echo = manifest.at("config");
    if (seed)
        *seed = manifest.at("seed").get<std::uint64_t>();
    return den;
}

void save_matrix(const Mat& m, const std::string& path) {
    File f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw std::runtime_error("save_matrix: cannot open " + path);
    const std::uint64_t dims[2] = {m.rows, m.cols};
    if (std::fwrite(dims, sizeof(std::uint64_t), 2, f.get()) != 2 ||
        std::fwrite(m.data.data(), sizeof(double), m.data.size(), f.get()) != m.data.size())
        throw std::runtime_error("save_matrix: short write to " + path);
}

Mat load_matrix(const std::string& path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw std::runtime_error("load_matrix: cannot open " + path);
    std::uint64_t dims[2];
    if (std::fread(dims, sizeof(std::uint64_t), 2, f.get()) != 2)
        throw std::runtime_error("load_matrix: truncated header in " + path);
    Mat m(dims[0], dims[1]);
    if (std::fread(m.data.data(), sizeof(double), m.data.size(), f.get()) != m.data.size())
        throw std::runtime_error("load_matrix: truncated data in " + path);
    return m;
}

}  // namespace spnn::ckpt
