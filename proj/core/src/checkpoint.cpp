#include "mrsae/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace mrsae {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'R', 'S', 'A', 'E', 'C', 'K', 'P'};

json config_to_json(const TrainConfig& c) {
    return json{{"activation", to_string(c.activation.kind)},
                {"topk", c.activation.k},
                {"expansion", c.expansion},
                {"lambda", c.lambda},
                {"k_nn", c.k_nn},
                {"epochs", c.epochs},
                {"lr", c.lr},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"holdout_fraction", c.holdout_fraction}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.activation.kind = parse_activation(j.at("activation").get<std::string>());
    c.activation.k = j.at("topk").get<std::size_t>();
    c.expansion = j.at("expansion").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.k_nn = j.at("k_nn").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.holdout_fraction = j.at("holdout_fraction").get<double>();
    return c;
}

template <typename Derived>
void write_block(std::ostream& out, const Eigen::PlainObjectBase<Derived>& m) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

template <typename Derived>
void read_block(std::istream& in, Eigen::PlainObjectBase<Derived>& m, const std::filesystem::path& path) {
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
        throw ValidationError(path.string() + ": truncated parameter block");
}

struct Header {
    json preamble;
    std::streamoff payload_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError(path.string() + ": not a checkpoint (bad magic)");
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || version != kCheckpointVersion)
        throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len)))
        throw ValidationError(path.string() + ": truncated preamble");
    Header h;
    try {
        h.preamble = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": malformed preamble: " + e.what());
    }
    h.payload_offset = in.tellg();
    return h;
}

} // namespace

void save_checkpoint(const TrainedSae& model, const std::filesystem::path& path, const std::string& provenance_json) {
    json pre;
    pre["format"] = "mrsae-checkpoint";
    pre["d"] = model.params.d();
    pre["d_sae"] = model.params.d_sae();
    pre["config"] = config_to_json(model.config);
    pre["variant"] = model.variant_tag();
    pre["manifold_normalization"] = "mean over B*k batch edges";
    pre["explained_variance"] = model.explained_variance;
    pre["train_rows"] = model.train_rows;
    pre["holdout_rows"] = model.holdout_rows;
    json alive = json::array();
    for (std::size_t j = 0; j < model.alive_mask.size(); ++j)
        if (model.alive_mask[j])
            alive.push_back(j);
    pre["alive"] = alive;
    pre["alive_count"] = model.alive_count();
    json history = json::array();
    for (const auto& l : model.loss_history)
        history.push_back({l.reconstruction, l.manifold, l.total});
    pre["loss_history"] = history;
    if (!model.loss_history.empty()) {
        const auto& last = model.loss_history.back();
        pre["final_loss"] = {{"reconstruction", last.reconstruction}, {"manifold", last.manifold}, {"total", last.total}};
    }
    pre["provenance"] = provenance_json.empty() ? json::object() : json::parse(provenance_json);

    const std::string text = pre.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    out.write(kMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_block(out, model.params.W_enc);
    write_block(out, model.params.b_enc);
    write_block(out, model.params.W_dec);
    write_block(out, model.params.b_pre);
}

TrainedSae load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("cannot open checkpoint " + path.string());
    const auto header = read_header(in, path);
    const auto& pre = header.preamble;

    TrainedSae model;
    try {
        model.config = config_from_json(pre.at("config"));
        const auto d = pre.at("d").get<Eigen::Index>();
        const auto m = pre.at("d_sae").get<Eigen::Index>();
        model.params.W_enc.resize(m, d);
        model.params.b_enc.resize(m);
        model.params.W_dec.resize(d, m);
        model.params.b_pre.resize(d);
        model.explained_variance = pre.at("explained_variance").get<double>();
        model.train_rows = pre.value("train_rows", std::size_t{0});
        model.holdout_rows = pre.value("holdout_rows", std::size_t{0});
        model.alive_mask.assign(static_cast<std::size_t>(m), false);
        for (const auto& j : pre.at("alive"))
            model.alive_mask.at(j.get<std::size_t>()) = true;
        for (const auto& l : pre.at("loss_history"))
            model.loss_history.push_back({l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": incomplete preamble: " + e.what());
    }
    read_block(in, model.params.W_enc, path);
    read_block(in, model.params.b_enc, path);
    read_block(in, model.params.W_dec, path);
    read_block(in, model.params.b_pre, path);
    model.params.validate();
    return model;
}

std::string read_checkpoint_preamble(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("cannot open checkpoint " + path.string());
    return read_header(in, path).preamble.dump();
}

} // namespace mrsae
