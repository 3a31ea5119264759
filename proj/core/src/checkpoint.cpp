#include "causaldiff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace causaldiff {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

nlohmann::json hyper_to_json(const ModelHyper& h) {
    return {{"x_dim", h.x_dim},
            {"hidden", h.hidden},
            {"latent_total", h.latent_total},
            {"temb_dim", h.temb_dim},
            {"class_emb_dim", h.class_emb_dim},
            {"classes", h.classes},
            {"diffusion_steps", h.diffusion_steps},
            {"beta_start", h.beta_start},
            {"beta_end", h.beta_end}};
}

ModelHyper hyper_from_json(const nlohmann::json& j) {
    ModelHyper h;
    h.x_dim = j.at("x_dim").get<std::size_t>();
    h.hidden = j.at("hidden").get<std::size_t>();
    h.latent_total = j.at("latent_total").get<std::size_t>();
    h.temb_dim = j.at("temb_dim").get<std::size_t>();
    h.class_emb_dim = j.at("class_emb_dim").get<std::size_t>();
    h.classes = j.at("classes").get<std::size_t>();
    h.diffusion_steps = j.at("diffusion_steps").get<std::size_t>();
    h.beta_start = j.at("beta_start").get<double>();
    h.beta_end = j.at("beta_end").get<double>();
    return h;
}

}  // namespace

void save_checkpoint(const ModelVariant& model, const ModelHyper& hyper,
                     const CheckpointMeta& meta, const std::string& base_path) {
    auto named = model.named_params();

    std::vector<double> payload;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, t] : named) {
        params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()},
                          {"count", t.size()}});
        payload.insert(payload.end(), t.data().begin(), t.data().end());
    }
    std::size_t bytes = payload.size() * sizeof(double);

    nlohmann::json j;
    j["format"] = "causaldiff-checkpoint-v1";
    j["variant"] = variant_name(model.kind());
    j["seed"] = meta.seed;
    j["hyper"] = hyper_to_json(hyper);
    j["params"] = params;
    j["payload_bytes"] = bytes;
    j["payload_hash"] = hash_hex(fnv1a64(payload.data(), bytes));
    for (const auto& [k, v] : meta.extra) j["extra"][k] = v;

    std::ofstream bf(base_path + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + base_path + ".bin");
    bf.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(bytes));
    bf.close();

    std::ofstream jf(base_path + ".json");
    if (!jf) throw std::runtime_error("cannot write " + base_path + ".json");
    jf << j.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& base_path) {
    std::ifstream jf(base_path + ".json");
    if (!jf) throw std::runtime_error("cannot read checkpoint manifest " + base_path + ".json");
    nlohmann::json j;
    jf >> j;
    if (j.value("format", "") != "causaldiff-checkpoint-v1")
        throw std::runtime_error("checkpoint: unrecognized format in " + base_path + ".json");

    LoadedCheckpoint out;
    out.hyper = hyper_from_json(j.at("hyper"));
    out.meta.variant = j.at("variant").get<std::string>();
    out.meta.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("extra"))
        for (auto& [k, v] : j.at("extra").items()) out.meta.extra[k] = v.get<std::string>();

    std::ifstream bf(base_path + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("cannot read checkpoint payload " + base_path + ".bin");
    std::size_t actual = static_cast<std::size_t>(bf.tellg());
    std::size_t expected = j.at("payload_bytes").get<std::size_t>();
    if (actual != expected)
        throw std::runtime_error("checkpoint payload length mismatch: expected " +
                                 std::to_string(expected) + " bytes, found " + std::to_string(actual));
    std::vector<double> payload(actual / sizeof(double));
    bf.seekg(0);
    bf.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(actual));

    std::string want = j.at("payload_hash").get<std::string>();
    std::string got = hash_hex(fnv1a64(payload.data(), actual));
    if (want != got)
        throw std::runtime_error("checkpoint payload hash mismatch: manifest " + want + ", payload " + got);

    out.model = make_variant(variant_from_name(out.meta.variant), out.hyper, out.meta.seed);
    auto named = out.model->named_params();
    const auto& params = j.at("params");
    if (params.size() != named.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& pj = params[static_cast<int>(i)];
        auto& [name, t] = named[i];
        if (pj.at("name").get<std::string>() != name)
            throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
        if (pj.at("shape").get<Shape>() != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        std::size_t off = pj.at("offset").get<std::size_t>();
        std::size_t cnt = pj.at("count").get<std::size_t>();
        if (off + cnt > payload.size())
            throw std::runtime_error("checkpoint: parameter range out of payload for " + name);
        Tensor& dst = const_cast<Tensor&>(t);
        std::memcpy(dst.mutable_data().data(), payload.data() + off, cnt * sizeof(double));
    }
    return out;
}

}  // namespace causaldiff
