#include "spectralca/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace spectralca {

namespace fs = std::filesystem;

fs::path checkpoint_blob_path(const fs::path& manifest) {
    fs::path blob = manifest;
    blob += ".bin";
    return blob;
}

void save_checkpoint(Classifier<float>& model, const fs::path& path, const nlohmann::json& extra) {
    const fs::path blob_path = checkpoint_blob_path(path);
    nlohmann::json entries = nlohmann::json::array();
    const auto params = model.parameters();
    std::vector<char> blob;
    std::size_t index = 0;
    for (Parameter<float>* p : model.state()) {
        const bool trainable = index++ < params.size();
        entries.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", blob.size()},
                           {"trainable", trainable}});
        for (float v : p->value.data()) {
            const auto u = std::bit_cast<std::uint32_t>(v);
            for (int k = 0; k < 4; ++k) blob.push_back(static_cast<char>((u >> (8 * k)) & 0xFFu));
        }
    }
    nlohmann::json manifest{{"format", kCheckpointFormat},
                            {"version", kCheckpointVersion},
                            {"model", model.config()},
                            {"seed", model.seed()},
                            {"blob", blob_path.filename().string()},
                            {"blob_bytes", blob.size()},
                            {"entries", entries},
                            {"extra", extra}};
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint manifest " + path.string());
        out << manifest.dump(2) << '\n';
    }
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint blob " + blob_path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("write failed for " + blob_path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    try {
        if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
            throw CheckpointError("not a spectralca checkpoint: format '" + manifest.at("format").get<std::string>() + "'");
        }
        const int version = manifest.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        const auto config = manifest.at("model").get<ModelConfig>();
        const auto seed = manifest.at("seed").get<std::uint64_t>();
        const fs::path blob_path = path.parent_path() / manifest.at("blob").get<std::string>();

        LoadedCheckpoint ck;
        ck.model = std::make_unique<Classifier<float>>(config, seed);
        ck.extra = manifest.value("extra", nlohmann::json::object());

        std::ifstream bin(blob_path, std::ios::binary);
        if (!bin) throw CheckpointError("cannot open checkpoint blob " + blob_path.string());
        const std::vector<char> blob{std::istreambuf_iterator<char>(bin), {}};

        const auto state = ck.model->state();
        std::size_t expected = 0;
        for (Parameter<float>* p : state) expected += p->value.numel() * 4;
        const auto declared = manifest.at("blob_bytes").get<std::size_t>();
        if (blob.size() != expected || declared != expected) {
            throw CheckpointError("checkpoint blob length mismatch: expected " + std::to_string(expected) +
                                  " bytes, got " + std::to_string(blob.size()) + " (manifest says " +
                                  std::to_string(declared) + ")");
        }
        const auto& entries = manifest.at("entries");
        if (entries.size() != state.size()) {
            throw CheckpointError("checkpoint has " + std::to_string(entries.size()) + " entries, model expects " +
                                  std::to_string(state.size()));
        }
        for (std::size_t i = 0; i < state.size(); ++i) {
            Parameter<float>& p = *state[i];
            const auto& e = entries[i];
            if (e.at("name").get<std::string>() != p.name) {
                throw CheckpointError("checkpoint entry " + std::to_string(i) + " is '" + e.at("name").get<std::string>() +
                                      "', expected '" + p.name + "'");
            }
            if (e.at("shape").get<Shape>() != p.value.shape()) {
                throw CheckpointError("checkpoint entry '" + p.name + "' has shape " +
                                      shape_str(e.at("shape").get<Shape>()) + ", expected " +
                                      shape_str(p.value.shape()));
            }
            const auto offset = e.at("offset").get<std::size_t>();
            if (offset + p.value.numel() * 4 > blob.size()) {
                throw CheckpointError("checkpoint entry '" + p.name + "' runs past the blob end");
            }
            float* dst = p.value.ptr();
            for (std::size_t j = 0; j < p.value.numel(); ++j) {
                std::uint32_t u = 0;
                for (int k = 0; k < 4; ++k) {
                    u |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * j + k])) << (8 * k);
                }
                dst[j] = std::bit_cast<float>(u);
            }
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint manifest: " + std::string(e.what()));
    }
}

}  // namespace spectralca
