#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "spectralca/baseline.hpp"
#include "spectralca/checkpoint.hpp"
#include "spectralca/data.hpp"
#include "spectralca/gradcheck_suite.hpp"
#include "spectralca/ssl.hpp"
#include "spectralca/trainer.hpp"

using namespace spectralca;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Carries a machine-readable code through to the single error line.
struct CliError : std::runtime_error {
    std::string code;
    CliError(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
};

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw CliError("IO", "cannot write " + path);
    out << text;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw CliError("IO", "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CliError("CONFIG", path.string() + ": " + e.what());
    }
}

// Run configuration: model init seed plus model / data / train sections.
struct RunConfig {
    std::uint64_t seed = 0;
    json model = json::object();
    DataOptions data;
    TrainConfig train;
};

RunConfig parse_config(const json& j) {
    static const std::set<std::string> known{"seed", "model", "data", "train"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw CliError("CONFIG", "unknown config key '" + key + "'");
    }
    RunConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("model")) c.model = j.at("model");
        if (j.contains("data")) c.data = j.at("data").get<DataOptions>();
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    } catch (const json::exception& e) {
        throw CliError("CONFIG", e.what());
    }
    c.train.validate();
    return c;
}

ModelConfig model_for_scene(const json& section, const Scene& scene, std::size_t patch) {
    ModelConfig m = section.get<ModelConfig>();
    auto pin = [&](const char* key, std::size_t& field, std::size_t value) {
        if (section.contains(key) && section.at(key).get<std::size_t>() != value) {
            throw CliError("CONFIG", std::string("model.") + key + " = " + std::to_string(field) +
                                         " conflicts with the data (" + std::to_string(value) + ")");
        }
        field = value;
    };
    pin("num_classes", m.num_classes, scene.num_classes);
    pin("bands", m.bands, scene.cube.bands);
    pin("patch", m.patch, patch);
    m.validate();
    return m;
}

Split load_split(const fs::path& data_dir, const DataOptions& options, Scene& scene) {
    scene = load_scene(data_dir);
    if (scene.num_classes < 2) throw CliError("DATA", "scene needs at least 2 classes");
    return prepare_dataset(scene.cube, scene.labels, options);
}

json checkpoint_extra(const DataOptions& data, const TrainConfig& train, const Split& split, const Scene& scene) {
    return {{"data", data},
            {"train", train},
            {"normalization", split.train.normalization},
            {"scene", {{"name", scene.cube.name},
                       {"height", scene.cube.height},
                       {"width", scene.cube.width},
                       {"bands", scene.cube.bands},
                       {"classes", scene.num_classes}}}};
}

// Rebuilds the split a checkpoint was trained on and confirms it matches.
Split split_for_checkpoint(const LoadedCheckpoint& ck, const fs::path& data_dir, Scene& scene,
                           std::optional<double> pool_fraction = std::nullopt) {
    if (!ck.extra.contains("data")) throw CliError("CHECKPOINT", "checkpoint carries no data options");
    DataOptions options = ck.extra.at("data").get<DataOptions>();
    if (pool_fraction) options.pool_fraction = *pool_fraction;
    Split s = load_split(data_dir, options, scene);
    const auto& cfg = ck.model->config();
    if (scene.cube.bands != cfg.bands || scene.num_classes != cfg.num_classes) {
        throw CliError("DATA_MISMATCH", "scene has " + std::to_string(scene.cube.bands) + " bands / " +
                                            std::to_string(scene.num_classes) + " classes, model expects " +
                                            std::to_string(cfg.bands) + " / " + std::to_string(cfg.num_classes));
    }
    if (ck.extra.contains("normalization") &&
        ck.extra.at("normalization").get<Normalization>() != s.train.normalization) {
        throw CliError("DATA_MISMATCH", "training pixels of this scene differ from the ones the model saw");
    }
    return s;
}

std::optional<ObjectiveWeights> weights_from(const std::vector<double>& lambdas, double t_ref, double p_ref) {
    if (lambdas.empty()) return std::nullopt;
    if (lambdas.size() != 3) throw CliError("USAGE", "--weights takes exactly three values");
    return ObjectiveWeights(lambdas[0], lambdas[1], lambdas[2], t_ref, p_ref);
}

int cmd_gen(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t d, std::size_t k, double noise,
            const std::string& out) {
    const Scene scene = generate_synthetic(seed, h, w, d, k, noise);
    save_scene(scene, out);
    std::vector<std::size_t> counts(k + 1, 0);
    for (auto id : scene.labels.ids) ++counts[id];
    json summary{{"out", out}, {"seed", seed}, {"height", h}, {"width", w}, {"bands", d}, {"classes", k},
                 {"noise", noise}, {"class_pixels", std::vector<std::size_t>(counts.begin() + 1, counts.end())}};
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out) {
    const RunConfig rc = parse_config(read_json(config_path));
    Scene scene;
    const Split split = load_split(data_dir, rc.data, scene);
    const ModelConfig mc = model_for_scene(rc.model, scene, rc.data.patch);
    Classifier<float> model(mc, rc.seed);

    fs::create_directories(out);
    std::ofstream log(fs::path(out) / "history.jsonl", std::ios::binary);
    const TrainHistory hist = train(model, split.train, rc.train, rc.train.eval_every ? &split.test : nullptr, &log);
    save_checkpoint(model, fs::path(out) / "model.json", checkpoint_extra(rc.data, rc.train, split, scene));

    json summary{{"checkpoint", "model.json"},
                 {"train_size", split.train.size()},
                 {"test_size", split.test.size()},
                 {"pool_size", split.pool.size()},
                 {"parameters", model.parameter_count()},
                 {"first_batch_loss", hist.first_batch_loss},
                 {"epochs", hist.epochs.size()}};
    if (!hist.epochs.empty()) summary["final"] = hist.epochs.back();
    write_text((fs::path(out) / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, const std::string& out,
             std::size_t batch, const std::vector<double>& lambdas, double t_ref, double p_ref) {
    auto ck = load_checkpoint(model_path);
    Scene scene;
    const Split split = split_for_checkpoint(ck, data_dir, scene);
    EvalOptions opt;
    opt.batch_size = batch;
    opt.weights = weights_from(lambdas, t_ref, p_ref);
    json report = evaluate(*ck.model, split.test, opt);
    const ConfusionMatrix cm = confusion(*ck.model, split.test, batch);
    json rows = json::array();
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < cm.num_classes(); ++j) row.push_back(cm.at(i, j));
        rows.push_back(row);
    }
    report["confusion"] = rows;
    report["num_classes"] = ck.model->config().num_classes;
    write_text(out, report.dump(2) + "\n");
    return 0;
}

int cmd_ssl(const std::string& model_path, const std::string& data_dir, const SslConfig& ssl,
            std::optional<double> pool_fraction, std::string out) {
    auto ck = load_checkpoint(model_path);
    Scene scene;
    Split split = split_for_checkpoint(ck, data_dir, scene, pool_fraction);
    TrainConfig tc = ck.extra.contains("train") ? ck.extra.at("train").get<TrainConfig>() : TrainConfig{};
    if (out.empty()) out = (fs::path(model_path).parent_path() / "ssl").string();
    fs::create_directories(out);

    const std::size_t pool0 = split.pool.size();
    std::ofstream log(fs::path(out) / "rounds.jsonl", std::ios::binary);
    const auto rounds = run_self_training(*ck.model, split.train, split.pool, ssl, tc, &split.test, &log);
    json extra = ck.extra;
    extra["ssl"] = ssl;
    if (pool_fraction) extra["data"]["pool_fraction"] = *pool_fraction;
    save_checkpoint(*ck.model, fs::path(out) / "model.json", extra);

    json summary{{"checkpoint", "model.json"},
                 {"pool_initial", pool0},
                 {"pool_remaining", split.pool.size()},
                 {"train_size", split.train.size()},
                 {"rounds", rounds}};
    write_text((fs::path(out) / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_audit(const std::string& preset, std::optional<std::uint64_t> expect, bool as_json) {
    const AuditTable table = param_audit(SpectralCAConfig::preset(preset));
    if (as_json) {
        json rows = json::array();
        for (const auto& r : table.rows) {
            rows.push_back({{"component", r.component},
                            {"description", r.description},
                            {"closed_form", r.closed_form},
                            {"enumerated", r.enumerated}});
        }
        std::cout << json{{"preset", preset},
                          {"channels", table.config.channels},
                          {"dim", table.config.dim},
                          {"heads", table.config.heads},
                          {"rows", rows},
                          {"total", table.total}}
                         .dump(2)
                  << '\n';
    } else {
        std::cout << format_audit(table);
    }
    if (expect && *expect != table.total) {
        throw CliError("AUDIT_TOTAL_MISMATCH", "preset " + preset + " totals " + std::to_string(table.total) +
                                                   ", expected " + std::to_string(*expect));
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool cfg32, const std::string& out) {
    GradCheckOptions opt;
    const auto modules = gradcheck_suite(seed, cfg32, opt);
    bool ok = true;
    double worst = 0;
    for (const auto& m : modules) {
        ok = ok && m.report.passed();
        worst = std::max(worst, m.report.max_rel_error);
    }
    json doc{{"seed", seed},
             {"step", opt.step},
             {"tolerance", opt.tolerance},
             {"samples_per_parameter", opt.samples_per_parameter},
             {"modules", modules},
             {"max_rel_error", worst},
             {"passed", ok}};
    write_text(out, doc.dump(2) + "\n");
    for (const auto& m : modules) {
        std::cerr << m.module << ": max relative error " << m.report.max_rel_error
                  << (m.report.passed() ? "" : "  FAILED") << '\n';
    }
    if (!ok) {
        std::ostringstream msg;
        msg << "max relative error " << worst << " exceeds " << opt.tolerance;
        throw CliError("GRADCHECK_FAILED", msg.str());
    }
    return 0;
}

int cmd_bench(const std::string& block, const std::string& preset, std::size_t batch, std::size_t spatial,
              std::size_t bands, std::size_t warmup, std::size_t runs, std::uint64_t seed, const std::string& out) {
    const SpectralCAConfig cfg = SpectralCAConfig::preset(preset);
    const Shape shape{batch, cfg.channels, spatial, spatial, bands};
    Rng rng(seed);
    Tensor<float> x(shape);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : x.data()) v = n(rng);

    auto run = [&](auto& model) {
        model.reset(rng);
        BenchReport r = benchmark(
            [&] {
                Tape<float> t(false);
                model.forward(t.constant(x), false);
            },
            warmup, runs);
        r.label = block + "/" + preset;
        r.batch_size = batch;
        r.params_millions = static_cast<double>(model.parameter_count()) / 1e6;
        return r;
    };
    BenchReport report;
    if (block == "spectralca") {
        SpectralCABlock<float> m("spectralca", cfg);
        report = run(m);
    } else {
        BaselineViTBlock<float> m("baseline", cfg);
        report = run(m);
    }
    json doc = report;
    doc["input_shape"] = shape;
    doc["parameters"] = static_cast<std::uint64_t>(std::llround(report.params_millions * 1e6));
    write_text(out, doc.dump(2) + "\n");
    return 0;
}

int fail(const std::string& code, const std::string& message) {
    std::string line = message;
    for (char& c : line)
        if (c == '\n') c = ' ';
    std::cerr << "error: " << code << ": " << line << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SpectralCA hyperspectral classification toolkit"};
    app.require_subcommand(1);

    std::uint64_t gen_seed = 0;
    std::size_t height = 64, width = 64, bands = 32, classes = 4;
    double noise = 0.05;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "generate a synthetic scene");
    gen->add_option("--seed", gen_seed, "scene seed")->required();
    gen->add_option("--height", height)->check(CLI::PositiveNumber);
    gen->add_option("--width", width)->check(CLI::PositiveNumber);
    gen->add_option("--bands", bands)->check(CLI::PositiveNumber);
    gen->add_option("--classes", classes)->check(CLI::Range(std::size_t{2}, std::size_t{65535}));
    gen->add_option("--noise", noise)->check(CLI::NonNegativeNumber);
    gen->add_option("--out", gen_out, "scene directory")->required();

    std::string data_dir, config_path, train_out;
    auto* trn = app.add_subcommand("train", "train a classifier");
    trn->add_option("--data", data_dir, "scene directory")->required()->check(CLI::ExistingDirectory);
    trn->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    trn->add_option("--out", train_out, "output directory")->required();

    std::string model_path, eval_out = "-";
    std::size_t eval_batch = 128;
    std::vector<double> lambdas;
    double t_ref = 1.0, p_ref = 1.0;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
    ev->add_option("--model", model_path, "checkpoint manifest")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data_dir, "scene directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--out", eval_out, "report path, - for stdout");
    ev->add_option("--batch", eval_batch)->check(CLI::PositiveNumber);
    ev->add_option("--weights", lambdas, "objective weights l1 l2 l3")->expected(3);
    ev->add_option("--t-ref", t_ref, "reference inference seconds");
    ev->add_option("--p-ref", p_ref, "reference parameter count, millions");

    SslConfig ssl;
    std::optional<double> pool_fraction;
    std::string ssl_out;
    auto* sl = app.add_subcommand("ssl", "self-training with confidence-thresholded pseudo-labels");
    sl->add_option("--model", model_path, "checkpoint manifest")->required()->check(CLI::ExistingFile);
    sl->add_option("--data", data_dir, "scene directory")->required()->check(CLI::ExistingDirectory);
    sl->add_option("--tau", ssl.tau, "confidence threshold")->check(CLI::Range(0.0, 1.0));
    sl->add_option("--rounds", ssl.rounds);
    sl->add_option("--cap", ssl.cap, "pseudo-labels added per round at most");
    sl->add_option("--epochs-per-round", ssl.epochs_per_round)->check(CLI::PositiveNumber);
    sl->add_option("--lr", ssl.learning_rate, "retraining learning rate")->check(CLI::NonNegativeNumber);
    sl->add_option("--pool-fraction", pool_fraction, "override the unlabeled pool share of non-train pixels")
        ->check(CLI::Range(0.0, 0.999999));
    sl->add_option("--out", ssl_out, "output directory");

    std::string preset = "cfg32";
    std::optional<std::uint64_t> expect_total;
    bool audit_json = false;
    auto* au = app.add_subcommand("audit", "parameter audit of a SpectralCA preset");
    au->add_option("--preset", preset)->check(CLI::IsMember({"cfg32", "cfg64"}));
    au->add_option("--expect-total", expect_total);
    au->add_flag("--json", audit_json);

    std::uint64_t gc_seed = 0;
    bool gc_skip_cfg32 = false;
    std::string gc_out = "-";
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--seed", gc_seed);
    gc->add_flag("--skip-cfg32", gc_skip_cfg32, "omit the cfg32-width block check");
    gc->add_option("--out", gc_out, "report path, - for stdout");

    std::string block = "spectralca", bench_out = "-";
    std::size_t bench_batch = 8, runs = 10, warmup = kMinWarmup, spatial = 9, bench_bands = 32;
    std::uint64_t bench_seed = 0;
    auto* bn = app.add_subcommand("bench", "inference timing of one block");
    bn->add_option("--block", block)->check(CLI::IsMember({"spectralca", "baseline"}));
    bn->add_option("--preset", preset)->check(CLI::IsMember({"cfg32", "cfg64"}));
    bn->add_option("--batch", bench_batch)->check(CLI::PositiveNumber);
    bn->add_option("--runs", runs);
    bn->add_option("--warmup", warmup);
    bn->add_option("--spatial", spatial)->check(CLI::PositiveNumber);
    bn->add_option("--bands", bench_bands)->check(CLI::PositiveNumber);
    bn->add_option("--seed", bench_seed);
    bn->add_option("--out", bench_out, "report path, - for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("USAGE", e.what());
    }

    try {
        if (*gen) return cmd_gen(gen_seed, height, width, bands, classes, noise, gen_out);
        if (*trn) return cmd_train(data_dir, config_path, train_out);
        if (*ev) return cmd_eval(model_path, data_dir, eval_out, eval_batch, lambdas, t_ref, p_ref);
        if (*sl) return cmd_ssl(model_path, data_dir, ssl, pool_fraction, ssl_out);
        if (*au) return cmd_audit(preset, expect_total, audit_json);
        if (*gc) return cmd_gradcheck(gc_seed, !gc_skip_cfg32, gc_out);
        if (*bn) return cmd_bench(block, preset, bench_batch, spatial, bench_bands, warmup, runs, bench_seed, bench_out);
    } catch (const CliError& e) {
        return fail(e.code, e.what());
    } catch (const DataFormatError& e) {
        return fail("DATA_FORMAT", e.what());
    } catch (const CheckpointError& e) {
        return fail("CHECKPOINT", e.what());
    } catch (const AuditMismatch& e) {
        return fail("AUDIT_MISMATCH", e.what());
    } catch (const ShapeError& e) {
        return fail("SHAPE", e.what());
    } catch (const NonFiniteError& e) {
        return fail("NON_FINITE", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("IO", e.what());
    } catch (const json::exception& e) {
        return fail("CONFIG", e.what());
    } catch (const std::invalid_argument& e) {
        return fail("INVALID_ARGUMENT", e.what());
    } catch (const std::exception& e) {
        return fail("INTERNAL", e.what());
    }
    return fail("USAGE", "no command given");
}
