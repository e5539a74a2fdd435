#include "spectralca/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace spectralca {

namespace fs = std::filesystem;

void Hypercube::validate() const {
    if (height == 0 || width == 0) throw DataFormatError("hypercube: height and width must be >= 1");
    if (bands == 0) throw DataFormatError("hypercube: bands must be >= 1");
    if (values.size() != height * width * bands) throw DataFormatError("hypercube: value count != H*W*D");
    for (float v : values) {
        if (!std::isfinite(v)) throw DataFormatError("hypercube: non-finite value");
    }
}

std::size_t LabelRaster::num_classes() const {
    std::uint16_t mx = 0;
    for (std::uint16_t id : ids) mx = std::max(mx, id);
    return mx;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

std::vector<std::vector<float>> draw_signatures(std::mt19937_64& rng, std::size_t classes, std::size_t bands) {
    const double span = static_cast<double>(bands);
    std::uniform_real_distribution<double> amp(0.3, 1.0);
    std::uniform_real_distribution<double> center(0.0, std::max(span - 1.0, 1e-9));
    std::uniform_real_distribution<double> width(std::max(1.0, span / 12.0), std::max(1.5, span / 5.0));
    std::uniform_int_distribution<int> bumps(2, 3);
    constexpr double kMinRmsGap = 0.1;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<std::vector<float>> sigs(classes, std::vector<float>(bands, 0.1f));
        for (auto& sig : sigs) {
            const int n = bumps(rng);
            for (int k = 0; k < n; ++k) {
                const double a = amp(rng), c = center(rng), w = width(rng);
                for (std::size_t b = 0; b < bands; ++b) {
                    const double z = (static_cast<double>(b) - c) / w;
                    sig[b] += static_cast<float>(a * std::exp(-0.5 * z * z));
                }
            }
        }
        bool distinct = true;
        for (std::size_t i = 0; i < classes && distinct; ++i) {
            for (std::size_t j = i + 1; j < classes && distinct; ++j) {
                double ss = 0;
                for (std::size_t b = 0; b < bands; ++b) ss += std::pow(sigs[i][b] - sigs[j][b], 2.0);
                distinct = std::sqrt(ss / span) >= kMinRmsGap;
            }
        }
        if (distinct) return sigs;
    }
    throw std::invalid_argument("generate_synthetic: could not draw distinct class signatures");
}

}  // namespace

Scene generate_synthetic(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands,
                         std::size_t num_classes, double noise_sigma) {
    const std::size_t pixels = height * width;
    if (pixels == 0 || bands == 0) throw std::invalid_argument("generate_synthetic: empty scene");
    if (num_classes == 0) throw std::invalid_argument("generate_synthetic: need at least one class");
    if (num_classes > pixels) {
        throw std::invalid_argument("generate_synthetic: " + std::to_string(num_classes) + " classes exceed " +
                                    std::to_string(pixels) + " pixels");
    }
    if (num_classes > 65535) throw std::invalid_argument("generate_synthetic: class ids must fit in u16");
    if (noise_sigma < 0.0) throw std::invalid_argument("generate_synthetic: noise_sigma must be >= 0");

    std::mt19937_64 rng(seed);
    const std::size_t sites_per_class = 2 * num_classes <= pixels ? 2 : 1;
    const std::size_t site_count = sites_per_class * num_classes;
    // every class at least 2% of the scene, or its fair share when that is smaller
    const std::size_t min_cover = std::max<std::size_t>(
        1, std::min<std::size_t>(static_cast<std::size_t>(std::ceil(0.02 * static_cast<double>(pixels))),
                                 pixels / num_classes));

    LabelRaster labels{height, width, std::vector<std::uint16_t>(pixels)};
    bool covered = false;
    for (int attempt = 0; attempt < 200 && !covered; ++attempt) {
        std::vector<std::size_t> all(pixels);
        for (std::size_t i = 0; i < pixels; ++i) all[i] = i;
        for (std::size_t i = 0; i < site_count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pixels - 1);
            std::swap(all[i], all[pick(rng)]);
        }
        std::vector<std::size_t> counts(num_classes + 1, 0);
        for (std::size_t p = 0; p < pixels; ++p) {
            const double r = static_cast<double>(p / width), c = static_cast<double>(p % width);
            std::size_t best = 0;
            double best_d = INFINITY;
            for (std::size_t s = 0; s < site_count; ++s) {
                const double dr = r - static_cast<double>(all[s] / width);
                const double dc = c - static_cast<double>(all[s] % width);
                const double dist = dr * dr + dc * dc;
                if (dist < best_d) {
                    best_d = dist;
                    best = s;
                }
            }
            const auto cls = static_cast<std::uint16_t>(best % num_classes + 1);
            labels.ids[p] = cls;
            ++counts[cls];
        }
        covered = std::all_of(counts.begin() + 1, counts.end(), [&](std::size_t n) { return n >= min_cover; });
    }
    if (!covered) throw std::invalid_argument("generate_synthetic: could not give every class enough pixels");

    const auto signatures = draw_signatures(rng, num_classes, bands);
    Hypercube cube;
    cube.height = height;
    cube.width = width;
    cube.bands = bands;
    cube.name = "synthetic-" + std::to_string(seed);
    cube.values.resize(pixels * bands);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t p = 0; p < pixels; ++p) {
        const auto& sig = signatures[labels.ids[p] - 1];
        for (std::size_t b = 0; b < bands; ++b) {
            const double n = noise_sigma > 0.0 ? noise_sigma * noise(rng) : 0.0;
            cube.values[b * pixels + p] = static_cast<float>(sig[b] + n);
        }
    }
    return Scene{std::move(cube), std::move(labels), num_classes};
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::size_t parse_extent(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataFormatError("malformed header: missing key '" + key + "'");
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(it->second, &pos);
    } catch (const std::exception&) {
        throw DataFormatError("malformed header: '" + key + "' is not an integer");
    }
    if (pos != it->second.size()) throw DataFormatError("malformed header: '" + key + "' is not an integer");
    if (v <= 0) throw DataFormatError("header: '" + key + "' must be >= 1, got " + it->second);
    return static_cast<std::size_t>(v);
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataFormatError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataFormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataFormatError("write failed for " + path.string());
}

}  // namespace

void save_cube(const Hypercube& cube, const fs::path& header, const fs::path& data, std::size_t num_classes) {
    cube.validate();
    std::ostringstream h;
    h << "height = " << cube.height << '\n'
      << "width = " << cube.width << '\n'
      << "bands = " << cube.bands << '\n'
      << "dtype = f32le\n"
      << "interleave = bsq\n";
    if (!cube.name.empty()) h << "name = " << cube.name << '\n';
    if (num_classes > 0) h << "classes = " << num_classes << '\n';
    if (!cube.wavelengths.empty()) {
        h << "wavelength = {";
        for (std::size_t i = 0; i < cube.wavelengths.size(); ++i) h << (i ? ", " : "") << cube.wavelengths[i];
        h << "}\n";
    }
    const std::string text = h.str();
    write_file(header, std::vector<char>(text.begin(), text.end()));

    std::vector<char> bytes(cube.values.size() * 4);
    for (std::size_t i = 0; i < cube.values.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(cube.values[i]);
        for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<char>((u >> (8 * k)) & 0xFFu);
    }
    write_file(data, bytes);
}

Hypercube load_cube(const fs::path& header, const fs::path& data) {
    std::ifstream in(header);
    if (!in) throw DataFormatError("cannot open header " + header.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataFormatError("malformed header: line " + std::to_string(lineno) + " has no '='");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    Hypercube cube;
    cube.height = parse_extent(kv, "height");
    cube.width = parse_extent(kv, "width");
    cube.bands = parse_extent(kv, "bands");
    if (kv.count("dtype") == 0 || kv.at("dtype") != "f32le") {
        throw DataFormatError("unsupported dtype '" + (kv.count("dtype") ? kv.at("dtype") : "") + "' (expected f32le)");
    }
    if (kv.count("interleave") == 0 || kv.at("interleave") != "bsq") {
        throw DataFormatError("unsupported interleave '" + (kv.count("interleave") ? kv.at("interleave") : "") +
                              "' (expected bsq)");
    }
    if (kv.count("name")) cube.name = kv.at("name");
    if (kv.count("wavelength")) {
        std::string list = kv.at("wavelength");
        std::replace(list.begin(), list.end(), '{', ' ');
        std::replace(list.begin(), list.end(), '}', ' ');
        std::replace(list.begin(), list.end(), ',', ' ');
        std::istringstream ws(list);
        double w = 0;
        while (ws >> w) cube.wavelengths.push_back(w);
        if (!ws.eof()) throw DataFormatError("malformed header: bad wavelength list");
        if (cube.wavelengths.size() != cube.bands) {
            throw DataFormatError("header: wavelength count != bands");
        }
    }

    const std::vector<char> bytes = read_file(data);
    const std::size_t expected = cube.height * cube.width * cube.bands * 4;
    if (bytes.size() != expected) {
        throw DataFormatError("length mismatch: expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()));
    }
    cube.values.resize(expected / 4);
    for (std::size_t i = 0; i < cube.values.size(); ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + k])) << (8 * k);
        cube.values[i] = std::bit_cast<float>(u);
    }
    cube.validate();
    return cube;
}

void save_labels(const LabelRaster& labels, const fs::path& path) {
    if (labels.ids.size() != labels.height * labels.width) throw DataFormatError("label raster: size != H*W");
    std::vector<char> bytes(labels.ids.size() * 2);
    for (std::size_t i = 0; i < labels.ids.size(); ++i) {
        bytes[2 * i] = static_cast<char>(labels.ids[i] & 0xFFu);
        bytes[2 * i + 1] = static_cast<char>(labels.ids[i] >> 8);
    }
    write_file(path, bytes);
}

LabelRaster load_labels(const fs::path& path, std::size_t height, std::size_t width) {
    const std::vector<char> bytes = read_file(path);
    const std::size_t expected = height * width * 2;
    if (bytes.size() != expected) {
        throw DataFormatError("length mismatch: label raster expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()));
    }
    LabelRaster labels{height, width, std::vector<std::uint16_t>(height * width)};
    for (std::size_t i = 0; i < labels.ids.size(); ++i) {
        labels.ids[i] = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[2 * i]) |
                                                   (static_cast<unsigned char>(bytes[2 * i + 1]) << 8));
    }
    return labels;
}

void save_scene(const Scene& scene, const fs::path& dir) {
    fs::create_directories(dir);
    save_cube(scene.cube, dir / "cube.hdr", dir / "cube.raw", scene.num_classes);
    save_labels(scene.labels, dir / "labels.raw");
}

Scene load_scene(const fs::path& dir) {
    Scene scene;
    scene.cube = load_cube(dir / "cube.hdr", dir / "cube.raw");
    scene.labels = load_labels(dir / "labels.raw", scene.cube.height, scene.cube.width);
    scene.num_classes = scene.labels.num_classes();
    return scene;
}

// ---------------------------------------------------------------------------
// Normalization and patches

void to_json(nlohmann::json& j, const Normalization& n) {
    j = nlohmann::json{{"mean", n.mean}, {"stddev", n.stddev}};
}

void from_json(const nlohmann::json& j, Normalization& n) {
    n.mean = j.at("mean").get<std::vector<float>>();
    n.stddev = j.at("stddev").get<std::vector<float>>();
    if (n.mean.size() != n.stddev.size()) throw DataFormatError("normalization: mean/stddev length mismatch");
}

Normalization fit_normalization(const Hypercube& cube, const std::vector<PixelCoord>& pixels) {
    if (pixels.empty()) throw std::invalid_argument("fit_normalization: no pixels");
    Normalization n;
    n.mean.resize(cube.bands);
    n.stddev.resize(cube.bands);
    const double count = static_cast<double>(pixels.size());
    for (std::size_t b = 0; b < cube.bands; ++b) {
        double sum = 0;
        for (const PixelCoord& p : pixels) sum += cube.at(p.row, p.col, b);
        const double mean = sum / count;
        double ss = 0;
        for (const PixelCoord& p : pixels) ss += std::pow(cube.at(p.row, p.col, b) - mean, 2.0);
        double sd = std::sqrt(ss / count);
        if (sd < 1e-12) sd = 1.0;
        n.mean[b] = static_cast<float>(mean);
        n.stddev[b] = static_cast<float>(sd);
    }
    return n;
}

std::size_t PatchSet::labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const PatchEntry& e) { return e.label != kUnlabeled; }));
}

std::vector<PixelCoord> PatchSet::coords() const {
    std::vector<PixelCoord> out;
    out.reserve(entries.size());
    for (const PatchEntry& e : entries) out.push_back(e.coord);
    return out;
}

void PatchSet::normalize(const Normalization& norm) {
    if (norm.mean.size() != bands) throw std::invalid_argument("normalization band count != patch bands");
    for (PatchEntry& e : entries) {
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            const std::size_t b = i % bands;
            e.values[i] = (e.values[i] - norm.mean[b]) / norm.stddev[b];
        }
    }
    normalization = norm;
}

std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

PatchSet extract_patches(const Hypercube& cube, const LabelRaster& labels, std::size_t patch,
                         const Normalization& normalization) {
    if (patch == 0 || patch % 2 == 0) throw std::invalid_argument("extract_patches: patch size must be odd");
    if (labels.height != cube.height || labels.width != cube.width) {
        throw DataFormatError("extract_patches: label raster " + std::to_string(labels.height) + "x" +
                              std::to_string(labels.width) + " does not match cube " + std::to_string(cube.height) +
                              "x" + std::to_string(cube.width));
    }
    PatchSet set;
    set.patch = patch;
    set.bands = cube.bands;
    set.entries.reserve(cube.height * cube.width);
    const auto half = static_cast<std::ptrdiff_t>(patch / 2);
    for (std::size_t r = 0; r < cube.height; ++r) {
        for (std::size_t c = 0; c < cube.width; ++c) {
            PatchEntry e;
            e.coord = {r, c};
            e.label = labels.at(r, c);
            e.values.resize(patch * patch * cube.bands);
            std::size_t k = 0;
            for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
                const std::size_t rr = mirror_index(static_cast<std::ptrdiff_t>(r) + dr, cube.height);
                for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
                    const std::size_t cc = mirror_index(static_cast<std::ptrdiff_t>(c) + dc, cube.width);
                    for (std::size_t b = 0; b < cube.bands; ++b) e.values[k++] = cube.at(rr, cc, b);
                }
            }
            set.entries.push_back(std::move(e));
        }
    }
    if (!normalization.empty()) set.normalize(normalization);
    return set;
}

Split split(const PatchSet& patches, double train_fraction, std::uint64_t seed, double pool_fraction) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
        throw std::invalid_argument("split: train_fraction must be in (0, 1]");
    }
    if (!(pool_fraction >= 0.0 && pool_fraction < 1.0)) {
        throw std::invalid_argument("split: pool_fraction must be in [0, 1)");
    }
    std::map<std::uint16_t, std::vector<std::size_t>> by_class;
    Split out;
    for (PatchSet* s : {&out.train, &out.test, &out.pool}) {
        s->patch = patches.patch;
        s->bands = patches.bands;
        s->seed = seed;
        s->normalization = patches.normalization;
    }
    std::vector<std::size_t> pool_idx;
    for (std::size_t i = 0; i < patches.entries.size(); ++i) {
        const std::uint16_t label = patches.entries[i].label;
        if (label == kUnlabeled) {
            pool_idx.push_back(i);
        } else {
            by_class[label].push_back(i);
        }
    }
    if (by_class.empty()) throw std::invalid_argument("split: no labeled entries");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train_idx, test_idx;
    for (auto& [label, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n = idx.size();
        const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train_fraction * n)));
        const std::size_t rest = n > n_train ? n - n_train : 0;
        const auto n_pool = static_cast<std::size_t>(std::floor(pool_fraction * static_cast<double>(rest)));
        if (rest - n_pool == 0) {
            throw std::invalid_argument("split: class " + std::to_string(label) +
                                        " has no test sample (test must be non-empty)");
        }
        train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        pool_idx.insert(pool_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                        idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_pool));
        test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_pool), idx.end());
    }
    // raster order inside every subset
    for (auto* v : {&train_idx, &test_idx, &pool_idx}) std::sort(v->begin(), v->end());
    for (std::size_t i : train_idx) out.train.entries.push_back(patches.entries[i]);
    for (std::size_t i : test_idx) out.test.entries.push_back(patches.entries[i]);
    for (std::size_t i : pool_idx) {
        PatchEntry e = patches.entries[i];
        e.label = kUnlabeled;
        out.pool.entries.push_back(std::move(e));
    }
    return out;
}

void to_json(nlohmann::json& j, const DataOptions& o) {
    j = nlohmann::json{{"patch", o.patch},
                       {"train_fraction", o.train_fraction},
                       {"pool_fraction", o.pool_fraction},
                       {"split_seed", o.split_seed}};
}

void from_json(const nlohmann::json& j, DataOptions& o) {
    DataOptions d;
    o.patch = j.value("patch", d.patch);
    o.train_fraction = j.value("train_fraction", d.train_fraction);
    o.pool_fraction = j.value("pool_fraction", d.pool_fraction);
    o.split_seed = j.value("split_seed", d.split_seed);
}

Split prepare_dataset(const Hypercube& cube, const LabelRaster& labels, const DataOptions& options) {
    Split s = split(extract_patches(cube, labels, options.patch), options.train_fraction, options.split_seed,
                    options.pool_fraction);
    const Normalization norm = fit_normalization(cube, s.train.coords());
    s.train.normalize(norm);
    s.test.normalize(norm);
    s.pool.normalize(norm);
    return s;
}

Tensor<float> make_batch(const PatchSet& set, const std::vector<std::size_t>& indices) {
    const std::size_t per = set.patch * set.patch * set.bands;
    Tensor<float> batch({indices.size(), 1, set.patch, set.patch, set.bands});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const PatchEntry& e = set.entries.at(indices[i]);
        if (e.values.size() != per) throw ShapeError("make_batch: patch size mismatch");
        std::copy(e.values.begin(), e.values.end(), batch.ptr() + i * per);
    }
    return batch;
}

std::vector<std::size_t> batch_labels(const PatchSet& set, const std::vector<std::size_t>& indices) {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        const std::uint16_t label = set.entries.at(i).label;
        if (label == kUnlabeled) throw std::invalid_argument("batch_labels: entry has no label");
        out.push_back(label - 1u);
    }
    return out;
}

}  // namespace spectralca
