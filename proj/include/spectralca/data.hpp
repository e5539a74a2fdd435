#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectralca/tensor.hpp"

namespace spectralca {

/// H x W x D reflectance cube stored band-sequential:
/// values[(band * height + row) * width + col].
struct Hypercube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<float> values;
    std::string name;
    std::vector<double> wavelengths;

    float at(std::size_t row, std::size_t col, std::size_t band) const {
        return values[(band * height + row) * width + col];
    }
    float& at(std::size_t row, std::size_t col, std::size_t band) { return values[(band * height + row) * width + col]; }
    void validate() const;
};

/// Per-pixel class ids, row-major; 0 = unlabeled, 1..num_classes otherwise.
struct LabelRaster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint16_t> ids;

    std::uint16_t at(std::size_t row, std::size_t col) const { return ids[row * width + col]; }
    std::size_t num_classes() const;
};

struct Scene {
    Hypercube cube;
    LabelRaster labels;
    std::size_t num_classes = 0;
};

/// Raised for malformed or inconsistent cube / raster files.
class DataFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Voronoi-style synthetic scene: every region carries one class, every class
/// a smooth spectral signature (2-3 Gaussian bumps over the band index), plus
/// white noise of standard deviation `noise_sigma`. Deterministic in `seed`.
Scene generate_synthetic(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands,
                         std::size_t num_classes, double noise_sigma);

/// Header: UTF-8 "key = value" lines with height, width, bands,
/// dtype = f32le, interleave = bsq; optional name, classes, wavelength = {...}.
void save_cube(const Hypercube& cube, const std::filesystem::path& header, const std::filesystem::path& data,
               std::size_t num_classes = 0);
Hypercube load_cube(const std::filesystem::path& header, const std::filesystem::path& data);

/// Raw little-endian u16, H*W values, row-major.
void save_labels(const LabelRaster& labels, const std::filesystem::path& path);
LabelRaster load_labels(const std::filesystem::path& path, std::size_t height, std::size_t width);

/// Scene directory layout: cube.hdr, cube.raw, labels.raw.
void save_scene(const Scene& scene, const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dir);

/// Per-band standardization statistics.
struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;

    bool empty() const { return mean.empty(); }
    bool operator==(const Normalization&) const = default;
};

void to_json(nlohmann::json& j, const Normalization& n);
void from_json(const nlohmann::json& j, Normalization& n);

struct PixelCoord {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const PixelCoord&) const = default;
    auto operator<=>(const PixelCoord&) const = default;
};

/// Mean and population standard deviation per band over the given pixels.
Normalization fit_normalization(const Hypercube& cube, const std::vector<PixelCoord>& pixels);

inline constexpr std::uint16_t kUnlabeled = 0;

struct PatchEntry {
    PixelCoord coord;
    std::uint16_t label = kUnlabeled;  // 1-based class id
    bool pseudo = false;               // label came from a model prediction
    std::vector<float> values;         // [1, p, p, D] row-major: (row, col, band)
};

struct PatchSet {
    std::size_t patch = 0;
    std::size_t bands = 0;
    std::uint64_t seed = 0;
    Normalization normalization;
    std::vector<PatchEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    std::size_t labeled_count() const;
    std::vector<PixelCoord> coords() const;
    /// Standardizes every band of every patch in place and records the statistics.
    void normalize(const Normalization& norm);
};

/// Reflect-101 index into [0, n): -1 -> 1, n -> n - 2.
std::size_t mirror_index(std::ptrdiff_t i, std::size_t n);

/// One entry per pixel in raster order, p x p window centered on the pixel
/// with mirrored borders. A non-empty normalization is applied per band.
PatchSet extract_patches(const Hypercube& cube, const LabelRaster& labels, std::size_t patch,
                         const Normalization& normalization = {});

struct Split {
    PatchSet train;
    PatchSet test;
    PatchSet pool;  // unlabeled entries plus `pool_fraction` of non-train labeled entries, labels withheld
};

/// Stratified split. Per class: max(1, round(train_fraction * n)) train
/// samples; of the rest, floor(pool_fraction * rest) go to the unlabeled pool
/// and the remainder to test. Every class needs >= 1 train and >= 1 test entry.
Split split(const PatchSet& patches, double train_fraction, std::uint64_t seed, double pool_fraction = 0.0);

struct DataOptions {
    std::size_t patch = 9;
    double train_fraction = 0.1;
    double pool_fraction = 0.0;
    std::uint64_t split_seed = 0;

    bool operator==(const DataOptions&) const = default;
};

void to_json(nlohmann::json& j, const DataOptions& o);
void from_json(const nlohmann::json& j, DataOptions& o);

/// extract -> split -> fit normalization on the training pixels -> normalize all sets.
Split prepare_dataset(const Hypercube& cube, const LabelRaster& labels, const DataOptions& options);

/// Stacks entries into [B, 1, p, p, D] and 0-based labels (unlabeled -> 0).
Tensor<float> make_batch(const PatchSet& set, const std::vector<std::size_t>& indices);
std::vector<std::size_t> batch_labels(const PatchSet& set, const std::vector<std::size_t>& indices);

}  // namespace spectralca
