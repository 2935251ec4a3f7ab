#pragma once

// Hyperspectral scenes: storage, the HSIC v1 container, preprocessing, patch
// extraction, train/pool/test splits and synthetic scene generation.
//
// HSIC v1 layout:
//
//   HSIC1\n
//   height <H>\n width <W>\n bands <b>\n classes <C>\n
//   dtype float32\n byteorder little\n
//   class <index> <r> <g> <b> <name>\n      (one line per class, index 1..C)
//   end\n
//   <cube: b*H*W float32 little-endian, band-sequential>
//   <labels: H*W uint16 little-endian, row-major, 0 = unlabeled>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace densal {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

std::vector<Rgb> default_palette(std::size_t classes);

struct HsiDataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<float> cube;             // [band][row][col]
    std::vector<std::uint16_t> labels;   // [row][col], 0 = unlabeled, 1..C classes
    std::vector<std::string> class_names;
    std::vector<Rgb> palette;            // one per class

    std::size_t num_classes() const { return class_names.size(); }
    std::size_t pixels() const { return height * width; }
    float at(std::size_t band, std::size_t row, std::size_t col) const {
        return cube[(band * height + row) * width + col];
    }
    // Zero-based class of a labeled pixel; -1 when unlabeled.
    int class_of(std::size_t pixel) const { return static_cast<int>(labels[pixel]) - 1; }
    // Flat indices (row * width + col) of every labeled pixel, ascending.
    std::vector<std::size_t> labeled_pixels() const;
    std::vector<std::size_t> class_counts() const;
    std::vector<float> spectrum(std::size_t pixel) const;

    // Throws FormatError with the offending location.
    void validate() const;
};

void save_hsic(const HsiDataset& dataset, std::ostream& out);
void save_hsic(const HsiDataset& dataset, const std::string& path);
HsiDataset load_hsic(std::istream& in);
HsiDataset load_hsic(const std::string& path);

// Per-band min-max scaling to [0,1]; constant bands become all zeros.
HsiDataset normalize(HsiDataset dataset);

// Mirror index (reflect without repeating the edge) into [0, extent).
std::size_t reflect_index(std::ptrdiff_t index, std::size_t extent);

// b x m x m patch centered at (row, col): rows row - m/2 .. row - m/2 + m - 1.
// Out-of-raster positions are mirrored. Throws if m > 2 * min(H, W).
std::vector<float> extract_patch(const HsiDataset& dataset, std::size_t row, std::size_t col,
                                 std::size_t m);
template <typename T>
void extract_patch_into(const HsiDataset& dataset, std::size_t row, std::size_t col, std::size_t m,
                        std::span<T> out);

struct SplitSpec {
    std::uint64_t seed = 0;
    std::size_t initial_labeled = 160;
    double test_fraction = 0.2;
    // Each class must own at least this many ground-truth pixels.
    std::size_t min_per_class = 1;
};

struct Splits {
    std::vector<std::size_t> labeled;  // ascending pixel indices
    std::vector<std::size_t> pool;
    std::vector<std::size_t> test;
};

// Stratified test split of round(test_fraction * N) pixels (largest-remainder
// allocation per class), then initial_labeled pixels drawn uniformly from the
// rest. Throws ConfigError with per-class counts when infeasible.
Splits make_splits(const HsiDataset& dataset, const SplitSpec& spec);

struct SynthParams {
    std::size_t classes = 4;
    std::size_t bands = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t blobs = 12;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
    // Minimum RMS distance between any two class signatures.
    double min_separation = 0.2;
};

// Voronoi blob layout with one smooth spectral signature per class plus
// Gaussian noise; every pixel is labeled.
HsiDataset synth_generate(const SynthParams& params);
// Signatures synth_generate would use for these parameters, [class][band].
std::vector<std::vector<float>> synth_signatures(const SynthParams& params);

enum class Interleave { Bsq, Bil, Bip };
enum class SampleType { U8, I16, U16, I32, F32, F64 };

struct FlatCubeLayout {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    Interleave interleave = Interleave::Bsq;
    SampleType cube_type = SampleType::F32;
    SampleType label_type = SampleType::U8;
    bool big_endian = false;
    std::size_t header_bytes = 0;  // skipped at the start of the cube file
};

Interleave parse_interleave(const std::string& name);
SampleType parse_sample_type(const std::string& name);

// Builds a dataset from a raw cube file and a raw row-major label raster.
// Class count is the largest label unless names are supplied.
HsiDataset convert_flat(const std::string& cube_path, const std::string& labels_path,
                        const FlatCubeLayout& layout, std::vector<std::string> class_names = {});

}  // namespace densal
