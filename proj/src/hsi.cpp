#include "densal/hsi.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "densal/error.hpp"

namespace densal {

std::vector<Rgb> default_palette(std::size_t classes) {
    static constexpr Rgb kBase[] = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
        {170, 255, 195},
    };
    std::vector<Rgb> out;
    for (std::size_t c = 0; c < classes; ++c) {
        if (c < std::size(kBase)) {
            out.push_back(kBase[c]);
        } else {
            const auto h = static_cast<std::uint32_t>(c * 2654435761u);
            out.push_back({static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
                           static_cast<std::uint8_t>(h >> 8)});
        }
    }
    return out;
}

std::vector<std::size_t> HsiDataset::labeled_pixels() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < labels.size(); ++p)
        if (labels[p] != 0) out.push_back(p);
    return out;
}

std::vector<std::size_t> HsiDataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (auto l : labels)
        if (l != 0 && l <= counts.size()) ++counts[l - 1];
    return counts;
}

std::vector<float> HsiDataset::spectrum(std::size_t pixel) const {
    std::vector<float> out(bands);
    for (std::size_t b = 0; b < bands; ++b) out[b] = cube[b * height * width + pixel];
    return out;
}

void HsiDataset::validate() const {
    if (height == 0 || width == 0 || bands == 0) throw FormatError("dataset has an empty extent");
    if (cube.size() != height * width * bands)
        throw FormatError("cube holds " + std::to_string(cube.size()) + " values, expected " +
                          std::to_string(height * width * bands));
    if (labels.size() != height * width)
        throw FormatError("label raster holds " + std::to_string(labels.size()) + " values, expected " +
                          std::to_string(height * width));
    if (palette.size() != class_names.size())
        throw FormatError("palette has " + std::to_string(palette.size()) + " entries for " +
                          std::to_string(class_names.size()) + " classes");
    for (std::size_t i = 0; i < cube.size(); ++i) {
        if (!std::isfinite(cube[i])) {
            const std::size_t band = i / (height * width), rest = i % (height * width);
            throw FormatError("non-finite cube value at band " + std::to_string(band) + ", row " +
                              std::to_string(rest / width) + ", col " + std::to_string(rest % width));
        }
    }
    for (std::size_t p = 0; p < labels.size(); ++p) {
        if (labels[p] > num_classes())
            throw FormatError("label " + std::to_string(labels[p]) + " at row " + std::to_string(p / width) +
                              ", col " + std::to_string(p % width) + " exceeds declared class count " +
                              std::to_string(num_classes()));
    }
}

// ---------------------------------------------------------------------------
// HSIC v1

namespace {

constexpr const char* kHsicMagic = "HSIC1";

std::string sanitize_name(const std::string& name) {
    std::string out = name;
    std::replace(out.begin(), out.end(), '\n', ' ');
    return out;
}

}  // namespace

void save_hsic(const HsiDataset& dataset, std::ostream& out) {
    dataset.validate();
    out << kHsicMagic << "\n";
    out << "height " << dataset.height << "\n";
    out << "width " << dataset.width << "\n";
    out << "bands " << dataset.bands << "\n";
    out << "classes " << dataset.num_classes() << "\n";
    out << "dtype float32\n";
    out << "byteorder little\n";
    for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
        const auto& rgb = dataset.palette[c];
        out << "class " << c + 1 << " " << int(rgb.r) << " " << int(rgb.g) << " " << int(rgb.b) << " "
            << sanitize_name(dataset.class_names[c]) << "\n";
    }
    out << "end\n";
    static_assert(std::endian::native == std::endian::little);
    out.write(reinterpret_cast<const char*>(dataset.cube.data()),
              static_cast<std::streamsize>(dataset.cube.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(dataset.labels.data()),
              static_cast<std::streamsize>(dataset.labels.size() * sizeof(std::uint16_t)));
    if (!out) throw std::runtime_error("failed to write HSIC container");
}

void save_hsic(const HsiDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    save_hsic(dataset, out);
}

HsiDataset load_hsic(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kHsicMagic)
        throw FormatError("not an HSIC v1 container (missing HSIC1 magic)");
    HsiDataset ds;
    std::size_t classes = 0;
    bool have_h = false, have_w = false, have_b = false, have_c = false;
    std::vector<bool> seen_class;
    std::size_t line_no = 1;
    while (true) {
        if (!std::getline(in, line)) throw FormatError("HSIC header ended before 'end' line");
        ++line_no;
        if (line == "end") break;
        std::istringstream fields(line);
        std::string key;
        fields >> key;
        auto bad = [&](const std::string& why) {
            return FormatError("HSIC header line " + std::to_string(line_no) + ": " + why + " ('" + line + "')");
        };
        if (key == "height" || key == "width" || key == "bands" || key == "classes") {
            long long v = -1;
            if (!(fields >> v) || v < 0) throw bad("expected a non-negative integer");
            const auto value = static_cast<std::size_t>(v);
            if (key == "height") ds.height = value, have_h = true;
            else if (key == "width") ds.width = value, have_w = true;
            else if (key == "bands") ds.bands = value, have_b = true;
            else {
                classes = value;
                have_c = true;
                ds.class_names.assign(classes, "");
                ds.palette.assign(classes, Rgb{});
                seen_class.assign(classes, false);
            }
        } else if (key == "dtype") {
            std::string v;
            fields >> v;
            if (v != "float32") throw bad("unsupported dtype");
        } else if (key == "byteorder") {
            std::string v;
            fields >> v;
            if (v != "little") throw bad("unsupported byte order");
        } else if (key == "class") {
            if (!have_c) throw bad("class line before 'classes'");
            long long idx = 0;
            int r = 0, g = 0, b = 0;
            if (!(fields >> idx >> r >> g >> b)) throw bad("expected 'class <index> <r> <g> <b> <name>'");
            if (idx < 1 || static_cast<std::size_t>(idx) > classes) throw bad("class index out of range");
            if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) throw bad("color component out of range");
            std::string name;
            std::getline(fields >> std::ws, name);
            ds.class_names[idx - 1] = name;
            ds.palette[idx - 1] = Rgb{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                      static_cast<std::uint8_t>(b)};
            seen_class[idx - 1] = true;
        } else {
            throw bad("unknown header key");
        }
    }
    if (!have_h || !have_w || !have_b || !have_c)
        throw FormatError("HSIC header is missing one of height, width, bands, classes");
    for (std::size_t c = 0; c < classes; ++c)
        if (!seen_class[c]) throw FormatError("HSIC header lacks a class line for class " + std::to_string(c + 1));

    const std::size_t cube_bytes = ds.height * ds.width * ds.bands * sizeof(float);
    const std::size_t label_bytes = ds.height * ds.width * sizeof(std::uint16_t);
    const std::size_t expected = cube_bytes + label_bytes;
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (payload.size() != expected)
        throw FormatError("HSIC payload size mismatch: expected " + std::to_string(expected) +
                          " bytes (cube " + std::to_string(cube_bytes) + " + labels " +
                          std::to_string(label_bytes) + "), found " + std::to_string(payload.size()));
    ds.cube.resize(ds.height * ds.width * ds.bands);
    ds.labels.resize(ds.height * ds.width);
    std::memcpy(ds.cube.data(), payload.data(), cube_bytes);
    std::memcpy(ds.labels.data(), payload.data() + cube_bytes, label_bytes);
    ds.validate();
    return ds;
}

HsiDataset load_hsic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    return load_hsic(in);
}

// ---------------------------------------------------------------------------

HsiDataset normalize(HsiDataset dataset) {
    const std::size_t plane = dataset.height * dataset.width;
    for (std::size_t b = 0; b < dataset.bands; ++b) {
        float* band = dataset.cube.data() + b * plane;
        const auto [lo, hi] = std::minmax_element(band, band + plane);
        const double mn = *lo, mx = *hi;
        if (!(mx > mn)) {
            std::fill(band, band + plane, 0.0f);
            continue;
        }
        for (std::size_t p = 0; p < plane; ++p)
            band[p] = static_cast<float>((static_cast<double>(band[p]) - mn) / (mx - mn));
    }
    return dataset;
}

std::size_t reflect_index(std::ptrdiff_t index, std::size_t extent) {
    if (extent == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (extent - 1));
    std::ptrdiff_t i = index % period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(extent) ? i : period - i);
}

template <typename T>
void extract_patch_into(const HsiDataset& dataset, std::size_t row, std::size_t col, std::size_t m,
                        std::span<T> out) {
    if (row >= dataset.height || col >= dataset.width)
        throw std::out_of_range("extract_patch: pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                                ") outside " + std::to_string(dataset.height) + "x" +
                                std::to_string(dataset.width) + " raster");
    if (m == 0 || m > 2 * std::min(dataset.height, dataset.width))
        throw std::invalid_argument("extract_patch: patch size " + std::to_string(m) +
                                    " exceeds twice the smaller raster extent");
    if (out.size() != dataset.bands * m * m)
        throw std::invalid_argument("extract_patch: output buffer has the wrong size");
    const auto top = static_cast<std::ptrdiff_t>(row) - static_cast<std::ptrdiff_t>(m / 2);
    const auto left = static_cast<std::ptrdiff_t>(col) - static_cast<std::ptrdiff_t>(m / 2);
    std::vector<std::size_t> rows(m), cols(m);
    for (std::size_t i = 0; i < m; ++i) {
        rows[i] = reflect_index(top + static_cast<std::ptrdiff_t>(i), dataset.height);
        cols[i] = reflect_index(left + static_cast<std::ptrdiff_t>(i), dataset.width);
    }
    const std::size_t plane = dataset.height * dataset.width;
    for (std::size_t b = 0; b < dataset.bands; ++b) {
        const float* band = dataset.cube.data() + b * plane;
        for (std::size_t i = 0; i < m; ++i) {
            const float* src = band + rows[i] * dataset.width;
            T* dst = out.data() + (b * m + i) * m;
            for (std::size_t j = 0; j < m; ++j) dst[j] = static_cast<T>(src[cols[j]]);
        }
    }
}

template void extract_patch_into<float>(const HsiDataset&, std::size_t, std::size_t, std::size_t, std::span<float>);
template void extract_patch_into<double>(const HsiDataset&, std::size_t, std::size_t, std::size_t, std::span<double>);

std::vector<float> extract_patch(const HsiDataset& dataset, std::size_t row, std::size_t col, std::size_t m) {
    std::vector<float> out(dataset.bands * m * m);
    extract_patch_into<float>(dataset, row, col, m, out);
    return out;
}

// ---------------------------------------------------------------------------

Splits make_splits(const HsiDataset& dataset, const SplitSpec& spec) {
    if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0))
        throw ConfigError("test_fraction: must lie in [0, 1), got " + std::to_string(spec.test_fraction));
    const std::size_t classes = dataset.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t p = 0; p < dataset.labels.size(); ++p)
        if (dataset.labels[p] != 0) by_class[dataset.labels[p] - 1].push_back(p);
    std::size_t total = 0;
    for (const auto& v : by_class) total += v.size();

    auto describe_counts = [&] {
        std::string s;
        for (std::size_t c = 0; c < classes; ++c)
            s += (c ? ", " : "") + dataset.class_names[c] + "=" + std::to_string(by_class[c].size());
        return s;
    };
    for (std::size_t c = 0; c < classes; ++c)
        if (by_class[c].size() < spec.min_per_class)
            throw ConfigError("split infeasible: class '" + dataset.class_names[c] + "' has " +
                              std::to_string(by_class[c].size()) + " pixels, minimum is " +
                              std::to_string(spec.min_per_class) + " (per-class counts: " + describe_counts() + ")");

    // Largest-remainder allocation of the test quota.
    const auto test_total = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(total)));
    std::vector<std::size_t> quota(classes);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double exact = spec.test_fraction * static_cast<double>(by_class[c].size());
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < test_total && i < remainders.size(); ++i) {
        const auto c = remainders[i].second;
        if (quota[c] < by_class[c].size()) {
            ++quota[c];
            ++assigned;
        }
    }

    if (spec.initial_labeled > total - assigned)
        throw ConfigError("split infeasible: initial_labeled=" + std::to_string(spec.initial_labeled) +
                          " exceeds the " + std::to_string(total - assigned) +
                          " pixels left after the test split (per-class counts: " + describe_counts() + ")");

    std::mt19937_64 rng(spec.seed);
    Splits out;
    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < classes; ++c) {
        auto members = by_class[c];
        std::shuffle(members.begin(), members.end(), rng);
        out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]), members.end());
    }
    std::sort(rest.begin(), rest.end());
    std::shuffle(rest.begin(), rest.end(), rng);
    out.labeled.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(spec.initial_labeled));
    out.pool.assign(rest.begin() + static_cast<std::ptrdiff_t>(spec.initial_labeled), rest.end());
    std::sort(out.labeled.begin(), out.labeled.end());
    std::sort(out.pool.begin(), out.pool.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<float> smooth_signature(std::size_t bands, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double base = 0.2 + 0.3 * unit(rng);
    const double slope = (unit(rng) - 0.5) * 0.4;
    std::vector<double> curve(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        const double x = bands > 1 ? static_cast<double>(b) / static_cast<double>(bands - 1) : 0.0;
        curve[b] = base + slope * x;
    }
    for (int bump = 0; bump < 3; ++bump) {
        const double center = unit(rng);
        const double width = 0.08 + 0.25 * unit(rng);
        const double amplitude = (unit(rng) - 0.3) * 0.6;
        for (std::size_t b = 0; b < bands; ++b) {
            const double x = bands > 1 ? static_cast<double>(b) / static_cast<double>(bands - 1) : 0.0;
            curve[b] += amplitude * std::exp(-0.5 * std::pow((x - center) / width, 2.0));
        }
    }
    std::vector<float> out(bands);
    for (std::size_t b = 0; b < bands; ++b) out[b] = static_cast<float>(std::clamp(curve[b], 0.02, 0.98));
    return out;
}

double rms_distance(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

std::vector<std::vector<float>> draw_signatures(const SynthParams& params, std::mt19937_64& rng) {
    std::vector<std::vector<float>> signatures;
    constexpr int kMaxAttempts = 10000;
    for (std::size_t c = 0; c < params.classes; ++c) {
        std::vector<float> candidate;
        for (int attempt = 0;; ++attempt) {
            candidate = smooth_signature(params.bands, rng);
            bool ok = true;
            for (const auto& other : signatures)
                if (rms_distance(candidate, other) < params.min_separation) ok = false;
            if (ok) break;
            if (attempt == kMaxAttempts)
                throw ConfigError("min_separation: cannot place " + std::to_string(params.classes) +
                                  " signatures that far apart");
        }
        signatures.push_back(std::move(candidate));
    }
    return signatures;
}

}  // namespace

std::vector<std::vector<float>> synth_signatures(const SynthParams& params) {
    std::mt19937_64 rng(params.seed);
    return draw_signatures(params, rng);
}

HsiDataset synth_generate(const SynthParams& params) {
    if (params.classes < 2) throw ConfigError("classes: synthetic scenes need at least 2 classes");
    if (params.bands < 1 || params.height < 1 || params.width < 1)
        throw ConfigError("bands, height and width must be >= 1");
    if (params.classes > std::numeric_limits<std::uint16_t>::max())
        throw ConfigError("classes: too many classes for a uint16 label raster");
    std::mt19937_64 rng(params.seed);
    const auto signatures = draw_signatures(params, rng);

    const std::size_t blobs = std::max(params.blobs, params.classes);
    std::uniform_real_distribution<double> ry(0.0, static_cast<double>(params.height));
    std::uniform_real_distribution<double> rx(0.0, static_cast<double>(params.width));
    std::uniform_int_distribution<std::size_t> rclass(0, params.classes - 1);
    std::vector<std::pair<double, double>> centers(blobs);
    std::vector<std::size_t> blob_class(blobs);
    for (std::size_t i = 0; i < blobs; ++i) {
        centers[i] = {ry(rng), rx(rng)};
        blob_class[i] = i < params.classes ? i : rclass(rng);
    }

    HsiDataset ds;
    ds.height = params.height;
    ds.width = params.width;
    ds.bands = params.bands;
    ds.cube.resize(ds.height * ds.width * ds.bands);
    ds.labels.resize(ds.height * ds.width);
    for (std::size_t c = 0; c < params.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c + 1));
    ds.palette = default_palette(params.classes);

    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t plane = ds.height * ds.width;
    for (std::size_t r = 0; r < ds.height; ++r) {
        for (std::size_t c = 0; c < ds.width; ++c) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < blobs; ++i) {
                const double dy = r + 0.5 - centers[i].first, dx = c + 0.5 - centers[i].second;
                const double d = dy * dy + dx * dx;
                if (d < best_d) best_d = d, best = i;
            }
            const std::size_t cls = blob_class[best];
            const std::size_t p = r * ds.width + c;
            ds.labels[p] = static_cast<std::uint16_t>(cls + 1);
            for (std::size_t b = 0; b < ds.bands; ++b) {
                const double eps = params.noise_sigma > 0 ? params.noise_sigma * noise(rng) : 0.0;
                ds.cube[b * plane + p] = static_cast<float>(signatures[cls][b] + eps);
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------

Interleave parse_interleave(const std::string& name) {
    if (name == "bsq") return Interleave::Bsq;
    if (name == "bil") return Interleave::Bil;
    if (name == "bip") return Interleave::Bip;
    throw ConfigError("interleave: expected bsq, bil or bip, got '" + name + "'");
}

SampleType parse_sample_type(const std::string& name) {
    if (name == "uint8") return SampleType::U8;
    if (name == "int16") return SampleType::I16;
    if (name == "uint16") return SampleType::U16;
    if (name == "int32") return SampleType::I32;
    if (name == "float32") return SampleType::F32;
    if (name == "float64") return SampleType::F64;
    throw ConfigError("dtype: expected uint8, int16, uint16, int32, float32 or float64, got '" + name + "'");
}

namespace {

std::size_t sample_bytes(SampleType t) {
    switch (t) {
        case SampleType::U8: return 1;
        case SampleType::I16:
        case SampleType::U16: return 2;
        case SampleType::I32:
        case SampleType::F32: return 4;
        case SampleType::F64: return 8;
    }
    return 0;
}

double decode_sample(const unsigned char* p, SampleType t, bool big_endian) {
    unsigned char buf[8];
    const std::size_t n = sample_bytes(t);
    for (std::size_t i = 0; i < n; ++i) buf[i] = big_endian ? p[n - 1 - i] : p[i];
    switch (t) {
        case SampleType::U8: return buf[0];
        case SampleType::I16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
        case SampleType::U16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
        case SampleType::I32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
        case SampleType::F32: { float v; std::memcpy(&v, buf, 4); return v; }
        case SampleType::F64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

HsiDataset convert_flat(const std::string& cube_path, const std::string& labels_path,
                        const FlatCubeLayout& layout, std::vector<std::string> class_names) {
    const std::size_t h = layout.height, w = layout.width, nb = layout.bands;
    if (h == 0 || w == 0 || nb == 0) throw ConfigError("height, width and bands must be positive");
    const auto cube_raw = read_file(cube_path);
    const std::size_t cube_sb = sample_bytes(layout.cube_type);
    const std::size_t expected_cube = layout.header_bytes + h * w * nb * cube_sb;
    if (cube_raw.size() != expected_cube)
        throw FormatError("cube file " + cube_path + ": expected " + std::to_string(expected_cube) +
                          " bytes, found " + std::to_string(cube_raw.size()));
    const auto label_raw = read_file(labels_path);
    const std::size_t label_sb = sample_bytes(layout.label_type);
    if (label_raw.size() != h * w * label_sb)
        throw FormatError("label file " + labels_path + ": expected " + std::to_string(h * w * label_sb) +
                          " bytes, found " + std::to_string(label_raw.size()));

    HsiDataset ds;
    ds.height = h;
    ds.width = w;
    ds.bands = nb;
    ds.cube.resize(h * w * nb);
    ds.labels.resize(h * w);
    const unsigned char* base = cube_raw.data() + layout.header_bytes;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t b = 0; b < nb; ++b) {
                std::size_t idx = 0;
                switch (layout.interleave) {
                    case Interleave::Bsq: idx = (b * h + r) * w + c; break;
                    case Interleave::Bil: idx = (r * nb + b) * w + c; break;
                    case Interleave::Bip: idx = (r * w + c) * nb + b; break;
                }
                ds.cube[(b * h + r) * w + c] =
                    static_cast<float>(decode_sample(base + idx * cube_sb, layout.cube_type, layout.big_endian));
            }
    std::size_t max_label = 0;
    for (std::size_t p = 0; p < h * w; ++p) {
        const double v = decode_sample(label_raw.data() + p * label_sb, layout.label_type, layout.big_endian);
        if (v < 0 || v > std::numeric_limits<std::uint16_t>::max() || v != std::floor(v))
            throw FormatError("label at row " + std::to_string(p / w) + ", col " + std::to_string(p % w) +
                              " is not a valid class index");
        ds.labels[p] = static_cast<std::uint16_t>(v);
        max_label = std::max<std::size_t>(max_label, ds.labels[p]);
    }
    if (class_names.empty()) {
        for (std::size_t c = 0; c < max_label; ++c) class_names.push_back("class_" + std::to_string(c + 1));
    }
    ds.class_names = std::move(class_names);
    ds.palette = default_palette(ds.class_names.size());
    ds.validate();
    return ds;
}

}  // namespace densal
