#pragma once

/// Open-Images-style detection manifests: class map, box CSV, image-size
/// sidecar, validation and deterministic train/val/test splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "magiceye/detail/random.hpp"
#include "magiceye/detail/text.hpp"
#include "magiceye/error.hpp"

namespace magiceye::dataset {

class ClassMap {
public:
    ClassMap() = default;

    /// Labels are taken in index order; throws on duplicates or empty names.
    explicit ClassMap(std::vector<std::string> labels) : labels_(std::move(labels)) {
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i].empty())
                throw ValidationError("class map: empty label at index " + std::to_string(i));
            if (!index_.emplace(labels_[i], static_cast<int>(i)).second)
                throw ValidationError("class map: duplicate label '" + labels_[i] + "'");
        }
    }

    std::size_t size() const noexcept { return labels_.size(); }
    bool contains(int index) const noexcept { return index >= 0 && static_cast<std::size_t>(index) < labels_.size(); }
    const std::string& label(int index) const {
        if (!contains(index)) throw ValidationError("class index " + std::to_string(index) + " not in class map");
        return labels_[static_cast<std::size_t>(index)];
    }
    std::optional<int> index_of(const std::string& label) const {
        auto it = index_.find(label);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    bool operator==(const ClassMap& o) const { return labels_ == o.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, int> index_;
};

/// Box in normalized image coordinates.
struct GroundTruthBox {
    int class_index = 0;
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    bool operator==(const GroundTruthBox&) const = default;
};

struct Sample {
    std::string image_id;
    int image_width = 0;
    int image_height = 0;
    std::vector<GroundTruthBox> boxes;

    bool operator==(const Sample&) const = default;
};

struct DatasetManifest {
    std::vector<Sample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    std::size_t box_count() const {
        std::size_t n = 0;
        for (const auto& s : samples) n += s.boxes.size();
        return n;
    }
    bool operator==(const DatasetManifest&) const = default;
};

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct Split {
    DatasetManifest train, val, test;
};

/// Empty string when the box is valid, otherwise the violated rule.
inline std::string box_violation(const GroundTruthBox& b) {
    for (double v : {b.x_min, b.y_min, b.x_max, b.y_max})
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) return "coordinates out of range [0,1]";
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) return "inverted coordinates";
    return {};
}

inline void validate(const SplitSpec& spec) {
    const std::array<double, 3> f{spec.train_fraction, spec.val_fraction, spec.test_fraction};
    for (double v : f)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ValidationError("split fraction out of range [0,1]");
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
}

// Class map file: `index,label_name` per line, indices ascending from 0.
inline ClassMap load_class_map(const std::string& path) {
    const auto lines = detail::read_lines(path);
    std::vector<std::string> labels;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const auto line = detail::trim(lines[ln]);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = detail::split_csv(line);
        int idx = -1;
        if (fields.size() != 2 || !detail::parse_int(fields[0], idx))
            throw ValidationError(path + ":" + std::to_string(ln + 1) + ": expected `index,label_name`");
        if (idx != static_cast<int>(labels.size()))
            throw ValidationError(path + ":" + std::to_string(ln + 1) + ": class indices must be contiguous from 0");
        labels.push_back(fields[1]);
    }
    return ClassMap(std::move(labels));
}

inline std::string format_class_map(const ClassMap& map) {
    std::string out;
    for (std::size_t i = 0; i < map.size(); ++i)
        out += std::to_string(i) + "," + detail::csv_field(map.labels()[i]) + "\n";
    return out;
}

inline constexpr std::string_view kManifestHeader = "ImageID,LabelName,XMin,XMax,YMin,YMax";
inline constexpr std::string_view kSizesHeader = "ImageID,Width,Height";

/// Parses the box CSV and the image-size sidecar. Sample order follows the
/// sidecar; images without any box row are kept with an empty box list.
inline DatasetManifest parse_manifest(const std::vector<std::string>& box_lines,
                                      const std::vector<std::string>& size_lines, const ClassMap& classes,
                                      const std::string& box_name = "manifest",
                                      const std::string& size_name = "sizes") {
    auto where = [](const std::string& name, std::size_t ln) { return name + ":" + std::to_string(ln + 1) + ": "; };

    DatasetManifest manifest;
    std::unordered_map<std::string, std::size_t> by_id;
    bool header_seen = false;
    for (std::size_t ln = 0; ln < size_lines.size(); ++ln) {
        const auto line = detail::trim(size_lines[ln]);
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kSizesHeader) throw ValidationError(where(size_name, ln) + "expected header `" + std::string(kSizesHeader) + "`");
            header_seen = true;
            continue;
        }
        const auto f = detail::split_csv(line);
        Sample s;
        if (f.size() != 3 || f[0].empty() || !detail::parse_int(f[1], s.image_width) ||
            !detail::parse_int(f[2], s.image_height))
            throw ValidationError(where(size_name, ln) + "malformed row");
        if (s.image_width <= 0 || s.image_height <= 0)
            throw ValidationError(where(size_name, ln) + "image dimensions must be positive");
        s.image_id = f[0];
        if (!by_id.emplace(s.image_id, manifest.samples.size()).second)
            throw ValidationError(where(size_name, ln) + "duplicate image id '" + s.image_id + "'");
        manifest.samples.push_back(std::move(s));
    }
    if (!header_seen) throw ValidationError(size_name + ": missing header");

    header_seen = false;
    for (std::size_t ln = 0; ln < box_lines.size(); ++ln) {
        const auto line = detail::trim(box_lines[ln]);
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kManifestHeader)
                throw ValidationError(where(box_name, ln) + "expected header `" + std::string(kManifestHeader) + "`");
            header_seen = true;
            continue;
        }
        const auto f = detail::split_csv(line);
        if (f.size() != 6) throw ValidationError(where(box_name, ln) + "malformed row: expected 6 fields");
        const auto cls = classes.index_of(f[1]);
        if (!cls) throw ValidationError(where(box_name, ln) + "unknown label '" + f[1] + "'");
        GroundTruthBox b{*cls, 0, 0, 0, 0};
        if (!detail::parse_double(f[2], b.x_min) || !detail::parse_double(f[3], b.x_max) ||
            !detail::parse_double(f[4], b.y_min) || !detail::parse_double(f[5], b.y_max))
            throw ValidationError(where(box_name, ln) + "malformed row: non-numeric coordinate");
        if (auto why = box_violation(b); !why.empty()) throw ValidationError(where(box_name, ln) + why);
        auto it = by_id.find(f[0]);
        if (it == by_id.end()) throw ValidationError(where(box_name, ln) + "no image size for '" + f[0] + "'");
        manifest.samples[it->second].boxes.push_back(b);
    }
    if (!header_seen) throw ValidationError(box_name + ": missing header");
    return manifest;
}

inline DatasetManifest load_manifest(const std::string& boxes_csv, const std::string& sizes_csv,
                                     const ClassMap& classes) {
    return parse_manifest(detail::read_lines(boxes_csv), detail::read_lines(sizes_csv), classes, boxes_csv,
                          sizes_csv);
}

inline std::string format_manifest_boxes(const DatasetManifest& m, const ClassMap& classes) {
    std::string out(kManifestHeader);
    out += "\n";
    for (const auto& s : m.samples)
        for (const auto& b : s.boxes) {
            out += detail::csv_field(s.image_id) + "," + detail::csv_field(classes.label(b.class_index)) + ",";
            out += detail::format_double(b.x_min) + "," + detail::format_double(b.x_max) + ",";
            out += detail::format_double(b.y_min) + "," + detail::format_double(b.y_max) + "\n";
        }
    return out;
}

inline std::string format_manifest_sizes(const DatasetManifest& m) {
    std::string out(kSizesHeader);
    out += "\n";
    for (const auto& s : m.samples)
        out += detail::csv_field(s.image_id) + "," + std::to_string(s.image_width) + "," +
               std::to_string(s.image_height) + "\n";
    return out;
}

inline void write_manifest(const DatasetManifest& m, const ClassMap& classes, const std::string& boxes_csv,
                           const std::string& sizes_csv) {
    detail::write_file(boxes_csv, format_manifest_boxes(m, classes));
    detail::write_file(sizes_csv, format_manifest_sizes(m));
}

/// Per-split counts by largest-remainder rounding; ties go to the earlier split.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
    const std::array<double, 3> f{spec.train_fraction, spec.val_fraction, spec.test_fraction};
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = f[i] * static_cast<double>(n);
        const double whole = std::floor(exact + 1e-9);
        count[i] = static_cast<std::size_t>(whole);
        rem[i] = std::max(0.0, exact - whole);
        assigned += count[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++count[order[k]];
    return count;
}

inline Split split_dataset(const DatasetManifest& manifest, const SplitSpec& spec) {
    if (manifest.empty()) throw ValidationError("cannot split an empty manifest");
    validate(spec);
    std::vector<std::size_t> idx(manifest.size());
    std::iota(idx.begin(), idx.end(), 0);
    detail::portable_shuffle(idx, spec.seed);
    const auto sizes = split_sizes(manifest.size(), spec);

    Split out;
    std::size_t pos = 0;
    DatasetManifest* parts[3] = {&out.train, &out.val, &out.test};
    for (int p = 0; p < 3; ++p) {
        // Keep the original relative order inside each part.
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                       idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[p]));
        std::sort(chunk.begin(), chunk.end());
        for (auto i : chunk) parts[p]->samples.push_back(manifest.samples[i]);
        pos += sizes[p];
    }
    return out;
}

/// Number of boxes per class index.
inline std::map<int, std::size_t> class_histogram(const DatasetManifest& m) {
    std::map<int, std::size_t> h;
    for (const auto& s : m.samples)
        for (const auto& b : s.boxes) ++h[b.class_index];
    return h;
}

} // namespace magiceye::dataset
