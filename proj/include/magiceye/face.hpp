#pragma once

/// Face identity matching: two embedding backends, cosine similarity,
/// fused best-match scoring, durable enrollment and a pluggable face
/// detector stage.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "magiceye/detail/text.hpp"
#include "magiceye/detect.hpp"
#include "magiceye/error.hpp"

namespace magiceye::face {

inline constexpr double kMinNorm = 1e-9;
inline constexpr double kDefaultMatchThreshold = 0.5;

/// (a . b) / (|a| |b|). Throws on dimension mismatch or a (near) zero vector.
template <typename A, typename B>
double cosine_similarity(std::span<const A> a, std::span<const B> b) {
    if (a.size() != b.size())
        throw ValidationError("cosine similarity: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (!(na > kMinNorm) || !(nb > kMinNorm)) throw ValidationError("cosine similarity: zero-norm vector");
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

template <typename A, typename B>
double cosine_similarity(const std::vector<A>& a, const std::vector<B>& b) {
    return cosine_similarity(std::span<const A>(a), std::span<const B>(b));
}

using Vector = std::vector<float>;

struct BackendSpec {
    std::string id;
    std::size_t dimension = 0;
};

/// The two embedding backends whose scores are fused.
struct BackendPair {
    std::array<BackendSpec, 2> backends{BackendSpec{"facenet", 128}, BackendSpec{"vggface", 2622}};

    std::optional<std::size_t> slot(const std::string& id) const {
        for (std::size_t i = 0; i < backends.size(); ++i)
            if (backends[i].id == id) return i;
        return std::nullopt;
    }
};

/// Embeddings keyed by backend id.
using EmbeddingSet = std::map<std::string, std::vector<Vector>>;

struct FaceRecord {
    std::string person_id;
    std::array<std::vector<Vector>, 2> embeddings;  // per backend slot
    std::int64_t enrolled_at = 0;                   // ms
};

struct FaceAttributes {
    std::string gender, race, age_bracket, expression;
    bool operator==(const FaceAttributes&) const = default;
};

/// Probe embeddings for one face, one vector per backend.
struct FaceProbe {
    std::map<std::string, Vector> embeddings;
    std::optional<FaceAttributes> attributes;
};

struct MatchResult {
    std::optional<std::string> person_id;  // nullopt: no match
    double fused_score = -1.0;             // best candidate's fused score, -1 when registry empty
    std::optional<std::string> best_candidate;
    std::map<std::string, double> per_backend_scores;
    std::optional<FaceAttributes> attributes;

    bool matched() const noexcept { return person_id.has_value(); }
};

inline bool valid_person_id(const std::string& id) {
    return !id.empty() && id.find_first_of("|\r\n") == std::string::npos;
}

inline double norm(const Vector& v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Base64 of little-endian float32 vectors

namespace detail {

inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::span<const std::uint8_t> in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t n = (std::uint32_t{in[i]} << 16) | (std::uint32_t{in[i + 1]} << 8) | in[i + 2];
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += kB64[n & 63];
    }
    if (const std::size_t rest = in.size() - i; rest > 0) {
        std::uint32_t n = std::uint32_t{in[i]} << 16;
        if (rest == 2) n |= std::uint32_t{in[i + 1]} << 8;
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += rest == 2 ? kB64[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (in.size() % 4 != 0) throw ValidationError("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + static_cast<std::size_t>(k)];
            if (c == '=' && i + 4 == in.size() && k >= 2) {
                v[k] = 0;
                ++pad;
            } else {
                if (pad > 0 || (v[k] = val(c)) < 0) throw ValidationError("base64: invalid character");
            }
        }
        const std::uint32_t n = (std::uint32_t(v[0]) << 18) | (std::uint32_t(v[1]) << 12) | (std::uint32_t(v[2]) << 6) |
                                std::uint32_t(v[3]);
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
}

} // namespace detail

inline std::string encode_vector(const Vector& v) {
    std::vector<std::uint8_t> bytes(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(v[i]);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(u >> (8 * b));
    }
    return detail::base64_encode(bytes);
}

inline Vector decode_vector(std::string_view text) {
    const auto bytes = detail::base64_decode(text);
    if (bytes.size() % 4 != 0) throw ValidationError("embedding payload is not a whole number of float32 values");
    Vector v(bytes.size() / 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t{bytes[i * 4 + static_cast<std::size_t>(b)]} << (8 * b);
        v[i] = std::bit_cast<float>(u);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Registry

/// Enrolled identities. Enrollment takes an exclusive lock; identify takes a
/// shared lock and may run concurrently with other identifies.
class FaceRegistry {
public:
    explicit FaceRegistry(BackendPair backends = {}) : backends_(std::move(backends)) {
        if (backends_.backends[0].id == backends_.backends[1].id) throw ValidationError("backend ids must differ");
        for (const auto& b : backends_.backends)
            if (b.id.empty() || b.dimension == 0 || b.id.find('|') != std::string::npos)
                throw ValidationError("backend needs a non-empty id and positive dimension");
    }
    FaceRegistry(const FaceRegistry& o) {
        std::shared_lock lock(o.mu_);
        backends_ = o.backends_;
        records_ = o.records_;
    }
    FaceRegistry& operator=(const FaceRegistry& o) {
        if (this != &o) {
            std::scoped_lock lock(mu_, o.mu_);
            backends_ = o.backends_;
            records_ = o.records_;
        }
        return *this;
    }

    const BackendPair& backends() const noexcept { return backends_; }
    std::size_t size() const {
        std::shared_lock lock(mu_);
        return records_.size();
    }
    std::optional<FaceRecord> find(const std::string& person_id) const {
        std::shared_lock lock(mu_);
        auto it = records_.find(person_id);
        if (it == records_.end()) return std::nullopt;
        return it->second;
    }
    std::vector<std::string> people() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> ids;
        for (const auto& [id, r] : records_) ids.push_back(id);
        return ids;
    }

    /// Adds embeddings for `person_id`; an existing person gets them appended.
    /// Both backends must be covered by at least one embedding.
    void enroll(const std::string& person_id, const EmbeddingSet& embeddings, std::int64_t timestamp_ms = 0) {
        auto slotted = validate_enrollment(person_id, embeddings);
        std::unique_lock lock(mu_);
        auto [it, inserted] = records_.try_emplace(person_id);
        if (inserted) {
            it->second.person_id = person_id;
            it->second.enrolled_at = timestamp_ms;
        }
        for (std::size_t s = 0; s < 2; ++s)
            for (auto& v : slotted[s]) it->second.embeddings[s].push_back(std::move(v));
    }

    /// Best cosine per backend for each person, fused by their mean; the top
    /// fused score wins with ties going to the smaller person_id.
    MatchResult identify(const FaceProbe& probe, double threshold = kDefaultMatchThreshold) const {
        std::array<const Vector*, 2> pv{};
        for (std::size_t s = 0; s < 2; ++s) {
            const auto& spec = backends_.backends[s];
            auto it = probe.embeddings.find(spec.id);
            if (it == probe.embeddings.end()) throw ValidationError("probe lacks backend '" + spec.id + "'");
            if (it->second.size() != spec.dimension)
                throw ValidationError("probe dimension mismatch for backend '" + spec.id + "'");
            pv[s] = &it->second;
        }
        MatchResult res;
        res.attributes = probe.attributes;
        std::shared_lock lock(mu_);
        for (const auto& [id, rec] : records_) {
            std::array<double, 2> best{-1.0, -1.0};
            for (std::size_t s = 0; s < 2; ++s)
                for (const auto& e : rec.embeddings[s]) best[s] = std::max(best[s], cosine_similarity(*pv[s], e));
            const double fused = 0.5 * (best[0] + best[1]);
            if (!res.best_candidate || fused > res.fused_score) {
                res.best_candidate = id;
                res.fused_score = fused;
                res.per_backend_scores = {{backends_.backends[0].id, best[0]}, {backends_.backends[1].id, best[1]}};
            }
        }
        if (res.best_candidate && res.fused_score >= threshold) res.person_id = res.best_candidate;
        return res;
    }

    // -- persistence -------------------------------------------------------
    //
    // FACEREG v1|<dim backend 1>|<dim backend 2>
    // <person_id>|<backend_id>|<base64 float32 LE vector>

    std::string header_line() const {
        return "FACEREG v1|" + std::to_string(backends_.backends[0].dimension) + "|" +
               std::to_string(backends_.backends[1].dimension);
    }

    static std::vector<std::string> record_lines(const std::string& person_id, const BackendPair& backends,
                                                 const EmbeddingSet& embeddings) {
        std::vector<std::string> lines;
        for (const auto& spec : backends.backends) {
            auto it = embeddings.find(spec.id);
            if (it == embeddings.end()) continue;
            for (const auto& v : it->second) lines.push_back(person_id + "|" + spec.id + "|" + encode_vector(v));
        }
        return lines;
    }

    std::string serialize() const {
        std::shared_lock lock(mu_);
        std::string out = header_line() + "\n";
        for (const auto& [id, rec] : records_) {
            EmbeddingSet set;
            for (std::size_t s = 0; s < 2; ++s) set[backends_.backends[s].id] = rec.embeddings[s];
            for (const auto& l : record_lines(id, backends_, set)) out += l + "\n";
        }
        return out;
    }

    /// Parses a registry file. Records for the same person accumulate; every
    /// person must end up covering both backends.
    static FaceRegistry parse(const std::vector<std::string>& lines, const std::array<std::string, 2>& backend_ids) {
        std::size_t ln = 0;
        while (ln < lines.size() && detail_trim(lines[ln]).empty()) ++ln;
        if (ln == lines.size()) throw ValidationError("registry: missing header");
        const auto head = magiceye::detail::split(detail_trim(lines[ln]), '|');
        std::size_t d0 = 0, d1 = 0;
        if (head.size() != 3 || head[0] != "FACEREG v1" || !magiceye::detail::parse_int(head[1], d0) ||
            !magiceye::detail::parse_int(head[2], d1))
            throw ValidationError("registry: bad header, expected `FACEREG v1|dim1|dim2`");
        BackendPair pair;
        pair.backends = {BackendSpec{backend_ids[0], d0}, BackendSpec{backend_ids[1], d1}};
        FaceRegistry reg(pair);
        for (++ln; ln < lines.size(); ++ln) {
            if (detail_trim(lines[ln]).empty()) continue;
            const auto f = magiceye::detail::split(detail_trim(lines[ln]), '|');
            const std::string where = "registry line " + std::to_string(ln + 1) + ": ";
            if (f.size() != 3) throw ValidationError(where + "expected `person_id|backend_id|base64`");
            const auto slot = pair.slot(f[1]);
            if (!slot) throw ValidationError(where + "unknown backend '" + f[1] + "'");
            auto v = decode_vector(f[2]);
            if (v.size() != pair.backends[*slot].dimension) throw ValidationError(where + "dimension mismatch");
            if (!(norm(v) > kMinNorm)) throw ValidationError(where + "zero-norm embedding");
            if (!valid_person_id(f[0])) throw ValidationError(where + "invalid person id");
            auto [it, inserted] = reg.records_.try_emplace(f[0]);
            it->second.person_id = f[0];
            it->second.embeddings[*slot].push_back(std::move(v));
        }
        for (const auto& [id, rec] : reg.records_)
            if (rec.embeddings[0].empty() || rec.embeddings[1].empty())
                throw ValidationError("registry: person '" + id + "' lacks backend coverage");
        return reg;
    }

    static FaceRegistry load(const std::string& path, const std::array<std::string, 2>& backend_ids) {
        return parse(magiceye::detail::read_lines(path), backend_ids);
    }

    void save(const std::string& path) const { magiceye::detail::write_file(path, serialize()); }

    /// Enrolls and appends the new records to `path`, writing the header first
    /// when the file is new or empty.
    void enroll_and_append(const std::string& path, const std::string& person_id, const EmbeddingSet& embeddings,
                           std::int64_t timestamp_ms = 0) {
        enroll(person_id, embeddings, timestamp_ms);
        bool fresh = true;
        {
            std::ifstream probe(path);
            fresh = !probe || probe.peek() == std::ifstream::traits_type::eof();
        }
        std::ofstream out(path, std::ios::app | std::ios::binary);
        if (!out) throw IoError("cannot append to registry '" + path + "'");
        if (fresh) out << header_line() << "\n";
        for (const auto& l : record_lines(person_id, backends_, embeddings)) out << l << "\n";
        if (!out) throw IoError("write failed for registry '" + path + "'");
    }

private:
    static std::string_view detail_trim(std::string_view s) { return magiceye::detail::trim(s); }

    std::array<std::vector<Vector>, 2> validate_enrollment(const std::string& person_id,
                                                           const EmbeddingSet& embeddings) const {
        if (!valid_person_id(person_id)) throw ValidationError("person id must be non-empty and free of '|'");
        std::array<std::vector<Vector>, 2> slotted;
        for (const auto& [id, list] : embeddings) {
            const auto slot = backends_.slot(id);
            if (!slot) throw ValidationError("unknown backend '" + id + "'");
            for (const auto& v : list) {
                if (v.size() != backends_.backends[*slot].dimension)
                    throw ValidationError("embedding dimension mismatch for backend '" + id + "'");
                for (float x : v)
                    if (!std::isfinite(x)) throw ValidationError("non-finite embedding value");
                if (!(norm(v) > kMinNorm)) throw ValidationError("zero-norm embedding");
                slotted[*slot].push_back(v);
            }
        }
        if (slotted[0].empty() || slotted[1].empty())
            throw ValidationError("backend coverage: enrollment needs at least one embedding per backend");
        return slotted;
    }

    BackendPair backends_;
    std::map<std::string, FaceRecord> records_;
    mutable std::shared_mutex mu_;
};

// ---------------------------------------------------------------------------
// Face detector stage

struct Point {
    double x = 0, y = 0;
};

struct FaceCrop {
    detect::Box box;               // frame pixels
    std::vector<Point> landmarks;  // eyes, nose, mouth corners, ...
    bool clipped = false;          // box or landmarks were pulled back inside the frame
};

struct FaceDetection {
    int frame_width = 0;
    int frame_height = 0;
    std::vector<FaceCrop> crops;
};

class FaceDetectorBackend {
public:
    virtual ~FaceDetectorBackend() = default;
    virtual FaceDetection detect(const std::string& image_ref) = 0;
};

/// Returns scripted crops per image reference, in scripted order.
class ScriptedFaceDetector final : public FaceDetectorBackend {
public:
    void script(const std::string& image_ref, FaceDetection result) { scripted_[image_ref] = std::move(result); }
    FaceDetection detect(const std::string& image_ref) override {
        auto it = scripted_.find(image_ref);
        if (it == scripted_.end()) return {};
        return it->second;
    }

private:
    std::map<std::string, FaceDetection> scripted_;
};

/// Runs the detector backend and clips its crops to the frame, flagging any
/// crop that needed clipping. Crops with no area left inside are dropped.
inline std::vector<FaceCrop> detect_faces(const std::string& image_ref, FaceDetectorBackend* backend) {
    if (!backend) throw BackendError("face detector backend unavailable");
    auto result = backend->detect(image_ref);
    std::vector<FaceCrop> out;
    if (result.crops.empty()) return out;
    if (result.frame_width <= 0 || result.frame_height <= 0)
        throw BackendError("face detector returned crops without a frame size");
    const double W = result.frame_width, H = result.frame_height;
    for (auto c : result.crops) {
        const auto orig = c.box;
        c.box.x_min = std::clamp(c.box.x_min, 0.0, W);
        c.box.x_max = std::clamp(c.box.x_max, 0.0, W);
        c.box.y_min = std::clamp(c.box.y_min, 0.0, H);
        c.box.y_max = std::clamp(c.box.y_max, 0.0, H);
        bool clipped = !(c.box == orig);
        for (auto& p : c.landmarks) {
            const Point q{std::clamp(p.x, 0.0, W), std::clamp(p.y, 0.0, H)};
            clipped = clipped || q.x != p.x || q.y != p.y;
            p = q;
        }
        c.clipped = c.clipped || clipped;
        if (c.box.valid()) out.push_back(std::move(c));
    }
    return out;
}

/// Produces one embedding per backend for a face crop.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual FaceProbe embed(const std::string& image_ref, std::size_t crop_index, const FaceCrop& crop) = 0;
};

/// Scripted probes keyed by (image_ref, crop index).
class ScriptedEmbedder final : public EmbeddingBackend {
public:
    void script(const std::string& image_ref, std::size_t crop_index, FaceProbe probe) {
        scripted_[{image_ref, crop_index}] = std::move(probe);
    }
    FaceProbe embed(const std::string& image_ref, std::size_t crop_index, const FaceCrop&) override {
        auto it = scripted_.find({image_ref, crop_index});
        if (it == scripted_.end())
            throw BackendError("no scripted embedding for " + image_ref + "#" + std::to_string(crop_index));
        return it->second;
    }

private:
    std::map<std::pair<std::string, std::size_t>, FaceProbe> scripted_;
};

} // namespace magiceye::face
