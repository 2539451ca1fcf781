#pragma once

/// Banknote denomination classification behind a pluggable backend, and the
/// accuracy / precision / recall / F1 evaluation of labeled outcomes.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "magiceye/detail/text.hpp"
#include "magiceye/error.hpp"
#include "magiceye/metrics.hpp"

namespace magiceye::currency {

class DenominationSet {
public:
    DenominationSet() : DenominationSet({"10", "20", "50", "100", "200", "500", "2000"}) {}
    explicit DenominationSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
        if (labels_.empty()) throw ValidationError("denomination set is empty");
        std::set<std::string> seen;
        for (const auto& l : labels_)
            if (l.empty() || !seen.insert(l).second) throw ValidationError("denomination labels must be unique and non-empty");
    }

    const std::vector<std::string>& labels() const noexcept { return labels_; }
    bool contains(const std::string& l) const { return std::find(labels_.begin(), labels_.end(), l) != labels_.end(); }

private:
    std::vector<std::string> labels_;
};

struct ClassificationOutcome {
    std::string image_id;
    std::string predicted;
    double confidence = 0;
    std::optional<std::string> truth;
};

struct BackendPrediction {
    std::string label;
    double confidence = 0;
};

class CurrencyBackend {
public:
    virtual ~CurrencyBackend() = default;
    virtual BackendPrediction predict(const std::string& image_ref) = 0;
};

class ScriptedCurrencyBackend final : public CurrencyBackend {
public:
    void script(const std::string& image_ref, BackendPrediction p) { scripted_[image_ref] = std::move(p); }
    BackendPrediction predict(const std::string& image_ref) override {
        auto it = scripted_.find(image_ref);
        if (it == scripted_.end()) throw BackendError("no scripted currency prediction for '" + image_ref + "'");
        return it->second;
    }

private:
    std::map<std::string, BackendPrediction> scripted_;
};

/// Backend prediction checked against the denomination set and [0,1].
inline ClassificationOutcome classify(const std::string& image_ref, CurrencyBackend* backend,
                                      const DenominationSet& denominations) {
    if (!backend) throw BackendError("currency backend unavailable");
    const auto p = backend->predict(image_ref);
    if (!denominations.contains(p.label)) throw ValidationError("unknown denomination '" + p.label + "'");
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) throw ValidationError("confidence range: must lie in [0,1]");
    return {image_ref, p.label, p.confidence, std::nullopt};
}

struct ClassMetrics {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
    std::size_t support = 0;  // truth count
    metrics::MatchCounts counts;
};

struct ClassifierReport {
    std::vector<std::string> labels;  // row/column order of the confusion matrix
    double accuracy = 0;
    double macro_f1 = 0;
    std::map<std::string, ClassMetrics> per_class;
    std::vector<std::vector<std::int64_t>> confusion;  // [truth][predicted]
    std::size_t total = 0;
};

/// One-vs-rest precision/recall per label, F1 = 2PR/(P+R), macro-F1 over the
/// labels that occur. Label order follows `order` when given, then any other
/// label in sorted order.
inline ClassifierReport evaluate_classifier(std::span<const ClassificationOutcome> outcomes,
                                            const DenominationSet* order = nullptr) {
    if (outcomes.empty()) throw ValidationError("cannot evaluate an empty outcome list");
    std::set<std::string> present;
    for (const auto& o : outcomes) {
        if (!o.truth) throw ValidationError("outcome for '" + o.image_id + "' has no truth label");
        present.insert(*o.truth);
        present.insert(o.predicted);
    }
    ClassifierReport rep;
    if (order)
        for (const auto& l : order->labels())
            if (present.count(l)) rep.labels.push_back(l);
    for (const auto& l : present)
        if (std::find(rep.labels.begin(), rep.labels.end(), l) == rep.labels.end()) rep.labels.push_back(l);

    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < rep.labels.size(); ++i) idx[rep.labels[i]] = i;
    const std::size_t n = rep.labels.size();
    rep.confusion.assign(n, std::vector<std::int64_t>(n, 0));
    std::size_t correct = 0;
    for (const auto& o : outcomes) {
        ++rep.confusion[idx[*o.truth]][idx[o.predicted]];
        if (*o.truth == o.predicted) ++correct;
    }
    rep.total = outcomes.size();
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.total);

    double f1_sum = 0;
    for (std::size_t c = 0; c < n; ++c) {
        ClassMetrics m;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == c) continue;
            m.counts.fp += rep.confusion[j][c];
            m.counts.fn += rep.confusion[c][j];
        }
        m.counts.tp = rep.confusion[c][c];
        m.counts.tn = static_cast<std::int64_t>(rep.total) - m.counts.tp - m.counts.fp - m.counts.fn;
        m.support = static_cast<std::size_t>(m.counts.tp + m.counts.fn);
        m.precision = metrics::precision(m.counts);
        m.recall = metrics::recall(m.counts);
        m.f1 = metrics::f1_score(m.precision, m.recall);
        f1_sum += m.f1;
        rep.per_class[rep.labels[c]] = m;
    }
    rep.macro_f1 = f1_sum / static_cast<double>(n);
    return rep;
}

// `image_id,truth,predicted,confidence` with header.
inline std::vector<ClassificationOutcome> parse_outcomes_csv(const std::vector<std::string>& lines,
                                                             const std::string& name = "outcomes") {
    std::vector<ClassificationOutcome> out;
    bool header = false;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const auto line = detail::trim(lines[ln]);
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(ln + 1) + ": ";
        if (!header) {
            if (line != "image_id,truth,predicted,confidence")
                throw ValidationError(where + "expected header `image_id,truth,predicted,confidence`");
            header = true;
            continue;
        }
        const auto f = detail::split_csv(line);
        ClassificationOutcome o;
        if (f.size() != 4 || !detail::parse_double(f[3], o.confidence)) throw ValidationError(where + "malformed row");
        if (!(o.confidence >= 0.0 && o.confidence <= 1.0)) throw ValidationError(where + "confidence range: must lie in [0,1]");
        o.image_id = f[0];
        if (!f[1].empty()) o.truth = f[1];
        o.predicted = f[2];
        out.push_back(std::move(o));
    }
    if (!header) throw ValidationError(name + ": missing header");
    return out;
}

} // namespace magiceye::currency
