#pragma once

// ECG-ICD cohort construction: code normalization, label-space building,
// multi-label encoding, temporal alignment of ECGs to discharge events, and
// first-letter chapter grouping.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ecgdx/util.hpp"

namespace ecgdx::cohort {

// ---------------- domain types ----------------

struct IcdCode {
    std::string canonical;  // uppercase, dot-free, e.g. "I501"

    char chapter() const { return canonical.empty() ? '?' : canonical[0]; }
    bool operator==(const IcdCode& o) const { return canonical == o.canonical; }
    bool operator<(const IcdCode& o) const { return canonical < o.canonical; }
};

struct LabelSpace {
    std::vector<IcdCode> codes;       // sorted, unique
    std::vector<std::string> names;   // aligned with codes ("" tolerated)
    std::unordered_map<std::string, std::size_t> index;

    std::size_t size() const { return codes.size(); }

    // -1 when the code is not part of the space.
    std::ptrdiff_t position(const IcdCode& code) const {
        auto it = index.find(code.canonical);
        return it == index.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
    }

    void rebuild_index() {
        index.clear();
        for (std::size_t i = 0; i < codes.size(); ++i) index[codes[i].canonical] = i;
    }
};

struct DischargeEvent {
    std::string patient_id;
    std::int64_t admit_at = 0;      // UTC seconds
    std::int64_t discharge_at = 0;  // UTC seconds
    std::set<IcdCode> codes;

    void validate() const {
        if (admit_at > discharge_at)
            throw std::invalid_argument("admit_at after discharge_at");
        if (codes.empty()) throw std::invalid_argument("discharge without codes");
    }
};

struct CohortEntry {
    std::string record_id;
    std::string patient_id;
    std::vector<std::uint8_t> labels;  // length == label space size
    std::int64_t ecg_at = 0;
    std::int64_t discharge_at = 0;
};

struct EcgIndexEntry {
    std::string record_id;
    std::string patient_id;
    std::int64_t acquired_at = 0;
    std::string path;  // record file location, opaque here
};

// ---------------- code normalization ----------------

enum class ZeroStripPolicy {
    kLengthGuarded,  // strip zeros after the letter while >3 tail chars remain
                     // and the next character is a nonzero digit
    kNone,           // keep zeros as recorded
};

// Canonical form: trimmed, uppercased, dots removed, padding zeros after the
// letter prefix stripped under the guard above. So "I050.1" -> "I501" while
// short category codes like "I021" and terminal zeros like "E00" survive.
inline IcdCode normalize_icd(const std::string& raw,
                             ZeroStripPolicy policy = ZeroStripPolicy::kLengthGuarded) {
    std::string s = to_upper(trim(raw));
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char c : s)
        if (c != '.') cleaned += c;

    if (cleaned.empty() || cleaned[0] < 'A' || cleaned[0] > 'Z')
        throw std::invalid_argument("unrecognized code: " + raw);
    for (char c : cleaned)
        if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')))
            throw std::invalid_argument("unrecognized code: " + raw);
    if (cleaned.size() < 2) throw std::invalid_argument("unrecognized code: " + raw);

    if (policy == ZeroStripPolicy::kLengthGuarded) {
        std::string tail = cleaned.substr(1);
        while (tail.size() > 3 && tail[0] == '0' && tail[1] >= '1' && tail[1] <= '9')
            tail.erase(tail.begin());
        cleaned = cleaned.substr(0, 1) + tail;
    }
    return IcdCode{cleaned};
}

// ---------------- label space ----------------

// Keeps codes seen at least min_count times, sorted lexicographically, with
// names attached from the dictionary (missing names become "").
inline LabelSpace build_label_space(const std::map<IcdCode, std::size_t>& observed,
                                    const std::map<std::string, std::string>& names,
                                    std::size_t min_count) {
    if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
    LabelSpace space;
    for (const auto& [code, count] : observed) {
        if (count < min_count) continue;
        space.codes.push_back(code);
        auto it = names.find(code.canonical);
        space.names.push_back(it == names.end() ? std::string() : it->second);
    }
    if (space.codes.empty()) throw std::runtime_error("no labels survive threshold");
    space.rebuild_index();
    return space;
}

struct EncodeResult {
    std::vector<std::uint8_t> bits;
    std::size_t ignored = 0;  // codes outside the space
};

inline EncodeResult encode_labels(const std::set<IcdCode>& codes, const LabelSpace& space) {
    EncodeResult out;
    out.bits.assign(space.size(), 0);
    for (const auto& code : codes) {
        const auto pos = space.position(code);
        if (pos < 0) {
            ++out.ignored;
        } else {
            out.bits[static_cast<std::size_t>(pos)] = 1;
        }
    }
    return out;
}

inline std::set<IcdCode> decode_labels(const std::vector<std::uint8_t>& bits,
                                       const LabelSpace& space) {
    if (bits.size() != space.size()) throw std::invalid_argument("bit-vector length mismatch");
    std::set<IcdCode> codes;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) codes.insert(space.codes[i]);
    return codes;
}

// ---------------- alignment ----------------

struct AlignPolicy {
    enum class Mode { kInStay, kWindow };
    Mode mode = Mode::kInStay;
    std::int64_t window_s = 0;     // used by kWindow: |ecg - discharge| <= window_s
    bool one_per_stay = false;     // keep only the ECG closest to discharge
};

struct AlignStats {
    std::size_t matched = 0;
    std::size_t unmatched = 0;
    std::size_t empty_label = 0;  // matched but no code inside the label space
};

// Pairs each ECG with the discharge it belongs to. A pair forms iff the
// patient ids agree and the policy predicate holds; among several candidates
// the nearest discharge_at wins, ties broken by earlier admit_at. ECGs with
// no match are dropped, as are matches whose codes all fall outside the
// label space (entries must carry at least one set bit).
inline std::vector<CohortEntry> align_ecg_to_discharges(
    const std::vector<EcgIndexEntry>& ecgs, const std::vector<DischargeEvent>& discharges,
    const LabelSpace& space, const AlignPolicy& policy = {}, AlignStats* stats = nullptr) {
    std::unordered_set<std::string> seen_ids;
    for (const auto& e : ecgs)
        if (!seen_ids.insert(e.record_id).second)
            throw std::invalid_argument("duplicate record id: " + e.record_id);

    std::unordered_map<std::string, std::vector<const DischargeEvent*>> by_patient;
    for (const auto& d : discharges) {
        d.validate();
        by_patient[d.patient_id].push_back(&d);
    }

    AlignStats local;
    std::vector<CohortEntry> entries;
    for (const auto& ecg : ecgs) {
        auto it = by_patient.find(ecg.patient_id);
        const DischargeEvent* best = nullptr;
        if (it != by_patient.end()) {
            for (const DischargeEvent* d : it->second) {
                bool ok = false;
                if (policy.mode == AlignPolicy::Mode::kInStay) {
                    ok = d->admit_at <= ecg.acquired_at && ecg.acquired_at <= d->discharge_at;
                } else {
                    ok = std::llabs(ecg.acquired_at - d->discharge_at) <= policy.window_s;
                }
                if (!ok) continue;
                if (!best) {
                    best = d;
                    continue;
                }
                const std::int64_t cur = std::llabs(ecg.acquired_at - d->discharge_at);
                const std::int64_t old = std::llabs(ecg.acquired_at - best->discharge_at);
                if (cur < old || (cur == old && d->admit_at < best->admit_at)) best = d;
            }
        }
        if (!best) {
            ++local.unmatched;
            continue;
        }
        auto encoded = encode_labels(best->codes, space);
        bool any = false;
        for (auto b : encoded.bits) any = any || b != 0;
        if (!any) {
            ++local.empty_label;
            continue;
        }
        CohortEntry entry;
        entry.record_id = ecg.record_id;
        entry.patient_id = ecg.patient_id;
        entry.labels = std::move(encoded.bits);
        entry.ecg_at = ecg.acquired_at;
        entry.discharge_at = best->discharge_at;
        entries.push_back(std::move(entry));
        ++local.matched;
    }

    if (policy.one_per_stay) {
        // Keep, per (patient, discharge), the ECG closest to discharge.
        std::map<std::pair<std::string, std::int64_t>, std::size_t> keep;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto key = std::make_pair(entries[i].patient_id, entries[i].discharge_at);
            auto [it2, inserted] = keep.emplace(key, i);
            if (!inserted) {
                const auto& cur = entries[i];
                const auto& old = entries[it2->second];
                if (std::llabs(cur.ecg_at - cur.discharge_at) <
                    std::llabs(old.ecg_at - old.discharge_at))
                    it2->second = i;
            }
        }
        std::vector<CohortEntry> filtered;
        std::set<std::size_t> kept;
        for (const auto& [_, idx] : keep) kept.insert(idx);
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (kept.count(i)) filtered.push_back(std::move(entries[i]));
        entries = std::move(filtered);
    }

    if (stats) *stats = local;
    return entries;
}

// ---------------- chapter grouping ----------------

// Partition of label indices by the code's first letter; exhaustive and
// disjoint by construction.
inline std::map<char, std::vector<std::size_t>> group_by_chapter(const LabelSpace& space) {
    std::map<char, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < space.size(); ++i)
        groups[space.codes[i].chapter()].push_back(i);
    return groups;
}

}  // namespace ecgdx::cohort
