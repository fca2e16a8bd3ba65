#pragma once

// ECG waveform preprocessing: linear resampling, mains notch, Butterworth
// bandpass, running-median baseline removal, fixed-length segmentation and
// per-lead z-scoring. Every stage is a pure function and the composed
// pipeline is bitwise deterministic for a fixed input and config.

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/util.hpp"

namespace ecgdx::dsp {

// ---------------- domain types ----------------

struct LeadSignal {
    std::vector<double> samples;  // millivolts
    double fs = 0.0;              // Hz

    void validate() const {
        if (samples.empty()) throw std::invalid_argument("empty signal");
        if (!(fs > 0.0)) throw std::invalid_argument("sampling rate must be positive");
        for (double v : samples)
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite sample");
    }
};

inline const std::vector<std::string>& standard_lead_names() {
    static const std::vector<std::string> names = {"I",   "II",  "III", "aVR", "aVL", "aVF",
                                                   "V1",  "V2",  "V3",  "V4",  "V5",  "V6"};
    return names;
}

struct EcgRecord {
    std::string patient_id;
    std::int64_t acquired_at = 0;  // UTC seconds
    std::vector<std::string> lead_names;
    std::vector<LeadSignal> leads;
    double fs = 0.0;

    void validate() const {
        if (leads.empty() || leads.size() > 12)
            throw std::invalid_argument("record must carry 1-12 leads");
        if (lead_names.size() != leads.size())
            throw std::invalid_argument("lead name count mismatch");
        std::set<std::string> seen;
        const auto& known = standard_lead_names();
        for (const auto& name : lead_names) {
            if (std::find(known.begin(), known.end(), name) == known.end())
                throw std::invalid_argument("unknown lead name: " + name);
            if (!seen.insert(name).second)
                throw std::invalid_argument("duplicate lead name: " + name);
        }
        const std::size_t len = leads.front().samples.size();
        for (const auto& lead : leads) {
            lead.validate();
            if (lead.samples.size() != len)
                throw std::invalid_argument("leads differ in length");
            if (lead.fs != fs) throw std::invalid_argument("leads differ in sampling rate");
        }
    }
};

struct PreprocessConfig {
    double target_fs = 500.0;
    double mains_hz = 50.0;  // 50 or 60
    double band_lo = 0.67;
    double band_hi = 40.0;
    int butter_order = 4;
    double baseline_window_s = 0.4;
    double segment_s = 10.0;
    double notch_q = 30.0;

    void validate() const {
        if (!(target_fs > 0.0)) throw std::invalid_argument("target_fs must be positive");
        if (mains_hz != 50.0 && mains_hz != 60.0)
            throw std::invalid_argument("mains_hz must be 50 or 60");
        if (!(0.0 < band_lo && band_lo < band_hi && band_hi < target_fs / 2.0))
            throw std::invalid_argument("band edges must satisfy 0 < lo < hi < fs/2");
        if (butter_order < 2 || butter_order % 2 != 0)
            throw std::invalid_argument("butter_order must be a positive even integer");
        if (!(baseline_window_s > 0.0))
            throw std::invalid_argument("baseline_window_s must be positive");
        if (!(segment_s > 0.0)) throw std::invalid_argument("segment_s must be positive");
        if (!(notch_q > 0.0)) throw std::invalid_argument("notch_q must be positive");
    }

    std::size_t segment_samples() const {
        return static_cast<std::size_t>(std::llround(segment_s * target_fs));
    }
};

struct Segment {
    std::string record_id;
    int index = 0;
    std::vector<std::vector<double>> leads;  // leads x segment length

    std::size_t length() const { return leads.empty() ? 0 : leads.front().size(); }
};

// ---------------- second-order sections ----------------

// One biquad with a0 normalized to 1: y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2]
//                                            - a1 y[n-1] - a2 y[n-2]
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

// Causal single-pass application of an SOS cascade, zero initial state.
inline std::vector<double> sos_apply(const std::vector<Biquad>& sos,
                                     const std::vector<double>& x) {
    std::vector<double> y = x;
    for (const auto& s : sos) {
        double z1 = 0.0, z2 = 0.0;  // transposed direct form II
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

// H(e^{jw}) of the cascade, w in radians/sample.
inline std::complex<double> sos_response(const std::vector<Biquad>& sos, double w) {
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = std::polar(1.0, -2.0 * w);
    std::complex<double> h(1.0, 0.0);
    for (const auto& s : sos)
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

// Standard biquad notch at f0 with quality factor q.
inline Biquad design_notch(double f0, double fs, double q = 30.0) {
    if (!(f0 > 0.0) || !(f0 < fs / 2.0))
        throw std::invalid_argument("notch frequency must lie below Nyquist");
    const double w0 = 2.0 * 3.14159265358979323846 * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad s;
    s.b0 = 1.0 / a0;
    s.b1 = -2.0 * c / a0;
    s.b2 = 1.0 / a0;
    s.a1 = -2.0 * c / a0;
    s.a2 = (1.0 - alpha) / a0;
    return s;
}

// Butterworth bandpass of prototype order `order` (even), realized as an SOS
// cascade from the bilinear transform with frequency pre-warping. The cascade
// has `order` sections (2*order poles); gain is normalized to 1 at the
// geometric center of the pre-warped band and spread evenly over sections.
inline std::vector<Biquad> design_butter_bandpass(int order, double lo, double hi, double fs) {
    if (order < 2 || order % 2 != 0)
        throw std::invalid_argument("bandpass order must be a positive even integer");
    if (!(0.0 < lo && lo < hi && hi < fs / 2.0))
        throw std::invalid_argument("band edges must satisfy 0 < lo < hi < fs/2");

    const double pi = 3.14159265358979323846;
    const double fs2 = 2.0 * fs;
    const double w1 = fs2 * std::tan(pi * lo / fs);  // pre-warped analog edges
    const double w2 = fs2 * std::tan(pi * hi / fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;

    // Analog prototype poles on the unit circle, then lowpass-to-bandpass.
    std::vector<std::complex<double>> analog;
    analog.reserve(static_cast<std::size_t>(2 * order));
    for (int k = 0; k < order; ++k) {
        const double angle = pi * (2.0 * k + order + 1.0) / (2.0 * order);
        const std::complex<double> p = std::polar(1.0, angle);
        const std::complex<double> t = 0.5 * bw * p;
        const std::complex<double> r = std::sqrt(t * t - w0 * w0);
        analog.push_back(t + r);
        analog.push_back(t - r);
    }

    // Bilinear transform of the poles; the 2*order zeros land at z = +1, -1.
    std::vector<std::complex<double>> digital;
    digital.reserve(analog.size());
    for (const auto& p : analog) digital.push_back((fs2 + p) / (fs2 - p));

    // Group into conjugate pairs.
    std::vector<Biquad> sos;
    std::vector<bool> used(digital.size(), false);
    for (std::size_t i = 0; i < digital.size(); ++i) {
        if (used[i]) continue;
        used[i] = true;
        const std::complex<double> p = digital[i];
        std::size_t match = digital.size();
        double best = 1e300;
        for (std::size_t j = i + 1; j < digital.size(); ++j) {
            if (used[j]) continue;
            const double d = std::abs(digital[j] - std::conj(p));
            if (d < best) {
                best = d;
                match = j;
            }
        }
        if (match == digital.size()) throw std::runtime_error("unpaired filter pole");
        used[match] = true;
        const std::complex<double> q = digital[match];
        Biquad s;
        s.b0 = 1.0;
        s.b1 = 0.0;
        s.b2 = -1.0;  // zeros at z = +1 and z = -1
        s.a1 = -(p + q).real();
        s.a2 = (p * q).real();
        sos.push_back(s);
    }

    // Normalize so |H| = 1 at the digital center frequency.
    const double wc = 2.0 * std::atan(w0 / fs2);
    const double mag = std::abs(sos_response(sos, wc));
    if (!(mag > 0.0)) throw std::runtime_error("degenerate bandpass design");
    const double g = std::pow(1.0 / mag, 1.0 / static_cast<double>(sos.size()));
    for (auto& s : sos) {
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    return sos;
}

// ---------------- operations ----------------

// Resample onto the uniform grid t_i = i / dst_fs by linear interpolation.
// Output length is round(len * dst_fs / src_fs); dst == src is the identity.
inline LeadSignal resample_linear(const LeadSignal& sig, double dst_fs) {
    sig.validate();
    if (!(dst_fs > 0.0)) throw std::invalid_argument("dst_fs must be positive");
    if (dst_fs == sig.fs) return sig;

    const std::size_t n_in = sig.samples.size();
    const std::size_t n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * dst_fs / sig.fs));
    LeadSignal out;
    out.fs = dst_fs;
    out.samples.resize(n_out);
    const double ratio = sig.fs / dst_fs;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double p = static_cast<double>(i) * ratio;
        // Grid points past the final source sample (at most a fraction of one
        // source step) continue the last segment linearly.
        std::size_t i0 = static_cast<std::size_t>(p);
        if (i0 + 1 >= n_in) i0 = n_in >= 2 ? n_in - 2 : 0;
        if (i0 + 1 >= n_in) {
            out.samples[i] = sig.samples[n_in - 1];
            continue;
        }
        const double frac = p - static_cast<double>(i0);
        out.samples[i] = sig.samples[i0] * (1.0 - frac) + sig.samples[i0 + 1] * frac;
    }
    return out;
}

inline LeadSignal notch_filter(const LeadSignal& sig, double mains_hz, double q = 30.0) {
    sig.validate();
    if (!(mains_hz < sig.fs / 2.0))
        throw std::invalid_argument("mains frequency must lie below Nyquist");
    LeadSignal out;
    out.fs = sig.fs;
    out.samples = sos_apply({design_notch(mains_hz, sig.fs, q)}, sig.samples);
    return out;
}

inline LeadSignal bandpass_butterworth(const LeadSignal& sig, double lo, double hi, int order) {
    sig.validate();
    if (!(hi < sig.fs / 2.0)) throw std::invalid_argument("band edge above Nyquist");
    LeadSignal out;
    out.fs = sig.fs;
    out.samples = sos_apply(design_butter_bandpass(order, lo, hi, sig.fs), sig.samples);
    return out;
}

// Window length in samples: round(window_s * fs), rounded up to odd.
inline std::size_t median_window_samples(double window_s, double fs) {
    long long w = std::llround(window_s * fs);
    if (w % 2 == 0) ++w;
    if (w < 3) throw std::invalid_argument("median window shorter than 3 samples");
    return static_cast<std::size_t>(w);
}

// Subtracts a running-median baseline estimate. Edges are handled by
// replicating the first/last sample. Exact: the baseline is the true median
// of each window, so the result matches a brute-force sliding median.
inline LeadSignal median_baseline_correct(const LeadSignal& sig, double window_s) {
    sig.validate();
    const std::size_t w = median_window_samples(window_s, sig.fs);
    const std::size_t n = sig.samples.size();
    if (w > n) throw std::invalid_argument("median window longer than signal");
    const std::size_t half = w / 2;

    auto padded = [&](std::ptrdiff_t i) -> double {
        if (i < 0) return sig.samples.front();
        if (i >= static_cast<std::ptrdiff_t>(n)) return sig.samples.back();
        return sig.samples[static_cast<std::size_t>(i)];
    };

    // Sorted sliding window; the median of an odd window is its middle element.
    std::vector<double> win;
    win.reserve(w);
    for (std::ptrdiff_t i = -static_cast<std::ptrdiff_t>(half);
         i <= static_cast<std::ptrdiff_t>(half); ++i)
        win.push_back(padded(i));
    std::sort(win.begin(), win.end());

    LeadSignal out;
    out.fs = sig.fs;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.samples[i] = sig.samples[i] - win[half];
        if (i + 1 < n) {
            const double leaving = padded(static_cast<std::ptrdiff_t>(i) -
                                          static_cast<std::ptrdiff_t>(half));
            const double entering = padded(static_cast<std::ptrdiff_t>(i) + 1 +
                                           static_cast<std::ptrdiff_t>(half));
            win.erase(std::lower_bound(win.begin(), win.end(), leaving));
            win.insert(std::upper_bound(win.begin(), win.end(), entering), entering);
        }
    }
    return out;
}

// Records of at least segment_s yield floor(duration/segment_s) consecutive
// non-overlapping segments with the trailing partial discarded; shorter
// records yield one segment zero-padded at the tail.
inline std::vector<Segment> segment_and_pad(const EcgRecord& record, double segment_s,
                                            const std::string& record_id = "") {
    record.validate();
    if (!(segment_s > 0.0)) throw std::invalid_argument("segment_s must be positive");
    const auto seg_len = static_cast<std::size_t>(std::llround(segment_s * record.fs));
    if (seg_len == 0) throw std::invalid_argument("segment shorter than one sample");
    const std::size_t n = record.leads.front().samples.size();

    std::vector<Segment> segments;
    const std::size_t count = n >= seg_len ? n / seg_len : 1;
    for (std::size_t s = 0; s < count; ++s) {
        Segment seg;
        seg.record_id = record_id;
        seg.index = static_cast<int>(s);
        seg.leads.resize(record.leads.size());
        for (std::size_t l = 0; l < record.leads.size(); ++l) {
            auto& dst = seg.leads[l];
            dst.assign(seg_len, 0.0);
            const auto& src = record.leads[l].samples;
            const std::size_t begin = s * seg_len;
            const std::size_t avail = std::min(seg_len, n - begin);
            std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                      src.begin() + static_cast<std::ptrdiff_t>(begin + avail), dst.begin());
        }
        segments.push_back(std::move(seg));
    }
    return segments;
}

// Per-lead z-score over the segment. Leads with standard deviation below
// 1e-8 become all zeros so flat lines do not divide by ~0.
inline Segment normalize_segment(Segment seg) {
    for (auto& lead : seg.leads) {
        if (lead.empty()) continue;
        const double n = static_cast<double>(lead.size());
        double mean = 0.0;
        for (double v : lead) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : lead) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / n);
        if (sd < 1e-8) {
            std::fill(lead.begin(), lead.end(), 0.0);
        } else {
            for (double& v : lead) v = (v - mean) / sd;
        }
    }
    return seg;
}

// resample -> notch -> bandpass -> baseline -> segment -> normalize, in
// exactly this order. Stage failures rethrow with the stage name attached.
inline std::vector<Segment> preprocess_record(const EcgRecord& record,
                                              const PreprocessConfig& cfg,
                                              const std::string& record_id = "") {
    cfg.validate();
    record.validate();

    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string(name) + ": " + e.what());
        }
    };

    EcgRecord work = record;
    work.fs = cfg.target_fs;
    for (auto& lead : work.leads) {
        lead = stage("resample", [&] { return resample_linear(lead, cfg.target_fs); });
        lead = stage("notch", [&] { return notch_filter(lead, cfg.mains_hz, cfg.notch_q); });
        lead = stage("bandpass", [&] {
            return bandpass_butterworth(lead, cfg.band_lo, cfg.band_hi, cfg.butter_order);
        });
        lead = stage("baseline", [&] {
            return median_baseline_correct(lead, cfg.baseline_window_s);
        });
    }

    auto segments = stage("segment", [&] {
        return segment_and_pad(work, cfg.segment_s, record_id);
    });
    for (auto& seg : segments) seg = normalize_segment(std::move(seg));
    return segments;
}

}  // namespace ecgdx::dsp
